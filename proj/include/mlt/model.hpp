#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mlt/cohort.hpp"
#include "mlt/control.hpp"
#include "mlt/core.hpp"
#include "mlt/graph.hpp"
#include "mlt/linalg.hpp"
#include "mlt/rng.hpp"
#include "mlt/transport.hpp"

namespace mlt {

enum class Ablation { sc_only, fc_only, sc_fc };
enum class GainSource { learned, riccati };

inline const char* to_string(Ablation a) {
    switch (a) {
        case Ablation::sc_only: return "sc";
        case Ablation::fc_only: return "fc";
        default: return "scfc";
    }
}

inline Ablation ablation_from_string(const std::string& s) {
    if (s == "sc" || s == "sc_only") return Ablation::sc_only;
    if (s == "fc" || s == "fc_only") return Ablation::fc_only;
    if (s == "scfc" || s == "sc_fc") return Ablation::sc_fc;
    throw invariant_error("unknown ablation mode '" + s + "'");
}

/// The learnable parameter set. Positivity of the potential scales and the
/// (0,1) range of the gate are maintained through log/logit
/// reparameterization during fitting.
///
/// The coupling/actuation maps m_s, m_f live on the connectome support
/// (edges of the corresponding layer plus self-loops); fitting only updates
/// supported entries. Learned feedback gains are per-region (diagonal).
/// Both restrictions keep the dynamics confined to network pathways, which
/// is what makes the SC/FC ablation comparison meaningful: with free dense
/// maps the control term alone could mimic any linear flow.
struct TransportParameters {
    Eigen::VectorXd h_s;   ///< positive diagonal of H_s
    Eigen::VectorXd h_f;   ///< positive diagonal of H_f
    Eigen::VectorXd gate;  ///< initial SC share of the potential, in (0,1)
    Eigen::MatrixXd m_s;   ///< SC-layer coupling / actuation map
    Eigen::MatrixXd m_f;
    double lambda_s = 0.0;
    double lambda_f = 0.0;
    double c = 0.0;  ///< diffusivity (shared by both layers)
    GainSource k_source = GainSource::learned;
    Eigen::VectorXd k_s;  ///< learned per-region feedback gains (GainSource::learned)
    Eigen::VectorXd k_f;
    CostWeights cost;  ///< drives the Riccati-derived gain (GainSource::riccati)

    int n() const { return static_cast<int>(h_s.size()); }

    void validate() const {
        const Eigen::Index nn = h_s.size();
        if (h_f.size() != nn || gate.size() != nn) throw invariant_error("transport parameters: vector lengths differ");
        if (m_s.rows() != nn || m_s.cols() != nn || m_f.rows() != nn || m_f.cols() != nn)
            throw invariant_error("transport parameters: coupling matrices must be N x N");
        if (!(h_s.array() > 0.0).all() || !(h_f.array() > 0.0).all())
            throw invariant_error("transport parameters: h_s and h_f must be strictly positive");
        if (!(gate.array() > 0.0).all() || !(gate.array() < 1.0).all())
            throw invariant_error("transport parameters: gate must lie strictly inside (0, 1)");
        if (!std::isfinite(lambda_s) || !std::isfinite(lambda_f) || !std::isfinite(c) || c < 0.0)
            throw invariant_error("transport parameters: lambda/c must be finite, c nonnegative");
        if (!m_s.allFinite() || !m_f.allFinite()) throw invariant_error("transport parameters: non-finite coupling");
        if (k_source == GainSource::learned) {
            if (k_s.size() != nn || k_f.size() != nn)
                throw invariant_error("transport parameters: learned gains must be length-N vectors");
            if (!k_s.allFinite() || !k_f.allFinite()) throw invariant_error("transport parameters: non-finite gains");
        }
        if (cost.q.size() != nn) throw invariant_error("transport parameters: cost weights must have length N");
    }

    /// Default starting point for fitting: identity-scale potential map,
    /// even gate, small seeded coupling on the connectome support, zero
    /// gains.
    static TransportParameters initial(const LayeredConnectome& connectome, std::uint64_t seed) {
        const int n = connectome.n();
        TransportParameters p;
        p.h_s = Eigen::VectorXd::Constant(n, 0.5);
        p.h_f = Eigen::VectorXd::Constant(n, 0.5);
        p.gate = Eigen::VectorXd::Constant(n, 0.5);
        Rng rng = Rng(seed).stream(0x4d696e69ULL);
        auto masked_init = [&](const WeightedGraph& g) {
            Eigen::MatrixXd m(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    double v = rng.normal(0.0, 1e-2);
                    m(i, j) = (i == j || g.weight(i, j) > 0.0) ? v : 0.0;
                }
            return m;
        };
        p.m_s = masked_init(connectome.sc);
        p.m_f = masked_init(connectome.fc);
        p.lambda_s = 0.1;
        p.lambda_f = 0.1;
        p.c = 0.1;
        p.k_source = GainSource::learned;
        p.k_s = Eigen::VectorXd::Zero(n);
        p.k_f = Eigen::VectorXd::Zero(n);
        p.cost = CostWeights::uniform(n);
        return p;
    }
};

/// 0/1 support mask of a layer's coupling map: edges plus the diagonal.
inline Eigen::MatrixXd coupling_support(const WeightedGraph& g) {
    const int n = g.n();
    Eigen::MatrixXd mask(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) mask(i, j) = (i == j || g.weight(i, j) > 0.0) ? 1.0 : 0.0;
    return mask;
}

/// SUVR -> potential map u = (h_s + h_f) .* x.
inline Eigen::VectorXd phi(const Eigen::VectorXd& x, const TransportParameters& p) {
    if (x.size() != p.h_s.size()) throw invariant_error("phi: dimension mismatch");
    return ((p.h_s + p.h_f).array() * x.array()).matrix();
}

inline Eigen::VectorXd phi_inverse(const Eigen::VectorXd& u, const TransportParameters& p) {
    if (u.size() != p.h_s.size()) throw invariant_error("phi_inverse: dimension mismatch");
    return (u.array() / (p.h_s + p.h_f).array()).matrix();
}

/// Splits the baseline potential between layers. The FC share is computed
/// as the exact complement so u_s + u_f == phi(x0) bitwise.
inline LatentState init_latent(const Eigen::VectorXd& x0, const TransportParameters& p) {
    Eigen::VectorXd v0 = phi(x0, p);
    Eigen::VectorXd u_s = (p.gate.array() * v0.array()).matrix();
    return {u_s, v0 - u_s};
}

struct PredictionOutput {
    Eigen::VectorXd x_hat1;
    Eigen::VectorXd u_s_traj_end;
    Eigen::VectorXd u_f_traj_end;
    Eigen::VectorXd contribution_s;  ///< SC-attributed SUVR change over [0, dt]
    Eigen::VectorXd contribution_f;
};

/// Squared Frobenius/Euclidean prediction loss.
inline double loss(const Eigen::VectorXd& x1_observed, const Eigen::VectorXd& x1_predicted) {
    if (x1_observed.size() != x1_predicted.size()) throw invariant_error("loss: length mismatch");
    return (x1_observed - x1_predicted).squaredNorm();
}

namespace detail {

/// Prebuilt per-fit state: Laplacians for the layers in play and, for the
/// Riccati gain source, the gain computed once from the initial parameters
/// and held constant through the gradient (recorded as such in provenance).
struct ModelContext {
    int n = 0;
    Ablation ablation = Ablation::sc_fc;
    Eigen::MatrixXd lap_s;  // empty when the SC layer is ablated away
    Eigen::MatrixXd lap_f;
    Eigen::MatrixXd mask_s;  // coupling support per layer
    Eigen::MatrixXd mask_f;
    bool riccati = false;
    Eigen::MatrixXd k_riccati;  // 2N x 2N (sc_fc) or N x N (single layer)

    const Eigen::MatrixXd& live_lap() const { return ablation == Ablation::fc_only ? lap_f : lap_s; }
    const Eigen::MatrixXd& live_mask() const { return ablation == Ablation::fc_only ? mask_f : mask_s; }
};

inline Eigen::MatrixXd blkdiag2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows() + b.rows(), a.cols() + b.cols());
    out.topLeftCorner(a.rows(), a.cols()) = a;
    out.bottomRightCorner(b.rows(), b.cols()) = b;
    return out;
}

inline ModelContext make_context(const LayeredConnectome& connectome, const TransportParameters& params,
                                 Ablation ablation, LaplacianKind kind = LaplacianKind::combinatorial) {
    params.validate();
    if (connectome.n() != params.n()) throw invariant_error("model: connectome and parameters disagree on N");
    ModelContext ctx;
    ctx.n = connectome.n();
    ctx.ablation = ablation;
    if (ablation != Ablation::fc_only) {
        ctx.lap_s = build_laplacian(connectome.sc, kind);
        ctx.mask_s = coupling_support(connectome.sc);
    }
    if (ablation != Ablation::sc_only) {
        ctx.lap_f = build_laplacian(connectome.fc, kind);
        ctx.mask_f = coupling_support(connectome.fc);
    }
    ctx.riccati = params.k_source == GainSource::riccati;
    if (ctx.riccati) {
        if (ablation == Ablation::sc_fc) {
            BlockOperator a = assemble_block_operator(ctx.lap_s, ctx.lap_f, params.m_s, params.m_f, params.lambda_s,
                                                      params.lambda_f, params.c);
            Eigen::MatrixXd m_full = blkdiag2(params.m_s, params.m_f);
            ValueMatrix p = solve_value_matrix(a.a, params.cost, ValueSolveMode::quadratic_lqr(m_full));
            ctx.k_riccati = feedback_gain(p, m_full, params.cost);
        } else {
            // Live-layer reduction: state cost q (SC) or r (FC), control weight r.
            const Eigen::MatrixXd& lap = ctx.live_lap();
            const Eigen::MatrixXd& m = ablation == Ablation::sc_only ? params.m_s : params.m_f;
            const Eigen::VectorXd& state_cost = ablation == Ablation::sc_only ? params.cost.q : params.cost.r;
            Eigen::MatrixXd a0 = -params.c * lap;
            Eigen::MatrixXd p = solve_care_newton(a0, m, params.cost.r, Eigen::MatrixXd(state_cost.asDiagonal()));
            ctx.k_riccati = params.cost.r.array().inverse().matrix().asDiagonal() * m.transpose() * p;
        }
    }
    return ctx;
}

/// Closed-loop dynamics matrix; 2N x 2N for sc_fc, N x N for single-layer
/// ablations (the excluded layer is removed entirely, so its connectome
/// can never influence the result).
inline Eigen::MatrixXd build_closed_loop(const ModelContext& ctx, const TransportParameters& p) {
    const int n = ctx.n;
    if (ctx.ablation != Ablation::sc_fc) {
        const Eigen::MatrixXd& m = ctx.ablation == Ablation::sc_only ? p.m_s : p.m_f;
        Eigen::MatrixXd a = -p.c * ctx.live_lap();
        if (ctx.riccati)
            a.noalias() -= m * ctx.k_riccati;
        else
            a.noalias() -= m * (ctx.ablation == Ablation::sc_only ? p.k_s : p.k_f).asDiagonal();
        return a;
    }
    Eigen::MatrixXd a(2 * n, 2 * n);
    a.topLeftCorner(n, n) = -p.c * ctx.lap_s;
    a.topRightCorner(n, n) = p.lambda_s * p.m_s;
    a.bottomLeftCorner(n, n) = p.lambda_f * p.m_f;
    a.bottomRightCorner(n, n) = -p.c * ctx.lap_f;
    if (ctx.riccati) {
        a.noalias() -= blkdiag2(p.m_s, p.m_f) * ctx.k_riccati;
    } else {
        a.topLeftCorner(n, n).noalias() -= p.m_s * p.k_s.asDiagonal();
        a.bottomRightCorner(n, n).noalias() -= p.m_f * p.k_f.asDiagonal();
    }
    return a;
}

inline PredictionOutput predict_with_propagator(const ModelContext& ctx, const TransportParameters& p,
                                                const Eigen::VectorXd& x0, const Eigen::MatrixXd& propagator) {
    const int n = ctx.n;
    Eigen::VectorXd h = p.h_s + p.h_f;
    Eigen::VectorXd v0 = (h.array() * x0.array()).matrix();
    PredictionOutput out;
    if (ctx.ablation == Ablation::sc_fc) {
        Eigen::VectorXd u_s0 = (p.gate.array() * v0.array()).matrix();
        Eigen::VectorXd w(2 * n);
        w << u_s0, v0 - u_s0;
        Eigen::VectorXd z = propagator * w;
        out.u_s_traj_end = z.head(n);
        out.u_f_traj_end = z.tail(n);
        out.x_hat1 = ((z.head(n) + z.tail(n)).array() / h.array()).matrix();
        out.contribution_s = ((z.head(n) - u_s0).array() / h.array()).matrix();
        out.contribution_f = ((z.tail(n) - (v0 - u_s0)).array() / h.array()).matrix();
    } else {
        Eigen::VectorXd z = propagator * v0;
        Eigen::VectorXd contrib = ((z - v0).array() / h.array()).matrix();
        out.x_hat1 = (z.array() / h.array()).matrix();
        if (ctx.ablation == Ablation::sc_only) {
            out.u_s_traj_end = z;
            out.u_f_traj_end = Eigen::VectorXd::Zero(n);
            out.contribution_s = contrib;
            out.contribution_f = Eigen::VectorXd::Zero(n);
        } else {
            out.u_s_traj_end = Eigen::VectorXd::Zero(n);
            out.u_f_traj_end = z;
            out.contribution_s = Eigen::VectorXd::Zero(n);
            out.contribution_f = contrib;
        }
    }
    if (!out.x_hat1.allFinite()) throw numeric_error("forward prediction produced non-finite SUVR");
    return out;
}

inline PredictionOutput predict_in_context(const ModelContext& ctx, const TransportParameters& p,
                                           const Eigen::VectorXd& x0, double dt) {
    if (!(dt > 0.0)) throw invariant_error("forward_predict: inter-scan interval must be positive");
    if (x0.size() != ctx.n) throw invariant_error("forward_predict: baseline length mismatch");
    Eigen::MatrixXd a_cl = build_closed_loop(ctx, p);
    if (a_cl.isZero(0.0)) {
        // Frozen dynamics: the propagator is the identity, so the baseline
        // is reproduced exactly rather than through a phi round trip.
        PredictionOutput out;
        LatentState s0 = init_latent(x0, p);
        out.x_hat1 = x0;
        out.u_s_traj_end = ctx.ablation == Ablation::fc_only ? Eigen::VectorXd::Zero(ctx.n) : s0.u_s;
        out.u_f_traj_end = ctx.ablation == Ablation::sc_only ? Eigen::VectorXd::Zero(ctx.n) : s0.u_f;
        if (ctx.ablation == Ablation::sc_only) out.u_s_traj_end = phi(x0, p);
        if (ctx.ablation == Ablation::fc_only) out.u_f_traj_end = phi(x0, p);
        out.contribution_s = Eigen::VectorXd::Zero(ctx.n);
        out.contribution_f = Eigen::VectorXd::Zero(ctx.n);
        return out;
    }
    Eigen::MatrixXd propagator = matrix_exponential(a_cl * dt);
    double growth = propagator.norm();
    if (!propagator.allFinite() || growth > 1e12)
        throw numeric_error("forward_predict: propagator diverged (norm " + std::to_string(growth) +
                            "); spectral abscissa " + std::to_string(spectral_abscissa(a_cl)));
    return predict_with_propagator(ctx, p, x0, propagator);
}

}  // namespace detail

/// Predicts the follow-up SUVR for one baseline scan and reports the
/// per-layer contribution split.
inline PredictionOutput forward_predict(const Eigen::VectorXd& x0, double dt, const LayeredConnectome& connectome,
                                        const TransportParameters& params, Ablation ablation = Ablation::sc_fc,
                                        LaplacianKind kind = LaplacianKind::combinatorial) {
    detail::ModelContext ctx = detail::make_context(connectome, params, ablation, kind);
    return detail::predict_in_context(ctx, params, x0, dt);
}

// ---------------------------------------------------------------------------
// Fitting: log/logit-flattened parameter vector, analytic gradient, momentum
// gradient descent.
// ---------------------------------------------------------------------------

namespace detail {

struct ParamLayout {
    int n = 0;
    Ablation ablation = Ablation::sc_fc;
    bool learned_gains = true;
    int off_log_hs = 0, off_log_hf = 0, off_gate = -1;
    int off_ms = -1, off_mf = -1, off_lambda_s = -1, off_lambda_f = -1;
    int off_log_c = 0, off_ks = -1, off_kf = -1;
    int total = 0;

    static ParamLayout make(int n, Ablation ab, GainSource ks) {
        ParamLayout l;
        l.n = n;
        l.ablation = ab;
        l.learned_gains = ks == GainSource::learned;
        int at = 0;
        auto take = [&](int count) { int o = at; at += count; return o; };
        l.off_log_hs = take(n);
        l.off_log_hf = take(n);
        if (ab == Ablation::sc_fc) l.off_gate = take(n);
        if (ab != Ablation::fc_only) l.off_ms = take(n * n);
        if (ab != Ablation::sc_only) l.off_mf = take(n * n);
        if (ab == Ablation::sc_fc) {
            l.off_lambda_s = take(1);
            l.off_lambda_f = take(1);
        }
        l.off_log_c = take(1);
        if (l.learned_gains && ab != Ablation::fc_only) l.off_ks = take(n);
        if (l.learned_gains && ab != Ablation::sc_only) l.off_kf = take(n);
        l.total = at;
        return l;
    }
};

inline Eigen::VectorXd flatten_parameters(const TransportParameters& p, const ParamLayout& l) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(l.total);
    const int n = l.n;
    v.segment(l.off_log_hs, n) = p.h_s.array().log();
    v.segment(l.off_log_hf, n) = p.h_f.array().log();
    if (l.off_gate >= 0) {
        Eigen::ArrayXd g = p.gate.array().min(1.0 - 1e-12).max(1e-12);
        v.segment(l.off_gate, n) = (g / (1.0 - g)).log();
    }
    if (l.off_ms >= 0) v.segment(l.off_ms, n * n) = Eigen::Map<const Eigen::VectorXd>(p.m_s.data(), n * n);
    if (l.off_mf >= 0) v.segment(l.off_mf, n * n) = Eigen::Map<const Eigen::VectorXd>(p.m_f.data(), n * n);
    if (l.off_lambda_s >= 0) v(l.off_lambda_s) = p.lambda_s;
    if (l.off_lambda_f >= 0) v(l.off_lambda_f) = p.lambda_f;
    v(l.off_log_c) = std::log(std::max(p.c, 1e-300));
    if (l.off_ks >= 0) v.segment(l.off_ks, n * n) = Eigen::Map<const Eigen::VectorXd>(p.k_s.data(), n * n);
    if (l.off_kf >= 0) v.segment(l.off_kf, n * n) = Eigen::Map<const Eigen::VectorXd>(p.k_f.data(), n * n);
    return v;
}

inline TransportParameters unflatten_parameters(const Eigen::VectorXd& v, const TransportParameters& base,
                                                const ParamLayout& l) {
    TransportParameters p = base;
    const int n = l.n;
    p.h_s = v.segment(l.off_log_hs, n).array().exp();
    p.h_f = v.segment(l.off_log_hf, n).array().exp();
    if (l.off_gate >= 0) p.gate = (1.0 / (1.0 + (-v.segment(l.off_gate, n).array()).exp())).matrix();
    if (l.off_ms >= 0) p.m_s = Eigen::Map<const Eigen::MatrixXd>(v.data() + l.off_ms, n, n);
    if (l.off_mf >= 0) p.m_f = Eigen::Map<const Eigen::MatrixXd>(v.data() + l.off_mf, n, n);
    if (l.off_lambda_s >= 0) p.lambda_s = v(l.off_lambda_s);
    if (l.off_lambda_f >= 0) p.lambda_f = v(l.off_lambda_f);
    p.c = std::exp(v(l.off_log_c));
    if (l.off_ks >= 0) p.k_s = Eigen::Map<const Eigen::MatrixXd>(v.data() + l.off_ks, n, n);
    if (l.off_kf >= 0) p.k_f = Eigen::Map<const Eigen::MatrixXd>(v.data() + l.off_kf, n, n);
    return p;
}

/// Mean squared prediction loss over the cohort pairs, with the analytic
/// gradient in the flattened parameterization when grad_out != nullptr.
///
/// The adjoint of the propagator is accumulated across subjects sharing the
/// same interval as a sum of rank-one terms and pulled back through the
/// matrix exponential with a single Frechet-derivative evaluation per
/// distinct interval. Accumulation runs in fixed subject order, so the
/// result is bitwise reproducible.
inline double cohort_loss_impl(const ModelContext& ctx, const TransportParameters& p,
                               const std::vector<TrainingPair>& pairs, const ParamLayout& l,
                               Eigen::VectorXd* grad_out) {
    if (pairs.empty()) throw invariant_error("model fit/loss: empty cohort");
    const int n = ctx.n;
    const bool two_layer = ctx.ablation == Ablation::sc_fc;
    const int dim = two_layer ? 2 * n : n;

    Eigen::MatrixXd a_cl = build_closed_loop(ctx, p);
    Eigen::VectorXd h = p.h_s + p.h_f;

    std::map<double, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < pairs.size(); ++i) groups[pairs[i].dt].push_back(i);

    double total_loss = 0.0;
    Eigen::VectorXd grad;
    Eigen::VectorXd h_bar, gate_bar;
    Eigen::MatrixXd a_bar;
    if (grad_out) {
        grad = Eigen::VectorXd::Zero(l.total);
        h_bar = Eigen::VectorXd::Zero(n);
        gate_bar = Eigen::VectorXd::Zero(n);
        a_bar = Eigen::MatrixXd::Zero(dim, dim);
    }

    Eigen::MatrixXd propagator, e_bar;
    Eigen::VectorXd w(dim), z(dim), z_bar(dim), w_bar(dim);
    for (const auto& [tau, idxs] : groups) {
        propagator = matrix_exponential(a_cl * tau);
        if (!propagator.allFinite())
            throw numeric_error("model fit: propagator diverged at dt = " + std::to_string(tau) +
                                ", spectral abscissa " + std::to_string(spectral_abscissa(a_cl)));
        if (grad_out) e_bar = Eigen::MatrixXd::Zero(dim, dim);
        for (std::size_t idx : idxs) {
            const TrainingPair& pr = pairs[idx];
            Eigen::VectorXd v0 = (h.array() * pr.x0.array()).matrix();
            if (two_layer) {
                Eigen::VectorXd u_s0 = (p.gate.array() * v0.array()).matrix();
                w.head(n) = u_s0;
                w.tail(n) = v0 - u_s0;
            } else {
                w = v0;
            }
            z.noalias() = propagator * w;
            Eigen::VectorXd sum_z = two_layer ? Eigen::VectorXd(z.head(n) + z.tail(n)) : z;
            Eigen::VectorXd x_hat = (sum_z.array() / h.array()).matrix();
            Eigen::VectorXd resid = x_hat - pr.x1;
            total_loss += resid.squaredNorm();
            if (!grad_out) continue;

            Eigen::VectorXd t = (2.0 * resid.array() / h.array()).matrix();
            if (two_layer) {
                z_bar.head(n) = t;
                z_bar.tail(n) = t;
            } else {
                z_bar = t;
            }
            h_bar.array() -= t.array() * sum_z.array() / h.array();
            w_bar.noalias() = propagator.transpose() * z_bar;
            if (two_layer) {
                Eigen::ArrayXd diff = w_bar.head(n).array() - w_bar.tail(n).array();
                gate_bar.array() += v0.array() * diff;
                h_bar.array() += (w_bar.tail(n).array() + p.gate.array() * diff) * pr.x0.array();
            } else {
                h_bar.array() += w_bar.array() * pr.x0.array();
            }
            e_bar.noalias() += z_bar * w.transpose();
        }
        if (grad_out) {
            ExpmWithFrechet pullback = matrix_exponential_frechet((a_cl * tau).transpose(), e_bar);
            a_bar.noalias() += tau * pullback.frechet;
        }
    }

    const double inv_count = 1.0 / static_cast<double>(pairs.size());
    total_loss *= inv_count;
    if (!grad_out) return total_loss;

    // Map the operator adjoint onto the parameter blocks.
    const int nn = n * n;
    auto flat = [](const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); };
    if (two_layer) {
        Eigen::MatrixXd g11 = a_bar.topLeftCorner(n, n), g12 = a_bar.topRightCorner(n, n);
        Eigen::MatrixXd g21 = a_bar.bottomLeftCorner(n, n), g22 = a_bar.bottomRightCorner(n, n);
        double c_bar = -(g11.cwiseProduct(ctx.lap_s).sum() + g22.cwiseProduct(ctx.lap_f).sum());
        grad(l.off_log_c) = c_bar * p.c;
        grad(l.off_lambda_s) = g12.cwiseProduct(p.m_s).sum();
        grad(l.off_lambda_f) = g21.cwiseProduct(p.m_f).sum();
        Eigen::MatrixXd ms_bar = p.lambda_s * g12;
        Eigen::MatrixXd mf_bar = p.lambda_f * g21;
        if (ctx.riccati) {
            const Eigen::MatrixXd& k = ctx.k_riccati;
            ms_bar.noalias() -= g11 * k.topLeftCorner(n, n).transpose() + g12 * k.topRightCorner(n, n).transpose();
            mf_bar.noalias() -= g21 * k.bottomLeftCorner(n, n).transpose() + g22 * k.bottomRightCorner(n, n).transpose();
        } else {
            ms_bar.noalias() -= g11 * p.k_s.transpose();
            mf_bar.noalias() -= g22 * p.k_f.transpose();
            Eigen::MatrixXd ks_bar = -p.m_s.transpose() * g11;
            Eigen::MatrixXd kf_bar = -p.m_f.transpose() * g22;
            grad.segment(l.off_ks, nn) = flat(ks_bar);
            grad.segment(l.off_kf, nn) = flat(kf_bar);
        }
        grad.segment(l.off_ms, nn) = flat(ms_bar);
        grad.segment(l.off_mf, nn) = flat(mf_bar);
        grad.segment(l.off_gate, n) = (gate_bar.array() * p.gate.array() * (1.0 - p.gate.array())).matrix();
    } else {
        const Eigen::MatrixXd& lap = ctx.live_lap();
        grad(l.off_log_c) = -a_bar.cwiseProduct(lap).sum() * p.c;
        const Eigen::MatrixXd& m_live = ctx.ablation == Ablation::sc_only ? p.m_s : p.m_f;
        const Eigen::MatrixXd& k_live =
            ctx.riccati ? ctx.k_riccati : (ctx.ablation == Ablation::sc_only ? p.k_s : p.k_f);
        Eigen::MatrixXd m_bar = -a_bar * k_live.transpose();
        int off_m = ctx.ablation == Ablation::sc_only ? l.off_ms : l.off_mf;
        grad.segment(off_m, nn) = flat(m_bar);
        if (!ctx.riccati) {
            Eigen::MatrixXd k_bar = -m_live.transpose() * a_bar;
            int off_k = ctx.ablation == Ablation::sc_only ? l.off_ks : l.off_kf;
            grad.segment(off_k, nn) = flat(k_bar);
        }
    }
    grad.segment(l.off_log_hs, n).array() = h_bar.array() * p.h_s.array();
    grad.segment(l.off_log_hf, n).array() = h_bar.array() * p.h_f.array();
    *grad_out = grad * inv_count;
    return total_loss;
}

}  // namespace detail

/// Mean prediction loss of a parameter set over a cohort's training pairs.
inline double cohort_loss(const Cohort& cohort, const LayeredConnectome& connectome, const TransportParameters& params,
                          Ablation ablation = Ablation::sc_fc) {
    detail::ModelContext ctx = detail::make_context(connectome, params, ablation);
    auto layout = detail::ParamLayout::make(ctx.n, ablation, params.k_source);
    return detail::cohort_loss_impl(ctx, params, cohort.pairs(), layout, nullptr);
}

struct FitOptions {
    double lr = 1e-2;
    double momentum = 0.9;
    int max_iters = 2000;
    double tol = 1e-8;  ///< relative loss-change stopping criterion
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::sc_fc;
};

struct FitResult {
    TransportParameters params;
    Ablation ablation = Ablation::sc_fc;
    std::vector<double> trace;  ///< loss at each iterate, trace[0] = initial
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int iterations = 0;
};

/// Momentum gradient descent on the mean cohort loss. Deterministic given
/// the initial parameters; returns the best-loss iterate, so final <=
/// initial always holds.
inline FitResult fit(const Cohort& cohort, const LayeredConnectome& connectome, const TransportParameters& params0,
                     const FitOptions& opts) {
    if (cohort.n_subjects() == 0) throw invariant_error("fit: empty cohort");
    if (cohort.n_regions() != connectome.n()) throw invariant_error("fit: cohort and connectome disagree on N");
    std::vector<TrainingPair> pairs = cohort.pairs();
    if (pairs.empty()) throw invariant_error("fit: cohort contains no training pairs (all subjects single-scan)");

    detail::ModelContext ctx = detail::make_context(connectome, params0, opts.ablation);
    auto layout = detail::ParamLayout::make(ctx.n, opts.ablation, params0.k_source);

    Eigen::VectorXd theta = detail::flatten_parameters(params0, layout);
    Eigen::VectorXd velocity = Eigen::VectorXd::Zero(layout.total);
    Eigen::VectorXd grad;

    FitResult result;
    result.ablation = opts.ablation;
    Eigen::VectorXd best_theta = theta;
    double best_loss = std::numeric_limits<double>::infinity();
    double prev_loss = std::numeric_limits<double>::infinity();

    int it = 0;
    for (; it < opts.max_iters; ++it) {
        TransportParameters p = detail::unflatten_parameters(theta, params0, layout);
        double l = detail::cohort_loss_impl(ctx, p, pairs, layout, &grad);
        result.trace.push_back(l);
        if (!std::isfinite(l) || !grad.allFinite())
            throw numeric_error("fit: non-finite loss or gradient at iteration " + std::to_string(it));
        if (l < best_loss) {
            best_loss = l;
            best_theta = theta;
        }
        if (it > 0 && std::abs(l - prev_loss) < opts.tol * std::max(prev_loss, 1e-300)) break;
        prev_loss = l;
        velocity = opts.momentum * velocity - opts.lr * grad;
        theta += velocity;
    }

    result.params = detail::unflatten_parameters(best_theta, params0, layout);
    result.initial_loss = result.trace.front();
    result.final_loss = best_loss;
    result.iterations = it;
    return result;
}

/// Per-subject per-region propagation split attributed to each layer,
/// averaged over the subject's consecutive scan pairs. Subjects without a
/// follow-up scan are skipped.
struct PropagationDecomposition {
    std::string subject_id;
    int subject_index = 0;
    Eigen::VectorXd contribution_s;
    Eigen::VectorXd contribution_f;
};

inline std::vector<PropagationDecomposition> decompose(const Cohort& cohort, const LayeredConnectome& connectome,
                                                       const TransportParameters& params,
                                                       Ablation ablation = Ablation::sc_fc) {
    detail::ModelContext ctx = detail::make_context(connectome, params, ablation);
    std::vector<PropagationDecomposition> out;
    for (int si = 0; si < cohort.n_subjects(); ++si) {
        const Subject& s = cohort.subject(si);
        if (s.scans.size() < 2) continue;
        PropagationDecomposition d;
        d.subject_id = s.id;
        d.subject_index = si;
        d.contribution_s = Eigen::VectorXd::Zero(ctx.n);
        d.contribution_f = Eigen::VectorXd::Zero(ctx.n);
        int count = 0;
        for (std::size_t k = 0; k + 1 < s.scans.size(); ++k) {
            double dt = s.scans[k + 1].age - s.scans[k].age;
            PredictionOutput pred = detail::predict_in_context(ctx, params, s.scans[k].suvr, dt);
            d.contribution_s += pred.contribution_s;
            d.contribution_f += pred.contribution_f;
            ++count;
        }
        d.contribution_s /= count;
        d.contribution_f /= count;
        out.push_back(std::move(d));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Seeded subject-level k-fold assignment (no subject spans folds).
inline std::vector<int> make_fold_assignment(int n_subjects, int n_folds, std::uint64_t seed) {
    if (n_folds < 2) throw invariant_error("cross-validation needs at least 2 folds");
    std::vector<int> order(static_cast<std::size_t>(n_subjects));
    for (int i = 0; i < n_subjects; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng = Rng(seed).stream(0xf01d5ULL);
    rng.shuffle(order);
    std::vector<int> fold(static_cast<std::size_t>(n_subjects));
    for (int i = 0; i < n_subjects; ++i) fold[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i % n_folds;
    return fold;
}

struct CvFoldResult {
    int fold = 0;
    double mae = 0.0;      ///< mean absolute error on held-out follow-ups, SUVR units
    double rel_mae = 0.0;  ///< sum |err| / sum |x1|
    int n_pairs = 0;
    double train_final_loss = 0.0;
};

struct CvResult {
    Ablation ablation = Ablation::sc_fc;
    std::vector<CvFoldResult> folds;
    double mean_mae = 0.0;
    double mean_rel_mae = 0.0;
};

inline CvResult cross_validate(const Cohort& cohort, const LayeredConnectome& connectome,
                               const TransportParameters& params0, const FitOptions& opts, int n_folds = 5) {
    std::vector<int> fold_of = make_fold_assignment(cohort.n_subjects(), n_folds, opts.seed);
    CvResult cv;
    cv.ablation = opts.ablation;
    double mae_sum = 0.0, rel_sum = 0.0;
    for (int f = 0; f < n_folds; ++f) {
        std::vector<int> train_subjects, test_subjects;
        for (int si = 0; si < cohort.n_subjects(); ++si)
            (fold_of[static_cast<std::size_t>(si)] == f ? test_subjects : train_subjects).push_back(si);
        std::vector<Subject> train;
        for (int si : train_subjects) train.push_back(cohort.subject(si));
        Cohort train_cohort(std::move(train));
        FitResult fr = fit(train_cohort, connectome, params0, opts);

        detail::ModelContext ctx = detail::make_context(connectome, fr.params, opts.ablation);
        double abs_err = 0.0, abs_ref = 0.0;
        int count = 0;
        std::vector<TrainingPair> test_pairs = cohort.pairs(&test_subjects);
        for (const auto& pr : test_pairs) {
            PredictionOutput pred = detail::predict_in_context(ctx, fr.params, pr.x0, pr.dt);
            abs_err += (pred.x_hat1 - pr.x1).cwiseAbs().sum();
            abs_ref += pr.x1.cwiseAbs().sum();
            ++count;
        }
        CvFoldResult fold;
        fold.fold = f;
        fold.n_pairs = count;
        fold.mae = count > 0 ? abs_err / (static_cast<double>(count) * connectome.n()) : 0.0;
        fold.rel_mae = abs_ref > 0.0 ? abs_err / abs_ref : 0.0;
        fold.train_final_loss = fr.final_loss;
        mae_sum += fold.mae;
        rel_sum += fold.rel_mae;
        cv.folds.push_back(fold);
    }
    cv.mean_mae = mae_sum / n_folds;
    cv.mean_rel_mae = rel_sum / n_folds;
    return cv;
}

/// Flattened-gradient access for verification against finite differences.
struct GradientProbe {
    Eigen::VectorXd theta;
    Eigen::VectorXd gradient;
    double loss_value = 0.0;
};

inline GradientProbe probe_gradient(const Cohort& cohort, const LayeredConnectome& connectome,
                                    const TransportParameters& params, Ablation ablation = Ablation::sc_fc) {
    detail::ModelContext ctx = detail::make_context(connectome, params, ablation);
    auto layout = detail::ParamLayout::make(ctx.n, ablation, params.k_source);
    GradientProbe probe;
    probe.theta = detail::flatten_parameters(params, layout);
    probe.loss_value = detail::cohort_loss_impl(ctx, params, cohort.pairs(), layout, &probe.gradient);
    return probe;
}

inline double loss_at_theta(const Cohort& cohort, const LayeredConnectome& connectome,
                            const TransportParameters& params_template, const Eigen::VectorXd& theta,
                            Ablation ablation = Ablation::sc_fc) {
    detail::ModelContext ctx = detail::make_context(connectome, params_template, ablation);
    auto layout = detail::ParamLayout::make(ctx.n, ablation, params_template.k_source);
    TransportParameters p = detail::unflatten_parameters(theta, params_template, layout);
    return detail::cohort_loss_impl(ctx, p, cohort.pairs(), layout, nullptr);
}

}  // namespace mlt
