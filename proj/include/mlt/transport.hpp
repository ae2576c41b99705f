#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "mlt/core.hpp"
#include "mlt/graph.hpp"
#include "mlt/linalg.hpp"

namespace mlt {

/// Stacked latent potentials of the two layers.
struct LatentState {
    Eigen::VectorXd u_s;
    Eigen::VectorXd u_f;

    Eigen::VectorXd stacked() const {
        Eigen::VectorXd w(u_s.size() + u_f.size());
        w << u_s, u_f;
        return w;
    }

    static LatentState from_stacked(const Eigen::VectorXd& w) {
        Eigen::Index n = w.size() / 2;
        return {w.head(n), w.tail(n)};
    }
};

/// The coupled bi-layer dynamics matrix
///   [[-c*Lap_s, lambda_s*M_s], [lambda_f*M_f, -c*Lap_f]]
/// acting on the stacked state [u_s; u_f].
struct BlockOperator {
    Eigen::MatrixXd a;
    int n_regions = 0;

    BlockOperator() = default;
    BlockOperator(Eigen::MatrixXd matrix, int n) : a(std::move(matrix)), n_regions(n) {
        if (a.rows() != a.cols() || a.rows() != 2 * n)
            throw invariant_error("block operator must be 2N x 2N");
        if (!a.allFinite()) throw invariant_error("block operator contains non-finite entries");
    }
};

/// Time-integration method: exact matrix exponential (the default, exact up
/// to the expm approximation) or classic fixed-step RK4 for validation.
struct IntegrationMethod {
    enum class Kind { matrix_exponential, rk4 };
    Kind kind = Kind::matrix_exponential;
    double dt = 1e-3;

    static IntegrationMethod matrix_exponential() { return {Kind::matrix_exponential, 0.0}; }
    static IntegrationMethod rk4(double step) {
        if (!(step > 0.0)) throw invariant_error("rk4 step must be positive");
        return {Kind::rk4, step};
    }
};

namespace detail {

template <typename MatVec>
Eigen::VectorXd rk4_integrate(Eigen::VectorXd u, double t, double dt, MatVec&& apply) {
    long steps = static_cast<long>(std::ceil(t / dt - 1e-12));
    if (steps <= 0) return u;
    double h = t / static_cast<double>(steps);
    Eigen::VectorXd k1, k2, k3, k4;
    for (long s = 0; s < steps; ++s) {
        k1 = apply(u);
        k2 = apply(u + 0.5 * h * k1);
        k3 = apply(u + 0.5 * h * k2);
        k4 = apply(u + h * k3);
        u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!u.allFinite()) throw numeric_error("rk4 integration produced non-finite state at step " + std::to_string(s));
    }
    return u;
}

}  // namespace detail

/// Integrates du/dt = -c * Laplacian * u over [0, t]. With the combinatorial
/// Laplacian, total mass sum(u) is conserved.
inline Eigen::VectorXd integrate_single_layer(const Eigen::VectorXd& u0, const Eigen::MatrixXd& laplacian, double c,
                                              double t, IntegrationMethod method = IntegrationMethod::matrix_exponential()) {
    if (laplacian.rows() != laplacian.cols() || laplacian.rows() != u0.size())
        throw invariant_error("integrate_single_layer: dimension mismatch");
    if (!u0.allFinite() || !laplacian.allFinite() || !std::isfinite(t) || !std::isfinite(c))
        throw invariant_error("integrate_single_layer: non-finite input");
    if (c < 0.0) throw invariant_error("integrate_single_layer: diffusivity must be nonnegative");
    if (t < 0.0) throw invariant_error("integrate_single_layer: duration must be nonnegative");
    if (t == 0.0 || c == 0.0) return u0;

    if (method.kind == IntegrationMethod::Kind::rk4)
        return detail::rk4_integrate(u0, t, method.dt,
                                     [&](const Eigen::VectorXd& u) -> Eigen::VectorXd { return -c * (laplacian * u); });
    return matrix_exponential((-c * t) * laplacian) * u0;
}

/// Assembles the coupled operator from per-layer Laplacians.
inline BlockOperator assemble_block_operator(const Eigen::MatrixXd& lap_s, const Eigen::MatrixXd& lap_f,
                                             const Eigen::MatrixXd& m_s, const Eigen::MatrixXd& m_f, double lambda_s,
                                             double lambda_f, double c) {
    const Eigen::Index n = lap_s.rows();
    if (lap_s.cols() != n || lap_f.rows() != n || lap_f.cols() != n || m_s.rows() != n || m_s.cols() != n ||
        m_f.rows() != n || m_f.cols() != n)
        throw invariant_error("assemble_block_operator: dimension mismatch");
    Eigen::MatrixXd a(2 * n, 2 * n);
    a.topLeftCorner(n, n) = -c * lap_s;
    a.topRightCorner(n, n) = lambda_s * m_s;
    a.bottomLeftCorner(n, n) = lambda_f * m_f;
    a.bottomRightCorner(n, n) = -c * lap_f;
    return BlockOperator(std::move(a), static_cast<int>(n));
}

inline BlockOperator assemble_block_operator(const LayeredConnectome& connectome, const Eigen::MatrixXd& m_s,
                                             const Eigen::MatrixXd& m_f, double lambda_s, double lambda_f, double c,
                                             LaplacianKind kind = LaplacianKind::combinatorial) {
    return assemble_block_operator(build_laplacian(connectome.sc, kind), build_laplacian(connectome.fc, kind), m_s,
                                   m_f, lambda_s, lambda_f, c);
}

/// Integrates the stacked state [u_s; u_f] under the block operator.
/// Trajectories whose norm passes the overflow guard (1e12) raise a
/// numeric_error naming the spectral abscissa; a positive abscissa alone
/// only produces a warning.
inline LatentState integrate_coupled(const LatentState& state0, const BlockOperator& op, double t,
                                     IntegrationMethod method = IntegrationMethod::matrix_exponential()) {
    if (state0.u_s.size() != op.n_regions || state0.u_f.size() != op.n_regions)
        throw invariant_error("integrate_coupled: state size does not match operator");
    if (!std::isfinite(t) || t < 0.0) throw invariant_error("integrate_coupled: invalid duration");
    Eigen::VectorXd w0 = state0.stacked();
    if (!w0.allFinite()) throw invariant_error("integrate_coupled: non-finite state");
    if (t == 0.0) return state0;

    Eigen::VectorXd w;
    if (method.kind == IntegrationMethod::Kind::rk4) {
        w = detail::rk4_integrate(w0, t, method.dt,
                                  [&](const Eigen::VectorXd& u) -> Eigen::VectorXd { return op.a * u; });
    } else {
        w = matrix_exponential(op.a * t) * w0;
    }

    double out_norm = w.norm();
    if (!w.allFinite() || out_norm > 1e12) {
        double abscissa = spectral_abscissa(op.a);
        throw numeric_error("integrate_coupled: trajectory diverged (norm " + std::to_string(out_norm) +
                            " exceeds overflow guard 1e12); spectral abscissa of the operator is " +
                            std::to_string(abscissa));
    }
    if (out_norm > 2.7182818284590452 * std::max(w0.norm(), 1e-300)) {
        double abscissa = spectral_abscissa(op.a);
        if (abscissa > 0.0)
            warn("integrate_coupled: operator is unstable (spectral abscissa " + std::to_string(abscissa) +
                 "), trajectory grows");
    }
    return LatentState::from_stacked(w);
}

}  // namespace mlt
