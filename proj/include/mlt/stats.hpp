#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlt/atlas.hpp"
#include "mlt/cohort.hpp"
#include "mlt/core.hpp"
#include "mlt/graph.hpp"
#include "mlt/model.hpp"
#include "mlt/rng.hpp"

namespace mlt {

struct RegionalStatMap {
    enum class Kind { t_value, z_score, rate_per_year, neglog10p };
    Eigen::VectorXd values;
    Kind kind = Kind::t_value;
};

inline const char* to_string(RegionalStatMap::Kind k) {
    switch (k) {
        case RegionalStatMap::Kind::t_value: return "t_value";
        case RegionalStatMap::Kind::z_score: return "z_score";
        case RegionalStatMap::Kind::rate_per_year: return "rate_per_year";
        default: return "neglog10p";
    }
}

inline double student_t_sf(double t, double df) {
    return boost::math::cdf(boost::math::complement(boost::math::students_t(df), t));
}

inline double student_t_two_sided_p(double t, double df) {
    return 2.0 * student_t_sf(std::abs(t), df);
}

// ---------------------------------------------------------------------------
// Random-intercept linear mixed model, profiled REML
// ---------------------------------------------------------------------------

struct MixedModelData {
    Eigen::MatrixXd x;  ///< n_obs x p fixed-effect design (include the intercept column)
    Eigen::VectorXd y;
    std::vector<int> subject;  ///< group id per observation
    std::vector<std::string> coef_names;
};

struct MixedModelFit {
    Eigen::VectorXd beta;
    Eigen::VectorXd se;
    double sigma2 = 0.0;  ///< residual variance
    double psi = 0.0;     ///< variance ratio sigma_b^2 / sigma_eps^2
    double df = 0.0;      ///< n_obs - n_fixed (simple rule, not Satterthwaite)
    bool at_lower_bound = false;

    double t_value(int coef) const {
        if (se(coef) == 0.0) return beta(coef) == 0.0 ? 0.0 : std::copysign(1e300, beta(coef));
        return beta(coef) / se(coef);
    }
    double p_value(int coef) const {
        double t = t_value(coef);
        if (std::abs(t) >= 1e300) return 0.0;
        return student_t_two_sided_p(t, df);
    }
};

namespace detail {

struct MixedProfile {
    Eigen::VectorXd beta;
    Eigen::MatrixXd xtvx_inv;
    double sigma2 = 0.0;
    double reml = 0.0;
};

inline MixedProfile mixed_profile_at(const MixedModelData& data, const std::map<int, std::vector<int>>& groups,
                                     double psi) {
    const Eigen::Index n = data.y.size();
    const Eigen::Index p = data.x.cols();
    Eigen::MatrixXd xtvx = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd xtvy = Eigen::VectorXd::Zero(p);
    double logdet_v = 0.0;
    for (const auto& [gid, rows] : groups) {
        const double ni = static_cast<double>(rows.size());
        const double shrink = psi / (1.0 + psi * ni);
        Eigen::MatrixXd xi(rows.size(), p);
        Eigen::VectorXd yi(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            xi.row(static_cast<Eigen::Index>(r)) = data.x.row(rows[r]);
            yi(static_cast<Eigen::Index>(r)) = data.y(rows[r]);
        }
        Eigen::VectorXd xs = xi.colwise().sum();
        double ys = yi.sum();
        xtvx.noalias() += xi.transpose() * xi - shrink * (xs * xs.transpose());
        xtvy.noalias() += xi.transpose() * yi - shrink * ys * xs;
        logdet_v += std::log(1.0 + psi * ni);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(xtvx);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
        throw invariant_error("mixed_effects_t: design matrix is rank deficient");
    MixedProfile prof;
    prof.beta = ldlt.solve(xtvy);
    double rss = 0.0;
    for (const auto& [gid, rows] : groups) {
        const double ni = static_cast<double>(rows.size());
        const double shrink = psi / (1.0 + psi * ni);
        double rs = 0.0, rsq = 0.0;
        for (int row : rows) {
            double r = data.y(row) - data.x.row(row).dot(prof.beta);
            rs += r;
            rsq += r * r;
        }
        rss += rsq - shrink * rs * rs;
    }
    double denom = static_cast<double>(n - p);
    prof.sigma2 = std::max(rss / denom, 0.0);
    prof.xtvx_inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    double logdet_xtvx = ldlt.vectorD().array().log().sum();
    prof.reml = denom * std::log(std::max(prof.sigma2, 1e-300)) + logdet_v + logdet_xtvx;
    return prof;
}

}  // namespace detail

/// Random-intercept linear mixed model fitted by profiled REML: a 1-D
/// golden-section search over log psi in [-12, 12], psi = sigma_b^2 /
/// sigma_eps^2. Wald t-values use df = n_obs - n_fixed. When the search
/// lands on the lower bound the model snaps to psi = 0 and reproduces OLS
/// exactly.
inline MixedModelFit mixed_effects_fit(const MixedModelData& data) {
    const Eigen::Index n = data.y.size();
    const Eigen::Index p = data.x.cols();
    if (data.x.rows() != n || static_cast<Eigen::Index>(data.subject.size()) != n)
        throw invariant_error("mixed_effects_t: design, response and subject lengths differ");
    if (n < 2) throw invariant_error("mixed_effects_t: need at least two observations");
    if (n <= p) throw invariant_error("mixed_effects_t: more coefficients than observations");
    std::map<int, std::vector<int>> groups;
    for (Eigen::Index i = 0; i < n; ++i) groups[data.subject[static_cast<std::size_t>(i)]].push_back(static_cast<int>(i));
    if (groups.size() < 2) throw invariant_error("mixed_effects_t: need at least two subjects");

    MixedModelFit fit;
    fit.df = static_cast<double>(n - p);

    // Constant response: every slope coefficient is zero by construction
    // and the Wald statistic is defined as 0.
    if ((data.y.array() - data.y(0)).abs().maxCoeff() == 0.0) {
        detail::MixedProfile prof = detail::mixed_profile_at(data, groups, 0.0);
        fit.beta = Eigen::VectorXd::Zero(p);
        // keep the intercept-like reconstruction from the profile
        fit.beta = prof.beta;
        for (Eigen::Index j = 0; j < p; ++j)
            if (std::abs(fit.beta(j)) < 1e-8 * std::max(1.0, std::abs(data.y(0)))) fit.beta(j) = 0.0;
        fit.se = Eigen::VectorXd::Zero(p);
        fit.sigma2 = 0.0;
        fit.psi = 0.0;
        fit.at_lower_bound = true;
        return fit;
    }

    const double lo = -12.0, hi = 12.0;
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c1 = b - invphi * (b - a);
    double c2 = a + invphi * (b - a);
    auto objective = [&](double logpsi) { return detail::mixed_profile_at(data, groups, std::exp(logpsi)).reml; };
    double f1 = objective(c1), f2 = objective(c2);
    for (int it = 0; it < 80 && (b - a) > 1e-9; ++it) {
        if (f1 < f2) {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - invphi * (b - a);
            f1 = objective(c1);
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + invphi * (b - a);
            f2 = objective(c2);
        }
    }
    double log_psi = 0.5 * (a + b);
    bool at_bound = log_psi <= lo + 1e-6;
    double psi = at_bound ? 0.0 : std::exp(log_psi);

    detail::MixedProfile prof = detail::mixed_profile_at(data, groups, psi);
    fit.beta = prof.beta;
    fit.se = (prof.sigma2 * prof.xtvx_inv.diagonal().array()).max(0.0).sqrt();
    fit.sigma2 = prof.sigma2;
    fit.psi = psi;
    fit.at_lower_bound = at_bound;
    return fit;
}

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double df = 0.0;
};

/// Wald test for one coefficient of the random-intercept model.
inline TestResult mixed_effects_t(const MixedModelData& data, const std::string& target_coef) {
    auto it = std::find(data.coef_names.begin(), data.coef_names.end(), target_coef);
    if (it == data.coef_names.end())
        throw invariant_error("mixed_effects_t: unknown coefficient '" + target_coef + "'");
    int idx = static_cast<int>(it - data.coef_names.begin());
    MixedModelFit fit = mixed_effects_fit(data);
    return {fit.t_value(idx), fit.p_value(idx), fit.df};
}

// ---------------------------------------------------------------------------
// Network autocorrelation pieces
// ---------------------------------------------------------------------------

enum class NeighborAggregate { mean, sum };

struct NeighborMapResult {
    RegionalStatMap map;
    std::vector<bool> isolated;  ///< true where the region has no neighbors
};

/// Neighbor-aggregated map: T_hat_i = mean (or sum) of T_j over the direct
/// neighbors of i. Isolated nodes are flagged for downstream exclusion.
inline NeighborMapResult neighbor_mean_map(const RegionalStatMap& values, const WeightedGraph& g,
                                           NeighborAggregate aggregate = NeighborAggregate::mean,
                                           double threshold = 0.0) {
    if (values.values.size() != g.n()) throw invariant_error("neighbor_mean_map: lengths differ");
    NeighborMapResult out;
    out.map.kind = values.kind;
    out.map.values = Eigen::VectorXd::Zero(g.n());
    out.isolated.assign(static_cast<std::size_t>(g.n()), false);
    int isolated_count = 0;
    for (int i = 0; i < g.n(); ++i) {
        std::vector<int> nb = neighborhood(g, i, threshold);
        if (nb.empty()) {
            out.isolated[static_cast<std::size_t>(i)] = true;
            ++isolated_count;
            continue;
        }
        double acc = 0.0;
        for (int j : nb) acc += values.values(j);
        out.map.values(i) = aggregate == NeighborAggregate::mean ? acc / static_cast<double>(nb.size()) : acc;
    }
    if (isolated_count == g.n()) throw invariant_error("neighbor_mean_map: all nodes are isolated");
    if (isolated_count > 0)
        warn("neighbor_mean_map: " + std::to_string(isolated_count) + " isolated regions flagged");
    return out;
}

struct PearsonResult {
    double r = 0.0;
    double p_two_sided = 1.0;
    double adjusted_r2 = 0.0;  ///< adjusted R^2 of the univariate regression
    int n = 0;
};

inline PearsonResult pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    if (x.size() != y.size()) throw invariant_error("pearson: lengths differ");
    const Eigen::Index n = x.size();
    if (n < 3) throw invariant_error("pearson: need at least 3 observations");
    Eigen::ArrayXd xc = x.array() - x.mean();
    Eigen::ArrayXd yc = y.array() - y.mean();
    double sxx = (xc * xc).sum(), syy = (yc * yc).sum();
    if (sxx == 0.0 || syy == 0.0) throw invariant_error("pearson: zero variance input");
    PearsonResult out;
    out.n = static_cast<int>(n);
    out.r = (xc * yc).sum() / std::sqrt(sxx * syy);
    double r2 = out.r * out.r;
    double dfree = static_cast<double>(n - 2);
    if (r2 >= 1.0) {
        out.p_two_sided = 0.0;
    } else {
        double t = out.r * std::sqrt(dfree / (1.0 - r2));
        out.p_two_sided = student_t_two_sided_p(t, dfree);
    }
    out.adjusted_r2 = 1.0 - (1.0 - r2) * static_cast<double>(n - 1) / dfree;
    return out;
}

// ---------------------------------------------------------------------------
// Spin permutation test
// ---------------------------------------------------------------------------

struct SpinOptions {
    int n_perm = 1000;
    std::uint64_t seed = 0;
    int threads = 1;
    /// Test hook: overrides the uniform random rotation drawn per
    /// permutation (receives that permutation's RNG stream).
    std::function<Eigen::Matrix3d(Rng&)> rotation_provider;
    bool record_permutations = false;
};

struct SpinGroupResult {
    int group = 0;
    int n_regions = 0;
    double observed = 0.0;
    double null_mean = 0.0;
    double null_sd = 0.0;
    double z = 0.0;
    double p_spin = 1.0;
    bool skipped = false;
};

struct SpinResult {
    std::vector<SpinGroupResult> groups;
    std::vector<std::vector<int>> permutations;  ///< recorded when requested
};

/// Uniform random rotation from a normalized quaternion.
inline Eigen::Matrix3d random_rotation(Rng& rng) {
    double q[4];
    double norm2 = 0.0;
    do {
        norm2 = 0.0;
        for (double& v : q) {
            v = rng.normal();
            norm2 += v * v;
        }
    } while (norm2 < 1e-12);
    double s = 1.0 / std::sqrt(norm2);
    double w = q[0] * s, x = q[1] * s, y = q[2] * s, z = q[3] * s;
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

namespace detail {

/// One spin: rotates each hemisphere (mirrored rotations) and reassigns
/// regions to the nearest rotated region, greedily without replacement in
/// random order. perm[i] = source region whose rotated position is closest
/// to region i.
inline std::vector<int> spin_assignment(const Eigen::MatrixXd& coords, const std::vector<int>& left,
                                        const std::vector<int>& right, const Eigen::Matrix3d& rotation, Rng& rng) {
    const int n = static_cast<int>(coords.rows());
    std::vector<int> perm(static_cast<std::size_t>(n), -1);
    Eigen::Matrix3d mirror = Eigen::Vector3d(-1.0, 1.0, 1.0).asDiagonal();
    for (int side = 0; side < 2; ++side) {
        const std::vector<int>& members = side == 0 ? left : right;
        if (members.empty()) continue;
        Eigen::Matrix3d rot = side == 0 ? rotation : Eigen::Matrix3d(mirror * rotation * mirror);
        const int m = static_cast<int>(members.size());
        Eigen::MatrixXd original(m, 3), rotated(m, 3);
        for (int a = 0; a < m; ++a) original.row(a) = coords.row(members[static_cast<std::size_t>(a)]);
        rotated.noalias() = original * rot.transpose();
        // squared distances via the unit-sphere identity |u - v|^2 = 2 - 2 u.v
        Eigen::MatrixXd dist = -2.0 * (original * rotated.transpose());
        std::vector<int> order(members.size());
        for (int a = 0; a < m; ++a) order[static_cast<std::size_t>(a)] = a;
        rng.shuffle(order);
        std::vector<char> claimed(members.size(), 0);
        for (int a : order) {
            int best = -1;
            double best_d = std::numeric_limits<double>::infinity();
            for (int bidx = 0; bidx < m; ++bidx) {
                if (claimed[static_cast<std::size_t>(bidx)]) continue;
                double d = dist(a, bidx);
                if (d < best_d) {
                    best_d = d;
                    best = bidx;
                }
            }
            claimed[static_cast<std::size_t>(best)] = 1;
            perm[static_cast<std::size_t>(members[static_cast<std::size_t>(a)])] =
                members[static_cast<std::size_t>(best)];
        }
    }
    return perm;
}

}  // namespace detail

/// Spin-permutation test of group-level means against a spatial null.
/// groups[i] is the group id of region i (negative = excluded). Groups with
/// fewer than 3 regions are skipped with a notice. One-tailed:
/// p = (1 + #{null >= observed}) / (n_perm + 1).
inline SpinResult spin_permutation_test(const RegionalStatMap& values, const ParcellationAtlas& atlas,
                                        const std::vector<int>& groups, const SpinOptions& opts = {}) {
    const int n = atlas.n();
    if (values.values.size() != n || static_cast<int>(groups.size()) != n)
        throw invariant_error("spin_permutation_test: lengths differ");
    Eigen::MatrixXd coords = atlas.coordinates();
    std::vector<int> left, right;
    for (int i = 0; i < n; ++i)
        (atlas.hemisphere(i) == Hemisphere::left ? left : right).push_back(i);

    int n_groups = 0;
    for (int g : groups)
        if (g >= 0) n_groups = std::max(n_groups, g + 1);
    std::vector<std::vector<int>> members(static_cast<std::size_t>(n_groups));
    for (int i = 0; i < n; ++i)
        if (groups[static_cast<std::size_t>(i)] >= 0) members[static_cast<std::size_t>(groups[static_cast<std::size_t>(i)])].push_back(i);

    auto group_stat = [&](const std::vector<int>& idx, const std::vector<int>* perm) {
        double acc = 0.0;
        for (int i : idx) acc += perm ? values.values((*perm)[static_cast<std::size_t>(i)]) : values.values(i);
        return acc / static_cast<double>(idx.size());
    };

    Rng root(opts.seed);
    std::vector<std::vector<int>> perms(static_cast<std::size_t>(opts.n_perm));
    parallel_for(opts.n_perm, opts.threads, [&](std::int64_t k) {
        Rng stream = root.stream(0x5e1fULL, static_cast<std::uint64_t>(k));
        Eigen::Matrix3d rot = opts.rotation_provider ? opts.rotation_provider(stream) : random_rotation(stream);
        perms[static_cast<std::size_t>(k)] = detail::spin_assignment(coords, left, right, rot, stream);
    });

    SpinResult result;
    for (int g = 0; g < n_groups; ++g) {
        SpinGroupResult gr;
        gr.group = g;
        gr.n_regions = static_cast<int>(members[static_cast<std::size_t>(g)].size());
        if (gr.n_regions < 3) {
            gr.skipped = true;
            warn("spin_permutation_test: group " + std::to_string(g) + " has fewer than 3 regions, skipped");
            result.groups.push_back(gr);
            continue;
        }
        gr.observed = group_stat(members[static_cast<std::size_t>(g)], nullptr);
        Eigen::VectorXd null_stats(opts.n_perm);
        int count_ge = 0;
        for (int k = 0; k < opts.n_perm; ++k) {
            null_stats(k) = group_stat(members[static_cast<std::size_t>(g)], &perms[static_cast<std::size_t>(k)]);
            if (null_stats(k) >= gr.observed) ++count_ge;
        }
        gr.null_mean = null_stats.mean();
        double var = (null_stats.array() - gr.null_mean).square().sum() / std::max(opts.n_perm - 1, 1);
        gr.null_sd = std::sqrt(var);
        gr.z = gr.null_sd > 0.0 ? (gr.observed - gr.null_mean) / gr.null_sd : 0.0;
        gr.p_spin = (1.0 + count_ge) / static_cast<double>(opts.n_perm + 1);
        result.groups.push_back(gr);
    }
    if (opts.record_permutations) result.permutations = std::move(perms);
    return result;
}

// ---------------------------------------------------------------------------
// Dominance testing
// ---------------------------------------------------------------------------

enum class DominanceLabel { SC, FC, none };

inline const char* to_string(DominanceLabel l) {
    switch (l) {
        case DominanceLabel::SC: return "SC";
        case DominanceLabel::FC: return "FC";
        default: return "none";
    }
}

enum class DominanceScope { region, lobe };

struct DominanceResult {
    int scope_index = 0;  ///< region index, or lobe enum value for lobe scope
    DominanceLabel label = DominanceLabel::none;
    double t = 0.0;
    double p_one_sided = 1.0;  ///< p of the winning direction (min of the two tails)
    double effect = 0.0;       ///< |mean(u_s - u_f)|
    int n_subjects = 0;
};

/// One-sided paired t-test of u_s vs u_f per region (or per lobe after
/// within-lobe averaging). SC label when p(d > 0) < alpha, FC when
/// p(d < 0) < alpha.
inline std::vector<DominanceResult> dominance_test(const std::vector<PropagationDecomposition>& decomps,
                                                   DominanceScope scope = DominanceScope::region,
                                                   const std::vector<Lobe>* lobes = nullptr, double alpha = 0.05) {
    if (decomps.size() < 3) throw invariant_error("dominance_test: need at least 3 subjects");
    const int n_regions = static_cast<int>(decomps.front().contribution_s.size());
    for (const auto& d : decomps)
        if (d.contribution_s.size() != n_regions || d.contribution_f.size() != n_regions)
            throw invariant_error("dominance_test: inconsistent decomposition lengths");

    int n_scopes = n_regions;
    std::vector<std::vector<int>> scope_members;
    if (scope == DominanceScope::lobe) {
        if (!lobes || static_cast<int>(lobes->size()) != n_regions)
            throw invariant_error("dominance_test: lobe scope requires lobe assignments");
        n_scopes = static_cast<int>(lobe_names.size());
        scope_members.resize(static_cast<std::size_t>(n_scopes));
        for (int i = 0; i < n_regions; ++i)
            scope_members[static_cast<std::size_t>((*lobes)[static_cast<std::size_t>(i)])].push_back(i);
    }

    const double n_subj = static_cast<double>(decomps.size());
    std::vector<DominanceResult> out;
    for (int s = 0; s < n_scopes; ++s) {
        if (scope == DominanceScope::lobe && scope_members[static_cast<std::size_t>(s)].empty()) continue;
        Eigen::VectorXd d(decomps.size());
        for (std::size_t k = 0; k < decomps.size(); ++k) {
            if (scope == DominanceScope::region) {
                d(static_cast<Eigen::Index>(k)) = decomps[k].contribution_s(s) - decomps[k].contribution_f(s);
            } else {
                double acc = 0.0;
                for (int i : scope_members[static_cast<std::size_t>(s)])
                    acc += decomps[k].contribution_s(i) - decomps[k].contribution_f(i);
                d(static_cast<Eigen::Index>(k)) = acc / static_cast<double>(scope_members[static_cast<std::size_t>(s)].size());
            }
            if (!std::isfinite(d(static_cast<Eigen::Index>(k))))
                throw invariant_error("dominance_test: non-finite paired value");
        }
        DominanceResult res;
        res.scope_index = s;
        res.n_subjects = static_cast<int>(decomps.size());
        double mean = d.mean();
        double sd = std::sqrt((d.array() - mean).square().sum() / (n_subj - 1.0));
        res.effect = std::abs(mean);
        if (sd == 0.0) {
            if (mean != 0.0)
                throw invariant_error(std::string("dominance_test: zero-variance differences at ") +
                                      (scope == DominanceScope::region ? "region " : "lobe ") + std::to_string(s));
            res.t = 0.0;
            res.p_one_sided = 1.0;
            res.label = DominanceLabel::none;
        } else {
            res.t = mean / (sd / std::sqrt(n_subj));
            double df = n_subj - 1.0;
            double p_sc = student_t_sf(res.t, df);        // P(T >= t): evidence for d > 0
            double p_fc = student_t_sf(-res.t, df);       // evidence for d < 0
            res.p_one_sided = std::min(p_sc, p_fc);
            res.label = p_sc < alpha ? DominanceLabel::SC : (p_fc < alpha ? DominanceLabel::FC : DominanceLabel::none);
        }
        out.push_back(res);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stratification
// ---------------------------------------------------------------------------

enum class StratifyKey { age_bins, sex, apoe4, abeta, diagnosis_binary };

inline StratifyKey stratify_key_from_string(const std::string& s) {
    if (s == "age_bins" || s == "age") return StratifyKey::age_bins;
    if (s == "sex") return StratifyKey::sex;
    if (s == "apoe4") return StratifyKey::apoe4;
    if (s == "abeta") return StratifyKey::abeta;
    if (s == "diagnosis" || s == "diagnosis_binary") return StratifyKey::diagnosis_binary;
    throw invariant_error("stratify: unknown key '" + s + "'");
}

struct Stratification {
    std::vector<std::string> group_names;
    std::vector<std::vector<int>> groups;  ///< subject indices per group
    int n_missing = 0;                     ///< subjects omitted for a missing key
};

/// Age window per the published cutpoints; the printed bins "<60, 61-75,
/// 76-85, >85" leave the boundaries open, closed here as (-inf,60),
/// [60,75], (75,85], (85,inf).
inline int age_bin(double age) {
    if (age < 60.0) return 0;
    if (age <= 75.0) return 1;
    if (age <= 85.0) return 2;
    return 3;
}

inline constexpr std::array<const char*, 4> age_bin_names = {"<60", "61-75", "76-85", ">85"};

/// Amyloid status from CSF: positive strictly below 192 pg/mL.
inline bool abeta_positive(double abeta_pgml) { return abeta_pgml < 192.0; }

/// Diagnosis grouping: CN group = {CN, SMC, EMCI}, AD group = {LMCI, AD}.
inline bool is_ad_group(Diagnosis d) { return d == Diagnosis::LMCI || d == Diagnosis::AD; }

inline Stratification stratify(const Cohort& cohort, StratifyKey key) {
    Stratification out;
    auto add_groups = [&](std::initializer_list<const char*> names) {
        for (const char* nm : names) {
            out.group_names.emplace_back(nm);
            out.groups.emplace_back();
        }
    };
    switch (key) {
        case StratifyKey::age_bins: add_groups({"<60", "61-75", "76-85", ">85"}); break;
        case StratifyKey::sex: add_groups({"M", "F"}); break;
        case StratifyKey::apoe4: add_groups({"carrier", "noncarrier"}); break;
        case StratifyKey::abeta: add_groups({"abeta_positive", "abeta_negative"}); break;
        case StratifyKey::diagnosis_binary: add_groups({"CN_group", "AD_group"}); break;
    }
    for (int si = 0; si < cohort.n_subjects(); ++si) {
        const SubjectCovariates& cov = cohort.subject(si).covariates();
        int g = -1;
        switch (key) {
            case StratifyKey::age_bins: g = age_bin(cov.age); break;
            case StratifyKey::sex: g = cov.sex == Sex::male ? 0 : 1; break;
            case StratifyKey::apoe4: g = cov.apoe4 == Apoe4::carrier ? 0 : 1; break;
            case StratifyKey::abeta:
                if (cov.abeta_pgml) g = abeta_positive(*cov.abeta_pgml) ? 0 : 1;
                break;
            case StratifyKey::diagnosis_binary: g = is_ad_group(cov.diagnosis) ? 1 : 0; break;
        }
        if (g < 0) {
            ++out.n_missing;
            continue;
        }
        out.groups[static_cast<std::size_t>(g)].push_back(si);
    }
    if (out.n_missing > 0)
        warn("stratify: omitted " + std::to_string(out.n_missing) + " subjects with missing key");
    return out;
}

// ---------------------------------------------------------------------------
// Longitudinal rates
// ---------------------------------------------------------------------------

/// Per-region tau propagation rate for one subject: mean over consecutive
/// scan pairs of (SUVR_next - SUVR_prev) / (age_next - age_prev).
inline RegionalStatMap subject_rate(const Subject& subject) {
    if (subject.scans.size() < 2)
        throw invariant_error("subject_rate: subject '" + subject.id + "' needs at least two scans");
    const Eigen::Index n = subject.scans.front().suvr.size();
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
    int pairs = 0;
    for (std::size_t k = 0; k + 1 < subject.scans.size(); ++k) {
        double da = subject.scans[k + 1].age - subject.scans[k].age;
        if (!(da > 0.0))
            throw invariant_error("subject_rate: subject '" + subject.id + "' has duplicate scan ages");
        acc += (subject.scans[k + 1].suvr - subject.scans[k].suvr) / da;
        ++pairs;
    }
    return {acc / pairs, RegionalStatMap::Kind::rate_per_year};
}

}  // namespace mlt
