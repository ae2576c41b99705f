#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mlt/cohort.hpp"
#include "mlt/core.hpp"
#include "mlt/model.hpp"
#include "mlt/rng.hpp"
#include "mlt/stats.hpp"

namespace mlt {

struct MediationResult {
    int region = -1;
    double a = 0.0;        ///< X -> M
    double b = 0.0;        ///< M -> Y given X
    double c_prime = 0.0;  ///< direct effect of X on Y given M
    double c_total = 0.0;  ///< total effect from Y ~ X + covariates
    double indirect = 0.0; ///< a * b
    double ci_low = 0.0;   ///< bootstrap 95% percentile bounds for a*b
    double ci_high = 0.0;
    double p_direct = 1.0;
    double p_indirect = 1.0;
    double age_coef_m = 0.0;  ///< age coefficient in the mediator equation
    double age_coef_y = 0.0;  ///< age coefficient in the outcome equation
};

namespace detail {

struct OlsFit {
    Eigen::VectorXd beta;
    Eigen::VectorXd se;
    double df = 0.0;
};

inline OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const Eigen::Index n = x.rows(), p = x.cols();
    if (n <= p) throw invariant_error("mediate: more coefficients than observations");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < p)
        throw invariant_error("mediate: design is rank deficient (collinear predictors, e.g. X equals M)");
    OlsFit fit;
    fit.beta = qr.solve(y);
    fit.df = static_cast<double>(n - p);
    double sigma2 = (y - x * fit.beta).squaredNorm() / fit.df;
    Eigen::MatrixXd xtx_inv = (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    fit.se = (sigma2 * xtx_inv.diagonal().array()).max(0.0).sqrt();
    return fit;
}

struct MediationPaths {
    double a, b, c_prime, c_total, se_a, se_b, se_cprime, df_y, age_m, age_y;
};

/// The two OLS regressions of product-of-coefficients mediation.
/// Column layout: [1, X, covariates] for M; [1, X, M, covariates] for Y.
inline MediationPaths mediation_paths(const Eigen::VectorXd& x, const Eigen::VectorXd& m, const Eigen::VectorXd& y,
                                      const Eigen::MatrixXd& covariates, int age_col) {
    const Eigen::Index n = x.size();
    const Eigen::Index q = covariates.cols();
    Eigen::MatrixXd design_m(n, 2 + q);
    design_m.col(0).setOnes();
    design_m.col(1) = x;
    if (q > 0) design_m.rightCols(q) = covariates;
    OlsFit fit_m = ols(design_m, m);

    Eigen::MatrixXd design_y(n, 3 + q);
    design_y.col(0).setOnes();
    design_y.col(1) = x;
    design_y.col(2) = m;
    if (q > 0) design_y.rightCols(q) = covariates;
    OlsFit fit_y = ols(design_y, y);

    Eigen::MatrixXd design_t(n, 2 + q);
    design_t.col(0).setOnes();
    design_t.col(1) = x;
    if (q > 0) design_t.rightCols(q) = covariates;
    OlsFit fit_t = ols(design_t, y);

    MediationPaths p{};
    p.a = fit_m.beta(1);
    p.se_a = fit_m.se(1);
    p.b = fit_y.beta(2);
    p.se_b = fit_y.se(2);
    p.c_prime = fit_y.beta(1);
    p.se_cprime = fit_y.se(1);
    p.c_total = fit_t.beta(1);
    p.df_y = fit_y.df;
    p.age_m = age_col >= 0 ? fit_m.beta(2 + age_col) : 0.0;
    p.age_y = age_col >= 0 ? fit_y.beta(3 + age_col) : 0.0;
    return p;
}

}  // namespace detail

struct MediationOptions {
    int n_boot = 2000;
    std::uint64_t seed = 0;
    int threads = 1;
    int age_col = -1;  ///< column of the covariate block holding age, for reporting
};

/// Product-of-coefficients mediation with covariate adjustment: a from
/// M ~ X + covariates, b and c' from Y ~ X + M + covariates, indirect = a*b
/// with nonparametric subject-bootstrap percentile intervals. p_indirect is
/// the two-sided bootstrap tail probability.
inline MediationResult mediate(const Eigen::VectorXd& x, const Eigen::VectorXd& m, const Eigen::VectorXd& y,
                               const Eigen::MatrixXd& covariates, const MediationOptions& opts = {}) {
    const Eigen::Index n = x.size();
    if (m.size() != n || y.size() != n || (covariates.size() > 0 && covariates.rows() != n))
        throw invariant_error("mediate: input lengths differ");
    if (n < 20) throw invariant_error("mediate: need at least 20 subjects");

    detail::MediationPaths paths = detail::mediation_paths(x, m, y, covariates, opts.age_col);

    MediationResult res;
    res.a = paths.a;
    res.b = paths.b;
    res.c_prime = paths.c_prime;
    res.c_total = paths.c_total;
    res.indirect = paths.a * paths.b;
    res.age_coef_m = paths.age_m;
    res.age_coef_y = paths.age_y;
    res.p_direct = paths.se_cprime > 0.0
                       ? student_t_two_sided_p(paths.c_prime / paths.se_cprime, paths.df_y)
                       : (paths.c_prime == 0.0 ? 1.0 : 0.0);

    std::vector<double> boot(static_cast<std::size_t>(opts.n_boot));
    Rng root(opts.seed);
    parallel_for(opts.n_boot, opts.threads, [&](std::int64_t bidx) {
        Rng stream = root.stream(0xb00ULL, static_cast<std::uint64_t>(bidx));
        Eigen::VectorXd xb(n), mb(n), yb(n);
        Eigen::MatrixXd cb(n, covariates.cols());
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index src = static_cast<Eigen::Index>(stream.uniform_index(static_cast<std::uint64_t>(n)));
            xb(i) = x(src);
            mb(i) = m(src);
            yb(i) = y(src);
            if (covariates.cols() > 0) cb.row(i) = covariates.row(src);
        }
        double ab;
        try {
            detail::MediationPaths bp = detail::mediation_paths(xb, mb, yb, cb, -1);
            ab = bp.a * bp.b;
        } catch (const invariant_error&) {
            ab = res.indirect;  // degenerate resample: fall back to the point estimate
        }
        boot[static_cast<std::size_t>(bidx)] = ab;
    });

    std::vector<double> sorted = boot;
    std::sort(sorted.begin(), sorted.end());
    auto percentile = [&](double q) {
        double idx = q * (static_cast<double>(sorted.size()) - 1.0);
        std::size_t lo = static_cast<std::size_t>(std::floor(idx));
        std::size_t hi = static_cast<std::size_t>(std::ceil(idx));
        double w = idx - static_cast<double>(lo);
        return sorted[lo] * (1.0 - w) + sorted[hi] * w;
    };
    res.ci_low = percentile(0.025);
    res.ci_high = percentile(0.975);
    std::size_t n_le = 0, n_ge = 0;
    for (double v : boot) {
        if (v <= 0.0) ++n_le;
        if (v >= 0.0) ++n_ge;
    }
    double b_count = static_cast<double>(opts.n_boot) + 1.0;
    res.p_indirect = std::min(1.0, 2.0 * std::min((1.0 + n_le) / b_count, (1.0 + n_ge) / b_count));
    return res;
}

enum class MediationDirection { uf_via_us, us_via_uf };

inline const char* to_string(MediationDirection d) {
    return d == MediationDirection::uf_via_us ? "uf_via_us" : "us_via_uf";
}

inline MediationDirection mediation_direction_from_string(const std::string& s) {
    if (s == "uf_via_us") return MediationDirection::uf_via_us;
    if (s == "us_via_uf") return MediationDirection::us_via_uf;
    throw invariant_error("unknown mediation direction '" + s + "'");
}

struct MediationScan {
    MediationDirection direction = MediationDirection::uf_via_us;
    std::vector<MediationResult> regions;
    std::vector<int> significant_direct;
    std::vector<int> significant_indirect;
};

/// Runs the per-region mediation with MMSE as outcome. Direction uf_via_us:
/// X = u_f contribution, M = u_s contribution (and mirrored for us_via_uf);
/// age/sex/APOE4 enter as covariates. Subjects lacking MMSE or a
/// decomposition are omitted.
inline MediationScan mediation_scan(const std::vector<PropagationDecomposition>& decomps, const Cohort& cohort,
                                    MediationDirection direction, const MediationOptions& opts = {},
                                    double alpha = 0.05) {
    std::vector<int> usable;
    for (std::size_t d = 0; d < decomps.size(); ++d) {
        const SubjectCovariates& cov = cohort.subject(decomps[d].subject_index).covariates();
        if (cov.mmse) usable.push_back(static_cast<int>(d));
    }
    if (usable.size() < 20) throw invariant_error("mediation_scan: fewer than 20 subjects with MMSE");
    const int n = static_cast<int>(usable.size());
    const int n_regions = static_cast<int>(decomps.front().contribution_s.size());

    Eigen::VectorXd y(n);
    Eigen::MatrixXd covariates(n, 3);
    for (int i = 0; i < n; ++i) {
        const auto& dec = decomps[static_cast<std::size_t>(usable[static_cast<std::size_t>(i)])];
        const SubjectCovariates& cov = cohort.subject(dec.subject_index).covariates();
        y(i) = static_cast<double>(*cov.mmse);
        covariates(i, 0) = cov.age;
        covariates(i, 1) = cov.sex == Sex::male ? 1.0 : 0.0;
        covariates(i, 2) = cov.apoe4 == Apoe4::carrier ? 1.0 : 0.0;
    }

    MediationScan scan;
    scan.direction = direction;
    MediationOptions region_opts = opts;
    region_opts.age_col = 0;
    for (int r = 0; r < n_regions; ++r) {
        Eigen::VectorXd us(n), uf(n);
        for (int i = 0; i < n; ++i) {
            const auto& dec = decomps[static_cast<std::size_t>(usable[static_cast<std::size_t>(i)])];
            us(i) = dec.contribution_s(r);
            uf(i) = dec.contribution_f(r);
        }
        region_opts.seed = Rng(opts.seed).stream(0x5ca9ULL, static_cast<std::uint64_t>(r)).next_u64();
        const Eigen::VectorXd& xv = direction == MediationDirection::uf_via_us ? uf : us;
        const Eigen::VectorXd& mv = direction == MediationDirection::uf_via_us ? us : uf;
        MediationResult res = mediate(xv, mv, y, covariates, region_opts);
        res.region = r;
        if (res.p_direct < alpha) scan.significant_direct.push_back(r);
        if (res.p_indirect < alpha) scan.significant_indirect.push_back(r);
        scan.regions.push_back(std::move(res));
    }
    return scan;
}

}  // namespace mlt
