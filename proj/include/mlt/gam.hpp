#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "mlt/core.hpp"

namespace mlt {

struct GamOptions {
    int n_knots = 20;       ///< knots spanning the data range
    int penalty_order = 2;  ///< order of the coefficient difference penalty
    std::optional<double> lambda;  ///< fixed smoothing parameter; empty = GCV
    double lambda_grid_lo = 1e-4;
    double lambda_grid_hi = 1e4;
    int lambda_grid_size = 25;
};

namespace detail {

/// Uniform cubic B-spline basis (P-spline style: knots extended beyond the
/// data range so the Greville points are equally spaced, which makes the
/// difference penalty's null space exactly the polynomials of degree
/// < penalty_order in x).
class BsplineBasis {
public:
    BsplineBasis() = default;
    BsplineBasis(double x_lo, double x_hi, int n_knots) : lo_(x_lo), hi_(x_hi) {
        if (n_knots < 4) throw invariant_error("gam: need at least 4 knots");
        n_seg_ = n_knots - 1;
        h_ = (hi_ - lo_) / static_cast<double>(n_seg_);
        if (!(h_ > 0.0)) throw invariant_error("gam: degenerate x range");
        // knot vector from lo - 3h to hi + 3h
        knots_.resize(static_cast<std::size_t>(n_seg_ + 7));
        for (int i = 0; i < n_seg_ + 7; ++i) knots_[static_cast<std::size_t>(i)] = lo_ + h_ * (i - 3);
        n_basis_ = n_seg_ + 3;
    }

    int n_basis() const { return n_basis_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }

    /// Values of all basis functions at x (only 4 are nonzero).
    Eigen::VectorXd row(double x) const {
        int cell = cell_of(x);
        std::array<double, 4> local = local_values(x, cell, 3);
        Eigen::VectorXd out = Eigen::VectorXd::Zero(n_basis_);
        for (int r = 0; r < 4; ++r) out(cell + r) = local[static_cast<std::size_t>(r)];
        return out;
    }

    /// First derivatives of all basis functions at x, via
    /// B'_{j,3} = 3/(t_{j+3}-t_j) B_{j,2} - 3/(t_{j+4}-t_{j+1}) B_{j+1,2}.
    Eigen::VectorXd derivative_row(double x) const {
        int cell = cell_of(x);
        std::array<double, 4> q = local_values(x, cell, 2);  // q[r] = B_{cell+1+r,2}, r = 0..2
        Eigen::VectorXd out = Eigen::VectorXd::Zero(n_basis_);
        for (int r = 0; r < 4; ++r) {
            int j = cell + r;  // global function index
            double b_j2 = r >= 1 ? q[static_cast<std::size_t>(r - 1)] : 0.0;
            double b_j1_2 = r <= 2 ? q[static_cast<std::size_t>(r)] : 0.0;
            out(j) = 3.0 / (knot(j + 3) - knot(j)) * b_j2 - 3.0 / (knot(j + 4) - knot(j + 1)) * b_j1_2;
        }
        return out;
    }

private:
    int cell_of(double x) const {
        // clamp so the right boundary is inclusive
        int cell = static_cast<int>(std::floor((x - lo_) / h_));
        return std::clamp(cell, 0, n_seg_ - 1);
    }

    /// Nonzero degree-p basis values at x (The NURBS Book, A2.2). Entry r
    /// is B_{k-p+r,p}(x) with k = cell + 3 the knot-span index.
    std::array<double, 4> local_values(double x, int cell, int degree) const {
        int k = cell + 3;
        std::array<double, 4> vals = {1.0, 0.0, 0.0, 0.0};
        std::array<double, 4> left = {}, right = {};
        for (int j = 1; j <= degree; ++j) {
            left[static_cast<std::size_t>(j)] = x - knot(k + 1 - j);
            right[static_cast<std::size_t>(j)] = knot(k + j) - x;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                double temp = vals[static_cast<std::size_t>(r)] /
                              (right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)]);
                vals[static_cast<std::size_t>(r)] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
                saved = left[static_cast<std::size_t>(j - r)] * temp;
            }
            vals[static_cast<std::size_t>(j)] = saved;
        }
        return vals;
    }

    double knot(int i) const { return knots_[static_cast<std::size_t>(i)]; }

    double lo_ = 0.0, hi_ = 1.0, h_ = 1.0;
    int n_seg_ = 0, n_basis_ = 0;
    std::vector<double> knots_;
};

}  // namespace detail

struct GamInterval {
    double fit = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

/// Penalized cubic B-spline regression with difference penalty and
/// GCV-selected smoothing. Evaluable anywhere inside the fitted range;
/// the derivative is the analytic derivative of the basis expansion.
class GamFit {
public:
    GamFit(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys, const GamOptions& opts = {}) {
        const Eigen::Index n = xs.size();
        if (ys.size() != n) throw invariant_error("gam_fit: x and y lengths differ");
        if (n < 10) throw invariant_error("gam_fit: need at least 10 observations");
        double lo = xs.minCoeff(), hi = xs.maxCoeff();
        if (!(hi > lo)) throw invariant_error("gam_fit: degenerate x (all values equal)");
        {
            std::set<double> distinct(xs.data(), xs.data() + n);
            if (static_cast<int>(distinct.size()) < opts.n_knots)
                warn("gam_fit: fewer distinct x values (" + std::to_string(distinct.size()) + ") than knots (" +
                     std::to_string(opts.n_knots) + ")");
        }
        basis_ = detail::BsplineBasis(lo, hi, opts.n_knots);
        const int m = basis_.n_basis();

        Eigen::MatrixXd design(n, m);
        for (Eigen::Index i = 0; i < n; ++i) design.row(i) = basis_.row(xs(i)).transpose();

        // difference penalty of the requested order
        int order = opts.penalty_order;
        if (order < 1 || order >= m) throw invariant_error("gam_fit: invalid penalty order");
        Eigen::MatrixXd diff = Eigen::MatrixXd::Identity(m, m);
        for (int o = 0; o < order; ++o) {
            Eigen::Index rows = diff.rows() - 1;
            Eigen::MatrixXd next(rows, m);
            for (Eigen::Index r = 0; r < rows; ++r) next.row(r) = diff.row(r + 1) - diff.row(r);
            diff = next;
        }
        Eigen::MatrixXd penalty = diff.transpose() * diff;
        Eigen::MatrixXd btb = design.transpose() * design;
        Eigen::VectorXd bty = design.transpose() * ys;

        auto fit_at = [&](double lam, double* gcv_out) {
            Eigen::LDLT<Eigen::MatrixXd> ldlt(btb + lam * penalty);
            Eigen::VectorXd coef = ldlt.solve(bty);
            if (gcv_out) {
                double edf = (ldlt.solve(btb)).trace();
                double rss = (ys - design * coef).squaredNorm();
                double denom = static_cast<double>(n) - edf;
                *gcv_out = denom > 1e-9 ? static_cast<double>(n) * rss / (denom * denom)
                                        : std::numeric_limits<double>::infinity();
            }
            return coef;
        };

        if (opts.lambda) {
            lambda_ = *opts.lambda;
        } else {
            double best_gcv = std::numeric_limits<double>::infinity();
            double log_lo = std::log(opts.lambda_grid_lo), log_hi = std::log(opts.lambda_grid_hi);
            for (int k = 0; k < opts.lambda_grid_size; ++k) {
                double lam = std::exp(log_lo + (log_hi - log_lo) * k / (opts.lambda_grid_size - 1));
                double gcv = 0.0;
                fit_at(lam, &gcv);
                if (gcv < best_gcv) {
                    best_gcv = gcv;
                    lambda_ = lam;
                }
            }
            gcv_ = best_gcv;
        }

        Eigen::LDLT<Eigen::MatrixXd> ldlt(btb + lambda_ * penalty);
        coef_ = ldlt.solve(bty);
        edf_ = ldlt.solve(btb).trace();
        double rss = (ys - design * coef_).squaredNorm();
        sigma2_ = rss / std::max(static_cast<double>(n) - edf_, 1.0);
        posterior_cov_ = sigma2_ * ldlt.solve(Eigen::MatrixXd::Identity(m, m));
    }

    double evaluate(double x) const { return basis_.row(clamp_range(x)).dot(coef_); }

    /// Analytic first derivative of the fitted spline (rate, units per year).
    double derivative(double x) const {
        if (x < basis_.lo() - 1e-12 || x > basis_.hi() + 1e-12)
            throw invariant_error("gam_derivative: x outside the fitted range");
        return basis_.derivative_row(clamp_range(x)).dot(coef_);
    }

    /// Pointwise 95% interval from the Bayesian posterior covariance of the
    /// spline coefficients.
    GamInterval interval(double x) const {
        Eigen::VectorXd b = basis_.row(clamp_range(x));
        double mean = b.dot(coef_);
        double sd = std::sqrt(std::max(0.0, b.dot(posterior_cov_ * b)));
        return {mean, mean - 1.959963984540054 * sd, mean + 1.959963984540054 * sd};
    }

    double lambda() const { return lambda_; }
    double gcv() const { return gcv_; }
    double edf() const { return edf_; }
    double range_lo() const { return basis_.lo(); }
    double range_hi() const { return basis_.hi(); }
    const Eigen::VectorXd& coefficients() const { return coef_; }

private:
    double clamp_range(double x) const { return std::clamp(x, basis_.lo(), basis_.hi()); }

    detail::BsplineBasis basis_;
    Eigen::VectorXd coef_;
    Eigen::MatrixXd posterior_cov_;
    double lambda_ = 0.0, gcv_ = 0.0, edf_ = 0.0, sigma2_ = 0.0;
};

inline GamFit gam_fit(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys, const GamOptions& opts = {}) {
    return GamFit(xs, ys, opts);
}

inline double gam_derivative(const GamFit& fit, double x) { return fit.derivative(x); }

}  // namespace mlt
