#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mlt/core.hpp"
#include "mlt/rng.hpp"
#include "mlt/stats.hpp"

namespace mlt {

/// Region-by-gene expression matrix, values normalized to [0, 1].
struct ExpressionMatrix {
    Eigen::MatrixXd values;  ///< N x G
    std::vector<std::string> gene_names;

    int n_regions() const { return static_cast<int>(values.rows()); }
    int n_genes() const { return static_cast<int>(values.cols()); }

    void validate() const {
        if (static_cast<int>(gene_names.size()) != n_genes())
            throw invariant_error("expression matrix: gene name count does not match columns");
        if (!values.allFinite()) throw invariant_error("expression matrix: non-finite values");
        if (values.size() > 0 && (values.minCoeff() < 0.0 || values.maxCoeff() > 1.0))
            throw invariant_error("expression matrix: values must lie in [0, 1] after ingestion scaling");
        for (std::size_t i = 0; i < gene_names.size(); ++i)
            for (std::size_t j = i + 1; j < gene_names.size(); ++j)
                if (gene_names[i] == gene_names[j])
                    throw invariant_error("expression matrix: duplicate gene name '" + gene_names[i] + "'");
    }
};

namespace detail {

struct StandardizedDesign {
    Eigen::MatrixXd x;            ///< columns standardized to mean 0, variance 1 (1/n convention)
    Eigen::VectorXd y;            ///< centered response
    std::vector<int> kept_cols;   ///< original column index per standardized column
};

inline StandardizedDesign standardize(const Eigen::MatrixXd& x_raw, const Eigen::VectorXd& y_raw) {
    const Eigen::Index n = x_raw.rows();
    StandardizedDesign out;
    out.y = y_raw.array() - y_raw.mean();
    std::vector<Eigen::VectorXd> cols;
    for (Eigen::Index j = 0; j < x_raw.cols(); ++j) {
        Eigen::VectorXd c = x_raw.col(j).array() - x_raw.col(j).mean();
        double var = c.squaredNorm() / static_cast<double>(n);
        if (var <= 1e-24) continue;  // constant columns dropped
        cols.push_back(c / std::sqrt(var));
        out.kept_cols.push_back(static_cast<int>(j));
    }
    if (cols.empty()) throw invariant_error("nn_lasso: all predictor columns are constant");
    if (static_cast<Eigen::Index>(cols.size()) < x_raw.cols())
        warn("nn_lasso: dropped " + std::to_string(x_raw.cols() - static_cast<Eigen::Index>(cols.size())) +
             " constant predictor columns");
    out.x.resize(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.x.col(static_cast<Eigen::Index>(j)) = cols[j];
    return out;
}

/// Cyclic coordinate descent on
///   (1/2n) ||y - X b||^2 + lambda * sum(b),  b >= 0,
/// for standardized X (so each coordinate's curvature is exactly 1).
inline Eigen::VectorXd nn_lasso_standardized(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda,
                                             Eigen::VectorXd beta_warm = {}) {
    const Eigen::Index n = x.rows(), g = x.cols();
    Eigen::VectorXd beta = beta_warm.size() == g ? std::move(beta_warm) : Eigen::VectorXd::Zero(g);
    Eigen::VectorXd resid = y - x * beta;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int sweep = 0; sweep < 10000; ++sweep) {
        double max_delta = 0.0;
        for (Eigen::Index j = 0; j < g; ++j) {
            double old = beta(j);
            double rho = inv_n * x.col(j).dot(resid) + old;  // z_j = 1 by standardization
            double next = std::max(0.0, rho - lambda);
            if (next != old) {
                resid.noalias() -= (next - old) * x.col(j);
                beta(j) = next;
                max_delta = std::max(max_delta, std::abs(next - old));
            }
        }
        if (max_delta < 1e-9) return beta;
    }
    warn("nn_lasso: coordinate descent hit the sweep limit before reaching tolerance");
    return beta;
}

}  // namespace detail

/// Non-negative LASSO: predictors are standardized internally (constant
/// columns dropped with a notice), the response centered, and coefficients
/// solved by cyclic coordinate descent with the nonnegative soft-threshold
/// update. Returned coefficients are on the standardized scale, one per
/// original column (dropped columns get 0).
inline Eigen::VectorXd nn_lasso(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, double lambda) {
    if (y.size() != x.rows()) throw invariant_error("nn_lasso: response and design row counts differ");
    if (lambda < 0.0) throw invariant_error("nn_lasso: lambda must be nonnegative");
    detail::StandardizedDesign d = detail::standardize(x, y);
    Eigen::VectorXd beta_std = detail::nn_lasso_standardized(d.x, d.y, lambda);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
    for (std::size_t j = 0; j < d.kept_cols.size(); ++j)
        beta(d.kept_cols[j]) = beta_std(static_cast<Eigen::Index>(j));
    return beta;
}

inline Eigen::VectorXd nn_lasso(const Eigen::VectorXd& y, const ExpressionMatrix& x, double lambda) {
    return nn_lasso(y, x.values, lambda);
}

/// Logarithmic lambda grid, ascending.
inline std::vector<double> lasso_lambda_grid(double lo = 1e-4, double hi = 1.0, int size = 15) {
    std::vector<double> grid(static_cast<std::size_t>(size));
    for (int k = 0; k < size; ++k)
        grid[static_cast<std::size_t>(k)] = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * k / (size - 1));
    return grid;
}

struct SelectionProfile {
    std::vector<std::string> gene_names;
    Eigen::VectorXd selection_frequency;  ///< s_j at the reference lambda
    Eigen::MatrixXd path_frequency;       ///< G x n_lambda selection frequencies along the grid
    std::vector<double> lambda_grid;
    double reference_lambda = 0.0;
    int n_resamples = 0;
    std::uint64_t seed = 0;
};

struct BootstrapSelectionOptions {
    std::vector<double> lambda_grid = lasso_lambda_grid();
    int n_resamples = 100;
    std::uint64_t seed = 0;
    int cv_folds = 5;  ///< for picking the reference lambda on the original sample
    int threads = 1;
};

/// Bootstrap gene-selection frequencies: regions resampled with
/// replacement, the non-negative LASSO fitted across the lambda grid per
/// resample (warm-started along the path), and s_j recorded at the
/// reference lambda chosen by cross-validated MSE on the original sample.
inline SelectionProfile bootstrap_selection(const Eigen::VectorXd& y, const ExpressionMatrix& expr,
                                            const BootstrapSelectionOptions& opts = {}) {
    expr.validate();
    const int n = expr.n_regions();
    const int g = expr.n_genes();
    if (y.size() != n) throw invariant_error("bootstrap_selection: target length must equal region count");
    if (n < 10) throw invariant_error("bootstrap_selection: need at least 10 regions");
    if (opts.lambda_grid.empty()) throw invariant_error("bootstrap_selection: empty lambda grid");

    std::vector<double> grid = opts.lambda_grid;
    std::sort(grid.begin(), grid.end(), std::greater<double>());  // descending for warm starts

    // Reference lambda by k-fold CV on the original sample.
    Rng root(opts.seed);
    std::vector<int> fold_of(static_cast<std::size_t>(n));
    {
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng cv_rng = root.stream(0xcfULL);
        cv_rng.shuffle(order);
        for (int i = 0; i < n; ++i)
            fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i % opts.cv_folds;
    }
    Eigen::VectorXd cv_mse = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
    for (int f = 0; f < opts.cv_folds; ++f) {
        std::vector<int> train, test;
        for (int i = 0; i < n; ++i) (fold_of[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
        if (train.size() < 3 || test.empty()) continue;
        Eigen::MatrixXd xtr(train.size(), g), xte(test.size(), g);
        Eigen::VectorXd ytr(train.size()), yte(test.size());
        for (std::size_t i = 0; i < train.size(); ++i) {
            xtr.row(static_cast<Eigen::Index>(i)) = expr.values.row(train[i]);
            ytr(static_cast<Eigen::Index>(i)) = y(train[i]);
        }
        for (std::size_t i = 0; i < test.size(); ++i) {
            xte.row(static_cast<Eigen::Index>(i)) = expr.values.row(test[i]);
            yte(static_cast<Eigen::Index>(i)) = y(test[i]);
        }
        detail::StandardizedDesign d = detail::standardize(xtr, ytr);
        // apply the training standardization to the held-out block
        Eigen::MatrixXd xte_std(test.size(), d.x.cols());
        for (std::size_t j = 0; j < d.kept_cols.size(); ++j) {
            int col = d.kept_cols[j];
            double mean = xtr.col(col).mean();
            double sd = std::sqrt((xtr.col(col).array() - mean).square().sum() / static_cast<double>(train.size()));
            xte_std.col(static_cast<Eigen::Index>(j)) = (xte.col(col).array() - mean) / sd;
        }
        double ytr_mean = ytr.mean();
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(d.x.cols());
        for (std::size_t li = 0; li < grid.size(); ++li) {
            beta = detail::nn_lasso_standardized(d.x, d.y, grid[li], beta);
            Eigen::VectorXd pred = (xte_std * beta).array() + ytr_mean;
            cv_mse(static_cast<Eigen::Index>(li)) += (yte.array() - pred.array()).square().sum();
        }
    }
    Eigen::Index best_li = 0;
    cv_mse.minCoeff(&best_li);
    double reference_lambda = grid[static_cast<std::size_t>(best_li)];

    // Bootstrap resamples, each with its own counter-keyed stream.
    std::vector<Eigen::MatrixXd> indicator(static_cast<std::size_t>(opts.n_resamples));
    parallel_for(opts.n_resamples, opts.threads, [&](std::int64_t bidx) {
        Rng stream = root.stream(0xb0075ULL, static_cast<std::uint64_t>(bidx));
        Eigen::MatrixXd xb(n, g);
        Eigen::VectorXd yb(n);
        bool ok = false;
        for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
            for (int i = 0; i < n; ++i) {
                int src = static_cast<int>(stream.uniform_index(static_cast<std::uint64_t>(n)));
                xb.row(i) = expr.values.row(src);
                yb(i) = y(src);
            }
            ok = (yb.array() - yb.mean()).abs().maxCoeff() > 1e-15;
        }
        if (!ok) throw numeric_error("bootstrap_selection: resample " + std::to_string(bidx) +
                                     " has zero-variance target after 10 attempts");
        Eigen::MatrixXd ind = Eigen::MatrixXd::Zero(g, static_cast<Eigen::Index>(grid.size()));
        detail::StandardizedDesign d = detail::standardize(xb, yb);
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(d.x.cols());
        for (std::size_t li = 0; li < grid.size(); ++li) {
            beta = detail::nn_lasso_standardized(d.x, d.y, grid[li], beta);
            for (std::size_t j = 0; j < d.kept_cols.size(); ++j)
                if (beta(static_cast<Eigen::Index>(j)) != 0.0) ind(d.kept_cols[j], static_cast<Eigen::Index>(li)) = 1.0;
        }
        indicator[static_cast<std::size_t>(bidx)] = std::move(ind);
    });

    SelectionProfile prof;
    prof.gene_names = expr.gene_names;
    prof.lambda_grid = grid;
    prof.reference_lambda = reference_lambda;
    prof.n_resamples = opts.n_resamples;
    prof.seed = opts.seed;
    prof.path_frequency = Eigen::MatrixXd::Zero(g, static_cast<Eigen::Index>(grid.size()));
    for (const auto& ind : indicator) prof.path_frequency += ind;
    prof.path_frequency /= static_cast<double>(opts.n_resamples);
    prof.selection_frequency = prof.path_frequency.col(best_li);
    return prof;
}

// ---------------------------------------------------------------------------
// Regression targets
// ---------------------------------------------------------------------------

struct DominanceTarget {
    Eigen::VectorXd y;             ///< +1 (SC-dominant) / -1 (FC-dominant)
    std::vector<int> region_index; ///< alignment back to regions
};

/// +/-1 dominance regression target. Regions labeled 'none' are always
/// excluded; with significant_only = false the sign of the effect is used
/// for every region that carries a direction regardless of significance.
inline DominanceTarget dominance_target(const std::vector<DominanceResult>& dominance, bool significant_only = true) {
    DominanceTarget out;
    std::vector<double> vals;
    for (const auto& d : dominance) {
        double v = 0.0;
        if (significant_only) {
            if (d.label == DominanceLabel::SC) v = 1.0;
            else if (d.label == DominanceLabel::FC) v = -1.0;
            else continue;
        } else {
            if (d.t > 0.0) v = 1.0;
            else if (d.t < 0.0) v = -1.0;
            else continue;
        }
        vals.push_back(v);
        out.region_index.push_back(d.scope_index);
    }
    if (significant_only) {
        bool has_pos = std::find(vals.begin(), vals.end(), 1.0) != vals.end();
        bool has_neg = std::find(vals.begin(), vals.end(), -1.0) != vals.end();
        if (!has_pos || !has_neg)
            throw invariant_error("dominance_target: need at least one significant region of each sign");
    }
    if (vals.empty()) throw invariant_error("dominance_target: no labeled regions");
    out.y = Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    return out;
}

/// Elementwise -log10(p); p = 1 maps to 0, p <= 0 is rejected.
inline RegionalStatMap neglog10p_target(const Eigen::VectorXd& p_values) {
    RegionalStatMap out;
    out.kind = RegionalStatMap::Kind::neglog10p;
    out.values.resize(p_values.size());
    for (Eigen::Index i = 0; i < p_values.size(); ++i) {
        double p = p_values(i);
        if (!(p > 0.0) || p > 1.0)
            throw invariant_error("neglog10p_target: p-value at index " + std::to_string(i) +
                                  " outside (0, 1]: " + std::to_string(p));
        out.values(i) = -std::log10(p);
    }
    return out;
}

}  // namespace mlt
