#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "mlt/atlas.hpp"
#include "mlt/core.hpp"

namespace mlt {

/// Undirected weighted graph over N regions: symmetric nonnegative weight
/// matrix with zero diagonal. Immutable after construction.
class WeightedGraph {
public:
    WeightedGraph() = default;

    explicit WeightedGraph(Eigen::MatrixXd weights) : w_(std::move(weights)) { validate(w_); }

    static void validate(const Eigen::MatrixXd& w) {
        if (w.rows() != w.cols()) throw invariant_error("weight matrix must be square");
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            if (w(i, i) != 0.0)
                throw invariant_error("weight matrix must have zero diagonal, w(" + std::to_string(i) + "," +
                                      std::to_string(i) + ") = " + std::to_string(w(i, i)));
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                double v = w(i, j);
                if (!std::isfinite(v)) throw invariant_error("weight matrix contains a non-finite entry");
                if (v < 0.0)
                    throw invariant_error("weight matrix must be nonnegative, w(" + std::to_string(i) + "," +
                                          std::to_string(j) + ") = " + std::to_string(v));
                if (v != w(j, i))
                    throw invariant_error("weight matrix must be exactly symmetric, mismatch at (" +
                                          std::to_string(i) + "," + std::to_string(j) + ")");
            }
        }
    }

    int n() const { return static_cast<int>(w_.rows()); }
    const Eigen::MatrixXd& weights() const { return w_; }
    double weight(int i, int j) const { return w_(i, j); }

private:
    Eigen::MatrixXd w_;
};

/// Clips negative entries to zero (functional connectomes may carry negative
/// correlations) and zeroes the diagonal. Returns the number of clipped
/// entries and routes a warning through the global handler.
inline WeightedGraph sanitize_weights(Eigen::MatrixXd w, int* clipped_count = nullptr) {
    int clipped = 0;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        w(i, i) = 0.0;
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            if (w(i, j) < 0.0) {
                w(i, j) = 0.0;
                ++clipped;
            }
        }
    }
    if (clipped > 0) warn("sanitize_weights: clipped " + std::to_string(clipped) + " negative entries to 0");
    if (clipped_count) *clipped_count = clipped;
    return WeightedGraph(std::move(w));
}

enum class LaplacianKind { combinatorial, sym_normalized };

/// Optional edge-weight preprocessing applied before Laplacian assembly.
enum class GraphPreprocessing { raw, binarize, log1p, row_normalize };

inline Eigen::MatrixXd preprocess_weights(const Eigen::MatrixXd& w, GraphPreprocessing prep) {
    switch (prep) {
        case GraphPreprocessing::raw:
            return w;
        case GraphPreprocessing::binarize:
            return (w.array() > 0.0).cast<double>().matrix();
        case GraphPreprocessing::log1p:
            return w.array().log1p().matrix();
        case GraphPreprocessing::row_normalize: {
            // Symmetric normalization by sqrt of row sums keeps the matrix
            // symmetric while bounding total conductance per node.
            Eigen::VectorXd d = w.rowwise().sum();
            Eigen::VectorXd s = d.array().max(1e-300).sqrt().inverse().matrix();
            Eigen::MatrixXd out = s.asDiagonal() * w * s.asDiagonal();
            for (Eigen::Index i = 0; i < out.rows(); ++i)
                if (d(i) == 0.0) out.row(i).setZero(), out.col(i).setZero();
            return out;
        }
    }
    throw invariant_error("unknown preprocessing kind");
}

/// Graph Laplacian of a weighted graph.
///
/// combinatorial: D - W, with D = diag(row sums). Annihilates the constant
/// vector, so diffusion under it conserves total mass.
/// sym_normalized: D^{-1/2} (D - W) D^{-1/2}, with 0/0 treated as 0 so
/// isolated nodes contribute empty rows.
inline Eigen::MatrixXd build_laplacian(const WeightedGraph& g, LaplacianKind kind = LaplacianKind::combinatorial) {
    const Eigen::MatrixXd& w = g.weights();
    Eigen::VectorXd d = w.rowwise().sum();
    Eigen::MatrixXd lap = -w;
    lap.diagonal() = d;
    if (kind == LaplacianKind::sym_normalized) {
        Eigen::VectorXd s(d.size());
        for (Eigen::Index i = 0; i < d.size(); ++i) s(i) = d(i) > 0.0 ? 1.0 / std::sqrt(d(i)) : 0.0;
        lap = s.asDiagonal() * lap * s.asDiagonal();
    }
    // Mirror the upper triangle so the result is exactly symmetric in
    // floating point, not just up to rounding of the two products.
    for (Eigen::Index i = 0; i < lap.rows(); ++i)
        for (Eigen::Index j = i + 1; j < lap.cols(); ++j) lap(j, i) = lap(i, j);
    return lap;
}

/// Indices j != i with w_ij strictly above threshold, ascending.
inline std::vector<int> neighborhood(const WeightedGraph& g, int i, double threshold = 0.0) {
    if (i < 0 || i >= g.n()) throw invariant_error("neighborhood: region index " + std::to_string(i) + " out of range");
    if (threshold < 0.0) throw invariant_error("neighborhood: threshold must be nonnegative");
    std::vector<int> out;
    for (int j = 0; j < g.n(); ++j)
        if (j != i && g.weight(i, j) > threshold) out.push_back(j);
    return out;
}

/// Keeps the top keep_density fraction of off-diagonal weights (ties broken
/// by lexicographic (i,j) order of the upper-triangle pair) and zeroes the
/// rest. Symmetry is preserved; idempotent at fixed density.
inline WeightedGraph backbone_threshold(const WeightedGraph& g, double keep_density) {
    if (g.n() == 0) throw invariant_error("backbone_threshold: empty graph");
    if (!(keep_density > 0.0) || keep_density > 1.0)
        throw invariant_error("backbone_threshold: keep_density must lie in (0, 1]");
    const Eigen::MatrixXd& w = g.weights();
    std::vector<std::tuple<double, int, int>> edges;
    edges.reserve(static_cast<std::size_t>(g.n()) * (g.n() - 1) / 2);
    for (int i = 0; i < g.n(); ++i)
        for (int j = i + 1; j < g.n(); ++j) edges.emplace_back(w(i, j), i, j);
    auto keep_count = static_cast<std::size_t>(
        std::llround(keep_density * static_cast<double>(edges.size())));
    keep_count = std::min(keep_count, edges.size());
    std::sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
        return std::get<2>(a) < std::get<2>(b);
    });
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(g.n(), g.n());
    for (std::size_t k = 0; k < keep_count; ++k) {
        auto [wt, i, j] = edges[k];
        out(i, j) = wt;
        out(j, i) = wt;
    }
    return WeightedGraph(std::move(out));
}

/// Paired structural/functional connectome over a shared parcellation.
struct LayeredConnectome {
    ParcellationAtlas atlas;
    WeightedGraph sc;
    WeightedGraph fc;

    LayeredConnectome() = default;
    LayeredConnectome(ParcellationAtlas a, WeightedGraph s, WeightedGraph f)
        : atlas(std::move(a)), sc(std::move(s)), fc(std::move(f)) {
        if (sc.n() != fc.n() || sc.n() != atlas.n())
            throw invariant_error("layered connectome: SC (" + std::to_string(sc.n()) + "), FC (" +
                                  std::to_string(fc.n()) + ") and atlas (" + std::to_string(atlas.n()) +
                                  ") region counts must agree");
    }

    int n() const { return sc.n(); }
};

}  // namespace mlt
