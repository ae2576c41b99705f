#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "mlt/core.hpp"
#include "mlt/linalg.hpp"
#include "mlt/transport.hpp"

namespace mlt {

/// Diagonal state-cost weights: Q acts on the SC-layer potential, R on the
/// FC-layer potential. Strict positivity keeps R invertible for the gain.
struct CostWeights {
    Eigen::VectorXd q;
    Eigen::VectorXd r;

    CostWeights() = default;
    CostWeights(Eigen::VectorXd q_in, Eigen::VectorXd r_in) : q(std::move(q_in)), r(std::move(r_in)) {
        if (q.size() != r.size()) throw invariant_error("cost weights q and r must have equal length");
        if ((q.array() <= 0.0).any() || (r.array() <= 0.0).any())
            throw invariant_error("cost weights must be strictly positive");
    }

    static CostWeights uniform(int n, double q_val = 1.0, double r_val = 1.0) {
        return CostWeights(Eigen::VectorXd::Constant(n, q_val), Eigen::VectorXd::Constant(n, r_val));
    }

    /// blkdiag(diag(q), diag(r)) as a vector, the constant term of the value equation.
    Eigen::VectorXd stacked_qr() const {
        Eigen::VectorXd c(q.size() + r.size());
        c << q, r;
        return c;
    }

    /// diag(r) repeated on both blocks, the control-weight matrix of the
    /// stacked formulation.
    Eigen::VectorXd stacked_rr() const {
        Eigen::VectorXd c(2 * r.size());
        c << r, r;
        return c;
    }
};

/// Symmetric 2N x 2N value matrix with blocks P_ss, P_sf, P_ff.
struct ValueMatrix {
    Eigen::MatrixXd p;

    ValueMatrix() = default;
    explicit ValueMatrix(Eigen::MatrixXd p_in) : p(std::move(p_in)) {
        if (p.rows() != p.cols()) throw invariant_error("value matrix must be square");
        if (!p.allFinite()) throw invariant_error("value matrix contains non-finite entries");
        if ((p - p.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, p.cwiseAbs().maxCoeff()))
            throw invariant_error("value matrix must be symmetric within 1e-10");
    }
};

struct ValueSolveMode {
    enum class Kind { linear_as_printed, quadratic_lqr };
    Kind kind = Kind::linear_as_printed;
    Eigen::MatrixXd m;  ///< actuation map for the quadratic mode

    static ValueSolveMode linear_as_printed() { return {Kind::linear_as_printed, {}}; }
    static ValueSolveMode quadratic_lqr(Eigen::MatrixXd m_in) { return {Kind::quadratic_lqr, std::move(m_in)}; }
};

/// Solves for the value matrix P.
///
/// linear_as_printed: P A + A^T P + blkdiag(Q, R) = 0, a Lyapunov equation
/// linear in P; requires Hurwitz A.
/// quadratic_lqr: P A + A^T P - P M Rt^{-1} M^T P + blkdiag(Q, R) = 0 with
/// Rt = blkdiag(diag(r), diag(r)), solved by Newton-Kleinman; requires
/// (A, M) stabilizable. With M = 0 this reduces exactly to the linear mode.
inline ValueMatrix solve_value_matrix(const Eigen::MatrixXd& a, const CostWeights& weights, const ValueSolveMode& mode) {
    const Eigen::Index n2 = a.rows();
    if (a.cols() != n2) throw invariant_error("solve_value_matrix: operator must be square");
    if (2 * weights.q.size() != n2)
        throw invariant_error("solve_value_matrix: cost weights must have length N = dim/2");
    Eigen::MatrixXd c = weights.stacked_qr().asDiagonal();

    Eigen::MatrixXd p;
    if (mode.kind == ValueSolveMode::Kind::linear_as_printed ||
        (mode.kind == ValueSolveMode::Kind::quadratic_lqr && mode.m.size() > 0 && mode.m.isZero(0.0))) {
        double abscissa = spectral_abscissa(a);
        if (abscissa >= 0.0)
            throw numeric_error("solve_value_matrix: operator is not Hurwitz (spectral abscissa " +
                                std::to_string(abscissa) + "), the linear value equation has no PSD solution");
        // P A + A^T P + C = 0  <=>  (A^T) P + P (A^T)^T + C = 0.
        p = solve_lyapunov(a.transpose(), c);
    } else {
        if (mode.m.rows() != n2 || mode.m.cols() != n2)
            throw invariant_error("solve_value_matrix: quadratic mode needs a 2N x 2N actuation map");
        p = solve_care_newton(a, mode.m, weights.stacked_rr(), c);
    }
    p = 0.5 * (p + p.transpose());

    double residual;
    if (mode.kind == ValueSolveMode::Kind::linear_as_printed || (mode.m.size() > 0 && mode.m.isZero(0.0))) {
        residual = (p * a + a.transpose() * p + c).norm();
    } else {
        Eigen::MatrixXd rinv = weights.stacked_rr().array().inverse().matrix().asDiagonal();
        residual = (p * a + a.transpose() * p - p * mode.m * rinv * mode.m.transpose() * p + c).norm();
    }
    if (!(residual <= 1e-8 * std::max(1.0, c.norm())))
        throw numeric_error("solve_value_matrix: residual " + std::to_string(residual) + " exceeds tolerance");
    return ValueMatrix(std::move(p));
}

inline ValueMatrix solve_value_matrix(const BlockOperator& a, const CostWeights& weights, const ValueSolveMode& mode) {
    return solve_value_matrix(a.a, weights, mode);
}

/// Feedback gain K = Rt^{-1} M^T P with Rt = blkdiag(diag(r), diag(r)).
///
/// Two departures from the formula as printed in the source material, both
/// forced by consistency: M^T rather than M so the product type-checks for a
/// stacked actuation map, and the overall sign chosen so that the closed
/// loop A - M K is the stabilizing one for the LQR solution (the control is
/// applied as -K u).
inline Eigen::MatrixXd feedback_gain(const ValueMatrix& p, const Eigen::MatrixXd& m, const CostWeights& weights) {
    const Eigen::Index n2 = p.p.rows();
    if (m.rows() != n2 || m.cols() != n2) throw invariant_error("feedback_gain: M must be 2N x 2N");
    if (2 * weights.r.size() != n2) throw invariant_error("feedback_gain: cost weights must have length N");
    Eigen::VectorXd rinv = weights.stacked_rr().array().inverse();
    return rinv.asDiagonal() * m.transpose() * p.p;
}

/// Closed-loop operator A_cl = A - M K.
inline BlockOperator closed_loop_operator(const BlockOperator& a, const Eigen::MatrixXd& m, const Eigen::MatrixXd& k) {
    const Eigen::Index n2 = a.a.rows();
    if (m.rows() != n2 || m.cols() != n2 || k.rows() != n2 || k.cols() != n2)
        throw invariant_error("closed_loop_operator: dimension mismatch");
    return BlockOperator(a.a - m * k, a.n_regions);
}

/// Quadratic running cost 1/2 u_s^T Q u_s + 1/2 u_f^T R u_f.
inline double cost_functional(const LatentState& state, const CostWeights& weights) {
    if (state.u_s.size() != weights.q.size() || state.u_f.size() != weights.r.size())
        throw invariant_error("cost_functional: dimension mismatch");
    return 0.5 * state.u_s.dot(weights.q.asDiagonal() * state.u_s) +
           0.5 * state.u_f.dot(weights.r.asDiagonal() * state.u_f);
}

}  // namespace mlt
