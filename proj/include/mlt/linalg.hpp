#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>
#include <vector>

#include "mlt/core.hpp"

namespace mlt {

inline double matrix_norm1(const Eigen::MatrixXd& a) {
    if (a.size() == 0) return 0.0;
    return a.cwiseAbs().colwise().sum().maxCoeff();
}

/// Largest real part over the spectrum; negative means Hurwitz.
inline double spectral_abscissa(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) throw invariant_error("spectral_abscissa: matrix must be square");
    if (a.size() == 0) return 0.0;
    return a.eigenvalues().real().maxCoeff();
}

namespace detail {

inline const std::vector<double>& pade_coefficients(int m) {
    static const std::vector<double> b3 = {120., 60., 12., 1.};
    static const std::vector<double> b5 = {30240., 15120., 3360., 420., 30., 1.};
    static const std::vector<double> b7 = {17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.};
    static const std::vector<double> b9 = {17643225600., 8821612800., 2075673600., 302702400., 30270240.,
                                           2162160.,     110880.,      3960.,       90.,        1.};
    static const std::vector<double> b13 = {64764752532480000., 32382376266240000., 7771770303897600.,
                                            1187353796428800.,  129060195264000.,   10559470521600.,
                                            670442572800.,      33522128640.,       1323241920.,
                                            40840800.,          960960.,            16380.,
                                            182.,               1.};
    switch (m) {
        case 3: return b3;
        case 5: return b5;
        case 7: return b7;
        case 9: return b9;
        default: return b13;
    }
}

inline int pade_order_for(double norm1, int* scaling) {
    constexpr double theta3 = 1.495585217958292e-2;
    constexpr double theta5 = 2.539398330063230e-1;
    constexpr double theta7 = 9.504178996162932e-1;
    constexpr double theta9 = 2.097847961257068e0;
    constexpr double theta13 = 5.371920351148152e0;
    *scaling = 0;
    if (norm1 <= theta3) return 3;
    if (norm1 <= theta5) return 5;
    if (norm1 <= theta7) return 7;
    if (norm1 <= theta9) return 9;
    if (norm1 > theta13) *scaling = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
    return 13;
}

}  // namespace detail

/// Matrix exponential by scaling-and-squaring with diagonal Pade
/// approximants (orders 3/5/7/9/13 chosen from the 1-norm). Exactly
/// symmetric inputs take the eigendecomposition route instead.
inline Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a) {
    using Eigen::MatrixXd;
    if (a.rows() != a.cols()) throw invariant_error("matrix_exponential: matrix must be square");
    const Eigen::Index n = a.rows();
    if (n == 0) return MatrixXd(0, 0);
    if (!a.allFinite()) throw invariant_error("matrix_exponential: input contains non-finite entries");
    double norm1 = matrix_norm1(a);
    if (norm1 > 1e8)
        throw numeric_error("matrix_exponential: 1-norm " + std::to_string(norm1) +
                            " too large, result would overflow");

    if (a == a.transpose()) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
        return es.eigenvectors() * es.eigenvalues().array().exp().matrix().asDiagonal() *
               es.eigenvectors().transpose();
    }

    int s = 0;
    int m = detail::pade_order_for(norm1, &s);
    const auto& b = detail::pade_coefficients(m);
    MatrixXd as = a / std::pow(2.0, s);
    const MatrixXd identity = MatrixXd::Identity(n, n);

    MatrixXd u, v;
    if (m <= 9) {
        MatrixXd a2 = as * as;
        std::vector<MatrixXd> pow2 = {identity, a2};
        for (int k = 2; 2 * k <= m - 1; ++k) pow2.push_back(pow2.back() * a2);
        MatrixXd podd = MatrixXd::Zero(n, n), peven = MatrixXd::Zero(n, n);
        for (int k = 0; 2 * k + 1 <= m; ++k) podd += b[static_cast<std::size_t>(2 * k + 1)] * pow2[static_cast<std::size_t>(k)];
        for (int k = 0; 2 * k <= m; ++k) peven += b[static_cast<std::size_t>(2 * k)] * pow2[static_cast<std::size_t>(k)];
        u = as * podd;
        v = peven;
    } else {
        MatrixXd a2 = as * as, a4 = a2 * a2, a6 = a4 * a2;
        MatrixXd w1 = b[13] * a6 + b[11] * a4 + b[9] * a2;
        MatrixXd w2 = b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * identity;
        MatrixXd z1 = b[12] * a6 + b[10] * a4 + b[8] * a2;
        MatrixXd z2 = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * identity;
        u = as * (a6 * w1 + w2);
        v = a6 * z1 + z2;
    }
    Eigen::PartialPivLU<MatrixXd> lu(v - u);
    MatrixXd r = lu.solve(v + u);
    for (int k = 0; k < s; ++k) r = r * r;
    return r;
}

struct ExpmWithFrechet {
    Eigen::MatrixXd expm;     ///< exp(A)
    Eigen::MatrixXd frechet;  ///< L(A, E), the derivative of exp at A in direction E
};

/// exp(A) together with its Frechet derivative in direction E, computed by
/// differentiating the scaling-and-squaring recurrence. Agrees with the
/// augmented-matrix identity exp([[A,E],[0,A]]) at roughly a third of the
/// cost, which is what makes exact training gradients affordable.
inline ExpmWithFrechet matrix_exponential_frechet(const Eigen::MatrixXd& a, const Eigen::MatrixXd& e) {
    using Eigen::MatrixXd;
    if (a.rows() != a.cols() || e.rows() != e.cols() || a.rows() != e.rows())
        throw invariant_error("matrix_exponential_frechet: A and E must be square with equal sizes");
    const Eigen::Index n = a.rows();
    if (!a.allFinite() || !e.allFinite())
        throw invariant_error("matrix_exponential_frechet: input contains non-finite entries");
    double norm1 = matrix_norm1(a);
    if (norm1 > 1e8)
        throw numeric_error("matrix_exponential_frechet: 1-norm " + std::to_string(norm1) + " too large");

    int s = 0;
    int m = detail::pade_order_for(norm1, &s);
    const auto& b = detail::pade_coefficients(m);
    const double scale = std::pow(2.0, s);
    MatrixXd as = a / scale;
    MatrixXd es = e / scale;
    const MatrixXd identity = MatrixXd::Identity(n, n);

    MatrixXd u, v, lu_mat, lv_mat;
    if (m <= 9) {
        std::vector<MatrixXd> pow2 = {identity};
        std::vector<MatrixXd> dpow2 = {MatrixXd::Zero(n, n)};
        MatrixXd a2 = as * as;
        MatrixXd m2 = as * es + es * as;
        pow2.push_back(a2);
        dpow2.push_back(m2);
        for (int k = 2; 2 * k <= m - 1; ++k) {
            dpow2.push_back(dpow2.back() * a2 + pow2.back() * m2);
            pow2.push_back(pow2.back() * a2);
        }
        MatrixXd podd = MatrixXd::Zero(n, n), peven = MatrixXd::Zero(n, n);
        MatrixXd dodd = MatrixXd::Zero(n, n), deven = MatrixXd::Zero(n, n);
        for (int k = 0; 2 * k + 1 <= m; ++k) {
            podd += b[static_cast<std::size_t>(2 * k + 1)] * pow2[static_cast<std::size_t>(k)];
            dodd += b[static_cast<std::size_t>(2 * k + 1)] * dpow2[static_cast<std::size_t>(k)];
        }
        for (int k = 0; 2 * k <= m; ++k) {
            peven += b[static_cast<std::size_t>(2 * k)] * pow2[static_cast<std::size_t>(k)];
            deven += b[static_cast<std::size_t>(2 * k)] * dpow2[static_cast<std::size_t>(k)];
        }
        u = as * podd;
        lu_mat = as * dodd + es * podd;
        v = peven;
        lv_mat = deven;
    } else {
        MatrixXd a2 = as * as, a4 = a2 * a2, a6 = a4 * a2;
        MatrixXd m2 = as * es + es * as;
        MatrixXd m4 = a2 * m2 + m2 * a2;
        MatrixXd m6 = a4 * m2 + m4 * a2;
        MatrixXd w1 = b[13] * a6 + b[11] * a4 + b[9] * a2;
        MatrixXd w2 = b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * identity;
        MatrixXd z1 = b[12] * a6 + b[10] * a4 + b[8] * a2;
        MatrixXd z2 = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * identity;
        MatrixXd w = a6 * w1 + w2;
        MatrixXd lw1 = b[13] * m6 + b[11] * m4 + b[9] * m2;
        MatrixXd lw2 = b[7] * m6 + b[5] * m4 + b[3] * m2;
        MatrixXd lz1 = b[12] * m6 + b[10] * m4 + b[8] * m2;
        MatrixXd lw = a6 * lw1 + m6 * w1 + lw2;
        u = as * w;
        lu_mat = as * lw + es * w;
        v = a6 * z1 + z2;
        lv_mat = a6 * lz1 + m6 * z1 + b[6] * m6 + b[4] * m4 + b[2] * m2;
    }

    Eigen::PartialPivLU<MatrixXd> lu(v - u);
    MatrixXd r = lu.solve(v + u);
    MatrixXd l = lu.solve(lu_mat + lv_mat + (lu_mat - lv_mat) * r);
    for (int k = 0; k < s; ++k) {
        l = l * r + r * l;
        r = r * r;
    }
    return {std::move(r), std::move(l)};
}

/// Solves the continuous Lyapunov equation A X + X A^T + C = 0 by complex
/// Schur reduction and back-substitution over columns. Requires that no two
/// eigenvalues of A sum to zero; for Hurwitz A and symmetric PSD C the
/// solution is symmetric PSD.
inline Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c) {
    using Eigen::MatrixXcd;
    using Eigen::VectorXcd;
    if (a.rows() != a.cols() || c.rows() != c.cols() || a.rows() != c.rows())
        throw invariant_error("solve_lyapunov: A and C must be square with equal sizes");
    const Eigen::Index n = a.rows();
    if (n == 0) return Eigen::MatrixXd(0, 0);

    Eigen::ComplexSchur<Eigen::MatrixXd> schur(a, true);
    if (schur.info() != Eigen::Success) throw numeric_error("solve_lyapunov: Schur decomposition failed");
    const MatrixXcd& t = schur.matrixT();
    const MatrixXcd& q = schur.matrixU();

    MatrixXcd f = q.adjoint() * c * q;
    MatrixXcd y = MatrixXcd::Zero(n, n);

    for (Eigen::Index k = n - 1; k >= 0; --k) {
        VectorXcd rhs = -f.col(k);
        for (Eigen::Index j = k + 1; j < n; ++j) rhs -= std::conj(t(k, j)) * y.col(j);
        const std::complex<double> shift = std::conj(t(k, k));
        // (T + shift I) y_k = rhs, upper-triangular back substitution.
        for (Eigen::Index i = n - 1; i >= 0; --i) {
            std::complex<double> acc = rhs(i);
            for (Eigen::Index j = i + 1; j < n; ++j) acc -= t(i, j) * y(j, k);
            std::complex<double> diag = t(i, i) + shift;
            if (std::abs(diag) < 1e-14 * (1.0 + std::abs(t(i, i))))
                throw numeric_error("solve_lyapunov: eigenvalue pair sums to ~0, no unique solution "
                                    "(spectral abscissa " +
                                    std::to_string(t.diagonal().real().maxCoeff()) + ")");
            y(i, k) = acc / diag;
        }
    }
    return (q * y * q.adjoint()).real();
}

inline double lyapunov_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c, const Eigen::MatrixXd& x) {
    return (a * x + x * a.transpose() + c).norm();
}

/// Stabilizing solution of the continuous algebraic Riccati equation
///   A^T P + P A - P B Rinv B^T P + C = 0,  Rinv = diag(r)^{-1},
/// by Newton-Kleinman iteration. Hurwitz A is seeded with the Lyapunov
/// solution; otherwise an initial stabilizing gain is built by the Bass
/// construction (requires effective controllability of the unstable modes).
inline Eigen::MatrixXd solve_care_newton(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b_input,
                                         const Eigen::VectorXd& r_diag, const Eigen::MatrixXd& c,
                                         int max_iters = 100, double tol = 1e-12) {
    using Eigen::MatrixXd;
    const Eigen::Index n = a.rows();
    if (b_input.rows() != n || c.rows() != n || c.cols() != n)
        throw invariant_error("solve_care_newton: dimension mismatch");
    if ((r_diag.array() <= 0.0).any()) throw invariant_error("solve_care_newton: R diagonal must be positive");

    MatrixXd rinv_bt = r_diag.array().inverse().matrix().asDiagonal() * b_input.transpose();

    MatrixXd gain;
    double abscissa = spectral_abscissa(a);
    if (abscissa < 0.0) {
        gain = MatrixXd::Zero(b_input.cols(), n);
    } else {
        // Bass preconditioner: (A + mu I) Z + Z (A + mu I)^T = 2 B B^T gives
        // A - B B^T Z^{-1} Hurwitz, provided A + mu I is anti-stable; the
        // 1-norm dominates the spectral radius, so this mu clears every
        // eigenvalue.
        double mu = matrix_norm1(a) + 1.0;
        MatrixXd z = solve_lyapunov(a + mu * MatrixXd::Identity(n, n),
                                    -2.0 * b_input * b_input.transpose());
        Eigen::FullPivLU<MatrixXd> lu(z);
        if (!lu.isInvertible())
            throw numeric_error("solve_care_newton: pair not stabilizable enough to seed Newton iteration");
        gain = b_input.transpose() * lu.inverse();
    }

    MatrixXd p_prev = MatrixXd::Zero(n, n);
    for (int it = 0; it < max_iters; ++it) {
        MatrixXd a_cl = a - b_input * gain;
        MatrixXd q_eff = c + gain.transpose() * r_diag.asDiagonal() * gain;
        MatrixXd p = solve_lyapunov(a_cl.transpose(), q_eff);
        p = 0.5 * (p + p.transpose());
        gain = rinv_bt * p;
        double delta = (p - p_prev).norm() / std::max(1.0, p.norm());
        p_prev = p;
        if (delta < tol) {
            double residual =
                (a.transpose() * p + p * a - p * b_input * rinv_bt * p + c).norm();
            if (residual > 1e-8)
                throw numeric_error("solve_care_newton: converged iterate has residual " +
                                    std::to_string(residual));
            return p;
        }
    }
    double residual =
        (a.transpose() * p_prev + p_prev * a - p_prev * b_input * rinv_bt * p_prev + c).norm();
    throw numeric_error("solve_care_newton: no convergence after " + std::to_string(max_iters) +
                        " iterations, residual " + std::to_string(residual));
}

}  // namespace mlt
