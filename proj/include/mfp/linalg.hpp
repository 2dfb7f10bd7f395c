#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "mfp/errors.hpp"

namespace mfp {

// Flips v so that its largest-magnitude entry is positive, ties broken by the
// lowest index. Returns the factor (+1 or -1) that was applied. This pins an
// otherwise arbitrary eigenvector orientation, making all downstream output
// deterministic.
inline double fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
    int arg = 0;
    double best = -1.0;
    for (int i = 0; i < v.size(); ++i) {
        double a = std::abs(v[i]);
        if (a > best) {
            best = a;
            arg = i;
        }
    }
    if (v[arg] < 0.0) {
        v = -v;
        return -1.0;
    }
    return 1.0;
}

struct SymmetricEigenResult {
    Eigen::VectorXd eigenvalues;   // m values, ascending
    Eigen::MatrixXd eigenvectors;  // n x m, orthonormal columns, sign-fixed
};

// Returns the m algebraically smallest eigenpairs of a dense symmetric A.
// Contract checked on every call: residual ||A v - lambda v||_2 <= 1e-10 ||A||_F
// and pairwise orthonormality within 1e-10.
inline SymmetricEigenResult sym_eig(const Eigen::MatrixXd& A, int m) {
    const int n = static_cast<int>(A.rows());
    if (A.cols() != n) throw config_error("sym_eig: matrix not square");
    if (m < 1 || m > n) throw config_error("sym_eig: m out of range");
    double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12)
        throw config_error("sym_eig: input not symmetric (max asymmetry " +
                           std::to_string(asym) + ")");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(A);
    if (solver.info() != Eigen::Success)
        throw numeric_error("sym_eig: eigensolver failed to converge");

    SymmetricEigenResult res;
    res.eigenvalues = solver.eigenvalues().head(m);
    res.eigenvectors = solver.eigenvectors().leftCols(m);
    for (int j = 0; j < m; ++j) fix_sign(res.eigenvectors.col(j));

    const double tol = 1e-10;
    double anorm = A.norm();  // Frobenius
    Eigen::MatrixXd resid = A * res.eigenvectors -
                            res.eigenvectors * res.eigenvalues.asDiagonal();
    for (int j = 0; j < m; ++j) {
        double rj = resid.col(j).norm();
        if (rj > tol * std::max(anorm, 1e-300))
            throw numeric_error("sym_eig: residual " + std::to_string(rj) +
                                " exceeds tolerance for pair " + std::to_string(j));
    }
    Eigen::MatrixXd gram = res.eigenvectors.transpose() * res.eigenvectors;
    gram.diagonal().array() -= 1.0;
    if (gram.cwiseAbs().maxCoeff() > tol)
        throw numeric_error("sym_eig: eigenvectors not orthonormal to tolerance");
    return res;
}

// Direct dense solve by LU with partial pivoting. Rejects matrices that are
// singular to working precision and verifies the residual bound
// ||Ax-b||_inf <= 1e-10 (||A||_inf ||x||_inf + ||b||_inf).
inline Eigen::VectorXd solve_linear(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    const int n = static_cast<int>(A.rows());
    if (A.cols() != n || b.size() != n)
        throw config_error("solve_linear: dimension mismatch");

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    Eigen::VectorXd udiag = lu.matrixLU().diagonal().cwiseAbs();
    double umax = udiag.maxCoeff();
    if (umax <= 0.0 || udiag.minCoeff() <= umax * 1e-280)
        throw numeric_error("solve_linear: matrix singular to working precision");
    if (lu.rcond() < 1e-14)
        throw numeric_error("solve_linear: matrix ill-conditioned (rcond " +
                            std::to_string(lu.rcond()) + ")");

    Eigen::VectorXd x = lu.solve(b);
    double anorm = A.cwiseAbs().rowwise().sum().maxCoeff();  // inf-norm
    double rhs = 1e-10 * (anorm * x.cwiseAbs().maxCoeff() + b.cwiseAbs().maxCoeff());
    double resid = (A * x - b).cwiseAbs().maxCoeff();
    if (resid > rhs)
        throw numeric_error("solve_linear: residual " + std::to_string(resid) +
                            " exceeds tolerance");
    return x;
}

}  // namespace mfp
