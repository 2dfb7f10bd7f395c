#include "mfp/linalg.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "mfp/errors.hpp"
#include "mfp/rng.hpp"

using mfp::sym_eig;
using mfp::solve_linear;

namespace {

Eigen::MatrixXd random_symmetric(int n, std::uint64_t seed) {
    mfp::Rng rng(seed);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.uniform(-1.0, 1.0);
    return a;
}

// Cofactor-expansion determinant; intentionally independent of any
// factorization code.
double det_expansion(const Eigen::MatrixXd& a) {
    const int n = static_cast<int>(a.rows());
    if (n == 1) return a(0, 0);
    if (n == 2) return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
    double acc = 0.0;
    double sign = 1.0;
    for (int c = 0; c < n; ++c) {
        Eigen::MatrixXd minor(n - 1, n - 1);
        for (int i = 1; i < n; ++i) {
            int jj = 0;
            for (int j = 0; j < n; ++j) {
                if (j == c) continue;
                minor(i - 1, jj++) = a(i, j);
            }
        }
        acc += sign * a(0, c) * det_expansion(minor);
        sign = -sign;
    }
    return acc;
}

// Roots of det(A - t I) located by sign changes on a grid inside the
// Gershgorin interval, then polished by bisection.
std::vector<double> charpoly_roots(const Eigen::MatrixXd& a) {
    const int n = static_cast<int>(a.rows());
    double lo = 0.0, hi = 0.0;
    for (int i = 0; i < n; ++i) {
        double radius = a.row(i).cwiseAbs().sum() - std::abs(a(i, i));
        lo = std::min(lo, a(i, i) - radius);
        hi = std::max(hi, a(i, i) + radius);
    }
    lo -= 1e-6;
    hi += 1e-6;
    auto p = [&](double t) {
        return det_expansion(a - t * Eigen::MatrixXd::Identity(n, n));
    };
    const int grid = 4000;
    std::vector<double> roots;
    double prev_t = lo, prev_p = p(lo);
    for (int g = 1; g <= grid; ++g) {
        double t = lo + (hi - lo) * g / grid;
        double pt = p(t);
        if ((prev_p < 0.0) != (pt < 0.0)) {
            double a0 = prev_t, b0 = t, pa = prev_p;
            for (int it = 0; it < 200; ++it) {
                double m = 0.5 * (a0 + b0);
                double pm = p(m);
                if ((pa < 0.0) != (pm < 0.0))
                    b0 = m;
                else {
                    a0 = m;
                    pa = pm;
                }
            }
            roots.push_back(0.5 * (a0 + b0));
        }
        prev_t = t;
        prev_p = pt;
    }
    return roots;
}

}  // namespace

TEST(SymEig, IdentityFiveByFive) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(5, 5);
    auto res = sym_eig(a, 5);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(res.eigenvalues[i], 1.0, 1e-14);
    Eigen::MatrixXd gram = res.eigenvectors.transpose() * res.eigenvectors;
    EXPECT_LT((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SymEig, TwoByTwoAnalytic) {
    Eigen::MatrixXd a(2, 2);
    a << 2, 1, 1, 2;
    auto res = sym_eig(a, 2);
    EXPECT_NEAR(res.eigenvalues[0], 1.0, 1e-12);
    EXPECT_NEAR(res.eigenvalues[1], 3.0, 1e-12);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    // magnitudes tie, so the convention puts the positive entry first
    EXPECT_NEAR(res.eigenvectors(0, 0), inv_sqrt2, 1e-12);
    EXPECT_NEAR(res.eigenvectors(1, 0), -inv_sqrt2, 1e-12);
    EXPECT_NEAR(res.eigenvectors(0, 1), inv_sqrt2, 1e-12);
    EXPECT_NEAR(res.eigenvectors(1, 1), inv_sqrt2, 1e-12);
}

TEST(SymEig, MatchesCharacteristicPolynomialRoots) {
    Eigen::MatrixXd a = random_symmetric(8, 321);
    std::vector<double> roots = charpoly_roots(a);
    ASSERT_EQ(roots.size(), 8u);
    std::sort(roots.begin(), roots.end());
    auto res = sym_eig(a, 8);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(res.eigenvalues[i], roots[i], 1e-8);
}

TEST(SymEig, SubsetIsSmallest) {
    Eigen::MatrixXd a = random_symmetric(12, 99);
    auto all = sym_eig(a, 12);
    auto part = sym_eig(a, 3);
    for (int i = 0; i < 3; ++i)
        EXPECT_NEAR(part.eigenvalues[i], all.eigenvalues[i], 1e-12);
}

TEST(SymEig, ResidualAndOrthonormalityContracts) {
    Eigen::MatrixXd a = random_symmetric(50, 7);
    auto res = sym_eig(a, 10);
    double anorm = a.norm();
    for (int k = 0; k < 10; ++k) {
        double resid = (a * res.eigenvectors.col(k) -
                        res.eigenvalues[k] * res.eigenvectors.col(k))
                           .norm();
        EXPECT_LE(resid, 1e-10 * anorm);
    }
    Eigen::MatrixXd gram = res.eigenvectors.transpose() * res.eigenvectors;
    EXPECT_LE((gram - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SymEig, SignConvention) {
    Eigen::MatrixXd a = random_symmetric(20, 5);
    auto res = sym_eig(a, 20);
    for (int k = 0; k < 20; ++k) {
        Eigen::VectorXd v = res.eigenvectors.col(k);
        int arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        EXPECT_GT(v[arg], 0.0);
        for (int i = 0; i < arg; ++i) EXPECT_LT(std::abs(v[i]), std::abs(v[arg]));
    }
}

TEST(SymEig, RejectsBadInput) {
    Eigen::MatrixXd rect(2, 3);
    rect.setZero();
    EXPECT_THROW(sym_eig(rect, 1), mfp::config_error);

    Eigen::MatrixXd asym(2, 2);
    asym << 1, 2, 3, 4;
    EXPECT_THROW(sym_eig(asym, 1), mfp::config_error);

    Eigen::MatrixXd ok = Eigen::MatrixXd::Identity(3, 3);
    EXPECT_THROW(sym_eig(ok, 0), mfp::config_error);
    EXPECT_THROW(sym_eig(ok, 4), mfp::config_error);
}

TEST(SolveLinear, IdentityReturnsRhs) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(4, 4);
    Eigen::VectorXd b(4);
    b << 3, -1, 0.5, 7;
    Eigen::VectorXd x = solve_linear(a, b);
    EXPECT_LT((x - b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SolveLinear, HandSolvedTwoByTwo) {
    Eigen::MatrixXd a(2, 2);
    a << 2, -1, -1, 2;
    Eigen::VectorXd b(2);
    b << 1, 1;
    Eigen::VectorXd x = solve_linear(a, b);
    EXPECT_NEAR(x[0], 1.0, 1e-12);
    EXPECT_NEAR(x[1], 1.0, 1e-12);
}

// Backward-Euler system for the symmetric two-state rate matrix
// Q = [[-1,1],[1,-1]] at dt=10: (I-10Q) u = (2,0) has the closed-form
// solution (22/21, 20/21).
TEST(SolveLinear, TwoStateImplicitUpdate) {
    Eigen::MatrixXd q(2, 2);
    q << -1, 1, 1, -1;
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(2, 2) - 10.0 * q;
    Eigen::VectorXd b(2);
    b << 2, 0;
    Eigen::VectorXd x = solve_linear(a, b);
    EXPECT_NEAR(x[0], 22.0 / 21.0, 1e-12);
    EXPECT_NEAR(x[1], 20.0 / 21.0, 1e-12);
}

TEST(SolveLinear, ResidualContract) {
    mfp::Rng rng(13);
    Eigen::MatrixXd a(20, 20);
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
    a.diagonal().array() += 25.0;  // diagonally dominant
    Eigen::VectorXd b(20);
    for (int i = 0; i < 20; ++i) b[i] = rng.uniform(-1.0, 1.0);
    Eigen::VectorXd x = solve_linear(a, b);
    double lhs = (a * x - b).cwiseAbs().maxCoeff();
    double rhs = 1e-10 * (a.cwiseAbs().rowwise().sum().maxCoeff() * x.cwiseAbs().maxCoeff() +
                          b.cwiseAbs().maxCoeff());
    EXPECT_LE(lhs, rhs);
}

TEST(SolveLinear, RejectsSingular) {
    Eigen::MatrixXd a(2, 2);
    a << 1, 2, 2, 4;
    Eigen::VectorXd b(2);
    b << 1, 1;
    EXPECT_THROW(solve_linear(a, b), mfp::numeric_error);
}

TEST(FixSign, FlipsAndReportsFactor) {
    Eigen::VectorXd v(3);
    v << 0.2, -0.9, 0.1;
    double f = mfp::fix_sign(v);
    EXPECT_EQ(f, -1.0);
    EXPECT_NEAR(v[1], 0.9, 1e-15);

    Eigen::VectorXd tie(2);
    tie << -0.5, 0.5;  // magnitudes tie; index 0 wins
    f = mfp::fix_sign(tie);
    EXPECT_EQ(f, -1.0);
    EXPECT_NEAR(tie[0], 0.5, 1e-15);
    EXPECT_NEAR(tie[1], -0.5, 1e-15);
}
