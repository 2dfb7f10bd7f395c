#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mfp/cloud.hpp"
#include "mfp/errors.hpp"
#include "mfp/linalg.hpp"

namespace mfp {

// Gaussian kernel and normalized affinity matrices of a point cloud.
struct KernelMatrices {
    Eigen::MatrixXd K;  // K_ij = exp(-|x_i-x_j|^2 / (4 eps^2))
    Eigen::VectorXd q;  // degrees q_i = sum_j K_ij
    Eigen::MatrixXd W;  // W_ij = K_ij / (q_i^alpha q_j^alpha)
    Eigen::VectorXd D;  // D_i = sum_j W_ij
    double eps = 0.0;
    double alpha = 1.0;
};

// Builds the kernel stack. alpha = 1 removes the sampling-density bias so the
// operator below approximates the Laplace-Beltrami operator. cutoff, when
// positive, zeroes kernel entries with |x_i-x_j| > cutoff*eps (off by default;
// truncation makes K entries outside the band exactly 0, which breaks the
// strict positivity of K but can speed up very large clouds).
inline KernelMatrices build_kernel(const PointCloud& cloud, double eps,
                                   double alpha = 1.0, double cutoff = 0.0) {
    if (eps <= 0.0) throw config_error("build_kernel: eps must be positive");
    if (alpha < 0.0 || alpha > 1.0) throw config_error("build_kernel: alpha outside [0,1]");
    if (!cloud.points.allFinite())
        throw numeric_error("build_kernel: non-finite coordinates");
    const int n = cloud.n();

    KernelMatrices km;
    km.eps = eps;
    km.alpha = alpha;
    km.K.resize(n, n);
    const double inv = 1.0 / (4.0 * eps * eps);
    const double cut2 = cutoff > 0.0 ? cutoff * cutoff * eps * eps : -1.0;
    for (int i = 0; i < n; ++i) {
        km.K(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            double d2 = cloud.displacement(i, j).squaredNorm();
            double v = (cut2 > 0.0 && d2 > cut2) ? 0.0 : std::exp(-d2 * inv);
            km.K(i, j) = v;
            km.K(j, i) = v;
        }
    }
    km.q = km.K.rowwise().sum();
    if (alpha == 0.0) {
        km.W = km.K;
    } else {
        Eigen::VectorXd qa = km.q.array().pow(alpha).matrix();
        km.W = (km.K.array().colwise() / qa.array()).matrix();
        km.W = (km.W.array().rowwise() / qa.transpose().array()).matrix();
    }
    km.D = km.W.rowwise().sum();
    if ((km.D.array() <= 0.0).any())
        throw numeric_error("build_kernel: zero row sum in normalized affinity");
    return km;
}

// Symmetric conjugate of the row-stochastic diffusion operator, plus the data
// needed to map its eigenvectors back.
struct DiffusionOperator {
    Eigen::MatrixXd Ltilde;       // D^{-1/2} W D^{-1/2}
    Eigen::VectorXd d_inv_sqrt;   // D^{-1/2} diagonal
    double eps = 0.0;
};

inline DiffusionOperator diffusion_operator(const KernelMatrices& km) {
    const int n = static_cast<int>(km.W.rows());
    if ((km.D.array() <= 0.0).any())
        throw numeric_error("diffusion_operator: zero degree entry");
    DiffusionOperator op;
    op.eps = km.eps;
    op.d_inv_sqrt = km.D.array().rsqrt().matrix();
    op.Ltilde = op.d_inv_sqrt.asDiagonal() * km.W * op.d_inv_sqrt.asDiagonal();
    op.Ltilde = 0.5 * (op.Ltilde + op.Ltilde.transpose()).eval();

    // L = D^{-1} W must be row-stochastic.
    Eigen::VectorXd rowsum = (km.W.array().colwise() / km.D.array()).rowwise().sum().matrix();
    for (int i = 0; i < n; ++i)
        if (std::abs(rowsum[i] - 1.0) > 1e-12)
            throw numeric_error("diffusion_operator: row sum deviates from 1 at row " +
                                std::to_string(i));
    return op;
}

// Applies (I - L)/eps^2 with L = D^{-1} W to a per-point function.
inline Eigen::VectorXd apply_diffusion_generator(const KernelMatrices& km,
                                                 const Eigen::VectorXd& f) {
    if (f.size() != km.W.rows())
        throw config_error("apply_diffusion_generator: length mismatch");
    Eigen::VectorXd Lf = (km.W * f).array() / km.D.array();
    return (f - Lf) / (km.eps * km.eps);
}

// Spectral embedding: eigenpairs of (I - L)/eps^2 with the inverse-density
// renormalization, and the resulting reaction coordinates.
struct SpectralEmbedding {
    Eigen::VectorXd eigenvalues;   // ascending, [0] is the trivial pair
    Eigen::MatrixXd vectors;       // n x m renormalized vectors V_j (j = 1..m)
    Eigen::VectorXd norm_factors;  // m factors ||v_j|| in the weighted norm
    Eigen::VectorXd sign_flags;    // m entries +-1, orientation applied to v_j
    Eigen::MatrixXd coords;        // n x ell reaction coordinates
    Eigen::VectorXi ball_counts;   // N_k, ambient eps-ball occupancy per point
    double eps = 0.0;
    double alpha = 1.0;
    int ell = 0;
    int intrinsic_dim = 0;

    int num_vectors() const { return static_cast<int>(vectors.cols()); }
};

// Surface measure of the unit (d-1)-sphere: 2 pi^{d/2} / Gamma(d/2).
inline double unit_sphere_measure(int d) {
    return 2.0 * std::pow(M_PI, 0.5 * d) / std::tgamma(0.5 * d);
}

// Median distance to the 8th nearest neighbor; the default kernel bandwidth
// when none is supplied.
inline double default_bandwidth(const PointCloud& cloud) {
    const int n = cloud.n();
    const int kth = std::min(8, n - 1);
    std::vector<double> med(n);
    std::vector<double> dist(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) dist[j] = cloud.distance(i, j);
        std::nth_element(dist.begin(), dist.begin() + kth, dist.end());
        med[i] = dist[kth];  // self sits at rank 0
    }
    std::nth_element(med.begin(), med.begin() + n / 2, med.end());
    return med[n / 2];
}

// Computes the ell+1 smallest eigenpairs of (I-L)/eps^2 through the symmetric
// conjugate, drops the trivial pair, renormalizes by the estimated inverse
// density, and assembles reaction coordinates from the first ell nontrivial
// eigenvectors. extra > 0 keeps that many additional eigenpairs beyond ell
// (used when densities are built from higher eigenfunctions than the
// embedding dimension).
inline SpectralEmbedding spectral_embed(const PointCloud& cloud, double eps, int ell,
                                        double alpha = 1.0, int extra = 0) {
    cloud.validate();
    const int n = cloud.n();
    if (ell < 1 || ell > n - 1) throw config_error("spectral_embed: ell out of range");
    if (extra < 0 || ell + extra > n - 1)
        throw config_error("spectral_embed: extra eigenpair count out of range");
    const int m = ell + extra;

    KernelMatrices km = build_kernel(cloud, eps, alpha);
    DiffusionOperator op = diffusion_operator(km);

    const double eps2 = eps * eps;
    Eigen::MatrixXd gen = (Eigen::MatrixXd::Identity(n, n) - op.Ltilde) / eps2;
    gen = 0.5 * (gen + gen.transpose()).eval();
    SymmetricEigenResult eig = sym_eig(gen, m + 1);

    if (eig.eigenvalues[0] < -1e-8)
        throw numeric_error("spectral_embed: trivial eigenvalue below tolerance: " +
                            std::to_string(eig.eigenvalues[0]));

    SpectralEmbedding emb;
    emb.eps = eps;
    emb.alpha = alpha;
    emb.ell = ell;
    emb.intrinsic_dim = cloud.intrinsic_dim;
    emb.eigenvalues = eig.eigenvalues;

    // Occupancy of the ambient eps-ball around each point, center included.
    emb.ball_counts.resize(n);
    for (int k = 0; k < n; ++k) {
        int cnt = 0;
        for (int i = 0; i < n; ++i)
            if (cloud.distance(k, i) <= eps) ++cnt;
        emb.ball_counts[k] = cnt;
    }

    const int d = cloud.intrinsic_dim;
    const double shell = unit_sphere_measure(d) * std::pow(eps, d) / d;

    emb.vectors.resize(n, m);
    emb.norm_factors.resize(m);
    emb.sign_flags.resize(m);
    emb.coords.resize(n, ell);
    for (int j = 1; j <= m; ++j) {
        // back to an eigenvector of L, unit l2 norm, deterministic orientation
        Eigen::VectorXd v = op.d_inv_sqrt.asDiagonal() * eig.eigenvectors.col(j);
        v /= v.norm();
        emb.sign_flags[j - 1] = fix_sign(v);

        double acc = 0.0;
        for (int k = 0; k < n; ++k) acc += v[k] * v[k] / emb.ball_counts[k];
        double nf = std::sqrt(shell * acc);
        emb.norm_factors[j - 1] = nf;
        emb.vectors.col(j - 1) = v / nf;
        if (j <= ell) emb.coords.col(j - 1) = v;
    }
    return emb;
}

}  // namespace mfp
