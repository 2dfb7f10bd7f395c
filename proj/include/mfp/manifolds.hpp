#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>

#include "mfp/cloud.hpp"
#include "mfp/diffusion_map.hpp"
#include "mfp/errors.hpp"
#include "mfp/rng.hpp"

namespace mfp {

enum class ManifoldKind { dumbbell, klein_bottle, sphere, flat_torus };

inline ManifoldKind parse_manifold_kind(const std::string& s) {
    if (s == "dumbbell") return ManifoldKind::dumbbell;
    if (s == "klein_bottle") return ManifoldKind::klein_bottle;
    if (s == "sphere") return ManifoldKind::sphere;
    if (s == "flat_torus") return ManifoldKind::flat_torus;
    throw config_error("unknown manifold kind: " + s);
}

inline std::string manifold_kind_name(ManifoldKind k) {
    switch (k) {
        case ManifoldKind::dumbbell: return "dumbbell";
        case ManifoldKind::klein_bottle: return "klein_bottle";
        case ManifoldKind::sphere: return "sphere";
        case ManifoldKind::flat_torus: return "flat_torus";
    }
    return "?";
}

enum class Sampler { uniform_param, stratified_param };

inline Sampler parse_sampler(const std::string& s) {
    if (s == "uniform_param" || s == "uniform") return Sampler::uniform_param;
    if (s == "stratified_param" || s == "stratified") return Sampler::stratified_param;
    throw config_error("unknown sampler: " + s);
}

inline std::string sampler_name(Sampler s) {
    return s == Sampler::uniform_param ? "uniform_param" : "stratified_param";
}

namespace detail {

// Dumbbell surface point for parameters (theta, phi).
inline Eigen::Vector3d dumbbell_point(double theta, double phi) {
    double c2 = std::cos(2.0 * phi);
    double k = 0.95;
    double rad = std::sqrt(std::sqrt(1.0 + k * k * k * k * (c2 * c2 - 1.0)) + k * k * c2);
    return {rad * std::sin(phi) * std::cos(theta),
            rad * std::sin(phi) * std::sin(theta),
            rad * std::cos(phi)};
}

// Klein bottle in R^4, tube radius 0.3, for parameters (theta, phi).
inline Eigen::Vector4d klein_point(double theta, double phi) {
    double a = 0.3;
    return {(1.0 + a * std::cos(theta)) * std::cos(phi),
            (1.0 + a * std::cos(theta)) * std::sin(phi),
            a * std::sin(theta) * std::cos(0.5 * phi),
            a * std::sin(theta) * std::sin(0.5 * phi)};
}

inline Eigen::Vector3d sphere_point(double theta, double phi) {
    return {std::sin(phi) * std::cos(theta), std::sin(phi) * std::sin(theta),
            std::cos(phi)};
}

// Fills out n parameter pairs over [0,w1) x [0,w2), either i.i.d. uniform or
// a jittered grid covering the box.
inline void draw_params(Rng& rng, Sampler sampler, int n, double w1, double w2,
                        Eigen::ArrayXd& t1, Eigen::ArrayXd& t2) {
    t1.resize(n);
    t2.resize(n);
    if (sampler == Sampler::uniform_param) {
        for (int i = 0; i < n; ++i) {
            t1[i] = w1 * rng.uniform();
            t2[i] = w2 * rng.uniform();
        }
        return;
    }
    int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    int idx = 0;
    for (int a = 0; a < g && idx < n; ++a)
        for (int b = 0; b < g && idx < n; ++b, ++idx) {
            t1[idx] = w1 * (a + rng.uniform()) / g;
            t2[idx] = w2 * (b + rng.uniform()) / g;
        }
}

}  // namespace detail

// Draws n points on one of the benchmark manifolds, deterministically for a
// given seed. Both samplers act on the parameter domain, so surface density
// follows the parametrization's area distortion rather than being uniform.
inline PointCloud sample_manifold(ManifoldKind kind, int n, std::uint64_t seed,
                                  Sampler sampler = Sampler::uniform_param) {
    if (n < 10) throw config_error("sample_manifold: n must be at least 10");
    Rng rng(seed);
    PointCloud cloud;
    cloud.intrinsic_dim = 2;
    cloud.label = manifold_kind_name(kind);
    Eigen::ArrayXd t1, t2;
    switch (kind) {
        case ManifoldKind::dumbbell: {
            detail::draw_params(rng, sampler, n, 2.0 * M_PI, M_PI, t1, t2);
            cloud.points.resize(n, 3);
            for (int i = 0; i < n; ++i)
                cloud.points.row(i) = detail::dumbbell_point(t1[i], t2[i]).transpose();
            break;
        }
        case ManifoldKind::klein_bottle: {
            detail::draw_params(rng, sampler, n, 2.0 * M_PI, 2.0 * M_PI, t1, t2);
            cloud.points.resize(n, 4);
            for (int i = 0; i < n; ++i)
                cloud.points.row(i) = detail::klein_point(t1[i], t2[i]).transpose();
            break;
        }
        case ManifoldKind::sphere: {
            detail::draw_params(rng, sampler, n, 2.0 * M_PI, M_PI, t1, t2);
            cloud.points.resize(n, 3);
            for (int i = 0; i < n; ++i)
                cloud.points.row(i) = detail::sphere_point(t1[i], t2[i]).transpose();
            break;
        }
        case ManifoldKind::flat_torus: {
            detail::draw_params(rng, sampler, n, 1.0, 1.0, t1, t2);
            cloud.points.resize(n, 2);
            cloud.points.col(0) = t1.matrix();
            cloud.points.col(1) = t2.matrix();
            cloud.periodic_box = Eigen::Vector2d(1.0, 1.0);
            break;
        }
    }
    cloud.validate();
    return cloud;
}

// Zero-pads to dimension p, scales, and applies a seeded random orthogonal
// map (QR-orthonormalized Gaussian frame). A negative seed means the identity
// map. Pairwise distances are preserved up to the scale factor.
inline PointCloud embed_ambient(const PointCloud& cloud, int p, double scale,
                                std::int64_t seed) {
    const int src = cloud.dim();
    if (p < src) throw config_error("embed_ambient: target dimension below source");
    if (scale <= 0.0) throw config_error("embed_ambient: scale must be positive");
    if (cloud.periodic())
        throw config_error("embed_ambient: periodic clouds cannot be re-embedded");

    Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(cloud.n(), p);
    padded.leftCols(src) = cloud.points * scale;

    PointCloud out;
    out.intrinsic_dim = cloud.intrinsic_dim;
    out.label = cloud.label;
    if (seed < 0) {
        out.points = std::move(padded);
        return out;
    }
    Rng rng(static_cast<std::uint64_t>(seed));
    Eigen::MatrixXd g(p, p);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd Q = qr.householderQ();
    Eigen::VectorXd rdiag = qr.matrixQR().diagonal();
    for (int j = 0; j < p; ++j)
        if (rdiag[j] < 0.0) Q.col(j) = -Q.col(j);
    out.points = padded * Q.transpose();
    return out;
}

// Positive per-point density built from the j-th renormalized eigenvector
// (1-based among the stored nontrivial pairs): psi_j + c with
// c = max(0, -min psi_j) + floor, so the result is >= floor everywhere.
inline Eigen::VectorXd eigenfunction_density(const SpectralEmbedding& emb, int j,
                                             double floor = 0.1,
                                             double* shift_out = nullptr) {
    if (j < 1 || j > emb.num_vectors())
        throw config_error("eigenfunction_density: eigenvector index out of range");
    if (floor <= 0.0) throw config_error("eigenfunction_density: floor must be positive");
    Eigen::VectorXd psi = emb.vectors.col(j - 1);
    double c = std::max(0.0, -psi.minCoeff()) + floor;
    if (shift_out) *shift_out = c;
    return psi.array() + c;
}

}  // namespace mfp
