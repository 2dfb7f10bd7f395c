#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mfp/cloud.hpp"
#include "mfp/errors.hpp"
#include "mfp/linalg.hpp"

namespace mfp {

// Local tangent frame at one point: top-d eigenvectors of the neighborhood
// covariance, plus the in-frame coordinates of the nearby points.
struct TangentFrame {
    int center = -1;
    Eigen::MatrixXd basis;          // ambient_dim x d, orthonormal columns
    std::vector<int> neighbor_ids;  // points in the covariance ball (center excluded)
    std::vector<int> proj_ids;      // points in the projection ball (center excluded)
    Eigen::MatrixXd projected;      // |proj_ids| x d, center maps to the origin
};

// Covariance over the sqrt(r)-ball, projection over the r-ball. The center's
// own image is the origin by construction and is not stored.
inline TangentFrame tangent_frame(const PointCloud& cloud, int k, double r) {
    cloud.validate();
    const int n = cloud.n();
    if (k < 0 || k >= n) throw config_error("tangent_frame: index out of range");
    if (r <= 0.0) throw config_error("tangent_frame: r must be positive");
    const int d = cloud.intrinsic_dim;
    const int l = cloud.dim();
    const double r_cov = std::sqrt(r);

    TangentFrame frame;
    frame.center = k;
    const double r_max = std::max(r_cov, r);
    std::vector<int> within;
    std::vector<Eigen::VectorXd> deltas;
    std::vector<double> dists;
    deltas.reserve(64);
    for (int i = 0; i < n; ++i) {
        if (i == k) continue;
        Eigen::VectorXd delta = cloud.displacement(k, i);
        double dist = delta.norm();
        if (dist <= r_max) {
            within.push_back(i);
            deltas.push_back(std::move(delta));
            dists.push_back(dist);
        }
    }
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(l, l);
    for (size_t idx = 0; idx < within.size(); ++idx) {
        if (dists[idx] <= r_cov) {
            frame.neighbor_ids.push_back(within[idx]);
            cov += deltas[idx] * deltas[idx].transpose();
        }
    }
    if (static_cast<int>(frame.neighbor_ids.size()) < d + 1)
        throw numeric_error("tangent_frame: only " +
                            std::to_string(frame.neighbor_ids.size()) +
                            " neighbors in covariance ball (need " +
                            std::to_string(d + 1) + ")");
    cov /= static_cast<double>(n);

    SymmetricEigenResult eig = sym_eig(cov, l);  // ascending
    if (l > d) {
        double ed = eig.eigenvalues[l - d];        // d-th largest
        double ed1 = eig.eigenvalues[l - d - 1];   // (d+1)-th largest
        double scale = std::max(std::abs(eig.eigenvalues[l - 1]), 1e-300);
        if ((ed - ed1) <= 1e-12 * scale)
            throw numeric_error("tangent_frame: degenerate covariance spectrum "
                                "(tangent dimension ambiguous)");
    }
    frame.basis.resize(l, d);
    for (int j = 0; j < d; ++j) frame.basis.col(j) = eig.eigenvectors.col(l - 1 - j);

    for (size_t idx = 0; idx < within.size(); ++idx)
        if (dists[idx] <= r) frame.proj_ids.push_back(within[idx]);
    frame.projected.resize(frame.proj_ids.size(), d);
    int row = 0;
    for (size_t idx = 0; idx < within.size(); ++idx)
        if (dists[idx] <= r)
            frame.projected.row(row++) = (frame.basis.transpose() * deltas[idx]).transpose();
    return frame;
}

namespace detail {

inline double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() * b.y() - a.y() * b.x();
}

// Convex CCW polygon; edge i runs vtx[i] -> vtx[i+1 mod m] and carries ids[i]
// (-1 for seed-box edges, otherwise the index of the neighbor whose bisector
// supports it).
struct Poly2 {
    std::vector<Eigen::Vector2d> vtx;
    std::vector<int> ids;
};

inline Poly2 seed_square(double a) {
    Poly2 p;
    p.vtx = {{-a, -a}, {a, -a}, {a, a}, {-a, a}};
    p.ids = {-1, -1, -1, -1};
    return p;
}

// Removes zero-length edges; a merged vertex keeps the outgoing edge of the
// later entry.
inline void dedupe(Poly2& p, double tol) {
    Poly2 out;
    const int m = static_cast<int>(p.vtx.size());
    for (int i = 0; i < m; ++i) {
        int j = (i + 1) % m;
        if ((p.vtx[j] - p.vtx[i]).norm() <= tol) continue;  // drop vtx[i], edge i
        out.vtx.push_back(p.vtx[i]);
        out.ids.push_back(p.ids[i]);
    }
    p = std::move(out);
}

// Clips by the half-plane {x : x.dot(nrm) <= c}; nrm must be unit. The newly
// created edge carries `id`.
inline Poly2 clip_halfplane(const Poly2& in, const Eigen::Vector2d& nrm, double c,
                            int id, double tol) {
    Poly2 out;
    const int m = static_cast<int>(in.vtx.size());
    if (m == 0) return out;
    std::vector<double> s(m);
    for (int i = 0; i < m; ++i) s[i] = c - in.vtx[i].dot(nrm);
    for (int i = 0; i < m; ++i) {
        int j = (i + 1) % m;
        bool pin = s[i] >= -tol;
        bool qin = s[j] >= -tol;
        if (pin) {
            out.vtx.push_back(in.vtx[i]);
            out.ids.push_back(in.ids[i]);
            if (!qin) {
                double t = s[i] / (s[i] - s[j]);
                out.vtx.push_back(in.vtx[i] + t * (in.vtx[j] - in.vtx[i]));
                out.ids.push_back(id);  // boundary turns onto the clip line
            }
        } else if (qin) {
            double t = s[i] / (s[i] - s[j]);
            out.vtx.push_back(in.vtx[i] + t * (in.vtx[j] - in.vtx[i]));
            out.ids.push_back(in.ids[i]);  // original edge resumes here
        }
    }
    dedupe(out, tol);
    return out;
}

// Area of triangle(0, A, B) intersected with the origin-centered disk of
// radius rr, signed by the orientation of (A, B). Summed over the edges of a
// convex CCW polygon containing the origin this gives the exact area of
// polygon-and-disk intersection (circular sectors where the boundary leaves
// the disk, chords and triangle pieces where it stays inside).
inline double edge_disk_area(const Eigen::Vector2d& A, const Eigen::Vector2d& B,
                             double rr) {
    auto sector = [rr](const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
        return 0.5 * rr * rr * std::atan2(cross2(u, v), u.dot(v));
    };
    const double a = A.norm(), b = B.norm();
    const bool ain = a <= rr, bin = b <= rr;
    if (ain && bin) return 0.5 * cross2(A, B);

    // segment-circle crossings: |A + t (B-A)|^2 = rr^2
    const Eigen::Vector2d dd = B - A;
    const double qa = dd.squaredNorm();
    const double qb = A.dot(dd);
    const double qc = A.squaredNorm() - rr * rr;
    const double disc = qb * qb - qa * qc;

    if (ain) {  // A inside, B outside: exit point then arc toward B
        double t = (-qb + std::sqrt(std::max(disc, 0.0))) / qa;
        Eigen::Vector2d X = A + t * dd;
        return 0.5 * cross2(A, X) + sector(X, B);
    }
    if (bin) {  // arc from A, then entry point to B
        double t = (-qb - std::sqrt(std::max(disc, 0.0))) / qa;
        Eigen::Vector2d X = A + t * dd;
        return sector(A, X) + 0.5 * cross2(X, B);
    }
    if (disc > 0.0) {
        double sq = std::sqrt(disc);
        double t1 = (-qb - sq) / qa;
        double t2 = (-qb + sq) / qa;
        if (t1 > 0.0 && t2 < 1.0 && t1 < t2) {  // segment dips through the disk
            Eigen::Vector2d X1 = A + t1 * dd;
            Eigen::Vector2d X2 = A + t2 * dd;
            return sector(A, X1) + 0.5 * cross2(X1, X2) + sector(X2, B);
        }
    }
    return sector(A, B);
}

inline double polygon_disk_area(const Poly2& p, double rr) {
    double area = 0.0;
    const int m = static_cast<int>(p.vtx.size());
    for (int i = 0; i < m; ++i)
        area += edge_disk_area(p.vtx[i], p.vtx[(i + 1) % m], rr);
    return area;
}

// Length of segment [A,B] inside the origin-centered disk of radius rr.
inline double segment_length_in_disk(const Eigen::Vector2d& A, const Eigen::Vector2d& B,
                                     double rr) {
    const Eigen::Vector2d dd = B - A;
    const double len = dd.norm();
    if (len == 0.0) return 0.0;
    const double qa = dd.squaredNorm();
    const double qb = A.dot(dd);
    const double qc = A.squaredNorm() - rr * rr;
    const double disc = qb * qb - qa * qc;
    if (disc <= 0.0) return 0.0;  // line misses the disk
    const double sq = std::sqrt(disc);
    double t1 = std::max((-qb - sq) / qa, 0.0);
    double t2 = std::min((-qb + sq) / qa, 1.0);
    return t2 > t1 ? (t2 - t1) * len : 0.0;
}

}  // namespace detail

struct CellGeometry {
    double volume = 0.0;
    Eigen::VectorXd face_areas;  // one entry per input neighbor, 0 if no shared face
};

namespace detail {

inline CellGeometry cell_polytope_2d(const Eigen::MatrixXd& projected, double r) {
    const int m = static_cast<int>(projected.rows());
    const double tol = 1e-13 * r;
    Poly2 poly = seed_square(2.0 * r);
    for (int i = 0; i < m; ++i) {
        Eigen::Vector2d v = projected.row(i).transpose();
        double nv = v.norm();
        if (nv <= 1e-13 * r)
            throw numeric_error("cell_polytope: neighbor coincides with the center");
        poly = clip_halfplane(poly, v / nv, 0.5 * nv, i, tol);
    }
    CellGeometry geom;
    geom.volume = polygon_disk_area(poly, r);
    geom.face_areas = Eigen::VectorXd::Zero(m);
    const int mv = static_cast<int>(poly.vtx.size());
    for (int i = 0; i < mv; ++i) {
        int id = poly.ids[i];
        if (id < 0) continue;
        geom.face_areas[id] +=
            segment_length_in_disk(poly.vtx[i], poly.vtx[(i + 1) % mv], r);
    }
    return geom;
}

// --- d = 3: incremental half-space clipping of a seeded cube -------------

// Convex polyhedron kept as a face list; every face is a convex planar loop,
// CCW as seen from outside.
struct Face3 {
    std::vector<Eigen::Vector3d> vtx;
    int id = -1;
};
struct Poly3 {
    std::vector<Face3> faces;
};

inline Poly3 seed_cube(double a) {
    auto V = [a](double x, double y, double z) { return Eigen::Vector3d(a * x, a * y, a * z); };
    Poly3 p;
    p.faces.push_back({{V(1, -1, -1), V(1, 1, -1), V(1, 1, 1), V(1, -1, 1)}, -1});      // +x
    p.faces.push_back({{V(-1, -1, -1), V(-1, -1, 1), V(-1, 1, 1), V(-1, 1, -1)}, -1});  // -x
    p.faces.push_back({{V(-1, 1, -1), V(-1, 1, 1), V(1, 1, 1), V(1, 1, -1)}, -1});      // +y
    p.faces.push_back({{V(-1, -1, -1), V(1, -1, -1), V(1, -1, 1), V(-1, -1, 1)}, -1});  // -y
    p.faces.push_back({{V(-1, -1, 1), V(1, -1, 1), V(1, 1, 1), V(-1, 1, 1)}, -1});      // +z
    p.faces.push_back({{V(-1, -1, -1), V(-1, 1, -1), V(1, 1, -1), V(1, -1, -1)}, -1});  // -z
    return p;
}

inline double polygon_area_3d(const std::vector<Eigen::Vector3d>& loop) {
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    const int m = static_cast<int>(loop.size());
    for (int i = 0; i < m; ++i) acc += loop[i].cross(loop[(i + 1) % m]);
    return 0.5 * acc.norm();
}

// Clips the polyhedron by {x : x.dot(nrm) <= c}; the section polygon gets `id`.
inline Poly3 clip_halfspace(const Poly3& in, const Eigen::Vector3d& nrm, double c,
                            int id, double tol) {
    Poly3 out;
    std::vector<Eigen::Vector3d> cut;  // section vertices (duplicated across faces)
    for (const Face3& f : in.faces) {
        const int m = static_cast<int>(f.vtx.size());
        std::vector<double> s(m);
        for (int i = 0; i < m; ++i) s[i] = c - f.vtx[i].dot(nrm);
        Face3 nf;
        nf.id = f.id;
        for (int i = 0; i < m; ++i) {
            int j = (i + 1) % m;
            bool pin = s[i] >= -tol, qin = s[j] >= -tol;
            if (pin) {
                nf.vtx.push_back(f.vtx[i]);
                if (!qin) {
                    double t = s[i] / (s[i] - s[j]);
                    Eigen::Vector3d X = f.vtx[i] + t * (f.vtx[j] - f.vtx[i]);
                    nf.vtx.push_back(X);
                    cut.push_back(X);
                }
            } else if (qin) {
                double t = s[i] / (s[i] - s[j]);
                Eigen::Vector3d X = f.vtx[i] + t * (f.vtx[j] - f.vtx[i]);
                nf.vtx.push_back(X);
                cut.push_back(X);
            }
        }
        // drop consecutive duplicates
        std::vector<Eigen::Vector3d> clean;
        for (const auto& v : nf.vtx) {
            if (clean.empty() || (v - clean.back()).norm() > tol) clean.push_back(v);
        }
        while (clean.size() > 2 && (clean.front() - clean.back()).norm() <= tol)
            clean.pop_back();
        nf.vtx = std::move(clean);
        if (nf.vtx.size() >= 3) out.faces.push_back(std::move(nf));
    }
    if (cut.size() >= 3) {
        // The section of a convex body is a convex polygon: sort unique cut
        // vertices by angle in the cut plane, oriented so the outward normal
        // is nrm.
        std::vector<Eigen::Vector3d> uniq;
        for (const auto& v : cut) {
            bool seen = false;
            for (const auto& u : uniq)
                if ((u - v).norm() <= 10 * tol) { seen = true; break; }
            if (!seen) uniq.push_back(v);
        }
        if (uniq.size() >= 3) {
            Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
            for (const auto& v : uniq) centroid += v;
            centroid /= static_cast<double>(uniq.size());
            Eigen::Vector3d axis = std::abs(nrm.x()) < 0.9
                                       ? Eigen::Vector3d::UnitX()
                                       : Eigen::Vector3d::UnitY();
            Eigen::Vector3d u = nrm.cross(axis).normalized();
            Eigen::Vector3d w = nrm.cross(u);  // u x w = nrm: (u, w, nrm) right-handed
            std::sort(uniq.begin(), uniq.end(),
                      [&](const Eigen::Vector3d& p1, const Eigen::Vector3d& p2) {
                          Eigen::Vector3d d1 = p1 - centroid, d2 = p2 - centroid;
                          return std::atan2(d1.dot(w), d1.dot(u)) <
                                 std::atan2(d2.dot(w), d2.dot(u));
                      });
            // ensure outward orientation: loop normal must align with nrm
            Eigen::Vector3d acc = Eigen::Vector3d::Zero();
            const int mu = static_cast<int>(uniq.size());
            for (int i = 0; i < mu; ++i) {
                Eigen::Vector3d d1 = uniq[i] - centroid;
                Eigen::Vector3d d2 = uniq[(i + 1) % mu] - centroid;
                acc += d1.cross(d2);
            }
            if (acc.dot(nrm) < 0.0) std::reverse(uniq.begin(), uniq.end());
            out.faces.push_back({std::move(uniq), id});
        }
    }
    return out;
}

inline CellGeometry cell_polytope_3d(const Eigen::MatrixXd& projected, double r) {
    const int m = static_cast<int>(projected.rows());
    const double tol = 1e-12 * r;
    Poly3 poly = seed_cube(r);
    for (int i = 0; i < m; ++i) {
        Eigen::Vector3d v = projected.row(i).transpose();
        double nv = v.norm();
        if (nv <= 1e-13 * r)
            throw numeric_error("cell_polytope: neighbor coincides with the center");
        poly = clip_halfspace(poly, v / nv, 0.5 * nv, i, tol);
    }
    CellGeometry geom;
    geom.face_areas = Eigen::VectorXd::Zero(m);
    double vol6 = 0.0;
    for (const Face3& f : poly.faces) {
        const int mv = static_cast<int>(f.vtx.size());
        for (int i = 1; i + 1 < mv; ++i)
            vol6 += f.vtx[0].dot(f.vtx[i].cross(f.vtx[i + 1]));
        if (f.id >= 0) geom.face_areas[f.id] += polygon_area_3d(f.vtx);
    }
    geom.volume = vol6 / 6.0;
    return geom;
}

}  // namespace detail

// Voronoi cell of the origin among half-spaces {x : x.dot(v_i) <= |v_i|^2/2},
// bounded by the clip region (d=2: disk of radius r, exact circular-segment
// arithmetic; d=3: cube of half-width r). Returns the cell volume and the
// (d-1)-measure of the face shared with each neighbor; the clip boundary
// itself carries no neighbor face.
inline CellGeometry cell_polytope(const Eigen::MatrixXd& projected, double r) {
    const int m = static_cast<int>(projected.rows());
    const int d = static_cast<int>(projected.cols());
    if (m < 1) throw config_error("cell_polytope: need at least one neighbor");
    if (r <= 0.0) throw config_error("cell_polytope: clip radius must be positive");
    if (!projected.allFinite()) throw numeric_error("cell_polytope: non-finite input");
    if (d == 2) return detail::cell_polytope_2d(projected, r);
    if (d == 3) return detail::cell_polytope_3d(projected, r);
    throw config_error("cell_polytope: dimension must be 2 or 3");
}

// Approximate Voronoi tessellation of a coordinate cloud: cell volumes,
// symmetrized face areas, and the face-neighbor lists.
struct Tessellation {
    Eigen::VectorXd volumes;                    // |C_i|
    std::map<std::pair<int, int>, double> faces;  // (i<j) -> area, only positives
    std::vector<std::vector<int>> neighbors;    // VF(i), ascending
    double r = 0.0;
    double s = 0.0;
    int d = 0;

    int n() const { return static_cast<int>(volumes.size()); }

    double face(int i, int j) const {
        if (i == j) return 0.0;
        auto it = faces.find({std::min(i, j), std::max(i, j)});
        return it == faces.end() ? 0.0 : it->second;
    }
};

// Runs the per-point cell construction over the whole cloud, averages the two
// one-sided area estimates of every pair, applies the floor s to pairs with
// positive area, and derives the neighbor lists. d defaults to the cloud's
// intrinsic dimension.
inline Tessellation build_tessellation(const PointCloud& input, double r, double s = 0.0,
                                       int d = 0) {
    PointCloud cloud = input;
    if (d != 0) cloud.intrinsic_dim = d;
    d = cloud.intrinsic_dim;
    cloud.validate();
    if (s < 0.0) throw config_error("build_tessellation: threshold s must be >= 0");
    if (r <= 0.0) throw config_error("build_tessellation: r must be positive");
    if (r >= 1.0)
        std::cerr << "warning: tessellation bandwidth r = " << r
                  << " outside (0,1); proceeding\n";
    const int n = cloud.n();

    Tessellation tess;
    tess.r = r;
    tess.s = s;
    tess.d = d;
    tess.volumes.resize(n);

    std::map<std::pair<int, int>, double> halves;  // ordered (k,l) -> one-sided area
    for (int k = 0; k < n; ++k) {
        try {
            TangentFrame frame = tangent_frame(cloud, k, r);
            CellGeometry geom = cell_polytope(frame.projected, r);
            tess.volumes[k] = geom.volume;
            for (size_t i = 0; i < frame.proj_ids.size(); ++i)
                if (geom.face_areas[static_cast<int>(i)] > 0.0)
                    halves[{k, frame.proj_ids[i]}] = geom.face_areas[static_cast<int>(i)];
        } catch (const error& e) {
            throw numeric_error("point " + std::to_string(k) + ": " + e.what());
        }
    }

    const double cull = 1e-12 * r;  // numerically-zero contacts
    for (const auto& [key, area] : halves) {
        auto [k, l] = key;
        if (k > l) continue;
        auto other = halves.find({l, k});
        double sym = 0.5 * (area + (other != halves.end() ? other->second : 0.0));
        if (sym > cull) {
            double final_area = std::max(sym, s);
            tess.faces[{k, l}] = final_area;
        }
    }
    // pairs seen only from the (l,k) side with l > k
    for (const auto& [key, area] : halves) {
        auto [k, l] = key;
        if (k < l) continue;
        if (halves.count({l, k})) continue;  // handled above
        double sym = 0.5 * area;
        if (sym > cull) tess.faces[{l, k}] = std::max(sym, s);
    }

    tess.neighbors.assign(n, {});
    for (const auto& [key, area] : tess.faces) {
        tess.neighbors[key.first].push_back(key.second);
        tess.neighbors[key.second].push_back(key.first);
    }
    for (auto& lst : tess.neighbors) std::sort(lst.begin(), lst.end());
    return tess;
}

}  // namespace mfp
