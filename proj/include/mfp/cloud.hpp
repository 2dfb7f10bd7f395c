#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "mfp/errors.hpp"

namespace mfp {

// A set of n points in R^p together with the intrinsic dimension d of the
// manifold they sample. Used both for raw ambient samples and for
// reaction-coordinate sets. periodic_box, when non-empty (size p), marks the
// cloud as living on a flat torus with the given edge lengths; displacements
// then use the minimum-image convention.
struct PointCloud {
    Eigen::MatrixXd points;  // n x p
    int intrinsic_dim = 0;   // d
    std::string label;
    Eigen::VectorXd periodic_box;  // empty, or p edge lengths

    int n() const { return static_cast<int>(points.rows()); }
    int dim() const { return static_cast<int>(points.cols()); }
    bool periodic() const { return periodic_box.size() > 0; }

    // Checks the structural invariants expected of manifold samples.
    void validate() const {
        if (intrinsic_dim < 1)
            throw config_error("point cloud: intrinsic dimension must be positive");
        if (n() < intrinsic_dim + 2)
            throw config_error("point cloud: need at least d+2 points, have " +
                               std::to_string(n()));
        if (dim() < intrinsic_dim)
            throw config_error("point cloud: ambient dimension below intrinsic dimension");
        if (!points.allFinite())
            throw numeric_error("point cloud: non-finite coordinates");
        if (periodic() && periodic_box.size() != dim())
            throw config_error("point cloud: periodic box size does not match dimension");
    }

    // Displacement of point j relative to point i (minimum image if periodic).
    Eigen::VectorXd displacement(int i, int j) const {
        Eigen::VectorXd delta = points.row(j) - points.row(i);
        if (periodic()) {
            for (int c = 0; c < delta.size(); ++c) {
                double box = periodic_box[c];
                delta[c] -= box * std::round(delta[c] / box);
            }
        }
        return delta;
    }

    double distance(int i, int j) const { return displacement(i, j).norm(); }
};

}  // namespace mfp
