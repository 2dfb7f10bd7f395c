#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfp/cloud.hpp"
#include "mfp/diffusion_map.hpp"
#include "mfp/errors.hpp"
#include "mfp/fokker_planck.hpp"
#include "mfp/voronoi.hpp"

namespace mfp {

using json = nlohmann::json;

// Shortest decimal form that round-trips a double exactly.
inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    double back = std::strtod(buf, nullptr);
    if (back == x) {
        for (int prec = 1; prec < 17; ++prec) {
            char shorter[32];
            std::snprintf(shorter, sizeof(shorter), "%.*g", prec, x);
            if (std::strtod(shorter, nullptr) == x) return shorter;
        }
    }
    return buf;
}

inline void write_csv(const std::string& path, const Eigen::MatrixXd& m,
                      const std::vector<std::string>& header = {}) {
    std::ofstream out(path);
    if (!out) throw config_error("write_csv: cannot open " + path);
    if (!header.empty()) {
        if (static_cast<Eigen::Index>(header.size()) != m.cols())
            throw config_error("write_csv: header width mismatch");
        for (size_t c = 0; c < header.size(); ++c)
            out << (c ? "," : "") << header[c];
        out << "\n";
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            out << (j ? "," : "") << format_double(m(i, j));
        out << "\n";
    }
    if (!out) throw config_error("write_csv: write failed on " + path);
}

// Reads a rectangular numeric CSV. A first line containing any unparsable
// field is treated as a header and skipped.
inline Eigen::MatrixXd read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("read_csv: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string field;
        bool bad = false;
        while (std::getline(ss, field, ',')) {
            size_t pos = 0;
            double v = 0.0;
            try {
                v = std::stod(field, &pos);
            } catch (const std::exception&) {
                bad = true;
                break;
            }
            while (pos < field.size() && std::isspace(static_cast<unsigned char>(field[pos])))
                ++pos;
            if (pos != field.size()) {
                bad = true;
                break;
            }
            row.push_back(v);
        }
        if (bad) {
            if (first) {
                first = false;
                continue;
            }
            throw config_error("read_csv: unparsable row in " + path + ": " + line);
        }
        first = false;
        if (!rows.empty() && row.size() != rows.front().size())
            throw config_error("read_csv: ragged rows in " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw config_error("read_csv: no data in " + path);
    Eigen::MatrixXd m(rows.size(), rows.front().size());
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

inline void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw config_error("write_json: cannot open " + path);
    out << j.dump(2) << "\n";
    if (!out) throw config_error("write_json: write failed on " + path);
}

inline json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("read_json: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw config_error("read_json: " + path + ": " + e.what());
    }
    return j;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Eigen::VectorXd vector_from_json(const json& a, const char* who) {
    if (!a.is_array()) throw config_error(std::string(who) + ": expected array");
    Eigen::VectorXd v(a.size());
    for (size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
    return v;
}

// ---- point clouds ----------------------------------------------------------

inline void save_cloud(const std::string& csv_path, const std::string& meta_path,
                       const PointCloud& cloud, const json& extra = json::object()) {
    write_csv(csv_path, cloud.points);
    json meta = extra;
    meta["label"] = cloud.label;
    meta["n"] = cloud.n();
    meta["ambient_dim"] = cloud.dim();
    meta["intrinsic_dim"] = cloud.intrinsic_dim;
    if (cloud.periodic())
        meta["periodic_box"] = vector_to_json(cloud.periodic_box);
    write_json(meta_path, meta);
}

inline PointCloud load_cloud(const std::string& csv_path, int intrinsic_dim,
                             const std::string& meta_path = "") {
    PointCloud cloud;
    cloud.points = read_csv(csv_path);
    cloud.intrinsic_dim = intrinsic_dim;
    cloud.label = csv_path;
    if (!meta_path.empty()) {
        json meta = read_json(meta_path);
        if (meta.contains("label")) cloud.label = meta["label"].get<std::string>();
        if (meta.contains("intrinsic_dim")) cloud.intrinsic_dim = meta["intrinsic_dim"].get<int>();
        if (meta.contains("periodic_box"))
            cloud.periodic_box = vector_from_json(meta["periodic_box"], "load_cloud");
    }
    cloud.validate();
    return cloud;
}

// ---- spectral embeddings ----------------------------------------------------

inline void save_embedding(const std::string& csv_path, const std::string& meta_path,
                           const SpectralEmbedding& emb) {
    write_csv(csv_path, emb.coords);
    json meta;
    meta["eps"] = emb.eps;
    meta["alpha"] = emb.alpha;
    meta["ell"] = emb.ell;
    meta["intrinsic_dim"] = emb.intrinsic_dim;
    meta["eigenvalues"] = vector_to_json(emb.eigenvalues);
    meta["norm_factors"] = vector_to_json(emb.norm_factors);
    meta["sign_flags"] = vector_to_json(emb.sign_flags);
    write_json(meta_path, meta);
}

// ---- tessellations ----------------------------------------------------------

inline json tessellation_to_json(const Tessellation& tess) {
    json j;
    j["n"] = tess.n();
    j["r"] = tess.r;
    j["s"] = tess.s;
    j["d"] = tess.d;
    j["volumes"] = vector_to_json(tess.volumes);
    json faces = json::array();
    for (const auto& [key, area] : tess.faces)
        faces.push_back(json::array({key.first, key.second, area}));
    j["faces"] = faces;
    return j;
}

inline Tessellation tessellation_from_json(const json& j) {
    Tessellation tess;
    tess.r = j.at("r").get<double>();
    tess.s = j.at("s").get<double>();
    tess.d = j.at("d").get<int>();
    tess.volumes = vector_from_json(j.at("volumes"), "tessellation_from_json");
    const int n = static_cast<int>(tess.volumes.size());
    tess.neighbors.assign(n, {});
    for (const auto& f : j.at("faces")) {
        int a = f.at(0).get<int>();
        int b = f.at(1).get<int>();
        double area = f.at(2).get<double>();
        if (a < 0 || b < 0 || a >= n || b >= n || a >= b)
            throw config_error("tessellation_from_json: bad face pair");
        tess.faces[{a, b}] = area;
        tess.neighbors[a].push_back(b);
        tess.neighbors[b].push_back(a);
    }
    for (auto& lst : tess.neighbors) std::sort(lst.begin(), lst.end());
    return tess;
}

// ---- generators --------------------------------------------------------------

inline json generator_to_json(const Generator& gen) {
    json j;
    j["n"] = gen.n();
    j["kT"] = gen.kT;
    j["lambda"] = vector_to_json(gen.lambda);
    j["pi"] = vector_to_json(gen.pi);
    j["volumes"] = vector_to_json(gen.volumes);
    json faces = json::array();
    for (const auto& f : gen.faces) {
        json e;
        e["i"] = f.i;
        e["j"] = f.j;
        e["gamma"] = f.gamma;
        e["dist"] = f.dist;
        e["flux"] = f.flux;
        faces.push_back(e);
    }
    j["faces"] = faces;
    return j;
}

// ---- trajectories -------------------------------------------------------------

// Streams per-step diagnostics (and optional density snapshots) to CSV files.
class TrajectoryWriter {
  public:
    TrajectoryWriter(const std::string& path, int snapshot_stride = 0,
                     const std::string& snapshot_path = "")
        : out_(path), stride_(snapshot_stride) {
        if (!out_) throw config_error("TrajectoryWriter: cannot open " + path);
        out_ << "step,time,mass,weighted_mass,chi2,linf_err\n";
        if (stride_ > 0) {
            snap_.open(snapshot_path);
            if (!snap_)
                throw config_error("TrajectoryWriter: cannot open " + snapshot_path);
        }
    }

    void record(const DensityState& state, const Generator& gen) {
        Diagnostics d = diagnostics(state, gen);
        double time = static_cast<double>(state.step) * state.dt;
        out_ << state.step << "," << format_double(time) << "," << format_double(d.mass)
             << "," << format_double(d.weighted_mass) << "," << format_double(d.chi2)
             << "," << format_double(d.linf_err) << "\n";
        if (stride_ > 0 && state.step % stride_ == 0) {
            snap_ << state.step;
            for (Eigen::Index i = 0; i < state.rho.size(); ++i)
                snap_ << "," << format_double(state.rho[i]);
            snap_ << "\n";
        }
    }

  private:
    std::ofstream out_;
    std::ofstream snap_;
    int stride_;
};

}  // namespace mfp
