#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mfp/cloud.hpp"
#include "mfp/diffusion_map.hpp"
#include "mfp/errors.hpp"
#include "mfp/fokker_planck.hpp"
#include "mfp/io.hpp"
#include "mfp/manifolds.hpp"
#include "mfp/voronoi.hpp"

namespace mfp {

inline const char* version_string() { return "1.0.0"; }

// Where a per-cell density comes from.
//   uniform            constant 1
//   pi                 copy the equilibrium weights (initial densities only)
//   eigenfunction:J    J-th diffusion eigenvector, shifted positive by `floor`
//   potential:PATH     Boltzmann weights exp(-U/kT) from a one-column CSV
//   direct:PATH        values from a one-column CSV, shifted positive if needed
//   expr:NAME          built-in analytic profile of the ambient coordinates
struct DensitySource {
    enum class Kind { uniform, pi, eigenfunction, potential, direct, expr };
    Kind kind = Kind::uniform;
    int index = 0;
    std::string arg;
};

// Built-in analytic density profiles, evaluated on ambient coordinates.
// x = first coordinate, z = last coordinate.
inline double eval_profile(const std::string& name, const Eigen::VectorXd& y) {
    const double x = y[0];
    const double z = y[y.size() - 1];
    if (name == "exp_neg_z") return std::exp(-z);
    if (name == "exp_08z") return std::exp(0.8 * z);
    if (name == "one_plus_half_z") return 1.0 + 0.5 * z;
    if (name == "cos_band_x") return std::exp(-0.5 * std::cos(2.0 * M_PI * x));
    if (name == "one_plus_half_cos_x") return 1.0 + 0.5 * std::cos(2.0 * M_PI * x);
    throw config_error("unknown profile '" + name +
                       "' (known: exp_neg_z, exp_08z, one_plus_half_z, cos_band_x, "
                       "one_plus_half_cos_x)");
}

inline DensitySource parse_density_source(const std::string& text) {
    DensitySource src;
    if (text == "uniform") {
        src.kind = DensitySource::Kind::uniform;
        return src;
    }
    if (text == "pi") {
        src.kind = DensitySource::Kind::pi;
        return src;
    }
    auto colon = text.find(':');
    if (colon == std::string::npos)
        throw config_error("unknown density source '" + text + "'");
    std::string head = text.substr(0, colon), tail = text.substr(colon + 1);
    if (tail.empty()) throw config_error("density source '" + text + "' missing argument");
    if (head == "eigenfunction") {
        src.kind = DensitySource::Kind::eigenfunction;
        try {
            size_t pos = 0;
            src.index = std::stoi(tail, &pos);
            if (pos != tail.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw config_error("bad eigenfunction index '" + tail + "'");
        }
        if (src.index < 1)
            throw config_error("eigenfunction index must be at least 1, got '" + tail + "'");
        return src;
    }
    if (head == "potential") {
        src.kind = DensitySource::Kind::potential;
        src.arg = tail;
        return src;
    }
    if (head == "direct") {
        src.kind = DensitySource::Kind::direct;
        src.arg = tail;
        return src;
    }
    if (head == "expr") {
        src.kind = DensitySource::Kind::expr;
        src.arg = tail;
        eval_profile(tail, Eigen::VectorXd::Zero(1));  // reject unknown names early
        return src;
    }
    throw config_error("unknown density source '" + text + "'");
}

inline std::string density_source_string(const DensitySource& src) {
    switch (src.kind) {
        case DensitySource::Kind::uniform: return "uniform";
        case DensitySource::Kind::pi: return "pi";
        case DensitySource::Kind::eigenfunction:
            return "eigenfunction:" + std::to_string(src.index);
        case DensitySource::Kind::potential: return "potential:" + src.arg;
        case DensitySource::Kind::direct: return "direct:" + src.arg;
        case DensitySource::Kind::expr: return "expr:" + src.arg;
    }
    throw config_error("bad density source");
}

// Full description of one pipeline run. Serializes to a sectioned key-value
// file; parse(serialize(c)) reproduces c exactly.
struct ExperimentConfig {
    // [manifold]
    std::string kind = "sphere";  // manifold name, or "csv" with `input` set
    std::string input;            // point CSV when kind = csv
    std::string meta;             // optional metadata JSON for csv input
    int n = 1000;
    int d = 2;
    std::int64_t seed = 1;
    std::string sampler = "uniform";
    int p = 0;  // ambient dimension after isometric embedding; 0 = keep
    double scale = 1.0;
    std::int64_t embed_seed = -1;  // -1 = axis-aligned padding

    // [spectral]
    double eps = 0.0;  // 0 = median distance to the 8th nearest neighbor
    double alpha = 1.0;
    int ell = 2;
    int extra = 0;

    // [tessellation]
    std::string coords = "diffusion";  // site coordinates: diffusion | ambient
    double r = 0.3;
    double s = 0.0;

    // [density]
    DensitySource pi_source;
    double pi_floor = 0.1;
    DensitySource rho0_source;
    double rho0_floor = 0.1;
    double kT = 1.0;

    // [evolve]
    double dt = 0.05;
    long steps = 100;
    std::string scheme = "unconditional";
    int snapshot_stride = 0;

    // [output]
    std::string out_dir = "out";
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline long long parse_int(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw config_error("config: bad integer for " + key + ": '" + v + "'");
    }
}

inline double parse_real(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw config_error("config: bad number for " + key + ": '" + v + "'");
    }
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& cfg) {
    if (cfg.kind == "csv") {
        if (cfg.input.empty()) throw config_error("config: kind=csv requires manifold.input");
    } else {
        parse_manifold_kind(cfg.kind);
        if (cfg.n < 10) throw config_error("config: n must be at least 10");
    }
    parse_sampler(cfg.sampler);
    if (cfg.d < 1) throw config_error("config: d must be positive");
    if (cfg.p < 0) throw config_error("config: p must be nonnegative");
    if (cfg.scale <= 0.0) throw config_error("config: scale must be positive");
    if (cfg.eps < 0.0) throw config_error("config: eps must be nonnegative");
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw config_error("config: alpha must be in [0,1]");
    if (cfg.ell < 1) throw config_error("config: ell must be positive");
    if (cfg.extra < 0) throw config_error("config: extra must be nonnegative");
    if (cfg.coords != "diffusion" && cfg.coords != "ambient")
        throw config_error("config: coords must be diffusion or ambient");
    if (cfg.r <= 0.0) throw config_error("config: r must be positive");
    if (cfg.s < 0.0) throw config_error("config: s must be nonnegative");
    if (cfg.pi_floor <= 0.0 || cfg.rho0_floor <= 0.0)
        throw config_error("config: floors must be positive");
    if (cfg.pi_source.kind == DensitySource::Kind::pi)
        throw config_error("config: pi source cannot be 'pi'");
    if (cfg.kT <= 0.0) throw config_error("config: kT must be positive");
    if (cfg.dt <= 0.0) throw config_error("config: dt must be positive");
    if (cfg.steps < 0) throw config_error("config: steps must be nonnegative");
    if (cfg.scheme != "unconditional" && cfg.scheme != "explicit" && cfg.scheme != "implicit")
        throw config_error("config: scheme must be unconditional, explicit, or implicit");
    if (cfg.snapshot_stride < 0) throw config_error("config: snapshot_stride must be nonnegative");
    if (cfg.out_dir.empty()) throw config_error("config: output dir must be set");
}

inline std::string serialize_config(const ExperimentConfig& c) {
    std::ostringstream o;
    o << "[manifold]\n";
    o << "kind = " << c.kind << "\n";
    o << "input = " << c.input << "\n";
    o << "meta = " << c.meta << "\n";
    o << "n = " << c.n << "\n";
    o << "d = " << c.d << "\n";
    o << "seed = " << c.seed << "\n";
    o << "sampler = " << c.sampler << "\n";
    o << "p = " << c.p << "\n";
    o << "scale = " << format_double(c.scale) << "\n";
    o << "embed_seed = " << c.embed_seed << "\n";
    o << "\n[spectral]\n";
    o << "eps = " << format_double(c.eps) << "\n";
    o << "alpha = " << format_double(c.alpha) << "\n";
    o << "ell = " << c.ell << "\n";
    o << "extra = " << c.extra << "\n";
    o << "\n[tessellation]\n";
    o << "coords = " << c.coords << "\n";
    o << "r = " << format_double(c.r) << "\n";
    o << "s = " << format_double(c.s) << "\n";
    o << "\n[density]\n";
    o << "pi = " << density_source_string(c.pi_source) << "\n";
    o << "pi_floor = " << format_double(c.pi_floor) << "\n";
    o << "rho0 = " << density_source_string(c.rho0_source) << "\n";
    o << "rho0_floor = " << format_double(c.rho0_floor) << "\n";
    o << "kT = " << format_double(c.kT) << "\n";
    o << "\n[evolve]\n";
    o << "dt = " << format_double(c.dt) << "\n";
    o << "steps = " << c.steps << "\n";
    o << "scheme = " << c.scheme << "\n";
    o << "snapshot_stride = " << c.snapshot_stride << "\n";
    o << "\n[output]\n";
    o << "dir = " << c.out_dir << "\n";
    return o.str();
}

inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw config_error("config line " + std::to_string(lineno) + ": bad section");
            section = t.substr(1, t.size() - 2);
            continue;
        }
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(t.substr(0, eq));
        std::string val = detail::trim(t.substr(eq + 1));
        std::string sk = section + "." + key;
        if (sk == "manifold.kind") c.kind = val;
        else if (sk == "manifold.input") c.input = val;
        else if (sk == "manifold.meta") c.meta = val;
        else if (sk == "manifold.n") c.n = static_cast<int>(detail::parse_int(val, sk));
        else if (sk == "manifold.d") c.d = static_cast<int>(detail::parse_int(val, sk));
        else if (sk == "manifold.seed") c.seed = detail::parse_int(val, sk);
        else if (sk == "manifold.sampler") c.sampler = val;
        else if (sk == "manifold.p") c.p = static_cast<int>(detail::parse_int(val, sk));
        else if (sk == "manifold.scale") c.scale = detail::parse_real(val, sk);
        else if (sk == "manifold.embed_seed") c.embed_seed = detail::parse_int(val, sk);
        else if (sk == "spectral.eps") c.eps = detail::parse_real(val, sk);
        else if (sk == "spectral.alpha") c.alpha = detail::parse_real(val, sk);
        else if (sk == "spectral.ell") c.ell = static_cast<int>(detail::parse_int(val, sk));
        else if (sk == "spectral.extra") c.extra = static_cast<int>(detail::parse_int(val, sk));
        else if (sk == "tessellation.coords") c.coords = val;
        else if (sk == "tessellation.r") c.r = detail::parse_real(val, sk);
        else if (sk == "tessellation.s") c.s = detail::parse_real(val, sk);
        else if (sk == "density.pi") c.pi_source = parse_density_source(val);
        else if (sk == "density.pi_floor") c.pi_floor = detail::parse_real(val, sk);
        else if (sk == "density.rho0") c.rho0_source = parse_density_source(val);
        else if (sk == "density.rho0_floor") c.rho0_floor = detail::parse_real(val, sk);
        else if (sk == "density.kT") c.kT = detail::parse_real(val, sk);
        else if (sk == "evolve.dt") c.dt = detail::parse_real(val, sk);
        else if (sk == "evolve.steps") c.steps = detail::parse_int(val, sk);
        else if (sk == "evolve.scheme") c.scheme = val;
        else if (sk == "evolve.snapshot_stride")
            c.snapshot_stride = static_cast<int>(detail::parse_int(val, sk));
        else if (sk == "output.dir") c.out_dir = val;
        else
            throw config_error("config line " + std::to_string(lineno) + ": unknown key '" +
                               sk + "'");
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// ---- presets ----------------------------------------------------------------

inline std::vector<std::string> preset_names() {
    return {"sphere-desk", "dumbbell-desk", "dumbbell-paper", "klein-desk", "klein-paper",
            "torus-desk"};
}

inline ExperimentConfig preset_config(const std::string& name) {
    ExperimentConfig c;
    if (name == "sphere-desk") {
        c.kind = "sphere";
        c.n = 1000;
        c.seed = 11;
        c.coords = "ambient";
        c.r = 0.42;
        c.pi_source = parse_density_source("expr:exp_neg_z");
        c.rho0_source = parse_density_source("expr:one_plus_half_z");
        c.dt = 0.05;
        c.steps = 200;
        c.out_dir = "out/sphere-desk";
        return c;
    }
    if (name == "dumbbell-desk") {
        c.kind = "dumbbell";
        c.n = 800;
        c.seed = 1;
        c.p = 200;
        c.embed_seed = 7;
        c.ell = 3;
        c.r = 0.16;
        c.pi_source = parse_density_source("eigenfunction:8");
        c.rho0_source = parse_density_source("eigenfunction:2");
        c.dt = 0.05;
        c.steps = 300;
        c.snapshot_stride = 50;
        c.out_dir = "out/dumbbell-desk";
        return c;
    }
    if (name == "dumbbell-paper") {
        c.kind = "dumbbell";
        c.n = 4000;
        c.seed = 1;
        c.p = 200;
        c.embed_seed = 7;
        c.ell = 3;
        c.r = 0.16;
        c.pi_source = parse_density_source("eigenfunction:8");
        c.rho0_source = parse_density_source("eigenfunction:2");
        c.dt = 0.05;
        c.steps = 20000;
        c.snapshot_stride = 1000;
        c.out_dir = "out/dumbbell-paper";
        return c;
    }
    if (name == "klein-desk") {
        c.kind = "klein_bottle";
        c.n = 600;
        c.seed = 3;
        c.ell = 4;
        c.r = 0.4;
        c.pi_source = parse_density_source("eigenfunction:7");
        c.rho0_source = parse_density_source("eigenfunction:2");
        c.dt = 0.05;
        c.steps = 300;
        c.out_dir = "out/klein-desk";
        return c;
    }
    if (name == "klein-paper") {
        c.kind = "klein_bottle";
        c.n = 2000;
        c.seed = 3;
        c.ell = 4;
        c.r = 0.23;
        c.pi_source = parse_density_source("eigenfunction:7");
        c.rho0_source = parse_density_source("eigenfunction:2");
        c.dt = 0.05;
        c.steps = 10000;
        c.snapshot_stride = 500;
        c.out_dir = "out/klein-paper";
        return c;
    }
    if (name == "torus-desk") {
        c.kind = "flat_torus";
        c.n = 400;
        c.seed = 5;
        c.sampler = "stratified";
        c.coords = "ambient";
        c.r = 0.15;
        c.pi_source = parse_density_source("expr:cos_band_x");
        c.rho0_source = parse_density_source("expr:one_plus_half_cos_x");
        c.dt = 0.05;
        c.steps = 200;
        c.out_dir = "out/torus-desk";
        return c;
    }
    throw config_error("unknown preset '" + name + "'");
}

// ---- pipeline ----------------------------------------------------------------

struct PipelineSelect {
    bool tessellate = true;
    bool assemble = true;
    bool solve = true;
    bool gap = true;
};

struct RunResult {
    PointCloud cloud;  // ambient points (after any isometric embedding)
    bool has_embedding = false;
    SpectralEmbedding embedding;
    PointCloud sites;  // coordinates the tessellation and generator use
    bool has_tessellation = false;
    Tessellation tess;
    bool has_generator = false;
    Generator gen;
    Eigen::VectorXd rho0;
    bool has_solution = false;
    DensityState final_state;
    bool has_gap = false;
    double mu2 = 0.0;
    double eps_used = 0.0;
    double adjust_c = 1.0;
    double pi_shift = 0.0;
    double rho0_shift = 0.0;
    json manifest;
};

namespace detail {

template <class F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (config_error& e) {
        throw config_error(std::string("stage ") + name + ": " + e.what());
    } catch (numeric_error& e) {
        throw numeric_error(std::string("stage ") + name + ": " + e.what());
    }
}

// Evaluates one density source to raw positive per-cell values; `shift`
// reports any additive positivity shift applied.
inline Eigen::VectorXd density_values(const DensitySource& src, double floor, double kT,
                                      const RunResult& R, const Eigen::VectorXd* pi,
                                      double& shift) {
    const int n = R.cloud.n();
    shift = 0.0;
    switch (src.kind) {
        case DensitySource::Kind::uniform:
            return Eigen::VectorXd::Ones(n);
        case DensitySource::Kind::pi:
            if (!pi) throw config_error("density source 'pi' is only valid for rho0");
            return *pi;
        case DensitySource::Kind::eigenfunction:
            if (!R.has_embedding)
                throw config_error("eigenfunction density source needs the spectral stage");
            return eigenfunction_density(R.embedding, src.index, floor, &shift);
        case DensitySource::Kind::potential: {
            Eigen::MatrixXd m = read_csv(src.arg);
            if (m.rows() != n || m.cols() != 1)
                throw config_error("potential file " + src.arg + " must have " +
                                   std::to_string(n) + " rows, one column");
            return ((-m.col(0).array() / kT).exp()).matrix();
        }
        case DensitySource::Kind::direct: {
            Eigen::MatrixXd m = read_csv(src.arg);
            if (m.rows() != n || m.cols() != 1)
                throw config_error("density file " + src.arg + " must have " +
                                   std::to_string(n) + " rows, one column");
            Eigen::VectorXd v = m.col(0);
            double lo = v.minCoeff();
            if (lo <= 0.0) {
                shift = -lo + floor;
                v.array() += shift;
            }
            return v;
        }
        case DensitySource::Kind::expr: {
            Eigen::VectorXd v(n);
            for (int i = 0; i < n; ++i)
                v[i] = eval_profile(src.arg, R.cloud.points.row(i).transpose());
            double lo = v.minCoeff();
            if (lo <= 0.0) {
                shift = -lo + floor;
                v.array() += shift;
            }
            return v;
        }
    }
    throw config_error("bad density source");
}

}  // namespace detail

inline RunResult run_pipeline(const ExperimentConfig& cfg, const PipelineSelect& sel,
                              bool want_spectral = false) {
    validate_config(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    auto path = [&](const char* f) { return cfg.out_dir + "/" + f; };

    RunResult R;

    detail::stage("sample", [&] {
        if (cfg.kind == "csv")
            R.cloud = load_cloud(cfg.input, cfg.d, cfg.meta);
        else
            R.cloud = sample_manifold(parse_manifold_kind(cfg.kind), cfg.n,
                                      static_cast<std::uint64_t>(cfg.seed),
                                      parse_sampler(cfg.sampler));
        if (cfg.p != 0 || cfg.scale != 1.0) {
            int p = cfg.p == 0 ? R.cloud.dim() : cfg.p;
            R.cloud = embed_ambient(R.cloud, p, cfg.scale, cfg.embed_seed);
        }
        return 0;
    });

    bool need_spectral = want_spectral;
    if (sel.tessellate && cfg.coords == "diffusion") need_spectral = true;
    int max_index = 0;
    if (sel.assemble) {
        if (cfg.pi_source.kind == DensitySource::Kind::eigenfunction) {
            need_spectral = true;
            max_index = std::max(max_index, cfg.pi_source.index);
        }
        if (cfg.rho0_source.kind == DensitySource::Kind::eigenfunction) {
            need_spectral = true;
            max_index = std::max(max_index, cfg.rho0_source.index);
        }
    }

    if (need_spectral) {
        detail::stage("spectral", [&] {
            R.eps_used = cfg.eps > 0.0 ? cfg.eps : default_bandwidth(R.cloud);
            int extra = std::max(cfg.extra, max_index - cfg.ell);
            R.embedding = spectral_embed(R.cloud, R.eps_used, cfg.ell, cfg.alpha, extra);
            R.has_embedding = true;
            return 0;
        });
    }

    if (sel.tessellate) {
        detail::stage("tessellate", [&] {
            if (cfg.coords == "diffusion") {
                R.sites.points = R.embedding.coords;
                R.sites.intrinsic_dim = cfg.d;
                R.sites.label = R.cloud.label + "-coords";
            } else {
                R.sites = R.cloud;
            }
            R.sites.validate();
            R.tess = build_tessellation(R.sites, cfg.r, cfg.s);
            R.has_tessellation = true;
            return 0;
        });
    }

    Eigen::VectorXd pi;
    if (sel.assemble) {
        detail::stage("assemble", [&] {
            Eigen::VectorXd pv = detail::density_values(cfg.pi_source, cfg.pi_floor, cfg.kT,
                                                        R, nullptr, R.pi_shift);
            pi = equilibrium_weights(pv, R.tess.volumes);
            R.gen = assemble_generator(R.tess, R.sites, pi);
            R.gen.kT = cfg.kT;
            R.has_generator = true;
            Eigen::VectorXd rv = detail::density_values(cfg.rho0_source, cfg.rho0_floor,
                                                        cfg.kT, R, &pi, R.rho0_shift);
            R.rho0 = equilibrium_weights(rv, R.tess.volumes);
            if (cfg.scheme == "unconditional") {
                Eigen::VectorXd adjusted = adjust_initial(R.rho0, R.gen, cfg.dt);
                R.adjust_c = adjusted.norm() / R.rho0.norm();
                R.rho0 = adjusted;
            }
            return 0;
        });
    }

    if (sel.gap && sel.assemble) {
        detail::stage("gap", [&] {
            R.mu2 = theoretic_decay_rate(R.gen, cfg.dt);
            R.has_gap = true;
            return 0;
        });
    }

    if (sel.solve && sel.assemble) {
        detail::stage("solve", [&] {
            TrajectoryWriter tw(path("trajectory.csv"), cfg.snapshot_stride,
                                path("snapshots.csv"));
            DensityState st;
            st.rho = R.rho0;
            st.step = 0;
            st.dt = cfg.dt;
            st.scheme = cfg.scheme;
            tw.record(st, R.gen);
            if (cfg.scheme == "implicit") {
                ImplicitStepper stepper(R.gen, cfg.dt);
                for (long k = 0; k < cfg.steps; ++k) {
                    st = stepper.step(st, R.gen);
                    tw.record(st, R.gen);
                }
            } else if (cfg.scheme == "explicit") {
                for (long k = 0; k < cfg.steps; ++k) {
                    st = step_explicit_cfl(st, R.gen, cfg.dt);
                    tw.record(st, R.gen);
                }
            } else {
                for (long k = 0; k < cfg.steps; ++k) {
                    st = step_unconditional(st, R.gen, cfg.dt);
                    tw.record(st, R.gen);
                }
            }
            R.final_state = st;
            R.has_solution = true;
            return 0;
        });
    }

    detail::stage("write", [&] {
        json cloud_meta;
        cloud_meta["kind"] = cfg.kind;
        cloud_meta["seed"] = cfg.seed;
        cloud_meta["scale"] = cfg.scale;
        save_cloud(path("points.csv"), path("points.json"), R.cloud, cloud_meta);
        if (R.has_embedding)
            save_embedding(path("coords.csv"), path("embedding.json"), R.embedding);
        if (R.has_tessellation)
            write_json(path("tessellation.json"), tessellation_to_json(R.tess));
        if (R.has_generator)
            write_json(path("generator.json"), generator_to_json(R.gen));
        if (R.has_solution)
            write_csv(path("final_density.csv"), R.final_state.rho);

        std::ofstream cf(path("config.ini"));
        if (!cf) throw config_error("cannot write config copy");
        cf << serialize_config(cfg);

        json man;
        man["version"] = version_string();
        man["versions"]["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION);
        man["versions"]["compiler"] =
            "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
        man["config_text"] = serialize_config(cfg);
        json& der = man["derived"];
        der["n"] = R.cloud.n();
        der["ambient_dim"] = R.cloud.dim();
        if (R.has_embedding) {
            der["eps_used"] = R.eps_used;
            der["eigenvalues"] = vector_to_json(R.embedding.eigenvalues);
        }
        if (R.has_tessellation) {
            der["total_volume"] = R.tess.volumes.sum();
            der["num_faces"] = R.tess.faces.size();
        }
        if (R.has_generator) {
            der["cfl_bound"] = cfl_bound(R.gen);
            der["adjust_c"] = R.adjust_c;
            der["pi_shift"] = R.pi_shift;
            der["rho0_shift"] = R.rho0_shift;
        }
        if (R.has_gap) der["mu2"] = R.mu2;
        if (R.has_solution) {
            Diagnostics dg = diagnostics(R.final_state, R.gen);
            der["final_mass"] = dg.mass;
            der["final_chi2"] = dg.chi2;
            der["final_linf_err"] = dg.linf_err;
        }
        R.manifest = man;
        write_json(path("manifest.json"), man);
        return 0;
    });

    return R;
}

inline RunResult run_experiment(const ExperimentConfig& cfg) {
    return run_pipeline(cfg, PipelineSelect{});
}

// ---- convergence study --------------------------------------------------------

struct ConvergenceRow {
    int n = 0;
    double r = 0.0;
    long steps = 0;
    double distance = 0.0;  // weighted L2 distance to the finest level
};

// Re-runs the base config at each level with r(n) = r0 sqrt(n0/n) (so n r^d
// stays bounded) to the fixed time T = steps * dt, then measures each level's
// weighted L2 distance to the finest level's solution carried over by
// nearest-site lookup in ambient coordinates.
inline std::vector<ConvergenceRow> convergence_study(const ExperimentConfig& base,
                                                     const std::vector<int>& levels) {
    if (levels.size() < 3) throw config_error("convergence_study: need at least 3 levels");
    if (base.kind == "csv")
        throw config_error("convergence_study: needs a sampled manifold, not csv input");
    if (base.coords != "ambient")
        throw config_error("convergence_study: requires tessellation.coords = ambient "
                           "(diffusion coordinates are not comparable across levels)");
    auto level_ok = [](const DensitySource& s) {
        return s.kind == DensitySource::Kind::uniform || s.kind == DensitySource::Kind::expr ||
               s.kind == DensitySource::Kind::pi;
    };
    if (!level_ok(base.pi_source) || !level_ok(base.rho0_source))
        throw config_error("convergence_study: pi and rho0 must be level-independent "
                           "(uniform, expr:NAME, or pi)");

    const double T = static_cast<double>(base.steps) * base.dt;
    std::vector<RunResult> runs;
    std::vector<ConvergenceRow> rows;
    int finest = 0;
    for (size_t k = 0; k < levels.size(); ++k) {
        ExperimentConfig c = base;
        c.n = levels[k];
        c.r = base.r * std::sqrt(static_cast<double>(base.n) / levels[k]);
        c.steps = std::lround(T / c.dt);
        c.out_dir = base.out_dir + "/level" + std::to_string(k) + "_n" +
                    std::to_string(levels[k]);
        PipelineSelect sel;
        sel.gap = false;
        runs.push_back(run_pipeline(c, sel));
        rows.push_back({levels[k], c.r, c.steps, 0.0});
        if (levels[k] > levels[finest]) finest = static_cast<int>(k);
    }

    const RunResult& fine = runs[finest];
    for (size_t k = 0; k < runs.size(); ++k) {
        const RunResult& rk = runs[k];
        double acc = 0.0;
        const bool wrap = rk.sites.periodic();
        for (int i = 0; i < rk.sites.n(); ++i) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int j = 0; j < fine.sites.n(); ++j) {
                Eigen::VectorXd d = (rk.sites.points.row(i) - fine.sites.points.row(j)).transpose();
                if (wrap)
                    for (Eigen::Index c = 0; c < d.size(); ++c) {
                        double box = rk.sites.periodic_box[c];
                        d[c] -= box * std::round(d[c] / box);
                    }
                double dist2 = d.squaredNorm();
                if (dist2 < bd) {
                    bd = dist2;
                    best = j;
                }
            }
            double e = rk.final_state.rho[i] - fine.final_state.rho[best];
            acc += e * e * rk.gen.volumes[i] / rk.gen.pi[i];
        }
        rows[k].distance = std::sqrt(acc);
    }

    std::ofstream out(base.out_dir + "/convergence.csv");
    if (!out) throw config_error("convergence_study: cannot write table");
    out << "n,r,steps,distance\n";
    for (const auto& row : rows)
        out << row.n << "," << format_double(row.r) << "," << row.steps << ","
            << format_double(row.distance) << "\n";
    return rows;
}

}  // namespace mfp
