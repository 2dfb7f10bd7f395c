#include <CLI11.hpp>
#include <Eigen/Core>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "mfp/experiment.hpp"

namespace {

struct Opts {
    std::string config_path, preset;
    std::string kind, input, meta, sampler, coords, pi, rho0, scheme, out;
    std::int64_t seed = 0, embed_seed = 0;
    int n = 0, d = 0, p = 0, ell = 0, extra = 0, stride = 0;
    long steps = 0;
    double eps = 0, alpha = 0, scale = 0, r = 0, s = 0;
    double pi_floor = 0, rho0_floor = 0, kT = 0, dt = 0;
    std::vector<int> levels;
};

void add_common_options(CLI::App* sub, Opts& o) {
    sub->add_option("config", o.config_path, "experiment config file");
    sub->add_option("--preset", o.preset, "start from a built-in preset")
        ->check(CLI::IsMember(mfp::preset_names()));
    sub->add_option("--kind", o.kind, "manifold kind (or 'csv' with --input)");
    sub->add_option("--input", o.input, "point CSV when kind = csv");
    sub->add_option("--meta", o.meta, "metadata JSON for --input");
    sub->add_option("--n", o.n, "number of sample points");
    sub->add_option("--d", o.d, "intrinsic dimension");
    sub->add_option("--seed", o.seed, "sampling seed");
    sub->add_option("--sampler", o.sampler, "uniform | stratified");
    sub->add_option("--p", o.p, "ambient dimension after embedding (0 = keep)");
    sub->add_option("--scale", o.scale, "isometric scale factor");
    sub->add_option("--embed-seed", o.embed_seed, "rotation seed (-1 = axis padding)");
    sub->add_option("--eps", o.eps, "kernel bandwidth (0 = auto)");
    sub->add_option("--alpha", o.alpha, "density normalization exponent");
    sub->add_option("--ell", o.ell, "number of reaction coordinates");
    sub->add_option("--extra", o.extra, "extra eigenpairs beyond ell");
    sub->add_option("--coords", o.coords, "tessellation coordinates: diffusion | ambient");
    sub->add_option("--r", o.r, "tessellation ball radius");
    sub->add_option("--s", o.s, "face area floor");
    sub->add_option("--pi", o.pi, "equilibrium density source");
    sub->add_option("--pi-floor", o.pi_floor, "positivity floor for pi");
    sub->add_option("--rho0", o.rho0, "initial density source");
    sub->add_option("--rho0-floor", o.rho0_floor, "positivity floor for rho0");
    sub->add_option("--kT", o.kT, "temperature for potential sources");
    sub->add_option("--dt", o.dt, "time step");
    sub->add_option("--steps", o.steps, "number of steps");
    sub->add_option("--scheme", o.scheme, "unconditional | explicit | implicit");
    sub->add_option("--stride", o.stride, "density snapshot stride (0 = none)");
    sub->add_option("--out", o.out, "output directory");
}

mfp::ExperimentConfig build_config(const CLI::App* sub, const Opts& o) {
    if (!o.config_path.empty() && !o.preset.empty())
        throw mfp::config_error("give either a config file or --preset, not both");
    mfp::ExperimentConfig cfg;
    if (!o.config_path.empty())
        cfg = mfp::load_config(o.config_path);
    else if (!o.preset.empty())
        cfg = mfp::preset_config(o.preset);

    auto given = [&](const char* name) { return sub->count(name) > 0; };
    if (given("--kind")) cfg.kind = o.kind;
    if (given("--input")) cfg.input = o.input;
    if (given("--meta")) cfg.meta = o.meta;
    if (given("--n")) cfg.n = o.n;
    if (given("--d")) cfg.d = o.d;
    if (given("--seed")) cfg.seed = o.seed;
    if (given("--sampler")) cfg.sampler = o.sampler;
    if (given("--p")) cfg.p = o.p;
    if (given("--scale")) cfg.scale = o.scale;
    if (given("--embed-seed")) cfg.embed_seed = o.embed_seed;
    if (given("--eps")) cfg.eps = o.eps;
    if (given("--alpha")) cfg.alpha = o.alpha;
    if (given("--ell")) cfg.ell = o.ell;
    if (given("--extra")) cfg.extra = o.extra;
    if (given("--coords")) cfg.coords = o.coords;
    if (given("--r")) cfg.r = o.r;
    if (given("--s")) cfg.s = o.s;
    if (given("--pi")) cfg.pi_source = mfp::parse_density_source(o.pi);
    if (given("--pi-floor")) cfg.pi_floor = o.pi_floor;
    if (given("--rho0")) cfg.rho0_source = mfp::parse_density_source(o.rho0);
    if (given("--rho0-floor")) cfg.rho0_floor = o.rho0_floor;
    if (given("--kT")) cfg.kT = o.kT;
    if (given("--dt")) cfg.dt = o.dt;
    if (given("--steps")) cfg.steps = o.steps;
    if (given("--scheme")) cfg.scheme = o.scheme;
    if (given("--stride")) cfg.snapshot_stride = o.stride;
    if (given("--out")) cfg.out_dir = o.out;
    return cfg;
}

void apply_thread_env() {
    const char* env = std::getenv("MFP_THREADS");
    if (!env) return;
    std::string v(env);
    int k = 0;
    try {
        size_t pos = 0;
        k = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw mfp::config_error("MFP_THREADS must be a positive integer, got '" + v + "'");
    }
    if (k < 1) throw mfp::config_error("MFP_THREADS must be a positive integer, got '" + v + "'");
    Eigen::setNbThreads(k);
}

void report(const mfp::RunResult& R, const mfp::ExperimentConfig& cfg) {
    std::cout << "points: " << R.cloud.n() << " x " << R.cloud.dim() << "\n";
    if (R.has_embedding) {
        std::cout << "bandwidth: " << mfp::format_double(R.eps_used) << "\n";
        std::cout << "eigenvalues:";
        for (Eigen::Index i = 0; i < R.embedding.eigenvalues.size(); ++i)
            std::cout << " " << mfp::format_double(R.embedding.eigenvalues[i]);
        std::cout << "\n";
    }
    if (R.has_tessellation)
        std::cout << "tessellation: " << R.tess.faces.size() << " faces, total volume "
                  << mfp::format_double(R.tess.volumes.sum()) << "\n";
    if (R.has_gap) std::cout << "mu2: " << mfp::format_double(R.mu2) << "\n";
    if (R.has_solution) {
        mfp::Diagnostics dg = mfp::diagnostics(R.final_state, R.gen);
        std::cout << "final state after " << R.final_state.step
                  << " steps: mass " << mfp::format_double(dg.mass) << ", linf error "
                  << mfp::format_double(dg.linf_err) << "\n";
    }
    std::cout << "outputs in " << cfg.out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"manifold Fokker-Planck pipeline"};
    app.set_version_flag("--version", mfp::version_string());
    app.require_subcommand(1);

    Opts o;
    CLI::App* c_sample = app.add_subcommand("sample", "sample a manifold point cloud");
    CLI::App* c_embed = app.add_subcommand("embed", "compute reaction coordinates");
    CLI::App* c_tess = app.add_subcommand("tessellate", "build the Voronoi tessellation");
    CLI::App* c_solve = app.add_subcommand("solve", "evolve the density");
    CLI::App* c_gap = app.add_subcommand("gap", "compute the spectral gap mu2");
    CLI::App* c_conv = app.add_subcommand("converge", "run a refinement study");
    CLI::App* c_all = app.add_subcommand("all", "run the full pipeline");
    for (CLI::App* sub : {c_sample, c_embed, c_tess, c_solve, c_gap, c_conv, c_all})
        add_common_options(sub, o);
    c_conv->add_option("--levels", o.levels, "refinement sizes, e.g. 500,1000,2000")
        ->delimiter(',')
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        apply_thread_env();
        mfp::ExperimentConfig cfg = build_config(sub, o);
        mfp::PipelineSelect sel;
        const std::string name = sub->get_name();
        if (name == "converge") {
            auto rows = mfp::convergence_study(cfg, o.levels);
            std::cout << "n,r,steps,distance\n";
            for (const auto& row : rows)
                std::cout << row.n << "," << mfp::format_double(row.r) << "," << row.steps
                          << "," << mfp::format_double(row.distance) << "\n";
            std::cout << "outputs in " << cfg.out_dir << "\n";
            return 0;
        }
        bool want_spectral = false;
        if (name == "sample") {
            sel.tessellate = sel.assemble = sel.solve = sel.gap = false;
        } else if (name == "embed") {
            sel.tessellate = sel.assemble = sel.solve = sel.gap = false;
            want_spectral = true;
        } else if (name == "tessellate") {
            sel.assemble = sel.solve = sel.gap = false;
        } else if (name == "gap") {
            sel.solve = false;
        } else if (name == "solve") {
            sel.gap = false;
        }
        mfp::RunResult R = mfp::run_pipeline(cfg, sel, want_spectral);
        report(R, cfg);
        return 0;
    } catch (const mfp::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const mfp::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
