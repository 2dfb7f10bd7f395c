#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include "mfp/cloud.hpp"
#include "mfp/errors.hpp"
#include "mfp/linalg.hpp"
#include "mfp/voronoi.hpp"

namespace mfp {

// Detailed-balance Markov generator of the finite-volume scheme. For every
// face pair the jump rates and transition probabilities satisfy
//   lambda_i P_ij pi_i |C_i| = lambda_j P_ji pi_j |C_j|
//                            = (pi_i + pi_j) |G_ij| / (2 |y_i - y_j|).
struct Generator {
    Eigen::VectorXd lambda;              // jump rates
    std::vector<std::vector<int>> nbr;   // VF(i)
    std::vector<std::vector<double>> P;  // P_ij aligned with nbr[i]
    Eigen::VectorXd pi;                  // equilibrium weights, sum pi_i |C_i| = 1
    Eigen::VectorXd volumes;             // cell volumes |C_i|
    Eigen::MatrixXd coords;              // site coordinates (rows)
    double kT = 1.0;

    struct FaceFlux {
        int i, j;          // i < j
        double gamma;      // face area
        double dist;       // |y_i - y_j|
        double flux;       // (pi_i+pi_j) gamma / (2 dist) = lambda_i P_ij pi_i |C_i|
    };
    std::vector<FaceFlux> faces;

    int n() const { return static_cast<int>(lambda.size()); }

    // Dense Q-matrix: Q_ii = -lambda_i, Q_ij = lambda_i P_ij.
    Eigen::MatrixXd Q() const {
        const int m = n();
        Eigen::MatrixXd q = Eigen::MatrixXd::Zero(m, m);
        for (int i = 0; i < m; ++i) {
            q(i, i) = -lambda[i];
            for (size_t a = 0; a < nbr[i].size(); ++a) q(i, nbr[i][a]) = lambda[i] * P[i][a];
        }
        return q;
    }
};

// Normalizes positive per-cell values into equilibrium weights with
// sum pi_i |C_i| = 1.
inline Eigen::VectorXd equilibrium_weights(const Eigen::VectorXd& values,
                                           const Eigen::VectorXd& volumes) {
    if (values.size() != volumes.size())
        throw config_error("equilibrium_weights: length mismatch");
    if ((values.array() <= 0.0).any())
        throw config_error("equilibrium_weights: values must be positive");
    double z = values.dot(volumes);
    return values / z;
}

// Boltzmann weights from a per-cell potential: z_i = exp(-U_i / kT).
inline Eigen::VectorXd equilibrium_weights_potential(const Eigen::VectorXd& U, double kT,
                                                     const Eigen::VectorXd& volumes) {
    if (kT <= 0.0) throw config_error("equilibrium_weights: kT must be positive");
    if (!U.allFinite()) throw config_error("equilibrium_weights: non-finite potential");
    Eigen::VectorXd z = (-U.array() / kT).exp().matrix();
    return equilibrium_weights(z, volumes);
}

namespace detail {

// Connected components of the face graph, as a component label per node.
inline std::vector<int> face_components(const std::vector<std::vector<int>>& nbr) {
    const int n = static_cast<int>(nbr.size());
    std::vector<int> comp(n, -1);
    int ncomp = 0;
    for (int start = 0; start < n; ++start) {
        if (comp[start] >= 0) continue;
        std::queue<int> q;
        q.push(start);
        comp[start] = ncomp;
        while (!q.empty()) {
            int v = q.front();
            q.pop();
            for (int w : nbr[v])
                if (comp[w] < 0) {
                    comp[w] = ncomp;
                    q.push(w);
                }
        }
        ++ncomp;
    }
    return comp;
}

inline std::string component_size_summary(const std::vector<int>& comp) {
    int ncomp = 0;
    for (int c : comp) ncomp = std::max(ncomp, c + 1);
    std::vector<int> sizes(ncomp, 0);
    for (int c : comp) ++sizes[c];
    std::string msg = std::to_string(ncomp) + " components of sizes";
    for (int s : sizes) msg += " " + std::to_string(s);
    return msg;
}

}  // namespace detail

// Assembles the generator from a tessellation, site coordinates, and
// equilibrium weights. Rejects disconnected face graphs unless
// require_connected is false (stepping on non-ergodic inputs is legal, the
// decay rate is not).
inline Generator assemble_generator(const Tessellation& tess, const PointCloud& coords,
                                    const Eigen::VectorXd& pi,
                                    bool require_connected = true) {
    const int n = tess.n();
    if (coords.n() != n || pi.size() != n)
        throw config_error("assemble_generator: size mismatch");
    if ((pi.array() <= 0.0).any())
        throw config_error("assemble_generator: equilibrium weights must be positive");
    if ((tess.volumes.array() <= 0.0).any())
        throw numeric_error("assemble_generator: nonpositive cell volume");

    for (int i = 0; i < n; ++i)
        if (tess.neighbors[i].empty())
            throw numeric_error("assemble_generator: isolated point " + std::to_string(i) +
                                " (empty face list)");
    std::vector<int> comp = detail::face_components(tess.neighbors);
    if (require_connected) {
        bool connected = true;
        for (int c : comp)
            if (c != 0) connected = false;
        if (!connected)
            throw numeric_error("assemble_generator: face graph disconnected (" +
                                detail::component_size_summary(comp) + ")");
    }

    Generator gen;
    gen.pi = pi;
    gen.volumes = tess.volumes;
    gen.coords = coords.points;
    gen.lambda.resize(n);
    gen.nbr = tess.neighbors;
    gen.P.assign(n, {});

    for (const auto& [key, gamma] : tess.faces) {
        auto [i, j] = key;
        double dist = coords.distance(i, j);
        if (dist <= 0.0)
            throw numeric_error("assemble_generator: coincident sites " +
                                std::to_string(i) + ", " + std::to_string(j));
        double flux = 0.5 * (pi[i] + pi[j]) * gamma / dist;
        gen.faces.push_back({i, j, gamma, dist, flux});
    }

    // lambda_i = (sum of incident fluxes) / (pi_i |C_i|); P_ij = flux_ij / sum.
    Eigen::VectorXd fluxsum = Eigen::VectorXd::Zero(n);
    std::map<std::pair<int, int>, double> flux_of;
    for (const auto& f : gen.faces) {
        fluxsum[f.i] += f.flux;
        fluxsum[f.j] += f.flux;
        flux_of[{f.i, f.j}] = f.flux;
    }
    for (int i = 0; i < n; ++i) {
        gen.lambda[i] = fluxsum[i] / (gen.pi[i] * gen.volumes[i]);
        gen.P[i].reserve(gen.nbr[i].size());
        for (int j : gen.nbr[i]) {
            auto it = flux_of.find({std::min(i, j), std::max(i, j)});
            gen.P[i].push_back(it->second / fluxsum[i]);
        }
    }

    // Build-time verification of the detailed-balance identity.
    for (const auto& f : gen.faces) {
        auto check = [&](int a, int b) {
            const auto& lst = gen.nbr[a];
            size_t pos = std::lower_bound(lst.begin(), lst.end(), b) - lst.begin();
            double lhs = gen.lambda[a] * gen.P[a][pos] * gen.pi[a] * gen.volumes[a];
            if (std::abs(lhs - f.flux) > 1e-12 * std::max(std::abs(f.flux), 1e-300))
                throw numeric_error("assemble_generator: detailed balance violated on face (" +
                                    std::to_string(f.i) + "," + std::to_string(f.j) + ")");
        };
        check(f.i, f.j);
        check(f.j, f.i);
    }
    return gen;
}

// Per-cell density with its step counter.
struct DensityState {
    Eigen::VectorXd rho;
    long step = 0;
    double dt = 0.0;
    std::string scheme;
};

// Scales rho0 so that the weighted initial mass matches the equilibrium's:
// c = sum (1+lambda dt) pi |C| / sum (1+lambda dt) rho0 |C|.
inline Eigen::VectorXd adjust_initial(const Eigen::VectorXd& rho0, const Generator& gen,
                                      double dt) {
    if (rho0.size() != gen.lambda.size())
        throw config_error("adjust_initial: length mismatch");
    if ((rho0.array() < 0.0).any())
        throw config_error("adjust_initial: negative initial density");
    Eigen::ArrayXd w = (1.0 + gen.lambda.array() * dt) * gen.volumes.array();
    double denom = (w * rho0.array()).sum();
    if (denom <= 0.0) throw numeric_error("adjust_initial: zero initial mass");
    double c = (w * gen.pi.array()).sum() / denom;
    return c * rho0;
}

namespace detail {

inline void check_state(const DensityState& state, const Generator& gen,
                        const char* who) {
    if (state.rho.size() != gen.lambda.size())
        throw config_error(std::string(who) + ": state length mismatch");
    if (!state.rho.allFinite())
        throw numeric_error(std::string(who) + ": non-finite density");
}

// One application of the neighbor-average: out_i = sum_j P_ij u_j.
inline Eigen::VectorXd transition_average(const Generator& gen, const Eigen::VectorXd& u) {
    const int n = gen.n();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        const auto& lst = gen.nbr[i];
        for (size_t a = 0; a < lst.size(); ++a) acc += gen.P[i][a] * u[lst[a]];
        out[i] = acc;
    }
    return out;
}

}  // namespace detail

// Unconditionally stable explicit step:
//   u^{k+1}_i = (u^k_i + dt lambda_i sum_j P_ij u^k_j) / (1 + lambda_i dt).
// Conserves sum (1+lambda dt) rho |C| and contracts toward equilibrium for
// every dt > 0.
inline DensityState step_unconditional(const DensityState& state, const Generator& gen,
                                       double dt) {
    detail::check_state(state, gen, "step_unconditional");
    if (dt <= 0.0) throw config_error("step_unconditional: dt must be positive");
    Eigen::VectorXd u = (state.rho.array() / gen.pi.array()).matrix();
    Eigen::VectorXd avg = detail::transition_average(gen, u);
    Eigen::ArrayXd unew =
        (u.array() + dt * gen.lambda.array() * avg.array()) /
        (1.0 + gen.lambda.array() * dt);
    DensityState out;
    out.rho = (unew * gen.pi.array()).matrix();
    out.step = state.step + 1;
    out.dt = dt;
    out.scheme = "unconditional";
    return out;
}

// Largest admissible forward-Euler step: min_i 1/lambda_i.
inline double cfl_bound(const Generator& gen) { return 1.0 / gen.lambda.maxCoeff(); }

// Plain forward-Euler step, valid only under the CFL bound; conserves
// sum rho |C| exactly.
inline DensityState step_explicit_cfl(const DensityState& state, const Generator& gen,
                                      double dt) {
    detail::check_state(state, gen, "step_explicit_cfl");
    if (dt <= 0.0) throw config_error("step_explicit_cfl: dt must be positive");
    double bound = cfl_bound(gen);
    if (dt > bound)
        throw numeric_error("step_explicit_cfl: dt = " + std::to_string(dt) +
                            " violates the CFL bound min 1/lambda = " +
                            std::to_string(bound));
    Eigen::VectorXd u = (state.rho.array() / gen.pi.array()).matrix();
    Eigen::VectorXd avg = detail::transition_average(gen, u);
    Eigen::ArrayXd unew = u.array() + dt * gen.lambda.array() * (avg.array() - u.array());
    DensityState out;
    out.rho = (unew * gen.pi.array()).matrix();
    out.step = state.step + 1;
    out.dt = dt;
    out.scheme = "explicit";
    return out;
}

// Backward-Euler step: solves (I - dt Q) u^{k+1} = u^k. Unconditionally
// stable; conserves sum rho |C|.
inline DensityState step_implicit(const DensityState& state, const Generator& gen,
                                  double dt) {
    detail::check_state(state, gen, "step_implicit");
    if (dt <= 0.0) throw config_error("step_implicit: dt must be positive");
    const int n = gen.n();
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n) - dt * gen.Q();
    Eigen::VectorXd u = (state.rho.array() / gen.pi.array()).matrix();
    Eigen::VectorXd unew = solve_linear(M, u);
    DensityState out;
    out.rho = (unew.array() * gen.pi.array()).matrix();
    out.step = state.step + 1;
    out.dt = dt;
    out.scheme = "implicit";
    return out;
}

// Reuses one LU factorization of (I - dt Q) across many implicit steps.
// Identical algorithm and results as step_implicit, without the per-step
// factorization cost.
class ImplicitStepper {
  public:
    ImplicitStepper(const Generator& gen, double dt) : dt_(dt) {
        if (dt <= 0.0) throw config_error("ImplicitStepper: dt must be positive");
        const int n = gen.n();
        Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n) - dt * gen.Q();
        lu_.compute(M);
        Eigen::VectorXd udiag = lu_.matrixLU().diagonal().cwiseAbs();
        if (udiag.minCoeff() <= udiag.maxCoeff() * 1e-280)
            throw numeric_error("ImplicitStepper: singular system");
    }

    DensityState step(const DensityState& state, const Generator& gen) const {
        detail::check_state(state, gen, "ImplicitStepper");
        Eigen::VectorXd u = (state.rho.array() / gen.pi.array()).matrix();
        Eigen::VectorXd unew = lu_.solve(u);
        DensityState out;
        out.rho = (unew.array() * gen.pi.array()).matrix();
        out.step = state.step + 1;
        out.dt = dt_;
        out.scheme = "implicit";
        return out;
    }

  private:
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
    double dt_;
};

// Second-largest eigenvalue magnitude of the one-step operator I + dt Qhat,
// where Qhat has diagonal -lambda_i/(1+lambda_i dt) and off-diagonal
// lambda_i P_ij/(1+lambda_i dt). The operator is self-adjoint in the weights
// w_i = (1+lambda_i dt) pi_i |C_i|; conjugation by sqrt(w) makes it symmetric
// exactly (up to roundoff), so the spectrum is real and the leading value 1.
inline double theoretic_decay_rate(const Generator& gen, double dt) {
    if (dt <= 0.0) throw config_error("theoretic_decay_rate: dt must be positive");
    const int n = gen.n();
    std::vector<int> comp = detail::face_components(gen.nbr);
    for (int c : comp)
        if (c != 0)
            throw numeric_error("theoretic_decay_rate: non-ergodic generator (mu2 = 1; " +
                                detail::component_size_summary(comp) + ")");

    Eigen::ArrayXd denom = 1.0 + gen.lambda.array() * dt;
    Eigen::ArrayXd w = denom * gen.pi.array() * gen.volumes.array();
    Eigen::ArrayXd sqw = w.sqrt();

    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        M(i, i) = 1.0 / denom[i];
        const auto& lst = gen.nbr[i];
        for (size_t a = 0; a < lst.size(); ++a) {
            int j = lst[a];
            M(i, j) = dt * gen.lambda[i] * gen.P[i][a] / denom[i];
        }
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) M(i, j) *= sqw[i] / sqw[j];
    M = 0.5 * (M + M.transpose()).eval();

    SymmetricEigenResult eig = sym_eig(M, n);
    double top = eig.eigenvalues[n - 1];
    if (std::abs(top - 1.0) > 1e-8)
        throw numeric_error("theoretic_decay_rate: leading eigenvalue " +
                            std::to_string(top) + " deviates from 1");
    double mu2 = std::max(std::abs(eig.eigenvalues[0]),
                          n >= 2 ? std::abs(eig.eigenvalues[n - 2]) : 0.0);
    return mu2;
}

// Scalar functionals of a density state.
struct Diagnostics {
    double mass = 0.0;           // sum rho |C|
    double weighted_mass = 0.0;  // sum (1+lambda dt) rho |C|
    double chi2 = 0.0;           // sum rho^2 |C| / pi
    double linf_err = 0.0;       // max |rho/pi - 1|
    double l2w_err = 0.0;        // sum (rho-ref)^2 |C| / pi, if a reference is given
    bool has_ref = false;
};

inline Diagnostics diagnostics(const DensityState& state, const Generator& gen,
                               const Eigen::VectorXd* reference = nullptr) {
    detail::check_state(state, gen, "diagnostics");
    Diagnostics diag;
    const Eigen::ArrayXd rho = state.rho.array();
    const Eigen::ArrayXd vol = gen.volumes.array();
    const Eigen::ArrayXd pi = gen.pi.array();
    diag.mass = (rho * vol).sum();
    diag.weighted_mass = ((1.0 + gen.lambda.array() * state.dt) * rho * vol).sum();
    diag.chi2 = (rho * rho * vol / pi).sum();
    diag.linf_err = (rho / pi - 1.0).abs().maxCoeff();
    if (reference) {
        if (reference->size() != state.rho.size())
            throw config_error("diagnostics: reference length mismatch");
        Eigen::ArrayXd e = rho - reference->array();
        diag.l2w_err = (e * e * vol / pi).sum();
        diag.has_ref = true;
    }
    return diag;
}

}  // namespace mfp
