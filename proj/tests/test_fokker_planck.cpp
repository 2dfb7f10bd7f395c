#include "mfp/fokker_planck.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "mfp/errors.hpp"
#include "mfp/manifolds.hpp"
#include "mfp/rng.hpp"
#include "mfp/voronoi.hpp"

using mfp::DensityState;
using mfp::Generator;
using mfp::PointCloud;
using mfp::Tessellation;

namespace {

// Two unit-volume cells joined by a unit face at unit distance. With uniform
// equilibrium this gives lambda = (1, 1), P = [[1], [1]], Q = [[-1, 1], [1, -1]]
// and every update has a short closed form.
Generator two_cell() {
    Tessellation t;
    t.volumes = Eigen::Vector2d(1.0, 1.0);
    t.faces[{0, 1}] = 1.0;
    t.neighbors = {{1}, {0}};
    t.r = 2.0;
    t.d = 2;
    PointCloud coords;
    coords.points.resize(2, 2);
    coords.points << 0.0, 0.0, 1.0, 0.0;
    coords.intrinsic_dim = 2;
    return mfp::assemble_generator(t, coords, Eigen::Vector2d(0.5, 0.5));
}

struct SphereSetup {
    PointCloud cloud;
    Tessellation tess;
    Generator gen;
};

SphereSetup sphere_generator(int n, std::uint64_t seed, double r) {
    SphereSetup s;
    s.cloud = mfp::sample_manifold(mfp::ManifoldKind::sphere, n, seed);
    s.tess = mfp::build_tessellation(s.cloud, r);
    Eigen::VectorXd U = s.cloud.points.col(2);
    Eigen::VectorXd pi = mfp::equilibrium_weights_potential(U, 1.0, s.tess.volumes);
    s.gen = mfp::assemble_generator(s.tess, s.cloud, pi);
    return s;
}

double prob(const Generator& gen, int i, int j) {
    const auto& lst = gen.nbr[i];
    auto it = std::lower_bound(lst.begin(), lst.end(), j);
    if (it == lst.end() || *it != j) return 0.0;
    return gen.P[i][it - lst.begin()];
}

DensityState make_state(const Eigen::VectorXd& rho) {
    DensityState s;
    s.rho = rho;
    return s;
}

}  // namespace

TEST(EquilibriumWeights, NormalizesAgainstVolumes) {
    Eigen::Vector2d values(2.0, 6.0), volumes(1.0, 0.5);
    Eigen::VectorXd pi = mfp::equilibrium_weights(values, volumes);
    EXPECT_NEAR(pi[0], 0.4, 1e-15);
    EXPECT_NEAR(pi[1], 1.2, 1e-15);
    EXPECT_NEAR(pi.dot(volumes), 1.0, 1e-15);

    Eigen::Vector2d U(0.0, std::log(2.0));
    Eigen::VectorXd pb = mfp::equilibrium_weights_potential(U, 1.0, Eigen::Vector2d(1, 1));
    EXPECT_NEAR(pb[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(pb[1], 1.0 / 3.0, 1e-15);

    EXPECT_THROW(mfp::equilibrium_weights(Eigen::Vector2d(1.0, 0.0), volumes),
                 mfp::config_error);
    EXPECT_THROW(mfp::equilibrium_weights_potential(U, 0.0, volumes), mfp::config_error);
}

TEST(Assemble, TwoCellClosedForm) {
    Generator gen = two_cell();
    EXPECT_NEAR(gen.lambda[0], 1.0, 1e-15);
    EXPECT_NEAR(gen.lambda[1], 1.0, 1e-15);
    EXPECT_NEAR(prob(gen, 0, 1), 1.0, 1e-15);
    EXPECT_NEAR(prob(gen, 1, 0), 1.0, 1e-15);
    ASSERT_EQ(gen.faces.size(), 1u);
    EXPECT_NEAR(gen.faces[0].flux, 0.5, 1e-15);
    EXPECT_NEAR(gen.faces[0].dist, 1.0, 1e-15);

    Eigen::MatrixXd Q = gen.Q();
    EXPECT_NEAR(Q(0, 0), -1.0, 1e-15);
    EXPECT_NEAR(Q(0, 1), 1.0, 1e-15);
    EXPECT_NEAR(Q(1, 0), 1.0, 1e-15);
    EXPECT_NEAR(Q(1, 1), -1.0, 1e-15);
    EXPECT_NEAR(mfp::cfl_bound(gen), 1.0, 1e-15);
}

TEST(Assemble, DetailedBalanceOnSphere) {
    SphereSetup s = sphere_generator(300, 7, 0.5);
    const Generator& gen = s.gen;
    for (const auto& f : gen.faces) {
        double lhs = gen.lambda[f.i] * prob(gen, f.i, f.j) * gen.pi[f.i] * gen.volumes[f.i];
        double rhs = gen.lambda[f.j] * prob(gen, f.j, f.i) * gen.pi[f.j] * gen.volumes[f.j];
        EXPECT_LE(std::abs(lhs - rhs), 1e-12 * std::abs(f.flux));
        EXPECT_LE(std::abs(lhs - f.flux), 1e-12 * std::abs(f.flux));
    }
    // generator rows sum to zero: probabilities are normalized
    Eigen::VectorXd rowsum = gen.Q().rowwise().sum();
    EXPECT_LT(rowsum.cwiseAbs().maxCoeff(), 1e-12 * gen.lambda.maxCoeff());
}

TEST(Assemble, RejectsBadInputs) {
    Tessellation t;
    t.volumes = Eigen::Vector3d(1.0, 1.0, 1.0);
    t.faces[{0, 1}] = 1.0;
    t.neighbors = {{1}, {0}, {}};
    t.d = 2;
    PointCloud coords;
    coords.points.resize(3, 2);
    coords.points << 0, 0, 1, 0, 2, 0;
    coords.intrinsic_dim = 2;
    Eigen::Vector3d pi(1.0 / 3, 1.0 / 3, 1.0 / 3);
    try {
        mfp::assemble_generator(t, coords, pi);
        FAIL() << "expected isolated-point error";
    } catch (const mfp::numeric_error& e) {
        EXPECT_NE(std::string(e.what()).find("isolated point 2"), std::string::npos);
    }

    // two components
    Tessellation t4;
    t4.volumes = Eigen::Vector4d::Ones();
    t4.faces[{0, 1}] = 1.0;
    t4.faces[{2, 3}] = 1.0;
    t4.neighbors = {{1}, {0}, {3}, {2}};
    t4.d = 2;
    PointCloud c4;
    c4.points.resize(4, 2);
    c4.points << 0, 0, 1, 0, 10, 0, 11, 0;
    c4.intrinsic_dim = 2;
    Eigen::Vector4d pi4 = Eigen::Vector4d::Constant(0.25);
    try {
        mfp::assemble_generator(t4, c4, pi4);
        FAIL() << "expected disconnected error";
    } catch (const mfp::numeric_error& e) {
        EXPECT_NE(std::string(e.what()).find("2 components of sizes 2 2"),
                  std::string::npos);
    }
    Generator loose = mfp::assemble_generator(t4, c4, pi4, false);
    EXPECT_EQ(loose.n(), 4);

    // coincident sites
    PointCloud cc = coords;
    cc.points.row(1) = cc.points.row(0);
    Tessellation t2;
    t2.volumes = Eigen::Vector2d(1, 1);
    t2.faces[{0, 1}] = 1.0;
    t2.neighbors = {{1}, {0}};
    t2.d = 2;
    PointCloud c2;
    c2.points.resize(2, 2);
    c2.points.setZero();
    c2.intrinsic_dim = 2;
    EXPECT_THROW(mfp::assemble_generator(t2, c2, Eigen::Vector2d(0.5, 0.5)),
                 mfp::numeric_error);

    EXPECT_THROW(mfp::assemble_generator(t2, coords, pi), mfp::config_error);
}

TEST(Steppers, TwoCellUnconditionalClosedForm) {
    Generator gen = two_cell();
    for (double dt : {0.1, 1.0, 10.0, 1e6}) {
        DensityState s = make_state(Eigen::Vector2d(1.0, 0.0));
        DensityState out = mfp::step_unconditional(s, gen, dt);
        EXPECT_NEAR(out.rho[0], 1.0 / (1.0 + dt), 1e-10 / (1.0 + dt));
        EXPECT_NEAR(out.rho[1], dt / (1.0 + dt), 1e-10);
        EXPECT_EQ(out.step, 1);
        EXPECT_EQ(out.scheme, "unconditional");
    }
}

TEST(Steppers, TwoCellExplicitClosedForm) {
    Generator gen = two_cell();
    DensityState s = make_state(Eigen::Vector2d(1.0, 0.0));
    DensityState out = mfp::step_explicit_cfl(s, gen, 0.5);
    EXPECT_NEAR(out.rho[0], 0.5, 1e-10);
    EXPECT_NEAR(out.rho[1], 0.5, 1e-10);
    EXPECT_EQ(out.scheme, "explicit");

    try {
        mfp::step_explicit_cfl(s, gen, 1.0 + 1e-9);
        FAIL() << "expected CFL violation";
    } catch (const mfp::numeric_error& e) {
        EXPECT_NE(std::string(e.what()).find("CFL"), std::string::npos);
    }
}

TEST(Steppers, TwoCellImplicitClosedForm) {
    Generator gen = two_cell();
    DensityState s = make_state(Eigen::Vector2d(1.0, 0.0));
    DensityState out1 = mfp::step_implicit(s, gen, 1.0);
    EXPECT_NEAR(out1.rho[0], 2.0 / 3.0, 1e-10);
    EXPECT_NEAR(out1.rho[1], 1.0 / 3.0, 1e-10);
    DensityState out10 = mfp::step_implicit(s, gen, 10.0);
    EXPECT_NEAR(out10.rho[0], 11.0 / 21.0, 1e-10);
    EXPECT_NEAR(out10.rho[1], 10.0 / 21.0, 1e-10);
    EXPECT_EQ(out10.scheme, "implicit");
}

TEST(Steppers, EquilibriumIsFixedPoint) {
    SphereSetup s = sphere_generator(150, 3, 0.6);
    DensityState st = make_state(s.gen.pi);
    for (double dt : {0.05, 10.0}) {
        DensityState u = mfp::step_unconditional(st, s.gen, dt);
        EXPECT_LT((u.rho - s.gen.pi).cwiseAbs().maxCoeff(), 1e-14);
        DensityState im = mfp::step_implicit(st, s.gen, dt);
        EXPECT_LT((im.rho - s.gen.pi).cwiseAbs().maxCoeff(), 1e-12);
    }
    DensityState ex = mfp::step_explicit_cfl(st, s.gen, 0.9 * mfp::cfl_bound(s.gen));
    EXPECT_LT((ex.rho - s.gen.pi).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Steppers, ConservationLaws) {
    SphereSetup s = sphere_generator(200, 5, 0.55);
    const Generator& gen = s.gen;
    mfp::Rng rng(17);
    Eigen::VectorXd rho0(gen.n());
    for (int i = 0; i < gen.n(); ++i) rho0[i] = 0.2 + rng.uniform();

    // unconditional: sum (1 + lambda dt) rho |C| is exactly invariant
    for (double dt : {0.05, 10.0}) {
        Eigen::ArrayXd w = (1.0 + gen.lambda.array() * dt) * gen.volumes.array();
        DensityState st = make_state(rho0);
        double w0 = (w * st.rho.array()).sum();
        for (int k = 0; k < 50; ++k) st = mfp::step_unconditional(st, gen, dt);
        EXPECT_NEAR((w * st.rho.array()).sum(), w0, 1e-12 * w0);
        mfp::Diagnostics d = mfp::diagnostics(st, gen);
        EXPECT_NEAR(d.weighted_mass, w0, 1e-12 * w0);
    }

    // explicit and implicit: plain mass is invariant
    {
        double dt = 0.9 * mfp::cfl_bound(gen);
        DensityState st = make_state(rho0);
        double m0 = st.rho.dot(gen.volumes);
        for (int k = 0; k < 50; ++k) st = mfp::step_explicit_cfl(st, gen, dt);
        EXPECT_NEAR(st.rho.dot(gen.volumes), m0, 1e-12 * m0);
    }
    {
        DensityState st = make_state(rho0);
        double m0 = st.rho.dot(gen.volumes);
        for (int k = 0; k < 50; ++k) st = mfp::step_implicit(st, gen, 10.0);
        EXPECT_NEAR(st.rho.dot(gen.volumes), m0, 1e-10 * m0);
    }
}

// Every scheme averages: the range of u = rho/pi can only shrink, u stays
// nonnegative, and the deviation from equilibrium never grows.
TEST(Steppers, MaxPrincipleAtExtremeSteps) {
    SphereSetup s = sphere_generator(200, 5, 0.55);
    const Generator& gen = s.gen;
    mfp::Rng rng(23);
    Eigen::VectorXd rho0(gen.n());
    for (int i = 0; i < gen.n(); ++i)
        rho0[i] = gen.pi[i] * (0.5 + rng.uniform());

    auto run = [&](const char* scheme, double dt, double tol) {
        DensityState st = make_state(rho0);
        Eigen::ArrayXd u = st.rho.array() / gen.pi.array();
        double umax = u.maxCoeff(), umin = u.minCoeff();
        double dev = (u - 1.0).abs().maxCoeff();
        for (int k = 0; k < 25; ++k) {
            if (scheme[0] == 'u')
                st = mfp::step_unconditional(st, gen, dt);
            else if (scheme[0] == 'e')
                st = mfp::step_explicit_cfl(st, gen, dt);
            else
                st = mfp::step_implicit(st, gen, dt);
            u = st.rho.array() / gen.pi.array();
            EXPECT_LE(u.maxCoeff(), umax + tol) << scheme << " dt=" << dt;
            EXPECT_GE(u.minCoeff(), umin - tol) << scheme << " dt=" << dt;
            EXPECT_LE((u - 1.0).abs().maxCoeff(), dev + tol) << scheme << " dt=" << dt;
            EXPECT_GE(st.rho.minCoeff(), -1e-15);
            umax = u.maxCoeff();
            umin = u.minCoeff();
            dev = (u - 1.0).abs().maxCoeff();
        }
    };

    // the unconditional update is a convex average at every dt
    for (double dt : {1e-3, 1.0, 1e3, 1e6}) run("unconditional", dt, 1e-12);
    run("explicit", 0.9 * mfp::cfl_bound(gen), 1e-12);
    // backward Euler is monotone too, up to the linear solve's conditioning
    for (double dt : {1e-3, 1.0, 1e3, 1e6}) {
        double cond = 1.0 + 2.0 * dt * gen.lambda.maxCoeff();
        run("implicit", dt, 1e-12 + 1e-14 * cond);
    }
}

TEST(Steppers, ChiSquareDecaysToEquilibrium) {
    SphereSetup s = sphere_generator(150, 9, 0.6);
    const Generator& gen = s.gen;
    mfp::Rng rng(31);
    Eigen::VectorXd rho0(gen.n());
    for (int i = 0; i < gen.n(); ++i) rho0[i] = gen.pi[i] * (0.5 + rng.uniform());
    // normalize mass so the implicit flow converges to pi itself
    rho0 /= rho0.dot(gen.volumes);

    DensityState st = make_state(rho0);
    double prev = mfp::diagnostics(st, gen).chi2;
    for (int k = 0; k < 150; ++k) {
        st = mfp::step_implicit(st, gen, 1.0);
        double cur = mfp::diagnostics(st, gen).chi2;
        EXPECT_LE(cur, prev + 1e-13 * prev);
        prev = cur;
    }
    EXPECT_LT(mfp::diagnostics(st, gen).linf_err, 1e-10);
    EXPECT_NEAR(prev, 1.0, 1e-9);  // chi2 of pi is sum pi |C| = 1
}

TEST(Steppers, ChainChiSquareDecaysUnderExplicitSteps) {
    const int n = 10;
    Tessellation t;
    t.volumes = Eigen::VectorXd::Ones(n);
    t.neighbors.assign(n, {});
    for (int i = 0; i + 1 < n; ++i) {
        t.faces[{i, i + 1}] = 1.0;
        t.neighbors[i].push_back(i + 1);
        t.neighbors[i + 1].push_back(i);
    }
    t.d = 2;
    PointCloud coords;
    coords.points.resize(n, 2);
    for (int i = 0; i < n; ++i) coords.points.row(i) << i, 0.0;
    coords.intrinsic_dim = 2;
    Generator gen = mfp::assemble_generator(
        t, coords, Eigen::VectorXd::Constant(n, 1.0 / n));

    mfp::Rng rng(53);
    Eigen::VectorXd rho0(n), alt0(n);
    for (int i = 0; i < n; ++i) {
        rho0[i] = 0.05 + 0.1 * rng.uniform();
        alt0[i] = 0.05 + 0.1 * rng.uniform();
    }
    const double dt = 0.05;
    ASSERT_LE(dt, mfp::cfl_bound(gen));

    DensityState a = make_state(rho0), b = make_state(alt0);
    double chi_prev = mfp::diagnostics(a, gen).chi2;
    double l1_prev = ((a.rho - b.rho).cwiseAbs().array() * gen.volumes.array()).sum();
    for (int k = 0; k < 100; ++k) {
        a = mfp::step_explicit_cfl(a, gen, dt);
        b = mfp::step_explicit_cfl(b, gen, dt);
        double chi = mfp::diagnostics(a, gen).chi2;
        EXPECT_LE(chi, chi_prev + 1e-14);
        chi_prev = chi;
        // contraction of the distance between any two solutions
        double l1 = ((a.rho - b.rho).cwiseAbs().array() * gen.volumes.array()).sum();
        EXPECT_LE(l1, l1_prev + 1e-14);
        l1_prev = l1;
    }
}

TEST(Steppers, AdjustedUnconditionalConvergesToEquilibriumExactly) {
    SphereSetup s = sphere_generator(150, 9, 0.6);
    const Generator& gen = s.gen;
    const double dt = 0.5;
    mfp::Rng rng(37);
    Eigen::VectorXd rho0(gen.n());
    for (int i = 0; i < gen.n(); ++i) rho0[i] = gen.pi[i] * (0.5 + rng.uniform());
    Eigen::VectorXd adj = mfp::adjust_initial(rho0, gen, dt);

    Eigen::ArrayXd w = (1.0 + gen.lambda.array() * dt) * gen.volumes.array();
    EXPECT_NEAR((w * adj.array()).sum(), (w * gen.pi.array()).sum(),
                1e-13 * (w * gen.pi.array()).sum());

    DensityState st = make_state(adj);
    for (int k = 0; k < 3000; ++k) st = mfp::step_unconditional(st, gen, dt);
    EXPECT_LT(mfp::diagnostics(st, gen).linf_err, 1e-9);
}

TEST(Steppers, TwoCellAdjustIsIdentityAtMatchedMass) {
    Generator gen = two_cell();
    Eigen::VectorXd adj = mfp::adjust_initial(Eigen::Vector2d(1.0, 0.0), gen, 1.0);
    EXPECT_NEAR(adj[0], 1.0, 1e-15);
    EXPECT_NEAR(adj[1], 0.0, 1e-15);
    Eigen::VectorXd half = mfp::adjust_initial(Eigen::Vector2d(2.0, 0.0), gen, 1.0);
    EXPECT_NEAR(half[0], 1.0, 1e-15);
}

TEST(Steppers, ImplicitStepperMatchesOneShotBitwise) {
    SphereSetup s = sphere_generator(150, 13, 0.6);
    const Generator& gen = s.gen;
    mfp::Rng rng(41);
    Eigen::VectorXd rho0(gen.n());
    for (int i = 0; i < gen.n(); ++i) rho0[i] = 0.1 + rng.uniform();

    mfp::ImplicitStepper stepper(gen, 2.5);
    DensityState a = make_state(rho0), b = make_state(rho0);
    for (int k = 0; k < 5; ++k) {
        a = stepper.step(a, gen);
        b = mfp::step_implicit(b, gen, 2.5);
        ASSERT_EQ(a.rho.size(), b.rho.size());
        for (int i = 0; i < a.rho.size(); ++i)
            EXPECT_EQ(a.rho[i], b.rho[i]) << "step " << k << " entry " << i;
    }
}

TEST(DecayRate, TwoCellClosedForm) {
    Generator gen = two_cell();
    EXPECT_NEAR(mfp::theoretic_decay_rate(gen, 1.0), 0.0, 1e-12);
    // second eigenvalue of the one-step map is (1-dt)/(1+dt)
    EXPECT_NEAR(mfp::theoretic_decay_rate(gen, 3.0), 0.5, 1e-12);
    EXPECT_NEAR(mfp::theoretic_decay_rate(gen, 0.25), 0.6, 1e-12);
}

TEST(DecayRate, RejectsNonErgodicGenerator) {
    Tessellation t4;
    t4.volumes = Eigen::Vector4d::Ones();
    t4.faces[{0, 1}] = 1.0;
    t4.faces[{2, 3}] = 1.0;
    t4.neighbors = {{1}, {0}, {3}, {2}};
    t4.d = 2;
    PointCloud c4;
    c4.points.resize(4, 2);
    c4.points << 0, 0, 1, 0, 10, 0, 11, 0;
    c4.intrinsic_dim = 2;
    Generator gen =
        mfp::assemble_generator(t4, c4, Eigen::Vector4d::Constant(0.25), false);
    try {
        mfp::theoretic_decay_rate(gen, 1.0);
        FAIL() << "expected non-ergodic error";
    } catch (const mfp::numeric_error& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("non-ergodic"), std::string::npos);
        EXPECT_NE(msg.find("2 components of sizes 2 2"), std::string::npos);
    }
}

// The measured per-step contraction of the weighted error must approach the
// second eigenvalue of the one-step operator once transients have died out.
TEST(DecayRate, MatchesMeasuredContraction) {
    SphereSetup s = sphere_generator(200, 11, 0.55);
    const Generator& gen = s.gen;
    const double dt = 0.05;
    double mu2 = mfp::theoretic_decay_rate(gen, dt);
    ASSERT_GT(mu2, 0.5);
    ASSERT_LT(mu2, 1.0);

    mfp::Rng rng(47);
    Eigen::VectorXd rho0(gen.n());
    for (int i = 0; i < gen.n(); ++i) rho0[i] = gen.pi[i] * (0.8 + 0.4 * rng.uniform());
    DensityState st = make_state(mfp::adjust_initial(rho0, gen, dt));

    std::vector<double> err;
    for (int k = 0; k < 120; ++k) {
        st = mfp::step_unconditional(st, gen, dt);
        err.push_back(std::sqrt(mfp::diagnostics(st, gen, &gen.pi).l2w_err));
    }
    for (int k = 60; k < 119; ++k) {
        double ratio = err[k + 1] / err[k];
        EXPECT_NEAR(ratio, mu2, 0.05 * mu2) << "step " << k;
    }
}

TEST(Diagnostics, HandComputedValues) {
    Generator gen = two_cell();
    DensityState st = make_state(Eigen::Vector2d(0.75, 0.25));
    st.dt = 1.0;
    Eigen::VectorXd ref = Eigen::Vector2d(0.5, 0.5);
    mfp::Diagnostics d = mfp::diagnostics(st, gen, &ref);
    EXPECT_NEAR(d.mass, 1.0, 1e-15);
    EXPECT_NEAR(d.weighted_mass, 2.0, 1e-15);  // (1+1)(0.75) + (1+1)(0.25)
    EXPECT_NEAR(d.chi2, (0.5625 + 0.0625) / 0.5, 1e-15);
    EXPECT_NEAR(d.linf_err, 0.5, 1e-15);
    EXPECT_NEAR(d.l2w_err, (0.0625 + 0.0625) / 0.5, 1e-15);
    EXPECT_TRUE(d.has_ref);

    EXPECT_THROW(mfp::step_unconditional(st, gen, 0.0), mfp::config_error);
    DensityState bad = make_state(Eigen::Vector3d::Ones());
    EXPECT_THROW(mfp::diagnostics(bad, gen), mfp::config_error);
}
