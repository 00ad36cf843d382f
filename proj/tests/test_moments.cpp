#include <doctest.h>

#include <array>
#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

#include "epinet/moments.hpp"
#include "epinet/netgen.hpp"
#include "epinet/rng.hpp"

using namespace epinet;

namespace {

// Scalar solutions written out term by term.
struct Scalar {
    double mI, mJ, vII, vIJ, vJJ;
};

Scalar closed_form(double a, double b, double I0, double t) {
    const double g = a - b, e1 = std::exp(g * t), e2 = std::exp(2.0 * g * t);
    Scalar s;
    s.mI = I0 * e1;
    s.mJ = I0 * (a / g * e1 - b / g);
    s.vII = I0 * (a + b) / g * (e2 - e1);
    s.vIJ = I0 * (a * (a + b) / (g * g) * e2 - (a * (a + b) / (g * g) + 2.0 * a * b / g * t) * e1);
    s.vJJ = I0 * (a * a * (a + b) / (g * g * g) * e2 - (a * (a + b) / (g * g) + 4.0 * a * a * b / (g * g) * t) * e1 -
                  a * b * (a + b) / (g * g * g));
    return s;
}

// Classical RK4 on the five scalar moment ODEs.
Scalar scalar_ode(double a, double b, double I0, double t, int steps = 20000) {
    using V = std::array<double, 5>;
    auto f = [&](const V& y) {
        return V{(a - b) * y[0], a * y[0], 2.0 * (a - b) * y[2] + (a + b) * y[0],
                 (a - b) * y[3] + a * (y[2] + y[0]), a * (2.0 * y[3] + y[0])};
    };
    V y{I0, I0, 0.0, 0.0, 0.0};
    const double h = t / steps;
    for (int k = 0; k < steps; ++k) {
        V k1 = f(y), y2, y3, y4;
        for (int i = 0; i < 5; ++i) y2[i] = y[i] + 0.5 * h * k1[i];
        V k2 = f(y2);
        for (int i = 0; i < 5; ++i) y3[i] = y[i] + 0.5 * h * k2[i];
        V k3 = f(y3);
        for (int i = 0; i < 5; ++i) y4[i] = y[i] + h * k3[i];
        V k4 = f(y4);
        for (int i = 0; i < 5; ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    return {y[0], y[1], y[2], y[3], y[4]};
}

double rel(double x, double ref) { return std::abs(x - ref) / std::max(std::abs(ref), 1e-300); }

Theta random_theta(int n, RandomStream& rng) {
    NeighborMatrix l(n);
    for (int p = 0; p < l.pair_count(); ++p) {
        const auto [i, j] = l.pair_at(p);
        l.set(i, j, rng.bernoulli(0.6));
    }
    const double alpha = 0.03 + 0.15 * rng.uniform();
    const double beta = 0.02 + 0.1 * rng.uniform();
    return Theta{alpha, beta, mobility_from_topology(l, 0.05 + 0.3 * rng.uniform())};
}

Theta single(double a, double b) { return Theta{a, b, MobilityMatrix{Eigen::MatrixXd::Zero(1, 1)}}; }

}  // namespace

TEST_CASE("drift matrix examples") {
    CHECK(drift_matrix(single(0.067, 0.033)).a(0, 0) == doctest::Approx(0.034).epsilon(1e-15));

    const Theta uncoupled{0.1, 0.04, MobilityMatrix{Eigen::MatrixXd::Zero(3, 3)}};
    CHECK(drift_matrix(uncoupled).a.isApprox(0.06 * Eigen::MatrixXd::Identity(3, 3)));

    MobilityMatrix g{Eigen::MatrixXd::Zero(2, 2)};
    g.rates(0, 1) = g.rates(1, 0) = 0.1;
    const auto a = drift_matrix(Theta{0.067, 0.033, g}).a;
    CHECK(a(0, 0) == doctest::Approx(-0.066).epsilon(1e-14));
    CHECK(a(1, 1) == doctest::Approx(-0.066).epsilon(1e-14));
    CHECK(a(0, 1) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(a(1, 0) == doctest::Approx(0.1).epsilon(1e-15));

    MobilityMatrix asym{Eigen::MatrixXd::Zero(2, 2)};
    asym.rates(0, 1) = 0.3;
    const auto b = drift_matrix(Theta{0.1, 0.1, asym}).a;
    CHECK(b(1, 0) == doctest::Approx(0.3));  // flow from node 0 feeds node 1's mean
    CHECK(b(0, 1) == 0.0);
    CHECK(b(0, 0) == doctest::Approx(-0.3));
}

TEST_CASE("moments at t = 0") {
    RandomStream rng(1, "test/moments-t0");
    const Theta th = random_theta(4, rng);
    const Eigen::Vector4d I0(10, 0, 3, 7);
    const auto m = exact_moments(th, I0, 0.0);
    CHECK(m.mI == I0);
    CHECK(m.mJ == I0);
    CHECK(m.vII.isZero());
    CHECK(m.vIJ.isZero());
    CHECK(m.vJJ.isZero());
    CHECK_THROWS(exact_moments(th, I0, -1.0));

    const auto agg = aggregate_moments(0.067, 0.033, 200.0, 0.0);
    CHECK(agg.mI == 200.0);
    CHECK(agg.mJ == doctest::Approx(200.0).epsilon(1e-14));
    CHECK(agg.vII == 0.0);
    CHECK(agg.vJJ == doctest::Approx(0.0));
}

TEST_CASE("scalar closed forms against the ODE oracle") {
    const auto ode = scalar_ode(0.067, 0.033, 200.0, 10.0);
    const auto cf = closed_form(0.067, 0.033, 200.0, 10.0);
    const auto agg = aggregate_moments(0.067, 0.033, 200.0, 10.0);
    CHECK(rel(agg.mI, ode.mI) < 1e-8);
    CHECK(rel(agg.mJ, ode.mJ) < 1e-8);
    CHECK(rel(agg.vII, ode.vII) < 1e-8);
    CHECK(rel(agg.vIJ, ode.vIJ) < 1e-8);
    CHECK(rel(agg.vJJ, ode.vJJ) < 1e-8);
    CHECK(rel(cf.vJJ, ode.vJJ) < 1e-8);
}

TEST_CASE("N = 1 exact moments match the scalar closed forms over [0, 100]") {
    for (auto [a, b] : {std::pair{0.067, 0.033}, std::pair{0.18, 0.13}, std::pair{0.05, 0.1}}) {
        for (double t : {0.5, 1.0, 5.0, 10.0, 25.0, 50.0, 100.0}) {
            const auto m = exact_moments(single(a, b), Eigen::VectorXd::Constant(1, 200.0), t);
            const auto cf = closed_form(a, b, 200.0, t);
            INFO("a=" << a << " b=" << b << " t=" << t);
            CHECK(rel(m.mI(0), cf.mI) < 1e-6);
            CHECK(rel(m.mJ(0), cf.mJ) < 1e-6);
            CHECK(rel(m.vII(0, 0), cf.vII) < 1e-6);
            CHECK(rel(m.vIJ(0, 0), cf.vIJ) < 1e-6);
            CHECK(rel(m.vJJ(0, 0), cf.vJJ) < 1e-6);
            const auto agg = aggregate_moments(a, b, 200.0, t);
            CHECK(rel(agg.vJJ, m.vJJ(0, 0)) < 1e-6);
            CHECK(rel(agg.vIJ, m.vIJ(0, 0)) < 1e-6);
        }
    }
}

TEST_CASE("alpha = beta limit agrees with the ODE oracle") {
    for (double t : {0.1, 1.0, 10.0, 50.0, 100.0}) {
        for (double gap : {0.0, 1e-12, 1e-9, 1e-5}) {
            const double a = 0.1, b = 0.1 - gap;
            const auto agg = aggregate_moments(a, b, 50.0, t);
            const auto ode = scalar_ode(a, b, 50.0, t);
            INFO("t=" << t << " gap=" << gap);
            CHECK(rel(agg.mI, ode.mI) < 1e-6);
            CHECK(rel(agg.mJ, ode.mJ) < 1e-6);
            CHECK(rel(agg.vII, ode.vII) < 1e-6);
            CHECK(rel(agg.vIJ, ode.vIJ) < 1e-6);
            CHECK(rel(agg.vJJ, ode.vJJ) < 1e-6);
        }
    }
}

TEST_CASE("aggregate branches join continuously at the switch point") {
    const double t = 10.0;
    const double edge = kAggregateLimitThreshold / t;
    const auto below = aggregate_moments(0.1 + 0.999 * edge, 0.1, 80.0, t);
    const auto above = aggregate_moments(0.1 + 1.001 * edge, 0.1, 80.0, t);
    CHECK(rel(below.vJJ, above.vJJ) < 1e-4);
    CHECK(rel(below.vIJ, above.vIJ) < 1e-4);
}

TEST_CASE("Cauchy-Schwarz and nonnegativity of aggregate moments") {
    RandomStream rng(5, "test/cs");
    for (int k = 0; k < 100; ++k) {
        const double a = 0.01 + 0.3 * rng.uniform(), b = 0.01 + 0.3 * rng.uniform();
        for (int ti = 0; ti <= 100; ti += 5) {
            const auto m = aggregate_moments(a, b, 100.0, ti);
            CHECK(m.vII >= 0.0);
            CHECK(m.vJJ >= 0.0);
            CHECK(m.vIJ * m.vIJ <= m.vII * m.vJJ * (1.0 + 1e-9) + 1e-9);
        }
    }
}

TEST_CASE("approx step examples") {
    const auto [m1, v1] = approx_step_moments(Eigen::VectorXd::Constant(1, 100.0), single(0.067, 0.033), 1.0);
    CHECK(m1(0) == doctest::Approx(103.4).epsilon(1e-12));
    CHECK(v1(0, 0) == doctest::Approx(10.0).epsilon(1e-12));

    const auto [mean, var] = approx_aggregate_step(600.0, 0.08, 0.02, 1.0);
    CHECK(mean == doctest::Approx(636.0).epsilon(1e-14));
    CHECK(var == doctest::Approx(60.0).epsilon(1e-14));

    CHECK_THROWS_AS(approx_aggregate_step(600.0, 0.08, 0.02, 0.0), std::invalid_argument);

    RandomStream rng(9, "test/approx");
    const Theta th = random_theta(5, rng);
    const Eigen::VectorXd I = (Eigen::VectorXd(5) << 10, 0, 40, 2, 300).finished();
    CHECK_THROWS_AS(approx_step_moments(I, th, 0.0), std::invalid_argument);
    const auto [mz, vz] = approx_step_moments(I, th, 1e-12);
    CHECK(mz.isApprox(I, 1e-9));
    CHECK(vz.norm() < 1e-8);
}

TEST_CASE("approx node means sum to the aggregate mean") {
    RandomStream rng(13, "test/approx-sum");
    for (int k = 0; k < 50; ++k) {
        const int n = 2 + static_cast<int>(rng.below(8));
        const Theta th = random_theta(n, rng);
        Eigen::VectorXd I(n);
        for (int i = 0; i < n; ++i) I(i) = 500.0 * rng.uniform();
        const double dt = 0.1 + rng.uniform();
        const auto [m, v] = approx_step_moments(I, th, dt);
        const auto [am, av] = approx_aggregate_step(I.sum(), th.alpha, th.beta, dt);
        CHECK(rel(m.sum(), am) < 1e-12);
        CHECK(rel(v.sum(), av) < 1e-12);
    }
}

TEST_CASE("approx step error is second order in dt") {
    RandomStream rng(21, "test/richardson");
    const Theta th = random_theta(3, rng);
    const Eigen::Vector3d I(120.0, 30.0, 5.0);
    auto err = [&](double dt) {
        const auto [m, v] = approx_step_moments(I, th, dt);
        const auto ex = exact_moments(th, I, dt);
        return (m - ex.mI).norm() + (v - ex.vII).norm();
    };
    const double ratio = err(0.1) / err(0.05);
    CHECK(ratio > 3.0);
    CHECK(ratio < 5.0);
}

TEST_CASE("exact moments: structure of the covariance blocks") {
    RandomStream rng(3, "test/structure");
    for (int k = 0; k < 10; ++k) {
        const int n = 2 + static_cast<int>(rng.below(3));
        const Theta th = random_theta(n, rng);
        Eigen::VectorXd I0 = Eigen::VectorXd::Zero(n);
        I0(0) = 100.0;
        I0(n - 1) += 20.0;
        const auto m = exact_moments(th, I0, 7.0);
        CHECK(m.vII == m.vII.transpose());
        CHECK(m.vJJ == m.vJJ.transpose());
        for (const Eigen::MatrixXd* v : {&m.vII, &m.vJJ}) {
            const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(*v).eigenvalues()(0);
            CHECK(lo >= -1e-9 * std::max(1.0, v->trace()));
        }
        // Totals reduce to the scalar solution because movement conserves counts.
        const auto agg = aggregate_moments(th.alpha, th.beta, I0.sum(), 7.0);
        CHECK(rel(m.mI.sum(), agg.mI) < 1e-9);
        CHECK(rel(m.mJ.sum(), agg.mJ) < 1e-9);
        CHECK(rel(m.vII.sum(), agg.vII) < 1e-6);
        CHECK(rel(m.vIJ.sum(), agg.vIJ) < 1e-6);
        CHECK(rel(m.vJJ.sum(), agg.vJJ) < 1e-6);
    }
}

TEST_CASE("matrix exponential self-consistency") {
    RandomStream rng(4, "test/expm");
    for (int k = 0; k < 10; ++k) {
        const Theta th = random_theta(5, rng);
        const Eigen::MatrixXd a = drift_matrix(th).a;
        const double t = 20.0 * rng.uniform() + 1.0;
        const Eigen::MatrixXd full = (a * t).exp();
        const Eigen::MatrixXd half = (a * (t / 2)).exp();
        CHECK((full - half * half).norm() <= 1e-9 * full.norm());
    }
}

TEST_CASE("halving the internal ODE step leaves vJJ unchanged") {
    RandomStream rng(6, "test/odestep");
    const Theta th = random_theta(4, rng);
    const Eigen::Vector4d I0(100, 0, 0, 50);
    MomentOptions coarse;
    coarse.max_step = 0.5;
    MomentOptions fine = coarse;
    fine.max_step = 0.25;
    const auto a = exact_moments(th, I0, 20.0, coarse);
    const auto b = exact_moments(th, I0, 20.0, fine);
    CHECK((a.vJJ - b.vJJ).norm() <= 1e-6 * b.vJJ.norm());
}

TEST_CASE("singular and nearly singular drift give the J mean") {
    MobilityMatrix g{Eigen::MatrixXd::Zero(2, 2)};
    g.rates(0, 1) = g.rates(1, 0) = 0.1;
    const Eigen::Vector2d I0(100, 0);
    const auto m = exact_moments(Theta{0.05, 0.05, g}, I0, 10.0);
    CHECK(rel(m.mI.sum(), 100.0) < 1e-12);
    CHECK(rel(m.mJ.sum(), 100.0 * (1.0 + 0.05 * 10.0)) < 1e-12);

    // Gap of 1e-12: the total J mean is I0 (1 + a (e^{gt} - 1) / g) to within 1e-10.
    for (double t : {0.5, 1.0, 10.0, 50.0}) {
        const double a = 0.1, b = 0.1 - 1e-12;
        const auto near = exact_moments(Theta{a, b, g}, I0, t);
        const double ref = 100.0 * (1.0 + a * std::expm1((a - b) * t) / (a - b));
        CHECK(rel(near.mJ.sum(), ref) < 1e-10);
    }
}

TEST_CASE("noise matrix matches its definition entry by entry") {
    RandomStream rng(8, "test/noise");
    const Theta th = random_theta(4, rng);
    const Eigen::Vector4d m(5, 10, 0, 3);
    const auto B = noise_matrix(th, m);
    const auto& g = th.gamma.rates;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            double expected = 0.0;
            if (i == j) {
                double out = 0.0, in = 0.0;
                for (int k = 0; k < 4; ++k) {
                    out += g(i, k);
                    in += g(k, i) * m(k);
                }
                expected = (th.alpha + th.beta + out) * m(i) + in;
            }
            expected -= g(i, j) * m(i) + g(j, i) * m(j);
            if (i == j) expected += g(i, i) * m(i) * 2.0;
            CHECK(B(i, j) == doctest::Approx(expected).epsilon(1e-13));
        }
    }
}
