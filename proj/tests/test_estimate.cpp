#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "epinet/estimate.hpp"
#include "epinet/evaluation.hpp"
#include "epinet/harness.hpp"
#include "epinet/likelihood.hpp"
#include "epinet/moments.hpp"
#include "epinet/netgen.hpp"
#include "epinet/simulate.hpp"

using namespace epinet;

namespace {

template <std::size_t N>
using Point = std::array<double, N>;

// Plain Nelder-Mead maximizer, restarted until the simplex stops moving.
template <std::size_t N>
Point<N> nelder_mead_max(const std::function<double(const Point<N>&)>& f, Point<N> x0, double step) {
    for (int restart = 0; restart < 6; ++restart) {
        std::array<Point<N>, N + 1> p;
        std::array<double, N + 1> v;
        for (std::size_t i = 0; i <= N; ++i) {
            p[i] = x0;
            if (i > 0) p[i][i - 1] += step;
            v[i] = -f(p[i]);
        }
        for (int it = 0; it < 20000; ++it) {
            std::array<std::size_t, N + 1> o;
            std::iota(o.begin(), o.end(), 0);
            std::sort(o.begin(), o.end(), [&](auto a, auto b) { return v[a] < v[b]; });
            if (std::abs(v[o[N]] - v[o[0]]) < 1e-14 * (1.0 + std::abs(v[o[0]]))) break;
            Point<N> c{};
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t d = 0; d < N; ++d) c[d] += p[o[i]][d] / N;
            auto along = [&](double t) {
                Point<N> q;
                for (std::size_t d = 0; d < N; ++d) q[d] = c[d] + t * (p[o[N]][d] - c[d]);
                return q;
            };
            const auto r = along(-1.0);
            const double fr = -f(r);
            if (fr < v[o[0]]) {
                const auto e = along(-2.0);
                const double fe = -f(e);
                if (fe < fr) p[o[N]] = e, v[o[N]] = fe;
                else p[o[N]] = r, v[o[N]] = fr;
            } else if (fr < v[o[N - 1]]) {
                p[o[N]] = r, v[o[N]] = fr;
            } else {
                const auto k = along(0.5);
                const double fk = -f(k);
                if (fk < v[o[N]]) {
                    p[o[N]] = k, v[o[N]] = fk;
                } else {
                    for (std::size_t i = 1; i <= N; ++i) {
                        for (std::size_t d = 0; d < N; ++d) p[o[i]][d] = 0.5 * (p[o[i]][d] + p[o[0]][d]);
                        v[o[i]] = -f(p[o[i]]);
                    }
                }
            }
        }
        const auto best = static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
        x0 = p[best];
        step *= 0.1;
    }
    return x0;
}

SyntheticData reference_data(std::uint64_t seed, int n = 10, DatasetKind kind = DatasetKind::kInfectiousCounts) {
    ExperimentConfig cfg;
    cfg.n = n;
    cfg.dataset_kind = kind;
    return synthesize(cfg, seed);
}

AnnealingSchedule quick_schedule(long steps) {
    AnnealingSchedule s;
    s.steps = steps;
    s.k_samples = 20;
    return s;
}

}  // namespace

TEST_CASE("closed-form estimators on noise-free exponential totals") {
    std::vector<double> totals;
    for (int d = 0; d < 100; ++d) totals.push_back(200.0 * std::exp(0.034 * d));
    const auto est = estimate_alpha_beta(totals, 1.0);
    CHECK(std::abs((est.alpha_hat - est.beta_hat) - std::expm1(0.034)) < 1e-12);
    CHECK(std::isfinite(est.alpha_hat));
    CHECK(std::isfinite(est.beta_hat));
}

TEST_CASE("estimator validation") {
    CHECK_THROWS(estimate_alpha_beta(std::vector<double>{1.0, 2.0}, 1.0));
    CHECK_THROWS_WITH(estimate_alpha_beta(std::vector<double>{3.0, 0.0, 2.0, 4.0}, 1.0), doctest::Contains("d=1"));
    // Noise-free growth gives s = 0, so beta_hat = -alpha_hat: flagged, not thrown.
    std::vector<double> smooth;
    for (int d = 0; d < 20; ++d) smooth.push_back(100.0 * std::pow(1.05, d));
    const auto est = estimate_alpha_beta(smooth, 1.0);
    CHECK(est.beta_nonpositive);
    CHECK(std::isnan(est.r_hat));
}

TEST_CASE("time reversal flips the growth term") {
    const auto totals = reference_data(4).dataset.infectious_totals();
    std::vector<double> rev(totals.rbegin(), totals.rend());
    const auto f = estimate_alpha_beta(totals, 1.0), b = estimate_alpha_beta(rev, 1.0);
    const double g = f.alpha_hat - f.beta_hat, gr = b.alpha_hat - b.beta_hat;
    const double sum_f = std::accumulate(totals.begin(), totals.end() - 1, 0.0);
    const double sum_r = std::accumulate(rev.begin(), rev.end() - 1, 0.0);
    CHECK(g > 0.0);
    CHECK(gr < 0.0);
    CHECK(gr * sum_r == doctest::Approx(-g * sum_f).epsilon(1e-12));
}

TEST_CASE("closed forms match a numerical maximization of the aggregate likelihood") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto totals = reference_data(seed).dataset.infectious_totals();
        const auto est = estimate_alpha_beta(totals, 1.0);
        REQUIRE_FALSE(est.beta_nonpositive);
        const auto L = [&](const Point<2>& x) { return loglik_I2(totals, std::exp(x[0]), std::exp(x[1]), 1.0).value; };
        const auto best = nelder_mead_max<2>(L, {std::log(0.05), std::log(0.05)}, 0.3);
        INFO("seed " << seed);
        CHECK(std::abs(std::exp(best[0]) - est.alpha_hat) < 1e-6);
        CHECK(std::abs(std::exp(best[1]) - est.beta_hat) < 1e-6);
    }
}

TEST_CASE("more frequent sampling improves the rate-ratio error") {
    const TransmissionParams p{0.067, 0.033, 0.1};
    double fine = 0.0, coarse = 0.0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        const auto l = generate_er_topology(10, 2.0, 100 + s);
        std::vector<double> I0(10, 0.0);
        I0[0] = 200.0;
        const auto traj = simulate_linearized(mobility_from_topology(l, 0.1), p, I0, 100.0, {}, 100 + s);
        const auto a = estimate_alpha_beta(observe(traj, 0.25, 400, DatasetKind::kInfectiousCounts).infectious_totals(), 0.25);
        const auto b = estimate_alpha_beta(observe(traj, 4.0, 25, DatasetKind::kInfectiousCounts).infectious_totals(), 4.0);
        fine += error_r(a.alpha_hat, a.beta_hat, p.alpha, p.beta) / seeds;
        coarse += error_r(b.alpha_hat, b.beta_hat, p.alpha, p.beta) / seeds;
    }
    INFO("fine=" << fine << " coarse=" << coarse);
    CHECK(fine <= coarse);
}

TEST_CASE("new-case conversion") {
    TimeSeriesDataset dJ;
    dJ.kind = DatasetKind::kNewCases;
    dJ.values = Eigen::MatrixXd::Zero(5, 3);
    dJ.initial_cumulative = {0, 0, 0};
    CHECK(convert_dJ_to_I(dJ, 0.067).values.isZero());
    dJ.values(2, 1) = 6.7;
    CHECK(convert_dJ_to_I(dJ, 0.067).values(2, 1) == doctest::Approx(100.0).epsilon(1e-14));
    CHECK(convert_dJ_to_I(dJ, 0.067).kind == DatasetKind::kInfectiousCounts);
    CHECK_THROWS(convert_dJ_to_I(dJ, 0.0));
    TimeSeriesDataset counts;
    counts.values = Eigen::MatrixXd::Ones(3, 1);
    CHECK_THROWS(convert_dJ_to_I(counts, 0.1));
}

TEST_CASE("converted counts track the simulated infectious counts") {
    const auto l = generate_er_topology(10, 2.0, 5);
    const TransmissionParams p{0.067, 0.033, 0.1};
    std::vector<double> I0(10, 0.0);
    I0[0] = 200.0;
    const auto traj = simulate_linearized(mobility_from_topology(l, 0.1), p, I0, 100.0, {}, 5);
    const auto I = observe(traj, 1.0, 100, DatasetKind::kInfectiousCounts);
    const auto conv = convert_dJ_to_I(observe(traj, 1.0, 100, DatasetKind::kNewCases), p.alpha);
    double err = 0.0;
    int count = 0;
    for (int d = 0; d < 100; ++d)
        for (int i = 0; i < 10; ++i)
            if (I.values(d, i) > 100.0) {
                err += std::abs(conv.values(d, i) - I.values(d, i)) / I.values(d, i);
                ++count;
            }
    REQUIRE(count > 50);
    INFO("mean relative error " << err / count << " over " << count << " cells");
    CHECK(err / count < 0.25);
}

TEST_CASE("acceptance rule") {
    for (long s : {0L, 1L, 10L, 1000L, 100000L}) {
        for (double dL : {0.0, 1e-12, 0.5, 100.0}) CHECK(acceptance_probability(dL, 3.0, s) == 1.0);
        double prev = 1.0;
        for (double dL : {-0.1, -1.0, -10.0}) {
            const double p = acceptance_probability(dL, 3.0, s);
            CHECK(p < prev);
            CHECK(p >= 0.0);
            prev = p;
        }
    }
    CHECK(acceptance_probability(-1.0, 1.0, 1000) < acceptance_probability(-1.0, 1.0, 10));
    CHECK(AnnealingSchedule::temperature(0) > 0.0);
    for (long s = 0; s < 1000; ++s) CHECK(AnnealingSchedule::temperature(s + 1) < AnnealingSchedule::temperature(s));
}

TEST_CASE("annealing finds the best of all 64 four-node topologies") {
    int hits = 0;
    AnnealingSchedule sched = quick_schedule(10000);
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto syn = reference_data(seed, 4);
        const auto& ds = syn.dataset;
        const auto ab = estimate_alpha_beta(ds.infectious_totals(), 1.0);
        const double a = ab.alpha_hat, b = ab.beta_hat > 0.0 ? ab.beta_hat : 0.033;
        double best_L = -INFINITY;
        for (int mask = 0; mask < 64; ++mask) {
            NeighborMatrix l(4);
            for (int p = 0; p < 6; ++p)
                if (mask >> p & 1) {
                    const auto [i, j] = l.pair_at(p);
                    l.set(i, j, true);
                }
            const double L = topology_loglik(ds, a, b, l, 0.1, sched.likelihood);
            best_L = std::max(best_L, L);
        }
        const auto est = sa_topology_search(ds, a, b, sched, seed, GammaMode::kKnown, 0.1);
        // Links between never-infected nodes leave L unchanged, so any maximizer counts.
        if (est.loglik >= best_L - 1e-9) ++hits;
    }
    MESSAGE("exhaustive hits " << hits << "/100");
    CHECK(hits >= 95);
}

TEST_CASE("ranking: singleton, ordering, audit") {
    const auto syn = reference_data(3);
    const auto ab = estimate_alpha_beta(syn.dataset.infectious_totals(), 1.0);
    const auto sched = quick_schedule(2000);

    const auto single = multi_trial_topology_ranking(syn.dataset, ab.alpha_hat, ab.beta_hat, 1, sched, 9,
                                                     GammaMode::kSearch, 0.1);
    const auto direct = sa_topology_search(syn.dataset, ab.alpha_hat, ab.beta_hat, sched, 9, GammaMode::kSearch, 0.1, 0);
    REQUIRE(single.size() == 1);
    CHECK(single[0].multiplicity == 1);
    CHECK(single[0].best.l_hat == direct.l_hat);
    CHECK(single[0].best.loglik == direct.loglik);
    CHECK(single[0].best.gamma_total == direct.gamma_total);

    const auto ranking = multi_trial_topology_ranking(syn.dataset, ab.alpha_hat, ab.beta_hat, 6, sched, 9,
                                                      GammaMode::kSearch, 0.1);
    int total = 0;
    for (std::size_t i = 0; i < ranking.size(); ++i) {
        total += ranking[i].multiplicity;
        CHECK(ranking[i].best.loglik <= ranking.front().best.loglik);
        if (i > 0) CHECK(ranking[i].best.loglik <= ranking[i - 1].best.loglik);
        const double audit = topology_loglik(syn.dataset, ab.alpha_hat, ab.beta_hat, ranking[i].best.l_hat,
                                             ranking[i].best.gamma_total, sched.likelihood);
        CHECK(std::abs(audit - ranking[i].best.loglik) <= 1e-9);
    }
    CHECK(total == 6);
    CHECK(ranking.front().best.loglik >= direct.loglik);

    CHECK_THROWS(multi_trial_topology_ranking(syn.dataset, ab.alpha_hat, ab.beta_hat, 0, sched, 9,
                                              GammaMode::kSearch, 0.1));
    AnnealingSchedule bad = sched;
    bad.k = -1.0;
    CHECK_THROWS(sa_topology_search(syn.dataset, ab.alpha_hat, ab.beta_hat, bad, 1, GammaMode::kKnown, 0.1));
}

TEST_CASE("annealing is reproducible for a fixed seed") {
    const auto syn = reference_data(6);
    const auto sched = quick_schedule(1500);
    const auto a = sa_topology_search(syn.dataset, 0.067, 0.033, sched, 4, GammaMode::kSearch, 0.1, 2);
    const auto b = sa_topology_search(syn.dataset, 0.067, 0.033, sched, 4, GammaMode::kSearch, 0.1, 2);
    CHECK(a.l_hat == b.l_hat);
    CHECK(a.loglik == b.loglik);
    CHECK(a.accepted == b.accepted);
}

TEST_CASE("J fit on a noise-free mean curve agrees with an independent optimizer") {
    const double a = 0.18, b = 0.13, I0 = 50.0;
    std::vector<double> J;
    for (int d = 0; d < 32; ++d) J.push_back(aggregate_moments(a, b, I0, d).mJ);
    const auto qn = estimate_from_J_totals(J, 1.0, JMethod::kQuasiNewton, 1);
    const auto L = [&](const Point<3>& x) {
        return loglik_J2(J, std::exp(x[0]), std::exp(x[1]), std::exp(x[2]), 1.0).value;
    };
    const auto nm = nelder_mead_max<3>(L, {std::log(a), std::log(b), std::log(I0)}, 0.2);
    const double L_nm = L(nm);
    INFO("qn=(" << qn.alpha_hat << ", " << qn.beta_hat << ", " << *qn.i0_hat << ") L=" << qn.loglik
                << "  oracle=(" << std::exp(nm[0]) << ", " << std::exp(nm[1]) << ", " << std::exp(nm[2]) << ") L=" << L_nm);
    CHECK(qn.loglik >= L_nm - 1e-6);
    CHECK(qn.alpha_hat == doctest::Approx(std::exp(nm[0])).epsilon(1e-3));
    CHECK(qn.beta_hat == doctest::Approx(std::exp(nm[1])).epsilon(1e-3));
    CHECK(*qn.i0_hat == doctest::Approx(std::exp(nm[2])).epsilon(1e-3));
    CHECK(qn.loglik == doctest::Approx(loglik_J2(J, qn.alpha_hat, qn.beta_hat, *qn.i0_hat, 1.0).value).epsilon(1e-12));
    // The growth rate of the mean curve is recovered even though the pair is not.
    CHECK(qn.alpha_hat - qn.beta_hat == doctest::Approx(a - b).epsilon(0.05));
}

TEST_CASE("annealed and quasi-Newton J fits agree") {
    int agree = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto syn = reference_data(seed, 10, DatasetKind::kNewCases);
        const auto J = syn.dataset.cumulative_totals();
        std::vector<double> Jt(J.begin(), J.end() - 1);
        const auto qn = estimate_from_J_totals(Jt, 1.0, JMethod::kQuasiNewton, seed);
        const auto an = estimate_from_J_totals(Jt, 1.0, JMethod::kAnneal, seed);
        const bool ok = std::abs(an.alpha_hat / qn.alpha_hat - 1.0) < 0.02 &&
                        std::abs(an.beta_hat / qn.beta_hat - 1.0) < 0.02 &&
                        std::abs(*an.i0_hat / *qn.i0_hat - 1.0) < 0.02;
        if (!ok)
            MESSAGE("seed " << seed << " qn=(" << qn.alpha_hat << "," << qn.beta_hat << "," << *qn.i0_hat << ") L="
                            << qn.loglik << " anneal=(" << an.alpha_hat << "," << an.beta_hat << "," << *an.i0_hat
                            << ") L=" << an.loglik);
        agree += ok;
        CHECK(qn.loglik >= an.loglik - 1e-3);
    }
    CHECK(agree == 20);
}

TEST_CASE("J fit validation") {
    CHECK_THROWS(estimate_from_J_totals(std::vector<double>{1, 2, 3}, 1.0, JMethod::kQuasiNewton, 1));
    CHECK_THROWS_WITH(estimate_from_J_totals(std::vector<double>{1, 2, 3, 2.5, 4}, 1.0, JMethod::kQuasiNewton, 1),
                      doctest::Contains("d=2"));
    CHECK(j_method_from_string("anneal") == JMethod::kAnneal);
    CHECK_THROWS(j_method_from_string("newton"));
}

TEST_CASE("schedule JSON round trip") {
    AnnealingSchedule s;
    s.steps = 1234;
    s.k = 2.5;
    s.proposal = Proposal::kFlip;
    s.gamma_grid = {0.1, 0.3};
    s.likelihood.mode = MomentMode::kExact;
    const auto back = AnnealingSchedule::from_json(s.to_json());
    CHECK(back.to_json() == s.to_json());
    auto j = s.to_json();
    j["bogus"] = 1;
    CHECK_THROWS(AnnealingSchedule::from_json(j));
    j = s.to_json();
    j["gamma_grid"] = nlohmann::json::array({0.3, 0.1});
    CHECK_THROWS(AnnealingSchedule::from_json(j));
}
