#include "epinet/estimate.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

#include <boost/random/normal_distribution.hpp>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "epinet/format.hpp"
#include "epinet/rng.hpp"

namespace epinet {

nlohmann::json ParamEstimate::to_json() const {
    nlohmann::json j{{"alpha_hat", alpha_hat}, {"beta_hat", beta_hat}, {"r_hat", r_hat},
                     {"beta_nonpositive", beta_nonpositive}, {"converged", converged}, {"loglik", loglik}};
    if (i0_hat) j["i0_hat"] = *i0_hat;
    return j;
}

ParamEstimate estimate_alpha_beta(std::span<const double> totals, double delta_t) {
    const auto D = totals.size();
    if (D < 3) throw std::invalid_argument("estimate_alpha_beta: need D >= 3");
    if (!(delta_t > 0.0)) throw std::invalid_argument("estimate_alpha_beta: delta_t must be positive");
    CompensatedSum sum_dI, sum_I, sum_sq;
    for (std::size_t d = 0; d + 1 < D; ++d) {
        const double I = totals[d];
        if (!(I > 0.0))
            throw std::invalid_argument("estimate_alpha_beta: I(t_d) must be positive, got " + format_double(I) +
                                        " at d=" + std::to_string(d));
        const double dI = totals[d + 1] - I;
        sum_dI.add(dI);
        sum_I.add(I);
        sum_sq.add(dI * dI / I);
    }
    const double K = static_cast<double>(D - 1);
    const double g = sum_dI.value() / (delta_t * sum_I.value());
    const double s = (sum_sq.value() - sum_dI.value() * sum_dI.value() / sum_I.value()) / (K * delta_t);

    ParamEstimate est;
    est.alpha_hat = 0.5 * (s + g);
    est.beta_hat = 0.5 * (s - g);
    est.beta_nonpositive = !(est.beta_hat > 0.0);
    est.r_hat = est.beta_nonpositive ? std::numeric_limits<double>::quiet_NaN() : est.alpha_hat / est.beta_hat;
    est.loglik = loglik_I2(totals, est.alpha_hat, est.beta_hat, delta_t).value;
    return est;
}

TimeSeriesDataset convert_dJ_to_I(const TimeSeriesDataset& dJ, double alpha_hat) {
    if (dJ.kind != DatasetKind::kNewCases) throw std::invalid_argument("convert_dJ_to_I: needs a new-cases dataset");
    if (!(alpha_hat > 0.0)) throw std::invalid_argument("convert_dJ_to_I: alpha_hat must be positive");
    TimeSeriesDataset out;
    out.kind = DatasetKind::kInfectiousCounts;
    out.delta_t = dJ.delta_t;
    out.t0 = dJ.t0;
    out.values = dJ.values / (alpha_hat * dJ.delta_t);
    out.node_names = dJ.node_names;
    out.metadata = dJ.metadata;
    out.metadata["converted_from"] = "new-cases";
    out.metadata["conversion_alpha"] = alpha_hat;
    return out;
}

std::string_view to_string(GammaMode mode) { return mode == GammaMode::kKnown ? "known" : "search"; }

GammaMode gamma_mode_from_string(std::string_view s) {
    if (s == "known") return GammaMode::kKnown;
    if (s == "search") return GammaMode::kSearch;
    throw std::invalid_argument("unknown gamma mode: " + std::string(s));
}

void AnnealingSchedule::validate() const {
    if (steps < 0) throw std::invalid_argument("annealing: steps must be >= 0");
    if (k < 0.0 || !std::isfinite(k)) throw std::invalid_argument("annealing: k must be positive (or 0 for adaptive)");
    if (k == 0.0 && k_samples < 2) throw std::invalid_argument("annealing: adaptive k needs k_samples >= 2");
    if (gamma_grid.empty()) throw std::invalid_argument("annealing: empty gamma grid");
    for (double g : gamma_grid)
        if (!(g > 0.0)) throw std::invalid_argument("annealing: gamma grid values must be positive");
    if (!std::is_sorted(gamma_grid.begin(), gamma_grid.end()))
        throw std::invalid_argument("annealing: gamma grid must be increasing");
    if (gamma_every < 1) throw std::invalid_argument("annealing: gamma_every must be >= 1");
}

std::string_view to_string(KRule r) { return r == KRule::kSd ? "sd" : "mean-abs"; }

KRule k_rule_from_string(std::string_view s) {
    if (s == "sd") return KRule::kSd;
    if (s == "mean-abs") return KRule::kMeanAbs;
    throw std::invalid_argument("annealing: unknown k_rule '" + std::string(s) + "'");
}

std::string_view to_string(Proposal p) { return p == Proposal::kFlip ? "flip" : "flip-rewire"; }

Proposal proposal_from_string(std::string_view s) {
    if (s == "flip") return Proposal::kFlip;
    if (s == "flip-rewire") return Proposal::kFlipRewire;
    throw std::invalid_argument("annealing: unknown proposal '" + std::string(s) + "'");
}

nlohmann::json AnnealingSchedule::to_json() const {
    return {{"steps", steps},
            {"k", k},
            {"k_samples", k_samples},
            {"k_rule", std::string(epinet::to_string(k_rule))},
            {"gamma_grid", gamma_grid},
            {"gamma_every", gamma_every},
            {"polish", polish},
            {"temperature", "1/log(s+2)"},
            {"proposal", std::string(epinet::to_string(proposal))},
            {"moment_mode", likelihood.mode == MomentMode::kApprox ? "approx" : "exact"},
            {"degenerate_policy", likelihood.policy == DegeneratePolicy::kRegularize ? "regularize" : "skip"},
            {"ridge_eps", likelihood.ridge_eps},
            {"drop_point_mass", likelihood.drop_point_mass}};
}

AnnealingSchedule AnnealingSchedule::from_json(const nlohmann::json& j) {
    static constexpr std::string_view kKeys[] = {"steps",       "k",           "k_samples",         "k_rule",         "gamma_grid",
                                                 "gamma_every", "polish",      "temperature",       "proposal",
                                                 "moment_mode", "ridge_eps",   "degenerate_policy", "drop_point_mass"};
    for (const auto& [key, value] : j.items())
        if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
            throw std::invalid_argument("annealing: unknown key '" + key + "'");
    if (j.contains("temperature") && j.at("temperature") != "1/log(s+2)")
        throw std::invalid_argument("annealing: only the 1/log(s+2) temperature rule is supported");
    AnnealingSchedule s;
    s.steps = j.value("steps", s.steps);
    s.k = j.value("k", s.k);
    s.k_samples = j.value("k_samples", s.k_samples);
    if (j.contains("k_rule")) s.k_rule = k_rule_from_string(j.at("k_rule").get<std::string>());
    s.gamma_grid = j.value("gamma_grid", s.gamma_grid);
    s.gamma_every = j.value("gamma_every", s.gamma_every);
    s.polish = j.value("polish", s.polish);
    if (j.contains("proposal")) s.proposal = proposal_from_string(j.at("proposal").get<std::string>());
    s.likelihood.ridge_eps = j.value("ridge_eps", s.likelihood.ridge_eps);
    s.likelihood.drop_point_mass = j.value("drop_point_mass", s.likelihood.drop_point_mass);
    const auto mode = j.value("moment_mode", std::string("approx"));
    if (mode == "exact") s.likelihood.mode = MomentMode::kExact;
    else if (mode != "approx") throw std::invalid_argument("annealing: unknown moment_mode " + mode);
    const auto policy = j.value("degenerate_policy", std::string("skip"));
    if (policy == "skip") s.likelihood.policy = DegeneratePolicy::kSkip;
    else if (policy != "regularize") throw std::invalid_argument("annealing: unknown degenerate_policy " + policy);
    s.validate();
    return s;
}

double topology_loglik(const TimeSeriesDataset& ds, double alpha_hat, double beta_hat, const NeighborMatrix& l,
                       double gamma_total, const LikelihoodOptions& opts) {
    return loglik_I1(ds, Theta{alpha_hat, beta_hat, mobility_from_topology(l, gamma_total)}, opts).value;
}

double acceptance_probability(double dL, double k, long s) {
    if (dL >= 0.0) return 1.0;
    return std::exp(dL / (k * AnnealingSchedule::temperature(s)));
}

namespace {

struct TopologyObjective {
    const TimeSeriesDataset& ds;
    double alpha, beta;
    const LikelihoodOptions& opts;
    long evaluations = 0;

    double operator()(const NeighborMatrix& l, double gamma) {
        ++evaluations;
        const double v = topology_loglik(ds, alpha, beta, l, gamma, opts);
        return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
    }
};

NeighborMatrix random_topology(int n, RandomStream& rng) {
    NeighborMatrix l(n);
    for (int p = 0; p < l.pair_count(); ++p) {
        const auto [i, j] = l.pair_at(p);
        if (rng.bernoulli(0.5)) l.set(i, j, true);
    }
    return l;
}

// Moves one endpoint of a uniformly chosen link to a uniformly chosen non-neighbour;
// false when the topology has no link or the kept endpoint has no free partner.
bool rewire(NeighborMatrix& l, RandomStream& rng) {
    const int links = l.link_count();
    if (links == 0) return false;
    auto pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(links)));
    int i = -1, j = -1;
    for (int p = 0; p < l.pair_count(); ++p) {
        const auto [a, b] = l.pair_at(p);
        if (l(a, b) && pick-- == 0) {
            i = a;
            j = b;
            break;
        }
    }
    if (rng.bernoulli(0.5)) std::swap(i, j);
    std::vector<int> free;
    for (int k = 0; k < l.n(); ++k)
        if (k != i && k != j && !l(i, k)) free.push_back(k);
    if (free.empty()) return false;
    const int k = free[rng.below(free.size())];
    l.set(i, j, false);
    l.set(i, k, true);
    return true;
}

double sample_mean(const std::vector<double>& xs) {
    CompensatedSum s;
    for (double x : xs) s.add(x);
    return s.value() / static_cast<double>(xs.size());
}

double sample_sd(const std::vector<double>& xs) {
    const double mean = sample_mean(xs);
    CompensatedSum ss;
    for (double x : xs) ss.add((x - mean) * (x - mean));
    return std::sqrt(ss.value() / static_cast<double>(xs.size() - 1));
}

}  // namespace

TopologyEstimate sa_topology_search(const TimeSeriesDataset& ds, double alpha_hat, double beta_hat,
                                    const AnnealingSchedule& schedule, std::uint64_t seed, GammaMode mode,
                                    double gamma_total, int trial_id) {
    schedule.validate();
    if (ds.kind != DatasetKind::kInfectiousCounts)
        throw std::invalid_argument("sa_topology_search: needs an infectious-counts dataset");
    const int n = ds.n();
    if (n < 2) throw std::invalid_argument("sa_topology_search: need n >= 2");
    if (!(gamma_total > 0.0)) throw std::invalid_argument("sa_topology_search: gamma_total must be positive");

    RandomStream rng(seed, "estimate/sa/" + std::to_string(trial_id));
    TopologyObjective objective{ds, alpha_hat, beta_hat, schedule.likelihood};

    const std::vector<double> grid =
        mode == GammaMode::kSearch ? schedule.gamma_grid : std::vector<double>{gamma_total};
    int gi = 0;
    for (int g = 1; g < static_cast<int>(grid.size()); ++g)
        if (std::abs(std::log(grid[g] / gamma_total)) < std::abs(std::log(grid[gi] / gamma_total))) gi = g;

    // Scale constant and starting state from random topologies.
    NeighborMatrix cur;
    double cur_L = -std::numeric_limits<double>::infinity();
    double k = schedule.k;
    {
        const int samples = std::max(schedule.k == 0.0 ? schedule.k_samples : 1, 1);
        std::vector<double> values;
        values.reserve(static_cast<std::size_t>(samples));
        for (int s = 0; s < samples; ++s) {
            NeighborMatrix l = random_topology(n, rng);
            const double L = objective(l, grid[gi]);
            if (std::isfinite(L)) values.push_back(L);
            if (cur.n() == 0 || L > cur_L) {
                cur = l;
                cur_L = L;
            }
        }
        if (k == 0.0) {
            if (schedule.k_rule == KRule::kMeanAbs) k = values.empty() ? 0.0 : std::abs(sample_mean(values));
            else k = values.size() >= 2 ? sample_sd(values) : 0.0;
            if (!(k > 0.0) || !std::isfinite(k)) k = 1.0;
        }
    }

    TopologyEstimate est;
    est.trial_id = trial_id;
    est.k = k;
    NeighborMatrix best = cur;
    int best_gi = gi;
    double best_L = cur_L;
    est.converged_step = objective.evaluations;

    const long steps = schedule.steps_for(n);
    const int pairs = cur.pair_count();
    const bool gamma_moves = mode == GammaMode::kSearch && grid.size() > 1;
    for (long s = 0; s < steps; ++s) {
        NeighborMatrix cand = cur;
        int cand_gi = gi;
        if (gamma_moves && s % (schedule.gamma_every + 1) == schedule.gamma_every) {
            if (gi == 0) cand_gi = 1;
            else if (gi + 1 == static_cast<int>(grid.size())) cand_gi = gi - 1;
            else cand_gi = gi + (rng.bernoulli(0.5) ? 1 : -1);
        } else if (!(schedule.proposal == Proposal::kFlipRewire && rng.bernoulli(0.5) && rewire(cand, rng))) {
            const auto [i, j] = cand.pair_at(static_cast<int>(rng.below(static_cast<std::uint64_t>(pairs))));
            cand.flip(i, j);
        }
        const double cand_L = objective(cand, grid[cand_gi]);
        const double dL = cand_L - cur_L;
        const double p = acceptance_probability(dL, k, s);
        assert(!(dL >= 0.0) || p == 1.0);
        if (dL >= 0.0 || (std::isfinite(cand_L) && rng.uniform() < p)) {
            cur = std::move(cand);
            gi = cand_gi;
            cur_L = cand_L;
            ++est.accepted;
            if (cur_L > best_L) {
                best = cur;
                best_gi = gi;
                best_L = cur_L;
                est.converged_step = objective.evaluations;
            }
        }
    }
    est.steps = steps;

    if (schedule.polish) {
        bool improved = true;
        while (improved) {
            improved = false;
            const auto try_candidate = [&](NeighborMatrix&& cand) {
                const double L = objective(cand, grid[best_gi]);
                if (L > best_L) {
                    best = std::move(cand);
                    best_L = L;
                    improved = true;
                    est.converged_step = objective.evaluations;
                }
            };
            for (int p = 0; p < pairs; ++p) {
                NeighborMatrix cand = best;
                const auto [i, j] = cand.pair_at(p);
                cand.flip(i, j);
                try_candidate(std::move(cand));
            }
            if (schedule.proposal == Proposal::kFlipRewire) {
                for (int p = 0; p < pairs; ++p) {
                    const auto [a, b] = best.pair_at(p);
                    if (!best(a, b)) continue;
                    for (const auto& [i, j] : {std::pair{a, b}, std::pair{b, a}}) {
                        for (int k = 0; k < n; ++k) {
                            if (k == i || k == j || best(i, k) || !best(i, j)) continue;
                            NeighborMatrix cand = best;
                            cand.set(i, j, false);
                            cand.set(i, k, true);
                            try_candidate(std::move(cand));
                        }
                    }
                }
            }
            if (gamma_moves) {
                for (int cand_gi : {best_gi - 1, best_gi + 1}) {
                    if (cand_gi < 0 || cand_gi >= static_cast<int>(grid.size())) continue;
                    const double L = objective(best, grid[cand_gi]);
                    if (L > best_L) {
                        best_gi = cand_gi;
                        best_L = L;
                        improved = true;
                        est.converged_step = objective.evaluations;
                    }
                }
            }
        }
    }

    const LogLikelihood audit = loglik_I1(
        ds, Theta{alpha_hat, beta_hat, mobility_from_topology(best, grid[best_gi])}, schedule.likelihood);
    est.l_hat = std::move(best);
    est.gamma_total = grid[best_gi];
    est.loglik = best_L;
    est.evaluations = objective.evaluations + 1;
    est.flagged_terms = audit.count(kTermRegularized) + audit.count(kTermSkipped);
    return est;
}

std::vector<RankedTopology> multi_trial_topology_ranking(const TimeSeriesDataset& ds, double alpha_hat,
                                                         double beta_hat, int trials,
                                                         const AnnealingSchedule& schedule, std::uint64_t seed,
                                                         GammaMode mode, double gamma_total) {
    if (trials < 1) throw std::invalid_argument("multi_trial_topology_ranking: trials must be >= 1");
    std::map<std::pair<std::string, double>, RankedTopology> merged;
    for (int t = 0; t < trials; ++t) {
        TopologyEstimate est = sa_topology_search(ds, alpha_hat, beta_hat, schedule, seed, mode, gamma_total, t);
        auto key = std::make_pair(est.l_hat.canonical(), est.gamma_total);
        auto [it, inserted] = merged.try_emplace(key);
        if (inserted) it->second.best = std::move(est);
        it->second.multiplicity += 1;
        it->second.trial_ids.push_back(t);
    }
    std::vector<RankedTopology> out;
    out.reserve(merged.size());
    for (auto& [key, r] : merged) out.push_back(std::move(r));
    std::stable_sort(out.begin(), out.end(), [](const RankedTopology& a, const RankedTopology& b) {
        return a.best.loglik > b.best.loglik;
    });
    return out;
}

std::string_view to_string(JMethod m) { return m == JMethod::kAnneal ? "anneal" : "quasi-newton"; }

JMethod j_method_from_string(std::string_view s) {
    if (s == "anneal") return JMethod::kAnneal;
    if (s == "quasi-newton") return JMethod::kQuasiNewton;
    throw std::invalid_argument("unknown J method: " + std::string(s));
}

namespace {

struct JProblem {
    std::span<const double> J;
    double dt;

    // Log-likelihood at x = (log alpha, log beta, log I0); -inf outside the valid region.
    double loglik(const double* x) const {
        const double a = std::exp(x[0]), b = std::exp(x[1]), i0 = std::exp(x[2]);
        if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(i0) || !(i0 > 0.0))
            return -std::numeric_limits<double>::infinity();
        const double v = loglik_J2(J, a, b, i0, dt).value;
        return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
    }
};

constexpr double kPenalty = 1e300;

double neg_f(const gsl_vector* x, void* params) {
    const auto* p = static_cast<const JProblem*>(params);
    const double L = p->loglik(x->data);
    return std::isfinite(L) ? -L : kPenalty;
}

void neg_df(const gsl_vector* x, void* params, gsl_vector* g) {
    const auto* p = static_cast<const JProblem*>(params);
    constexpr double h = 1e-6;
    double xs[3] = {x->data[0], x->data[1], x->data[2]};
    for (int i = 0; i < 3; ++i) {
        const double xi = xs[i];
        xs[i] = xi + h;
        const double up = p->loglik(xs);
        xs[i] = xi - h;
        const double dn = p->loglik(xs);
        xs[i] = xi;
        gsl_vector_set(g, static_cast<std::size_t>(i),
                       std::isfinite(up) && std::isfinite(dn) ? -(up - dn) / (2.0 * h) : 0.0);
    }
}

void neg_fdf(const gsl_vector* x, void* params, double* f, gsl_vector* g) {
    *f = neg_f(x, params);
    neg_df(x, params, g);
}

// Growth rate from a least-squares line through log increments.
double growth_guess(std::span<const double> J, double dt) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    for (std::size_t d = 0; d + 1 < J.size(); ++d) {
        const double inc = std::max(J[d + 1] - J[d], 0.5);
        const double x = static_cast<double>(d) * dt, y = std::log(inc);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++m;
    }
    const double den = m * sxx - sx * sx;
    return den > 0.0 ? (m * sxy - sx * sy) / den : 0.0;
}

// Start (log alpha, log beta, log I0) consistent with the growth rate and the first observation.
std::array<double, 3> starting_point(std::span<const double> J, double dt, double g, double beta) {
    const double alpha = std::max(beta + g, 1e-3);
    const double gg = alpha - beta;
    const double t = dt;
    const double shape = std::abs(gg * t) < 1e-8 ? 1.0 + alpha * t : (alpha * std::exp(gg * t) - beta) / gg;
    const double i0 = std::max(J[1] / shape, 1e-3);
    return {std::log(alpha), std::log(beta), std::log(i0)};
}

ParamEstimate fill_estimate(const JProblem& prob, const double* x, bool converged) {
    ParamEstimate est;
    est.alpha_hat = std::exp(x[0]);
    est.beta_hat = std::exp(x[1]);
    est.i0_hat = std::exp(x[2]);
    est.r_hat = est.alpha_hat / est.beta_hat;
    est.loglik = prob.loglik(x);
    est.converged = converged;
    return est;
}

ParamEstimate fit_quasi_newton(const JProblem& prob, RandomStream& rng, const JFitOptions& opts) {
    const double g = growth_guess(prob.J, prob.dt);
    gsl_multimin_function_fdf fn{&neg_f, &neg_df, &neg_fdf, 3, const_cast<JProblem*>(&prob)};
    gsl_multimin_fdfminimizer* solver = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, 3);
    gsl_vector* x0 = gsl_vector_alloc(3);
    gsl_error_handler_t* old_handler = gsl_set_error_handler_off();

    std::array<double, 3> best_x{};
    double best_L = -std::numeric_limits<double>::infinity();
    bool best_converged = false;
    for (int s = 0; s < std::max(opts.starts, 1); ++s) {
        const double beta0 = std::exp(std::log(0.01) + rng.uniform() * std::log(100.0));
        auto start = starting_point(prob.J, prob.dt, g, beta0);
        start[2] += std::log(0.5) + rng.uniform() * std::log(4.0);
        for (int i = 0; i < 3; ++i) gsl_vector_set(x0, static_cast<std::size_t>(i), start[i]);
        if (!std::isfinite(prob.loglik(x0->data))) continue;

        gsl_multimin_fdfminimizer_set(solver, &fn, x0, 0.01, 0.1);
        bool converged = false;
        for (int it = 0; it < opts.max_iterations; ++it) {
            const int status = gsl_multimin_fdfminimizer_iterate(solver);
            if (gsl_multimin_test_gradient(solver->gradient, 1e-6) == GSL_SUCCESS) {
                converged = true;
                break;
            }
            if (status != GSL_SUCCESS) {
                converged = gsl_multimin_test_gradient(solver->gradient, 1e-3) == GSL_SUCCESS;
                break;
            }
        }
        const double L = prob.loglik(solver->x->data);
        if (L > best_L) {
            best_L = L;
            best_converged = converged;
            for (int i = 0; i < 3; ++i) best_x[i] = gsl_vector_get(solver->x, static_cast<std::size_t>(i));
        }
    }
    gsl_set_error_handler(old_handler);
    gsl_vector_free(x0);
    gsl_multimin_fdfminimizer_free(solver);
    if (!std::isfinite(best_L)) throw std::runtime_error("estimate_from_J_totals: no finite starting point");
    return fill_estimate(prob, best_x.data(), best_converged);
}

ParamEstimate fit_anneal(const JProblem& prob, RandomStream& rng, const JFitOptions& opts) {
    const double g = growth_guess(prob.J, prob.dt);
    std::array<double, 3> cur{};
    double cur_L = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < 100; ++s) {
        const double beta0 = std::exp(std::log(0.01) + rng.uniform() * std::log(100.0));
        auto x = starting_point(prob.J, prob.dt, g, beta0);
        x[2] += std::log(0.5) + rng.uniform() * std::log(4.0);
        const double L = prob.loglik(x.data());
        if (L > cur_L) {
            cur = x;
            cur_L = L;
        }
    }
    if (!std::isfinite(cur_L)) throw std::runtime_error("estimate_from_J_totals: no finite starting point");

    boost::random::normal_distribution<double> normal;
    auto best = cur;
    double best_L = cur_L;
    long best_step = 0;
    double sigma = 0.05;
    int window_accepts = 0;
    constexpr int kWindow = 200;
    for (long s = 0; s < opts.anneal_steps; ++s) {
        std::array<double, 3> cand = cur;
        for (double& c : cand) c += sigma * normal(rng);
        const double L = prob.loglik(cand.data());
        const double dL = L - cur_L;
        const double p = dL >= 0.0 ? 1.0 : std::exp(dL / (opts.anneal_k * AnnealingSchedule::temperature(s)));
        if (dL >= 0.0 || (std::isfinite(L) && rng.uniform() < p)) {
            cur = cand;
            cur_L = L;
            ++window_accepts;
            if (cur_L > best_L) {
                best = cur;
                best_L = cur_L;
                best_step = s;
            }
        }
        if ((s + 1) % kWindow == 0) {
            const double rate = static_cast<double>(window_accepts) / kWindow;
            sigma = std::clamp(sigma * std::exp(rate - 0.25), 1e-7, 1.0);
            window_accepts = 0;
        }
    }
    const bool converged = best_step < opts.anneal_steps - opts.anneal_steps / 10 || opts.anneal_steps == 0;
    return fill_estimate(prob, best.data(), converged);
}

}  // namespace

ParamEstimate estimate_from_J_totals(std::span<const double> totalsJ, double delta_t, JMethod method,
                                     std::uint64_t seed, const JFitOptions& opts) {
    if (totalsJ.size() < 4) throw std::invalid_argument("estimate_from_J_totals: need D >= 4");
    if (!(delta_t > 0.0)) throw std::invalid_argument("estimate_from_J_totals: delta_t must be positive");
    for (std::size_t d = 0; d + 1 < totalsJ.size(); ++d)
        if (totalsJ[d + 1] < totalsJ[d])
            throw std::invalid_argument("estimate_from_J_totals: J decreases at d=" + std::to_string(d));
    if (!(totalsJ[1] > 0.0)) throw std::invalid_argument("estimate_from_J_totals: J(t_1) must be positive");
    const JProblem prob{totalsJ, delta_t};
    if (method == JMethod::kQuasiNewton) {
        RandomStream rng(seed, "estimate/j-qn");
        return fit_quasi_newton(prob, rng, opts);
    }
    RandomStream rng(seed, "estimate/j-anneal");
    return fit_anneal(prob, rng, opts);
}

nlohmann::json estimates_to_json(const ParamEstimate& params, const std::vector<RankedTopology>& ranking) {
    nlohmann::json j = params.to_json();
    nlohmann::json tops = nlohmann::json::array();
    for (const auto& r : ranking) {
        nlohmann::json t = topology_to_json(r.best.l_hat, r.best.gamma_total);
        t["loglik"] = r.best.loglik;
        t["multiplicity"] = r.multiplicity;
        t["trial_ids"] = r.trial_ids;
        tops.push_back(std::move(t));
    }
    j["topologies"] = std::move(tops);
    return j;
}

}  // namespace epinet
