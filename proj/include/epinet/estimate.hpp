#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "epinet/dataset.hpp"
#include "epinet/likelihood.hpp"
#include "epinet/netgen.hpp"

namespace epinet {

struct ParamEstimate {
    double alpha_hat = 0.0;
    double beta_hat = 0.0;
    double r_hat = 0.0;                 // NaN when beta_hat <= 0
    std::optional<double> i0_hat;
    double loglik = 0.0;                // of the likelihood that was maximized, when one was
    bool beta_nonpositive = false;
    bool converged = true;

    nlohmann::json to_json() const;
};

/// Closed-form maximizers of the aggregate likelihood over the D-1 increments:
///   g = sum dI / (dt sum I),  s = (sum dI^2/I - (sum dI)^2 / sum I) / ((D-1) dt),
///   alpha = (s + g) / 2,  beta = (s - g) / 2,
/// with every sum over d = 0..D-2.
ParamEstimate estimate_alpha_beta(std::span<const double> totals, double delta_t);

/// I_i(t_d) = dJ_i(t_d) / (alpha_hat dt).
TimeSeriesDataset convert_dJ_to_I(const TimeSeriesDataset& dJ, double alpha_hat);

enum class GammaMode { kKnown, kSearch };
std::string_view to_string(GammaMode mode);
GammaMode gamma_mode_from_string(std::string_view s);

/// Topology neighbour rule: flip toggles one pair; flip-rewire also moves one endpoint
/// of an existing link (l_ij = 1, l_ik = 0 becomes l_ij = 0, l_ik = 1) half of the time.
enum class Proposal { kFlip, kFlipRewire };
std::string_view to_string(Proposal p);
Proposal proposal_from_string(std::string_view s);

/// Adaptive scale constant from k_samples random topologies: their standard deviation,
/// or the magnitude of their mean.
enum class KRule { kSd, kMeanAbs };
std::string_view to_string(KRule r);
KRule k_rule_from_string(std::string_view s);

struct AnnealingSchedule {
    long steps = 0;           // 0: 200 n^2
    double k = 0.0;           // 0: adaptive, see k_rule
    int k_samples = 100;
    KRule k_rule = KRule::kMeanAbs;
    std::vector<double> gamma_grid{0.025, 0.05, 0.1, 0.2, 0.4};
    int gamma_every = 10;     // topology moves per gamma move in search mode
    bool polish = true;       // greedy ascent over the proposal neighbourhood from the best visited state
    Proposal proposal = Proposal::kFlipRewire;
    LikelihoodOptions likelihood;

    static double temperature(long s) { return 1.0 / std::log(static_cast<double>(s) + 2.0); }
    long steps_for(int n) const { return steps > 0 ? steps : 200L * n * n; }
    void validate() const;
    nlohmann::json to_json() const;
    static AnnealingSchedule from_json(const nlohmann::json& j);
};

/// min(exp(dL / (k T(s))), 1): improvements are always accepted.
double acceptance_probability(double dL, double k, long s);

struct TopologyEstimate {
    NeighborMatrix l_hat;
    double gamma_total = 0.0;
    double loglik = 0.0;
    int trial_id = 0;
    long converged_step = 0;  // objective evaluation at which the best state was first reached
    long steps = 0;
    long accepted = 0;
    long evaluations = 0;
    double k = 0.0;
    int flagged_terms = 0;    // regularized or skipped terms of the reported likelihood
};

/// Simulated annealing over binary topologies maximizing loglik_I1(alpha_hat, beta_hat, Gamma(l)).
/// In search mode gamma_total is the starting value and is snapped to the nearest grid point.
TopologyEstimate sa_topology_search(const TimeSeriesDataset& ds, double alpha_hat, double beta_hat,
                                    const AnnealingSchedule& schedule, std::uint64_t seed, GammaMode mode,
                                    double gamma_total, int trial_id = 0);

/// Re-evaluates the likelihood a TopologyEstimate reports.
double topology_loglik(const TimeSeriesDataset& ds, double alpha_hat, double beta_hat, const NeighborMatrix& l,
                       double gamma_total, const LikelihoodOptions& opts = {});

struct RankedTopology {
    TopologyEstimate best;
    int multiplicity = 0;
    std::vector<int> trial_ids;
};

/// Independent annealing runs (trial t uses stream "estimate/sa/<t>"), deduplicated by
/// (topology, gamma) and sorted by loglik descending, ties by canonical encoding.
std::vector<RankedTopology> multi_trial_topology_ranking(const TimeSeriesDataset& ds, double alpha_hat,
                                                         double beta_hat, int trials,
                                                         const AnnealingSchedule& schedule, std::uint64_t seed,
                                                         GammaMode mode, double gamma_total);

enum class JMethod { kAnneal, kQuasiNewton };
std::string_view to_string(JMethod m);
JMethod j_method_from_string(std::string_view s);

struct JFitOptions {
    int starts = 20;            // quasi-Newton restarts
    int max_iterations = 1000;  // per quasi-Newton start
    long anneal_steps = 20000;
    double anneal_k = 1.0;      // likelihood scale in the acceptance rule
};

/// Maximizes loglik_J2 over (alpha, beta, I0) in log-parameter space.
ParamEstimate estimate_from_J_totals(std::span<const double> totalsJ, double delta_t, JMethod method,
                                     std::uint64_t seed, const JFitOptions& opts = {});

nlohmann::json estimates_to_json(const ParamEstimate& params, const std::vector<RankedTopology>& ranking);

}  // namespace epinet
