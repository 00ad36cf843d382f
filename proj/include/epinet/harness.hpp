#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "epinet/dataset.hpp"
#include "epinet/estimate.hpp"
#include "epinet/simulate.hpp"

namespace epinet {

inline constexpr int kConfigSchemaVersion = 1;

struct ExperimentConfig {
    int schema_version = kConfigSchemaVersion;
    std::string name = "experiment";
    int n = 10;
    double avg_degree = 2.0;
    double alpha = 0.067;
    double beta = 0.033;
    double gamma_total = 0.1;
    double delta_t = 1.0;
    int D = 100;
    DatasetKind dataset_kind = DatasetKind::kInfectiousCounts;
    int trials = 20;
    std::uint64_t seed = 1;
    double population_total = 0.0;      // 0: 1e6 n
    double population_exponent = 0.5;
    int index_node = 0;
    double index_cases = 200.0;
    ModelKind model = ModelKind::kLinearized;
    SimulationOptions simulation;
    bool round_counts = false;
    GammaMode gamma_mode = GammaMode::kSearch;
    AnnealingSchedule annealing;
    int sa_restarts = 5;  // independent annealing runs per trial; the best one is scored
    JMethod j_method = JMethod::kQuasiNewton;
    JFitOptions j_fit;
    bool run_mle = true;
    bool run_baselines = true;

    double population() const { return population_total > 0.0 ? population_total : 1e6 * n; }
    void validate() const;
    nlohmann::json to_json() const;
    /// Accepts either (alpha, beta), (r, beta) or (r, alpha); unknown keys are rejected.
    static ExperimentConfig from_json(const nlohmann::json& j);
};

struct TrialResult {
    int trial = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double e_l = 0.0, e_r = 0.0;
    double alpha_hat = 0.0, beta_hat = 0.0, r_hat = 0.0, gamma_hat = 0.0, i0_hat = 0.0;
    double loglik = 0.0;
    double naive_e_l = 0.0, random_e_l = 0.0;
    int links_true = 0, links_hat = 0;
    std::string topology_true, topology_hat;  // canonical upper-triangle encodings
    double runtime_s = 0.0;                   // excluded from deterministic outputs
};

struct MetricSummary {
    double mean = 0.0;
    double sd = 0.0;
    int count = 0;
};

struct ExperimentReport {
    nlohmann::json config;
    std::vector<TrialResult> trials;

    bool all_ok() const;
    int failed() const;
    /// Mean and sample sd over successful trials of a named metric
    /// (e_l, e_r, naive_e_l, random_e_l, loglik, r_hat).
    MetricSummary summary(std::string_view metric) const;
    nlohmann::json to_json() const;
    static ExperimentReport from_json(const nlohmann::json& j);
};

double trial_metric(const TrialResult& t, std::string_view metric);
MetricSummary summarize(const std::vector<double>& xs);

/// Seed of trial t, derived from the master seed only.
std::uint64_t trial_seed(std::uint64_t master, int trial);

/// Everything one synthetic trial produces before estimation.
struct SyntheticData {
    NeighborMatrix l_true;
    MobilityMatrix gamma;
    TimeSeriesDataset dataset;
};

SyntheticData synthesize(const ExperimentConfig& cfg, std::uint64_t seed);
TrialResult run_trial(const ExperimentConfig& cfg, int trial);
ExperimentReport run_synthetic_experiment(const ExperimentConfig& cfg);

struct IngestResult {
    TimeSeriesDataset dataset;
    std::vector<std::string> warnings;
    std::vector<std::string> dropped_regions;
};

/// Reads "date,REGION,..." cumulative counts (dates YYYY-MM-DD) and returns daily new
/// cases on the window [start, end]: D = days(end - start) rows, J(t_0) = count on start.
IngestResult ingest_cumulative_cases(std::istream& is, std::string_view window_start, std::string_view window_end,
                                     double min_cases, std::string_view source = "<stream>");
IngestResult ingest_cumulative_cases(const std::filesystem::path& path, std::string_view window_start,
                                     std::string_view window_end, double min_cases);

/// Writes the cumulative view of a new-cases dataset as "date,REGION,..." rows starting at `start_date`.
void write_cumulative_csv(std::ostream& os, const TimeSeriesDataset& ds, std::string_view start_date);

struct CaseStudyOptions {
    int trials = 20;
    std::uint64_t seed = 1;
    AnnealingSchedule annealing;
    GammaMode gamma_mode = GammaMode::kSearch;
    double gamma_total = 0.1;
    JMethod j_method = JMethod::kQuasiNewton;
    JFitOptions j_fit;

    nlohmann::json to_json() const;
    static CaseStudyOptions from_json(const nlohmann::json& j);
};

struct CaseStudyResult {
    ParamEstimate params;
    TimeSeriesDataset converted;
    std::vector<RankedTopology> ranking;
    std::vector<std::string> node_names;
    nlohmann::json options;

    nlohmann::json to_json() const;
};

CaseStudyResult run_case_study(const TimeSeriesDataset& ds, const CaseStudyOptions& opts);

/// Eleven-region stand-in for the archived case data, simulated on a fixed topology.
struct Surrogate {
    NeighborMatrix l_true;
    std::vector<std::string> regions;
    TimeSeriesDataset dataset;  // new cases
    double alpha = 0.18, beta = 0.13;
};
Surrogate make_case_study_surrogate(std::uint64_t seed);

/// Subgraph of `l` (nodes labelled `names`) induced by `keep`, in the order of `keep`.
NeighborMatrix induced_topology(const NeighborMatrix& l, const std::vector<std::string>& names,
                                const std::vector<std::string>& keep);
inline constexpr std::string_view kSurrogateStart = "2003-03-17";
inline constexpr std::string_view kSurrogateEnd = "2003-04-17";

/// report.csv (per-trial rows plus a mean row), summary.json and plot_*.dat (x y sigma)
/// under `dir`; timing.json holds wall-clock data kept out of the deterministic files.
void emit_report(const ExperimentReport& report, const std::filesystem::path& dir);
void write_report_csv(std::ostream& os, const ExperimentReport& report);

/// One line "x y sigma" per report for E_l and E_r against `x_key` of the config echo.
void emit_plot_data(const std::vector<ExperimentReport>& reports, std::string_view x_key,
                    const std::filesystem::path& dir);

void emit_case_study(const CaseStudyResult& result, const std::filesystem::path& dir);

/// Monte-Carlo ensemble of the linearized simulator against exact_moments.
struct MomentCheckConfig {
    double alpha = 0.1, beta = 0.05;
    MobilityMatrix gamma;
    std::vector<double> I0;
    std::vector<double> times{1.0, 5.0, 10.0};
    long paths = 100000;
    double dt_int = 0.01;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static MomentCheckConfig from_json(const nlohmann::json& j);
};

struct MomentBlockCheck {
    std::string block;   // mI, mJ, vII, vIJ, vJJ
    double t = 0.0;
    int entries = 0;
    double rms_z = 0.0;  // sqrt(sum (mc - exact)^2 / sum se^2)
    double max_abs_z = 0.0;
    int beyond_3se = 0;
};

struct MomentCheckResult {
    std::vector<MomentBlockCheck> blocks;
    double runtime_s = 0.0;
    long negative_updates = 0;

    bool pass(double z = 3.0) const;
    nlohmann::json to_json() const;
};

MomentCheckResult moment_check(const MomentCheckConfig& cfg);

}  // namespace epinet
