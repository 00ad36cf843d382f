#include "epinet/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "epinet/evaluation.hpp"
#include "epinet/format.hpp"
#include "epinet/moments.hpp"
#include "epinet/rng.hpp"

namespace epinet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed, std::string_view where) {
    if (!j.is_object()) throw std::invalid_argument(std::string(where) + ": expected an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw std::invalid_argument(std::string(where) + ": unknown key '" + key + "'");
}

std::string_view model_name(ModelKind m) { return m == ModelKind::kLinearized ? "linearized" : "full-sir"; }

ModelKind model_from_string(std::string_view s) {
    if (s == "linearized") return ModelKind::kLinearized;
    if (s == "full-sir") return ModelKind::kFullSir;
    throw std::invalid_argument("unknown model '" + std::string(s) + "'");
}

nlohmann::json j_fit_to_json(JMethod method, const JFitOptions& o) {
    return {{"method", std::string(to_string(method))},
            {"starts", o.starts},
            {"max_iterations", o.max_iterations},
            {"anneal_steps", o.anneal_steps},
            {"anneal_k", o.anneal_k}};
}

void j_fit_from_json(const nlohmann::json& j, JMethod& method, JFitOptions& o) {
    reject_unknown_keys(j, {"method", "starts", "max_iterations", "anneal_steps", "anneal_k"}, "j_fit");
    method = j_method_from_string(j.value("method", std::string(to_string(method))));
    o.starts = j.value("starts", o.starts);
    o.max_iterations = j.value("max_iterations", o.max_iterations);
    o.anneal_steps = j.value("anneal_steps", o.anneal_steps);
    o.anneal_k = j.value("anneal_k", o.anneal_k);
    if (o.starts < 1 || o.max_iterations < 1 || o.anneal_steps < 0 || !(o.anneal_k > 0.0))
        throw std::invalid_argument("j_fit: invalid settings");
}

double number_or_nan(const nlohmann::json& j, const char* key) {
    const auto it = j.find(key);
    return it == j.end() || it->is_null() ? kNaN : it->get<double>();
}

std::string csv_safe(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (schema_version != kConfigSchemaVersion)
        throw std::invalid_argument("config: unsupported schema_version " + std::to_string(schema_version));
    if (n < 2) throw std::invalid_argument("config: n must be >= 2");
    if (!(avg_degree >= 0.0 && avg_degree <= n - 1)) throw std::invalid_argument("config: avg_degree out of range");
    TransmissionParams{alpha, beta, gamma_total}.validate();
    if (!(gamma_total > 0.0)) throw std::invalid_argument("config: gamma_total must be positive");
    if (!(delta_t > 0.0)) throw std::invalid_argument("config: delta_t must be positive");
    if (D < 4) throw std::invalid_argument("config: D must be >= 4");
    if (trials < 0) throw std::invalid_argument("config: trials must be >= 0");
    if (index_node < 0 || index_node >= n) throw std::invalid_argument("config: index_node out of range");
    if (!(index_cases > 0.0)) throw std::invalid_argument("config: index_cases must be positive");
    if (!(population() > index_cases)) throw std::invalid_argument("config: population must exceed index_cases");
    if (!(population_exponent > 0.0)) throw std::invalid_argument("config: population_exponent must be positive");
    if (!(simulation.dt_int > 0.0)) throw std::invalid_argument("config: simulation.dt_int must be positive");
    const double ratio = delta_t / simulation.dt_int;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio)
        throw std::invalid_argument("config: delta_t must be a multiple of simulation.dt_int");
    annealing.validate();
    if (sa_restarts < 1) throw std::invalid_argument("config: sa_restarts must be >= 1");
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json sim = simulation.to_json();
    sim.erase("record_stride");
    return {{"schema_version", schema_version},
            {"name", name},
            {"n", n},
            {"avg_degree", avg_degree},
            {"alpha", alpha},
            {"beta", beta},
            {"r", alpha / beta},
            {"gamma_total", gamma_total},
            {"delta_t", delta_t},
            {"D", D},
            {"dataset_kind", std::string(epinet::to_string(dataset_kind))},
            {"trials", trials},
            {"seed", seed},
            {"population_total", population()},
            {"population_exponent", population_exponent},
            {"index_node", index_node},
            {"index_cases", index_cases},
            {"model", std::string(model_name(model))},
            {"simulation", sim},
            {"round_counts", round_counts},
            {"gamma_mode", std::string(epinet::to_string(gamma_mode))},
            {"annealing", annealing.to_json()},
            {"sa_restarts", sa_restarts},
            {"j_fit", j_fit_to_json(j_method, j_fit)},
            {"run_mle", run_mle},
            {"run_baselines", run_baselines}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"schema_version", "name", "n", "avg_degree", "alpha", "beta", "r", "gamma_total", "delta_t",
                         "D", "dataset_kind", "trials", "seed", "population_total", "population_exponent",
                         "index_node", "index_cases", "model", "simulation", "round_counts", "gamma_mode",
                         "annealing", "sa_restarts", "j_fit", "run_mle", "run_baselines", "sweep"},
                        "config");
    ExperimentConfig c;
    c.schema_version = j.value("schema_version", c.schema_version);
    c.name = j.value("name", c.name);
    c.n = j.value("n", c.n);
    c.avg_degree = j.value("avg_degree", c.avg_degree);

    const bool has_a = j.contains("alpha"), has_b = j.contains("beta"), has_r = j.contains("r");
    if (has_a) c.alpha = j.at("alpha").get<double>();
    if (has_b) c.beta = j.at("beta").get<double>();
    if (has_r) {
        const double r = j.at("r").get<double>();
        if (!(r > 0.0)) throw std::invalid_argument("config: r must be positive");
        if (has_a && has_b) {
            if (std::abs(c.alpha / c.beta - r) > 1e-9 * r)
                throw std::invalid_argument("config: r is inconsistent with alpha/beta");
        } else if (has_b) {
            c.alpha = r * c.beta;
        } else {
            c.beta = c.alpha / r;
        }
    }
    c.gamma_total = j.value("gamma_total", c.gamma_total);
    c.delta_t = j.value("delta_t", c.delta_t);
    c.D = j.value("D", c.D);
    if (j.contains("dataset_kind")) c.dataset_kind = dataset_kind_from_string(j.at("dataset_kind").get<std::string>());
    c.trials = j.value("trials", c.trials);
    c.seed = j.value("seed", c.seed);
    c.population_total = j.value("population_total", c.population_total);
    c.population_exponent = j.value("population_exponent", c.population_exponent);
    c.index_node = j.value("index_node", c.index_node);
    c.index_cases = j.value("index_cases", c.index_cases);
    if (j.contains("model")) c.model = model_from_string(j.at("model").get<std::string>());
    if (j.contains("simulation")) {
        const auto& s = j.at("simulation");
        reject_unknown_keys(s, {"dt_int", "noise", "clamp", "noise_model", "scheme"}, "simulation");
        c.simulation.dt_int = s.value("dt_int", c.simulation.dt_int);
        c.simulation.noise = s.value("noise", c.simulation.noise);
        c.simulation.clamp = s.value("clamp", c.simulation.clamp);
        if (s.contains("noise_model"))
            c.simulation.noise_model = noise_model_from_string(s.at("noise_model").get<std::string>());
        if (s.contains("scheme")) c.simulation.scheme = step_scheme_from_string(s.at("scheme").get<std::string>());
    }
    c.round_counts = j.value("round_counts", c.round_counts);
    if (j.contains("gamma_mode")) c.gamma_mode = gamma_mode_from_string(j.at("gamma_mode").get<std::string>());
    if (j.contains("annealing")) c.annealing = AnnealingSchedule::from_json(j.at("annealing"));
    c.sa_restarts = j.value("sa_restarts", c.sa_restarts);
    if (j.contains("j_fit")) j_fit_from_json(j.at("j_fit"), c.j_method, c.j_fit);
    c.run_mle = j.value("run_mle", c.run_mle);
    c.run_baselines = j.value("run_baselines", c.run_baselines);
    c.validate();
    return c;
}

MetricSummary summarize(const std::vector<double>& xs) {
    MetricSummary s;
    s.count = static_cast<int>(xs.size());
    if (xs.empty()) {
        s.mean = s.sd = kNaN;
        return s;
    }
    CompensatedSum sum;
    for (double x : xs) sum.add(x);
    s.mean = sum.value() / s.count;
    if (s.count < 2) {
        s.sd = 0.0;
        return s;
    }
    CompensatedSum ss;
    for (double x : xs) ss.add((x - s.mean) * (x - s.mean));
    s.sd = std::sqrt(ss.value() / (s.count - 1));
    return s;
}

double trial_metric(const TrialResult& t, std::string_view metric) {
    if (metric == "e_l") return t.e_l;
    if (metric == "e_r") return t.e_r;
    if (metric == "naive_e_l") return t.naive_e_l;
    if (metric == "random_e_l") return t.random_e_l;
    if (metric == "loglik") return t.loglik;
    if (metric == "r_hat") return t.r_hat;
    if (metric == "alpha_hat") return t.alpha_hat;
    if (metric == "beta_hat") return t.beta_hat;
    if (metric == "gamma_hat") return t.gamma_hat;
    throw std::invalid_argument("unknown metric '" + std::string(metric) + "'");
}

bool ExperimentReport::all_ok() const { return failed() == 0; }

int ExperimentReport::failed() const {
    return static_cast<int>(std::count_if(trials.begin(), trials.end(), [](const TrialResult& t) { return !t.ok; }));
}

MetricSummary ExperimentReport::summary(std::string_view metric) const {
    std::vector<double> xs;
    for (const auto& t : trials) {
        if (!t.ok) continue;
        const double v = trial_metric(t, metric);
        if (!std::isnan(v)) xs.push_back(v);
    }
    return summarize(xs);
}

namespace {

constexpr const char* kMetrics[] = {"e_l", "e_r", "naive_e_l", "random_e_l", "loglik", "r_hat", "gamma_hat"};

nlohmann::json trial_to_json(const TrialResult& t) {
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
    return {{"trial", t.trial},        {"seed", t.seed},           {"ok", t.ok},
            {"error", t.error},        {"e_l", num(t.e_l)},        {"e_r", num(t.e_r)},
            {"alpha_hat", num(t.alpha_hat)}, {"beta_hat", num(t.beta_hat)}, {"r_hat", num(t.r_hat)},
            {"gamma_hat", num(t.gamma_hat)}, {"i0_hat", num(t.i0_hat)},     {"loglik", num(t.loglik)},
            {"naive_e_l", num(t.naive_e_l)}, {"random_e_l", num(t.random_e_l)},
            {"links_true", t.links_true},    {"links_hat", t.links_hat},
            {"topology_true", t.topology_true}, {"topology_hat", t.topology_hat}};
}

TrialResult trial_from_json(const nlohmann::json& j) {
    TrialResult t;
    t.trial = j.at("trial").get<int>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.ok = j.at("ok").get<bool>();
    t.error = j.value("error", std::string());
    t.e_l = number_or_nan(j, "e_l");
    t.e_r = number_or_nan(j, "e_r");
    t.alpha_hat = number_or_nan(j, "alpha_hat");
    t.beta_hat = number_or_nan(j, "beta_hat");
    t.r_hat = number_or_nan(j, "r_hat");
    t.gamma_hat = number_or_nan(j, "gamma_hat");
    t.i0_hat = number_or_nan(j, "i0_hat");
    t.loglik = number_or_nan(j, "loglik");
    t.naive_e_l = number_or_nan(j, "naive_e_l");
    t.random_e_l = number_or_nan(j, "random_e_l");
    t.links_true = j.value("links_true", 0);
    t.links_hat = j.value("links_hat", 0);
    t.topology_true = j.value("topology_true", std::string());
    t.topology_hat = j.value("topology_hat", std::string());
    return t;
}

}  // namespace

nlohmann::json ExperimentReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : trials) rows.push_back(trial_to_json(t));
    nlohmann::json agg = nlohmann::json::object();
    for (const char* m : kMetrics) {
        const MetricSummary s = summary(m);
        auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
        agg[m] = {{"mean", num(s.mean)}, {"sd", num(s.sd)}, {"count", s.count}};
    }
    return {{"schema_version", kConfigSchemaVersion},
            {"config", config},
            {"trials", rows},
            {"failed", failed()},
            {"aggregate", agg}};
}

ExperimentReport ExperimentReport::from_json(const nlohmann::json& j) {
    ExperimentReport r;
    r.config = j.at("config");
    for (const auto& row : j.at("trials")) r.trials.push_back(trial_from_json(row));
    return r;
}

std::uint64_t trial_seed(std::uint64_t master, int trial) {
    RandomStream s(master, "harness/trial/" + std::to_string(trial));
    return s();
}

SyntheticData synthesize(const ExperimentConfig& cfg, std::uint64_t seed) {
    SyntheticData out;
    out.l_true = generate_er_topology(cfg.n, cfg.avg_degree, seed);
    out.gamma = mobility_from_topology(out.l_true, cfg.gamma_total);
    const TransmissionParams params{cfg.alpha, cfg.beta, cfg.gamma_total};

    const int D = cfg.D;
    const double t_end = cfg.dataset_kind == DatasetKind::kNewCases ? D * cfg.delta_t : (D - 1) * cfg.delta_t;
    SimulationOptions sim = cfg.simulation;
    sim.record_stride = static_cast<int>(std::llround(cfg.delta_t / sim.dt_int));

    std::vector<double> I0(static_cast<std::size_t>(cfg.n), 0.0);
    I0[static_cast<std::size_t>(cfg.index_node)] = cfg.index_cases;

    Trajectory traj;
    if (cfg.model == ModelKind::kLinearized) {
        traj = simulate_linearized(out.gamma, params, I0, t_end, sim, seed);
    } else {
        std::vector<double> P;
        if (out.l_true.link_count() > 0) {
            P = initial_populations(out.l_true, cfg.population(), cfg.population_exponent).counts;
        } else {
            P.assign(static_cast<std::size_t>(cfg.n), cfg.population() / cfg.n);
        }
        CompartmentState init;
        init.I = I0;
        init.J = I0;
        init.R.assign(I0.size(), 0.0);
        init.S.resize(I0.size());
        for (std::size_t i = 0; i < I0.size(); ++i) {
            if (P[i] < I0[i]) throw std::runtime_error("index node population is smaller than index_cases");
            init.S[i] = P[i] - I0[i];
        }
        traj = simulate_full_sir(out.l_true, out.gamma, params, init, t_end, sim, seed);
    }
    out.dataset = observe(traj, cfg.delta_t, D, cfg.dataset_kind, cfg.round_counts);
    out.dataset.metadata["trial_seed"] = seed;
    return out;
}

TrialResult run_trial(const ExperimentConfig& cfg, int trial) {
    TrialResult res;
    res.trial = trial;
    res.seed = trial_seed(cfg.seed, trial);
    res.e_l = res.e_r = res.alpha_hat = res.beta_hat = res.r_hat = res.gamma_hat = res.i0_hat = kNaN;
    res.loglik = res.naive_e_l = res.random_e_l = kNaN;
    const auto start = std::chrono::steady_clock::now();
    try {
        const SyntheticData data = synthesize(cfg, res.seed);
        res.topology_true = data.l_true.canonical();
        res.links_true = data.l_true.link_count();

        ParamEstimate pe;
        TimeSeriesDataset I_ds;
        if (cfg.dataset_kind == DatasetKind::kInfectiousCounts) {
            pe = estimate_alpha_beta(data.dataset.infectious_totals(), cfg.delta_t);
            I_ds = data.dataset;
        } else {
            pe = estimate_from_J_totals(data.dataset.cumulative_totals(), cfg.delta_t, cfg.j_method, res.seed,
                                        cfg.j_fit);
            if (pe.i0_hat) res.i0_hat = *pe.i0_hat;
        }
        res.alpha_hat = pe.alpha_hat;
        res.beta_hat = pe.beta_hat;
        res.r_hat = pe.r_hat;
        if (pe.beta_nonpositive || !(pe.alpha_hat > 0.0))
            throw std::runtime_error("estimated rates not positive (alpha_hat=" + format_double(pe.alpha_hat) +
                                     ", beta_hat=" + format_double(pe.beta_hat) + ")");
        res.e_r = error_r(pe.alpha_hat, pe.beta_hat, cfg.alpha, cfg.beta);
        if (cfg.dataset_kind == DatasetKind::kNewCases) I_ds = convert_dJ_to_I(data.dataset, pe.alpha_hat);

        if (cfg.run_mle) {
            const auto ranking = multi_trial_topology_ranking(I_ds, pe.alpha_hat, pe.beta_hat, cfg.sa_restarts,
                                                              cfg.annealing, res.seed, cfg.gamma_mode,
                                                              cfg.gamma_total);
            const TopologyEstimate& te = ranking.front().best;
            res.e_l = error_l(te.l_hat, data.l_true);
            res.loglik = te.loglik;
            res.gamma_hat = te.gamma_total;
            res.links_hat = te.l_hat.link_count();
            res.topology_hat = te.l_hat.canonical();
        }
        if (cfg.run_baselines) {
            res.naive_e_l = error_l(naive_correlation_estimate(I_ds), data.l_true);
            RandomStream rng(res.seed, "harness/random-guess");
            NeighborMatrix guess(cfg.n);
            for (int p = 0; p < guess.pair_count(); ++p) {
                const auto [i, j] = guess.pair_at(p);
                if (rng.bernoulli(0.5)) guess.set(i, j, true);
            }
            res.random_e_l = error_l(guess, data.l_true);
        }
        res.ok = true;
    } catch (const std::exception& e) {
        res.ok = false;
        res.error = e.what();
    }
    res.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

ExperimentReport run_synthetic_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentReport rep;
    rep.config = cfg.to_json();
    rep.trials.reserve(static_cast<std::size_t>(cfg.trials));
    for (int t = 0; t < cfg.trials; ++t) rep.trials.push_back(run_trial(cfg, t));
    return rep;
}

namespace {

using Day = std::chrono::sys_days;

Day parse_date(std::string_view s) {
    auto bad = [&] { return std::invalid_argument("bad date '" + std::string(s) + "' (expected YYYY-MM-DD)"); };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw bad();
    int y = 0;
    unsigned m = 0, d = 0;
    auto num = [&](std::size_t pos, std::size_t len, auto& out) {
        const auto r = std::from_chars(s.data() + pos, s.data() + pos + len, out);
        if (r.ec != std::errc() || r.ptr != s.data() + pos + len) throw bad();
    };
    num(0, 4, y);
    num(5, 2, m);
    num(8, 2, d);
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw bad();
    return Day{ymd};
}

std::string format_date(Day day) {
    const std::chrono::year_month_day ymd{day};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    for (auto& c : out) {
        const auto b = c.find_first_not_of(" \t\r");
        const auto e = c.find_last_not_of(" \t\r");
        c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
    }
    return out;
}

}  // namespace

IngestResult ingest_cumulative_cases(std::istream& is, std::string_view window_start, std::string_view window_end,
                                     double min_cases, std::string_view source) {
    const Day start = parse_date(window_start);
    const Day end = parse_date(window_end);
    if (end <= start) throw std::invalid_argument("ingest: empty window " + std::string(window_start) + " .. " +
                                                  std::string(window_end));
    const std::string src(source);

    std::string line;
    int line_no = 0;
    std::vector<std::string> regions;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv(line);
        if (cells.empty() || (cells[0] != "date" && cells[0] != "Date"))
            throw std::runtime_error(src + ":" + std::to_string(line_no) + ": header must start with 'date'");
        regions.assign(cells.begin() + 1, cells.end());
        break;
    }
    if (regions.empty()) throw std::runtime_error(src + ": no region columns");
    const auto n = regions.size();

    struct Row {
        Day day;
        std::vector<double> values;  // NaN for empty cells
        int line;
    };
    std::vector<Row> rows;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv(line);
        const std::string where = src + ":" + std::to_string(line_no);
        if (cells.size() != n + 1)
            throw std::runtime_error(where + ": expected " + std::to_string(n + 1) + " columns, got " +
                                     std::to_string(cells.size()));
        Row row;
        row.line = line_no;
        try {
            row.day = parse_date(cells[0]);
        } catch (const std::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
        if (!rows.empty() && row.day <= rows.back().day)
            throw std::runtime_error(where + ": dates must be strictly increasing");
        row.values.resize(n);
        for (std::size_t r = 0; r < n; ++r) {
            if (cells[r + 1].empty()) {
                row.values[r] = kNaN;
                continue;
            }
            try {
                row.values[r] = parse_double(cells[r + 1]);
            } catch (const std::exception&) {
                throw std::runtime_error(where + ": column " + regions[r] + ": cannot parse '" + cells[r + 1] + "'");
            }
            if (!(row.values[r] >= 0.0) || !std::isfinite(row.values[r]))
                throw std::runtime_error(where + ": column " + regions[r] + ": negative or non-finite count");
        }
        rows.push_back(std::move(row));
    }

    IngestResult out;
    const auto days = static_cast<int>((end - start).count());
    std::vector<std::vector<double>> C(n, std::vector<double>(static_cast<std::size_t>(days + 1), 0.0));
    std::vector<double> prev(n, kNaN);

    // Rows before the window seed the forward fill.
    std::size_t cursor = 0;
    while (cursor < rows.size() && rows[cursor].day < start) {
        for (std::size_t r = 0; r < n; ++r)
            if (!std::isnan(rows[cursor].values[r]))
                prev[r] = std::isnan(prev[r]) ? rows[cursor].values[r] : std::max(prev[r], rows[cursor].values[r]);
        ++cursor;
    }
    for (int k = 0; k <= days; ++k) {
        const Day day = start + std::chrono::days{k};
        const Row* row = nullptr;
        if (cursor < rows.size() && rows[cursor].day == day) row = &rows[cursor++];
        if (!row) out.warnings.push_back("date " + format_date(day) + " missing; forward-filled");
        for (std::size_t r = 0; r < n; ++r) {
            double v = row ? row->values[r] : kNaN;
            if (std::isnan(v)) {
                if (row)
                    out.warnings.push_back(src + ":" + std::to_string(row->line) + ": " + regions[r] +
                                           " empty; forward-filled");
                if (std::isnan(prev[r])) {
                    out.warnings.push_back(regions[r] + ": no count on or before " + format_date(day) +
                                           "; assuming 0");
                    v = 0.0;
                } else {
                    v = prev[r];
                }
            } else if (!std::isnan(prev[r]) && v < prev[r]) {
                out.warnings.push_back(regions[r] + ": cumulative count drops from " + format_double(prev[r]) +
                                       " to " + format_double(v) + " on " + format_date(day) +
                                       "; new cases clamped to 0");
                v = prev[r];
            }
            C[r][static_cast<std::size_t>(k)] = v;
            prev[r] = v;
        }
    }

    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < n; ++r) {
        if (C[r].back() >= min_cases) {
            keep.push_back(r);
        } else {
            out.dropped_regions.push_back(regions[r]);
            out.warnings.push_back(regions[r] + ": dropped, " + format_double(C[r].back()) + " cases by " +
                                   std::string(window_end) + " is below " + format_double(min_cases));
        }
    }
    if (keep.empty()) throw std::runtime_error(src + ": no region reaches " + format_double(min_cases) + " cases");

    TimeSeriesDataset& ds = out.dataset;
    ds.kind = DatasetKind::kNewCases;
    ds.delta_t = 1.0;
    ds.t0 = 0.0;
    ds.values.resize(days, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) {
        const auto& series = C[keep[c]];
        ds.initial_cumulative.push_back(series[0]);
        ds.node_names.push_back(regions[keep[c]]);
        for (int d = 0; d < days; ++d)
            ds.values(d, static_cast<Eigen::Index>(c)) = series[static_cast<std::size_t>(d + 1)] - series[static_cast<std::size_t>(d)];
    }
    ds.metadata = {{"source", src},
                   {"window_start", std::string(window_start)},
                   {"window_end", std::string(window_end)},
                   {"min_cases", min_cases},
                   {"warnings", out.warnings.size()}};
    ds.validate();
    return out;
}

IngestResult ingest_cumulative_cases(const std::filesystem::path& path, std::string_view window_start,
                                     std::string_view window_end, double min_cases) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return ingest_cumulative_cases(in, window_start, window_end, min_cases, path.string());
}

void write_cumulative_csv(std::ostream& os, const TimeSeriesDataset& ds, std::string_view start_date) {
    const Day start = parse_date(start_date);
    const Eigen::MatrixXd C = ds.cumulative_by_node();
    os << "date";
    for (int i = 0; i < ds.n(); ++i) os << ',' << ds.node_label(i);
    os << '\n';
    for (int d = 0; d < C.rows(); ++d) {
        os << format_date(start + std::chrono::days{d});
        for (int i = 0; i < ds.n(); ++i) os << ',' << format_double(C(d, i));
        os << '\n';
    }
}

nlohmann::json CaseStudyOptions::to_json() const {
    return {{"trials", trials},
            {"seed", seed},
            {"annealing", annealing.to_json()},
            {"gamma_mode", std::string(epinet::to_string(gamma_mode))},
            {"gamma_total", gamma_total},
            {"j_fit", j_fit_to_json(j_method, j_fit)}};
}

CaseStudyOptions CaseStudyOptions::from_json(const nlohmann::json& j) {
    CaseStudyOptions o;
    o.trials = j.value("trials", o.trials);
    o.seed = j.value("seed", o.seed);
    if (j.contains("annealing")) o.annealing = AnnealingSchedule::from_json(j.at("annealing"));
    if (j.contains("gamma_mode")) o.gamma_mode = gamma_mode_from_string(j.at("gamma_mode").get<std::string>());
    o.gamma_total = j.value("gamma_total", o.gamma_total);
    if (j.contains("j_fit")) j_fit_from_json(j.at("j_fit"), o.j_method, o.j_fit);
    if (o.trials < 1) throw std::invalid_argument("case study: trials must be >= 1");
    return o;
}

nlohmann::json CaseStudyResult::to_json() const {
    nlohmann::json j = estimates_to_json(params, ranking);
    j["regions"] = node_names;
    j["options"] = options;
    auto& tops = j["topologies"];
    for (std::size_t k = 0; k < ranking.size(); ++k) {
        nlohmann::json named = nlohmann::json::array();
        const auto& l = ranking[k].best.l_hat;
        for (int p = 0; p < l.pair_count(); ++p) {
            const auto [a, b] = l.pair_at(p);
            if (l(a, b)) named.push_back(node_names[static_cast<std::size_t>(a)] + "-" + node_names[static_cast<std::size_t>(b)]);
        }
        tops[k]["named_links"] = named;
        tops[k]["rank"] = k + 1;
    }
    return j;
}

CaseStudyResult run_case_study(const TimeSeriesDataset& ds, const CaseStudyOptions& opts) {
    if (ds.kind != DatasetKind::kNewCases) throw std::invalid_argument("run_case_study: needs a new-cases dataset");
    CaseStudyResult res;
    res.options = opts.to_json();
    res.params = estimate_from_J_totals(ds.cumulative_totals(), ds.delta_t, opts.j_method, opts.seed, opts.j_fit);
    res.converted = convert_dJ_to_I(ds, res.params.alpha_hat);
    res.ranking = multi_trial_topology_ranking(res.converted, res.params.alpha_hat, res.params.beta_hat, opts.trials,
                                               opts.annealing, opts.seed, opts.gamma_mode, opts.gamma_total);
    for (int i = 0; i < ds.n(); ++i) res.node_names.push_back(ds.node_label(i));
    return res;
}

Surrogate make_case_study_surrogate(std::uint64_t seed) {
    Surrogate s;
    s.regions = {"CAN", "FRA", "GBR", "GER", "HKG", "MAS", "ROC", "SIN", "THA", "USA", "VIE"};
    auto idx = [&](std::string_view name) {
        return static_cast<int>(std::find(s.regions.begin(), s.regions.end(), name) - s.regions.begin());
    };
    s.l_true = NeighborMatrix(static_cast<int>(s.regions.size()));
    const std::pair<const char*, const char*> links[] = {
        {"HKG", "CAN"}, {"HKG", "ROC"}, {"HKG", "SIN"}, {"USA", "GBR"}, {"USA", "MAS"}, {"USA", "VIE"},
        {"HKG", "USA"}, {"USA", "THA"}, {"VIE", "THA"}, {"GBR", "FRA"}, {"GBR", "GER"}};
    for (const auto& [a, b] : links) s.l_true.set(idx(a), idx(b), true);

    const double gamma_total = 0.1;
    const MobilityMatrix gamma = mobility_from_topology(s.l_true, gamma_total);
    std::vector<double> I0(s.regions.size(), 0.0);
    I0[static_cast<std::size_t>(idx("HKG"))] = 200.0;
    SimulationOptions sim;
    sim.record_stride = 100;
    const int D = static_cast<int>((parse_date(kSurrogateEnd) - parse_date(kSurrogateStart)).count());
    const Trajectory traj =
        simulate_linearized(gamma, TransmissionParams{s.alpha, s.beta, gamma_total}, I0, D * 1.0, sim, seed);
    s.dataset = observe(traj, 1.0, D, DatasetKind::kNewCases);
    s.dataset.node_names = s.regions;
    return s;
}

NeighborMatrix induced_topology(const NeighborMatrix& l, const std::vector<std::string>& names,
                                const std::vector<std::string>& keep) {
    if (static_cast<int>(names.size()) != l.n()) throw std::invalid_argument("induced_topology: names size mismatch");
    std::vector<int> idx;
    for (const auto& k : keep) {
        const auto it = std::find(names.begin(), names.end(), k);
        if (it == names.end()) throw std::invalid_argument("induced_topology: unknown node '" + k + "'");
        idx.push_back(static_cast<int>(it - names.begin()));
    }
    NeighborMatrix out(static_cast<int>(keep.size()));
    for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = a + 1; b < idx.size(); ++b)
            if (idx[a] != idx[b]) out.set(static_cast<int>(a), static_cast<int>(b), l(idx[a], idx[b]));
    return out;
}

void write_report_csv(std::ostream& os, const ExperimentReport& report) {
    auto num = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
    os << "trial,seed,status,e_l,e_r,r_hat,alpha_hat,beta_hat,gamma_hat,i0_hat,loglik,naive_e_l,random_e_l,"
          "links_true,links_hat,topology_true,topology_hat,error\n";
    for (const auto& t : report.trials) {
        os << t.trial << ',' << t.seed << ',' << (t.ok ? "ok" : "failed") << ',' << num(t.e_l) << ',' << num(t.e_r)
           << ',' << num(t.r_hat) << ',' << num(t.alpha_hat) << ',' << num(t.beta_hat) << ',' << num(t.gamma_hat)
           << ',' << num(t.i0_hat) << ',' << num(t.loglik) << ',' << num(t.naive_e_l) << ','
           << num(t.random_e_l) << ',' << t.links_true << ',' << t.links_hat << ',' << t.topology_true << ','
           << t.topology_hat << ',' << csv_safe(t.error) << '\n';
    }
    if (report.trials.empty()) return;
    const int ok = static_cast<int>(report.trials.size()) - report.failed();
    os << "mean,," << "ok=" << ok << '/' << report.trials.size() << ',' << num(report.summary("e_l").mean) << ','
       << num(report.summary("e_r").mean) << ',' << num(report.summary("r_hat").mean) << ",,,"
       << num(report.summary("gamma_hat").mean) << ",," << num(report.summary("loglik").mean) << ','
       << num(report.summary("naive_e_l").mean) << ',' << num(report.summary("random_e_l").mean) << ",,,,,\n";
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void make_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

void emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
    make_dir(dir);
    std::ostringstream csv;
    write_report_csv(csv, report);
    write_file(dir / "report.csv", csv.str());
    write_file(dir / "summary.json", report.to_json().dump(2) + "\n");
    emit_plot_data({report}, "avg_degree", dir);

    nlohmann::json timing = nlohmann::json::array();
    for (const auto& t : report.trials) timing.push_back({{"trial", t.trial}, {"runtime_s", t.runtime_s}});
    write_file(dir / "timing.json", timing.dump(2) + "\n");
}

void emit_plot_data(const std::vector<ExperimentReport>& reports, std::string_view x_key,
                    const std::filesystem::path& dir) {
    make_dir(dir);
    auto num = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
    for (const char* metric : {"e_l", "e_r"}) {
        std::ostringstream os;
        os << "# x=" << x_key << (x_key == "avg_degree" ? "/(n-1)" : "") << " y=" << metric << " sigma=sd\n";
        for (const auto& rep : reports) {
            double x = rep.config.at(std::string(x_key)).get<double>();
            if (x_key == "avg_degree") x /= rep.config.at("n").get<double>() - 1.0;
            const MetricSummary s = rep.summary(metric);
            os << num(x) << ' ' << num(s.mean) << ' ' << num(s.sd) << '\n';
        }
        write_file(dir / ("plot_" + std::string(metric) + ".dat"), os.str());
    }
}

void emit_case_study(const CaseStudyResult& result, const std::filesystem::path& dir) {
    make_dir(dir);
    write_file(dir / "estimates.json", result.to_json().dump(2) + "\n");
    std::ostringstream csv;
    csv << "rank,loglik,multiplicity,gamma_total,links\n";
    for (std::size_t k = 0; k < result.ranking.size(); ++k) {
        const auto& r = result.ranking[k];
        csv << k + 1 << ',' << format_double(r.best.loglik) << ',' << r.multiplicity << ','
            << format_double(r.best.gamma_total) << ',';
        const auto& l = r.best.l_hat;
        bool first = true;
        for (int p = 0; p < l.pair_count(); ++p) {
            const auto [a, b] = l.pair_at(p);
            if (!l(a, b)) continue;
            csv << (first ? "" : ";") << result.node_names[static_cast<std::size_t>(a)] << '-'
                << result.node_names[static_cast<std::size_t>(b)];
            first = false;
        }
        csv << '\n';
    }
    write_file(dir / "ranking.csv", csv.str());
    save_dataset(dir / "converted_I", result.converted);
}

nlohmann::json MomentCheckConfig::to_json() const {
    return {{"alpha", alpha}, {"beta", beta}, {"gamma", mobility_to_json(gamma)}, {"I0", I0},
            {"times", times}, {"paths", paths}, {"dt_int", dt_int}, {"seed", seed}};
}

MomentCheckConfig MomentCheckConfig::from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, {"alpha", "beta", "gamma", "topology", "I0", "times", "paths", "dt_int", "seed"},
                        "moments-check");
    MomentCheckConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.I0 = j.at("I0").get<std::vector<double>>();
    if (j.contains("gamma")) {
        c.gamma = mobility_from_json(j.at("gamma"));
    } else if (j.contains("topology")) {
        const auto& t = j.at("topology");
        c.gamma = mobility_from_topology(topology_from_json(t), t.value("gamma_total", 0.1));
    } else {
        c.gamma.rates = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.I0.size()), static_cast<Eigen::Index>(c.I0.size()));
    }
    c.times = j.value("times", c.times);
    c.paths = j.value("paths", c.paths);
    c.dt_int = j.value("dt_int", c.dt_int);
    c.seed = j.value("seed", c.seed);
    if (c.gamma.n() != static_cast<int>(c.I0.size())) throw std::invalid_argument("moments-check: I0 and gamma sizes differ");
    if (c.paths < 2) throw std::invalid_argument("moments-check: need paths >= 2");
    return c;
}

bool MomentCheckResult::pass(double z) const {
    return std::all_of(blocks.begin(), blocks.end(), [z](const MomentBlockCheck& b) { return b.rms_z <= z; });
}

nlohmann::json MomentCheckResult::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& b : blocks)
        rows.push_back({{"block", b.block}, {"t", b.t}, {"entries", b.entries}, {"rms_z", b.rms_z},
                        {"max_abs_z", b.max_abs_z}, {"beyond_3se", b.beyond_3se}});
    return {{"blocks", rows}, {"negative_updates", negative_updates}, {"pass", pass()}};
}

MomentCheckResult moment_check(const MomentCheckConfig& cfg) {
    const int n = cfg.gamma.n();
    const auto P = static_cast<std::size_t>(cfg.paths);
    const auto T = cfg.times.size();
    std::vector<long> step_at(T);
    for (std::size_t k = 0; k < T; ++k) {
        step_at[k] = std::llround(cfg.times[k] / cfg.dt_int);
        if (std::abs(step_at[k] * cfg.dt_int - cfg.times[k]) > 1e-9 * cfg.times[k] || (k > 0 && step_at[k] <= step_at[k - 1]))
            throw std::invalid_argument("moments-check: times must be increasing multiples of dt_int");
    }
    const auto start = std::chrono::steady_clock::now();

    // samples[k] is P x 2n: columns I_0..I_{n-1}, J_0..J_{n-1}
    std::vector<Eigen::MatrixXd> samples(T, Eigen::MatrixXd(static_cast<Eigen::Index>(P), 2 * n));
    SimulationOptions opts;
    opts.dt_int = cfg.dt_int;
    LinearizedStepper stepper(cfg.gamma, TransmissionParams{cfg.alpha, cfg.beta, cfg.gamma.n() > 1 ? cfg.gamma.outflow(0) : 0.0}, opts);
    RandomStream rng(cfg.seed, "harness/moments-check");
    MomentCheckResult res;
    for (std::size_t p = 0; p < P; ++p) {
        stepper.reset(cfg.I0);
        long s = 0;
        for (std::size_t k = 0; k < T; ++k) {
            for (; s < step_at[k]; ++s) stepper.step(rng);
            for (int i = 0; i < n; ++i) {
                samples[k](static_cast<Eigen::Index>(p), i) = stepper.I()[static_cast<std::size_t>(i)];
                samples[k](static_cast<Eigen::Index>(p), n + i) = stepper.J()[static_cast<std::size_t>(i)];
            }
        }
    }
    res.negative_updates = static_cast<long>(stepper.stats().negative_updates);

    const Theta theta{cfg.alpha, cfg.beta, cfg.gamma};
    const Eigen::VectorXd I0 = Eigen::Map<const Eigen::VectorXd>(cfg.I0.data(), n);
    const double rootP = std::sqrt(static_cast<double>(P));
    for (std::size_t k = 0; k < T; ++k) {
        const MomentState exact = exact_moments(theta, I0, cfg.times[k]);
        const Eigen::MatrixXd& X = samples[k];
        const Eigen::RowVectorXd mean = X.colwise().mean();
        const Eigen::MatrixXd C = X.rowwise() - mean;

        auto check = [&](const std::string& name, auto&& entries) {
            MomentBlockCheck b;
            b.block = name;
            b.t = cfg.times[k];
            double num = 0.0, den = 0.0;
            for (const auto& [est, se, ref] : entries) {
                const double diff = est - ref;
                const double z = se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
                num += diff * diff;
                den += se * se;
                b.max_abs_z = std::max(b.max_abs_z, std::abs(z));
                b.beyond_3se += std::abs(z) > 3.0 ? 1 : 0;
                ++b.entries;
            }
            b.rms_z = den > 0.0 ? std::sqrt(num / den) : (num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
            res.blocks.push_back(b);
        };
        using Entry = std::tuple<double, double, double>;
        auto mean_entry = [&](int col, double ref) {
            const double sd = std::sqrt(C.col(col).squaredNorm() / static_cast<double>(P - 1));
            return Entry{mean(col), sd / rootP, ref};
        };
        auto cov_entry = [&](int a, int b, double ref) {
            const Eigen::ArrayXd prod = C.col(a).array() * C.col(b).array();
            const double c = prod.mean();
            const double sd = std::sqrt((prod - c).square().sum() / static_cast<double>(P - 1));
            return Entry{c * static_cast<double>(P) / static_cast<double>(P - 1), sd / rootP, ref};
        };
        std::vector<Entry> mI, mJ, vII, vIJ, vJJ;
        for (int i = 0; i < n; ++i) {
            mI.push_back(mean_entry(i, exact.mI(i)));
            mJ.push_back(mean_entry(n + i, exact.mJ(i)));
            for (int j = 0; j < n; ++j) {
                vIJ.push_back(cov_entry(i, n + j, exact.vIJ(i, j)));
                if (j < i) continue;
                vII.push_back(cov_entry(i, j, exact.vII(i, j)));
                vJJ.push_back(cov_entry(n + i, n + j, exact.vJJ(i, j)));
            }
        }
        check("mI", mI);
        check("mJ", mJ);
        check("vII", vII);
        check("vIJ", vIJ);
        check("vJJ", vJJ);
    }
    res.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

}  // namespace epinet
