#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "epinet/estimate.hpp"
#include "epinet/evaluation.hpp"
#include "epinet/format.hpp"
#include "epinet/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    bool full = false;
};

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    const auto ext = fs::path(path).extension().string();
    if (ext == ".toml") throw std::runtime_error("TOML configs are not supported; use JSON");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void print_summary(const epinet::ExperimentReport& rep, const std::string& label) {
    const auto el = rep.summary("e_l"), er = rep.summary("e_r"), nv = rep.summary("naive_e_l"),
               rg = rep.summary("random_e_l");
    std::cout << label << ": trials=" << rep.trials.size() << " failed=" << rep.failed()
              << " E_l=" << epinet::format_double(el.mean) << "+-" << epinet::format_double(el.sd)
              << " E_r=" << epinet::format_double(er.mean) << "+-" << epinet::format_double(er.sd)
              << " naive=" << epinet::format_double(nv.mean) << " random=" << epinet::format_double(rg.mean) << '\n';
    for (const auto& t : rep.trials)
        if (!t.ok) std::cerr << "  trial " << t.trial << " failed: " << t.error << '\n';
}

int run_experiments(const CommonArgs& args, bool baseline_only) {
    json j = load_json(args.config);
    std::optional<json> sweep;
    if (j.contains("sweep")) {
        sweep = j.at("sweep");
        j.erase("sweep");
    }
    auto base = epinet::ExperimentConfig::from_json(j);
    if (args.seed) base.seed = *args.seed;
    if (args.full) base.trials = 100;
    if (baseline_only) base.run_mle = false;

    const fs::path out(args.out);
    if (!sweep) {
        const auto rep = epinet::run_synthetic_experiment(base);
        epinet::emit_report(rep, out);
        print_summary(rep, base.name);
        return rep.all_ok() ? 0 : 1;
    }

    const std::string key = sweep->at("key").get<std::string>();
    std::vector<epinet::ExperimentReport> reports;
    bool ok = true;
    for (const auto& v : sweep->at("values")) {
        json cj = base.to_json();
        cj[key] = v;
        if (key == "r") cj.erase("beta");  // sweep r at fixed alpha
        const auto cfg = epinet::ExperimentConfig::from_json(cj);
        const auto rep = epinet::run_synthetic_experiment(cfg);
        const std::string label = key + "=" + v.dump();
        epinet::emit_report(rep, out / label);
        print_summary(rep, label);
        ok = ok && rep.all_ok();
        reports.push_back(rep);
    }
    epinet::emit_plot_data(reports, key, out);
    return ok ? 0 : 1;
}

int run_estimate(const CommonArgs& args) {
    const json j = load_json(args.config);
    const auto ds = epinet::load_dataset(j.at("dataset").get<std::string>());
    auto opts = epinet::CaseStudyOptions::from_json(j.value("options", json::object()));
    if (args.seed) opts.seed = *args.seed;
    const fs::path out(args.out);
    if (ds.kind == epinet::DatasetKind::kNewCases) {
        const auto res = epinet::run_case_study(ds, opts);
        epinet::emit_case_study(res, out);
        std::cout << "alpha_hat=" << epinet::format_double(res.params.alpha_hat)
                  << " beta_hat=" << epinet::format_double(res.params.beta_hat)
                  << " r_hat=" << epinet::format_double(res.params.r_hat) << " topologies=" << res.ranking.size()
                  << '\n';
        return res.params.converged ? 0 : 1;
    }
    const auto pe = epinet::estimate_alpha_beta(ds.infectious_totals(), ds.delta_t);
    if (pe.beta_nonpositive) {
        std::cerr << "beta_hat <= 0; r is undefined\n";
        write_json(out / "estimates.json", epinet::estimates_to_json(pe, {}));
        return 1;
    }
    const auto ranking = epinet::multi_trial_topology_ranking(ds, pe.alpha_hat, pe.beta_hat, opts.trials,
                                                              opts.annealing, opts.seed, opts.gamma_mode,
                                                              opts.gamma_total);
    write_json(out / "estimates.json", epinet::estimates_to_json(pe, ranking));
    std::cout << "alpha_hat=" << epinet::format_double(pe.alpha_hat)
              << " beta_hat=" << epinet::format_double(pe.beta_hat) << " r_hat=" << epinet::format_double(pe.r_hat)
              << " best_loglik=" << epinet::format_double(ranking.front().best.loglik) << '\n';
    return 0;
}

int run_casestudy(const CommonArgs& args) {
    const json j = load_json(args.config);
    auto opts = epinet::CaseStudyOptions::from_json(j.value("options", json::object()));
    if (args.seed) opts.seed = *args.seed;
    if (args.full) opts.trials = std::max(opts.trials, 300);
    const fs::path out(args.out);
    fs::create_directories(out);

    const std::string start = j.value("window_start", std::string(epinet::kSurrogateStart));
    const std::string end = j.value("window_end", std::string(epinet::kSurrogateEnd));
    const double min_cases = j.value("min_cases", 5.0);

    std::optional<epinet::Surrogate> surrogate;
    fs::path data_path;
    if (j.contains("data") && !j.at("data").is_null()) {
        data_path = j.at("data").get<std::string>();
    } else {
        surrogate = epinet::make_case_study_surrogate(j.value("surrogate_seed", std::uint64_t{1}));
        data_path = out / "surrogate_cumulative.csv";
        std::ofstream csv(data_path);
        epinet::write_cumulative_csv(csv, surrogate->dataset, epinet::kSurrogateStart);
        std::cout << "no data supplied; using the synthetic 11-region surrogate (" << data_path.string() << ")\n";
    }
    const auto ingest = epinet::ingest_cumulative_cases(data_path, start, end, min_cases);
    for (const auto& w : ingest.warnings) std::cerr << "warning: " << w << '\n';
    const auto res = epinet::run_case_study(ingest.dataset, opts);
    epinet::emit_case_study(res, out);

    std::cout << "regions=" << ingest.dataset.n() << " alpha_hat=" << epinet::format_double(res.params.alpha_hat)
              << " beta_hat=" << epinet::format_double(res.params.beta_hat)
              << " r_hat=" << epinet::format_double(res.params.r_hat) << '\n';
    for (std::size_t k = 0; k < std::min<std::size_t>(3, res.ranking.size()); ++k)
        std::cout << "  #" << k + 1 << " L=" << epinet::format_double(res.ranking[k].best.loglik)
                  << " multiplicity=" << res.ranking[k].multiplicity
                  << " links=" << res.ranking[k].best.l_hat.link_count() << '\n';
    if (surrogate) {
        const auto truth = epinet::induced_topology(surrogate->l_true, surrogate->regions, res.node_names);
        const double el = epinet::error_l(res.ranking.front().best.l_hat, truth);
        const auto rg = epinet::random_guess_stats(truth.n());
        std::cout << "surrogate: top topology E_l=" << epinet::format_double(el)
                  << " (random guess " << epinet::format_double(rg.mean) << "+-" << epinet::format_double(rg.sd)
                  << ")\n";
        write_json(out / "surrogate_score.json", {{"e_l", el}, {"random_mean", rg.mean}, {"random_sd", rg.sd},
                                                  {"regions", res.node_names},
                                                  {"true_topology", epinet::topology_to_json(truth, 0.1)}});
    }
    return res.params.converged ? 0 : 1;
}

int run_moments_check(const CommonArgs& args) {
    auto cfg = epinet::MomentCheckConfig::from_json(load_json(args.config));
    if (args.seed) cfg.seed = *args.seed;
    const auto res = epinet::moment_check(cfg);
    json j = res.to_json();
    j["config"] = cfg.to_json();
    j["runtime_s"] = res.runtime_s;
    write_json(fs::path(args.out) / "moments_check.json", j);
    for (const auto& b : res.blocks)
        std::cout << b.block << " t=" << epinet::format_double(b.t) << " rms_z=" << epinet::format_double(b.rms_z)
                  << " max|z|=" << epinet::format_double(b.max_abs_z) << '\n';
    std::cout << (res.pass() ? "PASS" : "FAIL") << '\n';
    return res.pass() ? 0 : 1;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "JSON config file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", args.seed, "override the master seed");
    cmd->add_option("--out", args.out, "output directory");
    cmd->add_flag("--full", args.full, "full-scale trial counts");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Meta-population outbreak inference"};
    app.require_subcommand(1);
    CommonArgs args;
    auto* synth = app.add_subcommand("synth", "synthetic experiments: simulate, estimate, score");
    auto* estimate = app.add_subcommand("estimate", "estimate parameters and topology from a dataset file");
    auto* casestudy = app.add_subcommand("casestudy", "cumulative case data pipeline");
    auto* moments = app.add_subcommand("moments-check", "Monte-Carlo check of the moment equations");
    auto* baseline = app.add_subcommand("baseline", "naive-correlation and random-guess baselines only");
    for (auto* cmd : {synth, estimate, casestudy, moments, baseline}) add_common(cmd, args);
    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_experiments(args, false);
        if (baseline->parsed()) return run_experiments(args, true);
        if (estimate->parsed()) return run_estimate(args);
        if (casestudy->parsed()) return run_casestudy(args);
        if (moments->parsed()) return run_moments_check(args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
