#include "epinet/simulate.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>

namespace epinet {

void TransmissionParams::validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    if (!(gamma_total >= 0.0 && gamma_total <= 1.0)) throw std::invalid_argument("gamma_total must lie in [0, 1]");
}

std::string_view to_string(NoiseModel noise) { return noise == NoiseModel::kPoisson ? "poisson" : "gaussian"; }

NoiseModel noise_model_from_string(std::string_view s) {
    if (s == "poisson") return NoiseModel::kPoisson;
    if (s == "gaussian") return NoiseModel::kGaussian;
    throw std::invalid_argument("unknown noise model '" + std::string(s) + "'");
}

nlohmann::json SimulationOptions::to_json() const {
    return {{"dt_int", dt_int},
            {"noise", noise},
            {"clamp", clamp},
            {"noise_model", std::string(to_string(noise_model))},
            {"scheme", std::string(to_string(scheme))},
            {"record_stride", record_stride}};
}

std::string_view to_string(StepScheme s) { return s == StepScheme::kEuler ? "euler" : "midpoint"; }

StepScheme step_scheme_from_string(std::string_view s) {
    if (s == "euler") return StepScheme::kEuler;
    if (s == "midpoint") return StepScheme::kMidpoint;
    throw std::invalid_argument("unknown step scheme '" + std::string(s) + "'");
}

namespace {

double gauss(RandomStream& rng) { return boost::random::normal_distribution<double>{}(rng); }

// Inversion for small means. Most counts are zero, and 1 - m + m^2/2 - m^3/6 <= e^-m
// accepts those without evaluating the exponential.
double poisson(RandomStream& rng, double mean) {
    if (!(mean > 0.0)) return 0.0;
    if (mean >= 10.0) return static_cast<double>(boost::random::poisson_distribution<long long, double>(mean)(rng));
    const double u = rng.uniform();
    if (u < 1.0 - mean + mean * mean * (0.5 - mean / 6.0)) return 0.0;
    double p = std::exp(-mean), cdf = p;
    int k = 0;
    while (u >= cdf && k < 200) {
        ++k;
        p *= mean / k;
        cdf += p;
    }
    return k;
}

// Count of a channel with expected value `mean` over one step.
double channel_increment(RandomStream& rng, double mean, const SimulationOptions& opts) {
    if (!opts.noise) return mean;
    if (opts.noise_model == NoiseModel::kPoisson) return poisson(rng, mean);
    return mean + std::sqrt(std::max(mean, 0.0)) * gauss(rng);
}

double infection_increment(RandomStream& rng, double mean, const SimulationOptions& opts) {
    const double x = channel_increment(rng, mean, opts);
    return opts.noise_model == NoiseModel::kGaussian ? std::max(0.0, x) : x;
}

std::vector<double> flatten(const MobilityMatrix& gamma) {
    const int n = gamma.n();
    std::vector<double> out(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = i == j ? 0.0 : gamma.rates(i, j);
    return out;
}

void check_step(const MobilityMatrix& gamma, const TransmissionParams& params, const SimulationOptions& opts) {
    params.validate();
    if (!(opts.dt_int > 0.0)) throw std::invalid_argument("dt_int must be positive");
    if (opts.record_stride < 1) throw std::invalid_argument("record_stride must be >= 1");
    for (int i = 0; i < gamma.n(); ++i) {
        if ((gamma.rates.row(i).array() < 0.0).any()) throw std::invalid_argument("mobility rates must be >= 0");
        if (1.0 - gamma.outflow(i) * opts.dt_int < 0.0)
            throw std::invalid_argument("dt_int too large: outflow probability of node " + std::to_string(i) +
                                        " exceeds one per step");
    }
}

void apply(std::vector<double>& x, const std::vector<double>& dx, bool clamp, SimulationStats& stats) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] += dx[i];
        ++stats.node_updates;
        if (x[i] < 0.0) {
            ++stats.negative_updates;
            if (clamp) x[i] = 0.0;
        }
    }
}

// Movement terms gamma_ij X_i dt for every directed link, in row-major order.
void add_movement(RandomStream& rng, const std::vector<double>& gamma, int n, const std::vector<double>& x,
                  const SimulationOptions& opts, std::vector<double>& dx) {
    const double dt = opts.dt_int;
    for (int i = 0; i < n; ++i) {
        const double xi = std::max(x[i], 0.0);
        for (int j = 0; j < n; ++j) {
            const double g = gamma[static_cast<std::size_t>(i) * n + j];
            if (g == 0.0) continue;
            const double moved = channel_increment(rng, g * xi * dt, opts);
            dx[i] -= moved;
            dx[j] += moved;
        }
    }
}

// Deterministic movement flow gamma_ij x_i h added to dx.
void add_flow(const std::vector<double>& gamma, int n, const std::vector<double>& x, double h, std::vector<double>& dx) {
    for (int i = 0; i < n; ++i) {
        const double xi = std::max(x[i], 0.0);
        for (int j = 0; j < n; ++j) {
            const double g = gamma[static_cast<std::size_t>(i) * n + j];
            if (g == 0.0) continue;
            dx[i] -= g * xi * h;
            dx[j] += g * xi * h;
        }
    }
}

void floor_at_zero(std::vector<double>& x) {
    for (double& v : x) v = std::max(v, 0.0);
}

std::int64_t step_count(double t_end, double dt) {
    if (!(t_end >= 0.0)) throw std::invalid_argument("t_end must be >= 0");
    const double steps = t_end / dt;
    const auto rounded = std::llround(steps);
    if (std::abs(steps - static_cast<double>(rounded)) > 1e-9 * std::max(1.0, steps))
        throw std::invalid_argument("t_end must be a multiple of dt_int");
    return rounded;
}

}  // namespace

LinearizedStepper::LinearizedStepper(const MobilityMatrix& gamma, const TransmissionParams& params,
                                     const SimulationOptions& opts)
    : n_(gamma.n()), alpha_(params.alpha), beta_(params.beta), opts_(opts), gamma_(flatten(gamma)) {
    check_step(gamma, params, opts);
    I_.assign(n_, 0.0);
    J_.assign(n_, 0.0);
    dI_.assign(n_, 0.0);
    mid_.assign(n_, 0.0);
}

void LinearizedStepper::reset(std::span<const double> I0, std::span<const double> J0) {
    if (static_cast<int>(I0.size()) != n_) throw std::invalid_argument("LinearizedStepper: I0 has wrong length");
    if (!J0.empty() && static_cast<int>(J0.size()) != n_)
        throw std::invalid_argument("LinearizedStepper: J0 has wrong length");
    for (double v : I0)
        if (!(v >= 0.0)) throw std::invalid_argument("LinearizedStepper: initial counts must be >= 0");
    I_.assign(I0.begin(), I0.end());
    if (J0.empty())
        J_.assign(I0.begin(), I0.end());  // initial infections count as cases
    else
        J_.assign(J0.begin(), J0.end());
    stats_ = {};
}

void LinearizedStepper::step(RandomStream& rng) {
    const double dt = opts_.dt_int;
    const std::vector<double>* rates_at = &I_;
    if (opts_.scheme == StepScheme::kMidpoint) {
        for (int i = 0; i < n_; ++i) mid_[i] = I_[i] + 0.5 * dt * (alpha_ - beta_) * std::max(I_[i], 0.0);
        add_flow(gamma_, n_, I_, 0.5 * dt, mid_);
        floor_at_zero(mid_);
        rates_at = &mid_;
    }
    const std::vector<double>& x = *rates_at;
    std::fill(dI_.begin(), dI_.end(), 0.0);
    for (int i = 0; i < n_; ++i) {
        const double Ii = std::max(x[i], 0.0);
        const double infected = infection_increment(rng, alpha_ * Ii * dt, opts_);
        const double recovered = channel_increment(rng, beta_ * Ii * dt, opts_);
        dI_[i] += infected - recovered;
        J_[i] += infected;
    }
    add_movement(rng, gamma_, n_, x, opts_, dI_);
    apply(I_, dI_, opts_.clamp, stats_);
    ++stats_.steps;
}

FullSirStepper::FullSirStepper(const MobilityMatrix& gamma, const TransmissionParams& params,
                               const SimulationOptions& opts)
    : n_(gamma.n()), alpha_(params.alpha), beta_(params.beta), opts_(opts), gamma_(flatten(gamma)) {
    check_step(gamma, params, opts);
    dS_.assign(n_, 0.0);
    dI_.assign(n_, 0.0);
    dR_.assign(n_, 0.0);
    midS_.assign(n_, 0.0);
    midI_.assign(n_, 0.0);
    midR_.assign(n_, 0.0);
}

void FullSirStepper::reset(const CompartmentState& init) {
    const auto n = static_cast<std::size_t>(n_);
    if (init.S.size() != n || init.I.size() != n || init.R.size() != n)
        throw std::invalid_argument("FullSirStepper: state has wrong length");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(init.S[i] >= 0.0 && init.I[i] >= 0.0 && init.R[i] >= 0.0))
            throw std::invalid_argument("FullSirStepper: compartments must be >= 0");
        total += init.S[i] + init.I[i] + init.R[i];
    }
    if (!(total > 0.0)) throw std::invalid_argument("FullSirStepper: empty population");
    x_ = init;
    if (x_.J.size() != n) x_.J = x_.I;
    stats_ = {};
}

void FullSirStepper::step(RandomStream& rng) {
    const double dt = opts_.dt_int;
    const std::vector<double>*Sa = &x_.S, *Ia = &x_.I, *Ra = &x_.R;
    if (opts_.scheme == StepScheme::kMidpoint) {
        const double h = 0.5 * dt;
        for (int i = 0; i < n_; ++i) {
            const double S = std::max(x_.S[i], 0.0), I = std::max(x_.I[i], 0.0), R = std::max(x_.R[i], 0.0);
            const double P = S + I + R;
            const double force = P > 0.0 ? alpha_ * S * I / P : 0.0;
            midS_[i] = x_.S[i] - force * h;
            midI_[i] = x_.I[i] + (force - beta_ * I) * h;
            midR_[i] = x_.R[i] + beta_ * I * h;
        }
        add_flow(gamma_, n_, x_.S, h, midS_);
        add_flow(gamma_, n_, x_.I, h, midI_);
        add_flow(gamma_, n_, x_.R, h, midR_);
        floor_at_zero(midS_);
        floor_at_zero(midI_);
        floor_at_zero(midR_);
        Sa = &midS_, Ia = &midI_, Ra = &midR_;
    }
    std::fill(dS_.begin(), dS_.end(), 0.0);
    std::fill(dI_.begin(), dI_.end(), 0.0);
    std::fill(dR_.begin(), dR_.end(), 0.0);
    for (int i = 0; i < n_; ++i) {
        const double S = std::max((*Sa)[i], 0.0);
        const double I = std::max((*Ia)[i], 0.0);
        const double R = std::max((*Ra)[i], 0.0);
        const double P = S + I + R;
        const double force = P > 0.0 ? alpha_ * S * I / P * dt : 0.0;
        const double infected = infection_increment(rng, force, opts_);
        const double recovered = channel_increment(rng, beta_ * I * dt, opts_);
        dS_[i] -= infected;
        dI_[i] += infected - recovered;
        dR_[i] += recovered;
        x_.J[i] += infected;
    }
    add_movement(rng, gamma_, n_, *Ia, opts_, dI_);
    add_movement(rng, gamma_, n_, *Sa, opts_, dS_);
    add_movement(rng, gamma_, n_, *Ra, opts_, dR_);
    apply(x_.S, dS_, opts_.clamp, stats_);
    apply(x_.I, dI_, opts_.clamp, stats_);
    apply(x_.R, dR_, opts_.clamp, stats_);
    ++stats_.steps;
    x_.t += dt;
}

Trajectory simulate_full_sir(const NeighborMatrix& l, const MobilityMatrix& gamma, const TransmissionParams& params,
                             const CompartmentState& init, double t_end, const SimulationOptions& opts,
                             std::uint64_t seed) {
    if (l.n() != gamma.n()) throw std::invalid_argument("simulate_full_sir: topology and mobility sizes differ");
    for (int i = 0; i < l.n(); ++i)
        for (int j = 0; j < l.n(); ++j)
            if (!l(i, j) && i != j && gamma.rates(i, j) != 0.0)
                throw std::invalid_argument("simulate_full_sir: mobility has a rate on an absent link");
    FullSirStepper stepper(gamma, params, opts);
    stepper.reset(init);
    const auto steps = step_count(t_end, opts.dt_int);
    RandomStream rng(seed, "simulate/full-sir");

    Trajectory traj;
    traj.model = ModelKind::kFullSir;
    traj.dt_int = opts.dt_int;
    traj.record_stride = opts.record_stride;
    traj.states.reserve(static_cast<std::size_t>(steps / opts.record_stride + 1));
    CompartmentState s = stepper.state();
    s.t = init.t;
    traj.states.push_back(s);
    for (std::int64_t k = 1; k <= steps; ++k) {
        stepper.step(rng);
        if (k % opts.record_stride == 0) {
            s = stepper.state();
            s.t = init.t + static_cast<double>(k) * opts.dt_int;
            traj.states.push_back(std::move(s));
        }
    }
    traj.stats = stepper.stats();
    return traj;
}

Trajectory simulate_linearized(const MobilityMatrix& gamma, const TransmissionParams& params,
                               std::span<const double> I0, double t_end, const SimulationOptions& opts,
                               std::uint64_t seed) {
    LinearizedStepper stepper(gamma, params, opts);
    stepper.reset(I0);
    const auto steps = step_count(t_end, opts.dt_int);
    RandomStream rng(seed, "simulate/linearized");

    Trajectory traj;
    traj.model = ModelKind::kLinearized;
    traj.dt_int = opts.dt_int;
    traj.record_stride = opts.record_stride;
    traj.states.reserve(static_cast<std::size_t>(steps / opts.record_stride + 1));
    auto record = [&](double t) {
        CompartmentState s;
        s.t = t;
        s.I.assign(stepper.I().begin(), stepper.I().end());
        s.J.assign(stepper.J().begin(), stepper.J().end());
        traj.states.push_back(std::move(s));
    };
    record(0.0);
    for (std::int64_t k = 1; k <= steps; ++k) {
        stepper.step(rng);
        if (k % opts.record_stride == 0) record(static_cast<double>(k) * opts.dt_int);
    }
    traj.stats = stepper.stats();
    return traj;
}

TimeSeriesDataset observe(const Trajectory& traj, double delta_t, int D, DatasetKind kind, bool round_counts) {
    if (D < 2) throw std::invalid_argument("observe: need D >= 2");
    if (!(delta_t > 0.0)) throw std::invalid_argument("observe: delta_t must be positive");
    if (traj.states.empty()) throw std::invalid_argument("observe: empty trajectory");
    const double ratio = delta_t / traj.record_interval();
    const auto stride = std::llround(ratio);
    if (stride < 1 || std::abs(ratio - static_cast<double>(stride)) > 1e-9 * ratio)
        throw std::invalid_argument("observe: delta_t is not a multiple of the recorded step");
    const auto needed = static_cast<std::size_t>(stride) *
                        static_cast<std::size_t>(kind == DatasetKind::kNewCases ? D : D - 1);
    if (needed >= traj.states.size()) throw std::invalid_argument("observe: trajectory too short for D observations");

    const int n = static_cast<int>(traj.states.front().I.size());
    auto count = [&](double x) { return round_counts ? std::round(x) : x; };
    auto at = [&](int d) -> const CompartmentState& {
        return traj.states[static_cast<std::size_t>(d) * static_cast<std::size_t>(stride)];
    };

    TimeSeriesDataset ds;
    ds.kind = kind;
    ds.delta_t = delta_t;
    ds.t0 = at(0).t;
    ds.values.resize(D, n);
    if (kind == DatasetKind::kInfectiousCounts) {
        for (int d = 0; d < D; ++d)
            for (int i = 0; i < n; ++i) ds.values(d, i) = count(at(d).I[i]);
    } else {
        ds.initial_cumulative.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) ds.initial_cumulative[i] = count(at(0).J[i]);
        for (int d = 0; d < D; ++d)
            for (int i = 0; i < n; ++i) ds.values(d, i) = count(at(d + 1).J[i]) - count(at(d).J[i]);
    }
    ds.metadata["model"] = traj.model == ModelKind::kFullSir ? "full-sir" : "linearized";
    ds.metadata["dt_int"] = traj.dt_int;
    ds.metadata["rounded"] = round_counts;
    return ds;
}

}  // namespace epinet
