#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "epinet/dataset.hpp"
#include "epinet/netgen.hpp"
#include "epinet/rng.hpp"

namespace epinet {

/// Infection rate alpha, recovery rate beta, total outflow fraction gamma (all per unit time).
struct TransmissionParams {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma_total = 0.0;

    double r() const noexcept { return alpha / beta; }
    void validate() const;
};

struct CompartmentState {
    double t = 0.0;
    std::vector<double> S, I, R, J;
};

enum class ModelKind { kFullSir, kLinearized };

/// Per-step noise of the event channels (infection, recovery, movement).
///
/// kPoisson draws every channel count from Poisson(rate dt): the same mean and
/// variance as the Gaussian Langevin term, but never negative, so a sparsely
/// occupied node cannot be driven below zero by a single movement draw and J
/// stays nondecreasing. kGaussian is the literal Langevin increment for every
/// channel, with the infection count floored at zero.
enum class NoiseModel { kPoisson, kGaussian };

std::string_view to_string(NoiseModel noise);
NoiseModel noise_model_from_string(std::string_view s);

/// Where channel rates are evaluated within a step: at its start (kEuler), or at the
/// deterministic half-step state (kMidpoint), which makes the mean second order in dt_int.
enum class StepScheme { kEuler, kMidpoint };

std::string_view to_string(StepScheme s);
StepScheme step_scheme_from_string(std::string_view s);

struct SimulationOptions {
    double dt_int = 0.01;
    bool noise = true;   // false: deterministic steps (all z = 0)
    bool clamp = true;   // set negative compartments to zero after every step
    NoiseModel noise_model = NoiseModel::kPoisson;
    StepScheme scheme = StepScheme::kMidpoint;
    int record_stride = 1;  // keep every k-th integration state

    nlohmann::json to_json() const;
};

struct SimulationStats {
    std::uint64_t steps = 0;
    std::uint64_t node_updates = 0;
    std::uint64_t negative_updates = 0;  // compartment values that went below zero before clamping
};

struct Trajectory {
    ModelKind model = ModelKind::kLinearized;
    double dt_int = 0.01;
    int record_stride = 1;
    std::vector<CompartmentState> states;
    SimulationStats stats;

    double record_interval() const noexcept { return dt_int * record_stride; }
};

/// Fixed-step integrator for the early-growth (linearized) model.
/// Holds I and J only; usable directly for large ensembles.
class LinearizedStepper {
public:
    LinearizedStepper(const MobilityMatrix& gamma, const TransmissionParams& params, const SimulationOptions& opts);

    void reset(std::span<const double> I0, std::span<const double> J0 = {});
    void step(RandomStream& rng);

    std::span<const double> I() const noexcept { return I_; }
    std::span<const double> J() const noexcept { return J_; }
    const SimulationStats& stats() const noexcept { return stats_; }

private:
    int n_;
    double alpha_, beta_;
    SimulationOptions opts_;
    std::vector<double> gamma_;  // row-major n x n
    std::vector<double> I_, J_, dI_, mid_;
    SimulationStats stats_;
};

/// Full stochastic SIR on the meta-population network (S, I, R, J).
class FullSirStepper {
public:
    FullSirStepper(const MobilityMatrix& gamma, const TransmissionParams& params, const SimulationOptions& opts);

    void reset(const CompartmentState& init);
    void step(RandomStream& rng);

    const CompartmentState& state() const noexcept { return x_; }
    const SimulationStats& stats() const noexcept { return stats_; }

private:
    int n_;
    double alpha_, beta_;
    SimulationOptions opts_;
    std::vector<double> gamma_;
    CompartmentState x_;
    std::vector<double> dS_, dI_, dR_, midS_, midI_, midR_;
    SimulationStats stats_;
};

Trajectory simulate_full_sir(const NeighborMatrix& l, const MobilityMatrix& gamma, const TransmissionParams& params,
                             const CompartmentState& init, double t_end, const SimulationOptions& opts,
                             std::uint64_t seed);

Trajectory simulate_linearized(const MobilityMatrix& gamma, const TransmissionParams& params,
                               std::span<const double> I0, double t_end, const SimulationOptions& opts,
                               std::uint64_t seed);

/// Samples a trajectory on t_d = d * delta_t, d = 0..D-1. New-cases datasets use
/// J_i(t_{d+1}) - J_i(t_d), so they need the trajectory to reach D * delta_t.
TimeSeriesDataset observe(const Trajectory& traj, double delta_t, int D, DatasetKind kind, bool round_counts = false);

}  // namespace epinet
