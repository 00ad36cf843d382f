#pragma once

#include <utility>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "epinet/netgen.hpp"

namespace epinet {

/// Parameters of the linearized moment dynamics: theta = {gamma, alpha, beta}.
struct Theta {
    double alpha = 0.0;
    double beta = 0.0;
    MobilityMatrix gamma;

    int n() const noexcept { return gamma.n(); }
};

/// a_ij = (alpha - beta - sum_k gamma_ik) delta_ij + gamma_ji, so that dm/dt = a m
/// for the column vector of node means.
struct DriftMatrix {
    Eigen::MatrixXd a;
};

struct MomentState {
    double t = 0.0;
    Eigen::VectorXd mI, mJ;
    Eigen::MatrixXd vII, vIJ, vJJ;

    nlohmann::json to_json() const;
};

struct AggregateMoments {
    double t = 0.0;
    double mI = 0.0, mJ = 0.0;
    double vII = 0.0, vIJ = 0.0, vJJ = 0.0;
};

struct MomentOptions {
    double rel_tol = 1e-10;
    double abs_tol = 1e-10;   // scaled by max(1, sum I0)
    double max_step = 0.0;    // 0: unlimited
};

struct MomentDiagnostics {
    int ode_steps = 0;
};

DriftMatrix drift_matrix(const Theta& theta);

/// Noise matrix <B> evaluated at node means m:
/// B_ij = [(alpha + beta + sum_k gamma_ik) m_i + sum_k gamma_ki m_k] delta_ij - gamma_ij m_i - gamma_ji m_j.
Eigen::MatrixXd noise_matrix(const Theta& theta, const Eigen::VectorXd& m);

/// Means and covariances of I and J at time t starting from exactly known I(0) = I0
/// (and J(0) = I0). Means use the matrix exponential; covariance blocks come from
/// integrating their ODEs with an embedded Runge-Kutta (Dormand-Prince 5(4)) method.
MomentState exact_moments(const Theta& theta, const Eigen::VectorXd& I0, double t,
                          const MomentOptions& opts = {}, MomentDiagnostics* diag = nullptr);

/// Closed-form moments of the totals I and J. Near alpha = beta the closed forms
/// cancel catastrophically; there the same quantities are taken from the exponential
/// of the 5x5 linear moment system, which is regular at alpha = beta.
AggregateMoments aggregate_moments(double alpha, double beta, double I0_total, double t);

/// Threshold on |alpha - beta| * t below which aggregate_moments uses the regular branch.
inline constexpr double kAggregateLimitThreshold = 1e-2;

/// First-order-in-dt mean and covariance of I(t + dt) given exact I(t) = I_prev.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> approx_step_moments(const Eigen::VectorXd& I_prev, const Theta& theta,
                                                                 double dt);

/// Scalar analog: (I + (alpha - beta) I dt, (alpha + beta) I dt).
std::pair<double, double> approx_aggregate_step(double I_total_prev, double alpha, double beta, double dt);

}  // namespace epinet
