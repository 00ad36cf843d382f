#pragma once

#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "epinet/dataset.hpp"
#include "epinet/netgen.hpp"

namespace epinet {

struct ErrorReport {
    double e_r = 0.0;
    double e_l = 0.0;
    std::vector<std::pair<int, int>> mismatches;  // unordered pairs (i<j) classified wrongly

    nlohmann::json to_json() const;
};

/// |alpha_hat/beta_hat - alpha/beta| / (alpha/beta).
double error_r(double alpha_hat, double beta_hat, double alpha_true, double beta_true);

/// Fraction of unordered pairs whose presence or absence differs.
double error_l(const NeighborMatrix& l_hat, const NeighborMatrix& l_true);

std::vector<std::pair<int, int>> link_mismatches(const NeighborMatrix& l_hat, const NeighborMatrix& l_true);

ErrorReport score(double alpha_hat, double beta_hat, const NeighborMatrix& l_hat, double alpha_true, double beta_true,
                  const NeighborMatrix& l_true);

/// Covariance of node increments about the cross-node mean increment at each time:
///   rho_ij = sum_d (dI_i(t_d) - <dI>(t_d)) (dI_j(t_d) - <dI>(t_d)),
/// predicting l_ij = 1 iff rho_ij < 0.
NeighborMatrix naive_correlation_estimate(const TimeSeriesDataset& ds);
Eigen::MatrixXd naive_correlation_matrix(const TimeSeriesDataset& ds);

struct RandomGuessStats {
    double mean = 0.5;
    double sd = 0.0;
};

/// E_l of a uniformly random guess: Binomial(n(n-1)/2, 1/2) / (n(n-1)/2).
RandomGuessStats random_guess_stats(int n);

}  // namespace epinet
