#include "epinet/evaluation.hpp"

#include <cmath>
#include <stdexcept>

namespace epinet {

nlohmann::json ErrorReport::to_json() const {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [i, j] : mismatches) pairs.push_back({i, j});
    return {{"e_r", e_r}, {"e_l", e_l}, {"mismatches", pairs}};
}

double error_r(double alpha_hat, double beta_hat, double alpha_true, double beta_true) {
    if (!(beta_true > 0.0) || !(beta_hat > 0.0)) throw std::invalid_argument("error_r: beta values must be positive");
    const double r = alpha_true / beta_true;
    if (r == 0.0) throw std::invalid_argument("error_r: true ratio is zero");
    return std::abs(alpha_hat / beta_hat - r) / r;
}

std::vector<std::pair<int, int>> link_mismatches(const NeighborMatrix& l_hat, const NeighborMatrix& l_true) {
    if (l_hat.n() != l_true.n()) throw std::invalid_argument("error_l: topology sizes differ");
    std::vector<std::pair<int, int>> out;
    for (int p = 0; p < l_true.pair_count(); ++p) {
        const auto [i, j] = l_true.pair_at(p);
        if (l_hat(i, j) != l_true(i, j)) out.emplace_back(i, j);
    }
    return out;
}

double error_l(const NeighborMatrix& l_hat, const NeighborMatrix& l_true) {
    const auto wrong = link_mismatches(l_hat, l_true);
    if (l_true.pair_count() == 0) throw std::invalid_argument("error_l: need n >= 2");
    return static_cast<double>(wrong.size()) / l_true.pair_count();
}

ErrorReport score(double alpha_hat, double beta_hat, const NeighborMatrix& l_hat, double alpha_true, double beta_true,
                  const NeighborMatrix& l_true) {
    ErrorReport rep;
    rep.e_r = error_r(alpha_hat, beta_hat, alpha_true, beta_true);
    rep.mismatches = link_mismatches(l_hat, l_true);
    rep.e_l = static_cast<double>(rep.mismatches.size()) / l_true.pair_count();
    return rep;
}

Eigen::MatrixXd naive_correlation_matrix(const TimeSeriesDataset& ds) {
    if (ds.kind != DatasetKind::kInfectiousCounts)
        throw std::invalid_argument("naive_correlation_estimate: needs an infectious-counts dataset");
    if (ds.D() < 3) throw std::invalid_argument("naive_correlation_estimate: need D >= 3");
    const int n = ds.n();
    Eigen::MatrixXd dev(ds.D() - 1, n);
    for (int d = 0; d + 1 < ds.D(); ++d) {
        const Eigen::RowVectorXd inc = ds.values.row(d + 1) - ds.values.row(d);
        dev.row(d) = inc.array() - inc.mean();
    }
    return dev.transpose() * dev;
}

NeighborMatrix naive_correlation_estimate(const TimeSeriesDataset& ds) {
    const Eigen::MatrixXd rho = naive_correlation_matrix(ds);
    NeighborMatrix l(ds.n());
    for (int p = 0; p < l.pair_count(); ++p) {
        const auto [i, j] = l.pair_at(p);
        if (rho(i, j) < 0.0) l.set(i, j, true);
    }
    return l;
}

RandomGuessStats random_guess_stats(int n) {
    if (n < 2) throw std::invalid_argument("random_guess_stats: need n >= 2");
    const double pairs = 0.5 * n * (n - 1);
    return {0.5, 0.5 / std::sqrt(pairs)};
}

}  // namespace epinet
