#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace epinet {

enum class DatasetKind { kInfectiousCounts, kNewCases };

std::string_view to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(std::string_view s);

/// Observations at every node on a uniform grid t_d = t0 + d * delta_t.
///
/// For kInfectiousCounts, row d holds I_i(t_d). For kNewCases, row d holds
/// dJ_i(t_d) = J_i(t_{d+1}) - J_i(t_d) and `initial_cumulative` holds J_i(t_0),
/// so the cumulative view J_i(t_d) is recoverable without anything else.
struct TimeSeriesDataset {
    DatasetKind kind = DatasetKind::kInfectiousCounts;
    double delta_t = 1.0;
    double t0 = 0.0;
    Eigen::MatrixXd values;                   // D x n
    std::vector<double> initial_cumulative;   // J_i(t_0); new-cases only
    std::vector<std::string> node_names;      // optional
    nlohmann::json metadata = nlohmann::json::object();

    int n() const noexcept { return static_cast<int>(values.cols()); }
    int D() const noexcept { return static_cast<int>(values.rows()); }

    /// Checks shape and nonnegativity; throws std::invalid_argument.
    void validate() const;

    /// I(t_d) = sum_i I_i(t_d); infectious-counts only.
    std::vector<double> infectious_totals() const;

    /// J(t_d) for d = 0..D (D+1 values); new-cases only.
    std::vector<double> cumulative_totals() const;

    /// J_i(t_d) for d = 0..D as a (D+1) x n matrix; new-cases only.
    Eigen::MatrixXd cumulative_by_node() const;

    std::string node_label(int i) const;
};

// CSV: header "t,node_0,...,node_{n-1}", one row per observation time.
void write_dataset_csv(std::ostream& os, const TimeSeriesDataset& ds);

/// Parses the CSV body; kind and J(t_0) are not part of the CSV and come from the sidecar.
TimeSeriesDataset read_dataset_csv(std::istream& is, DatasetKind kind);

nlohmann::json dataset_sidecar(const TimeSeriesDataset& ds);

/// Writes <stem>.csv and <stem>.json.
void save_dataset(const std::filesystem::path& stem, const TimeSeriesDataset& ds);

/// Reads a CSV and, when present, its .json sidecar next to it.
TimeSeriesDataset load_dataset(const std::filesystem::path& csv_path);

}  // namespace epinet
