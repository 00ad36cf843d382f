#include "epinet/dataset.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "epinet/format.hpp"

namespace epinet {

std::string_view to_string(DatasetKind kind) {
    return kind == DatasetKind::kInfectiousCounts ? "infectious-counts" : "new-cases";
}

DatasetKind dataset_kind_from_string(std::string_view s) {
    if (s == "infectious-counts") return DatasetKind::kInfectiousCounts;
    if (s == "new-cases") return DatasetKind::kNewCases;
    throw std::invalid_argument("unknown dataset kind '" + std::string(s) + "'");
}

void TimeSeriesDataset::validate() const {
    if (D() < 2) throw std::invalid_argument("dataset: need at least two observation rows");
    if (n() < 1) throw std::invalid_argument("dataset: need at least one node");
    if (!(delta_t > 0.0)) throw std::invalid_argument("dataset: delta_t must be positive");
    for (int d = 0; d < D(); ++d)
        for (int i = 0; i < n(); ++i)
            if (!(values(d, i) >= 0.0))
                throw std::invalid_argument("dataset: negative or non-finite value at row " + std::to_string(d) +
                                            ", node " + std::to_string(i));
    if (kind == DatasetKind::kNewCases && !initial_cumulative.empty() &&
        static_cast<int>(initial_cumulative.size()) != n())
        throw std::invalid_argument("dataset: initial_cumulative has wrong length");
    if (!node_names.empty() && static_cast<int>(node_names.size()) != n())
        throw std::invalid_argument("dataset: node_names has wrong length");
}

std::vector<double> TimeSeriesDataset::infectious_totals() const {
    if (kind != DatasetKind::kInfectiousCounts)
        throw std::logic_error("infectious_totals: dataset holds new cases");
    std::vector<double> totals(static_cast<std::size_t>(D()));
    for (int d = 0; d < D(); ++d) totals[d] = values.row(d).sum();
    return totals;
}

Eigen::MatrixXd TimeSeriesDataset::cumulative_by_node() const {
    if (kind != DatasetKind::kNewCases) throw std::logic_error("cumulative_by_node: dataset holds infectious counts");
    Eigen::MatrixXd J(D() + 1, n());
    for (int i = 0; i < n(); ++i) J(0, i) = initial_cumulative.empty() ? 0.0 : initial_cumulative[i];
    for (int d = 0; d < D(); ++d) J.row(d + 1) = J.row(d) + values.row(d);
    return J;
}

std::vector<double> TimeSeriesDataset::cumulative_totals() const {
    const Eigen::MatrixXd J = cumulative_by_node();
    std::vector<double> totals(static_cast<std::size_t>(J.rows()));
    for (int d = 0; d < J.rows(); ++d) totals[d] = J.row(d).sum();
    return totals;
}

std::string TimeSeriesDataset::node_label(int i) const {
    if (!node_names.empty()) return node_names.at(static_cast<std::size_t>(i));
    return "node_" + std::to_string(i);
}

void write_dataset_csv(std::ostream& os, const TimeSeriesDataset& ds) {
    os << 't';
    for (int i = 0; i < ds.n(); ++i) os << ",node_" << i;
    os << '\n';
    for (int d = 0; d < ds.D(); ++d) {
        os << format_double(ds.t0 + d * ds.delta_t);
        for (int i = 0; i < ds.n(); ++i) os << ',' << format_double(ds.values(d, i));
        os << '\n';
    }
}

TimeSeriesDataset read_dataset_csv(std::istream& is, DatasetKind kind) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("dataset csv: empty input");
    int n = 0;
    {
        std::istringstream header(line);
        std::string cell;
        std::getline(header, cell, ',');
        if (cell != "t") throw std::runtime_error("dataset csv: header must start with 't'");
        while (std::getline(header, cell, ',')) {
            if (!cell.empty() && cell.back() == '\r') cell.pop_back();
            if (cell != "node_" + std::to_string(n))
                throw std::runtime_error("dataset csv: unexpected header column '" + cell + "'");
            ++n;
        }
    }
    std::vector<double> times;
    std::vector<double> flat;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::istringstream row(line);
        std::string cell;
        int col = 0;
        try {
            while (std::getline(row, cell, ',')) {
                const double x = parse_double(cell);
                if (col == 0)
                    times.push_back(x);
                else
                    flat.push_back(x);
                ++col;
            }
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("dataset csv line " + std::to_string(line_no) + ": " + e.what());
        }
        if (col != n + 1)
            throw std::runtime_error("dataset csv line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(n + 1) + " columns");
    }
    TimeSeriesDataset ds;
    ds.kind = kind;
    const int D = static_cast<int>(times.size());
    ds.values.resize(D, n);
    for (int d = 0; d < D; ++d)
        for (int i = 0; i < n; ++i) ds.values(d, i) = flat[static_cast<std::size_t>(d) * n + i];
    if (D >= 1) ds.t0 = times[0];
    if (D >= 2) {
        ds.delta_t = times[1] - times[0];
        for (int d = 2; d < D; ++d) {
            const double step = times[d] - times[d - 1];
            if (std::abs(step - ds.delta_t) > 1e-9 * std::max(1.0, std::abs(ds.delta_t)))
                throw std::runtime_error("dataset csv: observation times are not uniformly spaced");
        }
    }
    return ds;
}

nlohmann::json dataset_sidecar(const TimeSeriesDataset& ds) {
    nlohmann::json j = {{"schema_version", 1},
                        {"kind", std::string(to_string(ds.kind))},
                        {"delta_t", ds.delta_t},
                        {"t0", ds.t0},
                        {"n", ds.n()},
                        {"D", ds.D()}};
    if (ds.kind == DatasetKind::kNewCases) j["initial_cumulative"] = ds.initial_cumulative;
    if (!ds.node_names.empty()) j["node_names"] = ds.node_names;
    j["metadata"] = ds.metadata;
    return j;
}

void save_dataset(const std::filesystem::path& stem, const TimeSeriesDataset& ds) {
    auto csv_path = stem;
    csv_path += ".csv";
    auto json_path = stem;
    json_path += ".json";
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
    write_dataset_csv(csv, ds);
    std::ofstream side(json_path);
    if (!side) throw std::runtime_error("cannot write " + json_path.string());
    side << dataset_sidecar(ds).dump(2) << '\n';
}

TimeSeriesDataset load_dataset(const std::filesystem::path& csv_path) {
    auto json_path = csv_path;
    json_path.replace_extension(".json");
    nlohmann::json side;
    if (std::ifstream js(json_path); js) side = nlohmann::json::parse(js);

    const DatasetKind kind = side.contains("kind") ? dataset_kind_from_string(side["kind"].get<std::string>())
                                                   : DatasetKind::kInfectiousCounts;
    std::ifstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot read " + csv_path.string());
    TimeSeriesDataset ds = read_dataset_csv(csv, kind);
    if (side.contains("delta_t")) ds.delta_t = side["delta_t"].get<double>();
    if (side.contains("t0")) ds.t0 = side["t0"].get<double>();
    if (side.contains("initial_cumulative"))
        ds.initial_cumulative = side["initial_cumulative"].get<std::vector<double>>();
    if (side.contains("node_names")) ds.node_names = side["node_names"].get<std::vector<std::string>>();
    if (side.contains("metadata")) ds.metadata = side["metadata"];
    ds.validate();
    return ds;
}

}  // namespace epinet
