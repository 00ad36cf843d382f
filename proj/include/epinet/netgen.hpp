#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace epinet {

/// Binary symmetric adjacency with zero diagonal.
class NeighborMatrix {
public:
    NeighborMatrix() = default;
    explicit NeighborMatrix(int n);

    int n() const noexcept { return n_; }
    bool operator()(int i, int j) const noexcept { return bits_[index(i, j)] != 0; }

    /// Sets l_ij = l_ji; setting the diagonal is an error.
    void set(int i, int j, bool present);
    void flip(int i, int j) { set(i, j, !(*this)(i, j)); }

    int link_count() const noexcept;
    int pair_count() const noexcept { return n_ * (n_ - 1) / 2; }

    /// Unordered pair for a row-major (i<j) pair index.
    std::pair<int, int> pair_at(int index) const;

    /// Upper-triangle bits in row-major order, e.g. "0110..." of length n(n-1)/2.
    std::string canonical() const;
    static NeighborMatrix from_canonical(int n, const std::string& bits);

    static NeighborMatrix complete(int n);

    friend bool operator==(const NeighborMatrix& a, const NeighborMatrix& b) {
        return a.n_ == b.n_ && a.bits_ == b.bits_;
    }

private:
    std::size_t index(int i, int j) const noexcept {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j);
    }

    int n_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Per-unit-time movement probabilities gamma_ij (row i = origin).
struct MobilityMatrix {
    Eigen::MatrixXd rates;

    int n() const noexcept { return static_cast<int>(rates.rows()); }
    double outflow(int i) const { return rates.row(i).sum(); }
};

struct PopulationAllocation {
    std::vector<double> counts;
    double total = 0.0;
};

/// Erdos-Renyi draw: each pair (i<j, row-major) linked with probability avg_degree/(n-1),
/// consuming one uniform from stream "netgen/er" per pair.
NeighborMatrix generate_er_topology(int n, double avg_degree, std::uint64_t seed);

std::vector<int> degrees(const NeighborMatrix& l);

/// gamma_ij = l_ij sqrt(k_i k_j) / sum_j l_ij sqrt(k_i k_j) * gamma_total.
/// Isolated nodes get an all-zero row.
MobilityMatrix mobility_from_topology(const NeighborMatrix& l, double gamma_total);

/// P_i(0) proportional to sum_j l_ij (k_i k_j)^exponent, normalized to `total`.
/// exponent = 0.5 is the square-root law; 4 gives the heavy-tailed variant.
PopulationAllocation initial_populations(const NeighborMatrix& l, double total, double exponent = 0.5);

// Text edge list: optional "# n=<n>" header, then "i j" per line (0-based, i<j).
void write_edge_list(std::ostream& os, const NeighborMatrix& l);
NeighborMatrix read_edge_list(std::istream& is);

// Mobility edge list: "# n=<n>" header, then "i j rate" per nonzero directed entry.
void write_mobility_edge_list(std::ostream& os, const MobilityMatrix& gamma);
MobilityMatrix read_mobility_edge_list(std::istream& is);

nlohmann::json topology_to_json(const NeighborMatrix& l, double gamma_total);
NeighborMatrix topology_from_json(const nlohmann::json& j);
nlohmann::json mobility_to_json(const MobilityMatrix& gamma);
MobilityMatrix mobility_from_json(const nlohmann::json& j);

}  // namespace epinet
