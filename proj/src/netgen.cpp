#include "epinet/netgen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "epinet/format.hpp"
#include "epinet/rng.hpp"

namespace epinet {

NeighborMatrix::NeighborMatrix(int n) : n_(n) {
    if (n < 0) throw std::invalid_argument("NeighborMatrix: negative node count");
    bits_.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
}

void NeighborMatrix::set(int i, int j, bool present) {
    if (i < 0 || j < 0 || i >= n_ || j >= n_) throw std::out_of_range("NeighborMatrix: index out of range");
    if (i == j) throw std::invalid_argument("NeighborMatrix: diagonal must stay zero");
    bits_[index(i, j)] = present ? 1 : 0;
    bits_[index(j, i)] = present ? 1 : 0;
}

int NeighborMatrix::link_count() const noexcept {
    int count = 0;
    for (int i = 0; i < n_; ++i)
        for (int j = i + 1; j < n_; ++j) count += (*this)(i, j) ? 1 : 0;
    return count;
}

std::pair<int, int> NeighborMatrix::pair_at(int index) const {
    if (index < 0 || index >= pair_count()) throw std::out_of_range("NeighborMatrix: pair index out of range");
    int i = 0;
    int row_len = n_ - 1;
    while (index >= row_len) {
        index -= row_len;
        ++i;
        --row_len;
    }
    return {i, i + 1 + index};
}

std::string NeighborMatrix::canonical() const {
    std::string out;
    out.reserve(static_cast<std::size_t>(pair_count()));
    for (int i = 0; i < n_; ++i)
        for (int j = i + 1; j < n_; ++j) out.push_back((*this)(i, j) ? '1' : '0');
    return out;
}

NeighborMatrix NeighborMatrix::from_canonical(int n, const std::string& bits) {
    NeighborMatrix l(n);
    if (static_cast<int>(bits.size()) != l.pair_count())
        throw std::invalid_argument("NeighborMatrix: canonical string has wrong length");
    std::size_t k = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j, ++k) {
            if (bits[k] != '0' && bits[k] != '1')
                throw std::invalid_argument("NeighborMatrix: canonical string must be 0/1");
            l.set(i, j, bits[k] == '1');
        }
    }
    return l;
}

NeighborMatrix NeighborMatrix::complete(int n) {
    NeighborMatrix l(n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) l.set(i, j, true);
    return l;
}

NeighborMatrix generate_er_topology(int n, double avg_degree, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("generate_er_topology: need n >= 2");
    if (!(avg_degree >= 0.0) || avg_degree > n - 1)
        throw std::invalid_argument("generate_er_topology: avg_degree must lie in [0, n-1]");
    const double p = avg_degree / (n - 1);
    RandomStream rng(seed, "netgen/er");
    NeighborMatrix l(n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (rng.bernoulli(p)) l.set(i, j, true);
    return l;
}

std::vector<int> degrees(const NeighborMatrix& l) {
    std::vector<int> k(static_cast<std::size_t>(l.n()), 0);
    for (int i = 0; i < l.n(); ++i)
        for (int j = 0; j < l.n(); ++j) k[i] += l(i, j) ? 1 : 0;
    return k;
}

namespace {

// w_ij = l_ij (k_i k_j)^exponent
Eigen::MatrixXd link_weights(const NeighborMatrix& l, double exponent) {
    const auto k = degrees(l);
    const int n = l.n();
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (l(i, j)) w(i, j) = std::pow(static_cast<double>(k[i]) * k[j], exponent);
    return w;
}

}  // namespace

MobilityMatrix mobility_from_topology(const NeighborMatrix& l, double gamma_total) {
    if (!(gamma_total >= 0.0 && gamma_total <= 1.0))
        throw std::invalid_argument("mobility_from_topology: gamma_total must lie in [0, 1]");
    Eigen::MatrixXd w = link_weights(l, 0.5);
    for (int i = 0; i < l.n(); ++i) {
        const double row = w.row(i).sum();
        if (row > 0.0) w.row(i) *= gamma_total / row;
    }
    return MobilityMatrix{std::move(w)};
}

PopulationAllocation initial_populations(const NeighborMatrix& l, double total, double exponent) {
    if (!(total > 0.0)) throw std::invalid_argument("initial_populations: total must be positive");
    if (l.link_count() == 0) throw std::invalid_argument("initial_populations: topology has no links");
    const Eigen::MatrixXd w = link_weights(l, exponent);
    const Eigen::VectorXd rows = w.rowwise().sum();
    const double sum = rows.sum();
    PopulationAllocation pop;
    pop.total = total;
    pop.counts.resize(static_cast<std::size_t>(l.n()));
    for (int i = 0; i < l.n(); ++i) pop.counts[i] = rows(i) / sum * total;
    return pop;
}

namespace {

// Returns n from a "# n=<n>" header line, or -1.
int parse_header(const std::string& line) {
    std::istringstream ss(line.substr(1));
    std::string token;
    while (ss >> token) {
        if (token.rfind("n=", 0) == 0) return std::stoi(token.substr(2));
    }
    return -1;
}

}  // namespace

void write_edge_list(std::ostream& os, const NeighborMatrix& l) {
    os << "# n=" << l.n() << '\n';
    for (int i = 0; i < l.n(); ++i)
        for (int j = i + 1; j < l.n(); ++j)
            if (l(i, j)) os << i << ' ' << j << '\n';
}

NeighborMatrix read_edge_list(std::istream& is) {
    int n = -1;
    std::vector<std::pair<int, int>> edges;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (int h = parse_header(line); h >= 0) n = h;
            continue;
        }
        std::istringstream ss(line);
        int i = 0;
        int j = 0;
        if (!(ss >> i >> j) || i < 0 || j < 0 || i == j)
            throw std::runtime_error("edge list line " + std::to_string(line_no) + ": expected 'i j'");
        edges.emplace_back(i, j);
    }
    if (n < 0) {
        n = 0;
        for (auto [i, j] : edges) n = std::max({n, i + 1, j + 1});
    }
    NeighborMatrix l(n);
    for (auto [i, j] : edges) l.set(i, j, true);
    return l;
}

void write_mobility_edge_list(std::ostream& os, const MobilityMatrix& gamma) {
    os << "# n=" << gamma.n() << '\n';
    for (int i = 0; i < gamma.n(); ++i)
        for (int j = 0; j < gamma.n(); ++j)
            if (gamma.rates(i, j) != 0.0) os << i << ' ' << j << ' ' << format_double(gamma.rates(i, j)) << '\n';
}

MobilityMatrix read_mobility_edge_list(std::istream& is) {
    int n = -1;
    struct Entry {
        int i, j;
        double rate;
    };
    std::vector<Entry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (int h = parse_header(line); h >= 0) n = h;
            continue;
        }
        std::istringstream ss(line);
        std::string a, b, c;
        if (!(ss >> a >> b >> c))
            throw std::runtime_error("mobility edge list line " + std::to_string(line_no) + ": expected 'i j rate'");
        entries.push_back({std::stoi(a), std::stoi(b), parse_double(c)});
    }
    if (n < 0) {
        n = 0;
        for (const auto& e : entries) n = std::max({n, e.i + 1, e.j + 1});
    }
    MobilityMatrix g{Eigen::MatrixXd::Zero(n, n)};
    for (const auto& e : entries) {
        if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n || e.i == e.j || e.rate < 0.0)
            throw std::runtime_error("mobility edge list: invalid entry");
        g.rates(e.i, e.j) = e.rate;
    }
    return g;
}

nlohmann::json topology_to_json(const NeighborMatrix& l, double gamma_total) {
    nlohmann::json links = nlohmann::json::array();
    for (int i = 0; i < l.n(); ++i)
        for (int j = i + 1; j < l.n(); ++j)
            if (l(i, j)) links.push_back({i, j});
    return {{"n", l.n()}, {"links", links}, {"gamma_total", gamma_total}};
}

NeighborMatrix topology_from_json(const nlohmann::json& j) {
    NeighborMatrix l(j.at("n").get<int>());
    for (const auto& link : j.at("links")) l.set(link.at(0).get<int>(), link.at(1).get<int>(), true);
    return l;
}

nlohmann::json mobility_to_json(const MobilityMatrix& gamma) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < gamma.n(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < gamma.n(); ++j) row.push_back(gamma.rates(i, j));
        rows.push_back(std::move(row));
    }
    return {{"n", gamma.n()}, {"gamma", rows}};
}

MobilityMatrix mobility_from_json(const nlohmann::json& j) {
    const int n = j.at("n").get<int>();
    MobilityMatrix g{Eigen::MatrixXd::Zero(n, n)};
    const auto& rows = j.at("gamma");
    if (static_cast<int>(rows.size()) != n) throw std::runtime_error("mobility json: row count mismatch");
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(rows[i].size()) != n) throw std::runtime_error("mobility json: column count mismatch");
        for (int k = 0; k < n; ++k) g.rates(i, k) = rows[i][k].get<double>();
    }
    return g;
}

}  // namespace epinet
