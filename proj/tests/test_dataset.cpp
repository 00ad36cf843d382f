#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "epinet/dataset.hpp"
#include "epinet/rng.hpp"

using namespace epinet;

namespace {

TimeSeriesDataset random_dataset(DatasetKind kind, int D, int n, std::uint64_t seed) {
    RandomStream rng(seed, "test/dataset");
    TimeSeriesDataset ds;
    ds.kind = kind;
    ds.delta_t = 0.25;
    ds.values.resize(D, n);
    for (int d = 0; d < D; ++d)
        for (int i = 0; i < n; ++i) ds.values(d, i) = std::ldexp(rng.uniform(), static_cast<int>(rng.below(30)));
    if (kind == DatasetKind::kNewCases)
        for (int i = 0; i < n; ++i) ds.initial_cumulative.push_back(static_cast<double>(rng.below(1000)));
    return ds;
}

}  // namespace

TEST_CASE("CSV write then read is exact") {
    for (auto kind : {DatasetKind::kInfectiousCounts, DatasetKind::kNewCases}) {
        const auto ds = random_dataset(kind, 37, 6, 3);
        std::stringstream ss;
        write_dataset_csv(ss, ds);
        const auto back = read_dataset_csv(ss, kind);
        CHECK(back.values == ds.values);
        CHECK(back.delta_t == ds.delta_t);
        CHECK(back.t0 == ds.t0);
    }
}

TEST_CASE("CSV header and row errors carry context") {
    std::stringstream bad_header("time,node_0\n0,1\n");
    CHECK_THROWS_WITH(read_dataset_csv(bad_header, DatasetKind::kInfectiousCounts),
                      doctest::Contains("header"));
    std::stringstream bad_row("t,node_0,node_1\n0,1,2\n1,3\n");
    CHECK_THROWS_WITH(read_dataset_csv(bad_row, DatasetKind::kInfectiousCounts), doctest::Contains("line 3"));
    std::stringstream bad_cell("t,node_0\n0,1\n1,x\n");
    CHECK_THROWS_WITH(read_dataset_csv(bad_cell, DatasetKind::kInfectiousCounts), doctest::Contains("line 3"));
    std::stringstream uneven("t,node_0\n0,1\n1,1\n3,1\n");
    CHECK_THROWS(read_dataset_csv(uneven, DatasetKind::kInfectiousCounts));
}

TEST_CASE("save and load keep the sidecar fields") {
    auto ds = random_dataset(DatasetKind::kNewCases, 12, 3, 9);
    ds.node_names = {"A", "B", "C"};
    ds.metadata["seed"] = 9;
    const auto dir = std::filesystem::temp_directory_path() / "epinet_test_dataset";
    std::filesystem::create_directories(dir);
    save_dataset(dir / "ds", ds);
    const auto back = load_dataset(dir / "ds.csv");
    CHECK(back.kind == DatasetKind::kNewCases);
    CHECK(back.values == ds.values);
    CHECK(back.initial_cumulative == ds.initial_cumulative);
    CHECK(back.node_names == ds.node_names);
    CHECK(back.metadata["seed"] == 9);
    std::filesystem::remove_all(dir);
}

TEST_CASE("aggregate views") {
    TimeSeriesDataset ds;
    ds.values.resize(3, 2);
    ds.values << 1, 2, 3, 4, 5, 6;
    CHECK(ds.infectious_totals() == std::vector<double>{3, 7, 11});
    CHECK_THROWS(ds.cumulative_totals());

    ds.kind = DatasetKind::kNewCases;
    ds.initial_cumulative = {10, 20};
    CHECK(ds.cumulative_totals() == std::vector<double>{30, 33, 40, 51});
    const auto J = ds.cumulative_by_node();
    CHECK(J.rows() == 4);
    CHECK(J(3, 0) == 10 + 1 + 3 + 5);
    CHECK_THROWS(ds.infectious_totals());
}

TEST_CASE("validation rejects malformed datasets") {
    TimeSeriesDataset ds;
    ds.values.resize(1, 2);
    ds.values << 1, 1;
    CHECK_THROWS(ds.validate());
    ds.values.resize(2, 2);
    ds.values << 1, 1, -1, 1;
    CHECK_THROWS_WITH(ds.validate(), doctest::Contains("row 1"));
    ds.values(1, 0) = 0;
    CHECK_NOTHROW(ds.validate());
    ds.delta_t = 0;
    CHECK_THROWS(ds.validate());
}
