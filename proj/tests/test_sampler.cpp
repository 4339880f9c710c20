#include "doctest.h"

#include "checks.hpp"
#include "fedgen/balanced_sampler.hpp"
#include "fedgen/error.hpp"

#include <set>

using namespace fedgen;

namespace {

std::vector<std::vector<std::size_t>> sized(std::initializer_list<int> sizes) {
    std::vector<std::vector<std::size_t>> out;
    std::size_t next = 100;
    for (int n : sizes) {
        out.emplace_back();
        for (int k = 0; k < n; ++k) out.back().push_back(next++);
    }
    return out;
}

Dataset indexed_dataset(std::size_t n) {
    Dataset d;
    d.shape = {1, 2, 2};
    d.num_classes = 1;
    for (std::size_t i = 0; i < n; ++i) d.examples.push_back({std::vector<Real>(4, static_cast<Real>(i)), 0});
    return d;
}

} // namespace

TEST_CASE("uneven classes {5,3,2} with B=6") {
    const auto shard = sized({5, 3, 2});
    const auto plan = plan_epoch(shard, 6, 11);
    CHECK(plan.per_class_quota == 2);
    CHECK(plan.majority_size == 5);
    CHECK(plan.num_batches == 3);
    REQUIRE(plan.streams.size() == 3);
    CHECK(plan.streams[0].second.size() == 5);
    CHECK(plan.streams[1].second.size() == 6);
    CHECK(plan.streams[2].second.size() == 6);
    REQUIRE(plan.batches.size() == 3);
    CHECK(plan.batches[0].size() == 6);
    CHECK(plan.batches[1].size() == 6);
    CHECK(plan.batches[2].size() == 5);
    int a = 0;
    for (const auto& r : plan.batches[2]) a += r.class_id == 0;
    CHECK(a == 1);
    CHECK(checks::sampler_violation(shard, 6, 11, plan).empty());

    const Dataset data = indexed_dataset(200);
    const auto batches = iterate(plan, data);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].cols() == 6 * 4);
    CHECK(batches[2].cols() == 5 * 4);
    CHECK(batches[0](0, 0) == static_cast<Real>(plan.batches[0][0].index));
}

TEST_CASE("single class is one permutation") {
    const auto shard = sized({4});
    const auto plan = plan_epoch(shard, 4, 3);
    CHECK(plan.per_class_quota == 4);
    REQUIRE(plan.num_batches == 1);
    std::multiset<std::size_t> got;
    for (const auto& r : plan.batches[0]) got.insert(r.index);
    CHECK(got == std::multiset<std::size_t>(shard[0].begin(), shard[0].end()));
}

TEST_CASE("two equal classes with B=2 visit every sample once") {
    const auto shard = sized({7, 7});
    const auto plan = plan_epoch(shard, 2, 5);
    CHECK(plan.num_batches == 7);
    std::multiset<std::size_t> seen;
    for (const auto& b : plan.batches) {
        REQUIRE(b.size() == 2);
        CHECK(b[0].class_id != b[1].class_id);
        for (const auto& r : b) seen.insert(r.index);
    }
    CHECK(seen.size() == 14);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 14);
}

TEST_CASE("empty classes are skipped and all-empty is an error") {
    auto shard = sized({3, 0, 5});
    shard[1].clear();
    const auto plan = plan_epoch(shard, 4, 1, {7, 8, 9});
    CHECK(plan.per_class_quota == 2);
    for (const auto& b : plan.batches)
        for (const auto& r : b) CHECK(r.class_id != 8);
    CHECK(plan.streams.front().first == 7);
    CHECK_THROWS_AS(plan_epoch({{}, {}}, 4, 1), ConfigError);
    CHECK_THROWS_AS(plan_epoch(shard, 0, 1), ConfigError);
}

TEST_CASE("B smaller than the class count") {
    const auto shard = sized({3, 3, 3, 3, 3});
    const auto plan = plan_epoch(shard, 2, 9);
    CHECK(plan.per_class_quota == 1);
    CHECK(plan.num_batches == 3);
    CHECK(checks::sampler_violation(shard, 2, 9, plan).empty());
}

TEST_CASE("random shards satisfy the oracle and invariants") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        int B = 0;
        const auto shard = checks::random_shard(rng, B);
        const auto plan = plan_epoch(shard, B, static_cast<std::uint64_t>(trial));
        INFO("trial " << trial);
        CHECK(checks::sampler_violation(shard, B, static_cast<std::uint64_t>(trial), plan) == "");
        const auto again = plan_epoch(shard, B, static_cast<std::uint64_t>(trial));
        CHECK(again.batches == plan.batches);
    }
}

TEST_CASE("iterate: conservation, empty plan, bad index") {
    const Dataset data = indexed_dataset(300);
    CHECK(iterate(EpochBatchPlan{}, data).empty());
    const auto shard = sized({9, 4});
    const auto plan = plan_epoch(shard, 5, 2);
    Eigen::Index cols = 0;
    std::size_t total = 0;
    for (const auto& b : iterate(plan, data)) cols += b.cols();
    for (const auto& b : plan.batches) total += b.size();
    CHECK(cols == static_cast<Eigen::Index>(total * 4));
    CHECK_THROWS_AS(iterate(plan, indexed_dataset(5)), IntegrityError);
}

TEST_CASE("group_by_class orders classes ascending") {
    Dataset d = indexed_dataset(6);
    const int labels[] = {3, 1, 3, 0, 1, 3};
    for (int i = 0; i < 6; ++i) d.examples[i].label = labels[i];
    const auto [ids, groups] = group_by_class(d, {0, 1, 2, 3, 4, 5});
    CHECK(ids == std::vector<int>{0, 1, 3});
    CHECK(groups[2] == std::vector<std::size_t>{0, 2, 5});
}
