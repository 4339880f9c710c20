#include "doctest.h"

#include "checks.hpp"
#include "fedgen/dataset.hpp"
#include "fedgen/error.hpp"
#include "fedgen/evaluation.hpp"
#include "fedgen/federation.hpp"
#include "fixtures.hpp"

using namespace fedgen;

TEST_CASE("metric fixtures are reproduced exactly") {
    for (const auto& m : checks::metric_fixtures()) {
        INFO(m.name);
        const auto r = checks::to_record(m);
        CHECK(average_accuracy(r) == static_cast<double>(m.acc.first) / static_cast<double>(m.acc.second));
        if (m.f.second == 0) {
            CHECK_THROWS_AS(average_forgetting(r), ConfigError);
        } else {
            CHECK(average_forgetting(r) == static_cast<double>(m.f.first) / static_cast<double>(m.f.second));
        }
    }
    const auto two = checks::to_record(checks::metric_fixtures()[0]);
    CHECK(average_accuracy(two) == 0.8);
    CHECK(average_forgetting(two) == 0.3);
    CHECK(two.acc(0, 1) == 0.6);
    CHECK(forgetting_per_task(checks::to_record(checks::metric_fixtures()[3])) == std::vector<double>{0.5, 1.0 / 3});
}

TEST_CASE("forgetting bounds over random records") {
    std::mt19937_64 rng(17);
    for (int k = 0; k < 1000; ++k) {
        const auto r = checks::random_record(rng);
        const double f = average_forgetting(r);
        CHECK(f >= 0);
        const auto per = forgetting_per_task(r);
        for (int t = 0; t + 1 < r.num_tasks; ++t) {
            double best = 0;
            for (int l = t; l < r.num_tasks; ++l) best = std::max(best, r.acc(t, l));
            CHECK(per[t] >= 0);
            CHECK(per[t] <= best + 1e-15);
        }
        const double a = average_accuracy(r);
        CHECK(a >= 0);
        CHECK(a <= 1);
    }
}

TEST_CASE("incomplete and malformed records are rejected") {
    AccuracyRecord r;
    r.num_tasks = 3;
    r.add({{{1, 2}}, {1, 2}});
    CHECK_THROWS_AS(average_accuracy(r), ConfigError);
    CHECK_THROWS_AS(r.add({{{1, 2}}, {1, 2}}), ConfigError);
    CHECK_THROWS_AS(r.acc(1, 0), ConfigError);
}

TEST_CASE("evaluate_step matches a brute-force recount") {
    // 5 classes x 50, 20% held out: a 50-sample test pool.
    const Dataset raw = synth_dataset(5, 50, {1, 4, 4}, 8);
    PartitionConfig pc;
    pc.num_clients = 2;
    const TaskSchedule s = build_schedule(raw, 2, pc, 4);
    const Dataset data = to_slot_labels(raw, s);
    const Classifier m(fixtures::tiny_classifier(), 5, 6);
    const oracle::Params P(m.params());

    const auto row = evaluate_step(m, data, s, 1);
    REQUIRE(row.per_task.size() == 2);
    HitCount pooled;
    for (int t = 0; t < 2; ++t) {
        std::int64_t hits = 0;
        for (auto i : s.test_split[t]) {
            oracle::Tensor x(1, 4, 4);
            for (int p = 0; p < 16; ++p) x.v[p] = data.examples[i].image[p];
            const auto out = oracle::classifier_forward(P, x);
            hits += std::max_element(out.logits.begin(), out.logits.end()) - out.logits.begin() == data.examples[i].label;
        }
        CHECK(row.per_task[t].hits == hits);
        CHECK(row.per_task[t].total == static_cast<std::int64_t>(s.test_split[t].size()));
        pooled.hits += hits;
        pooled.total += row.per_task[t].total;
    }
    CHECK(row.observed == pooled);
    CHECK(pooled.total == 50);

    CHECK_THROWS_AS(evaluate_step(Classifier(fixtures::tiny_classifier(), 2, 1), data, s, 1), ConfigError);
    CHECK_THROWS_AS(evaluate_step(m, data, s, 2), ConfigError);
}

TEST_CASE("constant predictor scores the base rate") {
    const Dataset raw = synth_dataset(4, 25, {1, 4, 4}, 2);
    PartitionConfig pc;
    const TaskSchedule s = build_schedule(raw, 2, pc, 1);
    const Dataset data = to_slot_labels(raw, s);
    Classifier m(fixtures::tiny_classifier(), 4, 3);
    m.params().at("head.weight").setZero();
    m.params().at("head.bias") << 0, 0, 5, 0;
    const auto row = evaluate_step(m, data, s, 1);
    std::int64_t twos = 0, total = 0;
    for (int t = 0; t < 2; ++t)
        for (auto i : s.test_split[t]) {
            twos += data.examples[i].label == 2;
            ++total;
        }
    CHECK(row.observed.hits == twos);
    CHECK(row.observed.total == total);
    CHECK(row.per_task[0].hits == 0);
}
