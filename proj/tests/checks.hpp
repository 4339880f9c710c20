#pragma once

// Property checks shared by the unit tests and the acceptance binary. Each
// returns an empty string on success, otherwise a description of the first violation.

#include "fedgen/balanced_sampler.hpp"
#include "fedgen/evaluation.hpp"
#include "oracles.hpp"

#include <map>
#include <set>
#include <string>

namespace checks {

inline std::string sampler_violation(const std::vector<std::vector<std::size_t>>& shard, int B, std::uint64_t seed,
                                     const fedgen::EpochBatchPlan& plan) {
    const auto ref = oracle::algorithm1(shard, B, seed);
    if (plan.per_class_quota != ref.quota) return "B_C differs";
    if (plan.majority_size != ref.majority) return "N_C differs";
    if (plan.num_batches != ref.batches || plan.batches.size() != ref.out.size()) return "E_B differs";
    for (std::size_t b = 0; b < ref.out.size(); ++b) {
        if (plan.batches[b].size() != ref.out[b].size()) return "batch " + std::to_string(b) + " size differs";
        for (std::size_t q = 0; q < ref.out[b].size(); ++q)
            if (plan.batches[b][q].class_id != ref.out[b][q].first || plan.batches[b][q].index != ref.out[b][q].second)
                return "batch " + std::to_string(b) + " entry differs";
    }

    // Invariants, checked without reference to the generator.
    std::map<int, const std::vector<std::size_t>*> cls;
    for (std::size_t j = 0; j < shard.size(); ++j)
        if (!shard[j].empty()) cls[static_cast<int>(j)] = &shard[j];
    const auto last = plan.batches.size() - 1;
    std::map<int, std::map<std::size_t, int>> uses;
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
        std::map<int, int> per;
        for (const auto& r : plan.batches[b]) {
            if (!cls.count(r.class_id)) return "sample from an empty or unknown class";
            ++per[r.class_id];
            ++uses[r.class_id][r.index];
        }
        for (const auto& [c, list] : cls) {
            const int got = per.count(c) ? per[c] : 0;
            if (b != last && got != plan.per_class_quota) return "unbalanced non-final batch";
            if (got > plan.per_class_quota) return "quota exceeded";
        }
    }
    for (const auto& [c, list] : cls) {
        const int n = static_cast<int>(list->size());
        const int bound = (plan.majority_size + n - 1) / n;
        std::set<std::size_t> members(list->begin(), list->end());
        for (const auto& [idx, count] : uses[c]) {
            if (!members.count(idx)) return "index not in its class";
            if (count > bound) return "minority bound violated";
        }
        if (n == plan.majority_size) {
            if (uses[c].size() != static_cast<std::size_t>(n)) return "majority class not fully covered";
            for (const auto& [idx, count] : uses[c])
                if (count != 1) return "majority sample repeated";
        }
    }
    for (const auto& [id, stream] : plan.streams) {
        const auto& list = *cls.at(id);
        for (std::size_t lo = 0; lo < stream.size(); lo += list.size()) {
            std::multiset<std::size_t> a(stream.begin() + static_cast<std::ptrdiff_t>(lo),
                                         stream.begin() + static_cast<std::ptrdiff_t>(lo + list.size()));
            if (a != std::multiset<std::size_t>(list.begin(), list.end())) return "stream window is not a permutation";
        }
    }
    return {};
}

inline std::vector<std::vector<std::size_t>> random_shard(std::mt19937_64& rng, int& B) {
    std::uniform_int_distribution<int> nc(1, 6), sz(1, 40), bs(2, 12);
    std::vector<std::vector<std::size_t>> shard(static_cast<std::size_t>(nc(rng)));
    std::size_t next = 0;
    for (auto& c : shard) {
        c.resize(static_cast<std::size_t>(sz(rng)));
        for (auto& v : c) v = next++;
    }
    B = bs(rng);
    return shard;
}

/// Accuracy matrix given as hit counts: per_task[l][t] for t <= l, observed[l].
struct MetricFixture {
    const char* name;
    std::vector<std::vector<std::pair<int, int>>> per_task;
    std::vector<std::pair<int, int>> observed;
    std::pair<long, long> acc;   ///< exact expected Acc
    std::pair<long, long> f;     ///< exact expected F; den 0 when T = 1
};

inline fedgen::AccuracyRecord to_record(const MetricFixture& m) {
    fedgen::AccuracyRecord r;
    r.num_tasks = static_cast<int>(m.observed.size());
    for (std::size_t l = 0; l < m.observed.size(); ++l) {
        fedgen::StepAccuracy row;
        for (auto [h, n] : m.per_task[l]) row.per_task.push_back({h, n});
        row.observed = {m.observed[l].first, m.observed[l].second};
        r.add(row);
    }
    return r;
}

/// Hand-evaluated fixtures. Values in comments are the exact rationals.
inline std::vector<MetricFixture> metric_fixtures() {
    return {
        // Acc = (9/10 + 7/10) / 2 = 4/5; F = 9/10 - 6/10 = 3/10
        {"two tasks", {{{9, 10}}, {{6, 10}, {8, 10}}}, {{9, 10}, {7, 10}}, {4, 5}, {3, 10}},
        // every entry 3/4: Acc = 3/4, F = 0
        {"constant", {{{3, 4}}, {{6, 8}, {3, 4}}, {{9, 12}, {3, 4}, {15, 20}}}, {{3, 4}, {6, 8}, {9, 12}}, {3, 4}, {0, 1}},
        // single task: Acc = Acc^1 = 2/3, F undefined
        {"single task", {{{2, 3}}}, {{2, 3}}, {2, 3}, {0, 0}},
        // F^1 = 3/4 - 1/4 = 1/2, F^2 = 2/3 - 1/3 = 1/3, F = 5/12; Acc = (1/2 + 5/7 + 3/10) / 3 = 53/105
        {"mixed denominators",
         {{{1, 2}}, {{3, 4}, {2, 3}}, {{1, 4}, {1, 3}, {7, 8}}},
         {{1, 2}, {5, 7}, {3, 10}},
         {53, 105},
         {5, 12}},
        // accuracy never drops: F = 0; Acc = (1/5 + 2/5 + 3/5 + 4/5) / 4 = 1/2
        {"monotone",
         {{{1, 5}}, {{2, 5}, {1, 5}}, {{3, 5}, {2, 5}, {1, 5}}, {{4, 5}, {3, 5}, {2, 5}, {1, 5}}},
         {{1, 5}, {2, 5}, {3, 5}, {4, 5}},
         {1, 2},
         {0, 1}},
    };
}

/// Random complete record with T in [2, 6] and random denominators.
inline fedgen::AccuracyRecord random_record(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> td(2, 6), nd(1, 50);
    fedgen::AccuracyRecord r;
    r.num_tasks = td(rng);
    for (int l = 0; l < r.num_tasks; ++l) {
        fedgen::StepAccuracy row;
        for (int t = 0; t <= l; ++t) {
            const int n = nd(rng);
            row.per_task.push_back({std::uniform_int_distribution<int>(0, n)(rng), n});
            row.observed.hits += row.per_task.back().hits;
            row.observed.total += n;
        }
        r.add(row);
    }
    return r;
}

} // namespace checks
