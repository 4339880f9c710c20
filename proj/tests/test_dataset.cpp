#include "doctest.h"

#include "fedgen/classifier.hpp"
#include "fedgen/dataset.hpp"
#include "fedgen/error.hpp"
#include "fedgen/evaluation.hpp"
#include "fedgen/federation.hpp"
#include "fedgen/local_training.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace fedgen;

namespace {

Dataset tiny_bundle_fixture() {
    Dataset d;
    d.shape = {1, 8, 8};
    d.num_classes = 2;
    for (int i = 0; i < 4; ++i) {
        LabeledExample ex;
        ex.label = i % 2;
        for (int p = 0; p < 64; ++p) ex.image.push_back(static_cast<Real>((i * 64 + p) % 256) / 255);
        d.examples.push_back(ex);
    }
    return d;
}

void put_be32(std::string& s, std::uint32_t v) {
    for (int k = 3; k >= 0; --k) s.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

} // namespace

TEST_CASE("bundle round trip is exact") {
    const Dataset d = tiny_bundle_fixture();
    const std::string bytes = encode_bundle(d);
    CHECK(bytes.size() == 4 + 6 * 4 + 4 * 64 + 4 * 2);
    CHECK(bytes.substr(0, 4) == "FCIL");
    const Dataset back = decode_bundle(bytes);
    REQUIRE(back.size() == 4);
    CHECK(back.shape == ImageShape{1, 8, 8});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back.examples[i].label == d.examples[i].label);
        CHECK(back.examples[i].image == d.examples[i].image);
    }
    CHECK(encode_bundle(back) == bytes);

    const auto path = std::filesystem::temp_directory_path() / "fedgen_bundle_test.fcil";
    write_bundle(d, path);
    CHECK(ingest_bundle(path).size() == 4);
    std::filesystem::remove(path);
}

TEST_CASE("empty bundle is valid") {
    Dataset d;
    d.shape = {1, 4, 4};
    d.num_classes = 3;
    const Dataset back = decode_bundle(encode_bundle(d));
    CHECK(back.empty());
    CHECK(back.num_classes == 3);
}

TEST_CASE("bundle errors") {
    std::string bytes = encode_bundle(tiny_bundle_fixture());
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_bundle(bad), FormatError);
    CHECK_THROWS_AS(decode_bundle(bytes.substr(0, 10)), FormatError);
    CHECK_THROWS_AS(decode_bundle(bytes.substr(0, bytes.size() - 1)), CorruptionError);
    CHECK_THROWS_AS(ingest_bundle("/nonexistent/fedgen.fcil"), Error);
}

TEST_CASE("IDX pairs are read big-endian") {
    std::string img, lab;
    put_be32(img, 0x803);
    put_be32(img, 3);
    put_be32(img, 2);
    put_be32(img, 2);
    for (int i = 0; i < 12; ++i) img.push_back(static_cast<char>(i * 20));
    put_be32(lab, 0x801);
    put_be32(lab, 3);
    lab += std::string{1, 2, 1};
    const auto dir = std::filesystem::temp_directory_path();
    std::ofstream(dir / "fg_img.idx", std::ios::binary) << img;
    std::ofstream(dir / "fg_lab.idx", std::ios::binary) << lab;
    Dataset d = read_idx(dir / "fg_img.idx", dir / "fg_lab.idx", 1);
    REQUIRE(d.size() == 3);
    CHECK(d.examples[1].label == 1);
    CHECK(d.examples[0].label == 0);
    CHECK(d.examples[2].image[3] == doctest::Approx(220.0 / 255));
    CHECK(d.num_classes == 2);

    std::string lab2;
    put_be32(lab2, 0x801);
    put_be32(lab2, 2);
    lab2 += std::string{1, 1};
    std::ofstream(dir / "fg_lab2.idx", std::ios::binary) << lab2;
    CHECK_THROWS_AS(read_idx(dir / "fg_img.idx", dir / "fg_lab2.idx"), FormatError);
}

TEST_CASE("synthetic data: determinism and counts") {
    const Dataset a = synth_dataset(2, 10, {1, 16, 16}, 7);
    const Dataset b = synth_dataset(2, 10, {1, 16, 16}, 7);
    CHECK(encode_bundle(a) == encode_bundle(b));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.examples[i].image == b.examples[i].image);

    const Dataset c = synth_dataset(4, 50, {1, 16, 16}, 1);
    CHECK(c.size() == 200);
    for (const auto& [cls, n] : c.class_histogram()) CHECK(n == 50);
    for (const auto& ex : c.examples)
        for (Real v : ex.image) {
            CHECK(v >= 0);
            CHECK(v <= 1);
        }
}

TEST_CASE("synthetic classes are learnable within a task") {
    const Dataset raw = synth_dataset(4, 50, {1, 16, 16}, 1);
    PartitionConfig pc;
    pc.iid = true;
    pc.num_clients = 1;
    pc.seed = 2;
    const TaskSchedule s = build_schedule(raw, 1, pc, 3);
    const Dataset data = to_slot_labels(raw, s);
    Classifier m(ClassifierConfig{}, 4, 4);
    LossConfig lc;
    lc.local_epochs = 30;
    lc.batch_size = 16;
    client_update(m, data, s.shard(0, 0), nullptr, nullptr, lc, 5);
    CHECK(evaluate_step(m, data, s, 0).observed.value() >= 0.9);
}

TEST_CASE("schedule: class groups") {
    const Dataset d = synth_dataset(10, 10, {1, 8, 8}, 1);
    PartitionConfig pc;
    pc.num_clients = 3;
    const TaskSchedule s = build_schedule(d, 5, pc, 9);
    REQUIRE(s.class_groups.size() == 5);
    std::set<int> all;
    for (const auto& g : s.class_groups) {
        CHECK(g.size() == 2);
        all.insert(g.begin(), g.end());
    }
    CHECK(all.size() == 10);
    CHECK(s.classes_through(2) == 6);

    const TaskSchedule u = build_schedule(synth_dataset(7, 5, {1, 8, 8}, 1), 3, pc, 9);
    CHECK(u.class_groups[0].size() == 3);
    CHECK(u.class_groups[1].size() == 2);
    CHECK(u.class_groups[2].size() == 2);

    CHECK_THROWS_AS(build_schedule(d, 11, pc, 1), ConfigError);
    pc.beta = 0;
    CHECK_THROWS_AS(build_schedule(d, 5, pc, 1), ConfigError);
}

TEST_CASE("schedule: huge beta splits each class evenly") {
    const Dataset d = synth_dataset(4, 101, {1, 8, 8}, 3);
    PartitionConfig pc;
    pc.beta = 1e6;
    pc.num_clients = 2;
    pc.seed = 5;
    const TaskSchedule s = build_schedule(d, 2, pc, 1);
    for (int t = 0; t < 2; ++t)
        for (int c : s.class_groups[t]) {
            std::size_t n0 = 0, n1 = 0, test = 0;
            for (auto i : s.shard(0, t)) n0 += d.examples[i].label == c;
            for (auto i : s.shard(1, t)) n1 += d.examples[i].label == c;
            for (auto i : s.test_split[t]) test += d.examples[i].label == c;
            const double half = (101.0 - static_cast<double>(test)) / 2;
            CHECK(std::abs(static_cast<double>(n0) - half) <= 1);
            CHECK(std::abs(static_cast<double>(n1) - half) <= 1);
        }
}

TEST_CASE("schedule invariants hold over many seeds") {
    const Dataset d = synth_dataset(10, 23, {1, 8, 8}, 4);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        PartitionConfig pc;
        pc.beta = 0.1 + 0.2 * static_cast<double>(seed % 5);
        pc.iid = seed % 7 == 3;
        pc.num_clients = 1 + static_cast<int>(seed % 6);
        pc.seed = seed;
        const int T = 1 + static_cast<int>(seed % 5);
        const TaskSchedule s = build_schedule(d, T, pc, seed * 31);

        std::vector<int> seen(d.size(), 0);
        std::vector<int> task_of(static_cast<std::size_t>(d.num_classes), -1);
        for (int t = 0; t < T; ++t)
            for (int c : s.class_groups[t]) task_of[c] = t;
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < pc.num_clients; ++i)
                for (auto k : s.shard(i, t)) {
                    ++seen[k];
                    CHECK(task_of[d.examples[k].label] == t); // task purity
                }
            for (auto k : s.test_split[t]) {
                CHECK(seen[k] == 0);
                seen[k] += 100; // marks test membership
                CHECK(task_of[d.examples[k].label] == t);
            }
        }
        // Every index is in exactly one training shard or in the test split.
        for (int v : seen) CHECK((v == 1 || v == 100));
        // Conservation per class.
        for (int c = 0; c < d.num_classes; ++c) {
            std::size_t train = 0, test = 0;
            for (std::size_t k = 0; k < d.size(); ++k)
                if (d.examples[k].label == c) (seen[k] == 1 ? train : test)++;
            CHECK(train + test == 23);
        }
        const TaskSchedule again = build_schedule(d, T, pc, seed * 31);
        CHECK(again.shards == s.shards);
        CHECK(again.test_split == s.test_split);
        CHECK(again.class_groups == s.class_groups);
    }
}

TEST_CASE("schedule determinism at paper settings") {
    const Dataset d = synth_dataset(10, 40, {1, 8, 8}, 4);
    PartitionConfig pc;
    pc.beta = 0.5;
    pc.num_clients = 10;
    pc.seed = 77;
    CHECK(build_schedule(d, 5, pc, 3).shards == build_schedule(d, 5, pc, 3).shards);
}
