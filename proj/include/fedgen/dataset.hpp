#pragma once

#include "fedgen/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace fedgen {

struct LabeledExample {
    std::vector<Real> image; ///< channels * height * width, values in [0, 1]
    int label = 0;
};

struct Dataset {
    ImageShape shape;
    int num_classes = 0;
    std::vector<LabeledExample> examples;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    /// Dataset indices grouped by label, each list ascending.
    std::vector<std::vector<std::size_t>> indices_by_class() const;
    std::map<int, std::size_t> class_histogram() const;
};

// Bundle layout (little-endian): "FCIL", u32 version (=1), count, channels,
// height, width, num_classes; count*C*H*W u8 pixels; count u16 labels.
std::string encode_bundle(const Dataset& data);
Dataset decode_bundle(std::string_view bytes);
void write_bundle(const Dataset& data, const std::filesystem::path& path);
Dataset ingest_bundle(const std::filesystem::path& path);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// `label_offset` is subtracted from every label (EMNIST-letters stores 1..26).
Dataset read_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int label_offset = 0);

/// Procedural, visually separable classes: each class is a distinct shape
/// (bars, diagonals, rings, crosses, ...) with random jitter, contrast and pixel noise.
Dataset synth_dataset(int num_classes, int per_class, ImageShape shape, std::uint64_t seed);

struct PartitionConfig {
    double beta = 0.5;
    bool iid = false;
    int num_clients = 10;
    std::uint64_t seed = 0;
    double test_fraction = 0.2;
};

/// Class-incremental split plus per-client shards. Tasks and clients are 0-based.
struct TaskSchedule {
    int num_tasks = 0;
    int num_clients = 0;
    std::vector<std::vector<int>> class_groups;                 ///< [task] -> class ids
    std::vector<std::vector<std::vector<std::size_t>>> shards;  ///< [task][client] -> dataset indices
    std::vector<std::vector<std::size_t>> test_split;           ///< [task] -> dataset indices
    /// Output slot of each class id: classes are numbered in the order tasks introduce them.
    std::vector<int> class_slot;

    const std::vector<std::size_t>& shard(int client, int task) const { return shards.at(task).at(client); }
    /// Total number of classes introduced by tasks 0..task inclusive.
    int classes_through(int task) const;
};

TaskSchedule build_schedule(const Dataset& data, int num_tasks, const PartitionConfig& partition,
                            std::uint64_t class_order_seed);

} // namespace fedgen
