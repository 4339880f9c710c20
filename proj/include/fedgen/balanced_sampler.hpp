#pragma once

#include "fedgen/dataset.hpp"
#include "fedgen/nn.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace fedgen {

struct SampleRef {
    int class_id = 0;
    std::size_t index = 0;
    bool operator==(const SampleRef&) const = default;
};

/// One epoch of class-balanced batches. Every non-empty class contributes
/// `per_class_quota` samples to each batch; only the final batch may fall short.
struct EpochBatchPlan {
    std::vector<std::vector<SampleRef>> batches;
    int per_class_quota = 0; ///< ceil(B / k), k = number of non-empty classes
    int num_batches = 0;     ///< ceil(majority_size / per_class_quota)
    int majority_size = 0;   ///< largest per-class sample count
    /// Per-class streams the batches were sliced from, in class order.
    std::vector<std::pair<int, std::vector<std::size_t>>> streams;
};

/// `shard` holds, per class, the dataset indices available on the client;
/// classes are identified by their position in the outer vector unless
/// `class_ids` is given. Empty classes are skipped.
EpochBatchPlan plan_epoch(const std::vector<std::vector<std::size_t>>& shard, int batch_size, std::uint64_t seed,
                          const std::vector<int>& class_ids = {});

/// Groups a flat shard (dataset indices) by label in ascending class order.
std::pair<std::vector<int>, std::vector<std::vector<std::size_t>>> group_by_class(const Dataset& data,
                                                                                 const std::vector<std::size_t>& shard);

/// Image batches in plan order, labels dropped.
std::vector<nn::Act> iterate(const EpochBatchPlan& plan, const Dataset& data);

/// Assembles the images at `indices` into a (channels, n*H*W) activation.
nn::Act gather_images(const Dataset& data, const std::vector<std::size_t>& indices);

} // namespace fedgen
