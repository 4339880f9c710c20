#include "fedgen/balanced_sampler.hpp"

#include "fedgen/error.hpp"

#include <algorithm>
#include <map>

namespace fedgen {

EpochBatchPlan plan_epoch(const std::vector<std::vector<std::size_t>>& shard, int batch_size, std::uint64_t seed,
                          const std::vector<int>& class_ids) {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!class_ids.empty() && class_ids.size() != shard.size()) throw ConfigError("class_ids must match shard size");

    EpochBatchPlan plan;
    int nonempty = 0;
    for (const auto& cls : shard) {
        if (cls.empty()) continue;
        ++nonempty;
        plan.majority_size = std::max(plan.majority_size, static_cast<int>(cls.size()));
    }
    if (nonempty == 0) throw ConfigError("plan_epoch: every class is empty");
    plan.per_class_quota = (batch_size + nonempty - 1) / nonempty;
    plan.num_batches = (plan.majority_size + plan.per_class_quota - 1) / plan.per_class_quota;

    Rng rng(seed);
    for (std::size_t j = 0; j < shard.size(); ++j) {
        const auto& cls = shard[j];
        if (cls.empty()) continue;
        const int id = class_ids.empty() ? static_cast<int>(j) : class_ids[j];
        const std::size_t cycles = (static_cast<std::size_t>(plan.majority_size) + cls.size() - 1) / cls.size();
        std::vector<std::size_t> stream;
        stream.reserve(cycles * cls.size());
        for (std::size_t l = 0; l < cycles; ++l) {
            auto copy = cls;
            std::shuffle(copy.begin(), copy.end(), rng);
            stream.insert(stream.end(), copy.begin(), copy.end());
        }
        plan.streams.emplace_back(id, std::move(stream));
    }

    const auto quota = static_cast<std::size_t>(plan.per_class_quota);
    plan.batches.resize(static_cast<std::size_t>(plan.num_batches));
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
        auto& batch = plan.batches[b];
        for (const auto& [id, stream] : plan.streams) {
            const std::size_t lo = std::min(b * quota, stream.size());
            const std::size_t hi = std::min((b + 1) * quota, stream.size());
            for (std::size_t k = lo; k < hi; ++k) batch.push_back({id, stream[k]});
        }
    }
    return plan;
}

std::pair<std::vector<int>, std::vector<std::vector<std::size_t>>> group_by_class(const Dataset& data,
                                                                                 const std::vector<std::size_t>& shard) {
    std::map<int, std::vector<std::size_t>> grouped;
    for (auto i : shard) {
        if (i >= data.size()) throw IntegrityError("shard index out of range");
        grouped[data.examples[i].label].push_back(i);
    }
    std::pair<std::vector<int>, std::vector<std::vector<std::size_t>>> out;
    for (auto& [c, idx] : grouped) {
        out.first.push_back(c);
        out.second.push_back(std::move(idx));
    }
    return out;
}

nn::Act gather_images(const Dataset& data, const std::vector<std::size_t>& indices) {
    const int hw = data.shape.pixels();
    nn::Act x(data.shape.channels, static_cast<Eigen::Index>(indices.size()) * hw);
    for (std::size_t s = 0; s < indices.size(); ++s) {
        if (indices[s] >= data.size()) throw IntegrityError("sample index out of range");
        const auto& img = data.examples[indices[s]].image;
        for (int c = 0; c < data.shape.channels; ++c)
            std::copy_n(img.data() + static_cast<std::size_t>(c) * hw, hw, x.row(c).data() + s * hw);
    }
    return x;
}

std::vector<nn::Act> iterate(const EpochBatchPlan& plan, const Dataset& data) {
    std::vector<nn::Act> out;
    out.reserve(plan.batches.size());
    for (const auto& batch : plan.batches) {
        std::vector<std::size_t> idx;
        idx.reserve(batch.size());
        for (const auto& ref : batch) idx.push_back(ref.index);
        out.push_back(gather_images(data, idx));
    }
    return out;
}

} // namespace fedgen
