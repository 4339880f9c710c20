#pragma once

#include "fedgen/classifier.hpp"
#include "fedgen/dataset.hpp"
#include "fedgen/diffusion.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fedgen {

enum class FilterDirection { high, low };

/// Synthetic replay: generated images, pseudo-labels (output slots of the
/// labelling model), their prediction entropies and the retention mask.
struct ReplayBatch {
    ImageShape shape;
    nn::Act images; ///< (channels, n*H*W)
    std::vector<int> pseudo_labels;
    std::vector<double> entropies; ///< nats
    std::vector<std::uint8_t> retained;

    int generated() const { return static_cast<int>(pseudo_labels.size()); }
    int retained_count() const;
};

struct ReplayConfig {
    int samples = 2000;    ///< n_s, the number of samples wanted after filtering
    double lambda = 0.9;   ///< fraction kept by the entropy filter
    bool filter = true;    ///< off: generate n_s and keep them all
    FilterDirection direction = FilterDirection::high;
};

/// -sum p ln p with 0 ln 0 = 0. Throws if the sum is off 1 by more than 1e-6.
double prediction_entropy(std::span<const double> probabilities);

/// ceil(n_s / lambda): how many images to draw so that about n_s survive.
int generation_count(int samples, double lambda);
/// round(lambda * count), halves rounded up.
int retention_count(int count, double lambda);

/// Keeps the retention_count(n, lambda) samples ranked first by entropy
/// (descending for `high`, ascending for `low`); ties go to the lower index.
std::vector<std::uint8_t> entropy_filter_mask(const std::vector<double>& entropies, double lambda,
                                              FilterDirection direction);

/// Labels each column of `probabilities` (classes x n) by argmax and filters by entropy.
ReplayBatch label_and_filter(nn::Act images, ImageShape shape, const nn::ActD& probabilities, double lambda,
                             FilterDirection direction);

/// Draws from the frozen diffusion model, pseudo-labels with the frozen
/// global model and applies the entropy filter.
ReplayBatch build_replay(const DiffusionModel& diffusion, const Classifier& global, const ReplayConfig& config,
                         std::uint64_t seed);

/// Retained samples as (image, pseudo-label) pairs.
Dataset replay_as_dataset(const ReplayBatch& batch, int num_classes);

/// Writes the generated images as a bundle plus an audit CSV
/// (index,pseudo_label,entropy,retained).
void dump_replay(const ReplayBatch& batch, int num_classes, const std::filesystem::path& bundle,
                 const std::filesystem::path& csv);

} // namespace fedgen
