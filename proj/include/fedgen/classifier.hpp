#pragma once

#include "fedgen/nn.hpp"
#include "fedgen/params.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fedgen {

/// Three conv blocks (conv3x3 + ReLU, average pooling after the first two),
/// global average pooling to a `feature_dim` representation, then a linear head.
struct ClassifierConfig {
    ImageShape input{1, 16, 16};
    int conv1 = 8;
    int conv2 = 16;
    int feature_dim = 64;
};

struct Prediction {
    std::vector<Real> logits;
    std::vector<Real> probabilities;
    std::vector<Real> features;
};

/// Batch outputs; column s belongs to sample s.
struct Predictions {
    nn::Act logits;
    nn::Act probabilities;
    nn::Act features;

    int size() const { return static_cast<int>(logits.cols()); }
    Prediction at(int s) const;
};

/// Column-wise softmax.
nn::Act softmax(const nn::Act& logits, Real temperature = 1);

class Classifier {
public:
    Classifier() = default;
    Classifier(const ClassifierConfig& config, int num_classes, std::uint64_t seed);
    /// Rebuilds a model from a parameter set (e.g. a checkpoint); architecture is inferred from shapes.
    static Classifier from_params(ParamSet params, ImageShape input);

    int current_classes() const { return static_cast<int>(params_.at("head.weight").rows()); }
    int feature_dim() const { return config_.feature_dim; }
    const ClassifierConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    /// `images` is a (channels, n*H*W) activation of n images.
    Predictions forward(const nn::Act& images) const;
    /// Convenience overload for flat images.
    Predictions forward(const std::vector<std::vector<Real>>& images) const;

    struct Trace {
        int batch = 0;
        nn::Act cols1, a1, cols2, a2, cols3, a3;
        nn::Act features, logits;
    };
    Trace forward_trace(const nn::Act& images) const;
    /// Accumulates parameter gradients into `grads` given dL/dlogits and an optional extra dL/dfeatures.
    void backward(const Trace& trace, const nn::Act& grad_logits, const nn::Act* grad_features, ParamSet& grads) const;

    /// Grows the head to `new_total_classes` rows; existing rows are kept bit-for-bit.
    void expand_head(int new_total_classes, std::uint64_t seed);
    /// Copy whose head keeps only the first `classes` rows.
    Classifier restricted(int classes) const;

private:
    int batch_of(const nn::Act& images) const;

    ClassifierConfig config_;
    ParamSet params_;
};

/// Weighted parameter average. Weights must be non-negative with positive sum.
Classifier aggregate(std::span<const Classifier> models, std::span<const double> weights);

} // namespace fedgen
