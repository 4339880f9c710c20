#pragma once

#include "fedgen/classifier.hpp"
#include "fedgen/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedgen {

enum class KdDirection {
    student_to_teacher, ///< KL(p_student || p_teacher)
    teacher_to_student, ///< KL(p_teacher || p_student), the usual distillation order
};

struct LossConfig {
    double alpha = 3;          ///< KD weight
    double gamma = 2;          ///< feature-distance weight
    double kd_temperature = 1;
    KdDirection kd_direction = KdDirection::student_to_teacher;
    double ce_weight = 1;      ///< 1 in training; tests zero it to isolate the distillation terms
    nn::SgdConfig sgd;
    int local_epochs = 5;
    int batch_size = 128;
};

struct LossTerms {
    double ce = 0;
    double kd = 0;
    double fd = 0;
    double total = 0;
};

struct LossReport {
    std::vector<LossTerms> steps;  ///< one entry per mini-batch
    std::vector<LossTerms> epochs; ///< batch-averaged per epoch
    bool skipped = false;          ///< no data: the model came back unchanged
    std::vector<std::string> warnings;
};

// Batch losses. Columns are samples; gradients are w.r.t. the logits/features
// and already divided by the batch size.

/// Mean cross-entropy of softmax(logits) against integer labels.
double ce_loss(const nn::Act& logits, const std::vector<int>& labels, nn::Act* grad = nullptr);

/// Mean KL divergence between temperature-softened distributions, over the
/// teacher's rows only. The gradient has the student's row count; extra rows get 0.
double kd_loss(const nn::Act& student_logits, const nn::Act& teacher_logits, double temperature,
               KdDirection direction, nn::Act* grad = nullptr);

/// Mean squared L2 distance between feature columns.
double fd_loss(const nn::Act& student_features, const nn::Act& teacher_features, nn::Act* grad = nullptr);

/// The full local objective on one batch. Accumulates parameter gradients into `grads` when given.
LossTerms objective(const Classifier& student, const Classifier* teacher, const nn::Act& images,
                    const std::vector<int>& labels, const LossConfig& config, ParamSet* grads);

/// Mini-batches over `count` items: one fresh shuffle per epoch, last batch may be short.
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t count, int batch_size, std::uint64_t seed);

/// Local SGD over shard ∪ replay. Labels in both datasets are output slots.
/// Without a teacher only the cross-entropy term is used.
LossReport client_update(Classifier& model, const Dataset& data, const std::vector<std::size_t>& shard,
                         const Dataset* replay, const Classifier* teacher, const LossConfig& config,
                         std::uint64_t seed);

} // namespace fedgen
