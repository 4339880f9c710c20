#pragma once

#include "fedgen/classifier.hpp"
#include "fedgen/dataset.hpp"

#include <cstdint>
#include <vector>

namespace fedgen {

/// Correct predictions out of a test split. Metrics are evaluated exactly on
/// these counts and rounded to double once at the end.
struct HitCount {
    std::int64_t hits = 0;
    std::int64_t total = 0;

    double value() const { return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0; }
    bool operator==(const HitCount&) const = default;
};

/// Result of evaluating after training step l: accuracy on each task t <= l
/// and pooled over all their test samples.
struct StepAccuracy {
    std::vector<HitCount> per_task;
    HitCount observed;
};

/// Row l holds the accuracies after step l (0-based), so rows grow by one entry per step.
struct AccuracyRecord {
    int num_tasks = 0;
    std::vector<StepAccuracy> steps;

    bool complete() const { return num_tasks > 0 && static_cast<int>(steps.size()) == num_tasks; }
    /// Acc^task_step, task <= step.
    double acc(int task, int step) const;
    void add(StepAccuracy row);
};

/// `data` labels must already be output slots. Predictions are argmax over the full head.
StepAccuracy evaluate_step(const Classifier& model, const Dataset& data, const TaskSchedule& schedule, int step);

/// Mean over steps of the pooled accuracy.
double average_accuracy(const AccuracyRecord& record);
/// Mean over tasks 1..T-1 of (best accuracy on the task) - (final accuracy on it).
double average_forgetting(const AccuracyRecord& record);
/// Per-task forgetting values F^t for t = 0..T-2.
std::vector<double> forgetting_per_task(const AccuracyRecord& record);

} // namespace fedgen
