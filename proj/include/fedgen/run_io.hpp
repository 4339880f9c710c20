#pragma once

#include "fedgen/config.hpp"
#include "fedgen/evaluation.hpp"
#include "fedgen/federation.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedgen {

struct PreparedData {
    Dataset raw;
    TaskSchedule schedule;
    Dataset slots; ///< `raw` relabelled to output slots
};

/// Loads the bundle or synthesises data, then builds the task schedule.
PreparedData prepare_data(const RunConfig& config);

/// Runs the experiment and writes config.snapshot, rounds.jsonl, metrics.csv,
/// summary.json, checkpoints/ and (if enabled) plots/ under `dir`. On failure
/// the partial artifacts stay and error.json records the message.
RunResult execute_run(const RunConfig& config, const std::filesystem::path& dir);

// Rows: step,scope,hits,total,accuracy with 1-based step and scope = task
// number or "all" for the pooled accuracy over observed tasks.
std::string metrics_csv(const AccuracyRecord& record);
/// Accepts hit counts or, when those are blank, exact decimal accuracies.
AccuracyRecord parse_metrics_csv(std::string_view text);

std::string summary_json(const RunConfig& config, const RunResult& result);
std::string round_json(const RoundRecord& round);

struct Report {
    double acc = 0;
    std::optional<double> forgetting; ///< absent for single-task runs
    bool summary_present = false;
    bool matches_summary = false;
};

/// Recomputes Acc and F from metrics.csv and compares with summary.json.
Report report_run(const std::filesystem::path& dir, bool render_plots);

/// Accuracy-after-each-task curves (pooled plus one line per task).
std::string accuracy_svg(const AccuracyRecord& record, const std::string& title);
/// Grouped bars of Acc and F, one group per labelled run.
std::string ablation_svg(const std::vector<std::pair<std::string, Report>>& runs);
/// Tiles images into a grid; PGM for one channel, PPM for three.
void write_image_grid(const nn::Act& images, ImageShape shape, int columns, const std::filesystem::path& path);

} // namespace fedgen
