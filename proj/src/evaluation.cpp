#include "fedgen/evaluation.hpp"

#include "fedgen/balanced_sampler.hpp"
#include "fedgen/error.hpp"

#include <boost/rational.hpp>

#include <algorithm>

namespace fedgen {

namespace {

using Rational = boost::rational<std::int64_t>;

Rational ratio(const HitCount& h) {
    if (h.total <= 0) throw ConfigError("accuracy over an empty test split");
    return {h.hits, h.total};
}

double to_double(const Rational& r) {
    return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator());
}

void check_shape(const AccuracyRecord& r) {
    if (!r.complete()) throw ConfigError("accuracy record is incomplete");
    for (std::size_t l = 0; l < r.steps.size(); ++l)
        if (r.steps[l].per_task.size() != l + 1) throw ConfigError("accuracy record row has the wrong length");
}

std::vector<Rational> forgetting_exact(const AccuracyRecord& r) {
    check_shape(r);
    if (r.num_tasks < 2) throw ConfigError("forgetting needs at least two tasks");
    const int last = r.num_tasks - 1;
    std::vector<Rational> f;
    for (int t = 0; t < last; ++t) {
        Rational best = ratio(r.steps[t].per_task[t]);
        for (int l = t + 1; l <= last; ++l) best = std::max(best, ratio(r.steps[l].per_task[t]));
        f.push_back(best - ratio(r.steps[last].per_task[t]));
    }
    return f;
}

} // namespace

double AccuracyRecord::acc(int task, int step) const {
    if (step < 0 || step >= static_cast<int>(steps.size()) || task < 0 || task > step)
        throw ConfigError("accuracy entry not recorded");
    return steps[step].per_task[task].value();
}

void AccuracyRecord::add(StepAccuracy row) {
    if (row.per_task.size() != steps.size() + 1) throw ConfigError("accuracy rows must be added in step order");
    steps.push_back(std::move(row));
}

StepAccuracy evaluate_step(const Classifier& model, const Dataset& data, const TaskSchedule& schedule, int step) {
    if (step < 0 || step >= schedule.num_tasks) throw ConfigError("evaluation step out of range");
    if (model.current_classes() < schedule.classes_through(step))
        throw ConfigError("model head does not cover the observed classes");
    StepAccuracy out;
    constexpr std::size_t kChunk = 256;
    for (int t = 0; t <= step; ++t) {
        const auto& split = schedule.test_split.at(t);
        HitCount h;
        for (std::size_t lo = 0; lo < split.size(); lo += kChunk) {
            const std::vector<std::size_t> idx(split.begin() + static_cast<std::ptrdiff_t>(lo),
                                               split.begin() + static_cast<std::ptrdiff_t>(std::min(split.size(), lo + kChunk)));
            const nn::Act logits = model.forward(gather_images(data, idx)).logits;
            for (std::size_t s = 0; s < idx.size(); ++s) {
                Eigen::Index best = 0;
                logits.col(static_cast<Eigen::Index>(s)).maxCoeff(&best);
                h.hits += best == data.examples[idx[s]].label;
            }
        }
        h.total = static_cast<std::int64_t>(split.size());
        out.observed.hits += h.hits;
        out.observed.total += h.total;
        out.per_task.push_back(h);
    }
    return out;
}

double average_accuracy(const AccuracyRecord& record) {
    check_shape(record);
    Rational sum = 0;
    for (const auto& s : record.steps) sum += ratio(s.observed);
    return to_double(sum / Rational(record.num_tasks));
}

double average_forgetting(const AccuracyRecord& record) {
    const auto f = forgetting_exact(record);
    Rational sum = 0;
    for (const auto& v : f) sum += v;
    return to_double(sum / Rational(static_cast<std::int64_t>(f.size())));
}

std::vector<double> forgetting_per_task(const AccuracyRecord& record) {
    std::vector<double> out;
    for (const auto& v : forgetting_exact(record)) out.push_back(to_double(v));
    return out;
}

} // namespace fedgen
