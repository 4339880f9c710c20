#include "fedgen/generative_memory.hpp"

#include "fedgen/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace fedgen {

namespace {

void check_lambda(double lambda) {
    if (!(lambda > 0 && lambda <= 1)) throw ConfigError("lambda must lie in (0, 1]");
}

// lambda * count is formed in floating point; the epsilon keeps exact ties
// such as 0.7 * 15 = 10.5 from landing on the wrong side.
constexpr double kSlack = 1e-9;

} // namespace

int ReplayBatch::retained_count() const {
    return static_cast<int>(std::count(retained.begin(), retained.end(), std::uint8_t{1}));
}

double prediction_entropy(std::span<const double> p) {
    double sum = 0;
    double h = 0;
    for (double v : p) {
        if (!(v >= 0)) throw ConfigError("probabilities must be non-negative");
        sum += v;
        if (v > 0) h -= v * std::log(v);
    }
    if (std::abs(sum - 1) > 1e-6) throw ConfigError("probabilities do not sum to 1");
    return std::max(h, 0.0);
}

int generation_count(int samples, double lambda) {
    check_lambda(lambda);
    if (samples < 0) throw ConfigError("sample count must be >= 0");
    return static_cast<int>(std::ceil(samples / lambda - kSlack));
}

int retention_count(int count, double lambda) {
    check_lambda(lambda);
    return std::min(count, static_cast<int>(std::floor(lambda * count + 0.5 + kSlack)));
}

std::vector<std::uint8_t> entropy_filter_mask(const std::vector<double>& entropies, double lambda,
                                              FilterDirection direction) {
    const int n = static_cast<int>(entropies.size());
    const int keep = retention_count(n, lambda);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return direction == FilterDirection::high ? entropies[a] > entropies[b] : entropies[a] < entropies[b];
    });
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
    for (int r = 0; r < keep; ++r) mask[static_cast<std::size_t>(order[r])] = 1;
    return mask;
}

ReplayBatch label_and_filter(nn::Act images, ImageShape shape, const nn::ActD& probabilities, double lambda,
                             FilterDirection direction) {
    const auto n = probabilities.cols();
    if (images.cols() != n * shape.pixels()) throw ShapeError("one probability column per image required");
    ReplayBatch batch;
    batch.shape = shape;
    batch.images = std::move(images);
    batch.pseudo_labels.resize(static_cast<std::size_t>(n));
    batch.entropies.resize(static_cast<std::size_t>(n));
    std::vector<double> column(static_cast<std::size_t>(probabilities.rows()));
    for (Eigen::Index s = 0; s < n; ++s) {
        for (Eigen::Index k = 0; k < probabilities.rows(); ++k) column[static_cast<std::size_t>(k)] = probabilities(k, s);
        Eigen::Index best = 0;
        probabilities.col(s).maxCoeff(&best);
        batch.pseudo_labels[static_cast<std::size_t>(s)] = static_cast<int>(best);
        batch.entropies[static_cast<std::size_t>(s)] = prediction_entropy(column);
    }
    batch.retained = entropy_filter_mask(batch.entropies, lambda, direction);
    return batch;
}

ReplayBatch build_replay(const DiffusionModel& diffusion, const Classifier& global, const ReplayConfig& config,
                         std::uint64_t seed) {
    check_lambda(config.lambda);
    if (config.samples < 0) throw ConfigError("replay sample count must be >= 0");
    if (global.current_classes() == 0) throw ConfigError("labelling model has no classes");
    const double lambda = config.filter ? config.lambda : 1.0;
    const int count = config.filter ? generation_count(config.samples, lambda) : config.samples;

    nn::Act images = sample(diffusion, count, seed);
    const nn::ActD logits = global.forward(images).logits.cast<double>();
    nn::ActD probs(logits.rows(), logits.cols());
    for (Eigen::Index s = 0; s < logits.cols(); ++s) {
        const Eigen::VectorXd e = (logits.col(s).array() - logits.col(s).maxCoeff()).exp();
        probs.col(s) = e / e.sum();
    }
    return label_and_filter(std::move(images), diffusion.image_shape, probs, lambda, config.direction);
}

Dataset replay_as_dataset(const ReplayBatch& batch, int num_classes) {
    Dataset out;
    out.shape = batch.shape;
    out.num_classes = num_classes;
    const int hw = batch.shape.pixels();
    for (int s = 0; s < batch.generated(); ++s) {
        if (!batch.retained[static_cast<std::size_t>(s)]) continue;
        LabeledExample ex;
        ex.label = batch.pseudo_labels[static_cast<std::size_t>(s)];
        ex.image.resize(static_cast<std::size_t>(batch.shape.size()));
        for (int c = 0; c < batch.shape.channels; ++c)
            std::copy_n(batch.images.row(c).data() + static_cast<std::ptrdiff_t>(s) * hw, hw,
                        ex.image.data() + static_cast<std::ptrdiff_t>(c) * hw);
        out.examples.push_back(std::move(ex));
    }
    return out;
}

void dump_replay(const ReplayBatch& batch, int num_classes, const std::filesystem::path& bundle,
                 const std::filesystem::path& csv) {
    ReplayBatch all = batch;
    std::fill(all.retained.begin(), all.retained.end(), std::uint8_t{1});
    write_bundle(replay_as_dataset(all, num_classes), bundle);

    std::ofstream out(csv);
    if (!out) throw Error("cannot write " + csv.string());
    out << "index,pseudo_label,entropy,retained\n";
    char buf[64];
    for (int s = 0; s < batch.generated(); ++s) {
        std::snprintf(buf, sizeof buf, "%.17g", batch.entropies[static_cast<std::size_t>(s)]);
        out << s << ',' << batch.pseudo_labels[static_cast<std::size_t>(s)] << ',' << buf << ','
            << int(batch.retained[static_cast<std::size_t>(s)]) << '\n';
    }
}

} // namespace fedgen
