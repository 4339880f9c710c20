#include "fedgen/classifier.hpp"

#include "fedgen/error.hpp"

#include <cmath>
#include <numeric>

namespace fedgen {

Prediction Predictions::at(int s) const {
    Prediction p;
    auto col = [s](const nn::Act& m) {
        std::vector<Real> v(static_cast<std::size_t>(m.rows()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = m(i, s);
        return v;
    };
    p.logits = col(logits);
    p.probabilities = col(probabilities);
    p.features = col(features);
    return p;
}

nn::Act softmax(const nn::Act& logits, Real temperature) {
    nn::Act out(logits.rows(), logits.cols());
    if (logits.rows() == 0) return out;
    for (Eigen::Index s = 0; s < logits.cols(); ++s) {
        const auto z = (logits.col(s).array() / temperature).eval();
        const auto e = (z - z.maxCoeff()).exp().eval();
        out.col(s) = (e / e.sum()).matrix();
    }
    return out;
}

namespace {
const Real kHeGain = std::sqrt(Real(6));
} // namespace

Classifier::Classifier(const ClassifierConfig& config, int num_classes, std::uint64_t seed) : config_(config) {
    if (num_classes < 0) throw ConfigError("num_classes must be >= 0");
    if (config.input.height % 4 || config.input.width % 4) throw ShapeError("classifier input dims must be divisible by 4");
    Rng rng(seed);
    const int c0 = config.input.channels;
    params_.add("conv1.weight", nn::uniform_init(config.conv1, c0 * 9, c0 * 9, rng, kHeGain));
    params_.add("conv1.bias", Matrix::Zero(config.conv1, 1));
    params_.add("conv2.weight", nn::uniform_init(config.conv2, config.conv1 * 9, config.conv1 * 9, rng, kHeGain));
    params_.add("conv2.bias", Matrix::Zero(config.conv2, 1));
    params_.add("conv3.weight", nn::uniform_init(config.feature_dim, config.conv2 * 9, config.conv2 * 9, rng, kHeGain));
    params_.add("conv3.bias", Matrix::Zero(config.feature_dim, 1));
    params_.add("head.weight", nn::uniform_init(num_classes, config.feature_dim, config.feature_dim, rng));
    params_.add("head.bias", nn::uniform_init(num_classes, 1, config.feature_dim, rng));
}

Classifier Classifier::from_params(ParamSet params, ImageShape input) {
    Classifier c;
    c.config_.input = input;
    c.config_.conv1 = static_cast<int>(params.at("conv1.weight").rows());
    c.config_.conv2 = static_cast<int>(params.at("conv2.weight").rows());
    c.config_.feature_dim = static_cast<int>(params.at("conv3.weight").rows());
    if (params.at("conv1.weight").cols() != input.channels * 9) throw ShapeError("checkpoint does not match input channels");
    if (params.at("head.weight").cols() != c.config_.feature_dim) throw ShapeError("checkpoint head/feature mismatch");
    c.params_ = std::move(params);
    return c;
}

int Classifier::batch_of(const nn::Act& images) const {
    const auto& in = config_.input;
    if (images.rows() != in.channels || images.cols() % in.pixels() != 0)
        throw ShapeError("classifier input shape does not match the model");
    return static_cast<int>(images.cols() / in.pixels());
}

Classifier::Trace Classifier::forward_trace(const nn::Act& images) const {
    Trace t;
    t.batch = batch_of(images);
    const nn::Grid g1{t.batch, config_.input.height, config_.input.width};
    const nn::Grid g2 = g1.halved();
    const nn::Grid g3 = g2.halved();
    t.a1 = nn::conv_forward((images.array() * 2 - 1).matrix(), g1, params_.at("conv1.weight"), params_.at("conv1.bias"), 3, &t.cols1);
    const nn::Act p1 = nn::avg_pool2(nn::relu(t.a1), g1);
    t.a2 = nn::conv_forward(p1, g2, params_.at("conv2.weight"), params_.at("conv2.bias"), 3, &t.cols2);
    const nn::Act p2 = nn::avg_pool2(nn::relu(t.a2), g2);
    t.a3 = nn::conv_forward(p2, g3, params_.at("conv3.weight"), params_.at("conv3.bias"), 3, &t.cols3);
    t.features = nn::global_avg_pool(nn::relu(t.a3), g3);
    t.logits = nn::linear_forward(t.features, params_.at("head.weight"), params_.at("head.bias"));
    return t;
}

void Classifier::backward(const Trace& t, const nn::Act& grad_logits, const nn::Act* grad_features,
                          ParamSet& grads) const {
    const nn::Grid g1{t.batch, config_.input.height, config_.input.width};
    const nn::Grid g2 = g1.halved();
    const nn::Grid g3 = g2.halved();
    nn::Act gf;
    nn::linear_backward(grad_logits, t.features, params_.at("head.weight"), grads.at("head.weight"),
                        grads.at("head.bias"), &gf);
    if (grad_features) gf += *grad_features;
    nn::Act g = nn::relu_backward(nn::global_avg_pool_backward(gf, g3), t.a3);
    nn::Act gx;
    nn::conv_backward(g, g3, t.cols3, params_.at("conv3.weight"), 3, grads.at("conv3.weight"), grads.at("conv3.bias"), &gx);
    g = nn::relu_backward(nn::avg_pool2_backward(gx, g2), t.a2);
    nn::conv_backward(g, g2, t.cols2, params_.at("conv2.weight"), 3, grads.at("conv2.weight"), grads.at("conv2.bias"), &gx);
    g = nn::relu_backward(nn::avg_pool2_backward(gx, g1), t.a1);
    nn::conv_backward(g, g1, t.cols1, params_.at("conv1.weight"), 3, grads.at("conv1.weight"), grads.at("conv1.bias"), nullptr);
}

Predictions Classifier::forward(const nn::Act& images) const {
    Trace t = forward_trace(images);
    Predictions p;
    p.probabilities = softmax(t.logits);
    p.logits = std::move(t.logits);
    p.features = std::move(t.features);
    return p;
}

Predictions Classifier::forward(const std::vector<std::vector<Real>>& images) const {
    const auto& in = config_.input;
    nn::Act x(in.channels, static_cast<Eigen::Index>(images.size()) * in.pixels());
    for (std::size_t s = 0; s < images.size(); ++s) {
        if (static_cast<int>(images[s].size()) != in.size()) throw ShapeError("image size does not match the model");
        for (int c = 0; c < in.channels; ++c)
            std::copy_n(images[s].data() + static_cast<std::size_t>(c) * in.pixels(), in.pixels(),
                        x.row(c).data() + s * in.pixels());
    }
    return forward(x);
}

void Classifier::expand_head(int new_total_classes, std::uint64_t seed) {
    const int old = current_classes();
    if (new_total_classes < old) throw ConfigError("expand_head cannot shrink the head");
    if (new_total_classes == old) return;
    Rng rng(seed);
    const int d = config_.feature_dim;
    Matrix w(new_total_classes, d);
    Matrix b(new_total_classes, 1);
    w.topRows(old) = params_.at("head.weight");
    b.topRows(old) = params_.at("head.bias");
    w.bottomRows(new_total_classes - old) = nn::uniform_init(new_total_classes - old, d, d, rng);
    b.bottomRows(new_total_classes - old) = nn::uniform_init(new_total_classes - old, 1, d, rng);
    params_.at("head.weight") = std::move(w);
    params_.at("head.bias") = std::move(b);
}

Classifier Classifier::restricted(int classes) const {
    if (classes < 0 || classes > current_classes()) throw ConfigError("restricted: class count out of range");
    Classifier c = *this;
    c.params_.at("head.weight") = Matrix(params_.at("head.weight").topRows(classes));
    c.params_.at("head.bias") = Matrix(params_.at("head.bias").topRows(classes));
    return c;
}

Classifier aggregate(std::span<const Classifier> models, std::span<const double> weights) {
    if (models.empty()) throw ConfigError("aggregate: no models");
    if (models.size() != weights.size()) throw ConfigError("aggregate: one weight per model required");
    double total = 0;
    for (double w : weights) {
        if (!(w >= 0)) throw ConfigError("aggregate: weights must be non-negative");
        total += w;
    }
    if (!(total > 0)) throw ConfigError("aggregate: weights must have a positive sum");
    for (const auto& m : models)
        if (!m.params().same_layout(models.front().params())) throw ShapeError("aggregate: model layouts differ");

    Classifier out = models.front();
    out.params().set_zero();
    for (std::size_t k = 0; k < models.size(); ++k) {
        if (weights[k] == 0) continue;
        out.params().axpy(weights[k] / total, models[k].params());
    }
    return out;
}

} // namespace fedgen
