#include "fedgen/local_training.hpp"

#include "fedgen/balanced_sampler.hpp"
#include "fedgen/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedgen {

namespace {

// Column-wise log-softmax of logits / temperature, in double.
Eigen::MatrixXd log_softmax(const nn::Act& logits, Eigen::Index rows, double temperature) {
    Eigen::MatrixXd z = logits.topRows(rows).cast<double>() / temperature;
    for (Eigen::Index s = 0; s < z.cols(); ++s) {
        const double m = z.col(s).maxCoeff();
        const double lse = m + std::log((z.col(s).array() - m).exp().sum());
        z.col(s).array() -= lse;
    }
    return z;
}

} // namespace

double ce_loss(const nn::Act& logits, const std::vector<int>& labels, nn::Act* grad) {
    const auto n = logits.cols();
    if (static_cast<std::size_t>(n) != labels.size()) throw ShapeError("ce_loss: one label per sample required");
    for (int y : labels)
        if (y < 0 || y >= logits.rows()) throw ConfigError("ce_loss: label outside the head range");
    if (n == 0) {
        if (grad) grad->setZero(logits.rows(), 0);
        return 0;
    }
    const Eigen::MatrixXd lp = log_softmax(logits, logits.rows(), 1);
    double loss = 0;
    for (Eigen::Index s = 0; s < n; ++s) loss -= lp(labels[static_cast<std::size_t>(s)], s);
    if (grad) {
        Eigen::MatrixXd g = lp.array().exp();
        for (Eigen::Index s = 0; s < n; ++s) g(labels[static_cast<std::size_t>(s)], s) -= 1;
        *grad = (g / static_cast<double>(n)).cast<Real>();
    }
    return loss / static_cast<double>(n);
}

double kd_loss(const nn::Act& student_logits, const nn::Act& teacher_logits, double temperature,
               KdDirection direction, nn::Act* grad) {
    if (!(temperature > 0)) throw ConfigError("kd_loss: temperature must be > 0");
    if (student_logits.cols() != teacher_logits.cols()) throw ShapeError("kd_loss: batch sizes differ");
    if (student_logits.rows() < teacher_logits.rows()) throw ShapeError("kd_loss: student head smaller than teacher");
    const auto n = student_logits.cols();
    const auto k = teacher_logits.rows();
    if (grad) grad->setZero(student_logits.rows(), n);
    if (n == 0 || k == 0) return 0;

    const Eigen::MatrixXd ls = log_softmax(student_logits, k, temperature);
    const Eigen::MatrixXd lt = log_softmax(teacher_logits, k, temperature);
    const Eigen::MatrixXd ps = ls.array().exp();
    const Eigen::MatrixXd diff = ls - lt;
    Eigen::MatrixXd g(k, n);
    double loss = 0;
    for (Eigen::Index s = 0; s < n; ++s) {
        if (direction == KdDirection::student_to_teacher) {
            const double kl = ps.col(s).dot(diff.col(s));
            loss += kl;
            g.col(s) = ps.col(s).array() * (diff.col(s).array() - kl);
        } else {
            const Eigen::VectorXd pt = lt.col(s).array().exp();
            loss -= pt.dot(diff.col(s));
            g.col(s) = ps.col(s) - pt;
        }
    }
    if (grad) grad->topRows(k) = (g / (temperature * static_cast<double>(n))).cast<Real>();
    return std::max(loss / static_cast<double>(n), 0.0);
}

double fd_loss(const nn::Act& student_features, const nn::Act& teacher_features, nn::Act* grad) {
    if (student_features.rows() != teacher_features.rows() || student_features.cols() != teacher_features.cols())
        throw ShapeError("fd_loss: feature shapes differ");
    const auto n = student_features.cols();
    if (n == 0) {
        if (grad) grad->setZero(student_features.rows(), 0);
        return 0;
    }
    const Eigen::MatrixXd d = (student_features - teacher_features).cast<double>();
    if (grad) *grad = (2.0 / static_cast<double>(n) * d).cast<Real>();
    return d.squaredNorm() / static_cast<double>(n);
}

LossTerms objective(const Classifier& student, const Classifier* teacher, const nn::Act& images,
                    const std::vector<int>& labels, const LossConfig& config, ParamSet* grads) {
    const Classifier::Trace trace = student.forward_trace(images);
    LossTerms terms;
    nn::Act grad_logits = nn::Act::Zero(trace.logits.rows(), trace.logits.cols());
    nn::Act grad_features;
    nn::Act g;
    if (config.ce_weight != 0) {
        terms.ce = ce_loss(trace.logits, labels, &g);
        grad_logits += static_cast<Real>(config.ce_weight) * g;
    }
    const bool kd = teacher && config.alpha != 0;
    const bool fd = teacher && config.gamma != 0;
    if (kd || fd) {
        const Classifier::Trace t = teacher->forward_trace(images);
        if (kd) {
            terms.kd = kd_loss(trace.logits, t.logits, config.kd_temperature, config.kd_direction, &g);
            grad_logits += static_cast<Real>(config.alpha) * g;
        }
        if (fd) {
            terms.fd = fd_loss(trace.features, t.features, &g);
            grad_features = static_cast<Real>(config.gamma) * g;
        }
    }
    terms.total = config.ce_weight * terms.ce + config.alpha * terms.kd + config.gamma * terms.fd;
    if (grads) student.backward(trace, grad_logits, fd ? &grad_features : nullptr, *grads);
    return terms;
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t count, int batch_size, std::uint64_t seed) {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    const auto b = static_cast<std::size_t>(batch_size);
    for (std::size_t lo = 0; lo < count; lo += b)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, lo + b)));
    return out;
}

LossReport client_update(Classifier& model, const Dataset& data, const std::vector<std::size_t>& shard,
                         const Dataset* replay, const Classifier* teacher, const LossConfig& config,
                         std::uint64_t seed) {
    if (config.alpha < 0 || config.gamma < 0) throw ConfigError("alpha and gamma must be >= 0");
    if (!(config.kd_temperature > 0)) throw ConfigError("KD temperature must be > 0");
    LossReport report;
    if (config.local_epochs <= 0) return report;

    const std::size_t real = shard.size();
    const std::size_t synthetic = replay ? replay->size() : 0;
    if (real + synthetic == 0) {
        report.skipped = true;
        report.warnings.emplace_back("no local data; model left unchanged");
        return report;
    }
    if (replay && !(replay->shape == data.shape)) throw ShapeError("replay images do not match the real data");

    LossConfig effective = config;
    if (!teacher) effective.alpha = effective.gamma = 0;

    const ImageShape shape = data.shape;
    const int hw = shape.pixels();
    auto example = [&](std::size_t k) -> const LabeledExample& {
        if (k < real) {
            if (shard[k] >= data.size()) throw IntegrityError("shard index out of range");
            return data.examples[shard[k]];
        }
        return replay->examples[k - real];
    };

    nn::Sgd sgd(model.params(), config.sgd);
    ParamSet grads = model.params().zeros_like();
    for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
        const auto batches =
            shuffled_batches(real + synthetic, config.batch_size, derive_seed(seed, {static_cast<std::uint64_t>(epoch)}));
        LossTerms sum;
        for (const auto& batch : batches) {
            nn::Act x(shape.channels, static_cast<Eigen::Index>(batch.size()) * hw);
            std::vector<int> labels(batch.size());
            for (std::size_t s = 0; s < batch.size(); ++s) {
                const auto& ex = example(batch[s]);
                labels[s] = ex.label;
                for (int c = 0; c < shape.channels; ++c)
                    std::copy_n(ex.image.data() + static_cast<std::ptrdiff_t>(c) * hw, hw,
                                x.row(c).data() + static_cast<std::ptrdiff_t>(s) * hw);
            }
            grads.set_zero();
            const LossTerms t = objective(model, teacher, x, labels, effective, &grads);
            if (!std::isfinite(t.total))
                throw NumericError("local loss diverged at epoch " + std::to_string(epoch + 1));
            sgd.step(model.params(), grads);
            report.steps.push_back(t);
            sum.ce += t.ce;
            sum.kd += t.kd;
            sum.fd += t.fd;
            sum.total += t.total;
        }
        const double nb = static_cast<double>(batches.size());
        report.epochs.push_back({sum.ce / nb, sum.kd / nb, sum.fd / nb, sum.total / nb});
    }
    return report;
}

} // namespace fedgen
