#include "fedgen/diffusion.hpp"

#include "fedgen/balanced_sampler.hpp"
#include "fedgen/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedgen {

NoiseSchedule NoiseSchedule::linear(int num_steps, double beta_start, double beta_end) {
    if (num_steps < 1) throw ConfigError("diffusion needs at least one step");
    std::vector<double> betas(static_cast<std::size_t>(num_steps));
    for (int i = 0; i < num_steps; ++i)
        betas[static_cast<std::size_t>(i)] =
            num_steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / double(num_steps - 1);
    return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("diffusion needs at least one step");
    NoiseSchedule s;
    s.num_steps = static_cast<int>(betas.size());
    double bar = 1;
    for (double b : betas) {
        if (!(b > 0 && b < 1)) throw ConfigError("betas must lie in (0, 1)");
        s.alphas.push_back(1 - b);
        bar *= 1 - b;
        s.alpha_bars.push_back(bar);
        s.sigmas.push_back(std::sqrt(b));
    }
    s.betas = std::move(betas);
    return s;
}

nn::Act forward_diffuse(const NoiseSchedule& schedule, const nn::Act& x0, int t, const nn::Act& noise) {
    if (t < 1 || t > schedule.num_steps) throw ConfigError("diffusion step out of range");
    if (noise.rows() != x0.rows() || noise.cols() != x0.cols()) throw ShapeError("noise shape differs from x0");
    const double ab = schedule.alpha_bar(t);
    return static_cast<Real>(std::sqrt(ab)) * x0 + static_cast<Real>(std::sqrt(1 - ab)) * noise;
}

nn::Act forward_diffuse(const NoiseSchedule& schedule, const nn::Act& x0, const std::vector<int>& steps, int pixels,
                        const nn::Act& noise) {
    if (noise.rows() != x0.rows() || noise.cols() != x0.cols()) throw ShapeError("noise shape differs from x0");
    if (static_cast<Eigen::Index>(steps.size()) * pixels != x0.cols()) throw ShapeError("one step per sample required");
    nn::Act out(x0.rows(), x0.cols());
    for (std::size_t s = 0; s < steps.size(); ++s) {
        const int t = steps[s];
        if (t < 1 || t > schedule.num_steps) throw ConfigError("diffusion step out of range");
        const auto a = static_cast<Real>(std::sqrt(schedule.alpha_bar(t)));
        const auto b = static_cast<Real>(std::sqrt(1 - schedule.alpha_bar(t)));
        const auto off = static_cast<Eigen::Index>(s) * pixels;
        out.middleCols(off, pixels) = a * x0.middleCols(off, pixels) + b * noise.middleCols(off, pixels);
    }
    return out;
}

nn::Act time_embedding(const std::vector<int>& steps, int dim) {
    if (dim < 2 || dim % 2) throw ConfigError("time embedding width must be even and >= 2");
    const int half = dim / 2;
    nn::Act emb(dim, static_cast<Eigen::Index>(steps.size()));
    for (std::size_t s = 0; s < steps.size(); ++s)
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            emb(i, static_cast<Eigen::Index>(s)) = static_cast<Real>(std::sin(steps[s] * freq));
            emb(half + i, static_cast<Eigen::Index>(s)) = static_cast<Real>(std::cos(steps[s] * freq));
        }
    return emb;
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
    if (config.image.height % 2 || config.image.width % 2) throw ShapeError("denoiser image dims must be even");
    Rng rng(seed);
    const int c0 = config.image.channels;
    const int c = config.base_channels;
    const int e = config.time_embedding;
    const int h = config.time_hidden;
    auto add = [&](const char* name, int rows, int cols, int fan_in) {
        params_.add(std::string(name) + ".weight", nn::uniform_init(rows, cols, fan_in, rng));
        params_.add(std::string(name) + ".bias", nn::uniform_init(rows, 1, fan_in, rng));
    };
    add("time.fc1", h, e, e);
    add("enc1.time", c, h, h);
    add("enc2.time", 2 * c, h, h);
    add("enc1.conv", c, c0 * 9, c0 * 9);
    add("enc2.conv", 2 * c, c * 9, c * 9);
    add("mid.conv", 2 * c, 2 * c * 9, 2 * c * 9);
    add("dec.up", c, 2 * c, 2 * c);
    add("out.conv", c0, c * 9, c * 9);
}

Denoiser Denoiser::from_params(ParamSet params, ImageShape image) {
    Denoiser d;
    d.config_.image = image;
    d.config_.base_channels = static_cast<int>(params.at("enc1.conv.weight").rows());
    d.config_.time_embedding = static_cast<int>(params.at("time.fc1.weight").cols());
    d.config_.time_hidden = static_cast<int>(params.at("time.fc1.weight").rows());
    if (params.at("enc1.conv.weight").cols() != image.channels * 9) throw ShapeError("checkpoint does not match image channels");
    d.params_ = std::move(params);
    return d;
}

nn::Act Denoiser::predict(const nn::Act& x, const std::vector<int>& steps) const {
    Trace scratch;
    return predict(x, steps, scratch);
}

nn::Act Denoiser::predict(const nn::Act& x, const std::vector<int>& steps, Trace& t) const {
    const auto& img = config_.image;
    if (x.rows() != img.channels || x.cols() != static_cast<Eigen::Index>(steps.size()) * img.pixels())
        throw ShapeError("denoiser input shape mismatch");
    const auto& P = params_;
    t.grid = {static_cast<int>(steps.size()), img.height, img.width};
    const nn::Grid g1 = t.grid;
    const nn::Grid g2 = g1.halved();

    t.emb = time_embedding(steps, config_.time_embedding);
    t.th_pre = nn::linear_forward(t.emb, P.at("time.fc1.weight"), P.at("time.fc1.bias"));
    t.th = nn::silu(t.th_pre);

    t.a1 = nn::conv_forward(x, g1, P.at("enc1.conv.weight"), P.at("enc1.conv.bias"), 3, &t.cols1);
    nn::add_per_sample(t.a1, g1, nn::linear_forward(t.th, P.at("enc1.time.weight"), P.at("enc1.time.bias")));
    t.s1 = nn::silu(t.a1);

    t.a2 = nn::conv_forward(nn::avg_pool2(t.s1, g1), g2, P.at("enc2.conv.weight"), P.at("enc2.conv.bias"), 3, &t.cols2);
    nn::add_per_sample(t.a2, g2, nn::linear_forward(t.th, P.at("enc2.time.weight"), P.at("enc2.time.bias")));
    t.s2 = nn::silu(t.a2);

    t.a3 = nn::conv_forward(t.s2, g2, P.at("mid.conv.weight"), P.at("mid.conv.bias"), 3, &t.cols3);
    t.a4 = nn::conv_forward(nn::upsample2(nn::silu(t.a3), g2), g1, P.at("dec.up.weight"), P.at("dec.up.bias"), 1, &t.cols4);
    t.a4 += t.s1;
    return nn::conv_forward(nn::silu(t.a4), g1, P.at("out.conv.weight"), P.at("out.conv.bias"), 3, &t.cols5);
}

void Denoiser::backward(const Trace& t, const nn::Act& grad_out, ParamSet& G) const {
    const auto& P = params_;
    const nn::Grid g1 = t.grid;
    const nn::Grid g2 = g1.halved();
    nn::Act g;
    nn::conv_backward(grad_out, g1, t.cols5, P.at("out.conv.weight"), 3, G.at("out.conv.weight"), G.at("out.conv.bias"), &g);
    const nn::Act ga4 = nn::silu_backward(g, t.a4);
    nn::conv_backward(ga4, g1, t.cols4, P.at("dec.up.weight"), 1, G.at("dec.up.weight"), G.at("dec.up.bias"), &g);
    g = nn::silu_backward(nn::upsample2_backward(g, g2), t.a3);
    nn::conv_backward(g, g2, t.cols3, P.at("mid.conv.weight"), 3, G.at("mid.conv.weight"), G.at("mid.conv.bias"), &g);
    const nn::Act ga2 = nn::silu_backward(g, t.a2);
    nn::Act gth;
    nn::linear_backward(nn::sum_per_sample(ga2, g2), t.th, P.at("enc2.time.weight"), G.at("enc2.time.weight"),
                        G.at("enc2.time.bias"), &gth);
    nn::conv_backward(ga2, g2, t.cols2, P.at("enc2.conv.weight"), 3, G.at("enc2.conv.weight"), G.at("enc2.conv.bias"), &g);
    nn::Act gs1 = nn::avg_pool2_backward(g, g1) + ga4;
    const nn::Act ga1 = nn::silu_backward(gs1, t.a1);
    nn::Act gth1;
    nn::linear_backward(nn::sum_per_sample(ga1, g1), t.th, P.at("enc1.time.weight"), G.at("enc1.time.weight"),
                        G.at("enc1.time.bias"), &gth1);
    nn::conv_backward(ga1, g1, t.cols1, P.at("enc1.conv.weight"), 3, G.at("enc1.conv.weight"), G.at("enc1.conv.bias"), nullptr);
    gth += gth1;
    nn::linear_backward(nn::silu_backward(gth, t.th_pre), t.emb, P.at("time.fc1.weight"), G.at("time.fc1.weight"),
                        G.at("time.fc1.bias"), nullptr);
}

DiffusionModel DiffusionModel::create(const DenoiserConfig& config, NoiseSchedule schedule, std::uint64_t seed) {
    return {Denoiser(config, seed), std::move(schedule), config.image};
}

double denoising_loss(const DiffusionModel& model, const nn::Act& x0, const std::vector<int>& steps,
                      const nn::Act& noise, ParamSet* grads) {
    const int pixels = model.image_shape.pixels();
    const nn::Act xt = forward_diffuse(model.schedule, x0, steps, pixels, noise);
    Denoiser::Trace trace;
    const nn::Act pred = model.denoiser.predict(xt, steps, trace);
    const nn::Act diff = pred - noise;
    const auto count = static_cast<double>(diff.size());
    const double loss = diff.cast<double>().squaredNorm() / count;
    if (grads) model.denoiser.backward(trace, static_cast<Real>(2 / count) * diff, *grads);
    return loss;
}

DiffusionTrainReport train_epochs(DiffusionModel& model, const Dataset& data, const std::vector<std::size_t>& shard,
                                  const DiffusionTrainConfig& config, std::uint64_t seed) {
    DiffusionTrainReport report;
    if (config.epochs <= 0) return report;
    if (shard.empty()) throw ConfigError("train_epochs: empty shard");
    if (!(data.shape == model.image_shape)) throw ShapeError("dataset images do not match the diffusion model");

    nn::Adam adam(model.denoiser.params(), config.adam);
    ParamSet grads = model.denoiser.params().zeros_like();
    Rng rng(derive_seed(seed, {0xd1ff}));
    std::uniform_int_distribution<int> step_dist(1, model.schedule.num_steps);
    std::normal_distribution<Real> normal(0, 1);
    const auto [class_ids, by_class] = group_by_class(data, shard);
    const auto batch_size = static_cast<std::size_t>(std::max(1, config.batch_size));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::vector<std::size_t>> batches;
        if (config.balanced_sampler) {
            const auto plan = plan_epoch(by_class, config.batch_size, rng(), class_ids);
            for (const auto& b : plan.batches) {
                std::vector<std::size_t> idx;
                for (const auto& ref : b) idx.push_back(ref.index);
                batches.push_back(std::move(idx));
            }
        } else {
            auto order = shard;
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t lo = 0; lo < order.size(); lo += batch_size)
                batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), lo + batch_size)));
        }
        for (const auto& idx : batches) {
            const nn::Act x0 = gather_images(data, idx);
            std::vector<int> steps(idx.size());
            for (auto& t : steps) t = step_dist(rng);
            nn::Act noise(x0.rows(), x0.cols());
            for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
            grads.set_zero();
            const double loss = denoising_loss(model, x0, steps, noise, &grads);
            if (!std::isfinite(loss))
                throw NumericError("diffusion loss diverged at epoch " + std::to_string(epoch + 1) + " step " +
                                   std::to_string(report.step_losses.size() + 1));
            report.step_losses.push_back(loss);
            adam.step(model.denoiser.params(), grads);
        }
    }
    return report;
}

nn::ActD reverse_process(const NoiseSchedule& schedule, const NoisePredictor& predict, nn::ActD x, Rng& rng) {
    std::normal_distribution<double> normal(0, 1);
    for (int t = schedule.num_steps; t >= 1; --t) {
        const nn::ActD eps = predict(x.cast<Real>(), t).cast<double>();
        const double coef = schedule.beta(t) / std::sqrt(1 - schedule.alpha_bar(t));
        x = (x - coef * eps) / std::sqrt(schedule.alpha(t));
        if (t > 1 && schedule.sigma(t) != 0) {
            const double sigma = schedule.sigma(t);
            for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += sigma * normal(rng);
        }
    }
    return x;
}

nn::Act sample(const DiffusionModel& model, int n, std::uint64_t seed) {
    const auto& img = model.image_shape;
    nn::Act out(img.channels, static_cast<Eigen::Index>(std::max(n, 0)) * img.pixels());
    if (n <= 0) return out;
    constexpr int kChunk = 16; // keeps im2col buffers cache-resident
    Rng rng(derive_seed(seed, {0x5a3b}));
    std::normal_distribution<double> normal(0, 1);
    for (int lo = 0; lo < n; lo += kChunk) {
        const int count = std::min(kChunk, n - lo);
        nn::ActD x(img.channels, static_cast<Eigen::Index>(count) * img.pixels());
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
        const std::vector<int> proto(static_cast<std::size_t>(count), 0);
        auto predictor = [&](const nn::Act& xt, int t) {
            std::vector<int> steps(proto.size(), t);
            return model.denoiser.predict(xt, steps);
        };
        x = reverse_process(model.schedule, predictor, std::move(x), rng);
        out.middleCols(static_cast<Eigen::Index>(lo) * img.pixels(), x.cols()) = x.cwiseMax(0.0).cwiseMin(1.0).cast<Real>();
    }
    return out;
}

} // namespace fedgen
