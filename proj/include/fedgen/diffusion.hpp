#pragma once

#include "fedgen/dataset.hpp"
#include "fedgen/nn.hpp"
#include "fedgen/params.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace fedgen {

/// Per-step DDPM constants. Vectors are indexed by t - 1 for t = 1..num_steps.
struct NoiseSchedule {
    int num_steps = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    std::vector<double> sigmas; ///< reverse-step noise scale; sqrt(beta_t) by default

    static NoiseSchedule linear(int num_steps, double beta_start = 1e-4, double beta_end = 0.02);
    static NoiseSchedule from_betas(std::vector<double> betas);

    double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
    double alpha(int t) const { return alphas.at(static_cast<std::size_t>(t - 1)); }
    double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t - 1)); }
    double sigma(int t) const { return sigmas.at(static_cast<std::size_t>(t - 1)); }
};

/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise.
nn::Act forward_diffuse(const NoiseSchedule& schedule, const nn::Act& x0, int t, const nn::Act& noise);
/// Same, with one step per sample (`steps.size()` samples of `pixels` columns each).
nn::Act forward_diffuse(const NoiseSchedule& schedule, const nn::Act& x0, const std::vector<int>& steps, int pixels,
                        const nn::Act& noise);

struct DenoiserConfig {
    ImageShape image{1, 16, 16};
    int base_channels = 8;
    int time_embedding = 16; ///< sinusoidal embedding width (even)
    int time_hidden = 32;
};

/// Noise predictor eps(x_t, t): conv encoder (full then half resolution), a
/// half-resolution mid block, nearest upsampling with a 1x1 projection, an
/// additive skip from the first encoder stage, and a 3x3 output conv. The
/// sinusoidal time embedding enters both encoder stages as per-channel biases.
class Denoiser {
public:
    Denoiser() = default;
    Denoiser(const DenoiserConfig& config, std::uint64_t seed);
    static Denoiser from_params(ParamSet params, ImageShape image);

    const DenoiserConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    struct Trace {
        nn::Grid grid;
        nn::Act emb, th_pre, th;
        nn::Act cols1, a1, s1;
        nn::Act cols2, a2, s2;
        nn::Act cols3, a3;
        nn::Act cols4, a4;
        nn::Act cols5;
    };

    nn::Act predict(const nn::Act& x, const std::vector<int>& steps) const;
    nn::Act predict(const nn::Act& x, const std::vector<int>& steps, Trace& trace) const;
    void backward(const Trace& trace, const nn::Act& grad_out, ParamSet& grads) const;

private:
    DenoiserConfig config_;
    ParamSet params_;
};

/// Sinusoidal embedding of integer steps, (dim, n).
nn::Act time_embedding(const std::vector<int>& steps, int dim);

struct DiffusionModel {
    Denoiser denoiser;
    NoiseSchedule schedule;
    ImageShape image_shape;

    static DiffusionModel create(const DenoiserConfig& config, NoiseSchedule schedule, std::uint64_t seed);
};

struct DiffusionTrainConfig {
    int epochs = 50;
    int batch_size = 16;
    nn::AdamConfig adam{1e-3};
    bool balanced_sampler = true;
};

struct DiffusionTrainReport {
    std::vector<double> step_losses;
};

/// Simplified DDPM objective: MSE between predicted and injected noise, with
/// per-sample uniform t. Continues from the model's current parameters.
DiffusionTrainReport train_epochs(DiffusionModel& model, const Dataset& data, const std::vector<std::size_t>& shard,
                                  const DiffusionTrainConfig& config, std::uint64_t seed);

/// The noise-prediction loss and its gradient for fixed (x0, steps, noise).
double denoising_loss(const DiffusionModel& model, const nn::Act& x0, const std::vector<int>& steps,
                    const nn::Act& noise, ParamSet* grads);

using NoisePredictor = std::function<nn::Act(const nn::Act& x_t, int t)>;

/// Ancestral sampling from x_T down to x_0 (z = 0 on the final step). No clamping.
/// The chain is carried in double; only the predictor sees single precision.
nn::ActD reverse_process(const NoiseSchedule& schedule, const NoisePredictor& predict, nn::ActD x, Rng& rng);

/// Draws n images, clamped to [0, 1]. Deterministic for a given seed.
nn::Act sample(const DiffusionModel& model, int n, std::uint64_t seed);

} // namespace fedgen
