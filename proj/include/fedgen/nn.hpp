#pragma once

// Minimal building blocks for the small convolutional networks used here.
//
// Activations of a batch are row-major matrices with one row per channel and
// one column per (sample, y, x), i.e. column = sample * H * W + y * W + x.
// Convolutions lower to a single GEMM over the whole batch via im2col.

#include "fedgen/params.hpp"
#include "fedgen/types.hpp"

namespace fedgen::nn {

using Act = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ActD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Grid {
    int batch = 0;
    int height = 0;
    int width = 0;

    int pixels() const { return height * width; }
    Eigen::Index columns() const { return static_cast<Eigen::Index>(batch) * height * width; }
    Grid halved() const { return {batch, height / 2, width / 2}; }
    Grid doubled() const { return {batch, height * 2, width * 2}; }
};

/// Square "same" convolution, kernel 1 or 3, stride 1. Weight is (out, in*k*k).
Act conv_forward(const Act& x, const Grid& g, const Matrix& weight, const Matrix& bias, int kernel, Act* cols_out = nullptr);

/// Accumulates weight/bias gradients; writes the input gradient when grad_x is non-null.
void conv_backward(const Act& grad_y, const Grid& g, const Act& cols, const Matrix& weight, int kernel,
                   Matrix& grad_weight, Matrix& grad_bias, Act* grad_x);

Act im2col3(const Act& x, const Grid& g);
Act col2im3(const Act& cols, const Grid& g, int channels);

Act avg_pool2(const Act& x, const Grid& g);
Act avg_pool2_backward(const Act& grad_y, const Grid& g);
Act upsample2(const Act& x, const Grid& g);
Act upsample2_backward(const Act& grad_y, const Grid& g);

/// (C, batch*HW) -> (C, batch)
Act global_avg_pool(const Act& x, const Grid& g);
Act global_avg_pool_backward(const Act& grad_y, const Grid& g);

/// Adds a per-(channel, sample) value to every pixel of that sample.
void add_per_sample(Act& x, const Grid& g, const Act& per_sample);
Act sum_per_sample(const Act& grad, const Grid& g);

Act relu(const Act& x);
Act relu_backward(const Act& grad_y, const Act& x);
Act silu(const Act& x);
Act silu_backward(const Act& grad_y, const Act& x);

/// (out, in) weight applied column-wise: y = W x + b.
Act linear_forward(const Act& x, const Matrix& weight, const Matrix& bias);
void linear_backward(const Act& grad_y, const Act& x, const Matrix& weight, Matrix& grad_weight, Matrix& grad_bias,
                     Act* grad_x);

/// Uniform(-gain/sqrt(fan_in), gain/sqrt(fan_in)). gain = 1 is the PyTorch
/// default; gain = sqrt(6) is He initialisation for ReLU layers.
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, int fan_in, Rng& rng, Real gain = 1);

struct SgdConfig {
    Real learning_rate = 0.01;
    Real momentum = 0.9;
    Real weight_decay = 5e-4;
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
class Sgd {
public:
    Sgd(const ParamSet& like, SgdConfig config);
    void step(ParamSet& params, const ParamSet& grads);

private:
    SgdConfig config_;
    ParamSet velocity_;
};

struct AdamConfig {
    Real learning_rate = 1e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real epsilon = 1e-8;
};

class Adam {
public:
    Adam(const ParamSet& like, AdamConfig config);
    void step(ParamSet& params, const ParamSet& grads);

private:
    AdamConfig config_;
    ParamSet m_;
    ParamSet v_;
    long steps_ = 0;
};

} // namespace fedgen::nn
