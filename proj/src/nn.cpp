#include "fedgen/nn.hpp"

#include "fedgen/error.hpp"

#include <algorithm>
#include <cmath>

namespace fedgen::nn {

Act im2col3(const Act& x, const Grid& g) {
    const int channels = static_cast<int>(x.rows());
    const int h = g.height;
    const int w = g.width;
    const int hw = g.pixels();
    Act cols(static_cast<Eigen::Index>(channels) * 9, g.columns());
    for (int c = 0; c < channels; ++c) {
        const Real* src = x.row(c).data();
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                Real* dst = cols.row(c * 9 + ky * 3 + kx).data();
                const int dy = ky - 1;
                const int dx = kx - 1;
                const int x_lo = dx < 0 ? 1 : 0;
                const int x_hi = dx > 0 ? w - 1 : w;
                for (int s = 0; s < g.batch; ++s) {
                    for (int y = 0; y < h; ++y) {
                        Real* out = dst + s * hw + y * w;
                        const int sy = y + dy;
                        if (sy < 0 || sy >= h) {
                            std::fill_n(out, w, Real(0));
                            continue;
                        }
                        const Real* in = src + s * hw + sy * w + dx;
                        if (x_lo) out[0] = 0;
                        if (x_hi < w) out[w - 1] = 0;
                        std::copy(in + x_lo, in + x_hi, out + x_lo);
                    }
                }
            }
        }
    }
    return cols;
}

Act col2im3(const Act& cols, const Grid& g, int channels) {
    const int h = g.height;
    const int w = g.width;
    const int hw = g.pixels();
    Act x = Act::Zero(channels, g.columns());
    for (int c = 0; c < channels; ++c) {
        Real* dst = x.row(c).data();
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const Real* src = cols.row(c * 9 + ky * 3 + kx).data();
                const int dy = ky - 1;
                const int dx = kx - 1;
                const int x_lo = dx < 0 ? 1 : 0;
                const int x_hi = dx > 0 ? w - 1 : w;
                for (int s = 0; s < g.batch; ++s) {
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + dy;
                        if (sy < 0 || sy >= h) continue;
                        const Real* in = src + s * hw + y * w;
                        Real* out = dst + s * hw + sy * w + dx;
                        for (int xx = x_lo; xx < x_hi; ++xx) out[xx] += in[xx];
                    }
                }
            }
        }
    }
    return x;
}

Act conv_forward(const Act& x, const Grid& g, const Matrix& weight, const Matrix& bias, int kernel, Act* cols_out) {
    if (x.cols() != g.columns()) throw ShapeError("conv: input columns do not match grid");
    if (weight.cols() != x.rows() * kernel * kernel) throw ShapeError("conv: weight/input channel mismatch");
    Act y(weight.rows(), x.cols());
    if (kernel == 1) {
        y.noalias() = weight * x;
        if (cols_out) *cols_out = x;
    } else if (kernel == 3) {
        Act cols = im2col3(x, g);
        y.noalias() = weight * cols;
        if (cols_out) *cols_out = std::move(cols);
    } else {
        throw ShapeError("conv: only kernel sizes 1 and 3 are supported");
    }
    y.colwise() += bias.col(0);
    return y;
}

void conv_backward(const Act& grad_y, const Grid& g, const Act& cols, const Matrix& weight, int kernel,
                   Matrix& grad_weight, Matrix& grad_bias, Act* grad_x) {
    grad_weight.noalias() += grad_y * cols.transpose();
    grad_bias.col(0) += grad_y.rowwise().sum().transpose();
    if (!grad_x) return;
    Act grad_cols(weight.cols(), grad_y.cols());
    grad_cols.noalias() = weight.transpose() * grad_y;
    if (kernel == 1) {
        *grad_x = std::move(grad_cols);
    } else {
        *grad_x = col2im3(grad_cols, g, static_cast<int>(weight.cols() / 9));
    }
}

Act avg_pool2(const Act& x, const Grid& g) {
    if (g.height % 2 || g.width % 2) throw ShapeError("avg_pool2 needs even spatial dims");
    const Grid o = g.halved();
    Act y(x.rows(), o.columns());
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const Real* in = x.row(c).data();
        Real* out = y.row(c).data();
        for (int s = 0; s < g.batch; ++s)
            for (int yy = 0; yy < o.height; ++yy)
                for (int xx = 0; xx < o.width; ++xx) {
                    const Real* p = in + s * g.pixels() + 2 * yy * g.width + 2 * xx;
                    out[s * o.pixels() + yy * o.width + xx] = 0.25 * (p[0] + p[1] + p[g.width] + p[g.width + 1]);
                }
    }
    return y;
}

Act avg_pool2_backward(const Act& grad_y, const Grid& g) {
    const Grid o = g.halved();
    Act gx(grad_y.rows(), g.columns());
    for (Eigen::Index c = 0; c < grad_y.rows(); ++c) {
        const Real* in = grad_y.row(c).data();
        Real* out = gx.row(c).data();
        for (int s = 0; s < g.batch; ++s)
            for (int yy = 0; yy < o.height; ++yy)
                for (int xx = 0; xx < o.width; ++xx) {
                    const Real v = 0.25 * in[s * o.pixels() + yy * o.width + xx];
                    Real* p = out + s * g.pixels() + 2 * yy * g.width + 2 * xx;
                    p[0] = p[1] = p[g.width] = p[g.width + 1] = v;
                }
    }
    return gx;
}

Act upsample2(const Act& x, const Grid& g) {
    const Grid o = g.doubled();
    Act y(x.rows(), o.columns());
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const Real* in = x.row(c).data();
        Real* out = y.row(c).data();
        for (int s = 0; s < g.batch; ++s)
            for (int yy = 0; yy < o.height; ++yy)
                for (int xx = 0; xx < o.width; ++xx)
                    out[s * o.pixels() + yy * o.width + xx] = in[s * g.pixels() + (yy / 2) * g.width + xx / 2];
    }
    return y;
}

Act upsample2_backward(const Act& grad_y, const Grid& g) {
    const Grid o = g.doubled();
    Act gx = Act::Zero(grad_y.rows(), g.columns());
    for (Eigen::Index c = 0; c < grad_y.rows(); ++c) {
        const Real* in = grad_y.row(c).data();
        Real* out = gx.row(c).data();
        for (int s = 0; s < g.batch; ++s)
            for (int yy = 0; yy < o.height; ++yy)
                for (int xx = 0; xx < o.width; ++xx)
                    out[s * g.pixels() + (yy / 2) * g.width + xx / 2] += in[s * o.pixels() + yy * o.width + xx];
    }
    return gx;
}

Act global_avg_pool(const Act& x, const Grid& g) {
    Act y(x.rows(), g.batch);
    const Real inv = Real(1) / g.pixels();
    for (Eigen::Index c = 0; c < x.rows(); ++c)
        for (int s = 0; s < g.batch; ++s) y(c, s) = x.row(c).segment(static_cast<Eigen::Index>(s) * g.pixels(), g.pixels()).sum() * inv;
    return y;
}

Act global_avg_pool_backward(const Act& grad_y, const Grid& g) {
    Act gx(grad_y.rows(), g.columns());
    const Real inv = Real(1) / g.pixels();
    for (Eigen::Index c = 0; c < grad_y.rows(); ++c)
        for (int s = 0; s < g.batch; ++s)
            gx.row(c).segment(static_cast<Eigen::Index>(s) * g.pixels(), g.pixels()).setConstant(grad_y(c, s) * inv);
    return gx;
}

void add_per_sample(Act& x, const Grid& g, const Act& per_sample) {
    for (Eigen::Index c = 0; c < x.rows(); ++c)
        for (int s = 0; s < g.batch; ++s)
            x.row(c).segment(static_cast<Eigen::Index>(s) * g.pixels(), g.pixels()).array() += per_sample(c, s);
}

Act sum_per_sample(const Act& grad, const Grid& g) {
    Act out(grad.rows(), g.batch);
    for (Eigen::Index c = 0; c < grad.rows(); ++c)
        for (int s = 0; s < g.batch; ++s) out(c, s) = grad.row(c).segment(static_cast<Eigen::Index>(s) * g.pixels(), g.pixels()).sum();
    return out;
}

Act relu(const Act& x) { return x.cwiseMax(Real(0)); }

Act relu_backward(const Act& grad_y, const Act& x) {
    return (x.array() > Real(0)).select(grad_y, Real(0));
}

Act silu(const Act& x) {
    return (x.array() / (Real(1) + (-x.array()).exp())).matrix();
}

Act silu_backward(const Act& grad_y, const Act& x) {
    const auto sig = (Real(1) / (Real(1) + (-x.array()).exp()));
    return (grad_y.array() * sig * (Real(1) + x.array() * (Real(1) - sig))).matrix();
}

Act linear_forward(const Act& x, const Matrix& weight, const Matrix& bias) {
    if (weight.cols() != x.rows()) throw ShapeError("linear: input dimension mismatch");
    Act y(weight.rows(), x.cols());
    y.noalias() = weight * x;
    y.colwise() += bias.col(0);
    return y;
}

void linear_backward(const Act& grad_y, const Act& x, const Matrix& weight, Matrix& grad_weight, Matrix& grad_bias,
                     Act* grad_x) {
    grad_weight.noalias() += grad_y * x.transpose();
    grad_bias.col(0) += grad_y.rowwise().sum().transpose();
    if (grad_x) {
        grad_x->resize(weight.cols(), grad_y.cols());
        grad_x->noalias() = weight.transpose() * grad_y;
    }
}

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, int fan_in, Rng& rng, Real gain) {
    const Real bound = gain / std::sqrt(static_cast<Real>(fan_in));
    std::uniform_real_distribution<Real> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
}

Sgd::Sgd(const ParamSet& like, SgdConfig config) : config_(config), velocity_(like.zeros_like()) {}

void Sgd::step(ParamSet& params, const ParamSet& grads) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix g = grads[i];
        if (config_.weight_decay != 0) g += config_.weight_decay * params[i];
        velocity_[i] = config_.momentum * velocity_[i] + g;
        params[i] -= config_.learning_rate * velocity_[i];
    }
}

Adam::Adam(const ParamSet& like, AdamConfig config) : config_(config), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(ParamSet& params, const ParamSet& grads) {
    ++steps_;
    const Real c1 = Real(1) - std::pow(config_.beta1, static_cast<Real>(steps_));
    const Real c2 = Real(1) - std::pow(config_.beta2, static_cast<Real>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = config_.beta1 * m_[i] + (1 - config_.beta1) * grads[i];
        v_[i] = config_.beta2 * v_[i] + (1 - config_.beta2) * grads[i].cwiseAbs2();
        params[i].array() -= config_.learning_rate * (m_[i].array() / c1) /
                             ((v_[i].array() / c2).sqrt() + config_.epsilon);
    }
}

} // namespace fedgen::nn
