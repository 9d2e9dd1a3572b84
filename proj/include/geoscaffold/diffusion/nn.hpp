// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/error.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

/// Minimal float64 layers with hand-written backward passes. Activations are row-per-token.
namespace geoscaffold::diffusion::nn {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    bool trainable = true;
};

class ParameterStore {
public:
    std::size_t add(std::string name, Mat init) {
        Parameter p;
        p.name = std::move(name);
        p.grad = Mat::Zero(init.rows(), init.cols());
        p.value = std::move(init);
        params_.push_back(std::move(p));
        return params_.size() - 1;
    }

    Parameter &operator[](std::size_t i) { return params_[i]; }
    const Parameter &operator[](std::size_t i) const { return params_[i]; }
    std::size_t size() const noexcept { return params_.size(); }
    std::vector<Parameter> &all() noexcept { return params_; }
    const std::vector<Parameter> &all() const noexcept { return params_; }

    const Parameter *find(const std::string &name) const {
        for (const auto &p : params_) {
            if (p.name == name) {
                return &p;
            }
        }
        return nullptr;
    }

    void zero_grad() {
        for (auto &p : params_) {
            p.grad.setZero();
        }
    }

    std::size_t count(bool trainable_only) const {
        std::size_t n = 0;
        for (const auto &p : params_) {
            if (!trainable_only || p.trainable) {
                n += std::size_t(p.value.size());
            }
        }
        return n;
    }

private:
    std::vector<Parameter> params_;
};

inline Mat gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = n(rng);
    }
    return m;
}

/// y = x W^T + b with W stored out x in and b as a 1 x out row.
struct Linear {
    std::size_t w = 0;
    std::size_t b = 0;
    bool has_bias = true;

    static Linear create(ParameterStore &store, const std::string &name, Eigen::Index in,
                         Eigen::Index out, std::mt19937_64 &rng, bool bias = true) {
        Linear l;
        l.w = store.add(name + ".weight", gaussian(out, in, 1.0 / std::sqrt(double(in)), rng));
        l.has_bias = bias;
        if (bias) {
            l.b = store.add(name + ".bias", Mat::Zero(1, out));
        }
        return l;
    }

    Mat forward(const ParameterStore &store, const Mat &x) const {
        Mat y = x * store[w].value.transpose();
        if (has_bias) {
            y.rowwise() += store[b].value.row(0);
        }
        return y;
    }

    Mat backward(ParameterStore &store, const Mat &x, const Mat &dy) const {
        if (store[w].trainable) {
            store[w].grad.noalias() += dy.transpose() * x;
        }
        if (has_bias && store[b].trainable) {
            store[b].grad.row(0) += dy.colwise().sum();
        }
        return dy * store[w].value;
    }

    void zero(ParameterStore &store) const {
        store[w].value.setZero();
        if (has_bias) {
            store[b].value.setZero();
        }
    }
};

/// Row-wise layer normalization without affine parameters.
struct LayerNormCache {
    Mat xhat;
    Eigen::VectorXd rstd;
};

inline Mat layer_norm(const Mat &x, LayerNormCache &cache, double eps = 1e-6) {
    const Eigen::Index d = x.cols();
    cache.xhat.resize(x.rows(), d);
    cache.rstd.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const RowVec c = x.row(r).array() - mu;
        const double var = c.squaredNorm() / double(d);
        cache.rstd(r) = 1.0 / std::sqrt(var + eps);
        cache.xhat.row(r) = c * cache.rstd(r);
    }
    return cache.xhat;
}

inline Mat layer_norm_backward(const LayerNormCache &cache, const Mat &dy) {
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double mean_dy = dy.row(r).mean();
        const double mean_dyx = dy.row(r).dot(cache.xhat.row(r)) / double(dy.cols());
        dx.row(r) = cache.rstd(r) *
                    (dy.row(r).array() - mean_dy - cache.xhat.row(r).array() * mean_dyx).matrix();
    }
    return dx;
}

inline Mat gelu(const Mat &x) {
    return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); });
}

inline Mat gelu_backward(const Mat &x, const Mat &dy) {
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    return dy.cwiseProduct(x.unaryExpr([inv_sqrt_2pi](double v) {
        return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)) +
               v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    }));
}

inline Mat silu(const Mat &x) {
    return x.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

inline Mat silu_backward(const Mat &x, const Mat &dy) {
    return dy.cwiseProduct(x.unaryExpr([](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
    }));
}

/// Pre-norm transformer block: x + Attn(LN(x)), then + MLP(LN(.)).
struct Block {
    Linear qkv, proj, fc1, fc2;
    int num_heads = 1;

    struct Cache {
        Mat x;
        LayerNormCache ln1, ln2;
        Mat a;                  // LN1 output
        Mat qkv;                // N x 3D
        std::vector<Mat> probs; // per head, N x N
        Mat attn;               // concatenated head outputs, N x D
        Mat h;                  // after attention residual
        Mat m;                  // LN2 output
        Mat pre;                // fc1 output
        Mat g;                  // GELU output
    };

    static Block create(ParameterStore &store, const std::string &name, Eigen::Index dim,
                        Eigen::Index mlp_dim, int heads, std::mt19937_64 &rng) {
        Block blk;
        blk.num_heads = heads;
        blk.qkv = Linear::create(store, name + ".qkv", dim, 3 * dim, rng);
        blk.proj = Linear::create(store, name + ".proj", dim, dim, rng);
        blk.fc1 = Linear::create(store, name + ".fc1", dim, mlp_dim, rng);
        blk.fc2 = Linear::create(store, name + ".fc2", mlp_dim, dim, rng);
        return blk;
    }

    std::vector<std::size_t> parameter_ids() const {
        return {qkv.w, qkv.b, proj.w, proj.b, fc1.w, fc1.b, fc2.w, fc2.b};
    }

    Mat forward(const ParameterStore &store, const Mat &x, Cache &c) const {
        const Eigen::Index n = x.rows(), d = x.cols(), dh = d / num_heads;
        const double scale = 1.0 / std::sqrt(double(dh));
        c.x = x;
        c.a = layer_norm(x, c.ln1);
        c.qkv = qkv.forward(store, c.a);
        c.attn.resize(n, d);
        c.probs.resize(std::size_t(num_heads));
        for (int hd = 0; hd < num_heads; ++hd) {
            const auto q = c.qkv.middleCols(hd * dh, dh);
            const auto k = c.qkv.middleCols(d + hd * dh, dh);
            const auto v = c.qkv.middleCols(2 * d + hd * dh, dh);
            Mat s = (q * k.transpose()) * scale;
            for (Eigen::Index r = 0; r < n; ++r) {
                const double mx = s.row(r).maxCoeff();
                s.row(r) = (s.row(r).array() - mx).exp();
                s.row(r) /= s.row(r).sum();
            }
            c.attn.middleCols(hd * dh, dh) = s * v;
            c.probs[std::size_t(hd)] = std::move(s);
        }
        c.h = x + proj.forward(store, c.attn);
        c.m = layer_norm(c.h, c.ln2);
        c.pre = fc1.forward(store, c.m);
        c.g = gelu(c.pre);
        return c.h + fc2.forward(store, c.g);
    }

    Mat backward(ParameterStore &store, const Cache &c, const Mat &dy) const {
        const Eigen::Index n = c.x.rows(), d = c.x.cols(), dh = d / num_heads;
        const double scale = 1.0 / std::sqrt(double(dh));
        const Mat dg = fc2.backward(store, c.g, dy);
        const Mat dpre = gelu_backward(c.pre, dg);
        const Mat dm = fc1.backward(store, c.m, dpre);
        Mat dh_total = dy + layer_norm_backward(c.ln2, dm);

        const Mat dattn = proj.backward(store, c.attn, dh_total);
        Mat dqkv(n, 3 * d);
        for (int hd = 0; hd < num_heads; ++hd) {
            const auto q = c.qkv.middleCols(hd * dh, dh);
            const auto k = c.qkv.middleCols(d + hd * dh, dh);
            const auto v = c.qkv.middleCols(2 * d + hd * dh, dh);
            const Mat &p = c.probs[std::size_t(hd)];
            const auto dout = dattn.middleCols(hd * dh, dh);
            const Mat dp = dout * v.transpose();
            Mat ds = p.cwiseProduct(dp);
            const Eigen::VectorXd row_dot = ds.rowwise().sum();
            ds -= p.cwiseProduct(row_dot.replicate(1, n));
            ds *= scale;
            dqkv.middleCols(hd * dh, dh) = ds * k;
            dqkv.middleCols(d + hd * dh, dh) = ds.transpose() * q;
            dqkv.middleCols(2 * d + hd * dh, dh) = p.transpose() * dout;
        }
        const Mat da = qkv.backward(store, c.a, dqkv);
        return dh_total + layer_norm_backward(c.ln1, da);
    }
};

/// Sinusoidal features of a scalar, [sin(x w_k), cos(x w_k)] with geometric frequencies.
inline RowVec sinusoidal(double x, Eigen::Index dim, double max_period = 10000.0) {
    RowVec out(dim);
    const Eigen::Index half = dim / 2;
    for (Eigen::Index k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(max_period) * double(k) / double(half));
        out(k) = std::sin(x * freq);
        out(half + k) = std::cos(x * freq);
    }
    if (dim % 2) {
        out(dim - 1) = 0.0;
    }
    return out;
}

} // namespace geoscaffold::diffusion::nn
