// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/diffusion/dit.hpp>
#include <geoscaffold/diffusion/schedule.hpp>

#include <functional>
#include <span>
#include <sstream>

namespace geoscaffold::diffusion {

/// Clean latent and its point-cloud render, both in model range [-1,1].
struct TrainingExample {
    LatentSequence clean;
    LatentSequence render;
};

inline TrainingExample make_example(std::span<const image::RgbImage> ground_truth,
                                    std::span<const image::RgbImage> render) {
    return {to_model_range(encode_latent(ground_truth)), to_model_range(encode_latent(render))};
}

struct TrainOptions {
    int steps = 2000;
    int batch_size = 4;
    double learning_rate = 1e-3;
    int warmup_steps = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
};

class AdamW {
public:
    AdamW(nn::ParameterStore &store, const TrainOptions &opts) : opts_(opts) {
        for (const auto &p : store.all()) {
            m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
            v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
        }
    }

    void step(nn::ParameterStore &store, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, double(t_));
        for (std::size_t i = 0; i < store.size(); ++i) {
            nn::Parameter &p = store[i];
            if (!p.trainable) {
                continue;
            }
            m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * p.grad;
            v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * p.grad.cwiseAbs2();
            const Mat update =
                (m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + opts_.adam_eps);
            p.value -= lr * (update + opts_.weight_decay * p.value);
        }
    }

private:
    TrainOptions opts_;
    std::vector<Mat> m_, v_;
    long t_ = 0;
};

/// Mean squared noise-prediction error; fills `d_eps` with its gradient when given.
inline double eps_loss(const LatentSequence &eps_hat, const LatentSequence &eps,
                       LatentSequence *d_eps = nullptr) {
    require_same_shape(eps_hat, eps, "eps_loss");
    double se = 0.0;
    const double n = double(eps.size());
    if (d_eps) {
        *d_eps = eps;
    }
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double r = eps_hat.data[i] - eps.data[i];
        se += r * r;
        if (d_eps) {
            d_eps->data[i] = 2.0 * r / n;
        }
    }
    return se / n;
}

inline LatentSequence predict(const DiT &model, const LatentSequence &x_t, double t,
                              const LatentSequence *render, DiT::Cache *cache = nullptr) {
    return render ? model.conditioned_forward(x_t, t, *render, cache)
                  : model.backbone_forward(x_t, t, cache);
}

struct LossPoint {
    int step = 0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<LossPoint> curve;
};

inline void write_loss_csv(const std::filesystem::path &path, std::span<const LossPoint> curve) {
    std::ostringstream os;
    os.precision(10);
    os << "step,loss\n";
    for (const LossPoint &p : curve) {
        os << p.step << ',' << p.loss << '\n';
    }
    const std::string s = os.str();
    geoscaffold::detail::write_file(path, std::span<const char>(s.data(), s.size()));
}

/// Optimizes the parameters selected by `mode` on uniform-t noise prediction. Backbone mode
/// trains unconditionally; encoder mode feeds each example's render to the condition branch.
inline TrainResult train(DiT &model, std::span<const TrainingExample> data, TrainMode mode,
                         const TrainOptions &opts,
                         const std::function<void(const LossPoint &)> &on_step = {}) {
    if (data.empty()) {
        throw Error(ErrorCode::InvalidArgument, "training needs at least one example");
    }
    if (opts.steps < 0 || opts.batch_size < 1) {
        throw Error(ErrorCode::InvalidArgument, "steps must be >= 0 and batch_size >= 1");
    }
    model.set_train_mode(mode);
    nn::ParameterStore &store = model.parameters();
    AdamW optimizer(store, opts);
    std::mt19937_64 rng(opts.seed);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_real_distribution<double> time(0.0, 1.0);

    TrainResult result;
    DiT::Cache cache;
    LatentSequence d_eps;
    for (int step = 0; step < opts.steps; ++step) {
        store.zero_grad();
        double loss = 0.0;
        for (int b = 0; b < opts.batch_size; ++b) {
            const TrainingExample &ex = data[pick(rng)];
            const double t = time(rng);
            const LatentSequence eps = gaussian_like(ex.clean, rng);
            const LatentSequence x_t = forward_noise(ex.clean, t, eps);
            const LatentSequence *render = mode == TrainMode::Encoder ? &ex.render : nullptr;
            const LatentSequence eps_hat = predict(model, x_t, t, render, &cache);
            const double l = eps_loss(eps_hat, eps, &d_eps);
            if (!std::isfinite(l)) {
                std::ostringstream msg;
                msg << "loss became " << l << " at step " << step << " (t = " << t << ")";
                throw Error(ErrorCode::NonFiniteLoss, msg.str());
            }
            loss += l / opts.batch_size;
            for (double &g : d_eps.data) {
                g /= opts.batch_size;
            }
            model.backward(cache, d_eps);
        }
        double norm2 = 0.0;
        for (const auto &p : store.all()) {
            if (p.trainable) {
                norm2 += p.grad.squaredNorm();
            }
        }
        if (!std::isfinite(norm2)) {
            throw Error(ErrorCode::NonFiniteLoss,
                        "gradient became non-finite at step " + std::to_string(step));
        }
        if (opts.grad_clip > 0.0 && std::sqrt(norm2) > opts.grad_clip) {
            const double s = opts.grad_clip / std::sqrt(norm2);
            for (auto &p : store.all()) {
                p.grad *= s;
            }
        }
        const double warm = opts.warmup_steps > 0
                                ? std::min(1.0, double(step + 1) / double(opts.warmup_steps))
                                : 1.0;
        optimizer.step(store, opts.learning_rate * warm);
        result.curve.push_back({step, loss});
        if (on_step) {
            on_step(result.curve.back());
        }
    }
    return result;
}

/// Noise-prediction MSE on fixed (t, eps) draws, `draws` per example, reproducible from `seed`.
inline double evaluate_eps_mse(const DiT &model, std::span<const TrainingExample> data,
                               bool conditioned, int draws = 8, std::uint64_t seed = 1234) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> time(0.0, 1.0);
    double total = 0.0;
    std::size_t n = 0;
    for (const TrainingExample &ex : data) {
        for (int k = 0; k < draws; ++k) {
            const double t = time(rng);
            const LatentSequence eps = gaussian_like(ex.clean, rng);
            const LatentSequence x_t = forward_noise(ex.clean, t, eps);
            total += eps_loss(predict(model, x_t, t, conditioned ? &ex.render : nullptr), eps);
            ++n;
        }
    }
    return total / double(n);
}

/// Sum of every backbone parameter's bytes, for freeze checks.
inline std::uint64_t backbone_checksum(const DiT &model) {
    std::uint64_t h = 1469598103934665603ull;
    const auto &store = model.parameters();
    for (std::size_t i = 0; i < store.size(); ++i) {
        if (!model.is_backbone_parameter(i)) {
            continue;
        }
        const auto *bytes = reinterpret_cast<const unsigned char *>(store[i].value.data());
        for (std::size_t k = 0; k < std::size_t(store[i].value.size()) * sizeof(double); ++k) {
            h = (h ^ bytes[k]) * 1099511628211ull;
        }
    }
    return h;
}

} // namespace geoscaffold::diffusion
