// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/diffusion/codec.hpp>
#include <geoscaffold/diffusion/nn.hpp>

#include <optional>
#include <string>
#include <vector>

namespace geoscaffold::diffusion {

using nn::Mat;
using nn::RowVec;

struct DiTConfig {
    int num_layers = 8;
    int hidden_dim = 64;
    int num_heads = 4;
    int patch_size = 4;
    int encoder_layers = 2;
    int mlp_dim = 64;
    int time_embed_dim = 64;
    int latent_channels = int(kLatentChannels);
    int frames = 8;
    int latent_height = 8;
    int latent_width = 12;

    void validate() const {
        auto bad = [](const char *field, const std::string &msg) {
            throw Error(ErrorCode::InvalidArgument, msg, field);
        };
        if (num_layers < 2 || num_layers % 2) bad("num_layers", "num_layers must be even and >= 2");
        if (encoder_layers != 2) bad("encoder_layers", "the condition encoder clones exactly two blocks");
        if (hidden_dim <= 0 || num_heads <= 0 || hidden_dim % num_heads)
            bad("hidden_dim", "hidden_dim must be a positive multiple of num_heads");
        if (hidden_dim % 4) bad("hidden_dim", "hidden_dim must be a multiple of 4");
        if (mlp_dim <= 0 || time_embed_dim <= 0) bad("mlp_dim", "dimensions must be positive");
        if (patch_size <= 0 || latent_height % patch_size || latent_width % patch_size)
            bad("patch_size", "latent size must be a multiple of patch_size");
        if (latent_channels <= 0 || frames <= 0) bad("frames", "shape must be positive");
    }

    int tokens_per_frame() const { return (latent_height / patch_size) * (latent_width / patch_size); }
    int num_tokens() const { return frames * tokens_per_frame(); }
    int token_dim() const { return patch_size * patch_size * latent_channels; }
    /// Encoder feature index feeding backbone layer `layer`.
    int injection_source(int layer) const { return layer / (num_layers / 2); }

    LatentSequence latent_shape() const {
        return LatentSequence::zeros(std::uint32_t(frames), std::uint32_t(latent_channels),
                                     std::uint32_t(latent_height), std::uint32_t(latent_width));
    }

    friend bool operator==(const DiTConfig &, const DiTConfig &) = default;
};

/// Rows are tokens ordered (frame, patch row, patch col); columns are (channel, py, px).
inline Mat patchify(const LatentSequence &z, int p) {
    const std::uint32_t th = z.height / std::uint32_t(p), tw = z.width / std::uint32_t(p);
    Mat out(Eigen::Index(z.frames * th * tw), Eigen::Index(z.channels) * p * p);
    for (std::uint32_t l = 0; l < z.frames; ++l) {
        for (std::uint32_t ty = 0; ty < th; ++ty) {
            for (std::uint32_t tx = 0; tx < tw; ++tx) {
                const Eigen::Index row = Eigen::Index((l * th + ty) * tw + tx);
                Eigen::Index col = 0;
                for (std::uint32_t c = 0; c < z.channels; ++c) {
                    for (int py = 0; py < p; ++py) {
                        for (int px = 0; px < p; ++px) {
                            out(row, col++) = z.at(l, c, ty * p + py, tx * p + px);
                        }
                    }
                }
            }
        }
    }
    return out;
}

inline void unpatchify_into(const Mat &tokens, int p, LatentSequence &z) {
    const std::uint32_t th = z.height / std::uint32_t(p), tw = z.width / std::uint32_t(p);
    for (std::uint32_t l = 0; l < z.frames; ++l) {
        for (std::uint32_t ty = 0; ty < th; ++ty) {
            for (std::uint32_t tx = 0; tx < tw; ++tx) {
                const Eigen::Index row = Eigen::Index((l * th + ty) * tw + tx);
                Eigen::Index col = 0;
                for (std::uint32_t c = 0; c < z.channels; ++c) {
                    for (int py = 0; py < p; ++py) {
                        for (int px = 0; px < p; ++px) {
                            z.at(l, c, ty * p + py, tx * p + px) = tokens(row, col++);
                        }
                    }
                }
            }
        }
    }
}

/// Fixed 3D sinusoidal table: half the width encodes the frame, a quarter each row and column.
inline Mat positional_table(const DiTConfig &cfg) {
    const int d = cfg.hidden_dim;
    const int th = cfg.latent_height / cfg.patch_size, tw = cfg.latent_width / cfg.patch_size;
    Mat pos(cfg.num_tokens(), d);
    for (int l = 0; l < cfg.frames; ++l) {
        for (int y = 0; y < th; ++y) {
            for (int x = 0; x < tw; ++x) {
                const int row = (l * th + y) * tw + x;
                pos.row(row) << nn::sinusoidal(l, d / 2, 100.0), nn::sinusoidal(y, d / 4, 100.0),
                    nn::sinusoidal(x, d / 4, 100.0);
            }
        }
    }
    return pos;
}

enum class TrainMode { Backbone, Encoder };

/// Transformer backbone with a two-block condition encoder whose outputs are added, through a
/// zero-initialized linear map, to the backbone block outputs (first half from encoder block 0,
/// second half from block 1).
class DiT {
public:
    DiT() = default;

    explicit DiT(const DiTConfig &cfg, std::uint64_t seed = 0) : cfg_(cfg) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        const Eigen::Index d = cfg_.hidden_dim, p = cfg_.token_dim();
        embed_ = nn::Linear::create(store_, "backbone.embed", p, d, rng);
        time1_ = nn::Linear::create(store_, "backbone.time.fc1", cfg_.time_embed_dim, d, rng);
        time2_ = nn::Linear::create(store_, "backbone.time.fc2", d, d, rng);
        for (int i = 0; i < cfg_.num_layers; ++i) {
            blocks_.push_back(nn::Block::create(store_, "backbone.blocks." + std::to_string(i), d,
                                                cfg_.mlp_dim, cfg_.num_heads, rng));
        }
        head_ = nn::Linear::create(store_, "backbone.head", d, p, rng);
        head_.zero(store_);
        skip_ = nn::Linear::create(store_, "backbone.skip", d, cfg_.latent_channels, rng);
        skip_.zero(store_);
        backbone_param_count_ = store_.size();

        mix_ = nn::Linear::create(store_, "encoder.mix", 2 * d, d, rng, false);
        for (int i = 0; i < cfg_.encoder_layers; ++i) {
            encoder_.push_back(nn::Block::create(store_, "encoder.blocks." + std::to_string(i), d,
                                                 cfg_.mlp_dim, cfg_.num_heads, rng));
        }
        inject_ = nn::Linear::create(store_, "encoder.inject", d, d, rng);
        pos_ = positional_table(cfg_);
        reset_encoder();
        set_train_mode(TrainMode::Backbone);
    }

    const DiTConfig &config() const noexcept { return cfg_; }
    nn::ParameterStore &parameters() noexcept { return store_; }
    const nn::ParameterStore &parameters() const noexcept { return store_; }

    bool is_backbone_parameter(std::size_t id) const noexcept { return id < backbone_param_count_; }

    /// Copies backbone blocks 0..1 into the encoder, sets the mixer to pass the noisy-latent half
    /// through unchanged and zeroes the injection map.
    void reset_encoder() {
        for (int i = 0; i < cfg_.encoder_layers; ++i) {
            const auto src = blocks_[std::size_t(i)].parameter_ids();
            const auto dst = encoder_[std::size_t(i)].parameter_ids();
            for (std::size_t k = 0; k < src.size(); ++k) {
                store_[dst[k]].value = store_[src[k]].value;
            }
        }
        const Eigen::Index d = cfg_.hidden_dim;
        Mat mix = Mat::Zero(d, 2 * d);
        mix.leftCols(d).setIdentity();
        store_[mix_.w].value = mix;
        inject_.zero(store_);
    }

    void set_train_mode(TrainMode mode) {
        for (std::size_t i = 0; i < store_.size(); ++i) {
            store_[i].trainable = (mode == TrainMode::Backbone) == is_backbone_parameter(i);
        }
    }

    /// Everything a backward pass needs from one forward evaluation.
    struct Cache {
        Mat x_tokens;     // patchified noisy latent
        Mat r_tokens;     // patchified render latent (conditioned only)
        LatentSequence x; // noisy latent
        RowVec time_features;
        Mat time_pre;     // fc1 output, 1 x D
        Mat time_act;     // SiLU output
        Mat temb;         // 1 x D
        Mat skip_scale;   // 1 x C
        std::vector<nn::Block::Cache> blocks;
        std::vector<Mat> layer_inputs;  // input of block i
        std::vector<Mat> layer_outputs; // h_i after injection
        nn::LayerNormCache final_ln;
        Mat final_norm;
        bool conditioned = false;
        Mat mix_input; // N x 2D
        std::vector<nn::Block::Cache> encoder_blocks;
        std::vector<Mat> features; // encoder block outputs
        std::vector<int> injection_trace;
    };

    LatentSequence backbone_forward(const LatentSequence &x_t, double t, Cache *cache = nullptr) const {
        return run(x_t, t, nullptr, cache);
    }

    LatentSequence conditioned_forward(const LatentSequence &x_t, double t, const LatentSequence &z_r,
                                       Cache *cache = nullptr) const {
        return run(x_t, t, &z_r, cache);
    }

    /// Accumulates d(loss)/d(param) for trainable parameters given d(loss)/d(eps_hat).
    void backward(const Cache &c, const LatentSequence &d_eps) {
        const int p = cfg_.patch_size;
        const Eigen::Index d = cfg_.hidden_dim;
        Mat d_temb = Mat::Zero(1, d);

        // eps_hat = head(LN(h_M)) + s(temb) * x_t, with s one scale per latent channel.
        Mat d_scale = Mat::Zero(1, cfg_.latent_channels);
        const std::size_t per_channel = std::size_t(c.x.height) * c.x.width;
        for (std::uint32_t l = 0; l < c.x.frames; ++l) {
            for (std::uint32_t ch = 0; ch < c.x.channels; ++ch) {
                const std::size_t base = c.x.offset(l, ch, 0, 0);
                double acc = 0.0;
                for (std::size_t k = 0; k < per_channel; ++k) {
                    acc += d_eps.data[base + k] * c.x.data[base + k];
                }
                d_scale(0, ch) += acc;
            }
        }
        d_temb += skip_.backward(store_, c.temb, d_scale);

        const Mat d_head = patchify(d_eps, p);
        const Mat d_norm = head_.backward(store_, c.final_norm, d_head);
        Mat dh = nn::layer_norm_backward(c.final_ln, d_norm);

        std::vector<Mat> d_features(c.features.size(), Mat::Zero(dh.rows(), d));
        for (int i = cfg_.num_layers - 1; i >= 0; --i) {
            if (c.conditioned) {
                d_features[std::size_t(cfg_.injection_source(i))] += dh;
            }
            dh = blocks_[std::size_t(i)].backward(store_, c.blocks[std::size_t(i)], dh);
        }
        // h_0 = embed(x) + pos + temb
        d_temb += dh.colwise().sum();
        embed_.backward(store_, c.x_tokens, dh);

        if (c.conditioned) {
            Mat d_f = Mat::Zero(dh.rows(), d);
            for (int k = cfg_.encoder_layers - 1; k >= 0; --k) {
                d_f += inject_.backward(store_, c.features[std::size_t(k)], d_features[std::size_t(k)]);
                d_f = encoder_[std::size_t(k)].backward(store_, c.encoder_blocks[std::size_t(k)], d_f);
            }
            // u = mix([embed(x)+pos, embed(r)+pos]) + temb
            d_temb += d_f.colwise().sum();
            const Mat d_in = mix_.backward(store_, c.mix_input, d_f);
            embed_.backward(store_, c.x_tokens, d_in.leftCols(d));
            embed_.backward(store_, c.r_tokens, d_in.rightCols(d));
        }

        const Mat d_act = time2_.backward(store_, c.time_act, d_temb);
        time1_.backward(store_, c.time_features, nn::silu_backward(c.time_pre, d_act));
    }

private:
    void check_shape(const LatentSequence &z, const char *what) const {
        const LatentSequence ref = cfg_.latent_shape();
        if (!z.same_shape(ref) || z.size() != ref.size()) {
            throw Error(ErrorCode::ShapeMismatch,
                        std::string(what) + " latent shape does not match the model configuration");
        }
    }

    LatentSequence run(const LatentSequence &x_t, double t, const LatentSequence *z_r,
                       Cache *out_cache) const {
        check_shape(x_t, "input");
        if (z_r) {
            check_shape(*z_r, "render");
        }
        Cache local;
        Cache &c = out_cache ? *out_cache : local;
        const int p = cfg_.patch_size;
        c.conditioned = z_r != nullptr;
        c.x = x_t;
        c.x_tokens = patchify(x_t, p);
        c.time_features = nn::sinusoidal(1000.0 * t, cfg_.time_embed_dim);
        c.time_pre = time1_.forward(store_, c.time_features);
        c.time_act = nn::silu(c.time_pre);
        c.temb = time2_.forward(store_, c.time_act);

        const Mat ex = embed_.forward(store_, c.x_tokens) + pos_;
        c.injection_trace.clear();
        c.features.clear();
        if (z_r) {
            c.r_tokens = patchify(*z_r, p);
            const Mat er = embed_.forward(store_, c.r_tokens) + pos_;
            c.mix_input.resize(ex.rows(), 2 * ex.cols());
            c.mix_input << ex, er;
            Mat u = mix_.forward(store_, c.mix_input);
            u.rowwise() += c.temb.row(0);
            c.encoder_blocks.resize(std::size_t(cfg_.encoder_layers));
            for (int k = 0; k < cfg_.encoder_layers; ++k) {
                u = encoder_[std::size_t(k)].forward(store_, u, c.encoder_blocks[std::size_t(k)]);
                c.features.push_back(u);
            }
        }

        Mat h = ex;
        h.rowwise() += c.temb.row(0);
        c.blocks.resize(std::size_t(cfg_.num_layers));
        c.layer_inputs.clear();
        c.layer_outputs.clear();
        std::vector<Mat> injections;
        for (const Mat &f : c.features) {
            injections.push_back(inject_.forward(store_, f));
        }
        for (int i = 0; i < cfg_.num_layers; ++i) {
            c.layer_inputs.push_back(h);
            h = blocks_[std::size_t(i)].forward(store_, h, c.blocks[std::size_t(i)]);
            if (z_r) {
                const int src = cfg_.injection_source(i);
                h += injections[std::size_t(src)];
                c.injection_trace.push_back(src);
            }
            c.layer_outputs.push_back(h);
        }
        c.final_norm = nn::layer_norm(h, c.final_ln);
        const Mat tokens = head_.forward(store_, c.final_norm);
        c.skip_scale = skip_.forward(store_, c.temb);

        LatentSequence eps = x_t;
        unpatchify_into(tokens, p, eps);
        const std::size_t per_channel = std::size_t(x_t.height) * x_t.width;
        for (std::uint32_t l = 0; l < x_t.frames; ++l) {
            for (std::uint32_t ch = 0; ch < x_t.channels; ++ch) {
                const std::size_t base = x_t.offset(l, ch, 0, 0);
                const double s = c.skip_scale(0, ch);
                for (std::size_t k = 0; k < per_channel; ++k) {
                    eps.data[base + k] += s * x_t.data[base + k];
                }
            }
        }
        return eps;
    }

    DiTConfig cfg_;
    nn::ParameterStore store_;
    std::size_t backbone_param_count_ = 0;
    nn::Linear embed_, time1_, time2_, head_, skip_, mix_, inject_;
    std::vector<nn::Block> blocks_, encoder_;
    Mat pos_;
};

} // namespace geoscaffold::diffusion
