// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include <geoscaffold/diffusion/checkpoint.hpp>
#include <geoscaffold/diffusion/refine.hpp>
#include <geoscaffold/diffusion/train.hpp>
#include <geoscaffold/scene_synth.hpp>

#include <gtest/gtest.h>

#include <random>

namespace geoscaffold::diffusion {
namespace {

/// Small shapes for gradient and structure checks.
DiTConfig tiny(int layers = 2, int hidden = 16) {
    DiTConfig c;
    c.num_layers = layers;
    c.hidden_dim = hidden;
    c.num_heads = 2;
    c.mlp_dim = hidden;
    c.time_embed_dim = 8;
    c.patch_size = 2;
    c.latent_channels = 3;
    c.frames = 2;
    c.latent_height = 4;
    c.latent_width = 4;
    return c;
}

LatentSequence random_latent(const DiTConfig &c, std::mt19937_64 &rng) {
    return gaussian_like(c.latent_shape(), rng);
}

/// Moves every parameter away from its structured initialization.
void randomize(DiT &model, std::mt19937_64 &rng, double scale = 0.3) {
    std::normal_distribution<double> n(0.0, scale);
    for (auto &p : model.parameters().all()) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            p.value.data()[i] += n(rng);
        }
    }
}

std::vector<image::RgbImage> random_video(std::uint32_t w, std::uint32_t h, std::size_t n,
                                          std::mt19937_64 &rng) {
    std::uniform_int_distribution<int> b(0, 255);
    std::vector<image::RgbImage> v(n, image::RgbImage{w, h, {}});
    for (auto &img : v) {
        for (std::size_t i = 0; i < std::size_t(w) * h; ++i) {
            img.pixels.push_back({std::uint8_t(b(rng)), std::uint8_t(b(rng)), std::uint8_t(b(rng))});
        }
    }
    return v;
}

TEST(Codec, LosslessRoundTrip) {
    std::mt19937_64 rng(71);
    const auto video = random_video(96, 64, 3, rng);
    const LatentSequence z = encode_latent(video);
    EXPECT_EQ(z.channels, 192u);
    EXPECT_EQ(z.height, 8u);
    EXPECT_EQ(z.width, 12u);
    EXPECT_EQ(decode_latent(z), video);
    EXPECT_EQ(decode_latent(from_model_range(to_model_range(z))), video);
}

TEST(Codec, FullResolutionShape) {
    const std::vector<image::RgbImage> frame{
        image::RgbImage{720, 480, std::vector<Rgb8>(720 * 480, Rgb8{1, 2, 3})}};
    const LatentSequence z = encode_latent(frame);
    EXPECT_EQ(z.height, 60u);
    EXPECT_EQ(z.width, 90u);
    EXPECT_EQ(z.channels, 192u);
}

TEST(Codec, ConstantVideoGivesConstantChannels) {
    const std::vector<image::RgbImage> video(
        2, image::RgbImage{16, 8, std::vector<Rgb8>(16 * 8, Rgb8{51, 102, 255})});
    const LatentSequence z = encode_latent(video);
    for (std::uint32_t l = 0; l < z.frames; ++l) {
        for (std::uint32_t c = 0; c < z.channels; ++c) {
            const double expect = c < 64 ? 0.2 : (c < 128 ? 0.4 : 1.0);
            for (std::uint32_t y = 0; y < z.height; ++y) {
                for (std::uint32_t x = 0; x < z.width; ++x) {
                    ASSERT_DOUBLE_EQ(z.at(l, c, y, x), expect);
                }
            }
        }
    }
}

TEST(Codec, RejectsBadDimensions) {
    const std::vector<image::RgbImage> odd{image::RgbImage{20, 16, std::vector<Rgb8>(320)}};
    EXPECT_GS_ERROR(encode_latent(odd), BadDimensions);
    EXPECT_GS_ERROR(encode_latent(std::vector<image::RgbImage>{}), BadDimensions);
}

TEST(Schedule, UnitNormIdentityAndEndpoints) {
    std::mt19937_64 rng(72);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double t = u(rng);
        EXPECT_NEAR(alpha(t) * alpha(t) + sigma(t) * sigma(t), 1.0, 1e-12);
    }
    EXPECT_EQ(alpha(0.0), 1.0);
    EXPECT_EQ(sigma(0.0), 0.0);
    EXPECT_EQ(alpha(1.0), 0.0);
    EXPECT_EQ(sigma(1.0), 1.0);
}

TEST(ForwardNoise, EndpointsAndVariance) {
    std::mt19937_64 rng(73);
    const DiTConfig c = tiny();
    const LatentSequence z0 = random_latent(c, rng), eps = random_latent(c, rng);
    EXPECT_EQ(forward_noise(z0, 0.0, eps), z0);
    EXPECT_EQ(forward_noise(z0, 1.0, eps), eps);
    EXPECT_GS_ERROR(forward_noise(z0, 0.5, LatentSequence::zeros(1, 1, 1, 1)), ShapeMismatch);

    LatentSequence big = LatentSequence::zeros(1, 1, 1, 120000);
    for (double t : {0.1, 0.5, 0.9}) {
        const LatentSequence a = gaussian_like(big, rng), b = gaussian_like(big, rng);
        const LatentSequence x = forward_noise(a, t, b);
        double mean = 0.0, sq = 0.0;
        for (double v : x.data) {
            mean += v;
            sq += v * v;
        }
        mean /= double(x.size());
        const double var = sq / double(x.size()) - mean * mean;
        EXPECT_NEAR(var, 1.0, 0.01) << t;
    }
}

TEST(DiT, OutputShapeAndDeterminism) {
    std::mt19937_64 rng(74);
    const DiTConfig c = tiny(4);
    const DiT a(c, 5), b(c, 5);
    const LatentSequence x = random_latent(c, rng);
    const LatentSequence ya = a.backbone_forward(x, 0.3), yb = b.backbone_forward(x, 0.3);
    EXPECT_TRUE(ya.same_shape(x));
    EXPECT_EQ(ya, yb);
    EXPECT_EQ(ya, a.backbone_forward(x, 0.3));
    EXPECT_GS_ERROR(a.backbone_forward(LatentSequence::zeros(1, 3, 4, 4), 0.3), ShapeMismatch);
    EXPECT_GS_ERROR(a.conditioned_forward(x, 0.3, LatentSequence::zeros(2, 3, 2, 4)), ShapeMismatch);
}

TEST(DiT, ConfigValidation) {
    DiTConfig odd = tiny(3);
    EXPECT_GS_ERROR(odd.validate(), InvalidArgument);
    DiTConfig enc = tiny();
    enc.encoder_layers = 3;
    EXPECT_GS_ERROR(enc.validate(), InvalidArgument);
    DiTConfig heads = tiny();
    heads.num_heads = 3;
    EXPECT_GS_ERROR(heads.validate(), InvalidArgument);
}

TEST(DiT, ZeroInitInjectionMatchesBackbone) {
    std::mt19937_64 rng(75);
    for (const DiTConfig &c : {tiny(2), tiny(4), DiTConfig{}}) {
        DiT model(c, 6);
        randomize(model, rng, 0.05);
        model.reset_encoder();
        const LatentSequence x = random_latent(c, rng), r = random_latent(c, rng);
        for (double t : {0.05, 0.5, 0.95}) {
            const LatentSequence a = model.backbone_forward(x, t);
            const LatentSequence b = model.conditioned_forward(x, t, r);
            double worst = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
            }
            EXPECT_LT(worst, 1e-12);
        }
    }
}

TEST(DiT, InjectionIndexMapping) {
    std::mt19937_64 rng(76);
    for (int m : {4, 8, 12}) {
        const DiTConfig c = tiny(m);
        DiT model(c, 7);
        randomize(model, rng);
        const LatentSequence x = random_latent(c, rng), r = random_latent(c, rng);
        DiT::Cache base;
        model.conditioned_forward(x, 0.4, r, &base);
        ASSERT_EQ(base.injection_trace.size(), std::size_t(m));
        for (int i = 0; i < m; ++i) {
            EXPECT_EQ(base.injection_trace[std::size_t(i)], i < m / 2 ? 0 : 1) << "M=" << m << " i=" << i;
        }

        // Perturbing only the second encoder block leaves the first half of the backbone alone.
        DiT perturbed = model;
        for (auto &p : perturbed.parameters().all()) {
            if (p.name.rfind("encoder.blocks.1.", 0) == 0) {
                p.value.array() += 0.5;
            }
        }
        DiT::Cache moved;
        perturbed.conditioned_forward(x, 0.4, r, &moved);
        for (int i = 0; i < m; ++i) {
            const double diff = (moved.layer_outputs[std::size_t(i)] - base.layer_outputs[std::size_t(i)]).norm();
            if (i < m / 2) {
                EXPECT_EQ(diff, 0.0) << "M=" << m << " layer " << i;
            } else {
                EXPECT_GT(diff, 1e-6) << "M=" << m << " layer " << i;
            }
        }
    }
}

double loss_at(const DiT &model, const LatentSequence &x, double t, const LatentSequence &r,
               const LatentSequence &eps, bool conditioned) {
    return eps_loss(predict(model, x, t, conditioned ? &r : nullptr), eps);
}

/// Central differences on a sample of entries from each parameter tensor.
void check_gradients(DiT &model, TrainMode mode, bool conditioned, std::mt19937_64 &rng) {
    const DiTConfig &c = model.config();
    const LatentSequence x = random_latent(c, rng), r = random_latent(c, rng), eps = random_latent(c, rng);
    const double t = 0.37;
    model.set_train_mode(mode);
    model.parameters().zero_grad();
    DiT::Cache cache;
    LatentSequence d_eps;
    eps_loss(predict(model, x, t, conditioned ? &r : nullptr, &cache), eps, &d_eps);
    model.backward(cache, d_eps);

    const double h = 1e-5;
    std::size_t checked = 0;
    for (std::size_t id = 0; id < model.parameters().size(); ++id) {
        auto &p = model.parameters()[id];
        if (!p.trainable) {
            continue;
        }
        std::uniform_int_distribution<Eigen::Index> pick(0, p.value.size() - 1);
        Eigen::VectorXd analytic(6), numeric(6);
        for (int k = 0; k < 6; ++k) {
            const Eigen::Index e = pick(rng);
            const double orig = p.value.data()[e];
            p.value.data()[e] = orig + h;
            const double up = loss_at(model, x, t, r, eps, conditioned);
            p.value.data()[e] = orig - h;
            const double down = loss_at(model, x, t, r, eps, conditioned);
            p.value.data()[e] = orig;
            numeric(k) = (up - down) / (2 * h);
            analytic(k) = p.grad.data()[e];
        }
        const double denom = std::max(numeric.norm(), 1e-8);
        EXPECT_LT((analytic - numeric).norm() / denom, 1e-4) << p.name;
        ++checked;
    }
    EXPECT_GT(checked, 0u);
}

TEST(DiT, EncoderGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(77);
    DiT model(tiny(2, 16), 8);
    randomize(model, rng);
    check_gradients(model, TrainMode::Encoder, true, rng);
}

TEST(DiT, BackboneGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(78);
    DiT model(tiny(2, 16), 9);
    randomize(model, rng);
    check_gradients(model, TrainMode::Backbone, false, rng);
}

TEST(DiT, FrozenBackboneReceivesExactlyZeroGradient) {
    std::mt19937_64 rng(79);
    const DiTConfig c = tiny(4);
    DiT model(c, 10);
    randomize(model, rng);
    const LatentSequence x = random_latent(c, rng), r = random_latent(c, rng), eps = random_latent(c, rng);

    auto gradients = [&](TrainMode mode) {
        model.set_train_mode(mode);
        model.parameters().zero_grad();
        DiT::Cache cache;
        LatentSequence d_eps;
        eps_loss(model.conditioned_forward(x, 0.6, r, &cache), eps, &d_eps);
        model.backward(cache, d_eps);
        double backbone = 0.0, encoder = 0.0;
        for (std::size_t i = 0; i < model.parameters().size(); ++i) {
            const double g = model.parameters()[i].grad.cwiseAbs().maxCoeff();
            (model.is_backbone_parameter(i) ? backbone : encoder) += g;
        }
        return std::make_pair(backbone, encoder);
    };
    const auto frozen = gradients(TrainMode::Encoder);
    EXPECT_EQ(frozen.first, 0.0);
    EXPECT_GT(frozen.second, 0.0);
    // Control: the same pass with the backbone unfrozen does produce backbone gradients.
    const auto open = gradients(TrainMode::Backbone);
    EXPECT_GT(open.first, 0.0);
}

TEST(DiT, DefaultTrainableFractionAndCloneStructure) {
    const DiT model(DiTConfig{}, 11);
    DiT copy = model;
    copy.set_train_mode(TrainMode::Encoder);
    const double fraction =
        double(copy.parameters().count(true)) / double(copy.parameters().count(false));
    EXPECT_LE(fraction, 0.10);
    for (int b = 0; b < 2; ++b) {
        for (const char *part : {"qkv.weight", "proj.weight", "fc1.weight", "fc2.bias"}) {
            const std::string suffix = std::to_string(b) + "." + part;
            const auto *enc = model.parameters().find("encoder.blocks." + suffix);
            const auto *bb = model.parameters().find("backbone.blocks." + suffix);
            ASSERT_TRUE(enc && bb);
            EXPECT_EQ(enc->value, bb->value);
        }
    }
    EXPECT_EQ(model.parameters().find("encoder.blocks.2.qkv.weight"), nullptr);
    EXPECT_EQ(model.parameters().find("encoder.inject.weight")->value.norm(), 0.0);
}

TEST(Train, ZeroStepsKeepsLossAndBackboneFrozen) {
    std::mt19937_64 rng(80);
    const DiTConfig c = tiny(4);
    DiT model(c, 12);
    randomize(model, rng, 0.1);
    model.reset_encoder();
    std::vector<TrainingExample> data;
    for (int i = 0; i < 3; ++i) {
        data.push_back({random_latent(c, rng), random_latent(c, rng)});
    }
    const double uncond = evaluate_eps_mse(model, data, false);
    TrainOptions opts;
    opts.steps = 0;
    train(model, data, TrainMode::Encoder, opts);
    EXPECT_EQ(evaluate_eps_mse(model, data, true), uncond);

    const std::uint64_t before = backbone_checksum(model);
    opts.steps = 5;
    const TrainResult r = train(model, data, TrainMode::Encoder, opts);
    EXPECT_EQ(r.curve.size(), 5u);
    EXPECT_EQ(backbone_checksum(model), before);
    EXPECT_NE(model.parameters().find("encoder.inject.weight")->value.norm(), 0.0);
}

TEST(Train, BackboneLossDecreasesOnFixedData) {
    std::mt19937_64 rng(81);
    const DiTConfig c = tiny(2);
    DiT model(c, 13);
    std::vector<TrainingExample> data;
    const LatentSequence pattern = random_latent(c, rng);
    for (int i = 0; i < 2; ++i) {
        data.push_back({affine(pattern, 0.5, 0.0), pattern});
    }
    const double before = evaluate_eps_mse(model, data, false, 16);
    TrainOptions opts;
    opts.steps = 300;
    opts.learning_rate = 3e-3;
    train(model, data, TrainMode::Backbone, opts);
    EXPECT_LT(evaluate_eps_mse(model, data, false, 16), 0.7 * before);
}

TEST(Train, NonFiniteLossAborts) {
    std::mt19937_64 rng(82);
    const DiTConfig c = tiny(2);
    DiT model(c, 14);
    TrainingExample ex{random_latent(c, rng), random_latent(c, rng)};
    ex.clean.data[3] = std::numeric_limits<double>::quiet_NaN();
    const std::vector<TrainingExample> data{ex};
    TrainOptions opts;
    opts.steps = 3;
    EXPECT_GS_ERROR(train(model, data, TrainMode::Backbone, opts), NonFiniteLoss);
}

TEST(Sampler, SingleStepIsUnrolledFormula) {
    std::mt19937_64 rng(83);
    const DiTConfig c = tiny(2);
    DiT model(c, 15);
    randomize(model, rng);
    const LatentSequence zT = random_latent(c, rng), r = random_latent(c, rng);
    const LatentSequence eps = model.conditioned_forward(zT, 1.0, r);
    for (bool clip : {false, true}) {
        SamplerOptions opts;
        opts.steps = 1;
        opts.clip_x0 = clip;
        const LatentSequence out = sample(model, zT, &r, opts);
        for (std::size_t i = 0; i < out.size(); ++i) {
            double expect = (zT.data[i] - sigma(1.0) * eps.data[i]) / std::max(alpha(1.0), opts.eps_floor);
            if (clip) {
                expect = std::clamp(expect, -1.0, 1.0);
            }
            ASSERT_EQ(out.data[i], expect);
        }
    }
}

TEST(Sampler, DeterministicAndShapePreserving) {
    std::mt19937_64 rng(84);
    const DiTConfig c = tiny(2);
    DiT model(c, 16);
    randomize(model, rng, 0.1);
    const LatentSequence zT = random_latent(c, rng), r = random_latent(c, rng);
    SamplerOptions opts;
    opts.steps = 7;
    const LatentSequence a = sample(model, zT, &r, opts), b = sample(model, zT, &r, opts);
    EXPECT_EQ(a, b);
    EXPECT_TRUE(a.same_shape(zT));
    EXPECT_GS_ERROR(sample(model, zT, &r, SamplerOptions{0}), InvalidArgument);
    const LatentSequence wrong = LatentSequence::zeros(1, 3, 4, 4);
    EXPECT_GS_ERROR(sample(model, zT, &wrong, SamplerOptions{1}), ShapeMismatch);
}

TEST(Checkpoint, RoundTripPreservesFloat32Parameters) {
    std::mt19937_64 rng(85);
    const DiTConfig c = tiny(4);
    DiT model(c, 17);
    randomize(model, rng);
    geoscaffold::testing::TempDir dir;
    save_checkpoint(model, dir / "m.ckpt");
    const DiT back = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(back.config(), c);
    ASSERT_EQ(back.parameters().size(), model.parameters().size());
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        const Mat expect = model.parameters()[i].value.cast<float>().cast<double>();
        EXPECT_EQ(back.parameters()[i].value, expect) << model.parameters()[i].name;
    }
    auto bytes = encode_checkpoint(model);
    bytes[0] = 'X';
    EXPECT_GS_ERROR(decode_checkpoint(bytes), BadMagic);
    bytes[0] = 'G';
    bytes.resize(bytes.size() - 3);
    EXPECT_GS_ERROR(decode_checkpoint(bytes), TruncatedFile);
}

TEST(LossCsv, HeaderAndRows) {
    geoscaffold::testing::TempDir dir;
    const std::vector<LossPoint> curve{{0, 1.5}, {1, 0.25}};
    write_loss_csv(dir / "loss.csv", curve);
    const auto bytes = geoscaffold::detail::read_file(dir / "loss.csv");
    EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "step,loss\n0,1.5\n1,0.25\n");
}

TEST(Refine, KeepsFrameCountAndSize) {
    std::mt19937_64 rng(86);
    DiTConfig c = tiny(2);
    c.latent_channels = int(kLatentChannels);
    c.latent_height = 2;
    c.latent_width = 2;
    c.patch_size = 1;
    const DiT model(c, 18);
    const auto video = random_video(40, 24, 3, rng);
    SamplerOptions opts;
    opts.steps = 2;
    const auto out = refine_video(model, video, opts, 3);
    ASSERT_EQ(out.size(), 3u);
    for (const auto &f : out) {
        EXPECT_EQ(f.width, 40u);
        EXPECT_EQ(f.height, 24u);
    }
    EXPECT_EQ(out, refine_video(model, video, opts, 3));
}

TEST(ResizeArea, IdentityAndAveraging) {
    const image::RgbImage img{2, 2, {Rgb8{0, 0, 0}, Rgb8{100, 0, 0}, Rgb8{0, 100, 0}, Rgb8{100, 100, 200}}};
    EXPECT_EQ(resize_area(img, 2, 2), img);
    const image::RgbImage one = resize_area(img, 1, 1);
    EXPECT_EQ(one.pixels[0], (Rgb8{50, 50, 50}));
}

} // namespace
} // namespace geoscaffold::diffusion
