// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#include <geoscaffold/pipeline.hpp>
#include <geoscaffold/service.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <iostream>

using namespace geoscaffold;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void print_json(const json &j, const std::string &out) {
    if (out.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        json_io::write_json_file(out, j);
    }
}

int fail(const json &err) {
    std::cerr << err.dump() << '\n';
    return 1;
}

service::Service *g_service = nullptr;

void on_signal(int) {
    if (g_service) {
        g_service->server().stop();
    }
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"GeoScaffold: point-map rendering, pose estimation and toy video refinement"};
    app.require_subcommand(1);

    // synth
    std::uint64_t seed = 0;
    std::string config_path, out_dir;
    auto *synth = app.add_subcommand("synth", "Generate a synthetic scene package");
    synth->add_option("--seed", seed, "Scene seed");
    synth->add_option("--config", config_path, "Scene config JSON (defaults otherwise)")->check(CLI::ExistingFile);
    synth->add_option("--out", out_dir, "Output directory")->required();

    // render
    std::string pointmap_path, traj_path, edits_path, request_out;
    pipeline::RenderSettings settings;
    auto *render = app.add_subcommand("render", "Render a point map along a trajectory");
    render->add_option("--pointmap", pointmap_path, "GPM1 point map")->required()->check(CLI::ExistingFile);
    render->add_option("--traj", traj_path, "Trajectory JSON")->required()->check(CLI::ExistingFile);
    render->add_option("--edits", edits_path, "Edit tracks JSON")->check(CLI::ExistingFile);
    render->add_option("--tau", settings.tau, "Confidence threshold")->capture_default_str();
    render->add_option("--splat-radius", settings.options.splat_radius, "Splat half-width in pixels")
        ->capture_default_str();
    render->add_option("--depth-min", settings.options.depth_min)->capture_default_str();
    render->add_option("--depth-max", settings.options.depth_max)->capture_default_str();
    render->add_option("--request-out", request_out, "Also write the equivalent POST /render body");
    render->add_option("--out", out_dir, "Output directory")->required();

    // estimate-pose
    std::string matches_path, pose_out;
    double pose_tau = kDefaultConfidenceThreshold;
    auto *pose = app.add_subcommand("estimate-pose", "Estimate a camera pose from 2D-3D matches");
    pose->add_option("--pointmap", pointmap_path, "GPM1 point map")->required()->check(CLI::ExistingFile);
    pose->add_option("--matches", matches_path, "Matches JSON")->required()->check(CLI::ExistingFile);
    pose->add_option("--tau", pose_tau, "Confidence threshold for pixel matches")->capture_default_str();
    pose->add_option("--out", pose_out, "Pose JSON (stdout otherwise)");

    // synth-clips
    std::size_t clip_count = 200;
    std::uint64_t first_seed = 0;
    auto *clips = app.add_subcommand("synth-clips", "Write ground-truth/render clip pairs for training");
    clips->add_option("--count", clip_count)->capture_default_str();
    clips->add_option("--first-seed", first_seed)->capture_default_str();
    clips->add_option("--out", out_dir, "Output directory")->required();

    // train-toy
    std::string data_dir, ckpt_path, backbone_path;
    diffusion::TrainOptions topts;
    int backbone_steps = -1;
    auto *train = app.add_subcommand("train-toy", "Pretrain the toy backbone, then train the condition encoder");
    train->add_option("--data", data_dir, "Directory of clip_XXXX folders")->required()->check(CLI::ExistingDirectory);
    train->add_option("--steps", topts.steps, "Encoder training steps")->capture_default_str();
    train->add_option("--backbone-steps", backbone_steps, "Backbone pretraining steps (default: --steps)");
    train->add_option("--backbone", backbone_path, "Start from this checkpoint's backbone instead of pretraining")
        ->check(CLI::ExistingFile);
    train->add_option("--lr", topts.learning_rate)->capture_default_str();
    train->add_option("--batch", topts.batch_size)->capture_default_str();
    train->add_option("--seed", topts.seed)->capture_default_str();
    train->add_option("--out", ckpt_path, "Checkpoint path")->required();

    // refine
    std::string renders_dir;
    diffusion::SamplerOptions sopts;
    std::uint64_t refine_seed = 0;
    auto *refine = app.add_subcommand("refine", "Refine rendered frames with a trained checkpoint");
    refine->add_option("--ckpt", ckpt_path, "Checkpoint")->required()->check(CLI::ExistingFile);
    refine->add_option("--renders", renders_dir, "Directory of frame_XXXX.png")->required()->check(CLI::ExistingDirectory);
    refine->add_option("--steps", sopts.steps, "Sampler steps")->capture_default_str();
    refine->add_option("--seed", refine_seed, "Noise seed")->capture_default_str();
    refine->add_option("--out", out_dir, "Output directory")->required();

    // evaluate
    std::string gt_dir, pred_dir, gt_traj, pred_traj, eval_out;
    auto *evaluate = app.add_subcommand("evaluate", "Trajectory and image metrics");
    evaluate->add_option("--gt", gt_dir, "Ground-truth frames")->required()->check(CLI::ExistingDirectory);
    evaluate->add_option("--pred", pred_dir, "Predicted frames")->required()->check(CLI::ExistingDirectory);
    evaluate->add_option("--gt-traj", gt_traj)->required()->check(CLI::ExistingFile);
    evaluate->add_option("--pred-traj", pred_traj)->required()->check(CLI::ExistingFile);
    evaluate->add_option("--out", eval_out, "Metrics JSON (stdout otherwise)");

    // serve
    service::ServiceOptions svc;
    int port = 8080;
    std::string host = "127.0.0.1";
    if (const char *env = std::getenv("GEOSCAFFOLD_WORKDIR")) {
        svc.workdir = env;
    }
    std::string workdir = svc.workdir.string();
    auto *serve = app.add_subcommand("serve", "HTTP render service");
    serve->add_option("--port", port)->capture_default_str();
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--workdir", workdir, "Working directory (env GEOSCAFFOLD_WORKDIR)")->capture_default_str();
    serve->add_option("--workers", svc.workers)->capture_default_str();
    serve->add_option("--queue", svc.queue_capacity, "Pending job limit")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        return fail({{"error", {{"code", "UsageError"}, {"message", e.what()}}}});
    }

    try {
        if (*synth) {
            synth::SceneConfig cfg;
            if (!config_path.empty()) {
                cfg = json_io::scene_config_from_json(json_io::read_json_file(config_path));
            }
            pipeline::write_synth(out_dir, seed, cfg);
        } else if (*render) {
            pipeline::RenderRequest req;
            req.trajectory = json_io::trajectory_from_json(json_io::read_json_file(traj_path));
            if (!edits_path.empty()) {
                req.edits = json_io::edit_tracks_from_json(json_io::read_json_file(edits_path));
            }
            req.settings = settings;
            // Round trip through the wire schema so both transports validate identically.
            const json body = pipeline::render_request_to_json(req);
            req = pipeline::render_request_from_json(body);
            if (!request_out.empty()) {
                json_io::write_json_file(request_out, body);
            }
            pipeline::write_render_outputs(out_dir, pipeline::run_render(load_pointmap(pointmap_path), req));
        } else if (*pose) {
            const PointMap pm = load_pointmap(pointmap_path);
            const auto set = pipeline::matches_from_json(json_io::read_json_file(matches_path), pm, pose_tau);
            const auto est = geometry::estimate_pose(set.matches, set.intrinsics,
                                                     set.init.value_or(geometry::CameraPose::identity()));
            print_json(pipeline::pose_estimate_to_json(est, set), pose_out);
        } else if (*clips) {
            pipeline::write_training_clips(out_dir, first_seed, clip_count);
        } else if (*train) {
            const auto data = pipeline::load_training_clips(data_dir);
            const fs::path ckpt(ckpt_path);
            const fs::path stem = ckpt.parent_path() / ckpt.stem();
            diffusion::DiT model;
            if (!backbone_path.empty()) {
                model = diffusion::load_checkpoint(backbone_path);
                if (!(model.config() == pipeline::config_for_clips(data.front()))) {
                    throw Error(ErrorCode::ShapeMismatch, "checkpoint config does not match the clip shape");
                }
            } else {
                model = diffusion::DiT(pipeline::config_for_clips(data.front()), topts.seed);
                diffusion::TrainOptions bopts = topts;
                bopts.steps = backbone_steps < 0 ? topts.steps : backbone_steps;
                const auto pre = diffusion::train(model, data, diffusion::TrainMode::Backbone, bopts);
                diffusion::write_loss_csv(stem.string() + ".backbone_loss.csv", pre.curve);
            }
            model.reset_encoder();
            const auto result = diffusion::train(model, data, diffusion::TrainMode::Encoder, topts);
            diffusion::write_loss_csv(stem.string() + ".loss.csv", result.curve);
            diffusion::save_checkpoint(model, ckpt);
        } else if (*refine) {
            const auto model = diffusion::load_checkpoint(ckpt_path);
            const auto frames = pipeline::load_frames(renders_dir);
            pipeline::write_frames(out_dir, diffusion::refine_video(model, frames, sopts, refine_seed));
        } else if (*evaluate) {
            const auto e = pipeline::evaluate(pipeline::load_frames(gt_dir), pipeline::load_frames(pred_dir),
                                              json_io::trajectory_from_json(json_io::read_json_file(gt_traj)),
                                              json_io::trajectory_from_json(json_io::read_json_file(pred_traj)));
            print_json(pipeline::evaluation_to_json(e), eval_out);
        } else if (*serve) {
            svc.workdir = workdir;
            service::Service server(svc);
            g_service = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on " << host << ':' << port << ", workdir " << svc.workdir << '\n';
            if (!server.listen(host, port)) {
                g_service = nullptr;
                throw Error(ErrorCode::IoFailure, "cannot listen on " + host + ":" + std::to_string(port));
            }
            g_service = nullptr;
        }
    } catch (const Error &e) {
        return fail(pipeline::error_to_json(e));
    } catch (const std::exception &e) {
        return fail({{"error", {{"code", "InternalError"}, {"message", e.what()}}}});
    }
    return 0;
}
