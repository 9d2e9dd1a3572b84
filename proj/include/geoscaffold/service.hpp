// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/pipeline.hpp>

#include <httplib.h>

#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace geoscaffold::service {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class JobStatus { Queued, Running, Done, Failed };

inline const char *to_string(JobStatus s) {
    switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
    }
    return "unknown";
}

/// Snapshot of one job; the request itself never changes after submission.
struct JobInfo {
    std::string id;
    JobStatus status = JobStatus::Queued;
    std::size_t frame_count = 0;
    fs::path dir;
    json error;
};

/// In-memory job table with a bounded FIFO and a fixed worker pool. Each job writes only into
/// its own directory under `root`.
class JobRegistry {
  public:
    JobRegistry(fs::path root, std::shared_ptr<const PointMap> pointmap, int workers,
                std::size_t capacity)
        : mRoot(std::move(root)), mPointMap(std::move(pointmap)), mCapacity(capacity) {
        pipeline::ensure_dir(mRoot);
        for (int i = 0; i < std::max(workers, 1); ++i) {
            mWorkers.emplace_back([this] { work(); });
        }
    }

    JobRegistry(const JobRegistry &) = delete;
    JobRegistry &operator=(const JobRegistry &) = delete;

    ~JobRegistry() {
        {
            std::lock_guard lock(mMutex);
            mStopping = true;
        }
        mCv.notify_all();
        for (auto &w : mWorkers) {
            w.join();
        }
    }

    /// Job id, or nothing when the queue is full.
    std::optional<std::string> submit(pipeline::RenderRequest request) {
        std::lock_guard lock(mMutex);
        if (mQueue.size() >= mCapacity) {
            return std::nullopt;
        }
        char buf[32];
        std::snprintf(buf, sizeof buf, "job-%06zu", ++mCounter);
        Entry e;
        e.info.id = buf;
        e.info.dir = mRoot / buf;
        e.request = std::make_shared<const pipeline::RenderRequest>(std::move(request));
        mJobs.emplace(e.info.id, e);
        mQueue.push_back(e.info.id);
        mCv.notify_one();
        return e.info.id;
    }

    std::optional<JobInfo> get(const std::string &id) const {
        std::lock_guard lock(mMutex);
        const auto it = mJobs.find(id);
        if (it == mJobs.end()) {
            return std::nullopt;
        }
        return it->second.info;
    }

    /// Blocks until the job leaves the queued/running states; for tests and scripts.
    std::optional<JobInfo> wait(const std::string &id) const {
        std::unique_lock lock(mMutex);
        const auto it = mJobs.find(id);
        if (it == mJobs.end()) {
            return std::nullopt;
        }
        mDoneCv.wait(lock, [&] {
            return it->second.info.status == JobStatus::Done || it->second.info.status == JobStatus::Failed;
        });
        return it->second.info;
    }

  private:
    struct Entry {
        JobInfo info;
        std::shared_ptr<const pipeline::RenderRequest> request;
    };

    void work() {
        for (;;) {
            std::string id;
            std::shared_ptr<const pipeline::RenderRequest> request;
            {
                std::unique_lock lock(mMutex);
                mCv.wait(lock, [&] { return mStopping || !mQueue.empty(); });
                if (mStopping) {
                    return;
                }
                id = mQueue.front();
                mQueue.pop_front();
                auto &e = mJobs.at(id);
                e.info.status = JobStatus::Running;
                request = e.request;
            }
            JobStatus status = JobStatus::Done;
            json error;
            std::size_t frames = 0;
            const fs::path dir = mRoot / id;
            try {
                const auto rendered = pipeline::run_render(*mPointMap, *request);
                pipeline::write_render_outputs(dir, rendered);
                json_io::write_json_file(dir / "request.json", pipeline::render_request_to_json(*request));
                frames = rendered.size();
            } catch (const Error &e) {
                status = JobStatus::Failed;
                error = pipeline::error_to_json(e)["error"];
            } catch (const std::exception &e) {
                status = JobStatus::Failed;
                error = {{"code", "InternalError"}, {"message", e.what()}};
            }
            {
                std::lock_guard lock(mMutex);
                auto &info = mJobs.at(id).info;
                info.status = status;
                info.frame_count = frames;
                info.error = std::move(error);
            }
            mDoneCv.notify_all();
        }
    }

    fs::path mRoot;
    std::shared_ptr<const PointMap> mPointMap;
    std::size_t mCapacity;
    std::size_t mCounter = 0;
    bool mStopping = false;
    mutable std::mutex mMutex;
    std::condition_variable mCv;
    mutable std::condition_variable mDoneCv;
    std::deque<std::string> mQueue;
    std::map<std::string, Entry> mJobs;
    std::vector<std::thread> mWorkers;
};

struct ServiceOptions {
    fs::path workdir = "geoscaffold_work";
    int workers = 1;
    std::size_t queue_capacity = 64;
    /// Used only when the workdir holds no scene yet.
    std::uint64_t default_seed = 0;
};

/// Scene, render-job, metric and trajectory-preview endpoints over one working directory.
/// The scene lives in `workdir/scene` (generated on first start) and job output in
/// `workdir/jobs/<id>`.
class Service {
  public:
    explicit Service(ServiceOptions opts) : mOpts(std::move(opts)) {
        const fs::path scene = mOpts.workdir / "scene";
        if (!fs::exists(scene / "manifest.json")) {
            pipeline::write_synth(scene, mOpts.default_seed, synth::SceneConfig{});
        }
        mManifest = json_io::read_json_file(scene / "manifest.json");
        mTrajectory = json_io::read_json_file(scene / "trajectory.json");
        mTracks = json_io::read_json_file(scene / "tracks.json");
        mIntrinsics = json_io::trajectory_from_json(mTrajectory).intrinsics;
        mPreview = scene / "gt" / pipeline::frame_name(0);
        auto pm = std::make_shared<const PointMap>(load_pointmap(scene / "pointmap.gpm"));
        mJobs = std::make_unique<JobRegistry>(mOpts.workdir / "jobs", std::move(pm), mOpts.workers,
                                              mOpts.queue_capacity);
        routes();
    }

    ~Service() { stop(); }

    httplib::Server &server() { return mServer; }
    JobRegistry &jobs() { return *mJobs; }

    /// Blocks serving on host:port.
    bool listen(const std::string &host, int port) { return mServer.listen(host, port); }

    /// Binds an ephemeral port and serves on a background thread; returns the port.
    int start_background(const std::string &host = "127.0.0.1") {
        const int port = mServer.bind_to_any_port(host);
        mThread = std::thread([this] { mServer.listen_after_bind(); });
        mServer.wait_until_ready();
        return port;
    }

    void stop() {
        mServer.stop();
        if (mThread.joinable()) {
            mThread.join();
        }
    }

  private:
    static void send_json(httplib::Response &res, int status, const json &body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response &res, int status, const std::string &code,
                           const std::string &message, const std::string &path = {}) {
        json err{{"code", code}, {"message", message}};
        if (!path.empty()) {
            err["path"] = path;
        }
        send_json(res, status, {{"error", err}});
    }

    static json parse_body(const httplib::Request &req) {
        try {
            return json::parse(req.body);
        } catch (const json::parse_error &e) {
            throw Error(ErrorCode::SchemaViolation, std::string("malformed JSON: ") + e.what());
        }
    }

    /// Runs `fn`, turning library errors into 400 responses.
    template <typename Fn> static void guarded(httplib::Response &res, Fn &&fn) {
        try {
            fn();
        } catch (const Error &e) {
            send_json(res, 400, pipeline::error_to_json(e));
        } catch (const json::exception &e) {
            send_error(res, 400, "SchemaViolation", e.what());
        }
    }

    json job_json(const JobInfo &info) const {
        json j{{"schema_version", json_io::kSchemaVersion}, {"job_id", info.id}, {"status", to_string(info.status)}};
        if (info.status == JobStatus::Done) {
            json uris = json::array();
            for (std::size_t t = 0; t < info.frame_count; ++t) {
                uris.push_back("/jobs/" + info.id + "/frames/" + std::to_string(t) + ".png");
            }
            j["frame_count"] = info.frame_count;
            j["frames"] = uris;
        }
        if (info.status == JobStatus::Failed) {
            j["error"] = info.error;
        }
        return j;
    }

    /// Resolves a finished job's frame file, or writes the 404/409 response and returns nothing.
    std::optional<fs::path> job_file(httplib::Response &res, const std::string &id, const std::string &frame,
                                     const char *prefix, const char *ext) {
        const auto info = mJobs->get(id);
        if (!info) {
            send_error(res, 404, "NotFound", "unknown job " + id);
            return std::nullopt;
        }
        if (info->status != JobStatus::Done) {
            send_error(res, 409, "Conflict", std::string("job is ") + to_string(info->status));
            return std::nullopt;
        }
        const std::size_t t = std::stoul(frame);
        if (t >= info->frame_count) {
            send_error(res, 404, "NotFound", "frame " + frame + " out of range");
            return std::nullopt;
        }
        return info->dir / pipeline::frame_name(t, prefix, ext);
    }

    static void send_file(httplib::Response &res, const fs::path &p, const char *type) {
        const auto bytes = geoscaffold::detail::read_file(p);
        res.status = 200;
        res.set_content(std::string(bytes.begin(), bytes.end()), type);
    }

    void routes() {
        mServer.Get("/scene", [this](const httplib::Request &, httplib::Response &res) {
            json j = mManifest;
            j["preview"] = "/scene/preview.png";
            j["trajectory"] = mTrajectory;
            j["tracks"] = mTracks;
            send_json(res, 200, j);
        });
        mServer.Get("/scene/preview.png", [this](const httplib::Request &, httplib::Response &res) {
            send_file(res, mPreview, "image/png");
        });
        mServer.Post("/render", [this](const httplib::Request &req, httplib::Response &res) {
            guarded(res, [&] {
                auto request = pipeline::render_request_from_json(parse_body(req));
                const auto id = mJobs->submit(std::move(request));
                if (!id) {
                    send_error(res, 503, "QueueFull", "render queue is full");
                    return;
                }
                send_json(res, 202, {{"schema_version", json_io::kSchemaVersion}, {"job_id", *id},
                                     {"status_uri", "/jobs/" + *id}});
            });
        });
        mServer.Get(R"(/jobs/([A-Za-z0-9-]+))", [this](const httplib::Request &req, httplib::Response &res) {
            const auto info = mJobs->get(req.matches[1]);
            if (!info) {
                send_error(res, 404, "NotFound", "unknown job " + std::string(req.matches[1]));
                return;
            }
            send_json(res, 200, job_json(*info));
        });
        mServer.Get(R"(/jobs/([A-Za-z0-9-]+)/frames/(\d{1,6})\.png)",
                    [this](const httplib::Request &req, httplib::Response &res) {
                        if (auto p = job_file(res, req.matches[1], req.matches[2], "frame_", ".png")) {
                            send_file(res, *p, "image/png");
                        }
                    });
        mServer.Get(R"(/jobs/([A-Za-z0-9-]+)/frames/(\d{1,6})/valid\.png)",
                    [this](const httplib::Request &req, httplib::Response &res) {
                        if (auto p = job_file(res, req.matches[1], req.matches[2], "valid_", ".png")) {
                            send_file(res, *p, "image/png");
                        }
                    });
        mServer.Get(R"(/jobs/([A-Za-z0-9-]+)/frames/(\d{1,6})/depth\.bin)",
                    [this](const httplib::Request &req, httplib::Response &res) {
                        if (auto p = job_file(res, req.matches[1], req.matches[2], "depth_", ".bin")) {
                            send_file(res, *p, "application/octet-stream");
                        }
                    });
        mServer.Post("/metrics", [](const httplib::Request &req, httplib::Response &res) {
            guarded(res, [&] {
                const json body = parse_body(req);
                if (!body.is_object()) {
                    throw Error(ErrorCode::SchemaViolation, "request body must be a JSON object");
                }
                json_io::detail::check_version(body, "");
                const auto gt = json_io::trajectory_from_json(json_io::detail::require(body, "gt_traj", ""), "gt_traj");
                const auto pred =
                    json_io::trajectory_from_json(json_io::detail::require(body, "pred_traj", ""), "pred_traj");
                send_json(res, 200, pipeline::trajectory_metrics_to_json(gt, pred));
            });
        });
        mServer.Post("/interpolate", [this](const httplib::Request &req, httplib::Response &res) {
            guarded(res, [&] {
                const auto request = pipeline::interpolate_request_from_json(parse_body(req), mIntrinsics);
                send_json(res, 200, pipeline::interpolate_preview(request));
            });
        });
    }

    ServiceOptions mOpts;
    json mManifest, mTrajectory, mTracks;
    geometry::Intrinsics mIntrinsics;
    fs::path mPreview;
    std::unique_ptr<JobRegistry> mJobs;
    httplib::Server mServer;
    std::thread mThread;
};

} // namespace geoscaffold::service
