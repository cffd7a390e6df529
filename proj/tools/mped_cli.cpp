// mped: skeleton-trajectory anomaly detection pipeline.
//
// Subcommands: gen, track, train, search, score, eval, report.
// Exit codes: 0 success, 1 internal failure, 2 usage/validation error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mped/config.hpp"
#include "mped/datagen.hpp"
#include "mped/model.hpp"
#include "mped/scoring.hpp"
#include "mped/tracking.hpp"
#include "mped/training.hpp"
#include "mped/trajectory.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_manifest(const std::string& out_dir, const std::string& subcommand,
                    const mped::Config& cfg,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs,
                    long long seed) {
    nlohmann::json j;
    j["tool_version"] = kVersion;
    j["subcommand"] = subcommand;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    nlohmann::json cfgj = nlohmann::json::object();
    for (const auto& [k, vals] : cfg.entries())
        cfgj[k] = vals.size() == 1 ? nlohmann::json(vals[0])
                                   : nlohmann::json(vals);
    j["config"] = std::move(cfgj);
    std::ofstream out(out_dir + "/manifest.json");
    if (!out) throw UsageError("cannot write manifest in " + out_dir);
    out << j.dump(2) << '\n';
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write " + path);
    return out;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw UsageError("cannot create output directory " + dir);
}

mped::Config load_config(const std::string& path) {
    if (path.empty()) return mped::Config{};
    if (!fs::exists(path)) throw UsageError("config file not found: " + path);
    return mped::Config::parse_file(path);
}

// anomaly = video:person:type:begin:end[:magnitude]
mped::AnomalySpec parse_anomaly(const std::string& s, std::string* video) {
    auto parts = mped::split(s, ':');
    if (parts.size() < 5 || parts.size() > 6)
        throw UsageError("bad anomaly spec '" + s +
                         "', expected video:person:type:begin:end[:mag]");
    *video = parts[0];
    mped::AnomalySpec a;
    a.person = static_cast<std::size_t>(std::stoll(parts[1]));
    a.type = mped::anomaly_type_from_string(parts[2]);
    a.begin = std::stoll(parts[3]);
    a.end = std::stoll(parts[4]);
    if (parts.size() == 6) a.magnitude = std::stod(parts[5]);
    return a;
}

int cmd_gen(const std::string& config_path, const std::string& out_dir,
            long long seed_override) {
    mped::Config cfg = load_config(config_path);
    if (seed_override >= 0)
        cfg.override_single("seed", std::to_string(seed_override));
    ensure_dir(out_dir);

    mped::SceneSpec scene;
    scene.width = cfg.get_double("width", scene.width);
    scene.height = cfg.get_double("height", scene.height);
    scene.walkers = static_cast<std::size_t>(cfg.get_int("walkers", 8));
    scene.speed_min = cfg.get_double("speed_min", scene.speed_min);
    scene.speed_max = cfg.get_double("speed_max", scene.speed_max);
    scene.gait_amp_min = cfg.get_double("gait_amp_min", scene.gait_amp_min);
    scene.gait_amp_max = cfg.get_double("gait_amp_max", scene.gait_amp_max);
    scene.gait_freq_min = cfg.get_double("gait_freq_min", scene.gait_freq_min);
    scene.gait_freq_max = cfg.get_double("gait_freq_max", scene.gait_freq_max);
    scene.base_height = cfg.get_double("base_height", scene.base_height);
    long long seed = cfg.get_int("seed", 0);
    long long frames = cfg.get_int("frames", 600);
    long long videos = cfg.get_int("videos", 1);
    std::string prefix = cfg.get("prefix", "video");

    std::map<std::string, std::vector<mped::AnomalySpec>> anomalies;
    for (const std::string& s : cfg.get_all("anomaly")) {
        std::string video;
        mped::AnomalySpec a = parse_anomaly(s, &video);
        anomalies[video].push_back(a);
    }

    auto det_out = open_output(out_dir + "/detections.jsonl");
    auto mask_out = open_output(out_dir + "/mask.csv");
    mask_out << "video_id,frame,label,include\n";
    for (long long v = 0; v < videos; ++v) {
        std::string vid = prefix + "_" + std::to_string(v);
        mped::SceneSpec vspec = scene;
        vspec.seed = static_cast<std::uint64_t>(seed) +
                     0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(v + 1);
        auto it = anomalies.find(vid);
        std::vector<mped::AnomalySpec> va =
            it == anomalies.end() ? std::vector<mped::AnomalySpec>{}
                                  : it->second;
        mped::GeneratedVideo gen = mped::generate(vspec, va, vid, frames);
        for (const mped::DetectionRecord& r : gen.detections) {
            nlohmann::json j;
            j["video_id"] = r.video_id;
            j["frame"] = r.frame;
            j["person_id"] = r.person_id;
            auto joints = nlohmann::json::array();
            for (const mped::Joint& p : r.skeleton.joints)
                joints.push_back({p.x, p.y});
            j["joints"] = std::move(joints);
            det_out << j.dump() << '\n';
        }
        for (const mped::MaskEntry& m : gen.mask)
            mask_out << m.video_id << ',' << m.frame << ',' << m.label << ','
                     << (m.include ? 1 : 0) << '\n';
    }
    write_manifest(out_dir, "gen", cfg, {config_path},
                   {out_dir + "/detections.jsonl", out_dir + "/mask.csv"},
                   seed);
    return 0;
}

int cmd_track(const std::string& in_path, const std::string& out_path,
              double gate, long long max_gap) {
    if (!fs::exists(in_path)) throw UsageError("input not found: " + in_path);
    std::vector<mped::DetectionRecord> dets;
    try {
        dets = mped::load_detections(in_path);
    } catch (const std::runtime_error& e) {
        throw UsageError(e.what());
    }
    mped::TrackingConfig tcfg;
    tcfg.gate = gate;
    tcfg.max_gap = static_cast<std::size_t>(max_gap);
    std::vector<mped::Trajectory> trajs = mped::track(dets, tcfg);
    auto out = open_output(out_path);
    mped::save_trajectories(trajs, out);
    mped::Config cfg;
    cfg.set("gate", std::to_string(gate));
    cfg.set("max_gap", std::to_string(max_gap));
    std::string out_dir = fs::path(out_path).parent_path().string();
    if (out_dir.empty()) out_dir = ".";
    write_manifest(out_dir, "track", cfg, {in_path}, {out_path}, -1);
    return 0;
}

struct TrainOpts {
    mped::ModelHyper hyper;
    mped::TrainConfig tcfg;
    mped::WindowConfig wcfg;
    mped::LossWeights weights;
};

TrainOpts read_train_opts(const mped::Config& cfg) {
    TrainOpts o;
    o.wcfg.T = static_cast<std::size_t>(cfg.get_int("T", 12));
    o.wcfg.s = static_cast<std::size_t>(cfg.get_int("s", 6));
    o.wcfg.P = static_cast<std::size_t>(cfg.get_int("P", 6));
    o.hyper.k = static_cast<std::size_t>(cfg.get_int("k", 17));
    o.hyper.H = static_cast<std::size_t>(cfg.get_int("H", 16));
    o.hyper.M = static_cast<std::size_t>(cfg.get_int("M", 8));
    o.tcfg.lr = cfg.get_double("lr", 1e-3);
    o.tcfg.batch = static_cast<std::size_t>(cfg.get_int("batch", 64));
    o.tcfg.epochs = static_cast<std::size_t>(cfg.get_int("epochs", 50));
    o.tcfg.patience = static_cast<std::size_t>(cfg.get_int("patience", 10));
    o.tcfg.split = cfg.get_double("split", 0.2);
    o.tcfg.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    o.weights.g = cfg.get_double("lambda_g", 1.0);
    o.weights.l = cfg.get_double("lambda_l", 1.0);
    o.weights.p = cfg.get_double("lambda_p", 1.0);
    try {
        o.wcfg.validate();
        o.tcfg.validate();
        o.weights.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return o;
}

std::vector<mped::Trajectory> load_traj_checked(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("input not found: " + path);
    try {
        return mped::load_trajectories(path);
    } catch (const std::runtime_error& e) {
        throw UsageError(e.what());
    }
}

void write_train_log(const std::vector<mped::EpochLog>& log,
                     const std::string& path) {
    auto out = open_output(path);
    out << "epoch,train_loss,val_loss,Lg,Ll,Lp\n";
    char buf[200];
    for (const mped::EpochLog& e : log) {
        std::snprintf(buf, sizeof buf, "%zu,%.12g,%.12g,%.12g,%.12g,%.12g",
                      e.epoch, e.train_loss, e.val_loss, e.val_components.g,
                      e.val_components.l, e.val_components.p);
        out << buf << '\n';
    }
}

int cmd_train(const std::string& in_path, const std::string& config_path,
              const std::string& out_dir, long long seed_override) {
    mped::Config cfg = load_config(config_path);
    if (seed_override >= 0)
        cfg.override_single("seed", std::to_string(seed_override));
    TrainOpts o = read_train_opts(cfg);
    std::vector<mped::Trajectory> corpus = load_traj_checked(in_path);
    ensure_dir(out_dir);

    mped::TrainResult res;
    try {
        res = mped::train(corpus, o.hyper, o.tcfg, o.wcfg, o.weights);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    res.checkpoint.save(out_dir + "/checkpoint.json");
    write_train_log(res.log, out_dir + "/train_log.csv");
    write_manifest(out_dir, "train", cfg, {in_path, config_path},
                   {out_dir + "/checkpoint.json", out_dir + "/train_log.csv"},
                   static_cast<long long>(o.tcfg.seed));
    std::printf("best_val=%.12g epochs_run=%zu\n", res.best_val,
                res.log.size());
    return 0;
}

int cmd_search(const std::string& in_path, const std::string& config_path,
               const std::string& ladder_arg, const std::string& out_dir,
               long long seed_override) {
    mped::Config cfg = load_config(config_path);
    if (seed_override >= 0)
        cfg.override_single("seed", std::to_string(seed_override));
    if (!ladder_arg.empty()) cfg.override_single("ladder", ladder_arg);
    TrainOpts o = read_train_opts(cfg);
    std::vector<std::size_t> ladder;
    for (const std::string& s : mped::split(cfg.get("ladder", "64,32,16,8"),
                                            ','))
        ladder.push_back(static_cast<std::size_t>(std::stoll(s)));
    std::vector<mped::Trajectory> corpus = load_traj_checked(in_path);
    ensure_dir(out_dir);

    mped::CapacityResult res;
    try {
        res = mped::capacity_search(corpus, o.hyper, ladder, o.tcfg, o.wcfg,
                                    o.weights);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    auto out = open_output(out_dir + "/capacity.csv");
    out << "H,best_val,selected\n";
    char buf[96];
    for (const auto& [H, loss] : res.losses) {
        std::snprintf(buf, sizeof buf, "%zu,%.12g,%d", H, loss,
                      H == res.selected_H ? 1 : 0);
        out << buf << '\n';
    }
    write_manifest(out_dir, "search", cfg, {in_path, config_path},
                   {out_dir + "/capacity.csv"},
                   static_cast<long long>(o.tcfg.seed));
    std::printf("selected_H=%zu\n", res.selected_H);
    return 0;
}

int cmd_score(const std::string& in_path, const std::string& ckpt_path,
              const std::string& out_path, long long stride) {
    if (!fs::exists(ckpt_path))
        throw UsageError("checkpoint not found: " + ckpt_path);
    mped::Checkpoint ckpt;
    try {
        ckpt = mped::Checkpoint::load(ckpt_path);
    } catch (const std::exception& e) {
        throw UsageError(std::string("bad checkpoint: ") + e.what());
    }
    std::vector<mped::Trajectory> trajs = load_traj_checked(in_path);

    mped::WindowConfig wcfg;
    wcfg.T = ckpt.params.hp.T;
    wcfg.P = ckpt.params.hp.P;
    wcfg.s = stride > 0 ? static_cast<std::size_t>(stride) : ckpt.stride;

    std::vector<mped::SkeletonScore> sk =
        mped::score_skeletons(trajs, ckpt, wcfg);
    std::vector<mped::ScoreSeries> series = mped::score_frames(sk);
    auto out = open_output(out_path);
    mped::save_scores(series, out);
    mped::Config cfg;
    cfg.set("stride", std::to_string(wcfg.s));
    std::string out_dir = fs::path(out_path).parent_path().string();
    if (out_dir.empty()) out_dir = ".";
    write_manifest(out_dir, "score", cfg, {in_path, ckpt_path}, {out_path},
                   -1);
    return 0;
}

int cmd_eval(const std::string& scores_path, const std::string& mask_path) {
    if (!fs::exists(scores_path))
        throw UsageError("scores not found: " + scores_path);
    if (!fs::exists(mask_path))
        throw UsageError("mask not found: " + mask_path);
    std::vector<mped::ScoreSeries> series;
    std::vector<mped::MaskEntry> mask;
    try {
        series = mped::load_scores(scores_path);
        mask = mped::load_mask(mask_path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    double auc;
    try {
        auc = mped::evaluate_auc(series, mask);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    std::printf("AUC %.4f\n", auc);
    return 0;
}

int cmd_report(const std::string& in_path, const std::string& ckpt_path,
               const std::string& out_path) {
    if (!fs::exists(ckpt_path))
        throw UsageError("checkpoint not found: " + ckpt_path);
    mped::Checkpoint ckpt;
    try {
        ckpt = mped::Checkpoint::load(ckpt_path);
    } catch (const std::exception& e) {
        throw UsageError(std::string("bad checkpoint: ") + e.what());
    }
    std::vector<mped::Trajectory> trajs = load_traj_checked(in_path);
    // Non-overlapping windows: one row per covered frame.
    mped::WindowConfig wcfg;
    wcfg.T = ckpt.params.hp.T;
    wcfg.P = 0;
    wcfg.s = ckpt.params.hp.T;

    auto out = open_output(out_path);
    out << "video_id,person_id,frame,stage,err_global,err_local,"
           "err_perceptual\n";
    char buf[160];
    for (const mped::Trajectory& traj : trajs) {
        for (const mped::Segment& seg : mped::segment_trajectory(traj, wcfg)) {
            for (const mped::ReportRow& r : mped::normality_report(ckpt, seg)) {
                std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g",
                              r.err_global, r.err_local, r.err_perceptual);
                out << traj.video_id << ',' << traj.person_id << ',' << r.frame
                    << ',' << (r.predicted ? "predict" : "reconstruct") << ','
                    << buf << '\n';
            }
        }
    }
    std::string out_dir = fs::path(out_path).parent_path().string();
    if (out_dir.empty()) out_dir = ".";
    write_manifest(out_dir, "report", mped::Config{}, {in_path, ckpt_path},
                   {out_path}, -1);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Skeleton-trajectory anomaly detection pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_path, in_path, ckpt_path, scores_path,
        mask_path, ladder;
    long long seed = -1, max_gap = 2, stride = 0;
    double gate = 1.5;

    auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    gen->add_option("--config", config_path, "scene config file");
    gen->add_option("--out", out_path, "output directory")->required();
    gen->add_option("--seed", seed, "seed override");

    auto* track = app.add_subcommand("track", "associate detections");
    track->add_option("--in", in_path, "detections JSONL")->required();
    track->add_option("--out", out_path, "trajectories JSONL")->required();
    track->add_option("--gate", gate, "association gate cost");
    track->add_option("--max-gap", max_gap, "bridgeable missing frames");

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--in", in_path, "trajectories JSONL")->required();
    train->add_option("--config", config_path, "training config file");
    train->add_option("--out", out_path, "output directory")->required();
    train->add_option("--seed", seed, "seed override");

    auto* search = app.add_subcommand("search", "capacity search");
    search->add_option("--in", in_path, "trajectories JSONL")->required();
    search->add_option("--config", config_path, "training config file");
    search->add_option("--ladder", ladder, "descending H list, e.g. 64,32,16");
    search->add_option("--out", out_path, "output directory")->required();
    search->add_option("--seed", seed, "seed override");

    auto* score = app.add_subcommand("score", "score trajectories");
    score->add_option("--in", in_path, "trajectories JSONL")->required();
    score->add_option("--checkpoint", ckpt_path, "model checkpoint")
        ->required();
    score->add_option("--out", out_path, "scores CSV")->required();
    score->add_option("--stride", stride, "scoring stride override");

    auto* eval = app.add_subcommand("eval", "frame-level ROC AUC");
    eval->add_option("--scores", scores_path, "scores CSV")->required();
    eval->add_option("--mask", mask_path, "ground-truth mask CSV")->required();

    auto* report = app.add_subcommand("report", "per-space error traces");
    report->add_option("--in", in_path, "trajectories JSONL")->required();
    report->add_option("--checkpoint", ckpt_path, "model checkpoint")
        ->required();
    report->add_option("--out", out_path, "report CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(config_path, out_path, seed);
        if (track->parsed()) return cmd_track(in_path, out_path, gate, max_gap);
        if (train->parsed())
            return cmd_train(in_path, config_path, out_path, seed);
        if (search->parsed())
            return cmd_search(in_path, config_path, ladder, out_path, seed);
        if (score->parsed())
            return cmd_score(in_path, ckpt_path, out_path, stride);
        if (eval->parsed()) return cmd_eval(scores_path, mask_path);
        if (report->parsed()) return cmd_report(in_path, ckpt_path, out_path);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
    return 1;
}
