#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mped/scoring.hpp"
#include "mped/trajectory.hpp"

namespace mped {

/// Synthetic scene of constant-velocity walkers with sinusoidal gait.
struct SceneSpec {
    double width = 856, height = 480;
    std::size_t walkers = 8;
    double speed_min = 1.0, speed_max = 3.0;    // pixels per frame
    double gait_amp_min = 0.04, gait_amp_max = 0.10;  // local box units
    double gait_freq_min = 0.06, gait_freq_max = 0.12;  // cycles per frame
    double base_height = 120;  // box height at mid-depth, pixels
    std::uint64_t seed = 0;
};

enum class AnomalyType { Run, FrozenPose, DirectionReversal, ScaleJump };

inline AnomalyType anomaly_type_from_string(const std::string& s) {
    if (s == "run") return AnomalyType::Run;
    if (s == "frozen") return AnomalyType::FrozenPose;
    if (s == "reverse") return AnomalyType::DirectionReversal;
    if (s == "scale") return AnomalyType::ScaleJump;
    throw std::invalid_argument("unknown anomaly type: " + s);
}

struct AnomalySpec {
    AnomalyType type = AnomalyType::Run;
    std::size_t person = 0;
    std::int64_t begin = 0, end = 0;  // inclusive frame interval
    double magnitude = 3.0;           // speed/scale multiplier
};

struct GeneratedVideo {
    std::vector<DetectionRecord> detections;
    std::vector<MaskEntry> mask;
};

namespace detail {

/// COCO-style 17-joint canonical pose in box-local coordinates
/// (image y grows downward).
inline const std::vector<Joint>& canonical_pose() {
    static const std::vector<Joint> pose = {
        {0.00, -0.45},   // nose
        {-0.05, -0.48}, {0.05, -0.48},  // eyes
        {-0.09, -0.44}, {0.09, -0.44},  // ears
        {-0.16, -0.28}, {0.16, -0.28},  // shoulders
        {-0.20, -0.10}, {0.20, -0.10},  // elbows
        {-0.22, 0.06},  {0.22, 0.06},   // wrists
        {-0.10, 0.05},  {0.10, 0.05},   // hips
        {-0.11, 0.26},  {0.11, 0.26},   // knees
        {-0.12, 0.48},  {0.12, 0.48},   // ankles
    };
    return pose;
}

struct WalkerState {
    double x = 0, y = 0;
    double vx = 0, vy = 0;
    double gait_amp = 0, gait_freq = 0, phase = 0;
    double scale = 1.0;
};

inline SkeletonFrame render_walker(const WalkerState& w, const SceneSpec& sc,
                                   double gait_phase) {
    // Depth cue: boxes grow toward the bottom of the frame.
    double depth = 0.5 + w.y / sc.height;
    double h = sc.base_height * depth * w.scale;
    double bw = 0.45 * h;
    double swing = std::sin(2.0 * 3.14159265358979323846 * gait_phase);
    SkeletonFrame f;
    const auto& pose = canonical_pose();
    f.joints.reserve(pose.size());
    for (std::size_t i = 0; i < pose.size(); ++i) {
        Joint j = pose[i];
        // Limbs swing in opposite phase left/right: wrists 9/10,
        // knees 13/14, ankles 15/16.
        double side = (i % 2 == 1) ? 1.0 : -1.0;
        if (i >= 13) j.x += side * w.gait_amp * swing;          // legs
        else if (i == 9 || i == 10) j.x -= side * w.gait_amp * swing;  // arms
        f.joints.push_back({j.x * bw + w.x, j.y * h + w.y});
    }
    return f;
}

}  // namespace detail

/// Generates one video of the scene. Deterministic in (spec.seed, video_id):
/// the same inputs produce byte-identical serialized output.
inline GeneratedVideo generate(const SceneSpec& scene,
                               const std::vector<AnomalySpec>& anomalies,
                               const std::string& video_id,
                               std::int64_t video_length) {
    for (const AnomalySpec& a : anomalies) {
        if (a.begin > a.end || a.begin < 0 || a.end >= video_length)
            throw std::invalid_argument("anomaly interval out of video bounds");
        if (a.person >= scene.walkers)
            throw std::invalid_argument("anomaly person out of range");
        for (const AnomalySpec& b : anomalies)
            if (&a != &b && a.person == b.person && a.begin <= b.end &&
                b.begin <= a.end)
                throw std::invalid_argument(
                    "overlapping anomaly intervals for person " +
                    std::to_string(a.person));
    }

    std::mt19937_64 rng(scene.seed);
    auto uniform = [&](double lo, double hi) {
        return lo + ((rng() >> 11) * 0x1.0p-53) * (hi - lo);
    };

    std::vector<detail::WalkerState> walkers(scene.walkers);
    for (detail::WalkerState& w : walkers) {
        w.x = uniform(0.15 * scene.width, 0.85 * scene.width);
        w.y = uniform(0.25 * scene.height, 0.85 * scene.height);
        double speed = uniform(scene.speed_min, scene.speed_max);
        double heading = uniform(0, 2.0 * 3.14159265358979323846);
        w.vx = speed * std::cos(heading);
        w.vy = 0.25 * speed * std::sin(heading);  // mostly lateral motion
        w.gait_amp = uniform(scene.gait_amp_min, scene.gait_amp_max);
        w.gait_freq = uniform(scene.gait_freq_min, scene.gait_freq_max);
        w.phase = uniform(0, 1);
    }

    GeneratedVideo out;
    std::vector<int> labels(static_cast<std::size_t>(video_length), 0);

    for (std::int64_t t = 0; t < video_length; ++t) {
        for (std::size_t p = 0; p < scene.walkers; ++p) {
            detail::WalkerState& w = walkers[p];
            const AnomalySpec* active = nullptr;
            for (const AnomalySpec& a : anomalies)
                if (a.person == p && t >= a.begin && t <= a.end) active = &a;

            double vx = w.vx, vy = w.vy;
            double scale = 1.0;
            double gait_mult = 1.0;
            bool advance_gait = true;
            if (active) {
                labels[static_cast<std::size_t>(t)] = 1;
                switch (active->type) {
                    case AnomalyType::Run:
                        // Running speeds up translation and the stride:
                        // limbs swing both faster and wider.
                        vx *= active->magnitude;
                        vy *= active->magnitude;
                        gait_mult = active->magnitude;
                        break;
                    case AnomalyType::FrozenPose:
                        advance_gait = false;
                        break;
                    case AnomalyType::DirectionReversal:
                        vx = -vx;
                        vy = -vy;
                        break;
                    case AnomalyType::ScaleJump:
                        scale = active->magnitude;
                        break;
                }
            }
            w.scale = scale;

            // Bounce off frame borders, keeping the whole box inside.
            double margin_x = 0.25 * scene.base_height * w.scale + 2;
            double margin_y = 0.55 * scene.base_height * w.scale + 2;
            double nx = w.x + vx, ny = w.y + vy;
            if (nx < margin_x || nx > scene.width - margin_x) {
                w.vx = -w.vx;
                vx = -vx;
                nx = w.x + vx;
            }
            if (ny < margin_y || ny > scene.height - margin_y) {
                w.vy = -w.vy;
                vy = -vy;
                ny = w.y + vy;
            }
            w.x = nx;
            w.y = ny;
            if (advance_gait) w.phase += w.gait_freq * gait_mult;

            DetectionRecord rec;
            rec.video_id = video_id;
            rec.frame = t;
            rec.person_id = static_cast<std::int64_t>(p);
            detail::WalkerState render_state = w;
            render_state.gait_amp = std::min(w.gait_amp * gait_mult, 0.20);
            rec.skeleton = detail::render_walker(render_state, scene, w.phase);
            out.detections.push_back(std::move(rec));
        }
        out.mask.push_back(
            {video_id, t, labels[static_cast<std::size_t>(t)], true});
    }
    return out;
}

}  // namespace mped
