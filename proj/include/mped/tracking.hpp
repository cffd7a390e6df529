#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mped/trajectory.hpp"

namespace mped {

struct Box {
    double xmin = 0, ymin = 0, xmax = 0, ymax = 0;

    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    double area() const {
        return std::max(0.0, width()) * std::max(0.0, height());
    }
    double diagonal() const { return std::hypot(width(), height()); }
};

inline Box joint_box(const SkeletonFrame& f) {
    if (f.joints.empty()) throw std::invalid_argument("joint_box: empty frame");
    Box b{f.joints[0].x, f.joints[0].y, f.joints[0].x, f.joints[0].y};
    for (const Joint& j : f.joints) {
        b.xmin = std::min(b.xmin, j.x);
        b.ymin = std::min(b.ymin, j.y);
        b.xmax = std::max(b.xmax, j.x);
        b.ymax = std::max(b.ymax, j.y);
    }
    return b;
}

inline double box_iou(const Box& a, const Box& b) {
    double ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
    double iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
    double inter = std::max(0.0, ix) * std::max(0.0, iy);
    double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Geometric association cost: mean per-joint distance over the track's box
/// diagonal, plus one minus box IoU. Lower is better; 0 for an identical
/// skeleton.
inline double pair_cost(const SkeletonFrame& track_frame,
                        const SkeletonFrame& det_frame) {
    if (track_frame.joint_count() != det_frame.joint_count())
        throw std::invalid_argument("pair_cost: joint count mismatch");
    Box tb = joint_box(track_frame);
    double diag = tb.diagonal();
    if (diag <= 0) diag = 1.0;
    double dist = 0;
    for (std::size_t i = 0; i < track_frame.joint_count(); ++i)
        dist += std::hypot(track_frame.joints[i].x - det_frame.joints[i].x,
                           track_frame.joints[i].y - det_frame.joints[i].y);
    dist /= static_cast<double>(track_frame.joint_count());
    return dist / diag + (1.0 - box_iou(tb, joint_box(det_frame)));
}

/// Minimum-cost assignment on a square matrix (potentials / shortest
/// augmenting path). Returns row -> column.
inline std::vector<std::size_t> hungarian_square(
    const std::vector<std::vector<double>>& a) {
    std::size_t n = a.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0), v(n + 1, 0);
    std::vector<std::size_t> p(n + 1, n), way(n + 1, n);
    for (std::size_t i = 0; i < n; ++i) {
        p[n] = i;
        std::size_t j0 = n;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            std::size_t i0 = p[j0], j1 = n;
            double delta = inf;
            for (std::size_t j = 0; j < n; ++j) {
                if (used[j]) continue;
                double cur = a[i0][j] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != n);
        do {
            std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != n);
    }
    std::vector<std::size_t> row_to_col(n);
    for (std::size_t j = 0; j < n; ++j)
        if (p[j] < n) row_to_col[p[j]] = j;
    return row_to_col;
}

struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col)
    double total_cost = 0;
};

/// Minimum-total-cost matching on a rectangular cost matrix. Entries above
/// the gate are treated as forbidden: they are clamped during optimization
/// and their matches dropped from the result. Rectangular input is padded to
/// square with the gate cost (or zero when ungated).
inline Assignment hungarian_assign(
    const std::vector<std::vector<double>>& costs,
    double gate = std::numeric_limits<double>::infinity()) {
    Assignment out;
    std::size_t n = costs.size();
    std::size_t m = n ? costs[0].size() : 0;
    if (n == 0 || m == 0) return out;
    for (const auto& row : costs) {
        if (row.size() != m)
            throw std::invalid_argument("hungarian_assign: ragged matrix");
        for (double c : row)
            if (!std::isfinite(c))
                throw std::invalid_argument(
                    "hungarian_assign: non-finite cost");
    }
    std::size_t sz = std::max(n, m);
    double pad = std::isfinite(gate) ? gate : 0.0;
    std::vector<std::vector<double>> sq(sz, std::vector<double>(sz, pad));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            sq[i][j] = std::min(costs[i][j], std::isfinite(gate)
                                                 ? gate
                                                 : costs[i][j]);
    std::vector<std::size_t> row_to_col = hungarian_square(sq);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = row_to_col[i];
        if (j >= m) continue;
        if (costs[i][j] > gate) continue;
        out.pairs.push_back({i, j});
        out.total_cost += costs[i][j];
    }
    return out;
}

struct TrackingConfig {
    double gate = 1.5;
    std::size_t max_gap = 2;  // bridgeable missing frames
};

namespace detail {

struct TrackState {
    std::int64_t id = 0;
    std::int64_t start_frame = 0;
    std::int64_t last_frame = 0;
    std::vector<SkeletonFrame> frames;
};

inline SkeletonFrame lerp_frame(const SkeletonFrame& a, const SkeletonFrame& b,
                                double t) {
    SkeletonFrame out;
    out.joints.reserve(a.joints.size());
    for (std::size_t i = 0; i < a.joints.size(); ++i)
        out.joints.push_back(
            {a.joints[i].x + (b.joints[i].x - a.joints[i].x) * t,
             a.joints[i].y + (b.joints[i].y - a.joints[i].y) * t});
    return out;
}

}  // namespace detail

/// Frame-by-frame association for one video. Unmatched detections spawn
/// tracks; gaps up to max_gap frames are bridged by linear interpolation;
/// tracks absent longer terminate and any later re-detection starts a new
/// trajectory.
inline std::vector<Trajectory> track_video(
    const std::string& video_id,
    const std::map<std::int64_t, std::vector<SkeletonFrame>>& by_frame,
    const TrackingConfig& cfg = {}) {
    std::vector<detail::TrackState> active;
    std::vector<Trajectory> done;
    std::int64_t next_id = 0;

    auto finalize = [&](detail::TrackState& tr) {
        Trajectory t;
        t.video_id = video_id;
        t.person_id = tr.id;
        t.start_frame = tr.start_frame;
        t.frames = std::move(tr.frames);
        done.push_back(std::move(t));
    };

    for (const auto& [frame, dets] : by_frame) {
        // Retire tracks whose gap can no longer be bridged.
        for (std::size_t i = active.size(); i-- > 0;) {
            if (static_cast<std::size_t>(frame - active[i].last_frame) >
                cfg.max_gap + 1) {
                finalize(active[i]);
                active.erase(active.begin() + static_cast<std::ptrdiff_t>(i));
            }
        }

        std::vector<bool> det_used(dets.size(), false);
        if (!active.empty() && !dets.empty()) {
            std::vector<std::vector<double>> costs(
                active.size(), std::vector<double>(dets.size(), 0.0));
            for (std::size_t i = 0; i < active.size(); ++i)
                for (std::size_t j = 0; j < dets.size(); ++j)
                    costs[i][j] = pair_cost(active[i].frames.back(), dets[j]);
            Assignment asg = hungarian_assign(costs, cfg.gate);
            for (auto [i, j] : asg.pairs) {
                detail::TrackState& tr = active[i];
                std::int64_t missing = frame - tr.last_frame - 1;
                for (std::int64_t g = 1; g <= missing; ++g)
                    tr.frames.push_back(detail::lerp_frame(
                        tr.frames.back(), dets[j],
                        static_cast<double>(g) /
                            static_cast<double>(missing + 1)));
                tr.frames.push_back(dets[j]);
                tr.last_frame = frame;
                det_used[j] = true;
            }
        }
        for (std::size_t j = 0; j < dets.size(); ++j) {
            if (det_used[j]) continue;
            detail::TrackState tr;
            tr.id = next_id++;
            tr.start_frame = frame;
            tr.last_frame = frame;
            tr.frames.push_back(dets[j]);
            active.push_back(std::move(tr));
        }
    }
    for (detail::TrackState& tr : active) finalize(tr);
    std::sort(done.begin(), done.end(), [](const auto& a, const auto& b) {
        return a.person_id < b.person_id;
    });
    return done;
}

/// Tracks every video in a detection set independently.
inline std::vector<Trajectory> track(
    const std::vector<DetectionRecord>& detections,
    const TrackingConfig& cfg = {}) {
    std::map<std::string, std::map<std::int64_t, std::vector<SkeletonFrame>>>
        videos;
    for (const DetectionRecord& d : detections)
        videos[d.video_id][d.frame].push_back(d.skeleton);
    std::vector<Trajectory> out;
    for (const auto& [vid, by_frame] : videos) {
        std::vector<Trajectory> trs = track_video(vid, by_frame, cfg);
        out.insert(out.end(), std::make_move_iterator(trs.begin()),
                   std::make_move_iterator(trs.end()));
    }
    return out;
}

}  // namespace mped
