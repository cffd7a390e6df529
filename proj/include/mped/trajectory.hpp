#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace mped {

struct DegenerateBox : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Joint {
    double x = 0, y = 0;
};

/// One person's detected joints at one time step.
struct SkeletonFrame {
    std::vector<Joint> joints;
    std::vector<double> confidence;  // optional, empty or size k

    std::size_t joint_count() const { return joints.size(); }
};

/// Bounding-box center and extent, in image pixels.
struct GlobalFeature {
    double xg = 0, yg = 0, w = 0, h = 0;
};

/// Joint offsets normalized to the bounding box; each coordinate lies in
/// [-0.5, 0.5] when produced by decompose().
struct LocalFeature {
    std::vector<Joint> joints;
};

struct DecomposedFrame {
    GlobalFeature global;
    LocalFeature local;
};

/// Temporally contiguous skeleton sequence of one person.
struct Trajectory {
    std::string video_id;
    std::int64_t person_id = 0;
    std::int64_t start_frame = 0;
    std::vector<SkeletonFrame> frames;

    std::size_t length() const { return frames.size(); }
};

inline DecomposedFrame decompose(const SkeletonFrame& f) {
    if (f.joints.empty())
        throw std::invalid_argument("decompose: empty frame");
    double xmin = f.joints[0].x, xmax = xmin;
    double ymin = f.joints[0].y, ymax = ymin;
    for (const Joint& j : f.joints) {
        xmin = std::min(xmin, j.x);
        xmax = std::max(xmax, j.x);
        ymin = std::min(ymin, j.y);
        ymax = std::max(ymax, j.y);
    }
    double w = xmax - xmin, h = ymax - ymin;
    if (w <= 0 || h <= 0)
        throw DegenerateBox("decompose: zero-extent bounding box (w=" +
                            std::to_string(w) + ", h=" + std::to_string(h) +
                            ")");
    DecomposedFrame out;
    out.global = {(xmax + xmin) / 2.0, (ymax + ymin) / 2.0, w, h};
    out.local.joints.reserve(f.joints.size());
    for (const Joint& j : f.joints)
        out.local.joints.push_back(
            {(j.x - out.global.xg) / w, (j.y - out.global.yg) / h});
    return out;
}

/// Exact analytic inverse of decompose().
inline SkeletonFrame recompose(const GlobalFeature& g, const LocalFeature& l) {
    if (g.w <= 0 || g.h <= 0)
        throw DegenerateBox("recompose: non-positive box extent");
    SkeletonFrame f;
    f.joints.reserve(l.joints.size());
    for (const Joint& j : l.joints)
        f.joints.push_back({j.x * g.w + g.xg, j.y * g.h + g.yg});
    return f;
}

inline std::vector<double> global_vec(const GlobalFeature& g) {
    return {g.xg, g.yg, g.w, g.h};
}

inline std::vector<double> local_vec(const LocalFeature& l) {
    std::vector<double> out;
    out.reserve(l.joints.size() * 2);
    for (const Joint& j : l.joints) {
        out.push_back(j.x);
        out.push_back(j.y);
    }
    return out;
}

inline std::vector<double> frame_vec(const SkeletonFrame& f) {
    std::vector<double> out;
    out.reserve(f.joints.size() * 2);
    for (const Joint& j : f.joints) {
        out.push_back(j.x);
        out.push_back(j.y);
    }
    return out;
}

/// Linear-interpolation quantile over a sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
    if (sorted.size() == 1) return sorted[0];
    double pos = q * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    if (lo >= sorted.size() - 1) return sorted.back();
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

/// Per-feature median shift and 10%-90% quantile scaling. Immutable once
/// fitted; degenerate spread falls back to unit scale.
class Standardizer {
    std::vector<double> median_;
    std::vector<double> scale_;

public:
    Standardizer() = default;
    Standardizer(std::vector<double> median, std::vector<double> scale)
        : median_(std::move(median)), scale_(std::move(scale)) {
        if (median_.size() != scale_.size())
            throw std::invalid_argument("Standardizer: size mismatch");
        for (double s : scale_)
            if (s <= 0)
                throw std::invalid_argument("Standardizer: non-positive scale");
    }

    static Standardizer fit(const std::vector<std::vector<double>>& samples) {
        if (samples.size() < 2)
            throw std::invalid_argument(
                "Standardizer::fit: need at least 2 samples");
        std::size_t dim = samples[0].size();
        std::vector<double> median(dim), scale(dim);
        std::vector<double> col(samples.size());
        for (std::size_t d = 0; d < dim; ++d) {
            for (std::size_t i = 0; i < samples.size(); ++i) {
                if (samples[i].size() != dim)
                    throw std::invalid_argument(
                        "Standardizer::fit: ragged sample dimensions");
                col[i] = samples[i][d];
            }
            std::sort(col.begin(), col.end());
            median[d] = quantile_sorted(col, 0.5);
            double spread =
                quantile_sorted(col, 0.9) - quantile_sorted(col, 0.1);
            scale[d] = spread > 0 ? spread : 1.0;
        }
        return Standardizer(std::move(median), std::move(scale));
    }

    std::size_t dim() const { return median_.size(); }
    const std::vector<double>& median() const { return median_; }
    const std::vector<double>& scale() const { return scale_; }

    std::vector<double> transform(const std::vector<double>& v) const {
        check(v);
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            out[i] = (v[i] - median_[i]) / scale_[i];
        return out;
    }

    std::vector<double> inverse(const std::vector<double>& v) const {
        check(v);
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            out[i] = v[i] * scale_[i] + median_[i];
        return out;
    }

private:
    void check(const std::vector<double>& v) const {
        if (v.size() != median_.size())
            throw std::invalid_argument(
                "Standardizer: dimension mismatch, expected " +
                std::to_string(median_.size()) + " got " +
                std::to_string(v.size()));
    }
};

// ---------------------------------------------------------------------------
// JSONL ingestion
//
// One record per person per frame:
//   {"video_id": str, "frame": int, "person_id": int,
//    "joints": [[x,y] x k], "conf": [c x k]?}
// Records may arrive in any order; groups are keyed by (video_id, person_id)
// and sorted by frame. Groups with frame gaps are split into separate
// contiguous trajectories.
// ---------------------------------------------------------------------------

struct DetectionRecord {
    std::string video_id;
    std::int64_t frame = 0;
    std::int64_t person_id = 0;
    SkeletonFrame skeleton;
};

inline DetectionRecord parse_detection_line(const std::string& line,
                                            std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": malformed JSON: " + e.what());
    }
    try {
        DetectionRecord rec;
        rec.video_id = j.at("video_id").get<std::string>();
        rec.frame = j.at("frame").get<std::int64_t>();
        rec.person_id = j.value("person_id", std::int64_t{-1});
        for (const auto& pair : j.at("joints")) {
            if (pair.size() != 2)
                throw std::runtime_error("joint entry is not an [x,y] pair");
            rec.skeleton.joints.push_back(
                {pair[0].get<double>(), pair[1].get<double>()});
        }
        if (j.contains("conf"))
            rec.skeleton.confidence = j["conf"].get<std::vector<double>>();
        for (const Joint& p : rec.skeleton.joints)
            if (!std::isfinite(p.x) || !std::isfinite(p.y))
                throw std::runtime_error("non-finite joint coordinate");
        return rec;
    } catch (const std::exception& e) {
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": invalid detection record: " + e.what());
    }
}

inline std::vector<DetectionRecord> load_detections(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<DetectionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        out.push_back(parse_detection_line(line, line_no));
    }
    return out;
}

/// Groups detections into contiguous trajectories, splitting at frame gaps.
/// Duplicate (video, person, frame) records keep the first occurrence.
inline std::vector<Trajectory> group_trajectories(
    std::vector<DetectionRecord> records) {
    std::map<std::pair<std::string, std::int64_t>,
             std::vector<DetectionRecord>>
        groups;
    for (auto& r : records)
        groups[{r.video_id, r.person_id}].push_back(std::move(r));

    std::vector<Trajectory> out;
    for (auto& [key, recs] : groups) {
        std::stable_sort(recs.begin(), recs.end(),
                         [](const auto& a, const auto& b) {
                             return a.frame < b.frame;
                         });
        Trajectory cur;
        std::int64_t prev_frame = 0;
        for (auto& r : recs) {
            if (!cur.frames.empty() && r.frame == prev_frame) continue;
            if (!cur.frames.empty() && r.frame != prev_frame + 1) {
                out.push_back(std::move(cur));
                cur = Trajectory{};
            }
            if (cur.frames.empty()) {
                cur.video_id = r.video_id;
                cur.person_id = r.person_id;
                cur.start_frame = r.frame;
            }
            cur.frames.push_back(std::move(r.skeleton));
            prev_frame = r.frame;
        }
        if (!cur.frames.empty()) out.push_back(std::move(cur));
    }
    return out;
}

inline std::vector<Trajectory> load_trajectories(const std::string& path) {
    return group_trajectories(load_detections(path));
}

inline void save_trajectories(const std::vector<Trajectory>& trajs,
                              std::ostream& out) {
    for (const Trajectory& t : trajs) {
        for (std::size_t i = 0; i < t.frames.size(); ++i) {
            nlohmann::json j;
            j["video_id"] = t.video_id;
            j["frame"] = t.start_frame + static_cast<std::int64_t>(i);
            j["person_id"] = t.person_id;
            auto joints = nlohmann::json::array();
            for (const Joint& p : t.frames[i].joints)
                joints.push_back({p.x, p.y});
            j["joints"] = std::move(joints);
            if (!t.frames[i].confidence.empty())
                j["conf"] = t.frames[i].confidence;
            out << j.dump() << '\n';
        }
    }
}

}  // namespace mped
