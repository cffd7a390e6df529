#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mped/model.hpp"
#include "mped/training.hpp"

namespace mped {

/// Per-skeleton per-frame anomaly score alpha_f.
struct SkeletonScore {
    std::string video_id;
    std::int64_t person_id = 0;
    std::int64_t frame = 0;
    double alpha = 0;
};

/// Per-frame video score series alpha_v; index 0 is frame 0.
struct ScoreSeries {
    std::string video_id;
    std::vector<double> alpha;
};

/// Per-frame ground truth and evaluation inclusion flag.
struct MaskEntry {
    std::string video_id;
    std::int64_t frame = 0;
    int label = 0;
    bool include = true;
};

/// Perceptual loss of one segment under the model, computed from the forward
/// outputs without building a loss graph.
inline double segment_perceptual_loss(const ModelParams& params,
                                      const SegmentData& d) {
    Tape t;
    ModelVars mv = ModelVars::lease(t, params);
    SegmentOutputs out = forward(t, d.input, params, mv, d.future);
    std::vector<double> rec, pred;
    auto sqerr = [&](Var v, const std::vector<double>& target) {
        const Tensor& val = t.value(v);
        double s = 0;
        for (std::size_t i = 0; i < target.size(); ++i) {
            double e = val.v[i] - target[i];
            s += e * e;
        }
        return s;
    };
    for (std::size_t i = 0; i < d.T; ++i)
        rec.push_back(sqerr(out.reconstructed[i].perceptual, d.target_p[i]));
    for (std::size_t i = 0; i < d.future; ++i)
        pred.push_back(
            sqerr(out.predicted[i].perceptual, d.target_p[d.T + i]));
    return combine_segment_loss(rec, pred);
}

/// Voting scheme over sliding segments: each segment contributes its
/// perceptual loss to every frame of its reconstruction window and its
/// truncated prediction window; a frame's score is the mean contribution.
/// Frames covered by no segment fall back to the trajectory's mean segment
/// loss (0 when the trajectory is shorter than one window).
inline std::vector<SkeletonScore> score_skeletons(
    const std::vector<Trajectory>& trajectories, const Checkpoint& ckpt,
    const WindowConfig& wcfg) {
    std::vector<SkeletonScore> out;
    for (const Trajectory& traj : trajectories) {
        std::vector<double> sum(traj.length(), 0.0);
        std::vector<std::size_t> votes(traj.length(), 0);
        double traj_sum = 0;
        std::size_t seg_count = 0;
        for (const Segment& seg : segment_trajectory(traj, wcfg)) {
            SegmentData d = build_segment_data(seg, ckpt.global_std,
                                               ckpt.local_std,
                                               ckpt.frame_diagonal);
            double lp = segment_perceptual_loss(ckpt.params, d);
            traj_sum += lp;
            ++seg_count;
            for (std::size_t i = 0; i < seg.T + seg.future; ++i) {
                sum[seg.begin + i] += lp;
                ++votes[seg.begin + i];
            }
        }
        double fallback = seg_count ? traj_sum / static_cast<double>(seg_count)
                                    : 0.0;
        for (std::size_t i = 0; i < traj.length(); ++i) {
            SkeletonScore s;
            s.video_id = traj.video_id;
            s.person_id = traj.person_id;
            s.frame = traj.start_frame + static_cast<std::int64_t>(i);
            s.alpha = votes[i] ? sum[i] / static_cast<double>(votes[i])
                               : fallback;
            out.push_back(s);
        }
    }
    return out;
}

/// Max-pool over skeleton instances per frame; frames with no skeleton
/// score 0. Series length is max(frame)+1 per video unless a longer length
/// is supplied.
inline std::vector<ScoreSeries> score_frames(
    const std::vector<SkeletonScore>& skeleton_scores,
    const std::map<std::string, std::size_t>& video_lengths = {}) {
    std::map<std::string, std::vector<double>> series;
    for (const auto& [vid, len] : video_lengths)
        series[vid].assign(len, 0.0);
    for (const SkeletonScore& s : skeleton_scores) {
        auto& v = series[s.video_id];
        if (s.frame < 0) throw std::invalid_argument("negative frame index");
        std::size_t f = static_cast<std::size_t>(s.frame);
        if (v.size() <= f) v.resize(f + 1, 0.0);
        v[f] = std::max(v[f], s.alpha);
    }
    std::vector<ScoreSeries> out;
    for (auto& [vid, alpha] : series)
        out.push_back({vid, std::move(alpha)});
    return out;
}

/// Frame-level ROC AUC by rank statistic, ties counted half. Pools all
/// included frames across videos.
inline double roc_auc(const std::vector<double>& scores,
                      const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("roc_auc: score/label size mismatch");
    std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
    });
    // Average ranks over tie groups (1-based).
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 +
                     1.0;
        for (std::size_t u = i; u <= j; ++u) rank[order[u]] = avg;
        i = j + 1;
    }
    double pos = 0, rank_sum = 0;
    for (std::size_t u = 0; u < n; ++u)
        if (labels[u] > 0) {
            pos += 1;
            rank_sum += rank[u];
        }
    double neg = static_cast<double>(n) - pos;
    if (pos == 0 || neg == 0)
        throw std::invalid_argument("roc_auc: single-class ground truth");
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

/// Joins score series against the evaluation mask; frames absent from the
/// series score 0, excluded frames are skipped entirely.
inline double evaluate_auc(const std::vector<ScoreSeries>& series,
                           const std::vector<MaskEntry>& mask) {
    std::map<std::string, const ScoreSeries*> by_video;
    for (const ScoreSeries& s : series) by_video[s.video_id] = &s;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const MaskEntry& m : mask) {
        if (!m.include) continue;
        double score = 0;
        auto it = by_video.find(m.video_id);
        if (it != by_video.end() && m.frame >= 0 &&
            static_cast<std::size_t>(m.frame) < it->second->alpha.size())
            score = it->second->alpha[m.frame];
        scores.push_back(score);
        labels.push_back(m.label);
    }
    if (scores.empty())
        throw std::invalid_argument("evaluate_auc: no included frames");
    return roc_auc(scores, labels);
}

// ---------------------------------------------------------------------------
// CSV formats
//   scores: video_id,frame,score
//   mask:   video_id,frame,label,include
// ---------------------------------------------------------------------------

inline void save_scores(const std::vector<ScoreSeries>& series,
                        std::ostream& out) {
    out << "video_id,frame,score\n";
    char buf[64];
    for (const ScoreSeries& s : series)
        for (std::size_t f = 0; f < s.alpha.size(); ++f) {
            std::snprintf(buf, sizeof buf, "%.12g", s.alpha[f]);
            out << s.video_id << ',' << f << ',' << buf << '\n';
        }
}

inline std::vector<ScoreSeries> load_scores(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::map<std::string, std::vector<std::pair<std::int64_t, double>>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line_no == 1) continue;  // header
        std::istringstream ss(line);
        std::string vid, frame_s, score_s;
        if (!std::getline(ss, vid, ',') || !std::getline(ss, frame_s, ',') ||
            !std::getline(ss, score_s))
            throw std::runtime_error("scores line " + std::to_string(line_no) +
                                     ": expected video_id,frame,score");
        rows[vid].push_back({std::stoll(frame_s), std::stod(score_s)});
    }
    std::vector<ScoreSeries> out;
    for (auto& [vid, entries] : rows) {
        std::int64_t max_frame = 0;
        for (auto& [f, sc] : entries) max_frame = std::max(max_frame, f);
        ScoreSeries s;
        s.video_id = vid;
        s.alpha.assign(static_cast<std::size_t>(max_frame) + 1, 0.0);
        for (auto& [f, sc] : entries)
            if (f >= 0) s.alpha[static_cast<std::size_t>(f)] = sc;
        out.push_back(std::move(s));
    }
    return out;
}

inline void save_mask(const std::vector<MaskEntry>& mask, std::ostream& out) {
    out << "video_id,frame,label,include\n";
    for (const MaskEntry& m : mask)
        out << m.video_id << ',' << m.frame << ',' << m.label << ','
            << (m.include ? 1 : 0) << '\n';
}

inline std::vector<MaskEntry> load_mask(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<MaskEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line_no == 1) continue;
        std::istringstream ss(line);
        std::string vid, frame_s, label_s, inc_s;
        if (!std::getline(ss, vid, ',') || !std::getline(ss, frame_s, ',') ||
            !std::getline(ss, label_s, ',') || !std::getline(ss, inc_s))
            throw std::runtime_error(
                "mask line " + std::to_string(line_no) +
                ": expected video_id,frame,label,include");
        out.push_back({vid, std::stoll(frame_s), std::stoi(label_s),
                       std::stoi(inc_s) != 0});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normality report: per-frame per-space traces for one segment, for
// inspecting which error component dominates.
// ---------------------------------------------------------------------------

struct ReportRow {
    std::int64_t frame = 0;
    bool predicted = false;  // false: reconstruction window
    double err_global = 0, err_local = 0, err_perceptual = 0;
};

inline std::vector<ReportRow> normality_report(const Checkpoint& ckpt,
                                               const Segment& seg) {
    SegmentData d = build_segment_data(seg, ckpt.global_std, ckpt.local_std,
                                       ckpt.frame_diagonal);
    Tape t;
    ModelVars mv = ModelVars::lease(t, ckpt.params);
    SegmentOutputs out = forward(t, d.input, ckpt.params, mv, d.future);
    auto sqerr = [&](Var v, const std::vector<double>& target) {
        const Tensor& val = t.value(v);
        double s = 0;
        for (std::size_t i = 0; i < target.size(); ++i) {
            double e = val.v[i] - target[i];
            s += e * e;
        }
        return s;
    };
    std::vector<ReportRow> rows;
    std::int64_t base = seg.traj->start_frame +
                        static_cast<std::int64_t>(seg.begin);
    for (std::size_t i = 0; i < d.T; ++i) {
        const OutputTriple& o = out.reconstructed[i];
        rows.push_back({base + static_cast<std::int64_t>(i), false,
                        sqerr(o.global, d.target_g[i]),
                        sqerr(o.local, d.target_l[i]),
                        sqerr(o.perceptual, d.target_p[i])});
    }
    for (std::size_t i = 0; i < d.future; ++i) {
        const OutputTriple& o = out.predicted[i];
        rows.push_back({base + static_cast<std::int64_t>(d.T + i), true,
                        sqerr(o.global, d.target_g[d.T + i]),
                        sqerr(o.local, d.target_l[d.T + i]),
                        sqerr(o.perceptual, d.target_p[d.T + i])});
    }
    return rows;
}

inline void save_report(const std::vector<ReportRow>& rows,
                        const std::string& video_id, std::int64_t person_id,
                        std::ostream& out) {
    out << "video_id,person_id,frame,stage,err_global,err_local,"
           "err_perceptual\n";
    char buf[160];
    for (const ReportRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g", r.err_global,
                      r.err_local, r.err_perceptual);
        out << video_id << ',' << person_id << ',' << r.frame << ','
            << (r.predicted ? "predict" : "reconstruct") << ',' << buf << '\n';
    }
}

}  // namespace mped
