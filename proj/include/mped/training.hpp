#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mped/model.hpp"
#include "mped/tensor.hpp"
#include "mped/trajectory.hpp"

namespace mped {

struct WindowConfig {
    std::size_t T = 12;  // segment length
    std::size_t s = 6;   // sliding stride
    std::size_t P = 6;   // prediction length

    void validate() const {
        if (T < 2) throw std::invalid_argument("window: T must be >= 2");
        if (s < 1) throw std::invalid_argument("window: s must be >= 1");
    }
};

struct LossWeights {
    double g = 1.0, l = 1.0, p = 1.0;

    void validate() const {
        if (g < 0 || l < 0 || p < 0)
            throw std::invalid_argument("loss weights must be non-negative");
        if (g == 0 && l == 0 && p == 0)
            throw std::invalid_argument("loss weights must not all be zero");
    }
};

struct LossReport {
    double g = 0, l = 0, p = 0;

    double combined(const LossWeights& w) const {
        return w.g * g + w.l * l + w.p * p;
    }
};

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch = 64;
    std::size_t epochs = 50;
    std::size_t patience = 10;
    double split = 0.2;  // validation fraction, by trajectory
    std::uint64_t seed = 0;

    void validate() const {
        if (split <= 0 || split >= 1)
            throw std::invalid_argument("train: split must be in (0,1)");
        if (batch < 1 || epochs < 1)
            throw std::invalid_argument("train: batch and epochs must be >= 1");
    }
};

/// Half-open window [begin, begin+T) of one trajectory, with the number of
/// ground-truth future frames available after it (<= P).
struct Segment {
    const Trajectory* traj = nullptr;
    std::size_t begin = 0;
    std::size_t T = 0;
    std::size_t future = 0;  // P', truncated at trajectory end
};

inline std::vector<Segment> segment_trajectory(const Trajectory& traj,
                                               const WindowConfig& cfg) {
    cfg.validate();
    std::vector<Segment> out;
    std::size_t n = traj.length();
    for (std::size_t b = 0; b + cfg.T <= n; b += cfg.s) {
        Segment s;
        s.traj = &traj;
        s.begin = b;
        s.T = cfg.T;
        s.future = std::min(cfg.P, n - (b + cfg.T));
        out.push_back(s);
    }
    return out;
}

/// Combines per-step squared residual norms into the segment loss:
/// mean over the window plus mean over the available future frames, halved;
/// reconstruction mean alone when no future frames exist.
inline double combine_segment_loss(const std::vector<double>& rec_terms,
                                   const std::vector<double>& pred_terms) {
    if (rec_terms.empty())
        throw std::invalid_argument("segment loss: empty reconstruction");
    double rec = 0;
    for (double e : rec_terms) rec += e;
    rec /= static_cast<double>(rec_terms.size());
    if (pred_terms.empty()) return rec;
    double pred = 0;
    for (double e : pred_terms) pred += e;
    pred /= static_cast<double>(pred_terms.size());
    return 0.5 * (rec + pred);
}

/// Model-ready view of one segment: standardized inputs plus targets in all
/// three spaces. Perceptual targets are image coordinates over the frame
/// diagonal.
struct SegmentData {
    std::vector<StepFeatures> input;             // size T
    std::vector<std::vector<double>> target_g;   // size T + P'
    std::vector<std::vector<double>> target_l;   // size T + P'
    std::vector<std::vector<double>> target_p;   // size T + P'
    std::size_t T = 0, future = 0;
};

inline SegmentData build_segment_data(const Segment& seg,
                                      const Standardizer& global_std,
                                      const Standardizer& local_std,
                                      double frame_diagonal) {
    SegmentData d;
    d.T = seg.T;
    d.future = seg.future;
    for (std::size_t i = 0; i < seg.T + seg.future; ++i) {
        const SkeletonFrame& f = seg.traj->frames[seg.begin + i];
        DecomposedFrame dec = decompose(f);
        std::vector<double> g = global_std.transform(global_vec(dec.global));
        std::vector<double> l = local_std.transform(local_vec(dec.local));
        std::vector<double> p = frame_vec(f);
        for (double& e : p) e /= frame_diagonal;
        if (i < seg.T) d.input.push_back({g, l});
        d.target_g.push_back(std::move(g));
        d.target_l.push_back(std::move(l));
        d.target_p.push_back(std::move(p));
    }
    return d;
}

enum class LossSpace { Global, Local, Perceptual };

namespace detail {

inline Var space_output(const OutputTriple& o, LossSpace sp) {
    switch (sp) {
        case LossSpace::Global: return o.global;
        case LossSpace::Local: return o.local;
        case LossSpace::Perceptual: return o.perceptual;
    }
    throw std::logic_error("bad loss space");
}

inline const std::vector<std::vector<double>>& space_targets(
    const SegmentData& d, LossSpace sp) {
    switch (sp) {
        case LossSpace::Global: return d.target_g;
        case LossSpace::Local: return d.target_l;
        case LossSpace::Perceptual: return d.target_p;
    }
    throw std::logic_error("bad loss space");
}

}  // namespace detail

/// Differentiable segment loss in one space, recorded on the tape.
inline Var segment_loss(Tape& t, const SegmentOutputs& out,
                        const SegmentData& d, LossSpace sp) {
    const auto& targets = detail::space_targets(d, sp);
    if (out.reconstructed.size() != d.T)
        throw std::invalid_argument("segment_loss: output/window length mismatch");

    Var rec_sum = t.constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < d.T; ++i) {
        Var target = t.constant(Tensor::vector(targets[i]));
        Var res = t.sub(detail::space_output(out.reconstructed[i], sp), target);
        rec_sum = t.add(rec_sum, t.sq_norm(res));
    }
    Var rec = t.scale(rec_sum, 1.0 / static_cast<double>(d.T));
    if (d.future == 0) return rec;

    Var pred_sum = t.constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < d.future; ++i) {
        Var target = t.constant(Tensor::vector(targets[d.T + i]));
        Var res = t.sub(detail::space_output(out.predicted[i], sp), target);
        pred_sum = t.add(pred_sum, t.sq_norm(res));
    }
    Var pred = t.scale(pred_sum, 1.0 / static_cast<double>(d.future));
    return t.scale(t.add(rec, pred), 0.5);
}

struct LossVars {
    Var g, l, p, total;
};

inline LossVars build_losses(Tape& t, const SegmentOutputs& out,
                             const SegmentData& d, const LossWeights& w) {
    LossVars lv;
    lv.g = segment_loss(t, out, d, LossSpace::Global);
    lv.l = segment_loss(t, out, d, LossSpace::Local);
    lv.p = segment_loss(t, out, d, LossSpace::Perceptual);
    lv.total = t.add(t.add(t.scale(lv.g, w.g), t.scale(lv.l, w.l)),
                     t.scale(lv.p, w.p));
    return lv;
}

/// Adaptive-moment first-order optimizer over a fixed parameter registry.
class Adam {
    std::vector<Tensor*> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::size_t t_ = 0;

public:
    Adam(std::vector<Tensor*> params, double lr)
        : params_(std::move(params)), lr_(lr) {
        for (Tensor* p : params_) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    /// grads[i] is aligned with the registry passed at construction.
    void step(const std::vector<std::vector<double>>& grads) {
        ++t_;
        double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = *params_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                double g = grads[i][j];
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                double mhat = m_[i][j] / c1;
                double vhat = v_[i][j] / c2;
                p.v[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0, val_loss = 0;
    LossReport val_components;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
    double best_val = 0;
};

namespace detail {

/// Deterministic Fisher-Yates; modulo draw keeps the permutation stable
/// across standard libraries.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng() % i]);
}

inline LossReport eval_losses(const ModelParams& params,
                              const std::vector<SegmentData>& segs) {
    LossReport r;
    if (segs.empty()) return r;
    for (const SegmentData& d : segs) {
        Tape t;
        ModelVars mv = ModelVars::lease(t, params);
        SegmentOutputs out = forward(t, d.input, params, mv, d.future);
        LossWeights unit;
        LossVars lv = build_losses(t, out, d, unit);
        r.g += t.value(lv.g).v[0];
        r.l += t.value(lv.l).v[0];
        r.p += t.value(lv.p).v[0];
    }
    double n = static_cast<double>(segs.size());
    r.g /= n;
    r.l /= n;
    r.p /= n;
    return r;
}

}  // namespace detail

struct CorpusStats {
    Standardizer global_std;
    Standardizer local_std;
    double frame_diagonal = 1.0;
};

/// Fits the two feature standardizers and estimates the frame diagonal from
/// the coordinate extent of the corpus (image size is not part of the
/// detection format).
inline CorpusStats fit_corpus_stats(const std::vector<Trajectory>& corpus) {
    std::vector<std::vector<double>> globals, locals;
    double max_x = 0, max_y = 0;
    for (const Trajectory& traj : corpus) {
        for (const SkeletonFrame& f : traj.frames) {
            DecomposedFrame d = decompose(f);
            globals.push_back(global_vec(d.global));
            locals.push_back(local_vec(d.local));
            for (const Joint& j : f.joints) {
                max_x = std::max(max_x, std::abs(j.x));
                max_y = std::max(max_y, std::abs(j.y));
            }
        }
    }
    if (globals.size() < 2)
        throw std::invalid_argument("corpus stats: need at least 2 frames");
    CorpusStats st;
    st.global_std = Standardizer::fit(globals);
    st.local_std = Standardizer::fit(locals);
    double diag = std::hypot(max_x, max_y);
    st.frame_diagonal = diag > 0 ? diag : 1.0;
    return st;
}

inline std::vector<SegmentData> prepare_segments(
    const std::vector<Trajectory>& trajs, const WindowConfig& wcfg,
    const CorpusStats& stats) {
    std::vector<SegmentData> out;
    for (const Trajectory& traj : trajs)
        for (const Segment& s : segment_trajectory(traj, wcfg))
            out.push_back(build_segment_data(s, stats.global_std,
                                             stats.local_std,
                                             stats.frame_diagonal));
    return out;
}

/// Full training run: trajectory-level train/validation split, mini-batch
/// Adam on the weighted three-space loss, early stopping on validation loss,
/// best-validation parameters returned.
inline TrainResult train(const std::vector<Trajectory>& corpus,
                         const ModelHyper& hyper, const TrainConfig& tcfg,
                         const WindowConfig& wcfg, const LossWeights& weights) {
    tcfg.validate();
    wcfg.validate();
    weights.validate();
    if (corpus.empty()) throw std::invalid_argument("train: empty corpus");

    CorpusStats stats = fit_corpus_stats(corpus);

    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(tcfg.seed);
    detail::shuffle(order, rng);
    std::size_t n_val =
        corpus.size() >= 2
            ? std::max<std::size_t>(
                  1, static_cast<std::size_t>(
                         std::llround(tcfg.split *
                                      static_cast<double>(corpus.size()))))
            : 0;
    std::vector<Trajectory> train_trajs, val_trajs;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_val ? val_trajs : train_trajs).push_back(corpus[order[i]]);
    if (val_trajs.empty()) val_trajs = train_trajs;

    std::vector<SegmentData> train_segs =
        prepare_segments(train_trajs, wcfg, stats);
    std::vector<SegmentData> val_segs = prepare_segments(val_trajs, wcfg, stats);
    if (train_segs.empty())
        throw std::invalid_argument("train: corpus yields no segments");

    ModelHyper hp = hyper;
    hp.T = wcfg.T;
    hp.P = wcfg.P;
    ModelParams params = ModelParams::init(hp, tcfg.seed);
    std::vector<Tensor*> registry = params.tensors();
    Adam opt(registry, tcfg.lr);

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    ModelParams best_params = params;
    std::size_t since_best = 0;

    std::vector<std::size_t> idx(train_segs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        detail::shuffle(idx, rng);
        double epoch_loss = 0;
        for (std::size_t b = 0; b < idx.size(); b += tcfg.batch) {
            std::size_t bsz = std::min(tcfg.batch, idx.size() - b);
            std::vector<std::vector<double>> accum;
            for (Tensor* p : registry) accum.emplace_back(p->size(), 0.0);
            double inv = 1.0 / static_cast<double>(bsz);
            for (std::size_t i = 0; i < bsz; ++i) {
                const SegmentData& d = train_segs[idx[b + i]];
                Tape t;
                ModelVars mv = ModelVars::lease(t, params);
                SegmentOutputs out = forward(t, d.input, params, mv, d.future);
                LossVars lv = build_losses(t, out, d, weights);
                epoch_loss += t.value(lv.total).v[0];
                Gradient grads = t.backward(lv.total);
                for (std::size_t r = 0; r < registry.size(); ++r) {
                    auto it = grads.find(registry[r]);
                    if (it == grads.end()) continue;
                    for (std::size_t j = 0; j < accum[r].size(); ++j)
                        accum[r][j] += inv * it->second.v[j];
                }
            }
            opt.step(accum);
        }
        epoch_loss /= static_cast<double>(train_segs.size());

        LossReport val = detail::eval_losses(params, val_segs);
        double val_loss = val.combined(weights);
        result.log.push_back({epoch, epoch_loss, val_loss, val});

        if (val_loss < best_val) {
            best_val = val_loss;
            best_params = params;
            since_best = 0;
        } else if (++since_best > tcfg.patience) {
            break;
        }
    }

    result.best_val = best_val;
    result.checkpoint.params = std::move(best_params);
    result.checkpoint.global_std = stats.global_std;
    result.checkpoint.local_std = stats.local_std;
    result.checkpoint.frame_diagonal = stats.frame_diagonal;
    result.checkpoint.stride = wcfg.s;
    return result;
}

struct CapacityResult {
    std::size_t selected_H = 0;
    std::vector<std::pair<std::size_t, double>> losses;  // (H, best val)
};

/// Applies the 5% rule to a recorded loss table: picks the smallest capacity
/// whose best validation loss is <= 1.05x the ladder head's.
inline CapacityResult& select_capacity(CapacityResult& res) {
    double l0 = res.losses.front().second;
    res.selected_H = res.losses.front().first;
    for (const auto& [H, loss] : res.losses)
        if (loss <= 1.05 * l0) res.selected_H = H;
    return res;
}

/// Trains the capacity ladder top-down and selects the smallest hidden size
/// whose best validation loss stays within 5% of the largest capacity's.
inline CapacityResult capacity_search(const std::vector<Trajectory>& corpus,
                                      const ModelHyper& hyper,
                                      const std::vector<std::size_t>& ladder,
                                      const TrainConfig& tcfg,
                                      const WindowConfig& wcfg,
                                      const LossWeights& weights) {
    if (ladder.empty())
        throw std::invalid_argument("capacity_search: empty ladder");
    for (std::size_t i = 1; i < ladder.size(); ++i)
        if (ladder[i] >= ladder[i - 1])
            throw std::invalid_argument(
                "capacity_search: ladder must be strictly descending");

    CapacityResult res;
    for (std::size_t H : ladder) {
        ModelHyper hp = hyper;
        hp.H = H;
        TrainResult tr = train(corpus, hp, tcfg, wcfg, weights);
        res.losses.push_back({H, tr.best_val});
    }
    return select_capacity(res);
}

}  // namespace mped
