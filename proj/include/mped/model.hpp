#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mped/tensor.hpp"
#include "mped/trajectory.hpp"

namespace mped {

struct ModelHyper {
    std::size_t k = 17;  // joints per skeleton
    std::size_t H = 16;  // hidden units per branch
    std::size_t M = 8;   // message dimension
    std::size_t T = 12;  // segment length
    std::size_t P = 6;   // prediction length

    std::size_t global_dim() const { return 4; }
    std::size_t local_dim() const { return 2 * k; }
};

/// One GRU cell: z = sig(Wz [x,h] + bz), r = sig(Wr [x,h] + br),
/// c = tanh(Wh [x, r*h] + bh), h' = (1-z)*h + z*c.
struct GruParams {
    Tensor Wz, Wr, Wh;  // [H, in + H]
    Tensor bz, br, bh;  // [H]
};

/// Directed cross-branch message map: m = sig(W h + b).
struct MessageParams {
    Tensor W;  // [M, H]
    Tensor b;  // [M]
};

struct AffineParams {
    Tensor W, b;
};

/// All learnable state plus hyperparameters. Tensors are registered in a
/// fixed order so optimizers and checkpoints can iterate them stably.
struct ModelParams {
    ModelHyper hp;

    GruParams enc_g, enc_l;    // encoders, input = feature + message
    GruParams rec_g, rec_l;    // reconstructing decoders, input = message
    GruParams pred_g, pred_l;  // predicting decoders, input = message

    // Per-stage directed message maps (encoder, reconstructing, predicting).
    MessageParams msg_enc_l2g, msg_enc_g2l;
    MessageParams msg_rec_l2g, msg_rec_g2l;
    MessageParams msg_pred_l2g, msg_pred_g2l;

    AffineParams head_global;                // H -> 4
    AffineParams head_local;                 // H -> 2k
    AffineParams perc_hidden, perc_out;      // [4+2k] -> 2(4+2k) -> 2k

    std::vector<std::pair<std::string, Tensor*>> named() {
        std::vector<std::pair<std::string, Tensor*>> out;
        auto gru = [&](const std::string& n, GruParams& g) {
            out.push_back({n + ".Wz", &g.Wz});
            out.push_back({n + ".Wr", &g.Wr});
            out.push_back({n + ".Wh", &g.Wh});
            out.push_back({n + ".bz", &g.bz});
            out.push_back({n + ".br", &g.br});
            out.push_back({n + ".bh", &g.bh});
        };
        auto msg = [&](const std::string& n, MessageParams& m) {
            out.push_back({n + ".W", &m.W});
            out.push_back({n + ".b", &m.b});
        };
        auto aff = [&](const std::string& n, AffineParams& a) {
            out.push_back({n + ".W", &a.W});
            out.push_back({n + ".b", &a.b});
        };
        gru("enc_g", enc_g);
        gru("enc_l", enc_l);
        gru("rec_g", rec_g);
        gru("rec_l", rec_l);
        gru("pred_g", pred_g);
        gru("pred_l", pred_l);
        msg("msg_enc_l2g", msg_enc_l2g);
        msg("msg_enc_g2l", msg_enc_g2l);
        msg("msg_rec_l2g", msg_rec_l2g);
        msg("msg_rec_g2l", msg_rec_g2l);
        msg("msg_pred_l2g", msg_pred_l2g);
        msg("msg_pred_g2l", msg_pred_g2l);
        aff("head_global", head_global);
        aff("head_local", head_local);
        aff("perc_hidden", perc_hidden);
        aff("perc_out", perc_out);
        return out;
    }

    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out;
        for (auto& [name, t] : named()) out.push_back(t);
        return out;
    }

    static ModelParams init(const ModelHyper& hp, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        auto uniform = [&](double lo, double hi) {
            double u = (rng() >> 11) * 0x1.0p-53;  // [0,1)
            return lo + u * (hi - lo);
        };
        auto matrix = [&](std::size_t r, std::size_t c) {
            double bound = 1.0 / std::sqrt(static_cast<double>(c));
            Tensor t = Tensor::zeros({r, c});
            for (double& e : t.v) e = uniform(-bound, bound);
            return t;
        };
        auto gru = [&](std::size_t in, std::size_t H) {
            GruParams g;
            g.Wz = matrix(H, in + H);
            g.Wr = matrix(H, in + H);
            g.Wh = matrix(H, in + H);
            g.bz = Tensor::zeros({H});
            g.br = Tensor::zeros({H});
            g.bh = Tensor::zeros({H});
            return g;
        };
        auto msg = [&](std::size_t H, std::size_t M) {
            return MessageParams{matrix(M, H), Tensor::zeros({M})};
        };
        auto aff = [&](std::size_t in, std::size_t out_dim) {
            return AffineParams{matrix(out_dim, in), Tensor::zeros({out_dim})};
        };

        ModelParams p;
        p.hp = hp;
        std::size_t gd = hp.global_dim(), ld = hp.local_dim();
        p.enc_g = gru(gd + hp.M, hp.H);
        p.enc_l = gru(ld + hp.M, hp.H);
        p.rec_g = gru(hp.M, hp.H);
        p.rec_l = gru(hp.M, hp.H);
        p.pred_g = gru(hp.M, hp.H);
        p.pred_l = gru(hp.M, hp.H);
        p.msg_enc_l2g = msg(hp.H, hp.M);
        p.msg_enc_g2l = msg(hp.H, hp.M);
        p.msg_rec_l2g = msg(hp.H, hp.M);
        p.msg_rec_g2l = msg(hp.H, hp.M);
        p.msg_pred_l2g = msg(hp.H, hp.M);
        p.msg_pred_g2l = msg(hp.H, hp.M);
        p.head_global = aff(hp.H, gd);
        p.head_local = aff(hp.H, ld);
        std::size_t pd = gd + ld;
        p.perc_hidden = aff(pd, 2 * pd);
        p.perc_out = aff(2 * pd, ld);
        return p;
    }
};

/// Standardized features of one input time step.
struct StepFeatures {
    std::vector<double> global_std;  // 4
    std::vector<double> local_std;   // 2k
};

/// One decoded time step: global/local in standardized space, perceptual in
/// diagonal-scaled image space.
struct OutputTriple {
    Var global, local, perceptual;
};

struct SegmentOutputs {
    std::vector<OutputTriple> reconstructed;  // size T, forward time order
    std::vector<OutputTriple> predicted;      // size P
};

namespace detail {

struct GruVars {
    Var Wz, Wr, Wh, bz, br, bh;
};
struct MsgVars {
    Var W, b;
};
struct AffVars {
    Var W, b;
};

inline GruVars lease(Tape& t, const GruParams& p) {
    return {t.param(p.Wz), t.param(p.Wr), t.param(p.Wh),
            t.param(p.bz), t.param(p.br), t.param(p.bh)};
}
inline MsgVars lease(Tape& t, const MessageParams& p) {
    return {t.param(p.W), t.param(p.b)};
}
inline AffVars lease(Tape& t, const AffineParams& p) {
    return {t.param(p.W), t.param(p.b)};
}

}  // namespace detail

inline Var compose_message(Tape& t, Var h_other, const detail::MsgVars& m) {
    return t.sigmoid(t.add(t.matvec(m.W, h_other), m.b));
}

inline Var gru_step(Tape& t, Var input, Var h_prev,
                    const detail::GruVars& g) {
    Var xh = t.concat(input, h_prev);
    Var z = t.sigmoid(t.add(t.matvec(g.Wz, xh), g.bz));
    Var r = t.sigmoid(t.add(t.matvec(g.Wr, xh), g.br));
    Var xrh = t.concat(input, t.mul(r, h_prev));
    Var cand = t.tanh(t.add(t.matvec(g.Wh, xrh), g.bh));
    // h' = (1-z)*h + z*cand = h + z*(cand - h)
    return t.add(h_prev, t.mul(z, t.sub(cand, h_prev)));
}

inline Var affine(Tape& t, Var x, const detail::AffVars& a) {
    return t.add(t.matvec(a.W, x), a.b);
}

/// All leased parameter Vars for one forward pass.
struct ModelVars {
    detail::GruVars enc_g, enc_l, rec_g, rec_l, pred_g, pred_l;
    detail::MsgVars msg_enc_l2g, msg_enc_g2l, msg_rec_l2g, msg_rec_g2l,
        msg_pred_l2g, msg_pred_g2l;
    detail::AffVars head_global, head_local, perc_hidden, perc_out;

    static ModelVars lease(Tape& t, const ModelParams& p) {
        using detail::lease;
        return {lease(t, p.enc_g),        lease(t, p.enc_l),
                lease(t, p.rec_g),        lease(t, p.rec_l),
                lease(t, p.pred_g),       lease(t, p.pred_l),
                lease(t, p.msg_enc_l2g),  lease(t, p.msg_enc_g2l),
                lease(t, p.msg_rec_l2g),  lease(t, p.msg_rec_g2l),
                lease(t, p.msg_pred_l2g), lease(t, p.msg_pred_g2l),
                lease(t, p.head_global),  lease(t, p.head_local),
                lease(t, p.perc_hidden),  lease(t, p.perc_out)};
    }
};

struct EncodedState {
    Var h_global, h_local;
};

/// Runs both encoders over a standardized segment; hidden states start at
/// zero, each branch reads the other's previous hidden state via a
/// sigmoid-gated message.
inline EncodedState encode(Tape& t, const std::vector<StepFeatures>& seg,
                           const ModelParams& p, const ModelVars& v) {
    if (seg.empty()) throw std::invalid_argument("encode: empty segment");
    Var hg = t.constant(Tensor::zeros({p.hp.H}));
    Var hl = t.constant(Tensor::zeros({p.hp.H}));
    for (const StepFeatures& f : seg) {
        Var fg = t.constant(Tensor::vector(f.global_std));
        Var fl = t.constant(Tensor::vector(f.local_std));
        Var m_l2g = compose_message(t, hl, v.msg_enc_l2g);
        Var m_g2l = compose_message(t, hg, v.msg_enc_g2l);
        Var hg_next = gru_step(t, t.concat(fg, m_l2g), hg, v.enc_g);
        Var hl_next = gru_step(t, t.concat(fl, m_g2l), hl, v.enc_l);
        hg = hg_next;
        hl = hl_next;
    }
    return {hg, hl};
}

inline OutputTriple project(Tape& t, Var hg, Var hl, const ModelVars& v) {
    OutputTriple o;
    o.global = affine(t, hg, v.head_global);
    o.local = affine(t, hl, v.head_local);
    Var cat = t.concat(o.global, o.local);
    Var hidden = t.tanh(affine(t, cat, v.perc_hidden));
    o.perceptual = affine(t, hidden, v.perc_out);
    return o;
}

/// Backward decoding pass over the input window. Both branches read each
/// other's pre-update states, then step simultaneously; the heads emit from
/// the updated states. Output is returned in forward time order.
inline std::vector<OutputTriple> reconstruct(Tape& t, EncodedState enc,
                                             std::size_t T,
                                             const ModelVars& v) {
    Var hg = enc.h_global, hl = enc.h_local;
    std::vector<OutputTriple> rev;
    rev.reserve(T);
    for (std::size_t step = 0; step < T; ++step) {
        Var m_l2g = compose_message(t, hl, v.msg_rec_l2g);
        Var m_g2l = compose_message(t, hg, v.msg_rec_g2l);
        Var hg_next = gru_step(t, m_l2g, hg, v.rec_g);
        Var hl_next = gru_step(t, m_g2l, hl, v.rec_l);
        hg = hg_next;
        hl = hl_next;
        rev.push_back(project(t, hg, hl, v));
    }
    return {rev.rbegin(), rev.rend()};
}

/// Forward decoding pass past the window, P steps.
inline std::vector<OutputTriple> predict(Tape& t, EncodedState enc,
                                         std::size_t P, const ModelVars& v) {
    Var hg = enc.h_global, hl = enc.h_local;
    std::vector<OutputTriple> out;
    out.reserve(P);
    for (std::size_t step = 0; step < P; ++step) {
        Var m_l2g = compose_message(t, hl, v.msg_pred_l2g);
        Var m_g2l = compose_message(t, hg, v.msg_pred_g2l);
        Var hg_next = gru_step(t, m_l2g, hg, v.pred_g);
        Var hl_next = gru_step(t, m_g2l, hl, v.pred_l);
        hg = hg_next;
        hl = hl_next;
        out.push_back(project(t, hg, hl, v));
    }
    return out;
}

inline SegmentOutputs forward(Tape& t, const std::vector<StepFeatures>& seg,
                              const ModelParams& p, const ModelVars& v,
                              std::size_t P) {
    EncodedState enc = encode(t, seg, p, v);
    SegmentOutputs out;
    out.reconstructed = reconstruct(t, enc, seg.size(), v);
    out.predicted = predict(t, enc, P, v);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container: hyperparameters, every parameter tensor, the two
// standardizers and the perceptual scale. JSON round-trips doubles exactly
// (shortest-representation serialization).
// ---------------------------------------------------------------------------

struct Checkpoint {
    ModelParams params;
    Standardizer global_std;
    Standardizer local_std;
    double frame_diagonal = 1.0;
    std::size_t stride = 1;  // segmentation stride used in training

    static constexpr int kVersion = 1;

    nlohmann::json to_json() {
        nlohmann::json j;
        j["version"] = kVersion;
        j["hyper"] = {{"k", params.hp.k}, {"H", params.hp.H},
                      {"M", params.hp.M}, {"T", params.hp.T},
                      {"P", params.hp.P}};
        j["stride"] = stride;
        j["frame_diagonal"] = frame_diagonal;
        nlohmann::json tensors = nlohmann::json::object();
        for (auto& [name, t] : params.named())
            tensors[name] = {{"shape", t->shape}, {"values", t->v}};
        j["tensors"] = std::move(tensors);
        j["global_std"] = {{"median", global_std.median()},
                           {"scale", global_std.scale()}};
        j["local_std"] = {{"median", local_std.median()},
                          {"scale", local_std.scale()}};
        return j;
    }

    static Checkpoint from_json(const nlohmann::json& j) {
        if (j.at("version").get<int>() != kVersion)
            throw std::runtime_error("checkpoint: unsupported version");
        Checkpoint c;
        const auto& h = j.at("hyper");
        ModelHyper hp{h.at("k"), h.at("H"), h.at("M"), h.at("T"), h.at("P")};
        c.params = ModelParams::init(hp, 0);
        c.stride = j.value("stride", std::size_t{1});
        c.frame_diagonal = j.at("frame_diagonal").get<double>();
        const auto& tensors = j.at("tensors");
        for (auto& [name, t] : c.params.named()) {
            const auto& entry = tensors.at(name);
            Tensor loaded(entry.at("shape").get<std::vector<std::size_t>>(),
                          entry.at("values").get<std::vector<double>>());
            if (loaded.shape != t->shape)
                throw std::runtime_error("checkpoint: shape mismatch for " +
                                         name);
            *t = std::move(loaded);
        }
        c.global_std = Standardizer(j.at("global_std").at("median"),
                                    j.at("global_std").at("scale"));
        c.local_std = Standardizer(j.at("local_std").at("median"),
                                   j.at("local_std").at("scale"));
        return c;
    }

    void save(const std::string& path) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        out << to_json().dump() << '\n';
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path);
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }
};

}  // namespace mped
