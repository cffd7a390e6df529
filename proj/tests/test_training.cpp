#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mped/datagen.hpp"
#include "mped/tracking.hpp"
#include "mped/training.hpp"

using namespace mped;

namespace {

std::mt19937_64 rng(555);

double uniform(double lo, double hi) {
    return lo + ((rng() >> 11) * 0x1.0p-53) * (hi - lo);
}

Trajectory make_traj(std::size_t len, std::size_t k = 2) {
    Trajectory t;
    t.video_id = "v";
    t.person_id = 0;
    t.start_frame = 0;
    for (std::size_t i = 0; i < len; ++i) {
        SkeletonFrame f;
        double cx = 100 + 2.0 * static_cast<double>(i);
        for (std::size_t j = 0; j < k; ++j)
            f.joints.push_back({cx + (j ? 10.0 : -10.0) + uniform(-1, 1),
                                200 + (j ? 20.0 : -20.0) + uniform(-1, 1)});
        t.frames.push_back(f);
    }
    return t;
}

std::vector<Trajectory> walker_corpus(std::size_t videos, std::size_t walkers,
                                      std::int64_t frames,
                                      std::uint64_t seed) {
    SceneSpec scene;
    scene.walkers = walkers;
    std::vector<Trajectory> out;
    for (std::size_t v = 0; v < videos; ++v) {
        scene.seed = seed + v;
        GeneratedVideo gv =
            generate(scene, {}, "train_" + std::to_string(v), frames);
        std::vector<Trajectory> trajs = group_trajectories(gv.detections);
        out.insert(out.end(), trajs.begin(), trajs.end());
    }
    return out;
}

}  // namespace

TEST_CASE("segment_trajectory examples") {
    WindowConfig cfg{4, 2, 0};
    SECTION("length 10, T=4, s=2") {
        Trajectory t = make_traj(10);
        auto segs = segment_trajectory(t, cfg);
        REQUIRE(segs.size() == 4);
        CHECK(segs[0].begin == 0);
        CHECK(segs[1].begin == 2);
        CHECK(segs[2].begin == 4);
        CHECK(segs[3].begin == 6);
    }
    SECTION("exact fit gives one segment") {
        auto segs = segment_trajectory(make_traj(4), WindowConfig{4, 1, 0});
        REQUIRE(segs.size() == 1);
    }
    SECTION("too short gives none") {
        CHECK(segment_trajectory(make_traj(3), cfg).empty());
    }
    SECTION("future frames are truncated at trajectory end") {
        auto segs = segment_trajectory(make_traj(10), WindowConfig{4, 2, 6});
        CHECK(segs[0].future == 6);
        CHECK(segs[3].future == 0);  // begins at 6, window ends at 10
    }
}

TEST_CASE("segment count matches enumeration") {
    for (std::size_t n = 0; n <= 50; ++n)
        for (std::size_t T = 2; T <= 10; ++T)
            for (std::size_t s = 1; s <= 5; ++s) {
                Trajectory t = make_traj(n);
                std::size_t expect = 0;
                for (std::size_t b = 0;; b += s) {
                    if (b + T > n) break;
                    ++expect;
                }
                CHECK(segment_trajectory(t, WindowConfig{T, s, 0}).size() ==
                      expect);
                if (n >= T)
                    CHECK(expect == (n - T) / s + 1);
            }
}

TEST_CASE("segment loss arithmetic") {
    SECTION("perfect outputs give zero") {
        CHECK(combine_segment_loss({0, 0}, {0}) == 0.0);
    }
    SECTION("hand example with prediction") {
        CHECK(combine_segment_loss({0.2, 0.4}, {0.6}) ==
              Catch::Approx(0.45).margin(1e-12));
    }
    SECTION("truncated prediction drops the term") {
        CHECK(combine_segment_loss({0.2, 0.4}, {}) ==
              Catch::Approx(0.3).margin(1e-12));
    }
    SECTION("empty reconstruction rejected") {
        CHECK_THROWS(combine_segment_loss({}, {}));
    }
}

TEST_CASE("combined loss weighting") {
    LossReport r{0.1, 0.2, 0.3};
    CHECK(r.combined({1, 1, 1}) == Catch::Approx(0.6));
    CHECK(r.combined({0, 0, 1}) == Catch::Approx(0.3));
    CHECK(LossReport{0.5, 0, 0}.combined({2, 0, 0}) == Catch::Approx(1.0));

    SECTION("linear in each weight") {
        for (int rep = 0; rep < 50; ++rep) {
            LossReport rr{uniform(0, 2), uniform(0, 2), uniform(0, 2)};
            double a = uniform(0, 3), b = uniform(0, 3);
            LossWeights w1{a, 0.7, 0.9}, w2{b, 0.7, 0.9};
            double mid = rr.combined({(a + b) / 2, 0.7, 0.9});
            CHECK(mid ==
                  Catch::Approx((rr.combined(w1) + rr.combined(w2)) / 2));
        }
    }
    SECTION("weight validation") {
        CHECK_THROWS(LossWeights{-1, 0, 0}.validate());
        CHECK_THROWS(LossWeights{0, 0, 0}.validate());
        CHECK_NOTHROW(LossWeights{0, 0, 1}.validate());
    }
}

TEST_CASE("one small step does not increase a segment's loss") {
    ModelHyper hp;
    hp.k = 2;
    hp.H = 4;
    hp.M = 3;
    int worse = 0;
    for (int rep = 0; rep < 100; ++rep) {
        ModelParams p = ModelParams::init(hp, 900 + rep);
        std::vector<Tensor*> registry = p.tensors();

        SegmentData d;
        d.T = 3;
        d.future = 1;
        for (std::size_t i = 0; i < 4; ++i) {
            std::vector<double> g(hp.global_dim()), l(hp.local_dim()),
                pc(hp.local_dim());
            for (double& e : g) e = uniform(-1, 1);
            for (double& e : l) e = uniform(-1, 1);
            for (double& e : pc) e = uniform(-1, 1);
            if (i < d.T) d.input.push_back({g, l});
            d.target_g.push_back(g);
            d.target_l.push_back(l);
            d.target_p.push_back(pc);
        }

        auto eval = [&](bool with_grad, std::vector<std::vector<double>>* gs) {
            Tape t;
            ModelVars mv = ModelVars::lease(t, p);
            SegmentOutputs out = forward(t, d.input, p, mv, d.future);
            LossVars lv = build_losses(t, out, d, LossWeights{});
            double loss = t.value(lv.total).v[0];
            if (with_grad) {
                Gradient grads = t.backward(lv.total);
                for (Tensor* reg : registry)
                    gs->push_back(grads.count(reg)
                                      ? grads.at(reg).v
                                      : std::vector<double>(reg->size(), 0.0));
            }
            return loss;
        };

        std::vector<std::vector<double>> grads;
        double before = eval(true, &grads);
        double lr = 1e-5;
        for (std::size_t i = 0; i < registry.size(); ++i)
            for (std::size_t j = 0; j < registry[i]->size(); ++j)
                registry[i]->v[j] -= lr * grads[i][j];
        double after = eval(false, nullptr);
        if (after > before + 1e-12) ++worse;
    }
    CHECK(worse == 0);
}

TEST_CASE("training on synthetic walkers") {
    std::vector<Trajectory> corpus = walker_corpus(2, 3, 120, 42);
    ModelHyper hp;
    hp.H = 8;
    hp.M = 4;
    TrainConfig tcfg;
    tcfg.epochs = 12;
    tcfg.patience = 12;
    tcfg.batch = 32;
    tcfg.seed = 5;
    WindowConfig wcfg{8, 4, 4};
    LossWeights weights;

    TrainResult res = train(corpus, hp, tcfg, wcfg, weights);
    REQUIRE(!res.log.empty());
    SECTION("loss decreases substantially") {
        double first = res.log.front().val_loss;
        CHECK(res.best_val < 0.5 * first);
    }
    SECTION("fixed seed reproduces the log exactly") {
        TrainResult res2 = train(corpus, hp, tcfg, wcfg, weights);
        REQUIRE(res2.log.size() == res.log.size());
        for (std::size_t i = 0; i < res.log.size(); ++i) {
            CHECK(res2.log[i].train_loss == res.log[i].train_loss);
            CHECK(res2.log[i].val_loss == res.log[i].val_loss);
        }
    }
    SECTION("checkpoint carries the corpus statistics") {
        CHECK(res.checkpoint.global_std.dim() == 4);
        CHECK(res.checkpoint.local_std.dim() == 34);
        CHECK(res.checkpoint.frame_diagonal > 0);
    }
}

TEST_CASE("training validation errors") {
    ModelHyper hp;
    TrainConfig tcfg;
    WindowConfig wcfg;
    CHECK_THROWS(train({}, hp, tcfg, wcfg, LossWeights{}));
    CHECK_THROWS(
        train({make_traj(3)}, hp, tcfg, wcfg, LossWeights{}));  // no segments
    CHECK_THROWS(LossWeights{0, 0, 0}.validate());
    TrainConfig bad;
    bad.split = 1.5;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("capacity selection rule") {
    SECTION("walks down to the smallest within 5%") {
        CapacityResult r;
        r.losses = {{64, 1.00}, {32, 1.02}, {16, 1.04}, {8, 1.09}};
        CHECK(select_capacity(r).selected_H == 16);
    }
    SECTION("singleton ladder") {
        CapacityResult r;
        r.losses = {{64, 2.5}};
        CHECK(select_capacity(r).selected_H == 64);
    }
    SECTION("no smaller candidate qualifies") {
        CapacityResult r;
        r.losses = {{64, 1.00}, {32, 1.06}, {16, 1.07}};
        CHECK(select_capacity(r).selected_H == 64);
    }
    SECTION("ladder must descend strictly") {
        std::vector<Trajectory> corpus = {make_traj(30)};
        ModelHyper hp;
        TrainConfig tcfg;
        WindowConfig wcfg;
        CHECK_THROWS(capacity_search(corpus, hp, {16, 16}, tcfg, wcfg,
                                     LossWeights{}));
        CHECK_THROWS(
            capacity_search(corpus, hp, {}, tcfg, wcfg, LossWeights{}));
    }
}

TEST_CASE("capacity search end to end on a tiny corpus") {
    std::vector<Trajectory> corpus = walker_corpus(1, 2, 60, 7);
    ModelHyper hp;
    hp.M = 4;
    hp.k = 17;
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.patience = 2;
    tcfg.batch = 32;
    WindowConfig wcfg{8, 8, 2};
    CapacityResult r =
        capacity_search(corpus, hp, {8, 4}, tcfg, wcfg, LossWeights{});
    REQUIRE(r.losses.size() == 2);
    CHECK(r.losses[0].first == 8);
    CHECK((r.selected_H == 8 || r.selected_H == 4));
    double l0 = r.losses[0].second;
    for (auto& [H, loss] : r.losses)
        if (H == r.selected_H) CHECK(loss <= 1.05 * l0);
}
