#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "mped/trajectory.hpp"

using namespace mped;

namespace {

std::mt19937_64 rng(777);

double uniform(double lo, double hi) {
    return lo + ((rng() >> 11) * 0x1.0p-53) * (hi - lo);
}

// Coordinates on a 1/64 pixel grid: exactly representable with headroom, so
// integer-grid translations are exact in floating point.
double grid(double lo, double hi) {
    return std::floor(uniform(lo, hi) * 64.0) / 64.0;
}

SkeletonFrame random_frame(std::size_t k = 17) {
    SkeletonFrame f;
    double cx = grid(50, 800), cy = grid(50, 400);
    for (std::size_t i = 0; i < k; ++i)
        f.joints.push_back({cx + grid(-40, 40), cy + grid(-80, 80)});
    // Force positive extent in both axes.
    f.joints[0].x = cx - 45;
    f.joints[1].x = cx + 45;
    f.joints[0].y = cy - 85;
    f.joints[1].y = cy + 85;
    return f;
}

}  // namespace

TEST_CASE("decompose hand examples") {
    SECTION("two joints") {
        SkeletonFrame f{{{0, 0}, {2, 4}}, {}};
        DecomposedFrame d = decompose(f);
        CHECK(d.global.xg == 1.0);
        CHECK(d.global.yg == 2.0);
        CHECK(d.global.w == 2.0);
        CHECK(d.global.h == 4.0);
        CHECK(d.local.joints[0].x == -0.5);
        CHECK(d.local.joints[0].y == -0.5);
        CHECK(d.local.joints[1].x == 0.5);
        CHECK(d.local.joints[1].y == 0.5);
    }
    SECTION("three joints with center point") {
        SkeletonFrame f{{{-1, -1}, {1, 1}, {0, 0}}, {}};
        DecomposedFrame d = decompose(f);
        CHECK(d.global.xg == 0.0);
        CHECK(d.global.w == 2.0);
        CHECK(d.global.h == 2.0);
        CHECK(d.local.joints[2].x == 0.0);
        CHECK(d.local.joints[2].y == 0.0);
    }
    SECTION("degenerate box rejected") {
        SkeletonFrame f{{{5, 5}, {5, 5}}, {}};
        CHECK_THROWS_AS(decompose(f), DegenerateBox);
        SkeletonFrame g{{{0, 5}, {3, 5}}, {}};  // flat in y only
        CHECK_THROWS_AS(decompose(g), DegenerateBox);
    }
}

TEST_CASE("recompose hand examples") {
    SECTION("unit box at origin") {
        SkeletonFrame f = recompose({0, 0, 1, 1}, {{{0.5, 0.5}}});
        CHECK(f.joints[0].x == 0.5);
        CHECK(f.joints[0].y == 0.5);
    }
    SECTION("offset box") {
        SkeletonFrame f = recompose({10, 20, 4, 2}, {{{-0.5, 0.5}}});
        CHECK(f.joints[0].x == 8.0);
        CHECK(f.joints[0].y == 21.0);
    }
    SECTION("non-positive extent rejected") {
        CHECK_THROWS_AS(recompose({0, 0, 0, 1}, {{{0, 0}}}), DegenerateBox);
    }
}

TEST_CASE("decomposition properties") {
    for (int rep = 0; rep < 200; ++rep) {
        SkeletonFrame f = random_frame();
        DecomposedFrame d = decompose(f);

        {
            // Round trip.
            SkeletonFrame back = recompose(d.global, d.local);
            for (std::size_t i = 0; i < f.joints.size(); ++i) {
                REQUIRE(std::abs(back.joints[i].x - f.joints[i].x) < 1e-9);
                REQUIRE(std::abs(back.joints[i].y - f.joints[i].y) < 1e-9);
            }
            // Local range with extremes attained.
            double lo_x = 1, hi_x = -1;
            for (const Joint& j : d.local.joints) {
                REQUIRE(j.x >= -0.5);
                REQUIRE(j.x <= 0.5);
                REQUIRE(j.y >= -0.5);
                REQUIRE(j.y <= 0.5);
                lo_x = std::min(lo_x, j.x);
                hi_x = std::max(hi_x, j.x);
            }
            REQUIRE(lo_x == -0.5);
            REQUIRE(hi_x == 0.5);

            // Translation equivariance.
            SkeletonFrame shifted = f;
            double dx = std::floor(uniform(-30, 30)),
                   dy = std::floor(uniform(-30, 30));
            for (Joint& j : shifted.joints) {
                j.x += dx;
                j.y += dy;
            }
            DecomposedFrame ds = decompose(shifted);
            REQUIRE(ds.global.xg == Catch::Approx(d.global.xg + dx));
            REQUIRE(ds.global.yg == Catch::Approx(d.global.yg + dy));
            REQUIRE(ds.global.w == d.global.w);
            REQUIRE(ds.global.h == d.global.h);
            for (std::size_t i = 0; i < f.joints.size(); ++i) {
                REQUIRE(ds.local.joints[i].x ==
                        Catch::Approx(d.local.joints[i].x).margin(1e-12));
                REQUIRE(ds.local.joints[i].y ==
                        Catch::Approx(d.local.joints[i].y).margin(1e-12));
            }

            // Scale covariance about the box center.
            double s = uniform(0.5, 2.0);
            SkeletonFrame scaled = f;
            for (Joint& j : scaled.joints) {
                j.x = d.global.xg + (j.x - d.global.xg) * s;
                j.y = d.global.yg + (j.y - d.global.yg) * s;
            }
            DecomposedFrame dc = decompose(scaled);
            REQUIRE(dc.global.w == Catch::Approx(d.global.w * s));
            REQUIRE(dc.global.h == Catch::Approx(d.global.h * s));
            for (std::size_t i = 0; i < f.joints.size(); ++i)
                REQUIRE(dc.local.joints[i].x ==
                        Catch::Approx(d.local.joints[i].x).margin(1e-12));
        }
    }
}

TEST_CASE("standardizer fit examples") {
    SECTION("0..10 single feature") {
        std::vector<std::vector<double>> samples;
        for (int i = 0; i <= 10; ++i) samples.push_back({double(i)});
        Standardizer s = Standardizer::fit(samples);
        CHECK(s.median()[0] == 5.0);
        CHECK(s.scale()[0] == 8.0);  // q90 - q10 = 9 - 1
        CHECK(s.transform({9.0})[0] == Catch::Approx(0.5));
    }
    SECTION("constant feature falls back to unit scale") {
        Standardizer s = Standardizer::fit({{7}, {7}, {7}});
        CHECK(s.median()[0] == 7.0);
        CHECK(s.scale()[0] == 1.0);
        CHECK(s.transform({7.0})[0] == 0.0);
    }
    SECTION("two samples") {
        Standardizer s = Standardizer::fit({{0}, {10}});
        CHECK(s.median()[0] == 5.0);
        CHECK(s.transform({5.0})[0] == 0.0);
    }
    SECTION("too few samples rejected") {
        CHECK_THROWS(Standardizer::fit({}));
        CHECK_THROWS(Standardizer::fit({{1.0}}));
    }
    SECTION("dimension mismatch rejected") {
        Standardizer s = Standardizer::fit({{0, 1}, {1, 2}, {2, 3}});
        CHECK_THROWS(s.transform({1.0}));
    }
}

TEST_CASE("standardizer round trip") {
    std::vector<std::vector<double>> samples;
    for (int i = 0; i < 50; ++i)
        samples.push_back({uniform(-100, 100), uniform(0, 1), uniform(5, 6)});
    Standardizer s = Standardizer::fit(samples);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> v{uniform(-100, 100), uniform(0, 1),
                              uniform(5, 6)};
        std::vector<double> back = s.inverse(s.transform(v));
        for (std::size_t i = 0; i < v.size(); ++i)
            REQUIRE(std::abs(back[i] - v[i]) <=
                    1e-9 * std::max(1.0, std::abs(v[i])));
    }
}

TEST_CASE("JSONL ingestion groups, sorts and splits at gaps") {
    std::string lines =
        R"({"video_id":"v","frame":2,"person_id":1,"joints":[[0,0],[1,1]]})"
        "\n"
        R"({"video_id":"v","frame":0,"person_id":1,"joints":[[0,0],[1,1]]})"
        "\n"
        R"({"video_id":"v","frame":1,"person_id":1,"joints":[[0,0],[1,1]]})"
        "\n"
        R"({"video_id":"v","frame":5,"person_id":1,"joints":[[2,2],[3,3]]})"
        "\n"
        R"({"video_id":"v","frame":0,"person_id":2,"joints":[[0,0],[1,1]],"conf":[0.9,0.8]})"
        "\n";
    std::vector<DetectionRecord> recs;
    std::istringstream in(lines);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line))
        recs.push_back(parse_detection_line(line, ++n));

    std::vector<Trajectory> trajs = group_trajectories(recs);
    REQUIRE(trajs.size() == 3);  // person 1 splits at the gap
    CHECK(trajs[0].person_id == 1);
    CHECK(trajs[0].start_frame == 0);
    CHECK(trajs[0].length() == 3);
    CHECK(trajs[1].start_frame == 5);
    CHECK(trajs[1].length() == 1);
    CHECK(trajs[2].person_id == 2);
    CHECK(trajs[2].frames[0].confidence.size() == 2);
}

TEST_CASE("malformed JSONL reports the line number") {
    CHECK_THROWS_WITH(parse_detection_line("{not json", 42),
                      Catch::Matchers::ContainsSubstring("42"));
    CHECK_THROWS_WITH(
        parse_detection_line(R"({"video_id":"v","frame":0,"joints":[[1]]})",
                             7),
        Catch::Matchers::ContainsSubstring("7"));
}

TEST_CASE("trajectory JSONL round trip") {
    Trajectory t;
    t.video_id = "vid";
    t.person_id = 3;
    t.start_frame = 10;
    for (int i = 0; i < 4; ++i) t.frames.push_back(random_frame(5));
    std::ostringstream out;
    save_trajectories({t}, out);
    std::istringstream in(out.str());
    std::vector<DetectionRecord> recs;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line))
        recs.push_back(parse_detection_line(line, ++n));
    std::vector<Trajectory> back = group_trajectories(recs);
    REQUIRE(back.size() == 1);
    CHECK(back[0].start_frame == 10);
    REQUIRE(back[0].length() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            CHECK(back[0].frames[i].joints[j].x == t.frames[i].joints[j].x);
}
