#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "jndloc/errors.hpp"
#include "jndloc/goldgen.hpp"

using namespace jndloc;
using namespace jndloc::gold;

namespace {

double gaussian_sum(std::span<const Point> centers, double sigma, double x, double y) {
    double v = 0;
    for (const auto& c : centers) v += std::exp(-((x - c.x) * (x - c.x) + (y - c.y) * (y - c.y)) / (2 * sigma * sigma));
    return v;
}

// Maximum click/center matching by DP over center subsets.
int matching_oracle(const std::array<Point, 3>& clicks, const std::array<Point, 3>& centers, double radius) {
    std::array<int, 8> best{};
    for (int i = 0; i < 3; ++i) {
        std::array<int, 8> next = best;
        for (int mask = 0; mask < 8; ++mask) {
            for (int j = 0; j < 3; ++j) {
                if (!(mask & (1 << j)) && distance(clicks[i], centers[j]) <= radius) {
                    next[mask | (1 << j)] = std::max(next[mask | (1 << j)], best[mask] + 1);
                }
            }
        }
        best = next;
    }
    return *std::max_element(best.begin(), best.end());
}

GoldSpec sample_spec() {
    GoldSpec s;
    s.source_id = "g";
    s.width = 400;
    s.height = 400;
    s.centers = {Point{100, 100}, Point{300, 100}, Point{200, 300}};
    s.sigma_region = 35;
    s.sigmoid_center = 40;
    s.pjnd_range = {36, 44};
    return s;
}

Response response_with(int level, std::array<Point, 3> clicks) {
    Response r;
    r.level = level;
    r.clicks = clicks;
    return r;
}

}  // namespace

TEST(StrongerLevel, Examples) {
    EXPECT_EQ(stronger_level(CodecId::jpeg, 50), 90);
    EXPECT_EQ(stronger_level(CodecId::jpeg, 1), 81);
    EXPECT_EQ(stronger_level(CodecId::bpg, 50), 70);
    EXPECT_EQ(stronger_level(CodecId::bpg, 72), 100);
    EXPECT_THROW(stronger_level(CodecId::jpeg, 0), DomainError);
    EXPECT_THROW(stronger_level(CodecId::bpg, 101), DomainError);
}

TEST(StrongerLevel, ExhaustiveAgainstFormula) {
    for (int d = 1; d <= 100; ++d) {
        EXPECT_EQ(stronger_level(CodecId::jpeg, d), static_cast<int>(std::ceil(80 + d / 5.0)));
        EXPECT_EQ(stronger_level(CodecId::bpg, d), std::min(static_cast<int>(std::ceil(1.4 * d - 1e-12)), 100));
    }
    // Gold ranges stop at 90 so the JPEG partner stays at least 8 levels stronger.
    for (int d = 1; d <= kJpegMaxGoldLevel; ++d) EXPECT_GE(stronger_level(CodecId::jpeg, d) - d, 8);
}

TEST(BlendField, CoincidentCentersPeakAtOne) {
    const std::array<Point, 3> c{Point{50, 50}, Point{50, 50}, Point{50, 50}};
    for (double s : {3.0, 35.0}) EXPECT_NEAR(blend_weight_field(c, s, 120, 100).at(50, 50), 1.0, 1e-12);
}

TEST(BlendField, MatchesDirectFormula) {
    const std::array<Point, 3> c{Point{20, 30}, Point{60, 35}, Point{45, 70}};
    const auto w = blend_weight_field(c, 12, 90, 80);
    double c_max = 0;
    for (int y = 0; y < 80; ++y)
        for (int x = 0; x < 90; ++x) c_max = std::max(c_max, gaussian_sum(c, 12, x, y));
    for (int y = 0; y < 80; y += 7)
        for (int x = 0; x < 90; x += 5) EXPECT_NEAR(w.at(x, y), gaussian_sum(c, 12, x, y) / c_max, 1e-12);
}

TEST(BlendField, SeparatedCentersAndTwoSigmaFalloff) {
    const double s = 35;
    const std::array<Point, 3> c{Point{40, 40}, Point{440, 40}, Point{240, 440}};
    const auto w = blend_weight_field(c, s, 520, 520);
    for (const auto& p : c) EXPECT_NEAR(w.at(int(p.x), int(p.y)), 1.0, 1e-3);
    EXPECT_NEAR(w.at(40 + 70, 40), std::exp(-2.0), 1e-3);
}

TEST(BlendField, RandomConfigurationsAreMaxNormalized) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> u(0, 149);
    for (int t = 0; t < 30; ++t) {
        std::array<Point, 3> c{};
        for (auto& p : c) p = {double(u(rng)), double(u(rng))};
        const auto w = blend_weight_field(c, 2 + double(rng() % 40), 150, 150);
        EXPECT_NEAR(*std::max_element(w.values().begin(), w.values().end()), 1.0, 1e-9);
    }
}

TEST(BlendField, DomainErrors) {
    const std::array<Point, 1> c{Point{5, 5}};
    EXPECT_THROW(blend_weight_field(c, 0, 10, 10), DomainError);
    const std::array<Point, 1> outside{Point{10, 5}};
    EXPECT_THROW(blend_weight_field(outside, 3, 10, 10), DomainError);
}

TEST(GoldFrame, DegenerateAndArithmeticBlends) {
    const auto a = make_test_pattern(16, 9, 1);
    const auto b = make_test_pattern(16, 9, 2);
    EXPECT_EQ(synthesize_gold_frame(a, b, BlendWeightField::constant(16, 9, 0.0)), a);
    EXPECT_EQ(synthesize_gold_frame(a, b, BlendWeightField::constant(16, 9, 1.0)), b);
    RasterImage p(1, 1, {100, 100, 100}), q(1, 1, {200, 200, 200});
    EXPECT_EQ(synthesize_gold_frame(p, q, BlendWeightField::constant(1, 1, 0.25)).samples()[0], 125);
    EXPECT_THROW(synthesize_gold_frame(a, make_test_pattern(8, 9, 1), BlendWeightField::constant(16, 9, 0.5)),
                 DomainError);
}

TEST(GoldFrame, StaysBetweenInputs) {
    const auto a = make_test_pattern(40, 30, 5);
    const auto b = make_test_pattern(40, 30, 6);
    const std::array<Point, 2> c{Point{10, 10}, Point{30, 20}};
    const auto out = synthesize_gold_frame(a, b, blend_weight_field(c, 8, 40, 30));
    for (std::size_t i = 0; i < out.samples().size(); ++i) {
        EXPECT_GE(out.samples()[i], std::min(a.samples()[i], b.samples()[i]));
        EXPECT_LE(out.samples()[i], std::max(a.samples()[i], b.samples()[i]));
    }
}

TEST(PjndRange, Examples) {
    EXPECT_EQ(gold_pjnd_range(40, 4), (PjndRange{36, 44}));
    EXPECT_EQ(gold_pjnd_range(50, 1e-9), (PjndRange{50, 50}));
    EXPECT_EQ(gold_pjnd_range(3, 4), (PjndRange{1, 7}));
}

TEST(PjndRange, MatchesLevelEnumeration) {
    for (int d0 = 1; d0 <= 100; ++d0) {
        for (double s : {0.5, 1.0, 2.5, 4.0, 7.0}) {
            int lo = 1000, hi = -1;
            for (int d = 1; d <= 100; ++d) {
                const double psi = 1.0 / (1.0 + std::exp(-(d - d0) / s));
                if (psi >= 0.25 - 1e-12 && psi <= 0.75 + 1e-12) lo = std::min(lo, d), hi = std::max(hi, d);
            }
            EXPECT_EQ(gold_pjnd_range(d0, s), (PjndRange{lo, hi})) << d0 << " " << s;
        }
    }
}

TEST(PjndRange, DomainErrors) {
    EXPECT_THROW(gold_pjnd_range(40, 0), DomainError);
    EXPECT_THROW(gold_pjnd_range(0, 4), DomainError);
    EXPECT_THROW(gold_pjnd_range(40, 4, 0.8, 0.7), DomainError);
}

TEST(GoldLadder, BlendsOnlyInsideRange) {
    JpegAdapter jpeg;
    auto spec = sample_spec();
    spec.width = 64;
    spec.height = 48;
    spec.sigma_region = 6;
    spec.centers = {Point{10, 10}, Point{50, 10}, Point{30, 38}};
    const auto src = make_test_pattern(64, 48, 3);
    const auto plain = build_ladder(src, "g", CodecId::jpeg, jpeg);
    const auto gold = build_gold_ladder(plain, spec);
    ASSERT_EQ(gold.frames.size(), 101u);
    EXPECT_EQ(gold.source_id, gold_ladder_id("g"));
    for (int d = 0; d <= 100; ++d) {
        if (!spec.pjnd_range.contains(d)) EXPECT_EQ(gold.frame(d), plain.frame(d)) << d;
    }
    const int d = 40;
    const auto& strong = plain.frame(stronger_level(CodecId::jpeg, d));
    auto dist = [&](int x, int y, const RasterImage& r) {
        double s = 0;
        for (int ch = 0; ch < 3; ++ch) s += std::abs(double(gold.frame(d).at(x, y, ch)) - r.at(x, y, ch));
        return s;
    };
    // At a planted center the blend is (almost) the stronger frame; far away it is the plain frame.
    EXPECT_LE(dist(10, 10, strong), dist(10, 10, plain.frame(d)));
    EXPECT_EQ(dist(63, 47, plain.frame(d)), 0.0);
}

TEST(SelectCenters, ThreeTallestOfFour) {
    critmap::CriticalityMap m(300, 300);
    const std::vector<std::tuple<double, double, double>> bumps{
        {60, 60, 0.6}, {240, 60, 1.0}, {60, 240, 0.8}, {240, 240, 0.1}};
    for (int y = 0; y < 300; ++y)
        for (int x = 0; x < 300; ++x) {
            double v = 0;
            for (auto [cx, cy, a] : bumps) v += a * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * 10.0 * 10.0));
            m.at(x, y) = float(v);
        }
    const auto c = select_gt_centers(m, 20);
    EXPECT_NEAR(c[0].x, 240, 1); EXPECT_NEAR(c[0].y, 60, 1);
    EXPECT_NEAR(c[1].x, 60, 1);  EXPECT_NEAR(c[1].y, 240, 1);
    EXPECT_NEAR(c[2].x, 60, 1);  EXPECT_NEAR(c[2].y, 60, 1);
}

TEST(SelectCenters, SingleBumpIsSelectionError) {
    critmap::CriticalityMap m(100, 100);
    for (int y = 0; y < 100; ++y)
        for (int x = 0; x < 100; ++x) m.at(x, y) = float(std::exp(-((x - 50) * (x - 50) + (y - 50) * (y - 50)) / 200.0));
    EXPECT_THROW(select_gt_centers(m, 20), SelectionError);
}

TEST(SelectCenters, ConstructionOrderDoesNotMatter) {
    std::vector<std::tuple<double, double, double>> bumps{{50, 100, 0.9}, {150, 100, 0.9}, {100, 30, 0.5}};
    std::array<Point, 3> first{};
    bool have = false;
    std::sort(bumps.begin(), bumps.end());
    do {
        critmap::CriticalityMap m(200, 160);
        for (int y = 0; y < 160; ++y)
            for (int x = 0; x < 200; ++x) {
                float v = 0;
                for (auto [cx, cy, a] : bumps) v += float(a * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / 128.0));
                m.at(x, y) = v;
            }
        const auto c = select_gt_centers(m, 16);
        if (!have) first = c, have = true;
        EXPECT_EQ(c, first);
    } while (std::next_permutation(bumps.begin(), bumps.end()));
}

TEST(Validation, TwoSigmaBoundary) {
    auto spec = sample_spec();
    const Point far1{390, 390}, far2{0, 399};
    EXPECT_EQ(validate_gold_response(response_with(40, {Point{100, 169}, far1, far2}), spec).hits, 1);
    EXPECT_EQ(validate_gold_response(response_with(40, {Point{100, 171}, far1, far2}), spec).hits, 0);
}

TEST(Validation, TruthTable) {
    const auto spec = sample_spec();
    const std::array<Point, 3> on{spec.centers[0], spec.centers[1], spec.centers[2]};
    const Point off{399, 399};
    for (int level : {40, 60}) {
        for (int hits = 0; hits <= 3; ++hits) {
            std::array<Point, 3> clicks{off, off, off};
            for (int i = 0; i < hits; ++i) clicks[i] = on[i];
            const auto v = validate_gold_response(response_with(level, clicks), spec);
            EXPECT_EQ(v.hits, hits);
            EXPECT_EQ(v.pjnd_ok, level == 40);
            EXPECT_EQ(v.correct, level == 40 && hits >= 2);
        }
    }
}

TEST(Validation, OneClickCoversOneCenter) {
    auto spec = sample_spec();
    spec.centers = {Point{100, 100}, Point{130, 100}, Point{300, 300}};
    const Point between{115, 100};
    const auto v = validate_gold_response(response_with(40, {between, between, Point{0, 399}}), spec);
    EXPECT_EQ(v.hits, 2);
    const auto single = validate_gold_response(response_with(40, {between, Point{0, 399}, Point{399, 0}}), spec);
    EXPECT_EQ(single.hits, 1);
    EXPECT_FALSE(single.correct);
}

TEST(Validation, PermutationInvariantAndMatchesOracle) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0, 399);
    for (int t = 0; t < 400; ++t) {
        auto spec = sample_spec();
        for (auto& c : spec.centers) c = {u(rng), u(rng)};
        std::array<Point, 3> clicks{};
        for (int i = 0; i < 3; ++i) {
            // Half the clicks land near some center so that matchings are non-trivial.
            clicks[i] = (rng() % 2) ? Point{std::clamp(spec.centers[rng() % 3].x + u(rng) / 4 - 50, 0.0, 399.0),
                                            std::clamp(spec.centers[rng() % 3].y + u(rng) / 4 - 50, 0.0, 399.0)}
                                    : Point{u(rng), u(rng)};
        }
        const int expect = matching_oracle(clicks, spec.centers, 70);
        std::array<int, 3> pc{0, 1, 2};
        do {
            std::array<int, 3> pk{0, 1, 2};
            do {
                auto s = spec;
                std::array<Point, 3> c{};
                for (int i = 0; i < 3; ++i) s.centers[i] = spec.centers[pc[i]], c[i] = clicks[pk[i]];
                EXPECT_EQ(validate_gold_response(response_with(40, c), s).hits, expect);
            } while (std::next_permutation(pk.begin(), pk.end()));
        } while (std::next_permutation(pc.begin(), pc.end()));
    }
}

TEST(Spec, JsonRoundTripAndSynthesisDeterminism) {
    critmap::CriticalityMap m(256, 256);
    const std::array<Point, 3> planted{Point{50, 50}, Point{200, 60}, Point{120, 200}};
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x) m.at(x, y) = float(gaussian_sum(planted, 12, x, y));
    const auto a = synthesize_gold_spec("s1", CodecId::jpeg, m, 40, 99);
    const auto b = synthesize_gold_spec("s1", CodecId::jpeg, m, 40, 99);
    EXPECT_EQ(a, b);
    EXPECT_GE(a.sigmoid_center, 30);
    EXPECT_LE(a.sigmoid_center, 50);
    EXPECT_LE(a.pjnd_range.hi, kJpegMaxGoldLevel);
    EXPECT_EQ(spec_from_json(to_json(a)), a);
    for (const auto& c : a.centers) {
        double best = 1e9;
        for (const auto& p : planted) best = std::min(best, distance(c, p));
        EXPECT_LE(best, a.sigma_region / 2);
    }
}

TEST(Spec, JpegRangeCappedAtNinety) {
    critmap::CriticalityMap m(256, 256);
    const std::array<Point, 3> planted{Point{50, 50}, Point{200, 60}, Point{120, 200}};
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x) m.at(x, y) = float(gaussian_sum(planted, 12, x, y));
    SynthesisConfig cfg;
    cfg.center_jitter = 0;
    const auto s = synthesize_gold_spec("hi", CodecId::jpeg, m, 90, 1, cfg);
    EXPECT_EQ(s.sigmoid_center, 90);
    EXPECT_EQ(s.pjnd_range.hi, 90);
    EXPECT_EQ(synthesize_gold_spec("hi", CodecId::bpg, m, 90, 1, cfg).pjnd_range.hi, 94);
}
