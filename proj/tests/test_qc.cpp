#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "jndloc/errors.hpp"
#include "jndloc/qc.hpp"
#include "support.hpp"

using namespace jndloc;
using namespace jndloc::qc;
using testing_support::TempDir;

namespace {

LoggedResponse entry(const std::string& worker, const std::string& hit, const std::string& image, int level,
                     bool gold = false) {
    LoggedResponse r;
    r.response.worker_id = worker;
    r.response.hit_id = hit;
    r.response.image_ref = image;
    r.response.level = level;
    r.response.clicks = {Point{10, 10}, Point{20, 20}, Point{30, 30}};
    r.gold = gold;
    return r;
}

void add_images(ResponseLog& log, int n, const std::string& prefix = "img") {
    for (int i = 0; i < n; ++i) {
        const std::string id = prefix + std::to_string(i);
        log.images[id] = {id, id, CodecId::jpeg, 64, 48, false};
    }
}

// W workers on one HIT of `n` images; worker k answers base + k % 3 unless overridden.
ResponseLog hit_log(int workers, int n = 10, const std::string& hit = "hit-000") {
    ResponseLog log;
    add_images(log, n);
    for (int k = 0; k < workers; ++k) {
        char w[16];
        std::snprintf(w, sizeof w, "w%03d", k);
        log.worker_states[w] = protocol::WorkerState::qualified;
        for (int i = 0; i < n; ++i) log.responses.push_back(entry(w, hit, "img" + std::to_string(i), 40 + k % 3));
    }
    return log;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(RejectedWorkers, IdentityWithoutRejections) {
    const auto log = hit_log(5);
    EXPECT_EQ(remove_rejected_workers(log).responses, log.responses);
}

TEST(RejectedWorkers, DropsExactlyTheirResponsesIncludingGold) {
    auto log = hit_log(4);
    log.worker_states["bad"] = protocol::WorkerState::rejected;
    for (int i = 0; i < 108; ++i) log.responses.push_back(entry("bad", "hit-" + std::to_string(i % 11), "img0", 50, i % 11 == 0));
    const auto before = log.responses.size();
    const auto out = remove_rejected_workers(log);
    EXPECT_EQ(before - out.responses.size(), 108u);
    for (const auto& r : out.responses) EXPECT_NE(r.response.worker_id, "bad");
    EXPECT_TRUE(out.stages.count(kStageRejectedWorkers));
}

TEST(HitFilter, RemovesCeilTenPercent) {
    for (int w : {1, 9, 10, 11, 49, 50, 55}) {
        std::vector<HitFilterDetail> details;
        const auto out = hit_level_outlier_removal(hit_log(w), 0.10, &details);
        ASSERT_EQ(details.size(), 1u);
        const int expect = static_cast<int>(std::ceil(0.1 * w - 1e-9));
        EXPECT_EQ(static_cast<int>(details[0].removed_workers.size()), expect) << w;
        EXPECT_EQ(out.responses.size(), static_cast<std::size_t>((w - expect) * 10));
    }
}

TEST(HitFilter, TiesRemoveHighestWorkerIds) {
    ResponseLog log;
    add_images(log, 3);
    for (int k = 0; k < 20; ++k)
        for (int i = 0; i < 3; ++i) log.responses.push_back(entry("w" + std::to_string(10 + k), "h", "img" + std::to_string(i), 40));
    std::vector<HitFilterDetail> details;
    hit_level_outlier_removal(log, 0.10, &details);
    EXPECT_EQ(details[0].removed_workers, (std::vector<std::string>{"w29", "w28"}));
}

TEST(HitFilter, DeviantWorkerRemovedFirst) {
    auto log = hit_log(50);
    for (auto& r : log.responses)
        if (r.response.worker_id == "w017") r.response.level = 100;
    std::vector<HitFilterDetail> details;
    hit_level_outlier_removal(log, 0.10, &details);
    EXPECT_EQ(details[0].removed_workers.front(), "w017");
    EXPECT_EQ(details[0].removed_workers.size(), 5u);
}

TEST(HitFilter, EachHitFilteredIndependently) {
    auto log = hit_log(20, 10, "hit-a");
    auto other = hit_log(30, 10, "hit-b");
    log.responses.insert(log.responses.end(), other.responses.begin(), other.responses.end());
    std::vector<HitFilterDetail> details;
    const auto out = hit_level_outlier_removal(log, 0.10, &details);
    ASSERT_EQ(details.size(), 2u);
    EXPECT_EQ(details[0].removed_workers.size(), 2u);
    EXPECT_EQ(details[1].removed_workers.size(), 3u);
    EXPECT_EQ(out.responses.size(), 18u * 10 + 27u * 10);
}

TEST(Extreme, Thresholds) {
    ResponseLog log;
    add_images(log, 1);
    for (int d : {4, 5, 95, 96, 0, 100, 50}) log.responses.push_back(entry("w", "h", "img0", d));
    const auto out = filter_extreme(log);
    std::vector<int> kept;
    for (const auto& r : out.responses) kept.push_back(r.response.level);
    EXPECT_EQ(kept, (std::vector<int>{5, 95, 50}));
    EXPECT_TRUE(filter_extreme(ResponseLog{}).responses.empty());
}

TEST(Pipeline, StageAccountingConservesCounts) {
    auto log = hit_log(30);
    log.worker_states["bad"] = protocol::WorkerState::rejected;
    for (int i = 0; i < 10; ++i) log.responses.push_back(entry("bad", "hit-000", "img" + std::to_string(i), 60));
    log.responses[3].response.level = 2;
    const auto res = run_pipeline(log);
    ASSERT_EQ(res.report.stages.size(), 3u);
    EXPECT_EQ(res.report.stages[0].stage, kStageRejectedWorkers);
    EXPECT_EQ(res.report.stages[1].stage, kStageHitLevel);
    EXPECT_EQ(res.report.stages[2].stage, kStageExtreme);
    std::size_t expected_input = res.report.input;
    for (const auto& s : res.report.stages) {
        EXPECT_EQ(s.input, expected_input);
        EXPECT_EQ(s.input - s.removed, s.remaining);
        expected_input = s.remaining;
    }
    EXPECT_EQ(res.report.output, res.log.responses.size());
    EXPECT_EQ(res.report.stages[0].removed, 10u);
    EXPECT_EQ(res.report.stages[1].removed, 30u);
}

TEST(Pipeline, Idempotent) {
    auto log = hit_log(40);
    std::mt19937_64 rng(3);
    for (auto& r : log.responses) r.response.level = static_cast<int>(rng() % 101);
    const auto once = run_pipeline(log);
    const auto twice = run_pipeline(once.log);
    EXPECT_EQ(twice.log.responses, once.log.responses);
    for (const auto& s : twice.report.stages) EXPECT_EQ(s.removed, 0u);
}

TEST(Aggregate, TwoPointStatisticsAndClicks) {
    ResponseLog log;
    add_images(log, 2);
    log.images["g"] = {"g", "g", CodecId::jpeg, 64, 48, true};
    log.responses.push_back(entry("a", "h", "img0", 40));
    log.responses.push_back(entry("b", "h", "img0", 44));
    log.responses.push_back(entry("a", "h", "g", 10, true));
    const auto res = aggregate(log, 5);
    ASSERT_EQ(res.annotations.size(), 1u);
    const auto& a = res.annotations[0];
    EXPECT_DOUBLE_EQ(a.mean_pjnd, 42);
    ASSERT_TRUE(a.std_pjnd.has_value());
    EXPECT_NEAR(*a.std_pjnd, std::sqrt(8.0), 1e-12);
    EXPECT_EQ(a.clicks.clicks.size(), 6u);
    EXPECT_EQ(a.map.width(), 64);
    EXPECT_EQ(res.flagged, std::vector<std::string>{"img1"});
}

TEST(Aggregate, ClicksAreThreePerResponseAndSingleSampleHasNoStd) {
    ResponseLog log;
    add_images(log, 2);
    for (int k = 0; k < 43; ++k) log.responses.push_back(entry("w" + std::to_string(k), "h", "img0", 30 + k % 7));
    log.responses.push_back(entry("solo", "h", "img1", 50));
    const auto res = aggregate(log, 5);
    ASSERT_EQ(res.annotations.size(), 2u);
    EXPECT_EQ(res.annotations[0].clicks.clicks.size(), 129u);
    EXPECT_FALSE(res.annotations[1].std_pjnd.has_value());
    EXPECT_EQ(annotation_record(res.annotations[1]).at("std_pjnd"), nullptr);
    for (const auto& a : res.annotations) {
        const auto [lo, hi] = std::minmax_element(a.pjnd_samples.begin(), a.pjnd_samples.end());
        EXPECT_GE(a.mean_pjnd, *lo);
        EXPECT_LE(a.mean_pjnd, *hi);
    }
}

TEST(Stats, SroccExamples) {
    const std::vector<double> x{1, 2, 3, 4, 5};
    std::vector<double> rev(x.rbegin(), x.rend());
    EXPECT_DOUBLE_EQ(srocc(x, x), 1.0);
    EXPECT_DOUBLE_EQ(srocc(x, rev), -1.0);
    const std::vector<double> a{1, 2, 3}, b{1, 3, 2};
    EXPECT_NEAR(srocc(a, b), 1 - 6.0 * 2 / (3 * 8), 1e-12);
    EXPECT_THROW(srocc(std::vector<double>{1, 1, 1}, a), DomainError);
    EXPECT_ANY_THROW(srocc(std::vector<double>{1}, std::vector<double>{1}));
}

TEST(Stats, SroccMatchesBruteForceWithTies) {
    std::mt19937_64 rng(1234);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 2 + rng() % 60;
        const int range = 2 + static_cast<int>(rng() % 20);  // small ranges force ties
        std::vector<double> x(n), y(n);
        for (auto& v : x) v = static_cast<double>(rng() % range);
        for (auto& v : y) v = static_cast<double>(rng() % range);
        bool degenerate = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
                          std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
        if (degenerate) continue;
        EXPECT_NEAR(srocc(x, y), testing_support::brute_force_srocc(x, y), 1e-9);
    }
}

TEST(Stats, SroccInvariantUnderMonotoneTransforms) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0, 1);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> x(30), y(30), ex(30), cube(30);
        for (int i = 0; i < 30; ++i) x[i] = g(rng), y[i] = x[i] + g(rng);
        for (int i = 0; i < 30; ++i) ex[i] = std::exp(x[i]), cube[i] = y[i] * y[i] * y[i] + 3;
        EXPECT_NEAR(srocc(ex, cube), srocc(x, y), 1e-12);
    }
}

TEST(Stats, LinfitExamplesAndOrthogonality) {
    const std::vector<double> x{0, 1, 2}, y{1, 3, 5};
    const auto f = linfit(x, y);
    EXPECT_NEAR(f.slope, 2, 1e-12);
    EXPECT_NEAR(f.intercept, 1, 1e-12);
    const auto c = linfit(x, std::vector<double>{7, 7, 7});
    EXPECT_NEAR(c.slope, 0, 1e-12);
    EXPECT_NEAR(c.intercept, 7, 1e-12);
    EXPECT_THROW(linfit(std::vector<double>{3, 3}, std::vector<double>{1, 2}), DomainError);

    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0, 10);
    std::vector<double> px(100), py(100);
    for (int i = 0; i < 100; ++i) px[i] = g(rng), py[i] = 0.65 * px[i] + 29.73 + g(rng);
    const auto fit = linfit(px, py);
    double dot = 0, sum = 0;
    for (int i = 0; i < 100; ++i) {
        const double r = py[i] - (fit.slope * px[i] + fit.intercept);
        dot += r * px[i];
        sum += r;
    }
    EXPECT_NEAR(dot, 0, 1e-9);
    EXPECT_NEAR(sum, 0, 1e-9);
}

TEST(Stats, LinfitRecoversNoiselessLines) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-50, 50);
    for (int t = 0; t < 100; ++t) {
        const double m = u(rng) / 10, b = u(rng);
        std::vector<double> x(20), y(20);
        for (int i = 0; i < 20; ++i) x[i] = u(rng), y[i] = m * x[i] + b;
        const auto f = linfit(x, y);
        EXPECT_NEAR(f.slope, m, 1e-9);
        EXPECT_NEAR(f.intercept, b, 1e-9);
    }
}

namespace {

std::vector<ImageAnnotation> annotations(int n) {
    std::vector<ImageAnnotation> out;
    for (int i = 0; i < n; ++i) {
        ImageAnnotation a;
        a.image_id = "img" + std::to_string(100 + i);
        a.pjnd_samples = {20 + i, 22 + i, 30 + i};
        a.mean_pjnd = 24 + i;
        a.std_pjnd = 5.29;
        a.clicks.image_id = a.image_id;
        for (int k = 0; k < 3 * (1 + i % 4); ++k) a.clicks.clicks.push_back({{double(k), double(k)}, "w"});
        a.map = critmap::aggregate_clicks_to_map(a.clicks, 3, 16, 12);
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace

TEST(Compare, SelfAndShift) {
    const auto ours = annotations(12);
    std::map<std::string, double> self, shifted;
    for (const auto& a : ours) self[a.image_id] = a.mean_pjnd, shifted[a.image_id] = a.mean_pjnd - 10;
    const auto r = compare_datasets(ours, self, CodecId::jpeg);
    EXPECT_EQ(r.n, 12u);
    EXPECT_NEAR(r.srocc, 1.0, 1e-12);
    EXPECT_NEAR(r.fit.slope, 1.0, 1e-12);
    EXPECT_NEAR(r.fit.intercept, 0.0, 1e-9);
    const auto s = compare_datasets(ours, shifted, CodecId::jpeg);
    EXPECT_NEAR(s.srocc, 1.0, 1e-12);
    EXPECT_NEAR(s.fit.slope, 1.0, 1e-12);
    EXPECT_NEAR(s.fit.intercept, 10.0, 1e-9);
    EXPECT_NEAR(s.mean_signed_difference, 10.0, 1e-12);
    EXPECT_ANY_THROW(compare_datasets(ours, {{"other", 1.0}}, CodecId::jpeg));
}

TEST(Export, LayoutManifestAndDeterminism) {
    TempDir a, b;
    const auto anns = annotations(7);
    const auto manifest = export_dataset(anns, a.path(), 3);
    const auto root = a.path() / "dataset";
    std::size_t samples = 0, clicks = 0;
    for (const auto& ann : anns) {
        EXPECT_TRUE(std::filesystem::exists(root / "images" / (ann.image_id + ".json")));
        EXPECT_TRUE(std::filesystem::exists(root / "maps" / (ann.image_id + ".png")));
        EXPECT_TRUE(std::filesystem::exists(root / "maps" / (ann.image_id + ".json")));
        const auto rec = nlohmann::json::parse(slurp(root / "images" / (ann.image_id + ".json")));
        samples += rec.at("pjnd_samples").size();
        clicks += rec.at("clicks").size();
    }
    EXPECT_EQ(manifest.at("image_count"), 7);
    EXPECT_EQ(manifest.at("pjnd_sample_count"), samples);
    EXPECT_EQ(manifest.at("click_count"), clicks);
    EXPECT_EQ(nlohmann::json::parse(slurp(root / "manifest.json")), manifest);

    export_dataset(anns, b.path(), 3);
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), a.path());
        EXPECT_EQ(slurp(entry.path()), slurp(b.path() / rel)) << rel;
    }
    EXPECT_THROW(export_dataset({}, a.path()), ValidationError);
}

TEST(Export, ReferenceTableReadsExportAndJson) {
    TempDir dir;
    const auto anns = annotations(4);
    export_dataset(anns, dir.path(), 3);
    const auto table = load_reference_table(dir.path());
    ASSERT_EQ(table.size(), 4u);
    for (const auto& a : anns) EXPECT_DOUBLE_EQ(table.at(a.image_id), a.mean_pjnd);
    write_json(dir / "ref.json", nlohmann::json::array({{{"id", "x"}, {"mean_pjnd", 12.5}}}));
    EXPECT_DOUBLE_EQ(load_reference_table(dir / "ref.json").at("x"), 12.5);
    write_json(dir / "ref2.json", {{"y", 3.0}});
    EXPECT_DOUBLE_EQ(load_reference_table(dir / "ref2.json").at("y"), 3.0);
}
