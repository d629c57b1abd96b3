#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jndloc/goldgen.hpp"
#include "jndloc/imaging.hpp"
#include "jndloc/response.hpp"

namespace jndloc::protocol {

// Study-design constants; the defaults are the published values.
struct Rules {
    double accuracy_threshold = 0.70;
    int max_study_hits = 20;
    int accuracy_check_after = 10;
    int study_items_per_hit = 10;
    int training_items = 5;
    int quiz_items = 10;
};

enum class WorkerState { fresh, in_qualification, qualified, revoked, rejected };

std::string_view to_string(WorkerState state);
WorkerState parse_worker_state(std::string_view name);

struct GoldStats {
    int a = 0;  // gold images seen in study HITs
    int b = 0;  // of those, PJND inside the range
    int c = 0;  // of those, at least two regions hit

    friend bool operator==(const GoldStats&, const GoldStats&) = default;
};

struct Calibration {
    double ppi = 0.0;
    bool confirmed_distance = false;

    friend bool operator==(const Calibration&, const Calibration&) = default;
};

struct WorkerRecord {
    std::string worker_id;
    WorkerState state = WorkerState::fresh;
    int study_hits_completed = 0;
    GoldStats gold_stats;
    Calibration calibration;

    // Qualification progress: training items passed, quiz answers so far.
    int training_passed = 0;
    int quiz_answered = 0;
    GoldStats quiz_stats;
    bool quiz_failed = false;

    friend bool operator==(const WorkerRecord&, const WorkerRecord&) = default;
};

// Moves along new -> in_qualification -> qualified -> {revoked, rejected};
// anything else throws StateError.
void transition(WorkerRecord& worker, WorkerState to);

struct HitItem {
    std::string image_ref;
    CodecId codec = CodecId::jpeg;
    bool gold = false;

    friend bool operator==(const HitItem&, const HitItem&) = default;
};

struct Hit {
    std::string hit_id;
    std::vector<HitItem> items;

    friend bool operator==(const Hit&, const Hit&) = default;
};

// Fixed group of study images that several workers complete, each with
// their own gold item inserted.
struct HitTemplate {
    std::string hit_id;
    std::vector<HitItem> study_items;
};

struct QuizResult {
    std::string worker_id;
    int a = 0;
    int b = 0;
    int c = 0;
    double accuracy = 0.0;
    bool passed = false;
};

// Indices ceil(n*i/n_pick), i = 0..n_pick-1, into a list sorted by mean PJND.
std::vector<std::size_t> sample_study_images(std::size_t n, std::size_t n_pick);

struct PjndSamples {
    std::string image_id;
    std::vector<double> samples;
};

// Minimum-variance image of each of n_bins contiguous bins over the
// images sorted by mean PJND.
std::vector<std::string> select_gold_candidates(std::vector<PjndSamples> images, std::size_t n_bins = 25);

struct PoolImage {
    std::string image_ref;
    CodecId codec = CodecId::jpeg;
    int responses = 0;
};

// Draws `count` distinct images, fewest responses first, random order
// among equal counts.
std::vector<HitItem> draw_study_items(std::span<const PoolImage> pool, std::size_t count, std::mt19937_64& rng);

Hit assemble_hit(std::span<const PoolImage> study_pool, std::span<const PoolImage> gold_pool, std::uint64_t seed,
                 std::string hit_id = "hit", const Rules& rules = {});

// Partitions the pool into templates of rules.study_items_per_hit images.
std::vector<HitTemplate> build_hit_templates(std::span<const PoolImage> pool, std::uint64_t seed,
                                             const Rules& rules = {});

struct TemplateLoad {
    int completed = 0;
    int in_flight = 0;
    int issued = 0;
};

// Least-loaded template below `target` (completed + in flight) and below
// target + overshoot issued, containing no image the worker has seen.
std::optional<std::size_t> pick_template(std::span<const HitTemplate> templates, std::span<const TemplateLoad> load,
                                         const std::set<std::string>& seen_images, int target, int overshoot);

// Inserts one gold item (uniform over unseen golds, else over all) at a
// random position among the template's study items.
Hit make_assignment(const HitTemplate& tmpl, std::span<const PoolImage> gold_pool,
                    const std::set<std::string>& seen_images, std::mt19937_64& rng);

double accuracy(int a, int b, int c);

QuizResult grade_quiz(std::string worker_id, std::span<const Response> responses,
                      std::span<const gold::GoldSpec> specs, const Rules& rules = {});

WorkerRecord on_study_hit_completed(WorkerRecord worker, const gold::GoldValidation& validation,
                                    const Rules& rules = {});

struct TrainingAttempt {
    int level = 0;
    std::optional<std::array<Point, kClicksPerResponse>> clicks;
};

enum class TrainingAction { unlock_clicks, advance, retry };

std::string_view to_string(TrainingAction action);

struct TrainingOutcome {
    TrainingAction action = TrainingAction::retry;
    bool pjnd_ok = false;
    int hits = 0;
    // Ground truth, shown with a retry.
    std::optional<gold::PjndRange> shown_range;
    std::optional<std::array<Point, gold::kRegionCount>> shown_centers;
};

// PJND first: clicks are only evaluated once the level is inside the range.
TrainingOutcome training_step(const TrainingAttempt& attempt, const gold::GoldSpec& spec);

} // namespace jndloc::protocol
