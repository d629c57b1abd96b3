#include "jndloc/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "jndloc/errors.hpp"

namespace jndloc::protocol {

std::string_view to_string(WorkerState state) {
    switch (state) {
        case WorkerState::fresh: return "new";
        case WorkerState::in_qualification: return "in_qualification";
        case WorkerState::qualified: return "qualified";
        case WorkerState::revoked: return "revoked";
        case WorkerState::rejected: return "rejected";
    }
    return "unknown";
}

WorkerState parse_worker_state(std::string_view name) {
    for (auto s : {WorkerState::fresh, WorkerState::in_qualification, WorkerState::qualified, WorkerState::revoked,
                   WorkerState::rejected}) {
        if (to_string(s) == name) return s;
    }
    throw DomainError("unknown worker state '" + std::string(name) + "'");
}

void transition(WorkerRecord& worker, WorkerState to) {
    const WorkerState from = worker.state;
    const bool allowed = (from == WorkerState::fresh && to == WorkerState::in_qualification) ||
                         (from == WorkerState::in_qualification && to == WorkerState::qualified) ||
                         (from == WorkerState::qualified && (to == WorkerState::revoked || to == WorkerState::rejected));
    if (!allowed) {
        throw StateError("worker " + worker.worker_id + ": illegal transition " + std::string(to_string(from)) +
                         " -> " + std::string(to_string(to)));
    }
    worker.state = to;
}

std::vector<std::size_t> sample_study_images(std::size_t n, std::size_t n_pick) {
    if (n_pick > n) throw DomainError("cannot pick " + std::to_string(n_pick) + " of " + std::to_string(n) + " images");
    std::vector<std::size_t> picked;
    picked.reserve(n_pick);
    for (std::size_t i = 0; i < n_pick; ++i) {
        const std::size_t index = (n * i + n_pick - 1) / n_pick;
        if (picked.empty() || picked.back() != index) picked.push_back(index);
    }
    return picked;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / static_cast<double>(v.size() - 1);
}

} // namespace

std::vector<std::string> select_gold_candidates(std::vector<PjndSamples> images, std::size_t n_bins) {
    if (n_bins == 0) throw DomainError("bin count must be positive");
    if (images.size() < n_bins) {
        throw DomainError("need at least " + std::to_string(n_bins) + " images, got " + std::to_string(images.size()));
    }
    struct Stat {
        const PjndSamples* image;
        double mean;
        double variance;
    };
    std::vector<Stat> stats;
    stats.reserve(images.size());
    for (const auto& img : images) {
        if (img.samples.size() < 2) throw DomainError("image " + img.image_id + " has fewer than two PJND samples");
        stats.push_back({&img, mean_of(img.samples), sample_variance(img.samples)});
    }
    std::sort(stats.begin(), stats.end(), [](const Stat& a, const Stat& b) {
        if (a.mean != b.mean) return a.mean < b.mean;
        return a.image->image_id < b.image->image_id;
    });

    const std::size_t base = stats.size() / n_bins;
    const std::size_t extra = stats.size() % n_bins;
    std::vector<std::string> chosen;
    chosen.reserve(n_bins);
    std::size_t begin = 0;
    for (std::size_t bin = 0; bin < n_bins; ++bin) {
        const std::size_t size = base + (bin < extra ? 1 : 0);
        const auto first = stats.begin() + static_cast<std::ptrdiff_t>(begin);
        const auto best = std::min_element(first, first + static_cast<std::ptrdiff_t>(size), [](const Stat& a, const Stat& b) {
            if (a.variance != b.variance) return a.variance < b.variance;
            return a.image->image_id < b.image->image_id;
        });
        chosen.push_back(best->image->image_id);
        begin += size;
    }
    return chosen;
}

std::vector<HitItem> draw_study_items(std::span<const PoolImage> pool, std::size_t count, std::mt19937_64& rng) {
    std::set<std::string> ids;
    for (const auto& p : pool) {
        if (!ids.insert(p.image_ref).second) throw DomainError("duplicate image in pool: " + p.image_ref);
    }
    if (pool.size() < count) {
        throw StateError("study pool exhausted: need " + std::to_string(count) + ", have " + std::to_string(pool.size()));
    }
    std::vector<const PoolImage*> order;
    order.reserve(pool.size());
    for (const auto& p : pool) order.push_back(&p);
    std::sort(order.begin(), order.end(), [](const PoolImage* a, const PoolImage* b) {
        if (a->responses != b->responses) return a->responses < b->responses;
        return a->image_ref < b->image_ref;
    });
    // shuffle within runs of equal response counts
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && order[j]->responses == order[i]->responses) ++j;
        std::shuffle(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(j), rng);
        if (j >= count) break;
        i = j;
    }
    std::vector<HitItem> items;
    items.reserve(count);
    for (std::size_t k = 0; k < count; ++k) items.push_back({order[k]->image_ref, order[k]->codec, false});
    return items;
}

Hit assemble_hit(std::span<const PoolImage> study_pool, std::span<const PoolImage> gold_pool, std::uint64_t seed,
                 std::string hit_id, const Rules& rules) {
    if (gold_pool.empty()) throw StateError("gold pool is empty");
    std::mt19937_64 rng(seed);
    Hit hit;
    hit.hit_id = std::move(hit_id);
    hit.items = draw_study_items(study_pool, static_cast<std::size_t>(rules.study_items_per_hit), rng);
    std::uniform_int_distribution<std::size_t> pick_gold(0, gold_pool.size() - 1);
    const auto& g = gold_pool[pick_gold(rng)];
    std::uniform_int_distribution<std::size_t> pick_pos(0, hit.items.size());
    hit.items.insert(hit.items.begin() + static_cast<std::ptrdiff_t>(pick_pos(rng)), HitItem{g.image_ref, g.codec, true});
    return hit;
}

std::vector<HitTemplate> build_hit_templates(std::span<const PoolImage> pool, std::uint64_t seed, const Rules& rules) {
    const auto per_hit = static_cast<std::size_t>(rules.study_items_per_hit);
    if (pool.empty() || pool.size() % per_hit != 0) {
        throw DomainError("study pool size " + std::to_string(pool.size()) + " is not a positive multiple of " +
                          std::to_string(per_hit));
    }
    std::mt19937_64 rng(seed);
    std::vector<PoolImage> remaining(pool.begin(), pool.end());
    std::vector<HitTemplate> templates;
    while (!remaining.empty()) {
        HitTemplate t;
        char id[32];
        std::snprintf(id, sizeof id, "hit-%03zu", templates.size());
        t.hit_id = id;
        t.study_items = draw_study_items(remaining, per_hit, rng);
        std::set<std::string> taken;
        for (const auto& item : t.study_items) taken.insert(item.image_ref);
        std::erase_if(remaining, [&](const PoolImage& p) { return taken.count(p.image_ref) > 0; });
        templates.push_back(std::move(t));
    }
    return templates;
}

std::optional<std::size_t> pick_template(std::span<const HitTemplate> templates, std::span<const TemplateLoad> load,
                                         const std::set<std::string>& seen_images, int target, int overshoot) {
    if (templates.size() != load.size()) throw DomainError("template/load size mismatch");
    std::optional<std::size_t> best;
    int best_load = 0;
    for (std::size_t i = 0; i < templates.size(); ++i) {
        const int active = load[i].completed + load[i].in_flight;
        if (active >= target || load[i].issued >= target + overshoot) continue;
        const bool seen = std::any_of(templates[i].study_items.begin(), templates[i].study_items.end(),
                                      [&](const HitItem& it) { return seen_images.count(it.image_ref) > 0; });
        if (seen) continue;
        if (!best || active < best_load) {
            best = i;
            best_load = active;
        }
    }
    return best;
}

Hit make_assignment(const HitTemplate& tmpl, std::span<const PoolImage> gold_pool,
                    const std::set<std::string>& seen_images, std::mt19937_64& rng) {
    if (gold_pool.empty()) throw StateError("gold pool is empty");
    std::vector<const PoolImage*> candidates;
    for (const auto& g : gold_pool) {
        if (seen_images.count(g.image_ref) == 0) candidates.push_back(&g);
    }
    if (candidates.empty()) {
        for (const auto& g : gold_pool) candidates.push_back(&g);
    }
    std::uniform_int_distribution<std::size_t> pick_gold(0, candidates.size() - 1);
    const PoolImage& g = *candidates[pick_gold(rng)];
    Hit hit{tmpl.hit_id, tmpl.study_items};
    std::uniform_int_distribution<std::size_t> pick_pos(0, hit.items.size());
    hit.items.insert(hit.items.begin() + static_cast<std::ptrdiff_t>(pick_pos(rng)), HitItem{g.image_ref, g.codec, true});
    return hit;
}

double accuracy(int a, int b, int c) {
    if (a < 1) throw DomainError("accuracy needs at least one gold image (a >= 1)");
    if (b < 0 || b > a || c < 0 || c > a) throw DomainError("accuracy needs 0 <= b, c <= a");
    return static_cast<double>(b + c) / (2.0 * a);
}

namespace {
bool meets(double acc, double threshold) {
    return acc >= threshold - 1e-12;
}
} // namespace

QuizResult grade_quiz(std::string worker_id, std::span<const Response> responses,
                      std::span<const gold::GoldSpec> specs, const Rules& rules) {
    if (responses.size() != static_cast<std::size_t>(rules.quiz_items) || specs.size() != responses.size()) {
        throw DomainError("quiz needs exactly " + std::to_string(rules.quiz_items) + " responses with specs");
    }
    QuizResult result;
    result.worker_id = std::move(worker_id);
    result.a = rules.quiz_items;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const auto v = gold::validate_gold_response(responses[i], specs[i]);
        result.b += v.pjnd_ok ? 1 : 0;
        result.c += v.hits >= 2 ? 1 : 0;
    }
    result.accuracy = accuracy(result.a, result.b, result.c);
    result.passed = meets(result.accuracy, rules.accuracy_threshold);
    return result;
}

WorkerRecord on_study_hit_completed(WorkerRecord worker, const gold::GoldValidation& validation, const Rules& rules) {
    if (worker.state != WorkerState::qualified) {
        throw StateError("worker " + worker.worker_id + " is " + std::string(to_string(worker.state)) +
                         ", not qualified");
    }
    worker.gold_stats.a += 1;
    worker.gold_stats.b += validation.pjnd_ok ? 1 : 0;
    worker.gold_stats.c += validation.hits >= 2 ? 1 : 0;
    worker.study_hits_completed += 1;
    const auto& g = worker.gold_stats;
    if (worker.study_hits_completed >= rules.accuracy_check_after &&
        !meets(accuracy(g.a, g.b, g.c), rules.accuracy_threshold)) {
        transition(worker, WorkerState::rejected);
    } else if (worker.study_hits_completed >= rules.max_study_hits) {
        transition(worker, WorkerState::revoked);
    }
    return worker;
}

std::string_view to_string(TrainingAction action) {
    switch (action) {
        case TrainingAction::unlock_clicks: return "unlock_clicks";
        case TrainingAction::advance: return "advance";
        case TrainingAction::retry: return "retry";
    }
    return "unknown";
}

TrainingOutcome training_step(const TrainingAttempt& attempt, const gold::GoldSpec& spec) {
    TrainingOutcome out;
    out.pjnd_ok = spec.pjnd_range.contains(attempt.level);
    if (!out.pjnd_ok) {
        out.action = TrainingAction::retry;
        out.shown_range = spec.pjnd_range;
        out.shown_centers = spec.centers;
        return out;
    }
    if (!attempt.clicks) {
        out.action = TrainingAction::unlock_clicks;
        return out;
    }
    Response r;
    r.level = attempt.level;
    r.clicks = *attempt.clicks;
    const auto v = gold::validate_gold_response(r, spec);
    out.hits = v.hits;
    if (v.correct) {
        out.action = TrainingAction::advance;
    } else {
        out.action = TrainingAction::retry;
        out.shown_range = spec.pjnd_range;
        out.shown_centers = spec.centers;
    }
    return out;
}

} // namespace jndloc::protocol
