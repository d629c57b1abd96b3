#pragma once

#include <atomic>
#include <memory>
#include <string>

#include "jndloc/simobserver.hpp"
#include "jndloc/study.hpp"

namespace testing_support {

using nlohmann::json;

inline jndloc::sim::ScenarioConfig tiny_scenario(int study_images = 20, std::uint64_t seed = 11) {
    jndloc::sim::ScenarioConfig cfg;
    cfg.study_images = study_images;
    cfg.workers = 20;
    cfg.seed = seed;
    return cfg;
}

// Settable millisecond clock shared between the test and the service.
struct ManualClock {
    std::shared_ptr<std::atomic<std::int64_t>> now = std::make_shared<std::atomic<std::int64_t>>(1'000'000);

    jndloc::study::Clock fn() const {
        auto p = now;
        return [p] { return p->load(); };
    }
    void advance(std::int64_t ms) const { *now += ms; }
};

inline jndloc::study::TokenSource counting_tokens(std::string prefix = "tok") {
    auto n = std::make_shared<std::atomic<int>>(0);
    return [n, prefix] { return prefix + std::to_string(++*n); };
}

inline jndloc::study::ServiceOptions manual_options(const ManualClock& clock, std::string token_prefix = "tok") {
    jndloc::study::ServiceOptions o;
    o.clock = clock.fn();
    o.tokens = counting_tokens(std::move(token_prefix));
    return o;
}

inline jndloc::study::SessionRequest session_request(const std::string& worker) {
    return {worker, 96.0, true, 1920, 1080};
}

inline json clicks_json(const std::vector<jndloc::Point>& pts) {
    json out = json::array();
    for (std::size_t i = 0; i < 3; ++i) out.push_back({pts[i].x, pts[i].y});
    return out;
}

// Level and clicks that a perfect observer would report for `ref`.
inline json truthful_answer(const jndloc::sim::GroundTruthScenario& sc, const std::string& ref) {
    const auto gold = sc.study.gold.find(ref);
    if (gold != sc.study.gold.end()) {
        const auto& s = gold->second;
        return {{"level", (s.pjnd_range.lo + s.pjnd_range.hi) / 2},
                {"clicks", clicks_json({s.centers.begin(), s.centers.end()})}};
    }
    const auto& t = sc.truth(ref);
    return {{"level", t.true_pjnd}, {"clicks", clicks_json(t.strongest_centers())}};
}

// A gold answer that fails both checks.
inline json wrong_gold_answer(const jndloc::sim::GroundTruthScenario& sc, const std::string& ref) {
    const auto& s = sc.study.gold.at(ref);
    const int level = s.pjnd_range.hi < 95 ? 99 : 0;
    const double w = s.width - 1, h = s.height - 1;
    jndloc::Point far{0, 0};
    for (const jndloc::Point p : {jndloc::Point{0, 0}, jndloc::Point{w, 0}, jndloc::Point{0, h}, jndloc::Point{w, h},
                                  jndloc::Point{w / 2, h / 2}}) {
        bool clear = true;
        for (const auto& c : s.centers) clear = clear && jndloc::distance(c, p) > 2 * s.sigma_region;
        if (clear) {
            far = p;
            break;
        }
    }
    return {{"level", level}, {"clicks", clicks_json({far, far, far})}};
}

inline std::string qualification_ref(const jndloc::study::Study& st, int index) {
    return index < st.rules.training_items ? st.training_items[index]
                                           : st.quiz_items[index - st.rules.training_items];
}

// Creates a session and passes training and quiz; returns the token.
inline std::string qualify(jndloc::study::StudyService& svc, const jndloc::sim::GroundTruthScenario& sc,
                           const std::string& worker) {
    const auto token = svc.create_session(session_request(worker)).at("token").get<std::string>();
    const int total = sc.study.rules.training_items + sc.study.rules.quiz_items;
    for (int i = 0; i < total; ++i) {
        json body = truthful_answer(sc, qualification_ref(sc.study, i));
        body["item_index"] = i;
        svc.qualification_respond(token, body);
    }
    return token;
}

inline json hit_body(const json& answer, const std::string& ref, std::int64_t t) {
    json body = answer;
    body["image_ref"] = ref;
    body["started_at"] = t;
    body["submitted_at"] = t + 5000;
    return body;
}

// Answers every item of the worker's current assignment; gold items are
// answered wrongly when `fail_gold` is set. Returns the last response.
inline json complete_hit(jndloc::study::StudyService& svc, const jndloc::sim::GroundTruthScenario& sc,
                         const std::string& token, bool fail_gold = false) {
    const auto hit = svc.hit_next(token);
    json last;
    for (const auto& item : hit.at("items")) {
        const auto ref = item.at("image_ref").get<std::string>();
        const bool gold = sc.study.gold.count(ref) > 0;
        const auto answer = gold && fail_gold ? wrong_gold_answer(sc, ref) : truthful_answer(sc, ref);
        last = svc.hit_respond(token, hit.at("assignment_id").get<std::string>(), hit_body(answer, ref, 1000));
    }
    return last;
}

}  // namespace testing_support
