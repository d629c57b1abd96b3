#include <gtest/gtest.h>

#include <fstream>

#include "jndloc/errors.hpp"
#include "study_support.hpp"
#include "support.hpp"

using namespace jndloc;
using namespace jndloc::study;
using namespace testing_support;

namespace {

int status_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ServiceError& e) {
        return e.status();
    }
    return 0;
}

class ServiceTest : public ::testing::Test {
protected:
    void SetUp() override {
        scenario = sim::make_scenario(tiny_scenario(100));
        log = std::make_shared<MemoryEventLog>();
        svc = std::make_unique<StudyService>(scenario.study, log, manual_options(clock));
    }

    sim::GroundTruthScenario scenario;
    ManualClock clock;
    std::shared_ptr<MemoryEventLog> log;
    std::unique_ptr<StudyService> svc;
};

}  // namespace

TEST_F(ServiceTest, FirstEventDescribesTheStudy) {
    ASSERT_EQ(log->lines().size(), 1u);
    const auto e = nlohmann::json::parse(log->lines()[0]);
    EXPECT_EQ(e.at("type"), "study_opened");
    EXPECT_EQ(e.at("study"), to_json(scenario.study));
    EXPECT_EQ(to_json(study_from_json(e.at("study"))), e.at("study"));
}

TEST_F(ServiceTest, SessionEligibility) {
    auto req = session_request("w1");
    req.worker_id = "bad id";
    EXPECT_EQ(status_of([&] { svc->create_session(req); }), 422);
    req = session_request("w1");
    req.ppi = 10;
    EXPECT_EQ(status_of([&] { svc->create_session(req); }), 422);
    req = session_request("w1");
    req.viewport_width = 1024;
    EXPECT_EQ(status_of([&] { svc->create_session(req); }), 422);
    EXPECT_EQ(log->lines().size(), 1u);
    const auto s = svc->create_session(session_request("w1"));
    EXPECT_EQ(s.at("state"), "new");
    EXPECT_EQ(s.at("token"), "tok1");
}

TEST_F(ServiceTest, SessionAuthentication) {
    EXPECT_EQ(status_of([&] { svc->hit_next("nope"); }), 401);
    const auto token = svc->create_session(session_request("w1")).at("token").get<std::string>();
    EXPECT_EQ(status_of([&] { svc->hit_next(token); }), 403);  // not qualified yet
    clock.advance(scenario.study.session_ttl_ms + 1);
    EXPECT_EQ(status_of([&] { svc->qualification_respond(token, {{"level", 40}}); }), 401);
}

TEST_F(ServiceTest, TrainingFeedbackAndGating) {
    const auto token = svc->create_session(session_request("w1")).at("token").get<std::string>();
    const auto item = svc->qualification_next(token);
    EXPECT_EQ(item.at("item_index"), 0);
    EXPECT_EQ(item.at("phase"), "training");
    EXPECT_FALSE(item.contains("gold"));
    const auto& spec = scenario.study.gold.at(scenario.study.training_items[0]);

    const auto wrong = svc->qualification_respond(token, {{"level", spec.pjnd_range.hi + 5}});
    EXPECT_EQ(wrong.at("action"), "retry");
    EXPECT_EQ(wrong.at("ground_truth").at("pjnd_range"), nlohmann::json::array({spec.pjnd_range.lo, spec.pjnd_range.hi}));
    EXPECT_EQ(wrong.at("ground_truth").at("centers").size(), 3u);
    EXPECT_EQ(wrong.at("next_item"), 0);

    const auto unlock = svc->qualification_respond(token, {{"level", spec.pjnd_range.lo}});
    EXPECT_EQ(unlock.at("action"), "unlock_clicks");
    EXPECT_EQ(status_of([&] { svc->qualification_respond(token, {{"level", 40}, {"item_index", 3}}); }), 409);

    const auto good = svc->qualification_respond(token, truthful_answer(scenario, scenario.study.training_items[0]));
    EXPECT_EQ(good.at("action"), "advance");
    EXPECT_EQ(good.at("next_item"), 1);
}

TEST_F(ServiceTest, QuizNeedsClicksAndGradesAtTheEnd) {
    const auto token = svc->create_session(session_request("w1")).at("token").get<std::string>();
    for (int i = 0; i < 5; ++i)
        svc->qualification_respond(token, truthful_answer(scenario, scenario.study.training_items[i]));
    EXPECT_EQ(svc->qualification_next(token).at("phase"), "quiz");
    EXPECT_EQ(status_of([&] { svc->qualification_respond(token, {{"level", 40}}); }), 422);
    nlohmann::json last;
    for (int i = 0; i < 10; ++i)
        last = svc->qualification_respond(token, truthful_answer(scenario, scenario.study.quiz_items[i]));
    EXPECT_EQ(last.at("quiz").at("passed"), true);
    EXPECT_EQ(last.at("state"), "qualified");
    EXPECT_EQ(status_of([&] { svc->qualification_next(token); }), 403);
}

TEST_F(ServiceTest, FailedQuizBlocksStudyHits) {
    const auto token = svc->create_session(session_request("w1")).at("token").get<std::string>();
    for (int i = 0; i < 5; ++i)
        svc->qualification_respond(token, truthful_answer(scenario, scenario.study.training_items[i]));
    nlohmann::json last;
    for (int i = 0; i < 10; ++i)
        last = svc->qualification_respond(token, wrong_gold_answer(scenario, scenario.study.quiz_items[i]));
    EXPECT_EQ(last.at("quiz").at("passed"), false);
    EXPECT_EQ(status_of([&] { svc->hit_next(token); }), 403);
    EXPECT_EQ(status_of([&] { svc->qualification_next(token); }), 403);
    EXPECT_TRUE(svc->state_copy().worker("w1")->quiz_failed);
}

TEST_F(ServiceTest, HitLifecycle) {
    const auto token = qualify(*svc, scenario, "w1");
    const auto hit = svc->hit_next(token);
    EXPECT_EQ(svc->hit_next(token), hit);  // active assignment is re-served
    ASSERT_EQ(hit.at("items").size(), 11u);
    for (const auto& item : hit.at("items")) EXPECT_FALSE(item.contains("gold"));
    const auto aid = hit.at("assignment_id").get<std::string>();

    const auto first = hit.at("items")[0].at("image_ref").get<std::string>();
    const auto body = hit_body(truthful_answer(scenario, first), first, 10);
    const auto r = svc->hit_respond(token, aid, body);
    EXPECT_EQ(r.at("remaining"), 10);
    const auto events = log->lines().size();
    EXPECT_EQ(status_of([&] { svc->hit_respond(token, aid, body); }), 409);
    EXPECT_EQ(log->lines().size(), events);

    EXPECT_EQ(status_of([&] { svc->hit_respond(token, "a-999999", body); }), 404);
    auto stray = body;
    stray["image_ref"] = "not-in-hit";
    EXPECT_EQ(status_of([&] { svc->hit_respond(token, aid, stray); }), 422);
    auto backwards = hit_body(truthful_answer(scenario, first), hit.at("items")[1].at("image_ref"), 10);
    backwards["submitted_at"] = 5;
    EXPECT_EQ(status_of([&] { svc->hit_respond(token, aid, backwards); }), 422);
    auto outside = hit_body(truthful_answer(scenario, first), hit.at("items")[1].at("image_ref"), 10);
    outside["clicks"][0] = {5000, 1};
    EXPECT_EQ(status_of([&] { svc->hit_respond(token, aid, outside); }), 422);

    const auto other = qualify(*svc, scenario, "w2");
    EXPECT_EQ(status_of([&] { svc->hit_respond(other, aid, body); }), 403);

    nlohmann::json last;
    for (std::size_t i = 1; i < 11; ++i) {
        const auto ref = hit.at("items")[i].at("image_ref").get<std::string>();
        last = svc->hit_respond(token, aid, hit_body(truthful_answer(scenario, ref), ref, 10));
    }
    EXPECT_EQ(last.at("completed"), true);
    EXPECT_EQ(last.at("study_hits_completed"), 1);
    EXPECT_NE(svc->hit_next(token).at("assignment_id"), aid);
}

TEST_F(ServiceTest, ExpiredAssignmentRefusesResponsesAndIsReissued) {
    const auto token = qualify(*svc, scenario, "w1");
    const auto hit = svc->hit_next(token);
    clock.advance(scenario.study.assignment_ttl_ms + 1);
    const auto ref = hit.at("items")[0].at("image_ref").get<std::string>();
    EXPECT_EQ(status_of([&] {
                  svc->hit_respond(token, hit.at("assignment_id"), hit_body(truthful_answer(scenario, ref), ref, 1));
              }),
              409);
    const auto fresh = qualify(*svc, scenario, "w2");
    EXPECT_EQ(svc->hit_next(fresh).at("hit_id"), hit.at("hit_id"));
}

TEST_F(ServiceTest, RejectionAfterTenHitsClosesTheWorker) {
    const auto token = qualify(*svc, scenario, "w1");
    nlohmann::json last;
    for (int i = 0; i < 10; ++i) last = complete_hit(*svc, scenario, token, /*fail_gold=*/true);
    EXPECT_EQ(last.at("state"), "rejected");
    EXPECT_EQ(nlohmann::json::parse(log->lines().back()).at("type"), "worker_state");
    EXPECT_EQ(status_of([&] { svc->hit_next(token); }), 409);
    EXPECT_EQ(status_of([&] { svc->create_session(session_request("w1")); }), 409);
    const auto rlog = svc->response_log();
    EXPECT_EQ(rlog.worker_states.at("w1"), protocol::WorkerState::rejected);
    EXPECT_EQ(rlog.responses.size(), 110u);
}

TEST_F(ServiceTest, TemplatesStopAtTargetPlusOvershoot) {
    auto small = tiny_scenario(10);
    small.target_responses = 2;
    small.overshoot = 1;
    const auto sc = sim::make_scenario(small);
    StudyService s(sc.study, std::make_shared<MemoryEventLog>(), manual_options(clock));
    std::vector<std::string> tokens;
    for (int i = 0; i < 4; ++i) tokens.push_back(qualify(s, sc, "w" + std::to_string(i)));
    s.hit_next(tokens[0]);
    s.hit_next(tokens[1]);
    EXPECT_EQ(status_of([&] { s.hit_next(tokens[2]); }), 404);  // in flight counts toward the target
    clock.advance(sc.study.assignment_ttl_ms + 1);
    s.hit_next(tokens[2]);  // expired assignments free their slot, within the overshoot
    EXPECT_EQ(status_of([&] { s.hit_next(tokens[3]); }), 404);
    EXPECT_LE(s.stats().at("templates")[0].at("issued").get<int>(), 3);
}

TEST(Replay, EveryPrefixMatchesIncrementalState) {
    const auto sc = sim::make_scenario(tiny_scenario(20));
    const auto res = sim::run_simulated_study(sc);
    std::vector<nlohmann::json> events;
    for (const auto& l : res.events->lines()) events.push_back(nlohmann::json::parse(l));
    ASSERT_GT(events.size(), 100u);

    StudyState incremental(study_from_json(events[0].at("study")));
    incremental.apply(events[0]);
    for (std::size_t k = 1; k < events.size(); ++k) {
        incremental.apply(events[k]);
        if (k % 37 == 0 || k + 1 == events.size()) {
            const auto prefix = std::vector<nlohmann::json>(events.begin(), events.begin() + static_cast<long>(k) + 1);
            EXPECT_TRUE(StudyState::replay(prefix).same_state(incremental)) << "prefix " << k + 1;
        }
    }
    EXPECT_EQ(incremental.response_log().responses, res.log.responses);
    for (const auto& [id, w] : res.workers) EXPECT_EQ(*incremental.worker(id), w);
}

TEST(Replay, SnapshotPlusTailEqualsFullReplay) {
    const auto sc = sim::make_scenario(tiny_scenario(20));
    const auto res = sim::run_simulated_study(sc);
    std::vector<nlohmann::json> events;
    for (const auto& l : res.events->lines()) events.push_back(nlohmann::json::parse(l));
    const auto full = StudyState::replay(events);
    for (std::size_t cut : {std::size_t{1}, events.size() / 3, events.size() / 2, events.size()}) {
        const auto prefix = StudyState::replay({events.begin(), events.begin() + static_cast<long>(cut)});
        auto restored = StudyState::restore(nlohmann::json::parse(prefix.snapshot().dump()));
        EXPECT_TRUE(restored.same_state(prefix));
        for (std::size_t i = cut; i < events.size(); ++i) restored.apply(events[i]);
        EXPECT_TRUE(restored.same_state(full)) << cut;
    }
}

TEST(Replay, RejectsLogsWithoutStudyHeader) {
    EXPECT_ANY_THROW(StudyState::replay({}));
    EXPECT_ANY_THROW(StudyState::replay({nlohmann::json{{"type", "session"}}}));
}

TEST(FileLog, TornTailIsDroppedAndRepaired) {
    TempDir dir;
    const auto path = dir / "events.jsonl";
    {
        FileEventLog f(path);
        f.append({{"type", "x"}, {"n", 1}});
        f.append({{"type", "x"}, {"n", 2}});
    }
    const auto good_size = std::filesystem::file_size(path);
    std::ofstream(path, std::ios::app) << "{\"type\":\"x\",\"n\":";
    EXPECT_EQ(read_event_log(path).size(), 2u);
    EXPECT_GT(std::filesystem::file_size(path), good_size);
    EXPECT_EQ(read_event_log(path, true).size(), 2u);
    EXPECT_EQ(std::filesystem::file_size(path), good_size);
    EXPECT_EQ(parse_event_lines("{\"a\":1}\n{\"a\":2}\n").size(), 2u);
}

TEST(FileLog, ReopenResumesWithIdenticalState) {
    TempDir dir;
    const auto sc = sim::make_scenario(tiny_scenario(20));
    ManualClock clock;
    auto opts = manual_options(clock);
    opts.snapshot_path = dir / "snap.json";
    opts.snapshot_every = 25;
    StudyState before(sc.study);
    {
        auto svc = StudyService::open(dir / "events.jsonl", sc.study, opts);
        const auto t1 = qualify(*svc, sc, "w1");
        complete_hit(*svc, sc, t1);
        qualify(*svc, sc, "w2");
        before = svc->state_copy();
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "snap.json"));
    auto opts2 = manual_options(clock, "second");
    opts2.snapshot_path = dir / "snap.json";
    auto again = StudyService::open(dir / "events.jsonl", sc.study, opts2);
    EXPECT_TRUE(again->state_copy().same_state(before));
    // Without the snapshot the full replay agrees too.
    std::filesystem::remove(dir / "snap.json");
    auto replayed = StudyService::open(dir / "events.jsonl", sc.study, manual_options(clock, "third"));
    EXPECT_TRUE(replayed->state_copy().same_state(before));
    // And the resumed service keeps appending to the same log.
    const auto t3 = qualify(*replayed, sc, "w3");
    EXPECT_EQ(replayed->hit_next(t3).at("items").size(), 11u);
    EXPECT_TRUE(StudyState::replay(read_event_log(dir / "events.jsonl")).same_state(replayed->state_copy()));
}

TEST(StudyValidation, RejectsInconsistentStudies) {
    const auto sc = sim::make_scenario(tiny_scenario(20));
    auto bad = sc.study;
    bad.gold_pool.clear();
    EXPECT_ANY_THROW(bad.validate());
    bad = sc.study;
    bad.quiz_items.pop_back();
    EXPECT_ANY_THROW(bad.validate());
    bad = sc.study;
    bad.templates[1].study_items[0] = bad.templates[0].study_items[0];
    EXPECT_ANY_THROW(bad.validate());
    EXPECT_NO_THROW(sc.study.validate());
}
