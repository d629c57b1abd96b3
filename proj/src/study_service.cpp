#include <openssl/rand.h>

#include <chrono>
#include <cstdio>

#include "jndloc/errors.hpp"
#include "jndloc/png_io.hpp"
#include "jndloc/study.hpp"

namespace jndloc::study {

namespace fs = std::filesystem;
using nlohmann::json;

std::int64_t system_clock_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::string random_token() {
    unsigned char buf[16];
    if (RAND_bytes(buf, sizeof buf) != 1) throw IoError("RAND_bytes failed");
    std::string out;
    char hex[3];
    for (unsigned char b : buf) {
        std::snprintf(hex, sizeof hex, "%02x", b);
        out += hex;
    }
    return out;
}

namespace {

[[noreturn]] void fail(int status, const std::string& msg) { throw ServiceError(status, msg); }

int int_field(const json& body, const char* key) {
    if (!body.is_object() || !body.contains(key) || !body.at(key).is_number_integer()) {
        fail(422, std::string("'") + key + "' must be an integer");
    }
    return body.at(key).get<int>();
}

std::int64_t time_field(const json& body, const char* key) {
    if (!body.contains(key) || !body.at(key).is_number_integer()) {
        fail(422, std::string("'") + key + "' must be an integer timestamp (ms)");
    }
    return body.at(key).get<std::int64_t>();
}

std::array<Point, kClicksPerResponse> clicks_field(const json& body, const qc::ImageInfo& img) {
    if (!body.contains("clicks")) fail(422, "'clicks' is required");
    std::array<Point, kClicksPerResponse> clicks;
    try {
        clicks = clicks_from_json(body.at("clicks"));
    } catch (const std::exception& e) {
        fail(422, e.what());
    }
    for (const auto& p : clicks) {
        if (!in_bounds(p, img.width, img.height)) fail(422, "click outside the image");
    }
    return clicks;
}

void check_level_field(int level) {
    if (level < 0 || level > kMaxLevel) fail(422, "'level' must be within [0, 100]");
}

void require_state(const protocol::WorkerRecord& w, protocol::WorkerState state, const char* action) {
    if (w.state == protocol::WorkerState::revoked || w.state == protocol::WorkerState::rejected) {
        fail(409, "worker " + w.worker_id + " is " + std::string(protocol::to_string(w.state)));
    }
    if (w.state != state) {
        fail(403, std::string(action) + " not allowed in state " + std::string(protocol::to_string(w.state)));
    }
}

json range_json(const gold::PjndRange& r) { return json::array({r.lo, r.hi}); }

} // namespace

StudyService::StudyService(Study study, std::shared_ptr<EventSink> sink, ServiceOptions options)
    : study_(std::move(study)), sink_(std::move(sink)), options_(std::move(options)), state_(study_) {
    commit({{"type", "study_opened"}, {"study", to_json(study_)}, {"at", options_.clock()}});
}

StudyService::StudyService(StudyState state, std::shared_ptr<EventSink> sink, ServiceOptions options)
    : study_(state.study()), sink_(std::move(sink)), options_(std::move(options)), state_(std::move(state)) {}

std::unique_ptr<StudyService> StudyService::open(const fs::path& log_path, const Study& study, ServiceOptions options) {
    auto events = read_event_log(log_path, /*repair=*/true);
    if (events.empty()) {
        return std::make_unique<StudyService>(study, std::make_shared<FileEventLog>(log_path), std::move(options));
    }
    // The log is authoritative: its embedded study wins over `study`.
    std::optional<StudyState> state;
    if (options.snapshot_path && fs::exists(*options.snapshot_path)) {
        try {
            const auto bytes = png::read_file(*options.snapshot_path);
            auto restored = StudyState::restore(json::parse(bytes.begin(), bytes.end()));
            if (restored.event_count() <= events.size()) {
                for (std::size_t i = restored.event_count(); i < events.size(); ++i) restored.apply(events[i]);
                state.emplace(std::move(restored));
            }
        } catch (const std::exception&) {
            state.reset();  // unusable snapshot: fall back to a full replay
        }
    }
    if (!state) state.emplace(StudyState::replay(events));
    return std::make_unique<StudyService>(std::move(*state), std::make_shared<FileEventLog>(log_path),
                                          std::move(options));
}

void StudyService::commit(json event) {
    sink_->append(event);
    state_.apply(event);
    if (options_.snapshot_path && options_.snapshot_every > 0 && state_.event_count() % options_.snapshot_every == 0) {
        const std::string text = state_.snapshot().dump();
        png::write_file_atomic(*options_.snapshot_path,
                               std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }
}

const Session& StudyService::session_for_write(const std::string& token, std::int64_t now) const {
    auto it = state_.sessions().find(token);
    if (it == state_.sessions().end()) fail(401, "unknown session");
    if (it->second.expires_at <= now) fail(401, "session expired");
    return it->second;
}

json StudyService::item_descriptor(const std::string& image_ref) const {
    const auto& img = study_.image(image_ref);
    return {{"image_ref", img.image_ref},
            {"codec", to_string(img.codec)},
            {"width", img.width},
            {"height", img.height},
            {"levels", kLadderSize},
            {"frame_url", "/v1/frame/" + img.image_ref + "/{d}"}};
}

json StudyService::create_session(const SessionRequest& req) {
    if (!valid_id(req.worker_id)) fail(422, "invalid worker_id");
    if (!(req.ppi >= study_.min_ppi && req.ppi <= study_.max_ppi)) fail(422, "ppi outside the accepted range");
    if (req.viewport_width < study_.min_viewport_width || req.viewport_height < study_.min_viewport_height) {
        fail(422, "viewport too small");
    }
    std::lock_guard lock(mutex_);
    if (const auto* w = state_.worker(req.worker_id)) {
        if (w->state == protocol::WorkerState::revoked || w->state == protocol::WorkerState::rejected) {
            fail(409, "worker " + req.worker_id + " is " + std::string(protocol::to_string(w->state)));
        }
    }
    const auto now = options_.clock();
    std::string token = options_.tokens();
    if (state_.sessions().count(token)) fail(500, "token collision");
    const auto expires = now + study_.session_ttl_ms;
    commit({{"type", "session"}, {"token", token}, {"worker_id", req.worker_id}, {"ppi", req.ppi},
            {"confirmed_distance", req.confirmed_distance}, {"created_at", now}, {"expires_at", expires}});
    return {{"token", token},
            {"worker_id", req.worker_id},
            {"expires_at", expires},
            {"state", protocol::to_string(state_.worker(req.worker_id)->state)}};
}

json StudyService::qualification_next(const std::string& token) {
    std::lock_guard lock(mutex_);
    auto it = state_.sessions().find(token);
    if (it == state_.sessions().end()) fail(401, "unknown session");
    const auto& w = *state_.worker(it->second.worker_id);
    if (w.state == protocol::WorkerState::revoked || w.state == protocol::WorkerState::rejected) {
        fail(409, "worker is " + std::string(protocol::to_string(w.state)));
    }
    if (w.state == protocol::WorkerState::qualified) fail(403, "already qualified");
    if (w.quiz_failed) fail(403, "qualification quiz failed");
    const auto index = state_.next_qualification_item(w.worker_id);
    if (!index) fail(403, "no qualification item pending");
    const bool training = *index < study_.rules.training_items;
    const auto& ref = training ? study_.training_items[static_cast<std::size_t>(*index)]
                               : study_.quiz_items[static_cast<std::size_t>(*index - study_.rules.training_items)];
    json out = item_descriptor(ref);
    out["item_index"] = *index;
    out["phase"] = training ? "training" : "quiz";
    out["training_total"] = study_.rules.training_items;
    out["quiz_total"] = study_.rules.quiz_items;
    return out;
}

json StudyService::qualification_respond(const std::string& token, const json& body) {
    std::lock_guard lock(mutex_);
    const auto now = options_.clock();
    const auto& session = session_for_write(token, now);
    const auto& w = *state_.worker(session.worker_id);
    if (w.state == protocol::WorkerState::revoked || w.state == protocol::WorkerState::rejected) {
        fail(409, "worker is " + std::string(protocol::to_string(w.state)));
    }
    if (w.state == protocol::WorkerState::qualified) fail(403, "already qualified");
    if (w.quiz_failed) fail(403, "qualification quiz failed");
    const auto index = state_.next_qualification_item(w.worker_id);
    if (!index) fail(403, "no qualification item pending");
    if (body.is_object() && body.contains("item_index") && body.at("item_index") != *index) {
        fail(409, "stale qualification item");
    }
    const int level = int_field(body, "level");
    check_level_field(level);
    const bool training = *index < study_.rules.training_items;
    const auto& ref = training ? study_.training_items[static_cast<std::size_t>(*index)]
                               : study_.quiz_items[static_cast<std::size_t>(*index - study_.rules.training_items)];
    const auto& img = study_.image(ref);
    const auto& spec = study_.gold.at(ref);

    protocol::TrainingAttempt attempt{level, std::nullopt};
    if (body.contains("clicks") && !body.at("clicks").is_null()) attempt.clicks = clicks_field(body, img);
    if (!training && !attempt.clicks) fail(422, "quiz responses need three clicks");

    json event = {{"type", "qualification_response"}, {"worker_id", w.worker_id}, {"item_index", *index},
                  {"phase", training ? "training" : "quiz"}, {"image_ref", ref}, {"level", level},
                  {"clicks", attempt.clicks ? clicks_to_json(*attempt.clicks) : json(nullptr)}, {"at", now}};
    json out = {{"item_index", *index}, {"phase", training ? "training" : "quiz"}};
    if (training) {
        const auto outcome = protocol::training_step(attempt, spec);
        event["action"] = protocol::to_string(outcome.action);
        out["action"] = protocol::to_string(outcome.action);
        out["pjnd_ok"] = outcome.pjnd_ok;
        if (attempt.clicks) out["hits"] = outcome.hits;
        if (outcome.shown_range) {
            out["ground_truth"] = {{"pjnd_range", range_json(*outcome.shown_range)},
                                   {"heatmap_url", "/v1/gold/" + ref + "/heatmap"}};
            if (outcome.shown_centers) {
                json centers = json::array();
                for (const auto& c : *outcome.shown_centers) centers.push_back({c.x, c.y});
                out["ground_truth"]["centers"] = centers;
            }
        }
    } else {
        Response r;
        r.level = level;
        r.clicks = *attempt.clicks;
        const auto v = gold::validate_gold_response(r, spec);
        event["validation"] = {{"pjnd_ok", v.pjnd_ok}, {"hits", v.hits}, {"correct", v.correct}};
    }
    commit(std::move(event));

    const auto& after = *state_.worker(w.worker_id);
    if (!training && after.quiz_answered == study_.rules.quiz_items) {
        const auto acc = protocol::accuracy(after.quiz_stats.a, after.quiz_stats.b, after.quiz_stats.c);
        const bool passed = after.state == protocol::WorkerState::qualified;
        commit({{"type", "quiz_graded"}, {"worker_id", after.worker_id}, {"a", after.quiz_stats.a},
                {"b", after.quiz_stats.b}, {"c", after.quiz_stats.c}, {"accuracy", acc}, {"passed", passed},
                {"at", now}});
        out["quiz"] = {{"accuracy", acc}, {"passed", passed}};
    }
    out["state"] = protocol::to_string(state_.worker(w.worker_id)->state);
    out["next_item"] = state_.next_qualification_item(w.worker_id) ? json(*state_.next_qualification_item(w.worker_id))
                                                                   : json(nullptr);
    return out;
}

json StudyService::hit_next(const std::string& token) {
    std::lock_guard lock(mutex_);
    const auto now = options_.clock();
    const auto& session = session_for_write(token, now);
    const auto& w = *state_.worker(session.worker_id);
    require_state(w, protocol::WorkerState::qualified, "study HITs");

    std::string aid;
    if (auto active = state_.active_assignment(w.worker_id, now)) {
        aid = *active;
    } else {
        const auto load = state_.template_load(now);
        const auto& seen = state_.seen_images(w.worker_id);
        const auto pick = protocol::pick_template(study_.templates, load, seen, study_.target_responses,
                                                  study_.overshoot);
        if (!pick) fail(404, "no HIT available");
        std::vector<protocol::PoolImage> gold_pool;
        for (const auto& ref : study_.gold_pool) {
            const auto it = state_.image_responses().find(ref);
            gold_pool.push_back({ref, study_.image(ref).codec, it == state_.image_responses().end() ? 0 : it->second});
        }
        const std::uint64_t n = state_.event_count();
        std::mt19937_64 rng(study_.seed ^ (0x9E3779B97F4A7C15ULL * (n + 1)));
        const auto hit = protocol::make_assignment(study_.templates[*pick], gold_pool, seen, rng);
        char id[32];
        std::snprintf(id, sizeof id, "a-%06zu", state_.assignments().size() + 1);
        aid = id;
        json items = json::array();
        for (const auto& it : hit.items) {
            items.push_back({{"image_ref", it.image_ref}, {"codec", to_string(it.codec)}, {"gold", it.gold}});
        }
        commit({{"type", "assignment"}, {"assignment_id", aid}, {"worker_id", w.worker_id}, {"hit_id", hit.hit_id},
                {"items", items}, {"issued_at", now}, {"expires_at", now + study_.assignment_ttl_ms}});
    }
    const auto& a = state_.assignments().at(aid);
    json items = json::array();
    for (const auto& it : a.hit.items) {
        json d = item_descriptor(it.image_ref);
        d["answered"] = a.answered.count(it.image_ref) > 0;
        items.push_back(std::move(d));
    }
    return {{"assignment_id", a.assignment_id}, {"hit_id", a.hit.hit_id}, {"expires_at", a.expires_at},
            {"items", items}};
}

json StudyService::hit_respond(const std::string& token, const std::string& assignment_id, const json& body) {
    std::lock_guard lock(mutex_);
    const auto now = options_.clock();
    const auto& session = session_for_write(token, now);
    auto ait = state_.assignments().find(assignment_id);
    if (ait == state_.assignments().end()) fail(404, "unknown assignment " + assignment_id);
    const Assignment& a = ait->second;
    if (a.worker_id != session.worker_id) fail(403, "assignment belongs to another worker");
    const auto& w = *state_.worker(session.worker_id);
    require_state(w, protocol::WorkerState::qualified, "responses");
    if (a.completed) fail(409, "assignment already completed");
    if (a.expires_at <= now) fail(409, "assignment expired");
    if (!body.is_object()) fail(422, "body must be a JSON object");
    if (body.contains("worker_id") && body.at("worker_id") != session.worker_id) fail(403, "worker_id mismatch");
    if (body.contains("hit_id") && body.at("hit_id") != a.hit.hit_id) fail(422, "hit_id mismatch");
    if (!body.contains("image_ref") || !body.at("image_ref").is_string()) fail(422, "'image_ref' is required");
    const std::string ref = body.at("image_ref").get<std::string>();
    const auto item = std::find_if(a.hit.items.begin(), a.hit.items.end(),
                                   [&](const protocol::HitItem& i) { return i.image_ref == ref; });
    if (item == a.hit.items.end()) fail(422, "image " + ref + " is not part of this assignment");
    if (a.answered.count(ref)) fail(409, "image " + ref + " already answered");
    const int level = int_field(body, "level");
    check_level_field(level);
    const auto clicks = clicks_field(body, study_.image(ref));
    const auto started = time_field(body, "started_at");
    const auto submitted = time_field(body, "submitted_at");
    if (started > submitted) fail(422, "started_at after submitted_at");
    json ppi = nullptr;
    if (body.contains("client_ppi")) {
        if (!body.at("client_ppi").is_number()) fail(422, "'client_ppi' must be a number");
        ppi = body.at("client_ppi");
    }

    json event = {{"type", "response"}, {"assignment_id", assignment_id}, {"worker_id", session.worker_id},
                  {"hit_id", a.hit.hit_id}, {"image_ref", ref}, {"gold", item->gold}, {"level", level},
                  {"clicks", clicks_to_json(clicks)}, {"started_at", started}, {"submitted_at", submitted},
                  {"client_ppi", ppi}, {"received_at", now}};
    const auto before = w.state;
    commit(std::move(event));

    const auto& done = state_.assignments().at(assignment_id);
    const auto& after = *state_.worker(session.worker_id);
    if (after.state != before) {
        commit({{"type", "worker_state"}, {"worker_id", after.worker_id}, {"from", protocol::to_string(before)},
                {"to", protocol::to_string(after.state)}, {"at", now}});
    }
    return {{"accepted", true},
            {"completed", done.completed},
            {"remaining", static_cast<int>(done.hit.items.size() - done.answered.size())},
            {"study_hits_completed", after.study_hits_completed},
            {"state", protocol::to_string(after.state)}};
}

json StudyService::stats() const {
    std::lock_guard lock(mutex_);
    const auto now = options_.clock();
    json states = json::object();
    for (const auto& [id, w] : state_.workers()) {
        auto& slot = states[std::string(protocol::to_string(w.state))];
        slot = slot.is_null() ? 1 : slot.get<int>() + 1;
    }
    const auto load = state_.template_load(now);
    json templates = json::array();
    int complete = 0;
    for (std::size_t i = 0; i < load.size(); ++i) {
        templates.push_back({{"hit_id", study_.templates[i].hit_id}, {"completed", load[i].completed},
                             {"in_flight", load[i].in_flight}, {"issued", load[i].issued}});
        if (load[i].completed >= study_.target_responses) ++complete;
    }
    int max_study = 0;
    int min_study = -1;
    for (const auto& t : study_.templates) {
        for (const auto& it : t.study_items) {
            const auto f = state_.image_responses().find(it.image_ref);
            const int n = f == state_.image_responses().end() ? 0 : f->second;
            max_study = std::max(max_study, n);
            min_study = min_study < 0 ? n : std::min(min_study, n);
        }
    }
    return {{"events", state_.event_count()},
            {"workers", states},
            {"responses", state_.responses().size()},
            {"assignments", state_.assignments().size()},
            {"templates", templates},
            {"templates_complete", complete},
            {"study_image_responses", {{"min", std::max(min_study, 0)}, {"max", max_study}}},
            {"target_responses", study_.target_responses},
            {"overshoot", study_.overshoot}};
}

qc::ResponseLog StudyService::response_log() const {
    std::lock_guard lock(mutex_);
    return state_.response_log();
}

StudyState StudyService::state_copy() const {
    std::lock_guard lock(mutex_);
    return state_;
}

} // namespace jndloc::study
