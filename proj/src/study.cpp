#include "jndloc/study.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "jndloc/errors.hpp"
#include "jndloc/png_io.hpp"

namespace jndloc::study {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Study definition

const qc::ImageInfo& Study::image(const std::string& ref) const {
    auto it = std::find_if(images.begin(), images.end(), [&](const qc::ImageInfo& i) { return i.image_ref == ref; });
    if (it == images.end()) throw ValidationError("unknown image " + ref);
    return *it;
}

void Study::validate() const {
    std::set<std::string> refs;
    for (const auto& img : images) {
        if (!valid_id(img.image_ref)) throw ValidationError("invalid image ref '" + img.image_ref + "'");
        if (!refs.insert(img.image_ref).second) throw ValidationError("duplicate image ref " + img.image_ref);
        if (img.width <= 0 || img.height <= 0) throw ValidationError("image " + img.image_ref + " has no size");
        if (img.gold && !gold.count(img.image_ref)) throw ValidationError("gold image " + img.image_ref + " has no spec");
    }
    for (const auto& [ref, spec] : gold) {
        const auto& img = image(ref);
        if (!img.gold) throw ValidationError("spec for non-gold image " + ref);
        if (spec.width != img.width || spec.height != img.height) {
            throw ValidationError("gold spec size mismatch for " + ref);
        }
        gold::validate_spec(spec);
    }
    auto check_gold_list = [&](const std::vector<std::string>& list, std::size_t expected, const char* what) {
        if (list.size() != expected) {
            throw ValidationError(std::string(what) + " needs " + std::to_string(expected) + " gold items, has " +
                                  std::to_string(list.size()));
        }
        for (const auto& ref : list) {
            if (!gold.count(ref)) throw ValidationError(std::string(what) + " item " + ref + " is not a gold image");
        }
    };
    check_gold_list(training_items, static_cast<std::size_t>(rules.training_items), "training");
    check_gold_list(quiz_items, static_cast<std::size_t>(rules.quiz_items), "quiz");
    if (gold_pool.empty()) throw ValidationError("gold pool is empty");
    for (const auto& ref : gold_pool) {
        if (!gold.count(ref)) throw ValidationError("gold pool item " + ref + " is not a gold image");
    }
    std::set<std::string> in_templates;
    for (const auto& t : templates) {
        if (t.study_items.size() != static_cast<std::size_t>(rules.study_items_per_hit)) {
            throw ValidationError("template " + t.hit_id + " has the wrong number of items");
        }
        for (const auto& item : t.study_items) {
            if (image(item.image_ref).gold) throw ValidationError("template " + t.hit_id + " contains a gold image");
            if (!in_templates.insert(item.image_ref).second) {
                throw ValidationError("image " + item.image_ref + " appears in more than one template");
            }
        }
    }
    if (target_responses < 1 || overshoot < 0) throw ValidationError("target/overshoot out of range");
    if (!(min_ppi > 0 && min_ppi <= max_ppi)) throw ValidationError("ppi bounds out of range");
}

namespace {

json rules_json(const protocol::Rules& r) {
    return {{"accuracy_threshold", r.accuracy_threshold}, {"max_study_hits", r.max_study_hits},
            {"accuracy_check_after", r.accuracy_check_after}, {"study_items_per_hit", r.study_items_per_hit},
            {"training_items", r.training_items}, {"quiz_items", r.quiz_items}};
}

protocol::Rules rules_from(const json& j) {
    protocol::Rules r;
    r.accuracy_threshold = j.value("accuracy_threshold", r.accuracy_threshold);
    r.max_study_hits = j.value("max_study_hits", r.max_study_hits);
    r.accuracy_check_after = j.value("accuracy_check_after", r.accuracy_check_after);
    r.study_items_per_hit = j.value("study_items_per_hit", r.study_items_per_hit);
    r.training_items = j.value("training_items", r.training_items);
    r.quiz_items = j.value("quiz_items", r.quiz_items);
    return r;
}

json image_json(const qc::ImageInfo& i) {
    return {{"image_ref", i.image_ref}, {"source_id", i.source_id}, {"codec", to_string(i.codec)},
            {"width", i.width}, {"height", i.height}, {"gold", i.gold}};
}

qc::ImageInfo image_from(const json& j) {
    qc::ImageInfo i;
    i.image_ref = j.at("image_ref").get<std::string>();
    i.source_id = j.value("source_id", i.image_ref);
    i.codec = parse_codec(j.at("codec").get<std::string>());
    i.width = j.at("width").get<int>();
    i.height = j.at("height").get<int>();
    i.gold = j.value("gold", false);
    return i;
}

json item_json(const protocol::HitItem& item) {
    return {{"image_ref", item.image_ref}, {"codec", to_string(item.codec)}, {"gold", item.gold}};
}

protocol::HitItem item_from(const json& j) {
    return {j.at("image_ref").get<std::string>(), parse_codec(j.at("codec").get<std::string>()), j.value("gold", false)};
}

} // namespace

json to_json(const Study& s) {
    json images = json::array();
    for (const auto& i : s.images) images.push_back(image_json(i));
    json specs = json::object();
    for (const auto& [ref, spec] : s.gold) specs[ref] = gold::to_json(spec);
    json templates = json::array();
    for (const auto& t : s.templates) {
        json items = json::array();
        for (const auto& it : t.study_items) items.push_back(item_json(it));
        templates.push_back({{"hit_id", t.hit_id}, {"items", items}});
    }
    return {{"images", images},
            {"gold", specs},
            {"templates", templates},
            {"training_items", s.training_items},
            {"quiz_items", s.quiz_items},
            {"gold_pool", s.gold_pool},
            {"rules", rules_json(s.rules)},
            {"target_responses", s.target_responses},
            {"overshoot", s.overshoot},
            {"min_ppi", s.min_ppi},
            {"max_ppi", s.max_ppi},
            {"min_viewport_width", s.min_viewport_width},
            {"min_viewport_height", s.min_viewport_height},
            {"session_ttl_ms", s.session_ttl_ms},
            {"assignment_ttl_ms", s.assignment_ttl_ms},
            {"seed", s.seed}};
}

Study study_from_json(const json& j) {
    try {
        Study s;
        for (const auto& i : j.at("images")) s.images.push_back(image_from(i));
        for (const auto& [ref, spec] : j.at("gold").items()) s.gold[ref] = gold::spec_from_json(spec);
        for (const auto& t : j.at("templates")) {
            protocol::HitTemplate tmpl;
            tmpl.hit_id = t.at("hit_id").get<std::string>();
            for (const auto& it : t.at("items")) tmpl.study_items.push_back(item_from(it));
            s.templates.push_back(std::move(tmpl));
        }
        s.training_items = j.at("training_items").get<std::vector<std::string>>();
        s.quiz_items = j.at("quiz_items").get<std::vector<std::string>>();
        s.gold_pool = j.at("gold_pool").get<std::vector<std::string>>();
        s.rules = rules_from(j.value("rules", json::object()));
        s.target_responses = j.value("target_responses", s.target_responses);
        s.overshoot = j.value("overshoot", s.overshoot);
        s.min_ppi = j.value("min_ppi", s.min_ppi);
        s.max_ppi = j.value("max_ppi", s.max_ppi);
        s.min_viewport_width = j.value("min_viewport_width", s.min_viewport_width);
        s.min_viewport_height = j.value("min_viewport_height", s.min_viewport_height);
        s.session_ttl_ms = j.value("session_ttl_ms", s.session_ttl_ms);
        s.assignment_ttl_ms = j.value("assignment_ttl_ms", s.assignment_ttl_ms);
        s.seed = j.value("seed", s.seed);
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed study definition: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Event logs

std::string MemoryEventLog::text() const {
    std::string out;
    for (const auto& l : lines_) {
        out += l;
        out += '\n';
    }
    return out;
}

FileEventLog::FileEventLog(fs::path path, bool sync) : path_(std::move(path)), sync_(sync) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open event log " + path_.string() + ": " + std::strerror(errno));
}

FileEventLog::~FileEventLog() {
    if (fd_ >= 0) ::close(fd_);
}

void FileEventLog::append(const json& event) {
    std::string line = event.dump();
    line.push_back('\n');
    const char* p = line.data();
    std::size_t left = line.size();
    while (left > 0) {
        const ssize_t n = ::write(fd_, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw IoError("append to " + path_.string() + " failed: " + std::strerror(errno));
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    if (sync_ && ::fdatasync(fd_) != 0) throw IoError("fdatasync on " + path_.string() + " failed");
}

std::vector<json> parse_event_lines(const std::string& text) {
    std::vector<json> events;
    std::size_t start = 0;
    while (start < text.size()) {
        const std::size_t end = text.find('\n', start);
        if (end == std::string::npos) break;  // torn tail
        if (end > start) events.push_back(json::parse(text.begin() + static_cast<std::ptrdiff_t>(start),
                                                      text.begin() + static_cast<std::ptrdiff_t>(end)));
        start = end + 1;
    }
    return events;
}

std::vector<json> read_event_log(const fs::path& path, bool repair) {
    if (!fs::exists(path)) return {};
    const auto bytes = png::read_file(path);
    const std::string text(bytes.begin(), bytes.end());
    const std::size_t last_newline = text.rfind('\n');
    const std::size_t complete = last_newline == std::string::npos ? 0 : last_newline + 1;
    if (repair && complete < text.size()) fs::resize_file(path, complete);
    try {
        return parse_event_lines(text.substr(0, complete));
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": corrupt event log: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Reducer

namespace {

json worker_json(const protocol::WorkerRecord& w) {
    return {{"worker_id", w.worker_id},
            {"state", protocol::to_string(w.state)},
            {"study_hits_completed", w.study_hits_completed},
            {"gold_stats", {w.gold_stats.a, w.gold_stats.b, w.gold_stats.c}},
            {"calibration", {{"ppi", w.calibration.ppi}, {"confirmed_distance", w.calibration.confirmed_distance}}},
            {"training_passed", w.training_passed},
            {"quiz_answered", w.quiz_answered},
            {"quiz_stats", {w.quiz_stats.a, w.quiz_stats.b, w.quiz_stats.c}},
            {"quiz_failed", w.quiz_failed}};
}

protocol::WorkerRecord worker_from(const json& j) {
    protocol::WorkerRecord w;
    w.worker_id = j.at("worker_id").get<std::string>();
    w.state = protocol::parse_worker_state(j.at("state").get<std::string>());
    w.study_hits_completed = j.at("study_hits_completed").get<int>();
    w.gold_stats = {j.at("gold_stats")[0].get<int>(), j.at("gold_stats")[1].get<int>(), j.at("gold_stats")[2].get<int>()};
    w.calibration = {j.at("calibration").at("ppi").get<double>(), j.at("calibration").at("confirmed_distance").get<bool>()};
    w.training_passed = j.at("training_passed").get<int>();
    w.quiz_answered = j.at("quiz_answered").get<int>();
    w.quiz_stats = {j.at("quiz_stats")[0].get<int>(), j.at("quiz_stats")[1].get<int>(), j.at("quiz_stats")[2].get<int>()};
    w.quiz_failed = j.at("quiz_failed").get<bool>();
    return w;
}

json validation_json(const gold::GoldValidation& v) {
    return {{"pjnd_ok", v.pjnd_ok}, {"hits", v.hits}, {"correct", v.correct}};
}

gold::GoldValidation validation_from(const json& j) {
    return {j.at("pjnd_ok").get<bool>(), j.at("hits").get<int>(), j.at("correct").get<bool>()};
}

Response response_from_event(const json& e) {
    Response r;
    r.worker_id = e.at("worker_id").get<std::string>();
    r.hit_id = e.at("hit_id").get<std::string>();
    r.image_ref = e.at("image_ref").get<std::string>();
    r.level = e.at("level").get<int>();
    r.clicks = clicks_from_json(e.at("clicks"));
    r.started_at = e.at("started_at").get<std::int64_t>();
    r.submitted_at = e.at("submitted_at").get<std::int64_t>();
    return r;
}

std::uint64_t parse_assignment_number(const std::string& id) {
    if (id.rfind("a-", 0) != 0) return 0;
    return std::stoull(id.substr(2));
}

} // namespace

json response_to_json(const Response& r) {
    return {{"worker_id", r.worker_id}, {"hit_id", r.hit_id}, {"image_ref", r.image_ref}, {"level", r.level},
            {"clicks", clicks_to_json(r.clicks)}, {"started_at", r.started_at}, {"submitted_at", r.submitted_at}};
}

StudyState::StudyState(Study study) : study_(std::move(study)) {
    study_.validate();
    for (std::size_t i = 0; i < study_.templates.size(); ++i) template_index_[study_.templates[i].hit_id] = i;
    template_issued_.assign(study_.templates.size(), 0);
    template_completed_.assign(study_.templates.size(), 0);
}

StudyState StudyState::replay(const std::vector<json>& events) {
    if (events.empty() || events.front().value("type", "") != "study_opened") {
        throw StateError("event log must start with a study_opened event");
    }
    StudyState state(study_from_json(events.front().at("study")));
    for (const auto& e : events) state.apply(e);
    return state;
}

protocol::WorkerRecord& StudyState::worker_mut(const std::string& id) {
    auto it = workers_.find(id);
    if (it == workers_.end()) throw StateError("event references unknown worker " + id);
    return it->second;
}

const protocol::WorkerRecord* StudyState::worker(const std::string& id) const {
    auto it = workers_.find(id);
    return it == workers_.end() ? nullptr : &it->second;
}

const std::set<std::string>& StudyState::seen_images(const std::string& worker_id) const {
    static const std::set<std::string> kEmpty;
    auto it = seen_.find(worker_id);
    return it == seen_.end() ? kEmpty : it->second;
}

void StudyState::apply(const json& event) {
    const std::string type = event.at("type").get<std::string>();
    if (type == "study_opened") {
        if (event_count_ != 0) throw StateError("study_opened must be the first event");
    } else if (event_count_ == 0) {
        throw StateError("event log must start with a study_opened event");
    } else if (type == "session") {
        apply_session(event);
    } else if (type == "qualification_response") {
        apply_qualification(event);
    } else if (type == "assignment") {
        apply_assignment(event);
    } else if (type == "response") {
        apply_response(event);
    } else if (type != "worker_state" && type != "quiz_graded") {
        throw StateError("unknown event type '" + type + "'");
    }
    ++event_count_;
}

void StudyState::apply_session(const json& e) {
    Session s;
    s.token = e.at("token").get<std::string>();
    s.worker_id = e.at("worker_id").get<std::string>();
    s.calibration = {e.at("ppi").get<double>(), e.value("confirmed_distance", false)};
    s.created_at = e.at("created_at").get<std::int64_t>();
    s.expires_at = e.at("expires_at").get<std::int64_t>();
    auto [it, inserted] = workers_.try_emplace(s.worker_id);
    if (inserted) it->second.worker_id = s.worker_id;
    it->second.calibration = s.calibration;
    sessions_[s.token] = std::move(s);
}

std::optional<int> StudyState::next_qualification_item(const std::string& worker_id) const {
    const auto* w = worker(worker_id);
    if (w == nullptr || w->quiz_failed) return std::nullopt;
    if (w->state != protocol::WorkerState::fresh && w->state != protocol::WorkerState::in_qualification) {
        return std::nullopt;
    }
    if (w->training_passed < study_.rules.training_items) return w->training_passed;
    if (w->quiz_answered < study_.rules.quiz_items) return study_.rules.training_items + w->quiz_answered;
    return std::nullopt;
}

void StudyState::apply_qualification(const json& e) {
    const std::string worker_id = e.at("worker_id").get<std::string>();
    const int index = e.at("item_index").get<int>();
    const auto expected = next_qualification_item(worker_id);
    if (!expected || *expected != index) throw StateError("out-of-order qualification response for " + worker_id);
    auto& w = worker_mut(worker_id);
    if (w.state == protocol::WorkerState::fresh) protocol::transition(w, protocol::WorkerState::in_qualification);

    protocol::TrainingAttempt attempt;
    attempt.level = e.at("level").get<int>();
    if (e.contains("clicks") && !e.at("clicks").is_null()) attempt.clicks = clicks_from_json(e.at("clicks"));

    if (index < study_.rules.training_items) {
        const auto& spec = study_.gold.at(study_.training_items[static_cast<std::size_t>(index)]);
        if (protocol::training_step(attempt, spec).action == protocol::TrainingAction::advance) ++w.training_passed;
        return;
    }
    const auto& spec = study_.gold.at(study_.quiz_items[static_cast<std::size_t>(index - study_.rules.training_items)]);
    if (!attempt.clicks) throw StateError("quiz response without clicks");
    Response r;
    r.level = attempt.level;
    r.clicks = *attempt.clicks;
    const auto v = gold::validate_gold_response(r, spec);
    ++w.quiz_answered;
    w.quiz_stats.a += 1;
    w.quiz_stats.b += v.pjnd_ok ? 1 : 0;
    w.quiz_stats.c += v.hits >= 2 ? 1 : 0;
    if (w.quiz_answered == study_.rules.quiz_items) {
        const double acc = protocol::accuracy(w.quiz_stats.a, w.quiz_stats.b, w.quiz_stats.c);
        if (acc >= study_.rules.accuracy_threshold - 1e-12) {
            protocol::transition(w, protocol::WorkerState::qualified);
        } else {
            w.quiz_failed = true;
        }
    }
}

void StudyState::apply_assignment(const json& e) {
    Assignment a;
    a.assignment_id = e.at("assignment_id").get<std::string>();
    a.worker_id = e.at("worker_id").get<std::string>();
    a.hit.hit_id = e.at("hit_id").get<std::string>();
    for (const auto& it : e.at("items")) a.hit.items.push_back(item_from(it));
    a.issued_at = e.at("issued_at").get<std::int64_t>();
    a.expires_at = e.at("expires_at").get<std::int64_t>();
    const auto* w = worker(a.worker_id);
    if (w == nullptr || w->state != protocol::WorkerState::qualified) {
        throw StateError("assignment for unqualified worker " + a.worker_id);
    }
    auto t = template_index_.find(a.hit.hit_id);
    if (t == template_index_.end()) throw StateError("assignment for unknown HIT " + a.hit.hit_id);
    if (assignments_.count(a.assignment_id)) throw StateError("duplicate assignment " + a.assignment_id);
    ++template_issued_[t->second];
    auto& seen = seen_[a.worker_id];
    for (const auto& item : a.hit.items) seen.insert(item.image_ref);
    next_assignment_ = std::max(next_assignment_, parse_assignment_number(a.assignment_id) + 1);
    assignments_[a.assignment_id] = std::move(a);
}

void StudyState::apply_response(const json& e) {
    const std::string aid = e.at("assignment_id").get<std::string>();
    auto it = assignments_.find(aid);
    if (it == assignments_.end()) throw StateError("response for unknown assignment " + aid);
    Assignment& a = it->second;
    Response r = response_from_event(e);
    if (r.worker_id != a.worker_id) throw StateError("response worker does not own assignment " + aid);
    auto item = std::find_if(a.hit.items.begin(), a.hit.items.end(),
                             [&](const protocol::HitItem& i) { return i.image_ref == r.image_ref; });
    if (item == a.hit.items.end()) throw StateError("response image not part of assignment " + aid);
    if (!a.answered.insert(r.image_ref).second) throw StateError("duplicate response in assignment " + aid);

    qc::LoggedResponse logged;
    logged.response = r;
    logged.response.hit_id = a.hit.hit_id;
    logged.assignment_id = aid;
    logged.codec = item->codec;
    logged.gold = item->gold;
    if (item->gold) {
        const auto v = gold::validate_gold_response(r, study_.gold.at(r.image_ref));
        a.gold_validation = v;
        logged.validation = v;
    }
    ++image_responses_[r.image_ref];
    responses_.push_back(std::move(logged));

    if (a.answered.size() == a.hit.items.size()) {
        a.completed = true;
        ++template_completed_[template_index_.at(a.hit.hit_id)];
        auto& w = worker_mut(a.worker_id);
        w = protocol::on_study_hit_completed(w, a.gold_validation.value_or(gold::GoldValidation{}), study_.rules);
    }
}

std::vector<protocol::TemplateLoad> StudyState::template_load(std::int64_t now) const {
    std::vector<protocol::TemplateLoad> load(study_.templates.size());
    for (std::size_t i = 0; i < load.size(); ++i) {
        load[i].completed = template_completed_[i];
        load[i].issued = template_issued_[i];
    }
    for (const auto& [id, a] : assignments_) {
        if (!a.completed && a.expires_at > now) ++load[template_index_.at(a.hit.hit_id)].in_flight;
    }
    return load;
}

std::optional<std::string> StudyState::active_assignment(const std::string& worker_id, std::int64_t now) const {
    for (const auto& [id, a] : assignments_) {
        if (a.worker_id == worker_id && !a.completed && a.expires_at > now) return id;
    }
    return std::nullopt;
}

qc::ResponseLog StudyState::response_log() const {
    qc::ResponseLog log;
    log.responses = responses_;
    for (const auto& [id, w] : workers_) log.worker_states[id] = w.state;
    for (const auto& img : study_.images) log.images[img.image_ref] = img;
    return log;
}

json StudyState::snapshot() const {
    json workers = json::array();
    for (const auto& [id, w] : workers_) workers.push_back(worker_json(w));
    json sessions = json::array();
    for (const auto& [token, s] : sessions_) {
        sessions.push_back({{"token", s.token}, {"worker_id", s.worker_id}, {"ppi", s.calibration.ppi},
                            {"confirmed_distance", s.calibration.confirmed_distance},
                            {"created_at", s.created_at}, {"expires_at", s.expires_at}});
    }
    json assignments = json::array();
    for (const auto& [id, a] : assignments_) {
        json items = json::array();
        for (const auto& it : a.hit.items) items.push_back(item_json(it));
        assignments.push_back({{"assignment_id", a.assignment_id}, {"worker_id", a.worker_id},
                               {"hit_id", a.hit.hit_id}, {"items", items}, {"issued_at", a.issued_at},
                               {"expires_at", a.expires_at}, {"answered", a.answered},
                               {"gold_validation", a.gold_validation ? validation_json(*a.gold_validation) : json(nullptr)},
                               {"completed", a.completed}});
    }
    json responses = json::array();
    for (const auto& r : responses_) {
        json j = response_to_json(r.response);
        j["assignment_id"] = r.assignment_id;
        j["codec"] = to_string(r.codec);
        j["gold"] = r.gold;
        j["validation"] = r.validation ? validation_json(*r.validation) : json(nullptr);
        responses.push_back(std::move(j));
    }
    json seen = json::object();
    for (const auto& [w, s] : seen_) seen[w] = s;
    return {{"study", to_json(study_)},
            {"event_count", event_count_},
            {"workers", workers},
            {"sessions", sessions},
            {"assignments", assignments},
            {"seen", seen},
            {"image_responses", image_responses_},
            {"template_issued", template_issued_},
            {"template_completed", template_completed_},
            {"responses", responses},
            {"next_assignment", next_assignment_}};
}

StudyState StudyState::restore(const json& j) {
    StudyState s(study_from_json(j.at("study")));
    s.event_count_ = j.at("event_count").get<std::uint64_t>();
    for (const auto& w : j.at("workers")) {
        auto rec = worker_from(w);
        s.workers_[rec.worker_id] = rec;
    }
    for (const auto& e : j.at("sessions")) {
        Session ss{e.at("token").get<std::string>(), e.at("worker_id").get<std::string>(),
                   {e.at("ppi").get<double>(), e.at("confirmed_distance").get<bool>()},
                   e.at("created_at").get<std::int64_t>(), e.at("expires_at").get<std::int64_t>()};
        s.sessions_[ss.token] = ss;
    }
    for (const auto& e : j.at("assignments")) {
        Assignment a;
        a.assignment_id = e.at("assignment_id").get<std::string>();
        a.worker_id = e.at("worker_id").get<std::string>();
        a.hit.hit_id = e.at("hit_id").get<std::string>();
        for (const auto& it : e.at("items")) a.hit.items.push_back(item_from(it));
        a.issued_at = e.at("issued_at").get<std::int64_t>();
        a.expires_at = e.at("expires_at").get<std::int64_t>();
        a.answered = e.at("answered").get<std::set<std::string>>();
        if (!e.at("gold_validation").is_null()) a.gold_validation = validation_from(e.at("gold_validation"));
        a.completed = e.at("completed").get<bool>();
        s.assignments_[a.assignment_id] = std::move(a);
    }
    for (const auto& [w, set] : j.at("seen").items()) s.seen_[w] = set.get<std::set<std::string>>();
    s.image_responses_ = j.at("image_responses").get<std::map<std::string, int>>();
    s.template_issued_ = j.at("template_issued").get<std::vector<int>>();
    s.template_completed_ = j.at("template_completed").get<std::vector<int>>();
    for (const auto& e : j.at("responses")) {
        qc::LoggedResponse r;
        r.response = response_from_event(e);
        r.assignment_id = e.at("assignment_id").get<std::string>();
        r.codec = parse_codec(e.at("codec").get<std::string>());
        r.gold = e.at("gold").get<bool>();
        if (!e.at("validation").is_null()) r.validation = validation_from(e.at("validation"));
        s.responses_.push_back(std::move(r));
    }
    s.next_assignment_ = j.at("next_assignment").get<std::uint64_t>();
    return s;
}

bool StudyState::same_state(const StudyState& o) const {
    return event_count_ == o.event_count_ && workers_ == o.workers_ && sessions_ == o.sessions_ &&
           assignments_ == o.assignments_ && seen_ == o.seen_ && image_responses_ == o.image_responses_ &&
           template_issued_ == o.template_issued_ && template_completed_ == o.template_completed_ &&
           responses_ == o.responses_ && next_assignment_ == o.next_assignment_;
}

} // namespace jndloc::study
