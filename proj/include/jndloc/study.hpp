#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "jndloc/goldgen.hpp"
#include "jndloc/protocol.hpp"
#include "jndloc/qc.hpp"

namespace jndloc::study {

// Everything needed to run (and replay) a study. Serialized into the
// first event of every log so a log is self-describing.
struct Study {
    std::vector<qc::ImageInfo> images;             // study and gold images
    std::map<std::string, gold::GoldSpec> gold;     // image_ref -> spec
    std::vector<protocol::HitTemplate> templates;
    std::vector<std::string> training_items;        // gold image refs
    std::vector<std::string> quiz_items;            // gold image refs
    std::vector<std::string> gold_pool;             // gold refs used inside study HITs
    protocol::Rules rules;
    int target_responses = 50;
    int overshoot = 2;
    double min_ppi = 50.0;
    double max_ppi = 400.0;
    int min_viewport_width = 1280;
    int min_viewport_height = 768;
    std::int64_t session_ttl_ms = 4 * 3600 * 1000;
    std::int64_t assignment_ttl_ms = 2 * 3600 * 1000;
    std::uint64_t seed = 1;

    const qc::ImageInfo& image(const std::string& ref) const;
    void validate() const;
};

nlohmann::json to_json(const Study& study);
Study study_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Append-only JSON-lines event log

class EventSink {
public:
    virtual ~EventSink() = default;
    // Must not return before the event is durable.
    virtual void append(const nlohmann::json& event) = 0;
};

class MemoryEventLog final : public EventSink {
public:
    void append(const nlohmann::json& event) override { lines_.push_back(event.dump()); }
    const std::vector<std::string>& lines() const noexcept { return lines_; }
    std::string text() const;

private:
    std::vector<std::string> lines_;
};

class FileEventLog final : public EventSink {
public:
    explicit FileEventLog(std::filesystem::path path, bool sync = true);
    ~FileEventLog() override;
    FileEventLog(const FileEventLog&) = delete;
    FileEventLog& operator=(const FileEventLog&) = delete;

    void append(const nlohmann::json& event) override;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    int fd_ = -1;
    bool sync_;
};

// Parses a JSON-lines log. A torn final line (crash mid-append) is dropped
// and, when `repair` is set, truncated from the file.
std::vector<nlohmann::json> read_event_log(const std::filesystem::path& path, bool repair = false);
std::vector<nlohmann::json> parse_event_lines(const std::string& text);

// ---------------------------------------------------------------------------

struct Session {
    std::string token;
    std::string worker_id;
    protocol::Calibration calibration;
    std::int64_t created_at = 0;
    std::int64_t expires_at = 0;

    friend bool operator==(const Session&, const Session&) = default;
};

struct Assignment {
    std::string assignment_id;
    std::string worker_id;
    protocol::Hit hit;
    std::int64_t issued_at = 0;
    std::int64_t expires_at = 0;
    std::set<std::string> answered;
    std::optional<gold::GoldValidation> gold_validation;
    bool completed = false;

    friend bool operator==(const Assignment&, const Assignment&) = default;
};

// Deterministic reducer over events. Both the live service and replay go
// through apply(), so replaying any log prefix rebuilds the exact state.
class StudyState {
public:
    explicit StudyState(Study study);

    static StudyState replay(const std::vector<nlohmann::json>& events);

    void apply(const nlohmann::json& event);

    const Study& study() const noexcept { return study_; }
    std::uint64_t event_count() const noexcept { return event_count_; }

    const std::map<std::string, protocol::WorkerRecord>& workers() const noexcept { return workers_; }
    const std::map<std::string, Session>& sessions() const noexcept { return sessions_; }
    const std::map<std::string, Assignment>& assignments() const noexcept { return assignments_; }
    const std::map<std::string, int>& image_responses() const noexcept { return image_responses_; }
    const std::vector<qc::LoggedResponse>& responses() const noexcept { return responses_; }

    const protocol::WorkerRecord* worker(const std::string& id) const;
    const std::set<std::string>& seen_images(const std::string& worker_id) const;
    std::vector<protocol::TemplateLoad> template_load(std::int64_t now) const;
    std::optional<std::string> active_assignment(const std::string& worker_id, std::int64_t now) const;

    // Index of the next qualification item (0..training+quiz-1), if any.
    std::optional<int> next_qualification_item(const std::string& worker_id) const;

    qc::ResponseLog response_log() const;

    nlohmann::json snapshot() const;
    static StudyState restore(const nlohmann::json& snapshot);

    // Worker records, sessions, assignments and counters.
    bool same_state(const StudyState& other) const;

private:
    void apply_session(const nlohmann::json& e);
    void apply_qualification(const nlohmann::json& e);
    void apply_assignment(const nlohmann::json& e);
    void apply_response(const nlohmann::json& e);

    protocol::WorkerRecord& worker_mut(const std::string& id);

    Study study_;
    std::uint64_t event_count_ = 0;
    std::map<std::string, protocol::WorkerRecord> workers_;
    std::map<std::string, Session> sessions_;
    std::map<std::string, Assignment> assignments_;
    std::map<std::string, std::set<std::string>> seen_;
    std::map<std::string, int> image_responses_;
    std::map<std::string, std::size_t> template_index_;
    std::vector<int> template_issued_;
    std::vector<int> template_completed_;
    std::vector<qc::LoggedResponse> responses_;
    std::uint64_t next_assignment_ = 1;
};

// ---------------------------------------------------------------------------

class ServiceError : public std::runtime_error {
public:
    ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

struct SessionRequest {
    std::string worker_id;
    double ppi = 0.0;
    bool confirmed_distance = false;
    int viewport_width = 0;
    int viewport_height = 0;
};

using Clock = std::function<std::int64_t()>;
using TokenSource = std::function<std::string()>;

std::int64_t system_clock_ms();
// 128-bit random token, hex encoded.
std::string random_token();

struct ServiceOptions {
    Clock clock = system_clock_ms;
    TokenSource tokens = random_token;
    // Snapshot file written every `snapshot_every` events (0 disables).
    std::optional<std::filesystem::path> snapshot_path;
    std::uint64_t snapshot_every = 1000;
};

// Serializes every mutation behind one mutex: validate, append the event
// to the sink, then apply it to the in-memory state.
class StudyService {
public:
    // Fresh study: writes the study_opened event.
    StudyService(Study study, std::shared_ptr<EventSink> sink, ServiceOptions options = {});
    // Resume from existing events (optionally via a snapshot).
    StudyService(StudyState state, std::shared_ptr<EventSink> sink, ServiceOptions options = {});

    static std::unique_ptr<StudyService> open(const std::filesystem::path& log_path, const Study& study,
                                              ServiceOptions options = {});

    nlohmann::json create_session(const SessionRequest& request);
    nlohmann::json qualification_next(const std::string& token);
    nlohmann::json qualification_respond(const std::string& token, const nlohmann::json& body);
    nlohmann::json hit_next(const std::string& token);
    nlohmann::json hit_respond(const std::string& token, const std::string& assignment_id, const nlohmann::json& body);
    nlohmann::json stats() const;

    qc::ResponseLog response_log() const;
    StudyState state_copy() const;
    const Study& study() const noexcept { return study_; }

private:
    const Session& session_for_write(const std::string& token, std::int64_t now) const;
    void commit(nlohmann::json event);
    nlohmann::json item_descriptor(const std::string& image_ref) const;

    Study study_;
    std::shared_ptr<EventSink> sink_;
    ServiceOptions options_;
    mutable std::mutex mutex_;
    StudyState state_;
};

nlohmann::json response_to_json(const Response& r);

} // namespace jndloc::study
