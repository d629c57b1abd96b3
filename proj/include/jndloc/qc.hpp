#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "jndloc/critmap.hpp"
#include "jndloc/goldgen.hpp"
#include "jndloc/protocol.hpp"
#include "jndloc/response.hpp"

namespace jndloc::qc {

struct ImageInfo {
    std::string image_ref;
    std::string source_id;
    CodecId codec = CodecId::jpeg;
    int width = 0;
    int height = 0;
    bool gold = false;

    friend bool operator==(const ImageInfo&, const ImageInfo&) = default;
};

struct LoggedResponse {
    Response response;
    std::string assignment_id;
    CodecId codec = CodecId::jpeg;
    bool gold = false;
    std::optional<gold::GoldValidation> validation;

    friend bool operator==(const LoggedResponse&, const LoggedResponse&) = default;
};

// Study-HIT responses (study and gold items) with the final worker states
// and the image catalog. `stages` records which filters have been applied.
struct ResponseLog {
    std::vector<LoggedResponse> responses;
    std::map<std::string, protocol::WorkerState> worker_states;
    std::map<std::string, ImageInfo> images;
    std::set<std::string> stages;
};

inline constexpr const char* kStageRejectedWorkers = "rejected_workers";
inline constexpr const char* kStageHitLevel = "hit_level";
inline constexpr const char* kStageExtreme = "extreme_ratings";

ResponseLog remove_rejected_workers(const ResponseLog& log);

struct HitFilterDetail {
    std::string hit_id;
    int workers = 0;
    std::vector<std::string> removed_workers;  // highest deviation first
    std::size_t removed_responses = 0;
};

// Per HIT template: score each worker by the mean absolute deviation of
// their levels from that HIT's per-image means and drop the
// ceil(fraction * W) highest scorers (ties: higher worker id first).
ResponseLog hit_level_outlier_removal(const ResponseLog& log, double fraction = 0.10,
                                      std::vector<HitFilterDetail>* details = nullptr);

// Keeps 5 <= level <= 95.
ResponseLog filter_extreme(const ResponseLog& log, int min_level = 5, int max_level = 95);

struct QcConfig {
    double hit_removal_fraction = 0.10;
    int min_level = 5;
    int max_level = 95;
};

struct StageCount {
    std::string stage;
    std::size_t input = 0;
    std::size_t removed = 0;
    std::size_t remaining = 0;
};

struct PipelineReport {
    std::size_t input = 0;
    std::vector<StageCount> stages;
    std::vector<HitFilterDetail> hit_details;
    std::size_t output = 0;
};

nlohmann::json to_json(const PipelineReport& report);

struct PipelineResult {
    ResponseLog log;
    PipelineReport report;
};

// rejected workers -> HIT level -> extreme ratings. Stages already recorded
// in log.stages are skipped, so the pipeline is idempotent.
PipelineResult run_pipeline(const ResponseLog& log, const QcConfig& config = {});

struct ImageAnnotation {
    std::string image_id;
    CodecId codec = CodecId::jpeg;
    std::vector<int> pjnd_samples;
    double mean_pjnd = 0.0;
    std::optional<double> std_pjnd;  // unbiased; absent below two samples
    critmap::ClickSet clicks;
    critmap::CriticalityMap map;
};

struct AggregateResult {
    std::vector<ImageAnnotation> annotations;  // sorted by image id
    std::vector<std::string> flagged;          // study images without surviving samples
};

// Gold items are excluded; they measure workers, not images.
AggregateResult aggregate(const ResponseLog& log, double sigma_blur = critmap::kDefaultBlurSigma);

// Pipeline followed by aggregation of the surviving responses.
struct Analysis {
    PipelineResult pipeline;
    AggregateResult aggregate;
};

Analysis analyze(const ResponseLog& log, const QcConfig& config = {},
                 double sigma_blur = critmap::kDefaultBlurSigma);

// Pearson correlation of mid-ranks.
double srocc(std::span<const double> x, std::span<const double> y);

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};

LineFit linfit(std::span<const double> x, std::span<const double> y);

struct ComparisonPoint {
    std::string image_id;
    double reference = 0.0;
    double ours = 0.0;
};

struct ComparisonReport {
    CodecId codec = CodecId::jpeg;
    std::size_t n = 0;
    double srocc = 0.0;
    LineFit fit;  // ours = slope * reference + intercept
    double mean_signed_difference = 0.0;
    std::vector<ComparisonPoint> scatter;
};

nlohmann::json to_json(const ComparisonReport& report);

ComparisonReport compare_datasets(std::span<const ImageAnnotation> ours, const std::map<std::string, double>& reference,
                                  CodecId codec);

// Writes <out>/dataset/{manifest.json, images/<id>.json, maps/<id>.png,
// maps/<id>.json}. Returns the manifest.
nlohmann::json export_dataset(std::span<const ImageAnnotation> annotations, const std::filesystem::path& out_dir,
                              double sigma_blur = critmap::kDefaultBlurSigma,
                              const std::optional<PipelineReport>& report = std::nullopt);

nlohmann::json annotation_record(const ImageAnnotation& annotation);

// Reads mean PJNDs from a dataset export directory or a reference table
// ({"<id>": mean, ...} or [{"id":..,"mean_pjnd":..}, ...]).
std::map<std::string, double> load_reference_table(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);

} // namespace jndloc::qc
