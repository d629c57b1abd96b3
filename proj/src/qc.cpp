#include "jndloc/qc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "jndloc/errors.hpp"
#include "jndloc/png_io.hpp"

namespace jndloc::qc {

namespace fs = std::filesystem;

ResponseLog remove_rejected_workers(const ResponseLog& log) {
    ResponseLog out = log;
    if (log.stages.count(kStageRejectedWorkers)) return out;
    std::erase_if(out.responses, [&](const LoggedResponse& r) {
        auto it = log.worker_states.find(r.response.worker_id);
        return it != log.worker_states.end() && it->second == protocol::WorkerState::rejected;
    });
    out.stages.insert(kStageRejectedWorkers);
    return out;
}

ResponseLog hit_level_outlier_removal(const ResponseLog& log, double fraction, std::vector<HitFilterDetail>* details) {
    if (fraction < 0.0 || fraction > 1.0) throw DomainError("removal fraction outside [0,1]");
    ResponseLog out = log;
    if (log.stages.count(kStageHitLevel)) return out;

    std::map<std::string, std::vector<std::size_t>> by_hit;
    for (std::size_t i = 0; i < log.responses.size(); ++i) by_hit[log.responses[i].response.hit_id].push_back(i);

    std::vector<bool> drop(log.responses.size(), false);
    for (const auto& [hit_id, indices] : by_hit) {
        std::map<std::string, std::pair<double, int>> image_sum;  // image -> (sum, count)
        for (auto i : indices) {
            auto& s = image_sum[log.responses[i].response.image_ref];
            s.first += log.responses[i].response.level;
            s.second += 1;
        }
        std::map<std::string, std::pair<double, int>> worker_dev;  // worker -> (sum |dev|, count)
        for (auto i : indices) {
            const auto& r = log.responses[i].response;
            const auto& s = image_sum[r.image_ref];
            auto& w = worker_dev[r.worker_id];
            w.first += std::abs(r.level - s.first / s.second);
            w.second += 1;
        }
        struct Scored {
            std::string worker;
            double score;
        };
        std::vector<Scored> scored;
        for (const auto& [worker, dev] : worker_dev) scored.push_back({worker, dev.first / dev.second});
        std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.worker > b.worker;
        });
        const int workers = static_cast<int>(scored.size());
        const auto k = static_cast<std::size_t>(std::ceil(fraction * workers - 1e-9));

        HitFilterDetail detail{hit_id, workers, {}, 0};
        std::set<std::string> removed;
        for (std::size_t j = 0; j < k && j < scored.size(); ++j) {
            removed.insert(scored[j].worker);
            detail.removed_workers.push_back(scored[j].worker);
        }
        for (auto i : indices) {
            if (removed.count(log.responses[i].response.worker_id)) {
                drop[i] = true;
                ++detail.removed_responses;
            }
        }
        if (details) details->push_back(std::move(detail));
    }

    out.responses.clear();
    for (std::size_t i = 0; i < log.responses.size(); ++i) {
        if (!drop[i]) out.responses.push_back(log.responses[i]);
    }
    out.stages.insert(kStageHitLevel);
    return out;
}

ResponseLog filter_extreme(const ResponseLog& log, int min_level, int max_level) {
    ResponseLog out = log;
    if (log.stages.count(kStageExtreme)) return out;
    std::erase_if(out.responses, [&](const LoggedResponse& r) {
        return r.response.level < min_level || r.response.level > max_level;
    });
    out.stages.insert(kStageExtreme);
    return out;
}

nlohmann::json to_json(const PipelineReport& report) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : report.stages) {
        stages.push_back({{"stage", s.stage}, {"input", s.input}, {"removed", s.removed}, {"remaining", s.remaining}});
    }
    nlohmann::json hits = nlohmann::json::array();
    for (const auto& h : report.hit_details) {
        hits.push_back({{"hit_id", h.hit_id},
                        {"workers", h.workers},
                        {"removed_workers", h.removed_workers},
                        {"removed_responses", h.removed_responses}});
    }
    return {{"input", report.input}, {"stages", stages}, {"output", report.output}, {"hit_level", hits}};
}

PipelineResult run_pipeline(const ResponseLog& log, const QcConfig& config) {
    PipelineResult result;
    result.report.input = log.responses.size();
    ResponseLog current = log;
    auto record = [&](const char* name, ResponseLog next) {
        result.report.stages.push_back(
            {name, current.responses.size(), current.responses.size() - next.responses.size(), next.responses.size()});
        current = std::move(next);
    };
    record(kStageRejectedWorkers, remove_rejected_workers(current));
    record(kStageHitLevel, hit_level_outlier_removal(current, config.hit_removal_fraction, &result.report.hit_details));
    record(kStageExtreme, filter_extreme(current, config.min_level, config.max_level));
    result.report.output = current.responses.size();
    result.log = std::move(current);
    return result;
}

AggregateResult aggregate(const ResponseLog& log, double sigma_blur) {
    std::map<std::string, ImageAnnotation> by_image;
    for (const auto& [ref, info] : log.images) {
        if (info.gold) continue;
        auto& a = by_image[ref];
        a.image_id = ref;
        a.codec = info.codec;
        a.clicks.image_id = ref;
    }
    for (const auto& r : log.responses) {
        if (r.gold) continue;
        auto info = log.images.find(r.response.image_ref);
        if (info == log.images.end()) throw ValidationError("response references unknown image " + r.response.image_ref);
        if (info->second.gold) continue;
        auto& a = by_image[r.response.image_ref];
        a.pjnd_samples.push_back(r.response.level);
        for (const Point& p : r.response.clicks) a.clicks.clicks.push_back({p, r.response.worker_id});
    }

    AggregateResult result;
    for (auto& [ref, a] : by_image) {
        if (a.pjnd_samples.empty()) {
            result.flagged.push_back(ref);
            continue;
        }
        const double n = static_cast<double>(a.pjnd_samples.size());
        a.mean_pjnd = std::accumulate(a.pjnd_samples.begin(), a.pjnd_samples.end(), 0.0) / n;
        if (a.pjnd_samples.size() >= 2) {
            double ss = 0.0;
            for (int s : a.pjnd_samples) ss += (s - a.mean_pjnd) * (s - a.mean_pjnd);
            a.std_pjnd = std::sqrt(ss / (n - 1.0));
        }
        const auto& info = log.images.at(ref);
        a.map = critmap::aggregate_clicks_to_map(a.clicks, sigma_blur, info.width, info.height);
        result.annotations.push_back(std::move(a));
    }
    return result;
}

Analysis analyze(const ResponseLog& log, const QcConfig& config, double sigma_blur) {
    Analysis out;
    out.pipeline = run_pipeline(log, config);
    out.aggregate = aggregate(out.pipeline.log, sigma_blur);
    return out;
}

namespace {

std::vector<double> mid_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

void check_pair(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DomainError("x and y must have equal length");
    if (x.size() < 2) throw DomainError("need at least two points");
}

} // namespace

double srocc(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const auto rx = mid_ranks(x);
    const auto ry = mid_ranks(y);
    const double n = static_cast<double>(rx.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) throw DomainError("SROCC undefined: zero rank variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

LineFit linfit(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0) throw DomainError("linear fit undefined: x is constant");
    const double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

nlohmann::json to_json(const ComparisonReport& report) {
    nlohmann::json scatter = nlohmann::json::array();
    for (const auto& p : report.scatter) {
        scatter.push_back({{"id", p.image_id}, {"reference", p.reference}, {"ours", p.ours}});
    }
    return {{"codec", to_string(report.codec)},
            {"n", report.n},
            {"srocc", report.srocc},
            {"regression", {{"slope", report.fit.slope}, {"intercept", report.fit.intercept}}},
            {"mean_signed_difference", report.mean_signed_difference},
            {"scatter", scatter}};
}

ComparisonReport compare_datasets(std::span<const ImageAnnotation> ours, const std::map<std::string, double>& reference,
                                  CodecId codec) {
    ComparisonReport report;
    report.codec = codec;
    for (const auto& a : ours) {
        if (a.codec != codec) continue;
        auto it = reference.find(a.image_id);
        if (it == reference.end()) continue;
        report.scatter.push_back({a.image_id, it->second, a.mean_pjnd});
    }
    if (report.scatter.empty()) throw ValidationError("no overlapping image ids between dataset and reference");
    std::sort(report.scatter.begin(), report.scatter.end(),
              [](const ComparisonPoint& a, const ComparisonPoint& b) { return a.image_id < b.image_id; });
    std::vector<double> x;
    std::vector<double> y;
    double diff = 0.0;
    for (const auto& p : report.scatter) {
        x.push_back(p.reference);
        y.push_back(p.ours);
        diff += p.ours - p.reference;
    }
    report.n = report.scatter.size();
    report.mean_signed_difference = diff / static_cast<double>(report.n);
    report.srocc = srocc(x, y);
    report.fit = linfit(x, y);
    return report;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    const std::string text = j.dump(2) + "\n";
    png::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

nlohmann::json annotation_record(const ImageAnnotation& a) {
    nlohmann::json clicks = nlohmann::json::array();
    for (const auto& c : a.clicks.clicks) clicks.push_back({c.position.x, c.position.y, c.worker_id});
    return {{"id", a.image_id},
            {"codec", to_string(a.codec)},
            {"pjnd_samples", a.pjnd_samples},
            {"mean_pjnd", a.mean_pjnd},
            {"std_pjnd", a.std_pjnd ? nlohmann::json(*a.std_pjnd) : nlohmann::json(nullptr)},
            {"clicks", clicks},
            {"map", "maps/" + a.image_id + ".png"}};
}

nlohmann::json export_dataset(std::span<const ImageAnnotation> annotations, const fs::path& out_dir, double sigma_blur,
                              const std::optional<PipelineReport>& report) {
    if (annotations.empty()) throw ValidationError("nothing to export: no annotations");
    const fs::path root = out_dir / "dataset";
    std::size_t samples = 0;
    std::size_t clicks = 0;
    std::map<std::string, std::size_t> per_codec;
    nlohmann::json ids = nlohmann::json::array();
    try {
        fs::create_directories(root / "images");
        fs::create_directories(root / "maps");
        for (const auto& a : annotations) {
            if (!valid_id(a.image_id)) throw ValidationError("image id not usable as a file name: " + a.image_id);
            write_json(root / "images" / (a.image_id + ".json"), annotation_record(a));
            png::write_gray16(root / "maps" / (a.image_id + ".png"), critmap::to_gray16(a.map));
            write_json(root / "maps" / (a.image_id + ".json"),
                       critmap::sidecar(a.clicks, sigma_blur, a.map.width(), a.map.height()));
            samples += a.pjnd_samples.size();
            clicks += a.clicks.clicks.size();
            ++per_codec[std::string(to_string(a.codec))];
            ids.push_back(a.image_id);
        }
    } catch (const fs::filesystem_error& e) {
        throw IoError(std::string("export failed: ") + e.what());
    }
    const double n = static_cast<double>(annotations.size());
    nlohmann::json manifest = {{"image_count", annotations.size()},
                               {"pjnd_sample_count", samples},
                               {"click_count", clicks},
                               {"mean_pjnd_samples_per_image", static_cast<double>(samples) / n},
                               {"mean_clicks_per_image", static_cast<double>(clicks) / n},
                               {"codecs", per_codec},
                               {"sigma_blur", sigma_blur},
                               {"images", ids}};
    if (report) manifest["qc"] = to_json(*report);
    write_json(root / "manifest.json", manifest);
    return manifest;
}

std::map<std::string, double> load_reference_table(const fs::path& path) {
    std::map<std::string, double> table;
    if (fs::is_directory(path)) {
        const fs::path images = fs::exists(path / "dataset" / "images") ? path / "dataset" / "images" : path / "images";
        if (!fs::is_directory(images)) throw IoError("no images/ directory under " + path.string());
        for (const auto& entry : fs::directory_iterator(images)) {
            if (entry.path().extension() != ".json") continue;
            const auto bytes = png::read_file(entry.path());
            const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
            table[j.at("id").get<std::string>()] = j.at("mean_pjnd").get<double>();
        }
        return table;
    }
    const auto bytes = png::read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
        if (j.is_object()) {
            for (const auto& [id, v] : j.items()) table[id] = v.get<double>();
        } else if (j.is_array()) {
            for (const auto& row : j) table[row.at("id").get<std::string>()] = row.at("mean_pjnd").get<double>();
        } else {
            throw ValidationError("reference table must be an object or array");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": malformed reference table: " + e.what());
    }
    return table;
}

} // namespace jndloc::qc
