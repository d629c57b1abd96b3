#include "jndloc/goldgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "jndloc/errors.hpp"

namespace jndloc::gold {

void validate_spec(const GoldSpec& spec) {
    if (!valid_id(spec.source_id)) throw ValidationError("gold spec has an invalid source id");
    if (spec.width <= 0 || spec.height <= 0) throw ValidationError("gold spec image size must be positive");
    if (!(spec.sigma_region > 0.0)) throw ValidationError("gold spec sigma_region must be positive");
    for (const Point& c : spec.centers) {
        if (!in_bounds(c, spec.width, spec.height)) throw ValidationError("gold spec center outside the image");
    }
    const auto& r = spec.pjnd_range;
    if (r.lo < 1 || r.hi > kMaxLevel || r.lo > r.hi) {
        throw ValidationError("gold spec PJND range must satisfy 1 <= lo <= hi <= 100");
    }
    if (spec.codec == CodecId::jpeg && r.hi > kJpegMaxGoldLevel) {
        throw ValidationError("JPEG gold specs require d_hi <= 90");
    }
}

nlohmann::json to_json(const GoldSpec& spec) {
    nlohmann::json centers = nlohmann::json::array();
    for (const Point& c : spec.centers) centers.push_back({c.x, c.y});
    return {{"source_id", spec.source_id},
            {"codec", to_string(spec.codec)},
            {"width", spec.width},
            {"height", spec.height},
            {"centers", centers},
            {"sigma_region", spec.sigma_region},
            {"sigmoid_center", spec.sigmoid_center},
            {"sigmoid_scale", spec.sigmoid_scale},
            {"pjnd_range", {spec.pjnd_range.lo, spec.pjnd_range.hi}},
            {"seed", spec.seed}};
}

GoldSpec spec_from_json(const nlohmann::json& j) {
    try {
        GoldSpec spec;
        spec.source_id = j.at("source_id").get<std::string>();
        spec.codec = parse_codec(j.at("codec").get<std::string>());
        spec.width = j.at("width").get<int>();
        spec.height = j.at("height").get<int>();
        const auto& centers = j.at("centers");
        if (!centers.is_array() || centers.size() != kRegionCount) {
            throw ValidationError("gold spec needs exactly three centers");
        }
        for (std::size_t i = 0; i < kRegionCount; ++i) {
            spec.centers[i] = {centers[i].at(0).get<double>(), centers[i].at(1).get<double>()};
        }
        spec.sigma_region = j.at("sigma_region").get<double>();
        spec.sigmoid_center = j.at("sigmoid_center").get<int>();
        spec.sigmoid_scale = j.at("sigmoid_scale").get<double>();
        spec.pjnd_range = {j.at("pjnd_range").at(0).get<int>(), j.at("pjnd_range").at(1).get<int>()};
        spec.seed = j.value("seed", std::uint64_t{0});
        validate_spec(spec);
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed gold spec: ") + e.what());
    }
}

BlendWeightField::BlendWeightField(int width, int height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
    if (width <= 0 || height <= 0) throw DomainError("field dimensions must be positive");
    if (values_.size() != static_cast<std::size_t>(width) * height) {
        throw DomainError("field value count does not match width*height");
    }
}

BlendWeightField BlendWeightField::constant(int width, int height, double value) {
    if (value < 0.0 || value > 1.0) throw DomainError("blend weight outside [0,1]");
    return BlendWeightField(width, height,
                            std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), value));
}

int stronger_level(CodecId codec, int level) {
    if (level < 1 || level > kMaxLevel) {
        throw DomainError("distortion level " + std::to_string(level) + " outside [1,100]");
    }
    if (codec == CodecId::jpeg) return (400 + level + 4) / 5;  // ceil(80 + d/5)
    return std::min((7 * level + 4) / 5, kMaxLevel);           // min(ceil(1.4 d), 100)
}

BlendWeightField blend_weight_field(std::span<const Point> centers, double sigma, int width, int height) {
    if (!(sigma > 0.0)) throw DomainError("blend sigma must be positive");
    if (width <= 0 || height <= 0) throw DomainError("field dimensions must be positive");
    if (centers.empty()) throw DomainError("blend field needs at least one center");
    for (const Point& c : centers) {
        if (!in_bounds(c, width, height)) throw DomainError("blend center outside the image");
    }
    const double norm = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> values(static_cast<std::size_t>(width) * height, 0.0);
    double peak = 0.0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double sum = 0.0;
            for (const Point& c : centers) {
                const double dx = x - c.x;
                const double dy = y - c.y;
                sum += norm * std::exp(-(dx * dx + dy * dy) * inv_two_var);
            }
            values[static_cast<std::size_t>(y) * width + x] = sum;
            peak = std::max(peak, sum);
        }
    }
    if (!(peak > 0.0)) throw DomainError("blend field underflowed to zero; sigma too small for the grid");
    for (double& v : values) v /= peak;
    return BlendWeightField(width, height, std::move(values));
}

RasterImage synthesize_gold_frame(const RasterImage& base, const RasterImage& stronger, const BlendWeightField& w) {
    if (base.width() != stronger.width() || base.height() != stronger.height() || base.width() != w.width() ||
        base.height() != w.height()) {
        throw DomainError("blend inputs must share dimensions");
    }
    RasterImage out(base.width(), base.height());
    for (int y = 0; y < base.height(); ++y) {
        for (int x = 0; x < base.width(); ++x) {
            const double weight = w.at(x, y);
            for (int c = 0; c < 3; ++c) {
                const double v = (1.0 - weight) * base.at(x, y, c) + weight * stronger.at(x, y, c);
                out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(round_half_away(v), 0, 255));
            }
        }
    }
    return out;
}

PjndRange gold_pjnd_range(double center, double scale, double lo_prob, double hi_prob) {
    if (!(scale > 0.0)) throw DomainError("sigmoid scale must be positive");
    if (center < 1.0 || center > kMaxLevel) throw DomainError("sigmoid center outside [1,100]");
    if (!(lo_prob > 0.0 && lo_prob < hi_prob && hi_prob < 1.0)) {
        throw DomainError("acceptance band must satisfy 0 < lo_prob < hi_prob < 1");
    }
    const double lo_end = center + scale * std::log(lo_prob / (1.0 - lo_prob));
    const double hi_end = center + scale * std::log(hi_prob / (1.0 - hi_prob));
    const int lo = std::max(1, static_cast<int>(std::ceil(lo_end)));
    const int hi = std::min(kMaxLevel, static_cast<int>(std::floor(hi_end)));
    if (lo > hi) {
        throw SelectionError("empty PJND range for sigmoid center " + std::to_string(center) +
                             "; choose a different center");
    }
    return {lo, hi};
}

std::string gold_ladder_id(std::string_view source_id) {
    return "gold-" + std::string(source_id);
}

DistortionLadder build_gold_ladder(const DistortionLadder& plain, const GoldSpec& spec) {
    validate_spec(spec);
    if (plain.frames.size() != kLadderSize) throw DomainError("plain ladder is incomplete");
    if (plain.codec != spec.codec) throw DomainError("ladder codec does not match gold spec codec");
    const auto& source = plain.frames.front();
    if (source.width() != spec.width || source.height() != spec.height) {
        throw DomainError("ladder dimensions do not match gold spec");
    }
    const auto field = blend_weight_field(spec.centers, spec.sigma_region, spec.width, spec.height);
    DistortionLadder gold;
    gold.source_id = gold_ladder_id(plain.source_id);
    gold.codec = plain.codec;
    gold.frames = plain.frames;
    for (int d = spec.pjnd_range.lo; d <= spec.pjnd_range.hi; ++d) {
        const int partner = stronger_level(spec.codec, d);
        gold.frames[static_cast<std::size_t>(d)] =
            synthesize_gold_frame(plain.frames[static_cast<std::size_t>(d)],
                                  plain.frames[static_cast<std::size_t>(partner)], field);
    }
    gold.metadata = plain.metadata;
    gold.metadata["source_id"] = gold.source_id;
    gold.metadata["gold"] = to_json(spec);
    return gold;
}

DistortionLadder build_gold_ladder(const RasterImage& source, CodecId codec, const CodecAdapter& adapter,
                                   const GoldSpec& spec) {
    validate_spec(spec);
    return build_gold_ladder(build_ladder(source, spec.source_id, codec, adapter), spec);
}

std::array<Point, kRegionCount> select_gt_centers(const critmap::CriticalityMap& map, double bandwidth) {
    const auto modes = critmap::mean_shift_modes(map, bandwidth);
    if (modes.size() < kRegionCount) {
        throw SelectionError("criticality map has " + std::to_string(modes.size()) +
                             " modes; three are required");
    }
    struct Scored {
        Point position;
        double sum;
    };
    std::vector<Scored> scored;
    scored.reserve(modes.size());
    for (const auto& m : modes) scored.push_back({m.position, critmap::window_sum(map, m.position, 7)});
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.sum != b.sum) return a.sum > b.sum;
        if (a.position.y != b.position.y) return a.position.y < b.position.y;
        return a.position.x < b.position.x;
    });
    return {scored[0].position, scored[1].position, scored[2].position};
}

GoldValidation validate_gold_response(const Response& response, const GoldSpec& spec) {
    if (response.level < 0 || response.level > kMaxLevel) {
        throw ValidationError("response level outside [0,100]");
    }
    for (const Point& p : response.clicks) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError("non-finite click coordinate");
    }
    const double radius = 2.0 * spec.sigma_region;
    bool covers[kClicksPerResponse][kRegionCount];
    for (int i = 0; i < kClicksPerResponse; ++i) {
        for (int j = 0; j < kRegionCount; ++j) covers[i][j] = distance(response.clicks[i], spec.centers[j]) <= radius;
    }
    std::array<int, kClicksPerResponse> order{0, 1, 2};
    int best = 0;
    do {
        int hits = 0;
        for (int j = 0; j < kRegionCount; ++j) hits += covers[order[j]][j] ? 1 : 0;
        best = std::max(best, hits);
    } while (std::next_permutation(order.begin(), order.end()));

    GoldValidation v;
    v.pjnd_ok = spec.pjnd_range.contains(response.level);
    v.hits = best;
    v.correct = v.pjnd_ok && v.hits >= 2;
    return v;
}

GoldSpec synthesize_gold_spec(std::string source_id, CodecId codec, const critmap::CriticalityMap& pilot_map,
                              double pilot_mean_pjnd, std::uint64_t seed, const SynthesisConfig& config) {
    if (config.center_min < 1 || config.center_max > kMaxLevel || config.center_min > config.center_max) {
        throw DomainError("sigmoid center bounds must satisfy 1 <= min <= max <= 100");
    }
    std::mt19937_64 rng(seed);
    const int lo = std::clamp(static_cast<int>(std::ceil(pilot_mean_pjnd - config.center_jitter)),
                              config.center_min, config.center_max);
    const int hi = std::clamp(static_cast<int>(std::floor(pilot_mean_pjnd + config.center_jitter)),
                              config.center_min, config.center_max);
    std::uniform_int_distribution<int> pick(std::min(lo, hi), std::max(lo, hi));

    GoldSpec spec;
    spec.source_id = std::move(source_id);
    spec.codec = codec;
    spec.width = pilot_map.width();
    spec.height = pilot_map.height();
    spec.sigma_region = config.sigma_region;
    spec.sigmoid_scale = config.sigmoid_scale;
    spec.sigmoid_center = pick(rng);
    spec.seed = seed;
    spec.pjnd_range = gold_pjnd_range(spec.sigmoid_center, spec.sigmoid_scale, config.lo_prob, config.hi_prob);
    if (codec == CodecId::jpeg) {
        spec.pjnd_range.hi = std::min(spec.pjnd_range.hi, kJpegMaxGoldLevel);
        if (spec.pjnd_range.lo > spec.pjnd_range.hi) {
            throw SelectionError("JPEG gold range is empty after capping d_hi at 90");
        }
    }
    spec.centers = select_gt_centers(pilot_map, config.mean_shift_bandwidth);
    validate_spec(spec);
    return spec;
}

} // namespace jndloc::gold
