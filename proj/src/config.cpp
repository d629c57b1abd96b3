#include "jndloc/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace jndloc::config {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json::json_pointer pointer(const std::string& dotted) {
    std::string p;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) p += "/" + part;
    return json::json_pointer(p);
}

const KeySpec* find_key(const std::string& dotted) {
    for (const auto& k : keys()) {
        if (k.path == dotted) return &k;
    }
    return nullptr;
}

// Flattens nested objects into dotted leaves; keys whose default is an
// object or array are leaves themselves.
void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
    for (const auto& [k, v] : j.items()) {
        const std::string path = prefix.empty() ? k : prefix + "." + k;
        if (v.is_object() && !find_key(path)) {
            flatten(v, path, out);
        } else {
            out.emplace_back(path, v);
        }
    }
}

} // namespace

const std::vector<KeySpec>& keys() {
    static const std::vector<KeySpec> table = {
        {"seed", 1, "Master seed for templates, gold draws and simulation", "", 0, std::nullopt},
        {"cache_dir", "cache", "Ladder cache root (<root>/<codec>/<id>/d000.png..)", "", {}, {}},
        {"images", json::array(), "Source images: [{\"id\": .., \"path\": ..}]", "", {}, {}},
        {"image_dir", "", "Directory whose *.png files are added as source images (id = file stem)", "", {}, {}},
        {"codecs", json::array({"jpeg"}), "Codecs to build ladders and studies for (jpeg, bpg)", "JPEG, BPG", {}, {}},
        {"sigma_blur", 35.0, "Gaussian blur for criticality maps (px)", "35", 0.5, 500},

        {"adapters.jpeg_chroma_subsampling", 2, "JPEG chroma subsampling factor (1 = 4:4:4, 2 = 4:2:0)", "", 1, 2},
        {"adapters.bpg_encoder", "bpgenc", "BPG encoder executable", "", {}, {}},
        {"adapters.bpg_decoder", "bpgdec", "BPG decoder executable", "", {}, {}},
        {"adapters.bpg_args", json::array(), "Extra BPG encoder arguments", "", {}, {}},

        {"gold.spec_dir", "gold", "Directory of GoldSpec files (<source_id>.json)", "", {}, {}},
        {"gold.count", 25, "Number of gold images", "25", 1, 1000},
        {"gold.sigma_region", 35.0, "Std of the planted blend regions (px)", "35", 1, 500},
        {"gold.sigmoid_scale", 4.0, "Sigmoid scale s of the PJND acceptance curve", "", 0.1, 50},
        {"gold.center_jitter", 10.0, "Sigmoid center drawn within pilot mean +- this", "", 0, 50},
        {"gold.center_min", 10, "Lower clamp of the sigmoid center", "", 1, 100},
        {"gold.center_max", 90, "Upper clamp of the sigmoid center", "", 1, 100},
        {"gold.lo_prob", 0.25, "Lower acceptance probability of the PJND range", "", 0.001, 0.999},
        {"gold.hi_prob", 0.75, "Upper acceptance probability of the PJND range", "", 0.001, 0.999},
        {"gold.bandwidth", 35.0, "Mean-shift bandwidth for region centers (px)", "", 1, 500},
        {"gold.training", json::array(), "Gold ids for training (default: first training_items ids)", "", {}, {}},
        {"gold.quiz", json::array(), "Gold ids for the quiz (default: the next quiz_items ids)", "", {}, {}},

        {"study.target_responses", 50, "Responses collected per study image", "50", 1, 10000},
        {"study.overshoot", 2, "Extra assignments allowed above target while HITs are in flight", "", 0, 1000},
        {"study.items_per_hit", 10, "Study images per HIT (one gold item is added)", "10 + 1", 1, 1000},
        {"study.training_items", 5, "Training gold items", "5", 0, 100},
        {"study.quiz_items", 10, "Quiz gold items", "10", 1, 100},
        {"study.accuracy_threshold", 0.70, "Minimum accuracy (b+c)/(2a) for quiz and study", "0.70", 0, 1},
        {"study.max_hits", 20, "Study HITs per worker before revocation", "20", 1, 100000},
        {"study.check_after", 10, "Study HITs before the running accuracy check applies", "10", 1, 100000},
        {"study.min_ppi", 50.0, "Lowest accepted calibrated PPI", "", 1, 2000},
        {"study.max_ppi", 400.0, "Highest accepted calibrated PPI", "", 1, 2000},
        {"study.viewport_width", 1280, "Minimum viewport width (px)", "", 1, 100000},
        {"study.viewport_height", 768, "Minimum viewport height (px)", "", 1, 100000},
        {"study.session_ttl_ms", 4 * 3600 * 1000, "Session lifetime (ms)", "", 1000, std::nullopt},
        {"study.assignment_ttl_ms", 2 * 3600 * 1000, "Assignment lifetime (ms)", "", 1000, std::nullopt},

        {"qc.hit_removal_fraction", 0.10, "Fraction of workers removed per HIT", "0.10", 0, 1},
        {"qc.min_level", 5, "Lowest kept PJND level", "5", 0, 100},
        {"qc.max_level", 95, "Highest kept PJND level", "95", 0, 100},

        {"server.host", "127.0.0.1", "Listen address", "", {}, {}},
        {"server.port", 8080, "Listen port (0 = any)", "", 0, 65535},
        {"server.admin_token", "", "Admin credential (or env JNDLOC_ADMIN_TOKEN)", "", {}, {}},
        {"server.log", "events.jsonl", "Append-only event log", "", {}, {}},
        {"server.snapshot", "", "Snapshot file (empty disables)", "", {}, {}},
        {"server.snapshot_every", 1000, "Events between snapshots", "", 0, std::nullopt},
        {"server.export_dir", "", "Where /v1/admin/export writes the dataset (empty: report only)", "", {}, {}},
        {"server.threads", 8, "HTTP worker threads", "", 1, 1024},

        {"sim.study_images", 300, "Synthetic study images", "", 10, 100000},
        {"sim.gold_images", 25, "Synthetic gold images", "25", 1, 1000},
        {"sim.width", 256, "Synthetic image width", "", 16, 8192},
        {"sim.height", 256, "Synthetic image height", "", 16, 8192},
        {"sim.min_true_pjnd", 10, "Lowest planted PJND", "", 5, 95},
        {"sim.max_true_pjnd", 90, "Highest planted PJND", "", 5, 95},
        {"sim.workers", 120, "Simulated workers", "", 1, 100000},
        {"sim.spammer_fraction", 0.10, "Share of spammers", "", 0, 1},
        {"sim.marginal_fraction", 0.10, "Share of sloppy-but-honest observers", "", 0, 1},
        {"sim.reliable.bias", 0.0, "Reliable observer threshold bias (levels)", "", -100, 100},
        {"sim.reliable.noise_std", 3.0, "Reliable observer threshold noise (levels)", "", 0, 100},
        {"sim.reliable.jitter_std", 10.0, "Reliable observer click jitter (px)", "", 0, 1000},
        {"sim.marginal.bias", 6.0, "Marginal observer threshold bias (levels)", "", -100, 100},
        {"sim.marginal.noise_std", 4.0, "Marginal observer threshold noise (levels)", "", 0, 100},
        {"sim.marginal.jitter_std", 30.0, "Marginal observer click jitter (px)", "", 0, 1000},
        {"sim.min_center_separation", 100.0, "Minimum distance between planted regions (px)", "", 0, 10000},
    };
    return table;
}

Config::Config() {
    values_ = json::object();
    for (const auto& k : keys()) values_[pointer(k.path)] = k.default_value;
}

const json& Config::at(const std::string& dotted) const {
    if (!find_key(dotted)) throw ConfigError("unknown config key '" + dotted + "'");
    return values_.at(pointer(dotted));
}

void Config::set(const std::string& dotted, const json& value) {
    const auto* k = find_key(dotted);
    if (!k) throw ConfigError("unknown config key '" + dotted + "'");
    const json& d = k->default_value;
    const bool type_ok = (d.is_number() && value.is_number()) || (d.is_string() && value.is_string()) ||
                         (d.is_array() && value.is_array()) || (d.is_boolean() && value.is_boolean());
    if (!type_ok) throw ConfigError("config key '" + dotted + "' expects a " + std::string(d.type_name()));
    if (d.is_number_integer() && !value.is_number_integer()) {
        throw ConfigError("config key '" + dotted + "' expects an integer");
    }
    values_[pointer(dotted)] = value;
}

void Config::validate() const {
    for (const auto& k : keys()) {
        const json& v = values_.at(pointer(k.path));
        if (!v.is_number()) continue;
        const double x = v.get<double>();
        if ((k.min && x < *k.min) || (k.max && x > *k.max)) {
            std::ostringstream os;
            os << "config key '" << k.path << "' = " << v.dump() << " outside [" << (k.min ? std::to_string(*k.min) : "-inf")
               << ", " << (k.max ? std::to_string(*k.max) : "inf") << "]";
            throw ConfigError(os.str());
        }
    }
    for (const auto& c : at("codecs")) {
        if (!c.is_string()) throw ConfigError("codecs must be strings");
        try {
            parse_codec(c.get<std::string>());
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
    if (get<int>("gold.center_min") > get<int>("gold.center_max")) throw ConfigError("gold.center_min > gold.center_max");
    if (get<double>("gold.lo_prob") >= get<double>("gold.hi_prob")) throw ConfigError("gold.lo_prob >= gold.hi_prob");
    if (get<int>("qc.min_level") > get<int>("qc.max_level")) throw ConfigError("qc.min_level > qc.max_level");
    if (get<double>("study.min_ppi") > get<double>("study.max_ppi")) throw ConfigError("study.min_ppi > study.max_ppi");
    if (get<int>("sim.min_true_pjnd") > get<int>("sim.max_true_pjnd")) throw ConfigError("sim.min_true_pjnd > sim.max_true_pjnd");
}

Config Config::load(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
    Config c;
    if (file) {
        std::ifstream in(*file);
        if (!in) throw ConfigError("cannot read config file " + file->string());
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError(file->string() + ": " + e.what());
        }
        if (!j.is_object()) throw ConfigError(file->string() + ": top level must be an object");
        std::vector<std::pair<std::string, json>> leaves;
        flatten(j, "", leaves);
        for (const auto& [k, v] : leaves) c.set(k, v);
    }
    for (const auto& o : overrides) {
        const auto [k, v] = parse_override(o);
        c.set(k, v);
    }
    if (c.get<std::string>("server.admin_token").empty()) {
        if (const char* env = std::getenv("JNDLOC_ADMIN_TOKEN")) c.set("server.admin_token", std::string(env));
    }
    c.validate();
    return c;
}

std::pair<std::string, json> parse_override(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' must look like key=value");
    const std::string key = text.substr(0, eq);
    const std::string raw = text.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    return {key, value};
}

protocol::Rules Config::rules() const {
    protocol::Rules r;
    r.accuracy_threshold = get<double>("study.accuracy_threshold");
    r.max_study_hits = get<int>("study.max_hits");
    r.accuracy_check_after = get<int>("study.check_after");
    r.study_items_per_hit = get<int>("study.items_per_hit");
    r.training_items = get<int>("study.training_items");
    r.quiz_items = get<int>("study.quiz_items");
    return r;
}

gold::SynthesisConfig Config::synthesis() const {
    gold::SynthesisConfig s;
    s.sigma_region = get<double>("gold.sigma_region");
    s.sigmoid_scale = get<double>("gold.sigmoid_scale");
    s.center_jitter = get<double>("gold.center_jitter");
    s.center_min = get<int>("gold.center_min");
    s.center_max = get<int>("gold.center_max");
    s.lo_prob = get<double>("gold.lo_prob");
    s.hi_prob = get<double>("gold.hi_prob");
    s.mean_shift_bandwidth = get<double>("gold.bandwidth");
    return s;
}

qc::QcConfig Config::qc() const {
    return {get<double>("qc.hit_removal_fraction"), get<int>("qc.min_level"), get<int>("qc.max_level")};
}

server::ServerConfig Config::server() const {
    server::ServerConfig s;
    s.host = get<std::string>("server.host");
    s.port = get<int>("server.port");
    s.admin_token = get<std::string>("server.admin_token");
    s.ladder_root = get<std::string>("cache_dir");
    const auto exp = get<std::string>("server.export_dir");
    if (!exp.empty()) s.export_dir = exp;
    s.qc = qc();
    s.sigma_blur = get<double>("sigma_blur");
    s.threads = get<int>("server.threads");
    return s;
}

study::ServiceOptions Config::service_options() const {
    study::ServiceOptions o;
    const auto snap = get<std::string>("server.snapshot");
    if (!snap.empty()) o.snapshot_path = snap;
    o.snapshot_every = get<std::uint64_t>("server.snapshot_every");
    return o;
}

sim::ScenarioConfig Config::scenario() const {
    sim::ScenarioConfig s;
    s.study_images = get<int>("sim.study_images");
    s.gold_images = get<int>("sim.gold_images");
    s.width = get<int>("sim.width");
    s.height = get<int>("sim.height");
    s.min_true_pjnd = get<int>("sim.min_true_pjnd");
    s.max_true_pjnd = get<int>("sim.max_true_pjnd");
    s.workers = get<int>("sim.workers");
    s.spammer_fraction = get<double>("sim.spammer_fraction");
    s.marginal_fraction = get<double>("sim.marginal_fraction");
    s.reliable = {get<double>("sim.reliable.bias"), get<double>("sim.reliable.noise_std"),
                  get<double>("sim.reliable.jitter_std")};
    s.marginal = {get<double>("sim.marginal.bias"), get<double>("sim.marginal.noise_std"),
                  get<double>("sim.marginal.jitter_std")};
    s.min_center_separation = get<double>("sim.min_center_separation");
    s.region_sigma = get<double>("gold.sigma_region");
    s.target_responses = get<int>("study.target_responses");
    s.overshoot = get<int>("study.overshoot");
    s.gold = synthesis();
    s.rules = rules();
    s.seed = get<std::uint64_t>("seed");
    return s;
}

JpegOptions Config::jpeg() const {
    JpegOptions o;
    o.chroma_subsampling = get<int>("adapters.jpeg_chroma_subsampling");
    return o;
}

ExternalCodecConfig Config::bpg() const {
    ExternalCodecConfig c;
    c.encoder = get<std::string>("adapters.bpg_encoder");
    c.decoder = get<std::string>("adapters.bpg_decoder");
    c.encoder_args = get<std::vector<std::string>>("adapters.bpg_args");
    return c;
}

std::string help_text() {
    std::ostringstream os;
    os << "Configuration keys (JSON file; nested objects follow the dots; override with --set key=value):\n";
    for (const auto& k : keys()) {
        os << "  " << k.path << "  [default " << k.default_value.dump();
        if (!k.published.empty()) os << "; published " << k.published;
        os << "]\n      " << k.description << "\n";
    }
    return os.str();
}

std::vector<SourceImage> source_images(const Config& c, const fs::path& base) {
    std::vector<SourceImage> out;
    auto resolve = [&](const fs::path& p) { return p.is_absolute() || base.empty() ? p : base / p; };
    for (const auto& e : c.at("images")) {
        if (!e.is_object() || !e.contains("id") || !e.contains("path")) {
            throw ConfigError("images entries need 'id' and 'path'");
        }
        out.push_back({e.at("id").get<std::string>(), resolve(e.at("path").get<std::string>())});
    }
    const auto dir = c.get<std::string>("image_dir");
    if (!dir.empty()) {
        const auto d = resolve(dir);
        if (!fs::is_directory(d)) throw ConfigError("image_dir " + d.string() + " is not a directory");
        for (const auto& entry : fs::directory_iterator(d)) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") {
                out.push_back({entry.path().stem().string(), entry.path()});
            }
        }
    }
    std::sort(out.begin(), out.end(), [](const SourceImage& a, const SourceImage& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!valid_id(out[i].id)) throw ConfigError("invalid image id '" + out[i].id + "'");
        if (i > 0 && out[i].id == out[i - 1].id) throw ConfigError("duplicate image id '" + out[i].id + "'");
    }
    return out;
}

} // namespace jndloc::config
