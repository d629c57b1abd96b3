// jndloc: operator command line for ladders, gold items, studies, QC and export.
#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <pthread.h>
#include <string>
#include <thread>
#include <vector>

#include "jndloc/config.hpp"
#include "jndloc/errors.hpp"
#include "jndloc/goldgen.hpp"
#include "jndloc/imaging.hpp"
#include "jndloc/png_io.hpp"
#include "jndloc/protocol.hpp"
#include "jndloc/qc.hpp"
#include "jndloc/server.hpp"
#include "jndloc/simobserver.hpp"
#include "jndloc/study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace jndloc;

namespace {

enum Exit { kOk = 0, kConfig = 2, kInput = 3, kPipeline = 4 };

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::optional<std::string> config_file;
    std::vector<std::string> overrides;

    config::Config load() const {
        return config::Config::load(config_file ? std::optional<fs::path>(*config_file) : std::nullopt, overrides);
    }
};

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

fs::path require_file(const std::string& p, const char* what) {
    if (!fs::exists(p)) throw InputError(std::string(what) + " not found: " + p);
    return p;
}

std::unique_ptr<CodecAdapter> make_adapter(const config::Config& c, CodecId codec) {
    if (codec == CodecId::jpeg) return std::make_unique<JpegAdapter>(c.jpeg());
    return std::make_unique<ExternalCodecAdapter>(c.bpg());
}

qc::ResponseLog replay_log(const std::string& path) {
    const auto events = study::read_event_log(require_file(path, "event log"));
    if (events.empty()) throw InputError("event log is empty: " + path);
    return study::StudyState::replay(events).response_log();
}

gold::GoldSpec read_spec(const fs::path& p) {
    const auto bytes = png::read_file(p);
    try {
        return gold::spec_from_json(json::parse(bytes.begin(), bytes.end()));
    } catch (const json::exception& e) {
        throw ValidationError(p.string() + ": " + e.what());
    }
}

// --- ladder build ----------------------------------------------------------

json cmd_ladder_build(const config::Config& c, const std::optional<std::string>& only) {
    const LadderCache cache(c.get<std::string>("cache_dir"));
    json out = json::array();
    for (const auto& img : config::source_images(c)) {
        if (only && img.id != *only) continue;
        const auto source = png::read_rgb(require_file(img.path.string(), "source image"));
        for (const auto& name : c.at("codecs")) {
            const CodecId codec = parse_codec(name.get<std::string>());
            const auto adapter = make_adapter(c, codec);
            if (!adapter->supports(codec)) {
                out.push_back({{"id", img.id}, {"codec", to_string(codec)}, {"status", "skipped"},
                               {"reason", "codec adapter unavailable"}});
                continue;
            }
            const bool had = cache.contains(img.id, codec);
            cache.get_or_build(source, img.id, codec, *adapter);
            out.push_back({{"id", img.id}, {"codec", to_string(codec)}, {"status", had ? "cached" : "built"},
                           {"dir", cache.ladder_dir(img.id, codec).string()}});
        }
    }
    if (only && out.empty()) throw InputError("no configured image with id " + *only);
    return out;
}

// --- gold synth --------------------------------------------------------------

struct GoldArgs {
    std::string source;
    std::string codec = "jpeg";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> pilot_dir;
    std::optional<std::string> pilot_map;
    std::optional<double> pilot_mean;
    std::optional<std::string> out;
    bool build_ladder = false;
};

json cmd_gold_synth(const config::Config& c, const GoldArgs& a) {
    if (!valid_id(a.source)) throw InputError("invalid source id " + a.source);
    const CodecId codec = parse_codec(a.codec);
    critmap::CriticalityMap pilot;
    double mean = 0.0;
    if (a.pilot_dir) {
        fs::path root = *a.pilot_dir;
        if (fs::exists(root / "dataset")) root /= "dataset";
        const auto rec_bytes = png::read_file(require_file((root / "images" / (a.source + ".json")).string(), "pilot record"));
        mean = json::parse(rec_bytes.begin(), rec_bytes.end()).at("mean_pjnd").get<double>();
        pilot = critmap::from_gray16(png::read_gray16(require_file((root / "maps" / (a.source + ".png")).string(), "pilot map")));
    } else if (a.pilot_map && a.pilot_mean) {
        pilot = critmap::from_gray16(png::read_gray16(require_file(*a.pilot_map, "pilot map")));
        mean = *a.pilot_mean;
    } else {
        throw InputError("gold synth needs --pilot DIR or both --pilot-map and --pilot-mean");
    }
    const std::uint64_t seed = a.seed ? *a.seed : c.get<std::uint64_t>("seed");
    const auto spec = gold::synthesize_gold_spec(a.source, codec, pilot, mean, seed, c.synthesis());
    const fs::path out = a.out ? fs::path(*a.out) : fs::path(c.get<std::string>("gold.spec_dir")) / (a.source + ".json");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    qc::write_json(out, gold::to_json(spec));
    json result = {{"spec", out.string()}, {"gold", gold::to_json(spec)}};
    if (a.build_ladder) {
        const auto images = config::source_images(c);
        const auto it = std::find_if(images.begin(), images.end(), [&](const config::SourceImage& s) { return s.id == a.source; });
        if (it == images.end()) throw InputError("no configured source image " + a.source + " for the gold ladder");
        const auto source = png::read_rgb(require_file(it->path.string(), "source image"));
        const auto adapter = make_adapter(c, codec);
        if (!adapter->supports(codec)) throw InputError("codec adapter unavailable for " + a.codec);
        const LadderCache cache(c.get<std::string>("cache_dir"));
        const auto plain = cache.get_or_build(source, a.source, codec, *adapter);
        const auto ladder = gold::build_gold_ladder(plain, spec);
        cache.publish(ladder);
        result["ladder"] = cache.ladder_dir(ladder.source_id, codec).string();
    }
    return result;
}

// --- study init ----------------------------------------------------------------

study::Study build_study(const config::Config& c, CodecId codec) {
    study::Study st;
    st.rules = c.rules();
    st.target_responses = c.get<int>("study.target_responses");
    st.overshoot = c.get<int>("study.overshoot");
    st.min_ppi = c.get<double>("study.min_ppi");
    st.max_ppi = c.get<double>("study.max_ppi");
    st.min_viewport_width = c.get<int>("study.viewport_width");
    st.min_viewport_height = c.get<int>("study.viewport_height");
    st.session_ttl_ms = c.get<std::int64_t>("study.session_ttl_ms");
    st.assignment_ttl_ms = c.get<std::int64_t>("study.assignment_ttl_ms");
    st.seed = c.get<std::uint64_t>("seed");

    std::map<std::string, gold::GoldSpec> specs;
    const fs::path spec_dir = c.get<std::string>("gold.spec_dir");
    if (fs::is_directory(spec_dir)) {
        for (const auto& e : fs::directory_iterator(spec_dir)) {
            if (e.path().extension() != ".json") continue;
            auto spec = read_spec(e.path());
            if (spec.codec == codec) specs[spec.source_id] = std::move(spec);
        }
    }
    if (specs.empty()) throw InputError("no " + std::string(to_string(codec)) + " gold specs under " + spec_dir.string());

    std::vector<protocol::PoolImage> pool;
    for (const auto& img : config::source_images(c)) {
        if (specs.count(img.id)) continue;  // gold sources are not study items
        const auto raster = png::read_rgb(require_file(img.path.string(), "source image"));
        st.images.push_back({img.id, img.id, codec, raster.width(), raster.height(), false});
        pool.push_back({img.id, codec, 0});
    }
    std::vector<std::string> gold_refs;
    for (auto& [source, spec] : specs) {
        const auto ref = gold::gold_ladder_id(source);
        st.images.push_back({ref, source, codec, spec.width, spec.height, true});
        st.gold[ref] = spec;
        gold_refs.push_back(ref);
    }
    if (pool.empty() || pool.size() % static_cast<std::size_t>(st.rules.study_items_per_hit) != 0) {
        throw InputError("study pool has " + std::to_string(pool.size()) + " images; need a positive multiple of " +
                         std::to_string(st.rules.study_items_per_hit));
    }
    st.templates = protocol::build_hit_templates(pool, st.seed, st.rules);

    auto pick_list = [&](const char* key, std::size_t offset, std::size_t n) {
        std::vector<std::string> list;
        for (const auto& id : c.at(key)) list.push_back(gold::gold_ladder_id(id.get<std::string>()));
        if (list.empty()) {
            if (gold_refs.size() < offset + n) throw InputError("not enough gold specs for training and quiz");
            list.assign(gold_refs.begin() + static_cast<std::ptrdiff_t>(offset),
                        gold_refs.begin() + static_cast<std::ptrdiff_t>(offset + n));
        }
        return list;
    };
    st.training_items = pick_list("gold.training", 0, static_cast<std::size_t>(st.rules.training_items));
    st.quiz_items = pick_list("gold.quiz", static_cast<std::size_t>(st.rules.training_items),
                              static_cast<std::size_t>(st.rules.quiz_items));
    st.gold_pool = gold_refs;
    st.validate();
    return st;
}

study::Study read_study(const std::string& path) {
    const auto bytes = png::read_file(require_file(path, "study file"));
    try {
        return study::study_from_json(json::parse(bytes.begin(), bytes.end()));
    } catch (const json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

// --- serve ---------------------------------------------------------------------

int cmd_serve(const config::Config& c, const std::string& study_path) {
    const auto st = read_study(study_path);
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    auto service = study::StudyService::open(c.get<std::string>("server.log"), st, c.service_options());
    server::HttpServer http(*service, c.server());
    const int port = http.bind();
    std::cerr << json{{"listening", c.get<std::string>("server.host")}, {"port", port}}.dump() << std::endl;
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        http.stop();
    });
    http.serve();
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return kOk;
}

// --- simulate ------------------------------------------------------------------

json cmd_simulate(const config::Config& c, const std::string& log_path, const std::optional<std::string>& truth,
                  bool force) {
    if (fs::exists(log_path) && fs::file_size(log_path) > 0) {
        if (!force) throw InputError("event log " + log_path + " already exists (use --force to replace)");
        fs::remove(log_path);
    }
    const auto sc = sim::make_scenario(c.scenario());
    sim::SimulationOptions opt;
    opt.mirror = std::make_shared<study::FileEventLog>(log_path, /*sync=*/false);
    const auto res = sim::run_simulated_study(sc, opt);
    if (truth) qc::write_json(*truth, sim::to_json(sc));
    std::map<std::string, int> states;
    int spammers = 0, spammers_rejected = 0;
    for (const auto& m : sc.population) {
        const auto& w = res.workers.at(m.observer_id);
        ++states[w.quiz_failed ? "quiz_failed" : std::string(protocol::to_string(w.state))];
        if (m.reliability == sim::Reliability::spammer) {
            ++spammers;
            if (w.quiz_failed || w.state == protocol::WorkerState::rejected) ++spammers_rejected;
        }
    }
    return {{"log", log_path},
            {"events", res.events->lines().size()},
            {"responses", res.log.responses.size()},
            {"assignments", res.assignments},
            {"workers", states},
            {"spammers", spammers},
            {"spammers_rejected", spammers_rejected}};
}

// --- analyze -------------------------------------------------------------------

json cmd_analyze(const config::Config& c, const std::string& log_path, std::size_t pick, std::size_t bins) {
    const auto analysis = qc::analyze(replay_log(log_path), c.qc(), c.get<double>("sigma_blur"));
    auto annotations = analysis.aggregate.annotations;
    std::stable_sort(annotations.begin(), annotations.end(),
                     [](const qc::ImageAnnotation& a, const qc::ImageAnnotation& b) { return a.mean_pjnd < b.mean_pjnd; });
    json images = json::array();
    std::vector<protocol::PjndSamples> samples;
    for (const auto& a : annotations) {
        images.push_back({{"id", a.image_id}, {"n", a.pjnd_samples.size()}, {"mean_pjnd", a.mean_pjnd},
                          {"std_pjnd", a.std_pjnd ? json(*a.std_pjnd) : json(nullptr)}});
        samples.push_back({a.image_id, std::vector<double>(a.pjnd_samples.begin(), a.pjnd_samples.end())});
    }
    json out = {{"images", images}, {"flagged", analysis.aggregate.flagged}};
    if (pick > 0) {
        json chosen = json::array();
        for (auto i : protocol::sample_study_images(annotations.size(), pick)) chosen.push_back(annotations[i].image_id);
        out["study_sample"] = chosen;
    }
    if (bins > 0) out["gold_candidates"] = protocol::select_gold_candidates(samples, bins);
    return out;
}

// --- compare -------------------------------------------------------------------

json cmd_compare(const std::string& dataset, const std::string& reference, const std::string& codec_name) {
    const CodecId codec = parse_codec(codec_name);
    fs::path root = require_file(dataset, "dataset");
    if (fs::exists(root / "dataset")) root /= "dataset";
    std::vector<qc::ImageAnnotation> ours;
    for (const auto& e : fs::directory_iterator(require_file((root / "images").string(), "dataset images"))) {
        if (e.path().extension() != ".json") continue;
        const auto bytes = png::read_file(e.path());
        const auto j = json::parse(bytes.begin(), bytes.end());
        qc::ImageAnnotation a;
        a.image_id = j.at("id").get<std::string>();
        a.codec = parse_codec(j.at("codec").get<std::string>());
        a.mean_pjnd = j.at("mean_pjnd").get<double>();
        ours.push_back(std::move(a));
    }
    std::sort(ours.begin(), ours.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
    const auto ref = qc::load_reference_table(require_file(reference, "reference"));
    return qc::to_json(qc::compare_datasets(ours, ref, codec));
}

int report_error(int code, const char* kind, const std::string& msg) {
    std::cerr << json{{"error", {{"kind", kind}, {"message", msg}, {"exit_code", code}}}}.dump() << std::endl;
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"jndloc: JND localization study toolkit"};
    app.require_subcommand(1);
    app.footer("\n" + config::help_text());
    Common common;
    app.add_option("-c,--config", common.config_file, "Study configuration (JSON)");
    app.add_option("--set", common.overrides, "Override a config key: key=value (repeatable)");

    std::function<json()> action;
    std::function<int()> blocking;

    auto* ladder = app.add_subcommand("ladder", "Distortion ladders");
    ladder->require_subcommand(1);
    auto* ladder_build = ladder->add_subcommand("build", "Build and cache ladders for the configured images");
    std::optional<std::string> ladder_id;
    ladder_build->add_option("--id", ladder_id, "Only this source id");
    ladder_build->callback([&] { action = [&] { return json(cmd_ladder_build(common.load(), ladder_id)); }; });

    auto* gold_cmd = app.add_subcommand("gold", "Gold-standard items");
    gold_cmd->require_subcommand(1);
    auto* gold_synth = gold_cmd->add_subcommand("synth", "Synthesize a GoldSpec from pilot data");
    GoldArgs gargs;
    gold_synth->add_option("--source", gargs.source, "Source image id")->required();
    gold_synth->add_option("--codec", gargs.codec, "jpeg or bpg")->capture_default_str();
    gold_synth->add_option("--seed", gargs.seed, "Seed (default: config seed)");
    gold_synth->add_option("--pilot", gargs.pilot_dir, "Pilot dataset export directory");
    gold_synth->add_option("--pilot-map", gargs.pilot_map, "Pilot criticality map (16-bit PNG)");
    gold_synth->add_option("--pilot-mean", gargs.pilot_mean, "Pilot mean PJND");
    gold_synth->add_option("-o,--out", gargs.out, "Output file (default <gold.spec_dir>/<source>.json)");
    gold_synth->add_flag("--build-ladder", gargs.build_ladder, "Also build the gold ladder into the cache");
    gold_synth->callback([&] { action = [&] { return cmd_gold_synth(common.load(), gargs); }; });

    auto* study_cmd = app.add_subcommand("study", "Study definitions");
    study_cmd->require_subcommand(1);
    auto* study_init = study_cmd->add_subcommand("init", "Assemble a study definition from images and gold specs");
    std::string study_out = "study.json";
    std::optional<std::string> study_codec;
    study_init->add_option("-o,--out", study_out, "Output file")->capture_default_str();
    study_init->add_option("--codec", study_codec, "Codec (default: first configured)");
    study_init->callback([&] {
        action = [&] {
            const auto c = common.load();
            const CodecId codec = parse_codec(study_codec ? *study_codec : c.at("codecs").at(0).get<std::string>());
            const auto st = build_study(c, codec);
            qc::write_json(study_out, study::to_json(st));
            return json{{"study", study_out}, {"templates", st.templates.size()}, {"images", st.images.size()},
                        {"gold", st.gold.size()}};
        };
    });

    auto* serve = app.add_subcommand("serve", "Run the HTTP study server");
    std::string serve_study = "study.json";
    serve->add_option("--study", serve_study, "Study definition")->capture_default_str();
    serve->callback([&] { blocking = [&] { return cmd_serve(common.load(), serve_study); }; });

    auto* simulate = app.add_subcommand("simulate", "Run a simulated study and write its event log");
    std::optional<std::string> sim_log, sim_truth;
    bool sim_force = false;
    simulate->add_option("--log", sim_log, "Event log to write (default server.log)");
    simulate->add_option("--truth", sim_truth, "Also write the ground-truth scenario here");
    simulate->add_flag("--force", sim_force, "Replace an existing log");
    simulate->callback([&] {
        action = [&] {
            const auto c = common.load();
            return cmd_simulate(c, sim_log ? *sim_log : c.get<std::string>("server.log"), sim_truth, sim_force);
        };
    });

    auto* qc_cmd = app.add_subcommand("qc", "Quality control");
    qc_cmd->require_subcommand(1);
    auto* qc_run = qc_cmd->add_subcommand("run", "Run the outlier-removal pipeline and print the stage report");
    std::string qc_log = "events.jsonl";
    std::optional<std::string> qc_out;
    qc_run->add_option("--log", qc_log, "Event log")->capture_default_str();
    qc_run->add_option("-o,--out", qc_out, "Also write the report here");
    qc_run->callback([&] {
        action = [&] {
            const auto c = common.load();
            const auto result = qc::run_pipeline(replay_log(qc_log), c.qc());
            const auto report = qc::to_json(result.report);
            if (qc_out) qc::write_json(*qc_out, report);
            return report;
        };
    });

    auto* analyze = app.add_subcommand("analyze", "Per-image statistics, study sampling and gold candidates");
    std::string an_log = "events.jsonl";
    std::size_t an_pick = 0, an_bins = 25;
    analyze->add_option("--log", an_log, "Event log")->capture_default_str();
    analyze->add_option("--pick", an_pick, "Suggest this many study images, evenly spaced by mean PJND");
    analyze->add_option("--bins", an_bins, "Gold-candidate bins (0 disables)")->capture_default_str();
    analyze->callback([&] { action = [&] { return cmd_analyze(common.load(), an_log, an_pick, an_bins); }; });

    auto* exp = app.add_subcommand("export", "Run QC and write the dataset");
    std::string ex_log = "events.jsonl", ex_out = "out";
    exp->add_option("--log", ex_log, "Event log")->capture_default_str();
    exp->add_option("-o,--out", ex_out, "Output directory (dataset/ is created inside)")->capture_default_str();
    exp->callback([&] {
        action = [&] {
            const auto c = common.load();
            const double sigma = c.get<double>("sigma_blur");
            const auto analysis = qc::analyze(replay_log(ex_log), c.qc(), sigma);
            auto manifest = qc::export_dataset(analysis.aggregate.annotations, ex_out, sigma, analysis.pipeline.report);
            manifest["flagged"] = analysis.aggregate.flagged;
            return manifest;
        };
    });

    auto* compare = app.add_subcommand("compare", "Compare mean PJNDs against a reference dataset");
    std::string cmp_dataset = "out", cmp_ref, cmp_codec = "jpeg";
    std::optional<std::string> cmp_out;
    compare->add_option("--dataset", cmp_dataset, "Our export directory")->capture_default_str();
    compare->add_option("--reference", cmp_ref, "Reference table or export directory")->required();
    compare->add_option("--codec", cmp_codec, "Codec")->capture_default_str();
    compare->add_option("-o,--out", cmp_out, "Also write the report here");
    compare->callback([&] {
        action = [&] {
            auto report = cmd_compare(cmp_dataset, cmp_ref, cmp_codec);
            if (cmp_out) qc::write_json(*cmp_out, report);
            return report;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        return report_error(kConfig, "usage", e.what());
    }

    try {
        if (blocking) return blocking();
        if (action) emit(action());
        return kOk;
    } catch (const config::ConfigError& e) {
        return report_error(kConfig, "config", e.what());
    } catch (const InputError& e) {
        return report_error(kInput, "input", e.what());
    } catch (const IoError& e) {
        return report_error(kInput, "input", e.what());
    } catch (const ValidationError& e) {
        return report_error(kInput, "input", e.what());
    } catch (const std::exception& e) {
        return report_error(kPipeline, "pipeline", e.what());
    }
}
