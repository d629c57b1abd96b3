#include "jndloc/simobserver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "jndloc/errors.hpp"

namespace jndloc::sim {

using nlohmann::json;

std::string_view to_string(Reliability r) { return r == Reliability::reliable ? "reliable" : "spammer"; }

Reliability parse_reliability(std::string_view name) {
    if (name == "reliable") return Reliability::reliable;
    if (name == "spammer") return Reliability::spammer;
    throw ValidationError("unknown reliability '" + std::string(name) + "'");
}

void validate_model(const ObserverModel& m) {
    if (!(m.threshold_noise_std >= 0.0) || !(m.click_jitter_std >= 0.0)) {
        throw DomainError("observer " + m.observer_id + ": noise deviations must be >= 0");
    }
}

int simulate_pjnd(const ObserverModel& m, double true_level, std::mt19937_64& rng) {
    if (m.reliability == Reliability::spammer) return std::uniform_int_distribution<int>(0, kMaxLevel)(rng);
    double noise = 0.0;
    if (m.threshold_noise_std > 0.0) noise = std::normal_distribution<double>(0.0, m.threshold_noise_std)(rng);
    const auto level = round_half_away(true_level + m.threshold_bias + noise);
    return static_cast<int>(std::clamp<long>(level, 0, kMaxLevel));
}

std::array<Point, kClicksPerResponse> simulate_clicks(const ObserverModel& m, std::span<const Point> centers,
                                                      int width, int height, std::mt19937_64& rng) {
    if (width <= 0 || height <= 0) throw DomainError("image size must be positive");
    std::array<Point, kClicksPerResponse> clicks{};
    const double xmax = width - 1;
    const double ymax = height - 1;
    if (m.reliability == Reliability::spammer) {
        std::uniform_real_distribution<double> ux(0.0, xmax), uy(0.0, ymax);
        for (auto& c : clicks) c = {ux(rng), uy(rng)};
        return clicks;
    }
    if (centers.size() < kClicksPerResponse) throw DomainError("need at least three centers");
    for (std::size_t i = 0; i < kClicksPerResponse; ++i) {
        double dx = 0.0, dy = 0.0;
        if (m.click_jitter_std > 0.0) {
            std::normal_distribution<double> n(0.0, m.click_jitter_std);
            dx = n(rng);
            dy = n(rng);
        }
        clicks[i] = {std::clamp(centers[i].x + dx, 0.0, xmax), std::clamp(centers[i].y + dy, 0.0, ymax)};
    }
    return clicks;
}

std::vector<Point> ImageTruth::strongest_centers() const {
    std::vector<PlantedRegion> sorted = regions;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const PlantedRegion& a, const PlantedRegion& b) { return a.amplitude > b.amplitude; });
    std::vector<Point> out;
    for (const auto& r : sorted) out.push_back(r.center);
    return out;
}

critmap::CriticalityMap truth_map(const ImageTruth& t) {
    std::vector<float> values(static_cast<std::size_t>(t.width) * t.height, 0.0f);
    double peak = 0.0;
    std::vector<double> acc(values.size(), 0.0);
    for (int y = 0; y < t.height; ++y) {
        for (int x = 0; x < t.width; ++x) {
            double v = 0.0;
            for (const auto& r : t.regions) {
                const double dx = x - r.center.x, dy = y - r.center.y;
                v += r.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * r.sigma * r.sigma));
            }
            acc[static_cast<std::size_t>(y) * t.width + x] = v;
            peak = std::max(peak, v);
        }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) values[i] = peak > 0.0 ? static_cast<float>(acc[i] / peak) : 0.0f;
    return critmap::CriticalityMap(t.width, t.height, std::move(values));
}

std::vector<PlantedRegion> plant_regions(int width, int height, double sigma, double min_separation,
                                         std::mt19937_64& rng) {
    const double margin = std::min({sigma, width / 4.0, height / 4.0});
    std::uniform_real_distribution<double> ux(margin, width - 1 - margin), uy(margin, height - 1 - margin);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        std::vector<PlantedRegion> regions;
        for (int i = 0; i < gold::kRegionCount; ++i) {
            const Point p{std::round(ux(rng)), std::round(uy(rng))};
            const bool far = std::all_of(regions.begin(), regions.end(),
                                         [&](const PlantedRegion& r) { return distance(r.center, p) >= min_separation; });
            if (!far) break;
            regions.push_back({p, 1.0 - 0.2 * i, sigma});
        }
        if (regions.size() == static_cast<std::size_t>(gold::kRegionCount)) return regions;
    }
    throw DomainError("cannot place three regions with the requested separation");
}

const ImageTruth& GroundTruthScenario::truth(const std::string& ref) const {
    auto it = std::find_if(images.begin(), images.end(), [&](const ImageTruth& t) { return t.image_ref == ref; });
    if (it == images.end()) throw ValidationError("scenario has no truth for " + ref);
    return *it;
}

namespace {

std::string numbered(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04d", prefix, i);
    return buf;
}

} // namespace

GroundTruthScenario make_scenario(const ScenarioConfig& cfg) {
    if (cfg.study_images <= 0 || cfg.study_images % 10 != 0) throw DomainError("study_images must be a positive multiple of 10");
    if (cfg.gold_images < cfg.rules.training_items + cfg.rules.quiz_items) {
        throw DomainError("not enough gold images for training and quiz");
    }
    if (cfg.workers <= 0 || cfg.spammer_fraction < 0 || cfg.marginal_fraction < 0 ||
        cfg.spammer_fraction + cfg.marginal_fraction > 1.0) {
        throw DomainError("population fractions out of range");
    }
    std::mt19937_64 rng(cfg.seed);
    GroundTruthScenario sc;
    study::Study& st = sc.study;
    st.rules = cfg.rules;
    st.target_responses = cfg.target_responses;
    st.overshoot = cfg.overshoot;
    st.seed = cfg.seed;

    std::uniform_int_distribution<int> truth_level(cfg.min_true_pjnd, cfg.max_true_pjnd);
    std::vector<protocol::PoolImage> pool;
    for (int i = 0; i < cfg.study_images; ++i) {
        ImageTruth t{numbered("img", i), cfg.width, cfg.height, truth_level(rng), {}};
        t.regions = plant_regions(cfg.width, cfg.height, cfg.region_sigma, cfg.min_center_separation, rng);
        st.images.push_back({t.image_ref, t.image_ref, CodecId::jpeg, t.width, t.height, false});
        pool.push_back({t.image_ref, CodecId::jpeg, 0});
        sc.images.push_back(std::move(t));
    }

    // Gold items go through the real synthesis path: pilot map and pilot
    // mean come from the planted truth.
    std::uniform_int_distribution<int> gold_level(std::max(cfg.min_true_pjnd, 20), std::min(cfg.max_true_pjnd, 80));
    std::vector<std::string> gold_refs;
    for (int i = 0; i < cfg.gold_images; ++i) {
        ImageTruth t{numbered("gold", i), cfg.width, cfg.height, gold_level(rng), {}};
        t.regions = plant_regions(cfg.width, cfg.height, cfg.region_sigma, cfg.min_center_separation, rng);
        const auto spec = gold::synthesize_gold_spec(t.image_ref, CodecId::jpeg, truth_map(t), t.true_pjnd,
                                                     cfg.seed * 1000003ULL + static_cast<std::uint64_t>(i), cfg.gold);
        // Observers perceive the gold item at its sigmoid center, with the
        // planted regions where synthesis put them.
        t.true_pjnd = spec.sigmoid_center;
        t.regions.clear();
        for (int k = 0; k < gold::kRegionCount; ++k) {
            t.regions.push_back({spec.centers[static_cast<std::size_t>(k)], 1.0 - 0.2 * k, spec.sigma_region});
        }
        st.images.push_back({t.image_ref, t.image_ref, CodecId::jpeg, t.width, t.height, true});
        st.gold[t.image_ref] = spec;
        gold_refs.push_back(t.image_ref);
        sc.images.push_back(std::move(t));
    }
    const auto n_train = static_cast<std::size_t>(st.rules.training_items);
    const auto n_quiz = static_cast<std::size_t>(st.rules.quiz_items);
    st.training_items.assign(gold_refs.begin(), gold_refs.begin() + static_cast<std::ptrdiff_t>(n_train));
    st.quiz_items.assign(gold_refs.begin() + static_cast<std::ptrdiff_t>(n_train),
                         gold_refs.begin() + static_cast<std::ptrdiff_t>(n_train + n_quiz));
    st.gold_pool = gold_refs;
    st.templates = protocol::build_hit_templates(pool, cfg.seed, st.rules);
    st.validate();

    const int n_spam = static_cast<int>(std::lround(cfg.workers * cfg.spammer_fraction));
    const int n_marginal = static_cast<int>(std::lround(cfg.workers * cfg.marginal_fraction));
    std::vector<ObserverModel> pop;
    for (int i = 0; i < cfg.workers; ++i) {
        ObserverModel m;
        m.seed = cfg.seed ^ (0xD1B54A32D192ED03ULL * static_cast<std::uint64_t>(i + 1));
        const ObserverClass* cls = &cfg.reliable;
        if (i < n_spam) {
            m.reliability = Reliability::spammer;
        } else if (i < n_spam + n_marginal) {
            cls = &cfg.marginal;
        }
        m.threshold_bias = cls->bias;
        m.threshold_noise_std = cls->noise_std;
        m.click_jitter_std = cls->jitter_std;
        pop.push_back(m);
    }
    // Spread spammers and marginal observers through the arrival order.
    std::shuffle(pop.begin(), pop.end(), rng);
    for (int i = 0; i < cfg.workers; ++i) pop[static_cast<std::size_t>(i)].observer_id = numbered("w", i);
    sc.population = std::move(pop);
    return sc;
}

json to_json(const GroundTruthScenario& sc) {
    json images = json::array();
    for (const auto& t : sc.images) {
        json regions = json::array();
        for (const auto& r : t.regions) {
            regions.push_back({{"center", {r.center.x, r.center.y}}, {"amplitude", r.amplitude}, {"sigma", r.sigma}});
        }
        images.push_back({{"image_ref", t.image_ref}, {"width", t.width}, {"height", t.height},
                          {"true_pjnd", t.true_pjnd}, {"regions", regions}});
    }
    json pop = json::array();
    for (const auto& m : sc.population) {
        pop.push_back({{"observer_id", m.observer_id}, {"reliability", to_string(m.reliability)},
                       {"threshold_bias", m.threshold_bias}, {"threshold_noise_std", m.threshold_noise_std},
                       {"click_jitter_std", m.click_jitter_std}, {"seed", m.seed}});
    }
    return {{"images", images}, {"population", pop}, {"study", study::to_json(sc.study)}};
}

GroundTruthScenario scenario_from_json(const json& j) {
    try {
        GroundTruthScenario sc;
        for (const auto& e : j.at("images")) {
            ImageTruth t{e.at("image_ref").get<std::string>(), e.at("width").get<int>(), e.at("height").get<int>(),
                         e.at("true_pjnd").get<int>(), {}};
            for (const auto& r : e.at("regions")) {
                t.regions.push_back({{r.at("center")[0].get<double>(), r.at("center")[1].get<double>()},
                                     r.at("amplitude").get<double>(), r.at("sigma").get<double>()});
            }
            sc.images.push_back(std::move(t));
        }
        for (const auto& e : j.at("population")) {
            ObserverModel m{e.at("observer_id").get<std::string>(),
                            parse_reliability(e.at("reliability").get<std::string>()),
                            e.at("threshold_bias").get<double>(), e.at("threshold_noise_std").get<double>(),
                            e.at("click_jitter_std").get<double>(), e.at("seed").get<std::uint64_t>()};
            validate_model(m);
            sc.population.push_back(std::move(m));
        }
        sc.study = study::study_from_json(j.at("study"));
        for (const auto& img : sc.study.images) sc.truth(img.image_ref);
        return sc;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed scenario: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

namespace {

struct SimWorker {
    const ObserverModel* model;
    std::mt19937_64 rng;
    std::string token;
};

class TeeSink final : public study::EventSink {
public:
    TeeSink(std::shared_ptr<study::EventSink> a, std::shared_ptr<study::EventSink> b) : a_(std::move(a)), b_(std::move(b)) {}
    void append(const json& e) override {
        a_->append(e);
        if (b_) b_->append(e);
    }

private:
    std::shared_ptr<study::EventSink> a_, b_;
};

json clicks_json(const std::array<Point, kClicksPerResponse>& c) { return clicks_to_json(c); }

} // namespace

SimulationResult run_simulated_study(const GroundTruthScenario& sc, const SimulationOptions& opt) {
    for (const auto& img : sc.study.images) {
        const auto& t = sc.truth(img.image_ref);
        if (t.width != img.width || t.height != img.height) throw ValidationError("scenario/study size mismatch for " + t.image_ref);
        if (t.regions.size() < static_cast<std::size_t>(gold::kRegionCount)) {
            throw ValidationError("scenario image " + t.image_ref + " needs three regions");
        }
    }
    for (const auto& m : sc.population) validate_model(m);

    auto memory = std::make_shared<study::MemoryEventLog>();
    std::int64_t now = opt.start_ms;
    std::mt19937_64 token_rng(sc.study.seed ^ 0x5851F42D4C957F2DULL);
    study::ServiceOptions so;
    so.clock = [&now] { return now; };
    so.tokens = [&token_rng] {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(token_rng()),
                      static_cast<unsigned long long>(token_rng()));
        return std::string(buf);
    };
    study::StudyService service(sc.study, std::make_shared<TeeSink>(memory, opt.mirror), so);

    auto tick = [&] { now += opt.step_ms; };
    auto open_session = [&](SimWorker& w) {
        study::SessionRequest req{w.model->observer_id, 96.0, true, 1920, 1080};
        w.token = service.create_session(req).at("token").get<std::string>();
        tick();
    };
    // Retries once with a fresh session when the old one has expired.
    auto call = [&](SimWorker& w, auto&& f) -> json {
        try {
            return f();
        } catch (const study::ServiceError& e) {
            if (e.status() != 401) throw;
            open_session(w);
            return f();
        }
    };

    std::vector<SimWorker> workers;
    workers.reserve(sc.population.size());
    for (const auto& m : sc.population) workers.push_back({&m, std::mt19937_64(m.seed), {}});

    // Qualification: training with ground-truth feedback, then the quiz.
    const int n_qual = sc.study.rules.training_items + sc.study.rules.quiz_items;
    for (auto& w : workers) {
        open_session(w);
        bool learned = false;  // saw the ground truth for the current item
        for (int guard = 0; guard < n_qual * 10; ++guard) {
            json item;
            try {
                item = call(w, [&] { return service.qualification_next(w.token); });
            } catch (const study::ServiceError& e) {
                if (e.status() == 403) break;  // qualified or quiz failed
                throw;
            }
            const auto ref = item.at("image_ref").get<std::string>();
            const auto& t = sc.truth(ref);
            const auto centers = t.strongest_centers();
            int level;
            std::array<Point, kClicksPerResponse> clicks;
            if (learned) {
                const auto& spec = sc.study.gold.at(ref);
                level = (spec.pjnd_range.lo + spec.pjnd_range.hi) / 2;
                clicks = {spec.centers[0], spec.centers[1], spec.centers[2]};
            } else {
                level = simulate_pjnd(*w.model, t.true_pjnd, w.rng);
                clicks = simulate_clicks(*w.model, centers, t.width, t.height, w.rng);
            }
            const json body = {{"item_index", item.at("item_index")}, {"level", level}, {"clicks", clicks_json(clicks)}};
            const json out = call(w, [&] { return service.qualification_respond(w.token, body); });
            learned = out.value("action", "") == "retry";
            tick();
        }
    }

    // Study HITs, one HIT per worker per round.
    std::vector<SimWorker*> active;
    for (auto& w : workers) {
        const auto* rec = service.state_copy().worker(w.model->observer_id);
        if (rec && rec->state == protocol::WorkerState::qualified) active.push_back(&w);
    }
    std::size_t assignments = 0;
    bool progress = true;
    while (progress && !active.empty()) {
        progress = false;
        std::vector<SimWorker*> still;
        for (SimWorker* w : active) {
            json hit;
            try {
                hit = call(*w, [&] { return service.hit_next(w->token); });
            } catch (const study::ServiceError& e) {
                if (e.status() == 404) continue;  // nothing left this worker may take
                throw;
            }
            ++assignments;
            progress = true;
            const auto aid = hit.at("assignment_id").get<std::string>();
            const auto hit_id = hit.at("hit_id").get<std::string>();
            json last;
            for (const auto& item : hit.at("items")) {
                if (item.value("answered", false)) continue;
                const auto ref = item.at("image_ref").get<std::string>();
                const auto& t = sc.truth(ref);
                const int level = simulate_pjnd(*w->model, t.true_pjnd, w->rng);
                const auto clicks = simulate_clicks(*w->model, t.strongest_centers(), t.width, t.height, w->rng);
                const std::int64_t started = now;
                tick();
                const json body = {{"worker_id", w->model->observer_id}, {"hit_id", hit_id}, {"image_ref", ref},
                                   {"level", level}, {"clicks", clicks_json(clicks)}, {"started_at", started},
                                   {"submitted_at", now}, {"client_ppi", 96.0}};
                last = call(*w, [&] { return service.hit_respond(w->token, aid, body); });
            }
            if (last.value("state", "qualified") == "qualified") still.push_back(w);
        }
        active = std::move(still);
    }

    SimulationResult result;
    result.events = memory;
    result.log = service.response_log();
    result.workers = service.state_copy().workers();
    result.assignments = assignments;
    return result;
}

} // namespace jndloc::sim
