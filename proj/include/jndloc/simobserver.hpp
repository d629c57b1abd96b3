#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "jndloc/critmap.hpp"
#include "jndloc/goldgen.hpp"
#include "jndloc/qc.hpp"
#include "jndloc/study.hpp"

namespace jndloc::sim {

enum class Reliability { reliable, spammer };

std::string_view to_string(Reliability r);
Reliability parse_reliability(std::string_view name);

struct ObserverModel {
    std::string observer_id;
    Reliability reliability = Reliability::reliable;
    double threshold_bias = 0.0;       // levels
    double threshold_noise_std = 0.0;  // levels
    double click_jitter_std = 0.0;     // pixels
    std::uint64_t seed = 0;
};

void validate_model(const ObserverModel& model);

// Reliable: round(true + bias + N(0, noise)) clamped to [0, 100].
// Spammer: uniform over [0, 100].
int simulate_pjnd(const ObserverModel& model, double true_level, std::mt19937_64& rng);

// Reliable: the first three centers (strongest first) with isotropic
// Gaussian jitter, clamped into the image. Spammer: uniform points.
std::array<Point, kClicksPerResponse> simulate_clicks(const ObserverModel& model, std::span<const Point> centers,
                                                      int width, int height, std::mt19937_64& rng);

struct PlantedRegion {
    Point center;
    double amplitude = 1.0;
    double sigma = 35.0;
};

struct ImageTruth {
    std::string image_ref;
    int width = 0;
    int height = 0;
    int true_pjnd = 50;
    std::vector<PlantedRegion> regions;

    // Region centers ordered by decreasing amplitude.
    std::vector<Point> strongest_centers() const;
};

// Sum of the planted Gaussians, max-normalized.
critmap::CriticalityMap truth_map(const ImageTruth& truth);

struct ObserverClass {
    double bias = 0.0;
    double noise_std = 3.0;
    double jitter_std = 10.0;
};

struct ScenarioConfig {
    int study_images = 300;
    int gold_images = 25;
    int width = 256;
    int height = 256;
    int min_true_pjnd = 10;
    int max_true_pjnd = 90;
    int workers = 120;
    double spammer_fraction = 0.10;
    // Reliable but sloppy observers that sit near the accuracy threshold.
    double marginal_fraction = 0.10;
    ObserverClass reliable{0.0, 3.0, 10.0};
    ObserverClass marginal{6.0, 4.0, 30.0};
    double min_center_separation = 100.0;
    double region_sigma = 35.0;
    int target_responses = 50;
    int overshoot = 2;
    gold::SynthesisConfig gold;
    protocol::Rules rules;
    std::uint64_t seed = 2024;
};

struct GroundTruthScenario {
    std::vector<ImageTruth> images;  // study and gold images
    std::vector<ObserverModel> population;
    study::Study study;

    const ImageTruth& truth(const std::string& image_ref) const;
};

// Three planted centers at least `min_separation` apart, kept away from
// the borders.
std::vector<PlantedRegion> plant_regions(int width, int height, double sigma, double min_separation,
                                         std::mt19937_64& rng);

GroundTruthScenario make_scenario(const ScenarioConfig& config);

nlohmann::json to_json(const GroundTruthScenario& scenario);
GroundTruthScenario scenario_from_json(const nlohmann::json& j);

struct SimulationResult {
    std::shared_ptr<study::MemoryEventLog> events;
    qc::ResponseLog log;
    std::map<std::string, protocol::WorkerRecord> workers;
    std::size_t assignments = 0;
};

struct SimulationOptions {
    std::int64_t start_ms = 1'700'000'000'000;
    std::int64_t step_ms = 200;
    // Events are also mirrored here when set.
    std::shared_ptr<study::EventSink> mirror;
};

// Drives a StudyService the way live workers would: session, training
// with feedback, quiz, then study HITs round-robin until every template
// reaches its target.
SimulationResult run_simulated_study(const GroundTruthScenario& scenario, const SimulationOptions& options = {});

} // namespace jndloc::sim
