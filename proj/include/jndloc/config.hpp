#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "jndloc/goldgen.hpp"
#include "jndloc/imaging.hpp"
#include "jndloc/protocol.hpp"
#include "jndloc/qc.hpp"
#include "jndloc/server.hpp"
#include "jndloc/simobserver.hpp"
#include "jndloc/study.hpp"

namespace jndloc::config {

// One documented key of the study configuration.
struct KeySpec {
    std::string path;  // dotted, e.g. "study.target_responses"
    nlohmann::json default_value;
    std::string description;
    std::string published;  // published constant, empty when invented
    std::optional<double> min;
    std::optional<double> max;
};

const std::vector<KeySpec>& keys();

// Defaults, then the file (if any), then `key=value` overrides. Unknown
// keys and out-of-range values throw ConfigError.
class Config {
public:
    Config();
    static Config load(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides = {});

    const nlohmann::json& raw() const noexcept { return values_; }
    const nlohmann::json& at(const std::string& dotted) const;
    void set(const std::string& dotted, const nlohmann::json& value);
    void validate() const;

    template <typename T>
    T get(const std::string& dotted) const {
        return at(dotted).get<T>();
    }

    protocol::Rules rules() const;
    gold::SynthesisConfig synthesis() const;
    qc::QcConfig qc() const;
    server::ServerConfig server() const;
    sim::ScenarioConfig scenario() const;
    study::ServiceOptions service_options() const;
    JpegOptions jpeg() const;
    ExternalCodecConfig bpg() const;

private:
    nlohmann::json values_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Human-readable table of every key, its default and published constant.
std::string help_text();

// Parses "a.b=value"; value is JSON if it parses, else a string.
std::pair<std::string, nlohmann::json> parse_override(const std::string& text);

struct SourceImage {
    std::string id;
    std::filesystem::path path;
};

// `images` entries plus every *.png under `image_dir`, sorted by id.
std::vector<SourceImage> source_images(const Config& config, const std::filesystem::path& base_dir = {});

} // namespace jndloc::config
