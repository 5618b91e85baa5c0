#ifndef CAPAL_IO_HPP
#define CAPAL_IO_HPP

#include "capal/al_core.hpp"
#include "capal/scene.hpp"
#include "capal/simulator.hpp"

#include "json.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace capal {

inline constexpr const char* kSceneFormat = "capal-scenes";
inline constexpr int kSceneVersion = 1;

struct PoolHeader {
    int num_classes = 0;
    int embedding_dim = 0;
    int feature_dim = 0;
};

struct ScenePool {
    PoolHeader header;
    std::vector<SceneRecord> scenes;
};

/// Parse or format failure, carrying the 1-based line number (0 when not tied to a line).
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& source, std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

nlohmann::json scene_to_json(const SceneRecord& s);
/// Validates against the header dimensions; throws std::invalid_argument.
SceneRecord scene_from_json(const nlohmann::json& j, const PoolHeader& h);

PoolHeader infer_header(const std::vector<SceneRecord>& scenes, int num_classes);

ScenePool read_pool(std::istream& is, const std::string& source = "<stream>");
ScenePool read_pool(const std::string& path);
void write_pool(std::ostream& os, const ScenePool& pool);
void write_pool(const std::string& path, const ScenePool& pool);

// Config files. Missing keys keep their defaults, unknown keys are rejected.
nlohmann::json to_json(const WorldSpec& s);
WorldSpec world_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ALConfig& c);
ALConfig al_config_from_json(const nlohmann::json& j);

/// {"format": "capal-config", "version": 1, "world": {...}, "al": {...}}; either section may be absent.
struct ExperimentConfig {
    WorldSpec world;
    ALConfig al;
};
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// 16 hex digits of FNV-1a over the compact dump of the canonical JSON.
std::string config_hash(const nlohmann::json& canonical);
std::string config_hash(const ExperimentConfig& c);

/// One metrics CSV row. `param`/`value` name the swept knob ("" for none).
struct MetricsRow {
    RoundMetrics m;
    std::string param;
    std::string value;
    std::string config_hash;
};

extern const std::vector<std::string> kMetricsColumns;

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& is, const std::string& source = "<stream>");
nlohmann::json metrics_to_json(const std::vector<MetricsRow>& rows);

std::string read_text(const std::string& path);
/// Write to path.tmp and rename over path.
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace capal

#endif  // CAPAL_IO_HPP
