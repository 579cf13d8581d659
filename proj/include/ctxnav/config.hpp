#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ctxnav/embed.hpp"
#include "ctxnav/icl.hpp"
#include "ctxnav/planner.hpp"
#include "ctxnav/policy.hpp"
#include "ctxnav/vecdb.hpp"

namespace ctxnav {

// Scalar or single-line array value from the config file.
using ConfigValue = std::variant<bool, std::int64_t, double, std::string, std::vector<std::string>>;

// Minimal TOML reader: `[section]` headers, `key = value` pairs, `#`
// comments. Values are basic strings, integers, floats, booleans or
// single-line arrays of strings. Keys come back as "section.key".
std::map<std::string, ConfigValue> parse_config_text(std::string_view text);

struct RoleSettings {
    std::string backend = "oracle";   // oracle | http
    EndpointConfig endpoint;
    std::filesystem::path oracle_facts;
    std::uint64_t oracle_seed = 0;
    std::string rule_set = "bench";
};

struct Config {
    std::filesystem::path corpus_path;
    std::filesystem::path db_dir;

    RoleSettings policy;
    RoleSettings downstream;

    PlanMode planner_mode = PlanMode::rule;
    int max_steps = 5;
    bool persist_memory = false;
    std::filesystem::path memory_path;

    std::size_t k = default_shots;
    RetrievalMode retrieval_mode = RetrievalMode::textual;
    int cascade_overfetch = 4;
    double agentic_overfetch = 1.5;
    ImagePlacement placement = ImagePlacement::interleaved;

    std::string embed_backend = "mock";   // mock | http
    MockEmbeddingConfig mock;
    EndpointConfig embed_endpoint;
    ResourcePreference preference;
    bool model_matching = false;
    // Free GPU memory to plan for; there is no portable way to probe it.
    double gpu_gb = 32.0;
    // Overrides the probed free disk space when set.
    std::optional<double> disk_gb;
    int max_concurrency = 4;

    std::filesystem::path prompts;
    std::filesystem::path bench_spec;

    // Reads `path` (if non-empty), then applies CTXNAV_<SECTION>_<KEY>
    // environment overrides. Relative paths resolve against the file's
    // directory, or the working directory for env values.
    static Config load(const std::filesystem::path& path);
    static Config from_values(const std::map<std::string, ConfigValue>& values,
                              const std::filesystem::path& base_dir);

    // Applies one "section.key" setting; throws ConfigError on unknown keys
    // or mistyped values.
    void set(const std::string& key, const ConfigValue& value, const std::filesystem::path& base_dir);

    static const std::vector<std::string>& known_keys();
    static std::string env_name(std::string_view key);
};

}  // namespace ctxnav
