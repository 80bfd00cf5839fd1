#pragma once

#include "normagent/experiment.hpp"
#include "normagent/gateway.hpp"
#include "normagent/pipeline.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>

namespace normagent {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Fully resolved run configuration.
struct RunConfig {
    GatewayConfig gateway;
    RetrieverMode retriever_mode = RetrieverMode::AllPrior;
    RetrievalWeights weights;
    int retriever_k = 50;
    std::string arms = "both";  // both | with_norm | without_norm
    std::uint64_t base_seed = 1;
    int parallelism = 1;
    int panas_retry_limit = 3;
    int story_retry_limit = 3;
    std::string output_dir = "out";
    std::string run_id = "run";
    bool verbose = false;

    std::vector<Arm> arm_list() const;
    StoryRunOptions story_options() const;
    /// Snapshot of every key/value, suitable for embedding in manifests.
    ojson snapshot() const;
};

/// Parses a flat TOML-style document: `key = value` lines, `#` comments,
/// optional quotes around values. No tables, no nesting.
std::map<std::string, std::string> parse_config_text(const std::string& text);

using EnvLookup = std::function<const char*(const char*)>;

/// Environment variable for a config key: NORMAGENT_ + key upper-cased with
/// dots replaced by underscores (gateway.base_url -> NORMAGENT_GATEWAY_BASE_URL).
std::string env_var_for_key(const std::string& key);

/// Resolves a config with precedence flags > environment > file > defaults.
/// Unknown keys and unparseable values raise ConfigError.
RunConfig resolve_config(const std::map<std::string, std::string>& flag_overrides,
                         const std::map<std::string, std::string>& file_values,
                         const EnvLookup& env);

/// resolve_config with the process environment.
RunConfig load_config(const std::map<std::string, std::string>& flag_overrides,
                      const std::optional<std::filesystem::path>& config_path);

}  // namespace normagent
