#include "normagent/config.hpp"

#include "normagent/util.hpp"

#include <cstdlib>
#include <set>

namespace normagent {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "gateway.base_url",
        "gateway.api_key_env",
        "gateway.model_story",
        "gateway.model_norm",
        "gateway.model_context",
        "gateway.model_panas",
        "gateway.temperature_story",
        "gateway.temperature_norm",
        "gateway.temperature_context",
        "gateway.temperature_panas",
        "gateway.max_retries",
        "gateway.requests_per_minute",
        "gateway.initial_backoff_ms",
        "gateway.cassette_path",
        "gateway.cassette_mode",
        "retrieval.mode",
        "retrieval.w_recency",
        "retrieval.w_relevance",
        "retrieval.w_saliency",
        "retrieval.recency_decay",
        "retrieval.k",
        "run.arms",
        "run.base_seed",
        "run.parallelism",
        "run.panas_retry_limit",
        "run.story_retry_limit",
        "run.output_dir",
        "run.run_id",
        "run.verbose",
    };
    return keys;
}

std::string unquote(std::string value) {
    if (value.size() >= 2 &&
        ((value.front() == '"' && value.back() == '"') ||
         (value.front() == '\'' && value.back() == '\''))) {
        return value.substr(1, value.size() - 2);
    }
    return value;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t end = 0;
        double v = std::stod(value, &end);
        if (end != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
    }
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        size_t end = 0;
        long long v = std::stoll(value, &end);
        if (end != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (iequals(value, "true") || value == "1") return true;
    if (iequals(value, "false") || value == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

void apply_key(RunConfig& config, const std::string& key, const std::string& value) {
    if (key == "gateway.base_url") {
        config.gateway.base_url = value;
    } else if (key == "gateway.api_key_env") {
        config.gateway.api_key_env = value;
    } else if (key == "gateway.model_story") {
        config.gateway.story.model = value;
    } else if (key == "gateway.model_norm") {
        config.gateway.norm.model = value;
    } else if (key == "gateway.model_context") {
        config.gateway.context.model = value;
    } else if (key == "gateway.model_panas") {
        config.gateway.panas.model = value;
    } else if (key == "gateway.temperature_story") {
        config.gateway.story.temperature = parse_double(key, value);
    } else if (key == "gateway.temperature_norm") {
        config.gateway.norm.temperature = parse_double(key, value);
    } else if (key == "gateway.temperature_context") {
        config.gateway.context.temperature = parse_double(key, value);
    } else if (key == "gateway.temperature_panas") {
        config.gateway.panas.temperature = parse_double(key, value);
    } else if (key == "gateway.max_retries") {
        config.gateway.max_retries = static_cast<int>(parse_int(key, value));
    } else if (key == "gateway.requests_per_minute") {
        config.gateway.requests_per_minute = static_cast<int>(parse_int(key, value));
    } else if (key == "gateway.initial_backoff_ms") {
        config.gateway.initial_backoff_ms = parse_int(key, value);
    } else if (key == "gateway.cassette_path") {
        config.gateway.cassette_path = value;
    } else if (key == "gateway.cassette_mode") {
        auto mode = cassette_mode_from_string(value);
        if (!mode) throw ConfigError(key + ": unknown mode '" + value + "'");
        config.gateway.cassette_mode = *mode;
    } else if (key == "retrieval.mode") {
        if (value == "all_prior") {
            config.retriever_mode = RetrieverMode::AllPrior;
        } else if (value == "weighted") {
            config.retriever_mode = RetrieverMode::Weighted;
        } else {
            throw ConfigError(key + ": expected all_prior or weighted, got '" + value + "'");
        }
    } else if (key == "retrieval.w_recency") {
        config.weights.w_recency = parse_double(key, value);
    } else if (key == "retrieval.w_relevance") {
        config.weights.w_relevance = parse_double(key, value);
    } else if (key == "retrieval.w_saliency") {
        config.weights.w_saliency = parse_double(key, value);
    } else if (key == "retrieval.recency_decay") {
        config.weights.recency_decay = parse_double(key, value);
    } else if (key == "retrieval.k") {
        config.retriever_k = static_cast<int>(parse_int(key, value));
    } else if (key == "run.arms") {
        if (value != "both" && !arm_from_string(value)) {
            throw ConfigError(key + ": expected both, with_norm or without_norm; got '" + value +
                              "'");
        }
        config.arms = value;
    } else if (key == "run.base_seed") {
        const long long seed = parse_int(key, value);
        if (seed < 0) throw ConfigError("run.base_seed must be non-negative");
        config.base_seed = static_cast<std::uint64_t>(seed);
    } else if (key == "run.parallelism") {
        config.parallelism = static_cast<int>(parse_int(key, value));
        if (config.parallelism < 1) throw ConfigError("run.parallelism must be >= 1");
    } else if (key == "run.panas_retry_limit") {
        config.panas_retry_limit = static_cast<int>(parse_int(key, value));
    } else if (key == "run.story_retry_limit") {
        config.story_retry_limit = static_cast<int>(parse_int(key, value));
    } else if (key == "run.output_dir") {
        config.output_dir = value;
    } else if (key == "run.run_id") {
        config.run_id = value;
    } else if (key == "run.verbose") {
        config.verbose = parse_bool(key, value);
    } else {
        throw ConfigError("unknown config key: " + key);
    }
}

}  // namespace

std::vector<Arm> RunConfig::arm_list() const {
    if (arms == "both") return {Arm::WithNorm, Arm::WithoutNorm};
    auto arm = arm_from_string(arms);
    if (!arm) throw ConfigError("invalid arms setting: " + arms);
    return {*arm};
}

StoryRunOptions RunConfig::story_options() const {
    StoryRunOptions options;
    options.retriever.mode = retriever_mode;
    options.retriever.weights = weights;
    options.retriever.k = retriever_k;
    options.panas_retry_limit = panas_retry_limit;
    return options;
}

ojson RunConfig::snapshot() const {
    ojson j;
    j["gateway.base_url"] = gateway.base_url;
    j["gateway.api_key_env"] = gateway.api_key_env;
    j["gateway.model_story"] = gateway.story.model;
    j["gateway.model_norm"] = gateway.norm.model;
    j["gateway.model_context"] = gateway.context.model;
    j["gateway.model_panas"] = gateway.panas.model;
    j["gateway.temperature_story"] = gateway.story.temperature;
    j["gateway.temperature_norm"] = gateway.norm.temperature;
    j["gateway.temperature_context"] = gateway.context.temperature;
    j["gateway.temperature_panas"] = gateway.panas.temperature;
    j["gateway.max_retries"] = gateway.max_retries;
    j["gateway.requests_per_minute"] = gateway.requests_per_minute;
    j["gateway.initial_backoff_ms"] = gateway.initial_backoff_ms;
    j["gateway.cassette_path"] = gateway.cassette_path;
    j["gateway.cassette_mode"] = cassette_mode_name(gateway.cassette_mode);
    j["retrieval.mode"] = retriever_mode == RetrieverMode::AllPrior ? "all_prior" : "weighted";
    j["retrieval.w_recency"] = weights.w_recency;
    j["retrieval.w_relevance"] = weights.w_relevance;
    j["retrieval.w_saliency"] = weights.w_saliency;
    j["retrieval.recency_decay"] = weights.recency_decay;
    j["retrieval.k"] = retriever_k;
    j["run.arms"] = arms;
    j["run.base_seed"] = base_seed;
    j["run.parallelism"] = parallelism;
    j["run.panas_retry_limit"] = panas_retry_limit;
    j["run.story_retry_limit"] = story_retry_limit;
    j["run.output_dir"] = output_dir;
    j["run.run_id"] = run_id;
    j["run.verbose"] = verbose;
    return j;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> values;
    size_t lineno = 0;
    for (const std::string& raw_line : split_lines(text)) {
        ++lineno;
        std::string line = raw_line;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = unquote(trim(line.substr(eq + 1)));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        values[key] = value;
    }
    return values;
}

std::string env_var_for_key(const std::string& key) {
    std::string out = "NORMAGENT_";
    for (char c : key) {
        out.push_back(c == '.' ? '_'
                               : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return out;
}

RunConfig resolve_config(const std::map<std::string, std::string>& flag_overrides,
                         const std::map<std::string, std::string>& file_values,
                         const EnvLookup& env) {
    for (const auto& [key, value] : file_values) {
        if (!known_keys().count(key)) throw ConfigError("unknown config key: " + key);
    }
    RunConfig config;
    // defaults < file < environment < flags
    for (const std::string& key : known_keys()) {
        auto file_it = file_values.find(key);
        if (file_it != file_values.end()) apply_key(config, key, file_it->second);
    }
    for (const std::string& key : known_keys()) {
        if (const char* value = env(env_var_for_key(key).c_str())) {
            apply_key(config, key, value);
        }
    }
    for (const auto& [key, value] : flag_overrides) {
        apply_key(config, key, value);
    }
    return config;
}

RunConfig load_config(const std::map<std::string, std::string>& flag_overrides,
                      const std::optional<std::filesystem::path>& config_path) {
    std::map<std::string, std::string> file_values;
    if (config_path) {
        file_values = parse_config_text(read_text_file(*config_path));
    }
    return resolve_config(flag_overrides, file_values,
                          [](const char* name) { return std::getenv(name); });
}

}  // namespace normagent
