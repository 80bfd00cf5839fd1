#pragma once

#include "normagent/gateway.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace normagent {

using ojson = nlohmann::ordered_json;

enum class Category {
    Anger,
    Anxiety,
    Depression,
    Frustration,
    Jealousy,
    Guilt,
    Fear,
    Embarrassment,
};

inline constexpr int kCategoryCount = 8;

std::string_view category_name(Category category);
std::optional<Category> category_from_string(std::string_view name);

/// One benchmark situation: an emotionally charged scenario with its factor
/// and category identity.
struct Situation {
    Category category = Category::Anger;
    std::string factor_id;     // e.g. "Anger-2"
    std::string situation_id;  // e.g. "Anger-2-3"
    std::string text;
    std::string emotion_label;
};

/// A situation expanded into a neutral first-person 5-scene story, with the
/// stage-1 outline retained for provenance.
struct StoryRecord {
    std::string situation_id;
    Category category = Category::Anger;
    std::string situation_text;
    std::string emotion_label;
    std::vector<std::string> scenes;          // exactly 5, non-empty
    std::vector<std::string> stage1_outline;  // 5 parts
    struct Fingerprints {
        std::string stage1;
        std::string stage2;
    } generator_fingerprints;
};

struct FormatError : std::runtime_error {
    FormatError(size_t line, const std::string& message);
    size_t line;
};
struct DuplicateId : std::runtime_error {
    explicit DuplicateId(const std::string& id);
    std::string id;
};
struct UnknownCategory : std::runtime_error {
    explicit UnknownCategory(const std::string& value);
    std::string value;
};
struct StoryParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct GenerationFailed : std::runtime_error {
    GenerationFailed(int stage, int attempts, const std::string& last_error);
    int stage;
    int attempts;
};

/// Reads situations from CSV (header: category, factor_id, situation_id,
/// situation, emotion — any column order) or a JSON array of objects with the
/// same fields. Validates category membership and id uniqueness.
std::vector<Situation> ingest_situations(const std::filesystem::path& path);

std::string render_stage1_prompt(const Situation& situation);
std::string render_stage2_prompt(const std::vector<std::string>& outline,
                                 std::string_view emotion_label);

/// Parses a model reply into 5 scene texts. Accepts a JSON object with keys
/// "1".."5" (quoted or bare integer keys), optionally wrapped in markdown
/// code fences.
std::vector<std::string> parse_story_json(const std::string& raw);

StoryRecord generate_story(Gateway& gateway, const Situation& situation, int retry_limit);

ojson story_record_to_json(const StoryRecord& record);
StoryRecord story_record_from_json(const ojson& j);

void write_story_dataset(const std::filesystem::path& path,
                         const std::vector<StoryRecord>& records);
std::vector<StoryRecord> read_story_dataset(const std::filesystem::path& path);

struct GenerationFailure {
    std::string situation_id;
    std::string error;
};

struct GenerationReport {
    int attempted = 0;
    std::vector<StoryRecord> records;   // dataset order
    std::vector<GenerationFailure> failures;
};

/// Expands situations concurrently (bounded by `parallelism`); records stay in
/// input order and failures are collected, never silently dropped.
GenerationReport generate_dataset(Gateway& gateway, const std::vector<Situation>& situations,
                                  int retry_limit, int parallelism);

/// Sidecar path for a dataset's failure list: `<dataset>.failures.json`.
std::filesystem::path failures_sidecar_path(const std::filesystem::path& dataset_path);
void write_failures_sidecar(const std::filesystem::path& dataset_path,
                            const std::vector<GenerationFailure>& failures);

/// Scenes are trusted to be neutral, not machine-validated; this exposes a
/// lexicon-based warning list for scenes containing overtly emotional words.
std::vector<std::string> emotional_word_warnings(const StoryRecord& record);

}  // namespace normagent
