#pragma once

#include "normagent/pipeline.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace normagent {

/// Resting affect of the model: the PANAS administered with no scenario.
struct BaselineStats {
    int n = 0;         // successful administrations
    int attempted = 0;
    double pa_mean = 0.0;
    double pa_std = 0.0;
    double na_mean = 0.0;
    double na_std = 0.0;
    bool degenerate_std = false;  // n < 2, std reported as 0
    std::string std_convention = "sample";  // n-1 denominator
    std::vector<PanasReport> reports;
    std::vector<std::string> failures;  // failed administrations, by seed
};

BaselineStats run_default_baseline(Gateway& gateway, int n, std::uint64_t base_seed,
                                   int retry_limit = 3);

ojson baseline_to_json(const BaselineStats& stats);
BaselineStats baseline_from_json(const ojson& j);

struct EmptyTrajectory : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StoryMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Minimum positive affect and maximum negative affect over the scenes with a
/// successful PANAS; failed scenes are excluded, never imputed.
struct StoryExtremes {
    std::string story_id;
    Arm arm = Arm::WithNorm;
    int min_pa = 0;
    int max_na = 0;
    int scenes_counted = 0;
};

StoryExtremes summarize_story(const Trajectory& trajectory);

inline constexpr double kDefaultArrowThreshold = 1.0;

/// "↓" if delta <= -threshold, "↑" if delta >= +threshold, "−" otherwise;
/// boundary values map to arrows.
std::string arrow_for(double delta, double threshold = kDefaultArrowThreshold);

struct CategorySummary {
    std::string category;  // category name, or "Overall"
    Arm arm = Arm::WithNorm;
    double mean_min_pa = 0.0;
    double mean_max_na = 0.0;
    double delta_pa = 0.0;  // vs baseline pa_mean
    double delta_na = 0.0;  // vs baseline na_mean
    std::string arrow_pa;
    std::string arrow_na;
    int n_stories = 0;
};

struct CategorizedExtremes {
    Category category = Category::Anger;
    StoryExtremes extremes;
};

/// Per-(category, arm) means of the story extremes, deltas against the
/// baseline, and arrow labels, plus an Overall row pooling all stories.
std::vector<CategorySummary> aggregate(const std::vector<CategorizedExtremes>& extremes,
                                       const BaselineStats& baseline,
                                       double arrow_threshold = kDefaultArrowThreshold);

std::string summary_csv(const std::vector<CategorySummary>& rows);
std::string summary_table(const std::vector<CategorySummary>& rows,
                          const BaselineStats& baseline);

/// Per-story plot data: scene,pa_with,na_with,pa_without,na_without with one
/// row per scene; failed steps leave their cells empty.
std::string plot_data_csv(const Trajectory& with_norm, const Trajectory& without_norm);
void emit_plot_data(const Trajectory& with_norm, const Trajectory& without_norm,
                    const std::filesystem::path& path);

struct RunOptions {
    std::string run_id = "run";
    std::vector<Arm> arms{Arm::WithNorm, Arm::WithoutNorm};
    std::uint64_t base_seed = 1;
    int parallelism = 1;
    std::filesystem::path out_dir;
    StoryRunOptions story;
};

struct ManifestEntry {
    std::string story_id;
    Arm arm = Arm::WithNorm;
    std::string artifact;  // path relative to the run directory
    std::uint64_t base_seed = 0;
    std::string status;    // "success" | "failed"
    bool cached = false;   // satisfied by an existing artifact (resume)
    std::string error;
};

struct RunManifest {
    std::string run_id;
    ojson config_snapshot;
    std::vector<ManifestEntry> entries;
    std::size_t cassette_entries = 0;
    std::size_t fingerprints_used = 0;
    std::string cassette_mode;
    std::string cassette_path;

    bool all_succeeded() const;
};

ojson manifest_to_json(const RunManifest& manifest);

/// Batch-runs every (story, arm) pair with bounded parallelism. Story base
/// seeds derive from the dataset order so reruns are reproducible; completed
/// artifacts are skipped (idempotent resume) and every pair appears in the
/// manifest exactly once as success or failure.
RunManifest run_dataset(Gateway& gateway, MemoryStore& store,
                        const std::vector<StoryRecord>& stories, const RunOptions& options);

}  // namespace normagent
