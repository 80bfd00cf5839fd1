#pragma once

#include "normagent/gateway.hpp"
#include "normagent/memory_graph.hpp"
#include "normagent/panas.hpp"
#include "normagent/storygen.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace normagent {

/// Experimental condition: the full norm architecture, or the PANAS on the
/// raw scene alone.
enum class Arm { WithNorm, WithoutNorm };

const char* arm_token(Arm arm);  // "with_norm" / "without_norm"
std::optional<Arm> arm_from_string(std::string_view name);  // also accepts "with-norm" etc.

struct PanasFailure {
    std::string error;
    int attempts = 0;
};

struct StepResult {
    int scene_index = 0;
    std::string experience_text;
    std::optional<std::string> norm_text;     // absent without priors / without norm arm
    std::optional<std::string> context_text;
    std::optional<PanasReport> panas;
    std::optional<PanasFailure> panas_failure;
    std::string memory_id;
};

/// Per-scene PANAS results for one story under one arm. `failure` marks a
/// story aborted by a gateway hard failure; its steps are then partial.
struct Trajectory {
    std::string run_id;
    std::string story_id;
    Arm arm = Arm::WithNorm;
    std::uint64_t base_seed = 0;
    std::vector<StepResult> steps;
    std::optional<std::string> failure;

    bool complete() const { return !failure && steps.size() == 5; }
    std::uint64_t step_seed(int scene_index) const {
        return base_seed + static_cast<std::uint64_t>(scene_index);
    }
};

/// The norm prompt. Memory texts are listed one per "Memory i:" line in the
/// order given; continuation lines of multi-line memories are indented four
/// spaces so the START/END markers stay unambiguous at column zero.
std::string render_norm_prompt(const std::vector<MemoryNode>& memories);

/// Inverse of the norm-prompt memory block: recovers the memory texts between
/// the markers. Used to audit prompts and to test the escaping round-trip.
std::vector<std::string> split_norm_prompt_memories(const std::string& prompt);

struct NormText {
    std::string text;        // verbatim model response
    bool insightless = false;  // response was "No insights"
};

NormText generate_norm(Gateway& gateway, const std::vector<MemoryNode>& memories);

std::string render_context_prompt(std::string_view norm_text, std::string_view experience_text);

enum class RetrieverMode { AllPrior, Weighted };

struct RetrieverConfig {
    RetrieverMode mode = RetrieverMode::AllPrior;
    RetrievalWeights weights;
    int k = 50;
    SaliencyFn saliency;
};

/// Gateway-backed saliency provider: asks for a 1-10 importance rating and
/// maps it to [0,1]. Unparseable replies rate 0.
SaliencyFn make_llm_saliency_provider(Gateway& gateway);

struct StoryRunOptions {
    RetrieverConfig retriever;
    int panas_retry_limit = 3;
};

/// One story under one arm: perceives scenes in order, owning the story's
/// graph handles. The store partition is keyed by run and arm so both arms of
/// a story can run against the same store.
class StoryAgent {
public:
    StoryAgent(Gateway& gateway, MemoryStore& store, std::string run_id, std::string story_id,
               Arm arm, StoryRunOptions options);

    /// One perception step: fetch memories, create the norm, derive the
    /// contextual understanding, administer the PANAS, store the memory.
    /// A failed administration is recorded in the step and the memory is
    /// still stored; gateway hard failures propagate.
    StepResult perceive(const std::string& experience_text, std::uint64_t seed);

    int scenes_perceived() const { return scene_index_; }
    const std::string& store_run_id() const { return store_run_id_; }

private:
    Gateway& gateway_;
    MemoryStore& store_;
    std::string run_id_;
    std::string story_id_;
    std::string store_run_id_;
    Arm arm_;
    StoryRunOptions options_;
    int scene_index_ = 0;
};

std::string store_run_id(const std::string& run_id, Arm arm);

/// Runs all five scenes with per-step seed = base_seed + scene_index. On a
/// gateway hard failure the story aborts (not the batch) and the partial
/// trajectory carries a failure marker.
Trajectory run_story(Gateway& gateway, MemoryStore& store, const StoryRecord& story,
                     Arm arm, std::uint64_t base_seed, const std::string& run_id,
                     const StoryRunOptions& options);

ojson trajectory_to_json(const Trajectory& trajectory);
Trajectory trajectory_from_json(const ojson& j);

void write_trajectory(const std::filesystem::path& path, const Trajectory& trajectory);
Trajectory read_trajectory(const std::filesystem::path& path);

}  // namespace normagent
