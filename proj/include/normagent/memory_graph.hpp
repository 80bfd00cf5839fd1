#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace normagent {

struct MemoryNode {
    std::string id;
    std::string run_id;
    std::string story_id;
    int scene_index = 0;
    std::string text;
    // Insertion order within one (run_id, story_id); starts at 1.
    std::uint64_t created_seq = 0;
};

struct NormNode {
    std::string id;
    std::string run_id;
    std::string trigger_memory_id;
    std::string text;
    std::vector<std::string> used_memory_ids;
};

struct RetrievalWeights {
    double w_recency = 1.0;
    double w_relevance = 1.0;
    double w_saliency = 0.0;
    double recency_decay = 0.9;  // in (0,1]
};

struct DuplicateScene : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DuplicateNorm : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CausalityViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnknownId : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Optional importance rating in [0,1]; absent provider means saliency 0.
using SaliencyFn = std::function<double(const MemoryNode&)>;

enum class GraphFormat { Dot, Json };

struct GraphCounts {
    std::size_t memories = 0;
    std::size_t norms = 0;
    std::size_t used_in_edges = 0;
    std::size_t triggered_edges = 0;
};

/// Typed graph of memories and norms with usage edges.
///
/// Persistence is an append-only JSON Lines journal per run partition,
/// replayed into memory on open; there is no external database. Operations on
/// distinct (run_id, story_id) pairs may run concurrently; steps within one
/// story are sequential by the pipeline's contract.
class MemoryStore {
public:
    MemoryStore() = default;
    explicit MemoryStore(std::filesystem::path journal_dir);

    MemoryNode add_memory(const std::string& run_id, const std::string& story_id,
                          int scene_index, const std::string& text);

    NormNode add_norm(const std::string& trigger_memory_id, const std::string& text,
                      const std::vector<std::string>& used_memory_ids);

    /// All memories of the story before `before_scene`, ascending by scene.
    /// The default retriever for every experiment in scope.
    std::vector<MemoryNode> retrieve_all_prior(const std::string& run_id,
                                               const std::string& story_id,
                                               int before_scene) const;

    /// Top-k by w_recency*decay^Δ + w_relevance*jaccard + w_saliency*saliency,
    /// each term in [0,1]; ties broken by higher scene_index, then id.
    std::vector<MemoryNode> retrieve_weighted(const std::string& run_id,
                                              const std::string& story_id, int before_scene,
                                              const std::string& query_text,
                                              const RetrievalWeights& weights, int k,
                                              const SaliencyFn& saliency = {}) const;

    /// Out-degree of USED_IN edges from the memory: how many norms it fed.
    int influence(const std::string& memory_id) const;

    std::optional<MemoryNode> find_memory(const std::string& memory_id) const;

    /// Drops all nodes and edges of one (run, story); journaled, so a resumed
    /// run that re-executes a story starts clean.
    void reset_story(const std::string& run_id, const std::string& story_id);

    std::string export_graph(const std::string& run_id, GraphFormat format) const;
    /// Merges a JSON export back into this store.
    void import_graph_json(const std::string& text);

    GraphCounts counts(const std::string& run_id) const;

    std::uint64_t read_count() const { return reads_.load(); }
    std::uint64_t write_count() const { return writes_.load(); }

private:
    void journal_append(const std::string& run_id, const nlohmann::ordered_json& record);
    void load_journals();
    void apply_record(const nlohmann::ordered_json& record);
    void insert_memory_locked(MemoryNode node);
    void insert_norm_locked(NormNode node, bool with_edges);

    std::filesystem::path journal_dir_;
    bool journaling_ = false;

    mutable std::shared_mutex mutex_;
    // run_id -> story_id -> scene_index -> memory id
    std::map<std::string, std::map<std::string, std::map<int, std::string>>> scenes_;
    std::unordered_map<std::string, MemoryNode> memories_;
    std::unordered_map<std::string, NormNode> norms_;
    std::unordered_map<std::string, std::string> norm_by_trigger_;  // trigger memory -> norm id
    std::unordered_map<std::string, int> used_in_degree_;

    mutable std::atomic<std::uint64_t> reads_{0};
    std::atomic<std::uint64_t> writes_{0};
};

}  // namespace normagent
