#include "normagent/memory_graph.hpp"

#include "normagent/util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

namespace normagent {

using ojson = nlohmann::ordered_json;

namespace {

std::string memory_node_id(const std::string& run_id, const std::string& story_id,
                           int scene_index) {
    return "mem:" + run_id + ":" + story_id + ":" + std::to_string(scene_index);
}

std::string norm_node_id(const std::string& run_id, const std::string& story_id,
                         int trigger_scene) {
    return "norm:" + run_id + ":" + story_id + ":" + std::to_string(trigger_scene);
}

std::string sanitize_filename(const std::string& name) {
    std::string out;
    out.reserve(name.size());
    for (char c : name) {
        bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
        out.push_back(ok ? c : '_');
    }
    return out;
}

std::string dot_escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string dot_label(const MemoryNode& m) {
    std::string text = m.text.size() > 48 ? m.text.substr(0, 45) + "..." : m.text;
    return "scene " + std::to_string(m.scene_index) + "\\n" + dot_escape(text);
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::set<std::string> sa(a.begin(), a.end());
    std::set<std::string> sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 0.0;
    size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    size_t uni = sa.size() + sb.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

MemoryStore::MemoryStore(std::filesystem::path journal_dir)
    : journal_dir_(std::move(journal_dir)), journaling_(true) {
    std::filesystem::create_directories(journal_dir_);
    load_journals();
}

void MemoryStore::journal_append(const std::string& run_id, const ojson& record) {
    if (!journaling_) return;
    auto path = journal_dir_ / (sanitize_filename(run_id) + ".jsonl");
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out) throw std::runtime_error("cannot append to journal: " + path.string());
    out << record.dump() << '\n';
}

void MemoryStore::load_journals() {
    journaling_ = false;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(journal_dir_)) {
        if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        std::ifstream in(file);
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            apply_record(ojson::parse(line));
        }
    }
    journaling_ = true;
}

void MemoryStore::apply_record(const ojson& record) {
    const std::string kind = record.at("kind").get<std::string>();
    if (kind == "memory") {
        MemoryNode node;
        node.id = record.at("id").get<std::string>();
        node.run_id = record.at("run_id").get<std::string>();
        node.story_id = record.at("story_id").get<std::string>();
        node.scene_index = record.at("scene_index").get<int>();
        node.text = record.at("text").get<std::string>();
        node.created_seq = record.at("created_seq").get<std::uint64_t>();
        insert_memory_locked(std::move(node));
    } else if (kind == "norm") {
        NormNode node;
        node.id = record.at("id").get<std::string>();
        node.run_id = record.at("run_id").get<std::string>();
        node.trigger_memory_id = record.at("trigger_memory_id").get<std::string>();
        node.text = record.at("text").get<std::string>();
        node.used_memory_ids = record.at("used_memory_ids").get<std::vector<std::string>>();
        insert_norm_locked(std::move(node), true);
    } else if (kind == "edge") {
        // Edges are derivable from norm records; journal entries exist for
        // external consumers of the journal format.
    } else if (kind == "reset_story") {
        const std::string run = record.at("run_id").get<std::string>();
        const std::string story = record.at("story_id").get<std::string>();
        auto run_it = scenes_.find(run);
        if (run_it == scenes_.end()) return;
        auto story_it = run_it->second.find(story);
        if (story_it == run_it->second.end()) return;
        for (const auto& [scene, mem_id] : story_it->second) {
            memories_.erase(mem_id);
            used_in_degree_.erase(mem_id);
            auto norm_it = norm_by_trigger_.find(mem_id);
            if (norm_it != norm_by_trigger_.end()) {
                norms_.erase(norm_it->second);
                norm_by_trigger_.erase(norm_it);
            }
        }
        run_it->second.erase(story_it);
    } else {
        throw std::runtime_error("unknown journal record kind: " + kind);
    }
}

void MemoryStore::insert_memory_locked(MemoryNode node) {
    auto& story_scenes = scenes_[node.run_id][node.story_id];
    if (story_scenes.count(node.scene_index)) {
        throw DuplicateScene("memory already stored for " + node.run_id + "/" + node.story_id +
                             " scene " + std::to_string(node.scene_index));
    }
    story_scenes.emplace(node.scene_index, node.id);
    memories_.emplace(node.id, std::move(node));
}

void MemoryStore::insert_norm_locked(NormNode node, bool /*with_edges*/) {
    if (norm_by_trigger_.count(node.trigger_memory_id)) {
        throw DuplicateNorm("norm already exists for trigger " + node.trigger_memory_id);
    }
    for (const auto& used : node.used_memory_ids) {
        ++used_in_degree_[used];
    }
    norm_by_trigger_.emplace(node.trigger_memory_id, node.id);
    norms_.emplace(node.id, std::move(node));
}

MemoryNode MemoryStore::add_memory(const std::string& run_id, const std::string& story_id,
                                   int scene_index, const std::string& text) {
    if (scene_index < 1 || scene_index > 5) {
        throw std::invalid_argument("scene_index must be in [1,5]");
    }
    std::unique_lock lock(mutex_);
    MemoryNode node;
    node.id = memory_node_id(run_id, story_id, scene_index);
    node.run_id = run_id;
    node.story_id = story_id;
    node.scene_index = scene_index;
    node.text = text;
    node.created_seq = scenes_[run_id][story_id].size() + 1;
    insert_memory_locked(node);
    writes_.fetch_add(1);

    ojson record;
    record["kind"] = "memory";
    record["id"] = node.id;
    record["run_id"] = node.run_id;
    record["story_id"] = node.story_id;
    record["scene_index"] = node.scene_index;
    record["text"] = node.text;
    record["created_seq"] = node.created_seq;
    journal_append(run_id, record);
    return node;
}

NormNode MemoryStore::add_norm(const std::string& trigger_memory_id, const std::string& text,
                               const std::vector<std::string>& used_memory_ids) {
    std::unique_lock lock(mutex_);
    auto trigger_it = memories_.find(trigger_memory_id);
    if (trigger_it == memories_.end()) {
        throw UnknownId("unknown trigger memory: " + trigger_memory_id);
    }
    const MemoryNode& trigger = trigger_it->second;
    if (norm_by_trigger_.count(trigger_memory_id)) {
        throw DuplicateNorm("norm already exists for trigger " + trigger_memory_id);
    }
    for (const auto& used_id : used_memory_ids) {
        auto used_it = memories_.find(used_id);
        if (used_it == memories_.end()) throw UnknownId("unknown used memory: " + used_id);
        const MemoryNode& used = used_it->second;
        if (used.run_id != trigger.run_id || used.story_id != trigger.story_id ||
            used.created_seq >= trigger.created_seq) {
            throw CausalityViolation("used memory " + used_id +
                                     " does not precede trigger " + trigger_memory_id);
        }
    }

    NormNode node;
    node.id = norm_node_id(trigger.run_id, trigger.story_id, trigger.scene_index);
    node.run_id = trigger.run_id;
    node.trigger_memory_id = trigger_memory_id;
    node.text = text;
    node.used_memory_ids = used_memory_ids;
    insert_norm_locked(node, true);
    writes_.fetch_add(1);

    ojson record;
    record["kind"] = "norm";
    record["id"] = node.id;
    record["run_id"] = node.run_id;
    record["trigger_memory_id"] = node.trigger_memory_id;
    record["text"] = node.text;
    record["used_memory_ids"] = node.used_memory_ids;
    journal_append(node.run_id, record);
    for (const auto& used_id : used_memory_ids) {
        ojson edge;
        edge["kind"] = "edge";
        edge["type"] = "USED_IN";
        edge["from"] = used_id;
        edge["to"] = node.id;
        edge["run_id"] = node.run_id;
        journal_append(node.run_id, edge);
    }
    ojson edge;
    edge["kind"] = "edge";
    edge["type"] = "TRIGGERED";
    edge["from"] = trigger_memory_id;
    edge["to"] = node.id;
    edge["run_id"] = node.run_id;
    journal_append(node.run_id, edge);
    return node;
}

std::vector<MemoryNode> MemoryStore::retrieve_all_prior(const std::string& run_id,
                                                        const std::string& story_id,
                                                        int before_scene) const {
    std::shared_lock lock(mutex_);
    reads_.fetch_add(1);
    std::vector<MemoryNode> result;
    auto run_it = scenes_.find(run_id);
    if (run_it == scenes_.end()) return result;
    auto story_it = run_it->second.find(story_id);
    if (story_it == run_it->second.end()) return result;
    for (const auto& [scene, mem_id] : story_it->second) {
        if (scene < before_scene) result.push_back(memories_.at(mem_id));
    }
    return result;
}

std::vector<MemoryNode> MemoryStore::retrieve_weighted(const std::string& run_id,
                                                       const std::string& story_id,
                                                       int before_scene,
                                                       const std::string& query_text,
                                                       const RetrievalWeights& weights, int k,
                                                       const SaliencyFn& saliency) const {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (weights.recency_decay <= 0.0 || weights.recency_decay > 1.0) {
        throw std::invalid_argument("recency_decay must be in (0,1]");
    }
    std::vector<MemoryNode> candidates = retrieve_all_prior(run_id, story_id, before_scene);

    const auto query_tokens = tokenize(query_text);
    struct Scored {
        double score;
        MemoryNode node;
    };
    std::vector<Scored> scored;
    scored.reserve(candidates.size());
    for (auto& m : candidates) {
        double recency =
            std::pow(weights.recency_decay, static_cast<double>(before_scene - 1 - m.scene_index));
        double relevance = jaccard(query_tokens, tokenize(m.text));
        double sal = saliency ? std::clamp(saliency(m), 0.0, 1.0) : 0.0;
        double s = weights.w_recency * recency + weights.w_relevance * relevance +
                   weights.w_saliency * sal;
        scored.push_back({s, std::move(m)});
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.node.scene_index != b.node.scene_index) {
            return a.node.scene_index > b.node.scene_index;
        }
        return a.node.id < b.node.id;
    });
    if (scored.size() > static_cast<size_t>(k)) scored.resize(static_cast<size_t>(k));

    std::vector<MemoryNode> result;
    result.reserve(scored.size());
    for (auto& s : scored) result.push_back(std::move(s.node));
    return result;
}

int MemoryStore::influence(const std::string& memory_id) const {
    std::shared_lock lock(mutex_);
    reads_.fetch_add(1);
    if (!memories_.count(memory_id)) throw UnknownId("unknown memory: " + memory_id);
    auto it = used_in_degree_.find(memory_id);
    return it == used_in_degree_.end() ? 0 : it->second;
}

std::optional<MemoryNode> MemoryStore::find_memory(const std::string& memory_id) const {
    std::shared_lock lock(mutex_);
    reads_.fetch_add(1);
    auto it = memories_.find(memory_id);
    if (it == memories_.end()) return std::nullopt;
    return it->second;
}

void MemoryStore::reset_story(const std::string& run_id, const std::string& story_id) {
    std::unique_lock lock(mutex_);
    ojson record;
    record["kind"] = "reset_story";
    record["run_id"] = run_id;
    record["story_id"] = story_id;
    journal_append(run_id, record);

    auto run_it = scenes_.find(run_id);
    if (run_it == scenes_.end()) return;
    auto story_it = run_it->second.find(story_id);
    if (story_it == run_it->second.end()) return;
    for (const auto& [scene, mem_id] : story_it->second) {
        memories_.erase(mem_id);
        used_in_degree_.erase(mem_id);
        auto norm_it = norm_by_trigger_.find(mem_id);
        if (norm_it != norm_by_trigger_.end()) {
            norms_.erase(norm_it->second);
            norm_by_trigger_.erase(norm_it);
        }
    }
    run_it->second.erase(story_it);
    writes_.fetch_add(1);
}

namespace {

struct RunView {
    std::vector<const MemoryNode*> memories;  // by (story, scene)
    std::vector<const NormNode*> norms;       // by id
};

}  // namespace

std::string MemoryStore::export_graph(const std::string& run_id, GraphFormat format) const {
    std::shared_lock lock(mutex_);
    reads_.fetch_add(1);

    RunView view;
    for (const auto& [id, m] : memories_) {
        if (m.run_id == run_id) view.memories.push_back(&m);
    }
    std::sort(view.memories.begin(), view.memories.end(),
              [](const MemoryNode* a, const MemoryNode* b) {
                  if (a->story_id != b->story_id) return a->story_id < b->story_id;
                  return a->scene_index < b->scene_index;
              });
    for (const auto& [id, n] : norms_) {
        if (n.run_id == run_id) view.norms.push_back(&n);
    }
    std::sort(view.norms.begin(), view.norms.end(),
              [](const NormNode* a, const NormNode* b) { return a->id < b->id; });

    if (format == GraphFormat::Dot) {
        std::ostringstream out;
        out << "digraph \"" << dot_escape(run_id) << "\" {\n";
        out << "  rankdir=LR;\n";
        for (const MemoryNode* m : view.memories) {
            out << "  \"" << dot_escape(m->id) << "\" [shape=box, label=\"" << dot_label(*m)
                << "\"];\n";
        }
        for (const NormNode* n : view.norms) {
            std::string text = n->text.size() > 48 ? n->text.substr(0, 45) + "..." : n->text;
            out << "  \"" << dot_escape(n->id) << "\" [shape=ellipse, label=\""
                << dot_escape(text) << "\"];\n";
        }
        for (const NormNode* n : view.norms) {
            for (const auto& used : n->used_memory_ids) {
                out << "  \"" << dot_escape(used) << "\" -> \"" << dot_escape(n->id)
                    << "\" [label=\"USED_IN\"];\n";
            }
            out << "  \"" << dot_escape(n->trigger_memory_id) << "\" -> \""
                << dot_escape(n->id) << "\" [label=\"TRIGGERED\", style=dashed];\n";
        }
        out << "}\n";
        return out.str();
    }

    ojson j;
    j["run_id"] = run_id;
    auto& nodes = j["nodes"] = ojson::array();
    for (const MemoryNode* m : view.memories) {
        ojson node;
        node["kind"] = "memory";
        node["id"] = m->id;
        node["run_id"] = m->run_id;
        node["story_id"] = m->story_id;
        node["scene_index"] = m->scene_index;
        node["text"] = m->text;
        node["created_seq"] = m->created_seq;
        nodes.push_back(std::move(node));
    }
    for (const NormNode* n : view.norms) {
        ojson node;
        node["kind"] = "norm";
        node["id"] = n->id;
        node["run_id"] = n->run_id;
        node["trigger_memory_id"] = n->trigger_memory_id;
        node["text"] = n->text;
        node["used_memory_ids"] = n->used_memory_ids;
        nodes.push_back(std::move(node));
    }
    auto& edges = j["edges"] = ojson::array();
    for (const NormNode* n : view.norms) {
        for (const auto& used : n->used_memory_ids) {
            ojson edge;
            edge["type"] = "USED_IN";
            edge["from"] = used;
            edge["to"] = n->id;
            edges.push_back(std::move(edge));
        }
        ojson edge;
        edge["type"] = "TRIGGERED";
        edge["from"] = n->trigger_memory_id;
        edge["to"] = n->id;
        edges.push_back(std::move(edge));
    }
    return j.dump(2) + "\n";
}

void MemoryStore::import_graph_json(const std::string& text) {
    ojson j = ojson::parse(text);
    std::unique_lock lock(mutex_);
    for (const auto& node : j.at("nodes")) {
        const std::string kind = node.at("kind").get<std::string>();
        ojson record = node;
        record.erase("kind");
        ojson journal_record;
        journal_record["kind"] = kind;
        for (auto& [key, value] : record.items()) journal_record[key] = value;
        if (kind == "memory") {
            MemoryNode m;
            m.id = node.at("id").get<std::string>();
            m.run_id = node.at("run_id").get<std::string>();
            m.story_id = node.at("story_id").get<std::string>();
            m.scene_index = node.at("scene_index").get<int>();
            m.text = node.at("text").get<std::string>();
            m.created_seq = node.at("created_seq").get<std::uint64_t>();
            insert_memory_locked(m);
            journal_append(m.run_id, journal_record);
        } else if (kind == "norm") {
            NormNode n;
            n.id = node.at("id").get<std::string>();
            n.run_id = node.at("run_id").get<std::string>();
            n.trigger_memory_id = node.at("trigger_memory_id").get<std::string>();
            n.text = node.at("text").get<std::string>();
            n.used_memory_ids = node.at("used_memory_ids").get<std::vector<std::string>>();
            insert_norm_locked(n, true);
            journal_append(n.run_id, journal_record);
        } else {
            throw std::runtime_error("unknown node kind in graph import: " + kind);
        }
    }
    writes_.fetch_add(1);
}

GraphCounts MemoryStore::counts(const std::string& run_id) const {
    std::shared_lock lock(mutex_);
    reads_.fetch_add(1);
    GraphCounts c;
    for (const auto& [id, m] : memories_) {
        if (m.run_id == run_id) ++c.memories;
    }
    for (const auto& [id, n] : norms_) {
        if (n.run_id != run_id) continue;
        ++c.norms;
        ++c.triggered_edges;
        c.used_in_edges += n.used_memory_ids.size();
    }
    return c;
}

}  // namespace normagent
