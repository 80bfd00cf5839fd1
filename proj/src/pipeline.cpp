#include "normagent/pipeline.hpp"

#include "normagent/util.hpp"

#include <algorithm>

namespace normagent {

namespace {

constexpr std::string_view kNormPromptHead =
    "The following are a list of past memories:\nSTART MEMORIES\n";
constexpr std::string_view kNormPromptTail =
    "\nEND MEMORIES\n"
    "What high-level insights can you infer given the memories?\n"
    "If there are no memories to extract insights from return `No insights'.\n"
    "Example:\n"
    "A boy is watching a movie with his friends.\n"
    "A boy is surrounded by his friends. He is happy.\n"
    "Insight: The boy often hangs out with his friends.";

constexpr std::string_view kContinuationIndent = "    ";

constexpr std::string_view kSaliencyPrompt =
    "On a scale of 1 to 10, where 1 is entirely mundane and 10 is extremely significant, rate "
    "the importance of the following memory. Reply with a single number.\nMemory: ";

}  // namespace

const char* arm_token(Arm arm) {
    return arm == Arm::WithNorm ? "with_norm" : "without_norm";
}

std::optional<Arm> arm_from_string(std::string_view name) {
    if (name == "with_norm" || name == "with-norm") return Arm::WithNorm;
    if (name == "without_norm" || name == "without-norm") return Arm::WithoutNorm;
    return std::nullopt;
}

std::string render_norm_prompt(const std::vector<MemoryNode>& memories) {
    if (memories.empty()) throw std::invalid_argument("norm prompt requires memories");
    std::string block;
    for (size_t i = 0; i < memories.size(); ++i) {
        if (i > 0) block += '\n';
        block += "Memory " + std::to_string(i + 1) + ": ";
        const auto lines = split_lines(memories[i].text);
        for (size_t l = 0; l < lines.size(); ++l) {
            if (l > 0) {
                block += '\n';
                block += kContinuationIndent;
            }
            block += lines[l];
        }
    }
    std::string prompt(kNormPromptHead);
    prompt += block;
    prompt += kNormPromptTail;
    return prompt;
}

std::vector<std::string> split_norm_prompt_memories(const std::string& prompt) {
    const auto start = prompt.find("START MEMORIES\n");
    if (start == std::string::npos) throw std::invalid_argument("missing START MEMORIES marker");
    const size_t block_start = start + std::string_view("START MEMORIES\n").size();
    // Content lines are indented, so "\nEND MEMORIES" only matches the real
    // marker at column zero.
    const size_t block_end = prompt.find("\nEND MEMORIES", block_start);
    if (block_end == std::string::npos) throw std::invalid_argument("missing END MEMORIES marker");

    const std::string block = prompt.substr(block_start, block_end - block_start);
    std::vector<std::string> memories;
    std::string current;
    bool have_current = false;
    auto flush = [&] {
        if (have_current) memories.push_back(current);
        current.clear();
    };
    for (const std::string& line : split_lines(block)) {
        if (line.rfind("Memory ", 0) == 0) {
            auto colon = line.find(": ");
            if (colon != std::string::npos) {
                flush();
                have_current = true;
                current = line.substr(colon + 2);
                continue;
            }
        }
        if (have_current) {
            current += '\n';
            std::string_view content = line;
            if (content.rfind(kContinuationIndent, 0) == 0) {
                content.remove_prefix(kContinuationIndent.size());
            }
            current += content;
        }
    }
    flush();
    return memories;
}

NormText generate_norm(Gateway& gateway, const std::vector<MemoryNode>& memories) {
    if (memories.empty()) throw std::invalid_argument("generate_norm requires memories");
    const StageSettings& settings = gateway.config().stage(Stage::Norm);
    ChatRequest request;
    request.model = settings.model;
    request.temperature = settings.temperature;
    request.tag = "norm";
    request.messages = {{Role::User, render_norm_prompt(memories)}};
    ChatResponse response = gateway.complete(request);

    NormText norm;
    norm.text = response.content;
    norm.insightless = iequals(trim(response.content), "No insights");
    return norm;
}

std::string render_context_prompt(std::string_view norm_text, std::string_view experience_text) {
    if (norm_text.empty() || experience_text.empty()) {
        throw std::invalid_argument("context prompt requires norm and experience text");
    }
    std::string prompt = "Below is the background context of your memories:\n";
    prompt += norm_text;
    prompt += "\nThe following is the description of the most recent memory:\n";
    prompt += experience_text;
    prompt += "\nGiven the background context of the memories, how can we interpret the new "
              "situation?";
    return prompt;
}

SaliencyFn make_llm_saliency_provider(Gateway& gateway) {
    return [&gateway](const MemoryNode& memory) -> double {
        const StageSettings& settings = gateway.config().stage(Stage::Norm);
        ChatRequest request;
        request.model = settings.model;
        request.temperature = settings.temperature;
        request.tag = "saliency";
        request.messages = {{Role::User, std::string(kSaliencyPrompt) + memory.text}};
        ChatResponse response = gateway.complete(request);
        const std::string reply = trim(response.content);
        try {
            const long rating = std::stol(reply);
            if (rating < 1 || rating > 10) return 0.0;
            return static_cast<double>(rating - 1) / 9.0;
        } catch (const std::exception&) {
            return 0.0;
        }
    };
}

std::string store_run_id(const std::string& run_id, Arm arm) {
    return run_id + "." + arm_token(arm);
}

StoryAgent::StoryAgent(Gateway& gateway, MemoryStore& store, std::string run_id,
                       std::string story_id, Arm arm, StoryRunOptions options)
    : gateway_(gateway),
      store_(store),
      run_id_(std::move(run_id)),
      story_id_(std::move(story_id)),
      store_run_id_(normagent::store_run_id(run_id_, arm)),
      arm_(arm),
      options_(std::move(options)) {}

StepResult StoryAgent::perceive(const std::string& experience_text, std::uint64_t seed) {
    const int scene = ++scene_index_;
    StepResult step;
    step.scene_index = scene;
    step.experience_text = experience_text;

    std::vector<MemoryNode> priors;
    if (arm_ == Arm::WithNorm) {
        if (options_.retriever.mode == RetrieverMode::AllPrior) {
            priors = store_.retrieve_all_prior(store_run_id_, story_id_, scene);
        } else {
            priors = store_.retrieve_weighted(store_run_id_, story_id_, scene, experience_text,
                                              options_.retriever.weights, options_.retriever.k,
                                              options_.retriever.saliency);
        }
    }

    std::string scenario = experience_text;
    if (!priors.empty()) {
        // The norm prompt lists memories chronologically even when a weighted
        // retriever returns them score-ordered.
        std::vector<MemoryNode> chronological = priors;
        std::sort(chronological.begin(), chronological.end(),
                  [](const MemoryNode& a, const MemoryNode& b) {
                      return a.created_seq < b.created_seq;
                  });
        NormText norm = generate_norm(gateway_, chronological);
        step.norm_text = norm.text;

        const StageSettings& settings = gateway_.config().stage(Stage::Context);
        ChatRequest request;
        request.model = settings.model;
        request.temperature = settings.temperature;
        request.tag = "context";
        request.messages = {{Role::User, render_context_prompt(norm.text, experience_text)}};
        step.context_text = gateway_.complete(request).content;
        scenario = *step.context_text;
    }

    try {
        step.panas = administer(gateway_, scenario, seed, options_.panas_retry_limit);
    } catch (const AdministrationFailed& e) {
        step.panas_failure = PanasFailure{e.what(), e.attempts};
    }

    // Perception happened even if measurement failed: store the memory, then
    // attach the norm with usage edges back to the retrieved memories.
    MemoryNode memory = store_.add_memory(store_run_id_, story_id_, scene, experience_text);
    step.memory_id = memory.id;
    if (step.norm_text) {
        std::vector<std::string> used_ids;
        used_ids.reserve(priors.size());
        for (const auto& m : priors) used_ids.push_back(m.id);
        store_.add_norm(memory.id, *step.norm_text, used_ids);
    }
    return step;
}

Trajectory run_story(Gateway& gateway, MemoryStore& store, const StoryRecord& story, Arm arm,
                     std::uint64_t base_seed, const std::string& run_id,
                     const StoryRunOptions& options) {
    if (story.scenes.size() != 5) {
        throw std::invalid_argument("story " + story.situation_id +
                                    " must have exactly 5 scenes");
    }
    Trajectory trajectory;
    trajectory.run_id = run_id;
    trajectory.story_id = story.situation_id;
    trajectory.arm = arm;
    trajectory.base_seed = base_seed;

    StoryAgent agent(gateway, store, run_id, story.situation_id, arm, options);
    for (int i = 0; i < 5; ++i) {
        try {
            trajectory.steps.push_back(
                agent.perceive(story.scenes[static_cast<size_t>(i)], trajectory.step_seed(i + 1)));
        } catch (const GatewayError& e) {
            trajectory.failure = e.what();
            break;
        }
    }
    return trajectory;
}

ojson trajectory_to_json(const Trajectory& trajectory) {
    ojson j;
    j["run_id"] = trajectory.run_id;
    j["story_id"] = trajectory.story_id;
    j["arm"] = arm_token(trajectory.arm);
    j["base_seed"] = trajectory.base_seed;
    auto& steps = j["steps"] = ojson::array();
    for (const auto& step : trajectory.steps) {
        ojson s;
        s["scene_index"] = step.scene_index;
        s["experience_text"] = step.experience_text;
        s["norm_text"] = step.norm_text ? ojson(*step.norm_text) : ojson(nullptr);
        s["context_text"] = step.context_text ? ojson(*step.context_text) : ojson(nullptr);
        if (step.panas) {
            s["panas"] = panas_report_to_json(*step.panas);
        } else if (step.panas_failure) {
            ojson failure;
            failure["failed"] = true;
            failure["error"] = step.panas_failure->error;
            failure["attempts"] = step.panas_failure->attempts;
            s["panas"] = std::move(failure);
        } else {
            s["panas"] = nullptr;
        }
        s["memory_id"] = step.memory_id;
        steps.push_back(std::move(s));
    }
    if (trajectory.failure) j["failure"] = *trajectory.failure;
    return j;
}

Trajectory trajectory_from_json(const ojson& j) {
    Trajectory trajectory;
    trajectory.run_id = j.at("run_id").get<std::string>();
    trajectory.story_id = j.at("story_id").get<std::string>();
    auto arm = arm_from_string(j.at("arm").get<std::string>());
    if (!arm) throw std::runtime_error("unknown arm: " + j.at("arm").get<std::string>());
    trajectory.arm = *arm;
    trajectory.base_seed = j.at("base_seed").get<std::uint64_t>();
    for (const auto& s : j.at("steps")) {
        StepResult step;
        step.scene_index = s.at("scene_index").get<int>();
        step.experience_text = s.at("experience_text").get<std::string>();
        if (!s.at("norm_text").is_null()) step.norm_text = s.at("norm_text").get<std::string>();
        if (!s.at("context_text").is_null()) {
            step.context_text = s.at("context_text").get<std::string>();
        }
        const auto& panas = s.at("panas");
        if (!panas.is_null()) {
            if (panas.is_object() && panas.value("failed", false)) {
                step.panas_failure = PanasFailure{panas.value("error", ""),
                                                  panas.value("attempts", 0)};
            } else {
                step.panas = panas_report_from_json(panas);
            }
        }
        step.memory_id = s.at("memory_id").get<std::string>();
        trajectory.steps.push_back(std::move(step));
    }
    if (j.contains("failure")) trajectory.failure = j.at("failure").get<std::string>();
    return trajectory;
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& trajectory) {
    write_text_file_atomic(path, trajectory_to_json(trajectory).dump(2) + "\n");
}

Trajectory read_trajectory(const std::filesystem::path& path) {
    return trajectory_from_json(ojson::parse(read_text_file(path)));
}

}  // namespace normagent
