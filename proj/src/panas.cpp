#include "normagent/panas.hpp"

#include "normagent/util.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <random>

namespace normagent {

namespace {

constexpr std::array<std::string_view, kEmotionCount> kEmotionNames = {
    "Attentive", "Hostile",    "Active",     "Irritable",  "Alert",
    "Ashamed",   "Excited",    "Guilty",     "Enthusiastic", "Distressed",
    "Determined", "Upset",     "Inspired",   "Scared",     "Proud",
    "Afraid",    "Interested", "Jittery",    "Strong",     "Nervous",
};

// Canonical-index positions of the positive-affect items.
constexpr bool kPositive[kEmotionCount] = {
    true,  false, true,  false, true,  false, true,  false, true,  false,
    true,  false, true,  false, true,  false, true,  false, true,  false,
};

constexpr std::string_view kPromptHeader = "You can only reply the numbers from 1 to 5.\n";
constexpr std::string_view kPromptScale =
    "Please indicate the extent of your feeling in all the following emotions on a scale of 1 "
    "to 5.\n"
    "1 denotes \"very slightly or not at all\", 2 denotes \"a little\", 3 denotes "
    "\"moderately\", 4 denotes \"quite a bit\", and 5 denotes \"extremely\".\n"
    "Please score all emotions one by one using the scale from 1 to 5:\n";
constexpr std::string_view kPromptFooter =
    "\nGenerally, your score should not be all ones. Your answer should be realistic and "
    "reasonable.";

std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % bound;
    std::uint64_t value;
    do {
        value = rng();
    } while (value >= limit);
    return value % bound;
}

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

// Integer directly following an emotion label on a line, after optional
// separator characters. Returns nullopt if no digit appears before a letter.
std::optional<long long> value_after_label(const std::string& line, size_t pos) {
    static const std::string separators = " \t:-=*.)";
    size_t i = pos;
    while (i < line.size() && separators.find(line[i]) != std::string::npos) ++i;
    if (i >= line.size() || !std::isdigit(static_cast<unsigned char>(line[i]))) {
        return std::nullopt;
    }
    long long value = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) {
        value = value * 10 + (line[i] - '0');
        if (value > 1'000'000) break;
        ++i;
    }
    return value;
}

std::vector<long long> standalone_integers(const std::string& text) {
    std::vector<long long> values;
    size_t i = 0;
    while (i < text.size()) {
        if (std::isdigit(static_cast<unsigned char>(text[i]))) {
            size_t start = i;
            long long value = 0;
            while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
                if (value < 1'000'000) value = value * 10 + (text[i] - '0');
                ++i;
            }
            bool prev_word = start > 0 && is_word_char(text[start - 1]);
            bool next_word = i < text.size() && is_word_char(text[i]);
            if (!prev_word && !next_word) values.push_back(value);
        } else {
            ++i;
        }
    }
    return values;
}

}  // namespace

std::string_view emotion_name(Emotion emotion) {
    return kEmotionNames[static_cast<int>(emotion)];
}

std::optional<Emotion> emotion_from_name(std::string_view name) {
    for (int i = 0; i < kEmotionCount; ++i) {
        if (iequals(kEmotionNames[i], name)) return static_cast<Emotion>(i);
    }
    return std::nullopt;
}

bool is_positive(Emotion emotion) { return kPositive[static_cast<int>(emotion)]; }

EmotionOrder canonical_order() {
    EmotionOrder order;
    for (int i = 0; i < kEmotionCount; ++i) order[i] = static_cast<Emotion>(i);
    return order;
}

EmotionOrder randomize_order(std::uint64_t seed) {
    EmotionOrder order = canonical_order();
    std::mt19937_64 rng(seed);
    for (int i = kEmotionCount - 1; i > 0; --i) {
        auto j = static_cast<int>(bounded_draw(rng, static_cast<std::uint64_t>(i) + 1));
        std::swap(order[i], order[j]);
    }
    return order;
}

std::string render_panas_prompt(std::string_view scenario_text, const EmotionOrder& order) {
    std::string prompt(kPromptHeader);
    if (!scenario_text.empty()) {
        prompt += scenario_text;
        prompt += '\n';
    }
    prompt += kPromptScale;
    for (int i = 0; i < kEmotionCount; ++i) {
        if (i > 0) prompt += ", ";
        prompt += emotion_name(order[i]);
    }
    prompt += kPromptFooter;
    return prompt;
}

ParseError::ParseError(int found)
    : std::runtime_error("expected 20 scores, found " + std::to_string(found)),
      found_count(found) {}

RangeError::RangeError(Emotion e, long long v)
    : std::runtime_error(std::string(emotion_name(e)) + " score " + std::to_string(v) +
                         " outside [1,5]"),
      emotion(e),
      value(v) {}

ScoreMap parse_panas_response(const std::string& raw, const EmotionOrder& order) {
    // Stage (a): labeled lines.
    std::array<std::optional<long long>, kEmotionCount> labeled;
    int labeled_count = 0;
    for (const std::string& line : split_lines(raw)) {
        const std::string lower = to_lower(line);
        for (int e = 0; e < kEmotionCount; ++e) {
            if (labeled[e]) continue;
            const std::string name = to_lower(kEmotionNames[e]);
            size_t pos = lower.find(name);
            while (pos != std::string::npos) {
                bool left_ok = pos == 0 || !is_word_char(lower[pos - 1]);
                size_t end = pos + name.size();
                bool right_ok = end >= lower.size() || !is_word_char(lower[end]);
                if (left_ok && right_ok) {
                    if (auto value = value_after_label(line, end)) {
                        labeled[e] = *value;
                        ++labeled_count;
                    }
                    break;
                }
                pos = lower.find(name, pos + 1);
            }
        }
    }

    ScoreMap scores{};
    if (labeled_count == kEmotionCount) {
        for (int e = 0; e < kEmotionCount; ++e) {
            long long value = *labeled[e];
            if (value < 1 || value > 5) throw RangeError(static_cast<Emotion>(e), value);
            scores[e] = static_cast<int>(value);
        }
        return scores;
    }

    // Stage (b): bare integers zipped with the prompt order.
    std::vector<long long> values = standalone_integers(raw);
    if (values.size() != static_cast<size_t>(kEmotionCount)) {
        throw ParseError(static_cast<int>(values.size()));
    }
    for (int i = 0; i < kEmotionCount; ++i) {
        long long value = values[i];
        if (value < 1 || value > 5) throw RangeError(order[i], value);
        scores[static_cast<int>(order[i])] = static_cast<int>(value);
    }
    return scores;
}

AffectTotals score(const ScoreMap& scores) {
    AffectTotals totals;
    for (int e = 0; e < kEmotionCount; ++e) {
        if (kPositive[e]) {
            totals.positive_affect += scores[e];
        } else {
            totals.negative_affect += scores[e];
        }
    }
    return totals;
}

ojson panas_report_to_json(const PanasReport& report) {
    ojson j;
    j["scenario_text"] = report.scenario_text;
    j["seed"] = report.seed;
    auto& order = j["order_used"] = ojson::array();
    for (Emotion e : report.order_used) order.push_back(std::string(emotion_name(e)));
    auto& scores = j["scores"] = ojson::object();
    for (int e = 0; e < kEmotionCount; ++e) {
        scores[std::string(kEmotionNames[e])] = report.scores[e];
    }
    j["positive_affect"] = report.positive_affect;
    j["negative_affect"] = report.negative_affect;
    j["raw_response"] = report.raw_response;
    return j;
}

PanasReport panas_report_from_json(const ojson& j) {
    PanasReport report;
    report.scenario_text = j.at("scenario_text").get<std::string>();
    report.seed = j.at("seed").get<std::uint64_t>();
    const auto& order = j.at("order_used");
    if (order.size() != kEmotionCount) throw std::runtime_error("order_used must have 20 entries");
    for (int i = 0; i < kEmotionCount; ++i) {
        auto e = emotion_from_name(order[i].get<std::string>());
        if (!e) throw std::runtime_error("unknown emotion in order_used");
        report.order_used[i] = *e;
    }
    for (int e = 0; e < kEmotionCount; ++e) {
        report.scores[e] = j.at("scores").at(std::string(kEmotionNames[e])).get<int>();
    }
    report.positive_affect = j.at("positive_affect").get<int>();
    report.negative_affect = j.at("negative_affect").get<int>();
    report.raw_response = j.at("raw_response").get<std::string>();
    return report;
}

AdministrationFailed::AdministrationFailed(int n, const std::string& last_error)
    : std::runtime_error("administration failed after " + std::to_string(n) +
                         " attempts: " + last_error),
      attempts(n) {}

PanasReport administer(Gateway& gateway, const std::string& scenario_text,
                       std::uint64_t seed, int retry_limit) {
    if (retry_limit < 1) throw std::invalid_argument("retry_limit must be >= 1");
    const StageSettings& settings = gateway.config().stage(Stage::Panas);

    std::string last_error;
    for (int attempt = 0; attempt < retry_limit; ++attempt) {
        const std::uint64_t attempt_seed = seed + static_cast<std::uint64_t>(attempt);
        const EmotionOrder order = randomize_order(attempt_seed);
        ChatRequest request;
        request.model = settings.model;
        request.temperature = settings.temperature;
        request.tag = "panas";
        request.messages = {{Role::User, render_panas_prompt(scenario_text, order)}};

        ChatResponse response = gateway.complete(request);
        try {
            ScoreMap scores = parse_panas_response(response.content, order);
            AffectTotals totals = score(scores);
            PanasReport report;
            report.scores = scores;
            report.order_used = order;
            report.positive_affect = totals.positive_affect;
            report.negative_affect = totals.negative_affect;
            report.scenario_text = scenario_text;
            report.seed = attempt_seed;
            report.raw_response = response.content;
            return report;
        } catch (const ParseError& e) {
            last_error = e.what();
        } catch (const RangeError& e) {
            last_error = e.what();
        }
    }
    throw AdministrationFailed(retry_limit, last_error);
}

}  // namespace normagent
