#pragma once

#include "normagent/gateway.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace normagent {

using ojson = nlohmann::ordered_json;

inline constexpr int kEmotionCount = 20;

/// The 20 PANAS emotions. Enum order is the canonical prompt order: positive
/// and negative items interleaved, starting with Attentive/Hostile.
enum class Emotion : int {
    Attentive = 0,
    Hostile,
    Active,
    Irritable,
    Alert,
    Ashamed,
    Excited,
    Guilty,
    Enthusiastic,
    Distressed,
    Determined,
    Upset,
    Inspired,
    Scared,
    Proud,
    Afraid,
    Interested,
    Jittery,
    Strong,
    Nervous,
};

std::string_view emotion_name(Emotion emotion);
std::optional<Emotion> emotion_from_name(std::string_view name);  // case-insensitive
bool is_positive(Emotion emotion);

using EmotionOrder = std::array<Emotion, kEmotionCount>;
/// Scores indexed by canonical emotion index; values in [1,5].
using ScoreMap = std::array<int, kEmotionCount>;

EmotionOrder canonical_order();

/// Deterministic Fisher-Yates permutation of the 20 emotions. Uses an explicit
/// bounded-draw loop over mt19937_64 so the result is identical on every
/// platform for a given seed.
EmotionOrder randomize_order(std::uint64_t seed);

/// The questionnaire prompt, with the scenario line omitted entirely when
/// `scenario_text` is empty (the default-baseline case) and emotions listed
/// in `order`.
std::string render_panas_prompt(std::string_view scenario_text, const EmotionOrder& order);

struct ParseError : std::runtime_error {
    explicit ParseError(int found);
    int found_count;
};

struct RangeError : std::runtime_error {
    RangeError(Emotion emotion, long long value);
    Emotion emotion;
    long long value;
};

/// Two-stage parse of a questionnaire reply:
///  (a) labeled lines "<Emotion> ... <integer>" (case-insensitive; separators
///      ':', '-', '=', whitespace), accepted only if all 20 emotions appear;
///  (b) otherwise all standalone integers in reading order, zipped with the
///      prompt order — the well-behaved case for "only reply the numbers".
/// Exactly 20 in-range scores are required; anything else throws, which
/// signals the caller to re-administer.
ScoreMap parse_panas_response(const std::string& raw, const EmotionOrder& order);

struct AffectTotals {
    int positive_affect = 0;
    int negative_affect = 0;
};

/// Sum of the 10 positive and 10 negative scores; each total lies in [10,50].
AffectTotals score(const ScoreMap& scores);

struct PanasReport {
    ScoreMap scores{};
    EmotionOrder order_used{};
    int positive_affect = 0;
    int negative_affect = 0;
    std::string scenario_text;
    std::uint64_t seed = 0;
    std::string raw_response;
};

ojson panas_report_to_json(const PanasReport& report);
PanasReport panas_report_from_json(const ojson& j);

struct AdministrationFailed : std::runtime_error {
    AdministrationFailed(int attempts, const std::string& last_error);
    int attempts;
};

/// Full administration: randomize order, render, complete, parse, score.
/// A parse or range failure re-issues with seed+1 (fresh permutation) up to
/// `retry_limit` attempts. Gateway errors propagate unchanged.
PanasReport administer(Gateway& gateway, const std::string& scenario_text,
                       std::uint64_t seed, int retry_limit);

}  // namespace normagent
