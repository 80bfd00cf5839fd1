#include "normagent/storygen.hpp"

#include "normagent/util.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace normagent {

namespace {

constexpr std::array<std::string_view, kCategoryCount> kCategoryNames = {
    "Anger", "Anxiety", "Depression", "Frustration",
    "Jealousy", "Guilt", "Fear", "Embarrassment",
};

constexpr std::string_view kStage1Template =
    "Task:\n"
    "Your task is turn a situation into a story of 5 parts. Each part should be an episodic "
    "memory of the protagnonist. Each scene should tell a part of the story in a truely "
    "neutral and objective way - do not appeal to emotions or use any emotional words.\n"
    "\n"
    "Example 1:\n"
    "Input: \n"
    "Situation: You missed your flight and you are stuck at the airport.\n"
    "Feeling: Annoyed.\n"
    "1: I wake up late, 2: I arrive at the airport and there is a long line at security, 3: I "
    "get to the gate and I realise the plane is gone, 4: I go to the customer service desk and "
    "they tell me that I have to wait until tomorrow, 5: I go to the hotel and get a room for "
    "the night.\n"
    "\n"
    "Guidelines:\n"
    "1: You must return a JSON in the format of number:story.\n"
    "2: The parts of the story should follow logically.\n"
    "3: Do not use emotional words to describe the story.\n"
    "4. It must be in the first person. You are unaware of other peoples experiences. \n"
    "\n"
    "Input:\n"
    "Situation: {situation}\n"
    "Emotion: {emotion}";

constexpr std::string_view kStage2Template =
    "Task:\n"
    "Your task is to turn a five part series of scenes into a five part story. Each part "
    "should be an episodic memory of the protagnonist. The scenes should expand upon the "
    "input but should be neutral and should not use emotional words. The scene should not "
    "appeal to emotions.\n"
    "\n"
    "Example 1:\n"
    "Input:\n"
    "1: I wake up late, 2: I arrive at the airport and there is a long line at security, 3: I "
    "get to the gate and I realise the plane is gone, 4: I go to the customer service desk and "
    "they tell me that I have to wait until tomorrow, 5: I go to the hotel and get a room for "
    "the night.\n"
    "Feeling: Annoyed.\n"
    "Output:\n"
    "1: My alarm clock goes off, and I pressed the snooze button because I wanted more sleep. "
    "It goes off again after 15 minutes and I realised that I am already running late for my "
    "flight, 2: I rush through the doors of the airport and look around to try and find "
    "security. I see a sign and I rush in that direction. I notice that there is already a "
    "long line at security. 3: After going through security I need to look at my boarding "
    "pass to find which gate I have to go to. After looking through all my belongings I find "
    "the boarding pass and run to the gate. Im unsure if there will be enough time. When I "
    "arrive at the gate there is nobody there. 4: I approach airport staff and they inform me "
    "that everyone has already boarded and that it is too late for me to get on the flight. "
    "Boarding closed 5 minutes ago. They tell me I should to a hotel for the night and get a "
    "flight tomorrow instead. 5: I search online for a hotel. They all seem very expensive "
    "near the airport. I find a reasonably priced hotel and go there. I spend the night in "
    "the hotel.\n"
    "\n"
    "Guidelines:\n"
    "1: You must return a JSON in the format of number:story.\n"
    "2: Do not use emotional words to describe the story.\n"
    "3. It must be in the first person. You are unaware of other peoples experiences.\n"
    "Input:\n"
    "{scenes}\n"
    "Emotion: {emotion}";

constexpr std::string_view kRepairInstruction =
    "Your previous reply could not be parsed. Return only a JSON object with keys \"1\" to "
    "\"5\", each mapping to one scene of the story as a string. Do not include any other "
    "text.";

std::string replace_once(std::string text, std::string_view slot, std::string_view value) {
    auto pos = text.find(slot);
    if (pos == std::string::npos) return text;
    text.replace(pos, slot.size(), value);
    return text;
}

// Minimal RFC4180 reader: quoted fields may contain commas, newlines and
// doubled quotes. Returns rows of fields plus the line each row started on.
struct CsvRow {
    size_t line = 0;
    std::vector<std::string> fields;
};

std::vector<CsvRow> parse_csv(const std::string& text) {
    std::vector<CsvRow> rows;
    CsvRow row;
    row.line = 1;
    std::string field;
    bool in_quotes = false;
    bool row_started = false;
    size_t line = 1;

    auto end_field = [&] {
        row.fields.push_back(std::move(field));
        field.clear();
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(std::move(row));
        row = CsvRow{};
        row.line = line;
        row_started = false;
    };

    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '\n') ++line;
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                in_quotes = true;
                row_started = true;
                break;
            case ',':
                end_field();
                row_started = true;
                break;
            case '\r':
                break;
            case '\n':
                if (row_started || !field.empty() || !row.fields.empty()) {
                    end_row();
                } else {
                    row.line = line;
                }
                break;
            default:
                field.push_back(c);
                row_started = true;
        }
    }
    if (in_quotes) throw FormatError(row.line, "unterminated quoted field");
    if (row_started || !field.empty() || !row.fields.empty()) end_row();
    return rows;
}

Situation situation_from_fields(Category category, std::string factor_id,
                                std::string situation_id, std::string text,
                                std::string emotion, size_t line) {
    if (situation_id.empty()) throw FormatError(line, "empty situation_id");
    if (text.empty()) throw FormatError(line, "empty situation text");
    const std::string prefix = std::string(category_name(category));
    if (factor_id.rfind(prefix, 0) != 0) {
        throw FormatError(line, "category '" + prefix + "' is not a prefix of factor_id '" +
                                    factor_id + "'");
    }
    Situation s;
    s.category = category;
    s.factor_id = std::move(factor_id);
    s.situation_id = std::move(situation_id);
    s.text = std::move(text);
    s.emotion_label = std::move(emotion);
    return s;
}

std::vector<Situation> ingest_csv(const std::string& text) {
    auto rows = parse_csv(text);
    if (rows.empty()) throw FormatError(1, "missing header row");

    std::unordered_map<std::string, size_t> columns;
    for (size_t i = 0; i < rows[0].fields.size(); ++i) {
        columns[to_lower(trim(rows[0].fields[i]))] = i;
    }
    for (const char* required : {"category", "factor_id", "situation_id", "situation", "emotion"}) {
        if (!columns.count(required)) {
            throw FormatError(rows[0].line, std::string("missing column: ") + required);
        }
    }

    std::vector<Situation> situations;
    std::set<std::string> seen_ids;
    for (size_t r = 1; r < rows.size(); ++r) {
        const CsvRow& row = rows[r];
        if (row.fields.size() == 1 && trim(row.fields[0]).empty()) continue;
        if (row.fields.size() < columns.size()) {
            throw FormatError(row.line, "expected " + std::to_string(columns.size()) +
                                            " fields, found " + std::to_string(row.fields.size()));
        }
        auto field = [&](const char* name) { return trim(row.fields[columns.at(name)]); };
        const std::string category_text = field("category");
        auto category = category_from_string(category_text);
        if (!category) throw UnknownCategory(category_text);
        Situation s = situation_from_fields(*category, field("factor_id"), field("situation_id"),
                                            field("situation"), field("emotion"), row.line);
        if (!seen_ids.insert(s.situation_id).second) throw DuplicateId(s.situation_id);
        situations.push_back(std::move(s));
    }
    return situations;
}

std::vector<Situation> ingest_json(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const std::exception& e) {
        throw FormatError(1, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_array()) throw FormatError(1, "expected a JSON array of situations");

    std::vector<Situation> situations;
    std::set<std::string> seen_ids;
    size_t index = 0;
    for (const auto& item : j) {
        ++index;
        if (!item.is_object()) throw FormatError(index, "situation entry is not an object");
        const std::string category_text = item.value("category", "");
        auto category = category_from_string(category_text);
        if (!category) throw UnknownCategory(category_text);
        Situation s = situation_from_fields(*category, item.value("factor_id", ""),
                                            item.value("situation_id", ""),
                                            item.value("situation", ""),
                                            item.value("emotion", ""), index);
        if (!seen_ids.insert(s.situation_id).second) throw DuplicateId(s.situation_id);
        situations.push_back(std::move(s));
    }
    return situations;
}

// Quotes bare integer object keys ({1: ...} -> {"1": ...}) so near-JSON model
// output still parses. String contents are left untouched.
std::string quote_bare_keys(const std::string& text) {
    std::string out;
    out.reserve(text.size() + 8);
    bool in_string = false;
    bool escaped = false;
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            out.push_back(c);
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
            out.push_back(c);
            continue;
        }
        if (c == '{' || c == ',') {
            out.push_back(c);
            size_t j = i + 1;
            while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            size_t digit_start = j;
            while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
            if (j > digit_start) {
                size_t k = j;
                while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
                if (k < text.size() && text[k] == ':') {
                    out.append(text, i + 1, digit_start - (i + 1));
                    out.push_back('"');
                    out.append(text, digit_start, j - digit_start);
                    out.push_back('"');
                    i = j - 1;
                    continue;
                }
            }
            continue;
        }
        out.push_back(c);
    }
    return out;
}

std::string strip_code_fences(const std::string& raw) {
    std::string text = trim(raw);
    if (text.rfind("```", 0) != 0) return text;
    auto lines = split_lines(text);
    lines.erase(lines.begin());
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (!lines.empty() && trim(lines.back()).rfind("```", 0) == 0) lines.pop_back();
    std::string joined;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (i > 0) joined += '\n';
        joined += lines[i];
    }
    return joined;
}

}  // namespace

std::string_view category_name(Category category) {
    return kCategoryNames[static_cast<int>(category)];
}

std::optional<Category> category_from_string(std::string_view name) {
    for (int i = 0; i < kCategoryCount; ++i) {
        if (iequals(kCategoryNames[i], name)) return static_cast<Category>(i);
    }
    return std::nullopt;
}

FormatError::FormatError(size_t l, const std::string& message)
    : std::runtime_error("line " + std::to_string(l) + ": " + message), line(l) {}

DuplicateId::DuplicateId(const std::string& dup_id)
    : std::runtime_error("duplicate situation_id: " + dup_id), id(dup_id) {}

UnknownCategory::UnknownCategory(const std::string& v)
    : std::runtime_error("unknown category: '" + v + "'"), value(v) {}

GenerationFailed::GenerationFailed(int s, int n, const std::string& last_error)
    : std::runtime_error("story generation stage " + std::to_string(s) + " failed after " +
                         std::to_string(n) + " attempts: " + last_error),
      stage(s),
      attempts(n) {}

std::vector<Situation> ingest_situations(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    const std::string head = trim(text.substr(0, 64));
    if (!head.empty() && head.front() == '[') return ingest_json(text);
    return ingest_csv(text);
}

std::string render_stage1_prompt(const Situation& situation) {
    std::string prompt = replace_once(std::string(kStage1Template), "{situation}", situation.text);
    return replace_once(std::move(prompt), "{emotion}", situation.emotion_label);
}

std::string render_stage2_prompt(const std::vector<std::string>& outline,
                                 std::string_view emotion_label) {
    if (outline.size() != 5) throw std::invalid_argument("outline must have exactly 5 parts");
    std::string scenes;
    for (size_t i = 0; i < outline.size(); ++i) {
        if (i > 0) scenes += ", ";
        scenes += std::to_string(i + 1) + ": " + outline[i];
    }
    std::string prompt = replace_once(std::string(kStage2Template), "{scenes}", scenes);
    return replace_once(std::move(prompt), "{emotion}", emotion_label);
}

std::vector<std::string> parse_story_json(const std::string& raw) {
    const std::string text = strip_code_fences(raw);
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const std::exception&) {
        try {
            j = ojson::parse(quote_bare_keys(text));
        } catch (const std::exception& e) {
            throw StoryParseError(std::string("not valid JSON: ") + e.what());
        }
    }
    if (!j.is_object()) throw StoryParseError("expected a JSON object");
    if (j.size() != 5) {
        throw StoryParseError("expected exactly 5 keys, found " + std::to_string(j.size()));
    }
    std::vector<std::string> scenes;
    for (int i = 1; i <= 5; ++i) {
        const std::string key = std::to_string(i);
        if (!j.contains(key)) throw StoryParseError("missing key \"" + key + "\"");
        const auto& value = j.at(key);
        if (!value.is_string()) throw StoryParseError("value for \"" + key + "\" is not text");
        std::string scene = value.get<std::string>();
        if (trim(scene).empty()) throw StoryParseError("scene " + key + " is empty");
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

namespace {

struct StageOutcome {
    std::vector<std::string> parts;
    std::string request_fingerprint;
};

StageOutcome run_stage(Gateway& gateway, int stage, const std::string& prompt, int retry_limit) {
    const StageSettings& settings = gateway.config().stage(Stage::Story);
    std::vector<ChatMessage> messages{{Role::User, prompt}};
    std::string last_error;
    for (int attempt = 1; attempt <= retry_limit; ++attempt) {
        ChatRequest request;
        request.model = settings.model;
        request.temperature = settings.temperature;
        request.tag = stage == 1 ? "story1" : "story2";
        request.messages = messages;

        ChatResponse response = gateway.complete(request);
        try {
            return StageOutcome{parse_story_json(response.content), fingerprint(request)};
        } catch (const StoryParseError& e) {
            last_error = e.what();
            // Repair retry: show the malformed reply, then re-instruct.
            messages.push_back({Role::Assistant, response.content});
            messages.push_back({Role::User, std::string(kRepairInstruction)});
        }
    }
    throw GenerationFailed(stage, retry_limit, last_error);
}

}  // namespace

StoryRecord generate_story(Gateway& gateway, const Situation& situation, int retry_limit) {
    if (retry_limit < 1) throw std::invalid_argument("retry_limit must be >= 1");
    StageOutcome stage1 = run_stage(gateway, 1, render_stage1_prompt(situation), retry_limit);
    StageOutcome stage2 = run_stage(
        gateway, 2, render_stage2_prompt(stage1.parts, situation.emotion_label), retry_limit);

    StoryRecord record;
    record.situation_id = situation.situation_id;
    record.category = situation.category;
    record.situation_text = situation.text;
    record.emotion_label = situation.emotion_label;
    record.scenes = std::move(stage2.parts);
    record.stage1_outline = std::move(stage1.parts);
    record.generator_fingerprints.stage1 = stage1.request_fingerprint;
    record.generator_fingerprints.stage2 = stage2.request_fingerprint;
    return record;
}

ojson story_record_to_json(const StoryRecord& record) {
    ojson j;
    j["situation_id"] = record.situation_id;
    j["category"] = std::string(category_name(record.category));
    j["situation_text"] = record.situation_text;
    j["emotion_label"] = record.emotion_label;
    j["scenes"] = record.scenes;
    j["stage1_outline"] = record.stage1_outline;
    ojson fp;
    fp["stage1"] = record.generator_fingerprints.stage1;
    fp["stage2"] = record.generator_fingerprints.stage2;
    j["generator_fingerprints"] = std::move(fp);
    return j;
}

StoryRecord story_record_from_json(const ojson& j) {
    StoryRecord record;
    record.situation_id = j.at("situation_id").get<std::string>();
    auto category = category_from_string(j.at("category").get<std::string>());
    if (!category) throw UnknownCategory(j.at("category").get<std::string>());
    record.category = *category;
    record.situation_text = j.at("situation_text").get<std::string>();
    record.emotion_label = j.at("emotion_label").get<std::string>();
    record.scenes = j.at("scenes").get<std::vector<std::string>>();
    record.stage1_outline = j.at("stage1_outline").get<std::vector<std::string>>();
    if (record.scenes.size() != 5) throw StoryParseError("story record must have 5 scenes");
    for (const auto& scene : record.scenes) {
        if (trim(scene).empty()) throw StoryParseError("story record has an empty scene");
    }
    if (j.contains("generator_fingerprints")) {
        record.generator_fingerprints.stage1 =
            j.at("generator_fingerprints").value("stage1", "");
        record.generator_fingerprints.stage2 =
            j.at("generator_fingerprints").value("stage2", "");
    }
    return record;
}

void write_story_dataset(const std::filesystem::path& path,
                         const std::vector<StoryRecord>& records) {
    std::string out;
    for (const auto& record : records) {
        out += story_record_to_json(record).dump();
        out += '\n';
    }
    write_text_file_atomic(path, out);
}

std::vector<StoryRecord> read_story_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path.string());
    std::vector<StoryRecord> records;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            records.push_back(story_record_from_json(ojson::parse(line)));
        } catch (const std::exception& e) {
            throw FormatError(lineno, e.what());
        }
    }
    return records;
}

GenerationReport generate_dataset(Gateway& gateway, const std::vector<Situation>& situations,
                                  int retry_limit, int parallelism) {
    GenerationReport report;
    report.attempted = static_cast<int>(situations.size());

    std::vector<std::optional<StoryRecord>> slots(situations.size());
    std::vector<std::optional<GenerationFailure>> errors(situations.size());
    std::atomic<size_t> next{0};

    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= situations.size()) return;
            try {
                slots[i] = generate_story(gateway, situations[i], retry_limit);
            } catch (const std::exception& e) {
                errors[i] = GenerationFailure{situations[i].situation_id, e.what()};
            }
        }
    };

    int workers = std::max(1, std::min<int>(parallelism, static_cast<int>(situations.size())));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (size_t i = 0; i < situations.size(); ++i) {
        if (slots[i]) report.records.push_back(std::move(*slots[i]));
        if (errors[i]) report.failures.push_back(std::move(*errors[i]));
    }
    return report;
}

std::filesystem::path failures_sidecar_path(const std::filesystem::path& dataset_path) {
    std::filesystem::path sidecar = dataset_path;
    sidecar.replace_extension(".failures.json");
    return sidecar;
}

void write_failures_sidecar(const std::filesystem::path& dataset_path,
                            const std::vector<GenerationFailure>& failures) {
    ojson j = ojson::array();
    for (const auto& f : failures) {
        ojson entry;
        entry["situation_id"] = f.situation_id;
        entry["error"] = f.error;
        j.push_back(std::move(entry));
    }
    write_text_file_atomic(failures_sidecar_path(dataset_path), j.dump(2) + "\n");
}

std::vector<std::string> emotional_word_warnings(const StoryRecord& record) {
    static const std::set<std::string> lexicon = {
        "angry",      "anger",       "furious",    "rage",       "sad",        "sadness",
        "happy",      "happiness",   "joy",        "joyful",     "fear",       "fearful",
        "afraid",     "scared",      "terrified",  "anxious",    "anxiety",    "depressed",
        "depression", "frustrated",  "frustration", "jealous",   "jealousy",   "guilty",
        "guilt",      "embarrassed", "embarrassment", "ashamed", "upset",      "nervous",
        "miserable",  "lonely",      "despair",    "dread",      "delighted",  "ecstatic",
        "worried",    "distressed",  "hostile",    "irritated",
    };
    std::vector<std::string> warnings;
    for (size_t i = 0; i < record.scenes.size(); ++i) {
        for (const auto& token : tokenize(record.scenes[i])) {
            if (lexicon.count(token)) {
                warnings.push_back("scene " + std::to_string(i + 1) + ": \"" + token + "\"");
            }
        }
    }
    return warnings;
}

}  // namespace normagent
