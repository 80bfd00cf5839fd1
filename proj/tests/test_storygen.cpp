#include "normagent/storygen.hpp"

#include "normagent/util.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <random>

using namespace normagent;
using namespace testsupport;

TEST_CASE("ingest_situations from CSV") {
    TempDir dir;

    SUBCASE("the fixture rows parse with exact fields") {
        const auto path = dir / "situations.csv";
        write_text_file(path, situations_csv());
        const auto situations = ingest_situations(path);
        REQUIRE(situations.size() == 3);
        CHECK(situations[0].situation_id == "Anger-2-3");
        CHECK(situations[0].factor_id == "Anger-2");
        CHECK(situations[0].category == Category::Anger);
        CHECK(situations[0].text ==
              "I am spending time in the living room with my two brothers when a disagreement "
              "begins.");
        CHECK(situations[0].emotion_label == "angry");
        CHECK(situations[1].category == Category::Fear);
        CHECK(situations[2].category == Category::Guilt);
    }

    SUBCASE("header-only file yields an empty list") {
        const auto path = dir / "empty.csv";
        write_text_file(path, "category,factor_id,situation_id,situation,emotion\n");
        CHECK(ingest_situations(path).empty());
    }

    SUBCASE("quoted fields carry commas, escaped quotes and newlines") {
        const auto path = dir / "quoted.csv";
        write_text_file(path,
                        "category,factor_id,situation_id,situation,emotion\n"
                        "Anger,Anger-1,Anger-1-1,\"One, two, \"\"three\"\".\nSecond "
                        "line.\",angry\n");
        const auto situations = ingest_situations(path);
        REQUIRE(situations.size() == 1);
        CHECK(situations[0].text == "One, two, \"three\".\nSecond line.");
    }

    SUBCASE("column order does not matter") {
        const auto path = dir / "reordered.csv";
        write_text_file(path,
                        "emotion,situation,situation_id,factor_id,category\n"
                        "sad,Something happens.,Depression-1-1,Depression-1,Depression\n");
        const auto situations = ingest_situations(path);
        REQUIRE(situations.size() == 1);
        CHECK(situations[0].category == Category::Depression);
        CHECK(situations[0].emotion_label == "sad");
    }

    SUBCASE("duplicate ids are rejected") {
        const auto path = dir / "dup.csv";
        write_text_file(path,
                        "category,factor_id,situation_id,situation,emotion\n"
                        "Anger,Anger-1,Anger-1-1,a.,angry\n"
                        "Anger,Anger-1,Anger-1-1,b.,angry\n");
        CHECK_THROWS_AS(ingest_situations(path), DuplicateId);
    }

    SUBCASE("unknown categories are rejected") {
        const auto path = dir / "unknown.csv";
        write_text_file(path,
                        "category,factor_id,situation_id,situation,emotion\n"
                        "Boredom,Boredom-1,Boredom-1-1,a.,bored\n");
        CHECK_THROWS_AS(ingest_situations(path), UnknownCategory);
    }

    SUBCASE("missing columns name the problem") {
        const auto path = dir / "missing.csv";
        write_text_file(path, "category,situation_id,situation,emotion\nAnger,A-1,x,angry\n");
        CHECK_THROWS_AS(ingest_situations(path), FormatError);
    }

    SUBCASE("category must prefix the factor id") {
        const auto path = dir / "prefix.csv";
        write_text_file(path,
                        "category,factor_id,situation_id,situation,emotion\n"
                        "Anger,Fear-1,Anger-1-1,a.,angry\n");
        CHECK_THROWS_AS(ingest_situations(path), FormatError);
    }
}

TEST_CASE("ingest_situations from a JSON array") {
    TempDir dir;
    const auto path = dir / "situations.json";
    write_text_file(path, R"([
        {"category": "Jealousy", "factor_id": "Jealousy-2", "situation_id": "Jealousy-2-1",
         "situation": "A colleague receives an award.", "emotion": "jealous"},
        {"category": "Embarrassment", "factor_id": "Embarrassment-1",
         "situation_id": "Embarrassment-1-4", "situation": "I trip in public.",
         "emotion": "embarrassed"}
    ])");
    const auto situations = ingest_situations(path);
    REQUIRE(situations.size() == 2);
    CHECK(situations[0].category == Category::Jealousy);
    CHECK(situations[1].situation_id == "Embarrassment-1-4");
}

TEST_CASE("render_stage1_prompt") {
    Situation situation;
    situation.category = Category::Anger;
    situation.factor_id = "Anger-2";
    situation.situation_id = "Anger-2-3";
    situation.text = "I am spending time in the living room with my two brothers when a "
                     "disagreement begins.";
    situation.emotion_label = "angry";

    const std::string prompt = render_stage1_prompt(situation);
    CHECK(prompt.find("You must return a JSON in the format of number:story") !=
          std::string::npos);
    CHECK(prompt.find("Situation: " + situation.text) != std::string::npos);
    CHECK(prompt.find("Emotion: angry") != std::string::npos);
    CHECK(prompt.rfind("Task:", 0) == 0);

    // The situation text appears exactly once.
    size_t count = 0;
    for (auto pos = prompt.find(situation.text); pos != std::string::npos;
         pos = prompt.find(situation.text, pos + 1)) {
        ++count;
    }
    CHECK(count == 1);
}

TEST_CASE("render_stage2_prompt") {
    const std::vector<std::string> airport_outline = {
        "I wake up late",
        "I arrive at the airport and there is a long line at security",
        "I get to the gate and I realise the plane is gone",
        "I go to the customer service desk and they tell me that I have to wait until tomorrow",
        "I go to the hotel and get a room for the night",
    };
    const std::string prompt = render_stage2_prompt(airport_outline, "Annoyed.");
    CHECK(prompt.find(
              "1: I wake up late, 2: I arrive at the airport and there is a long line at "
              "security, 3: I get to the gate and I realise the plane is gone, 4: I go to the "
              "customer service desk and they tell me that I have to wait until tomorrow, 5: I "
              "go to the hotel and get a room for the night") != std::string::npos);
    CHECK(prompt.find("Emotion: Annoyed.") != std::string::npos);

    CHECK_THROWS_AS(render_stage2_prompt({"a", "b", "c", "d"}, "x"), std::invalid_argument);
}

TEST_CASE("parse_story_json") {
    SUBCASE("plain object") {
        const auto scenes = parse_story_json(R"({"1":"a","2":"b","3":"c","4":"d","5":"e"})");
        CHECK(scenes == std::vector<std::string>{"a", "b", "c", "d", "e"});
    }

    SUBCASE("markdown fences are stripped") {
        const auto scenes = parse_story_json(
            "```json\n{\"1\":\"a\",\"2\":\"b\",\"3\":\"c\",\"4\":\"d\",\"5\":\"e\"}\n```");
        CHECK(scenes == std::vector<std::string>{"a", "b", "c", "d", "e"});
        const auto bare_fence = parse_story_json(
            "```\n{\"1\":\"a\",\"2\":\"b\",\"3\":\"c\",\"4\":\"d\",\"5\":\"e\"}\n```");
        CHECK(bare_fence == std::vector<std::string>{"a", "b", "c", "d", "e"});
    }

    SUBCASE("bare integer keys are accepted") {
        const auto scenes = parse_story_json(R"({1:"a",2:"b",3:"c",4:"d",5:"e"})");
        CHECK(scenes == std::vector<std::string>{"a", "b", "c", "d", "e"});
    }

    SUBCASE("missing or extra keys fail") {
        CHECK_THROWS_AS(parse_story_json(R"({"1":"a","2":"b"})"), StoryParseError);
        CHECK_THROWS_AS(
            parse_story_json(R"({"1":"a","2":"b","3":"c","4":"d","5":"e","6":"f"})"),
            StoryParseError);
        CHECK_THROWS_AS(parse_story_json(R"({"1":"a","2":"b","3":"c","4":"d","6":"f"})"),
                        StoryParseError);
    }

    SUBCASE("non-text and empty values fail") {
        CHECK_THROWS_AS(parse_story_json(R"({"1":1,"2":"b","3":"c","4":"d","5":"e"})"),
                        StoryParseError);
        CHECK_THROWS_AS(parse_story_json(R"({"1":"","2":"b","3":"c","4":"d","5":"e"})"),
                        StoryParseError);
        CHECK_THROWS_AS(parse_story_json("not json at all"), StoryParseError);
    }

    SUBCASE("wrapped and unwrapped fixtures parse identically") {
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<std::string> scenes;
            nlohmann::ordered_json j;
            for (int i = 1; i <= 5; ++i) {
                std::string scene = "scene " + std::to_string(i) + " v" +
                                    std::to_string(rng() % 1000) + " with, commas and \"quotes\"";
                scenes.push_back(scene);
                j[std::to_string(i)] = scene;
            }
            const std::string plain = j.dump();
            CHECK(parse_story_json(plain) == scenes);
            CHECK(parse_story_json("```json\n" + plain + "\n```") == scenes);
            CHECK(parse_story_json("```\n" + plain + "\n```\n") == scenes);
            CHECK(parse_story_json("  " + plain + "  ") == scenes);
        }
    }
}

TEST_CASE("generate_story") {
    const auto fixtures = story_fixtures();
    Situation anger;
    anger.category = Category::Anger;
    anger.factor_id = fixtures[0].factor_id;
    anger.situation_id = fixtures[0].situation_id;
    anger.text = fixtures[0].situation;
    anger.emotion_label = fixtures[0].emotion;

    SUBCASE("two-stage generation matches the fixture") {
        auto gateway = make_gateway(make_storygen_transport());
        StoryRecord record = generate_story(*gateway, anger, 2);
        CHECK(record.situation_id == "Anger-2-3");
        CHECK(record.scenes == fixtures[0].scenes);
        CHECK(record.stage1_outline == fixtures[0].outline);
        CHECK(record.scenes[0] ==
              "I am spending time in the living room with my two brothers when a disagreement "
              "begins.");
        CHECK_FALSE(record.generator_fingerprints.stage1.empty());
        CHECK_FALSE(record.generator_fingerprints.stage2.empty());
        CHECK(record.generator_fingerprints.stage1 != record.generator_fingerprints.stage2);
    }

    SUBCASE("a malformed stage-2 reply is repaired with the reply in context") {
        int stage2_calls = 0;
        auto transport = std::make_unique<ScriptedTransport>();
        auto* transport_raw = transport.get();
        transport->on("Situation: " + anger.text, scenes_json(fixtures[0].outline));
        transport->on(fixtures[0].outline[1], [&](const std::string&) -> std::string {
            return ++stage2_calls == 1 ? "oops not json" : scenes_json(fixtures[0].scenes);
        });
        auto gateway = make_gateway(std::move(transport));

        StoryRecord record = generate_story(*gateway, anger, 2);
        CHECK(record.scenes == fixtures[0].scenes);
        CHECK(stage2_calls == 2);

        // The repair request carries the malformed reply and the instruction.
        const auto bodies = transport_raw->bodies();
        REQUIRE(bodies.size() == 3);
        CHECK(bodies[2].find("oops not json") != std::string::npos);
        CHECK(bodies[2].find("could not be parsed") != std::string::npos);
    }

    SUBCASE("persistent malformed output exhausts the retry budget") {
        auto transport = std::make_unique<ScriptedTransport>();
        transport->fallback("never json");
        auto gateway = make_gateway(std::move(transport));
        try {
            generate_story(*gateway, anger, 3);
            FAIL("expected GenerationFailed");
        } catch (const GenerationFailed& e) {
            CHECK(e.stage == 1);
            CHECK(e.attempts == 3);
        }
    }
}

TEST_CASE("story records serialize with a fixed field order and round-trip") {
    auto gateway = make_gateway(make_storygen_transport());
    const auto fixtures = story_fixtures();
    Situation fear;
    fear.category = Category::Fear;
    fear.factor_id = fixtures[1].factor_id;
    fear.situation_id = fixtures[1].situation_id;
    fear.text = fixtures[1].situation;
    fear.emotion_label = fixtures[1].emotion;

    StoryRecord record = generate_story(*gateway, fear, 2);
    const std::string dumped = story_record_to_json(record).dump();
    const std::vector<std::string> keys = {
        "situation_id", "category",       "situation_text",        "emotion_label",
        "scenes",       "stage1_outline", "generator_fingerprints"};
    size_t last = 0;
    for (const auto& key : keys) {
        const auto pos = dumped.find("\"" + key + "\"");
        REQUIRE(pos != std::string::npos);
        CHECK(pos >= last);
        last = pos;
    }

    StoryRecord back = story_record_from_json(ojson::parse(dumped));
    CHECK(story_record_to_json(back).dump() == dumped);

    TempDir dir;
    const auto path = dir / "stories.jsonl";
    write_story_dataset(path, {record});
    const auto loaded = read_story_dataset(path);
    REQUIRE(loaded.size() == 1);
    CHECK(story_record_to_json(loaded[0]).dump() == dumped);
}

TEST_CASE("generate_dataset keeps order, reports failures and balances counts") {
    const auto fixtures = story_fixtures();
    std::vector<Situation> situations;
    for (const auto& fixture : fixtures) {
        Situation s;
        s.category = *category_from_string(fixture.category);
        s.factor_id = fixture.factor_id;
        s.situation_id = fixture.situation_id;
        s.text = fixture.situation;
        s.emotion_label = fixture.emotion;
        situations.push_back(s);
    }

    // Script only two of the three stories; the third fails its stage-1 parse.
    auto transport = std::make_unique<ScriptedTransport>();
    for (size_t i = 0; i < 2; ++i) {
        transport->on("Situation: " + fixtures[i].situation, scenes_json(fixtures[i].outline));
        transport->on(fixtures[i].outline[1], scenes_json(fixtures[i].scenes));
    }
    transport->fallback("no json today");
    auto gateway = make_gateway(std::move(transport));

    GenerationReport report = generate_dataset(*gateway, situations, 2, 2);
    CHECK(report.attempted == 3);
    CHECK(report.records.size() == 2);
    CHECK(report.failures.size() == 1);
    CHECK(report.records.size() + report.failures.size() ==
          static_cast<size_t>(report.attempted));
    CHECK(report.records[0].situation_id == "Anger-2-3");
    CHECK(report.records[1].situation_id == "Fear-1-2");
    CHECK(report.failures[0].situation_id == "Guilt-3-1");

    TempDir dir;
    const auto dataset = dir / "stories.jsonl";
    write_story_dataset(dataset, report.records);
    write_failures_sidecar(dataset, report.failures);
    CHECK(failures_sidecar_path(dataset) == dir / "stories.failures.json");
    const auto sidecar = ojson::parse(read_text_file(dir / "stories.failures.json"));
    REQUIRE(sidecar.size() == 1);
    CHECK(sidecar.at(0).at("situation_id") == "Guilt-3-1");
    CHECK(sidecar.at(0).contains("error"));
}

TEST_CASE("emotional word warnings flag non-neutral scenes") {
    StoryRecord record;
    record.scenes = {"I walk to the store.", "I feel angry about the line.",
                     "I buy bread.", "I head home.", "The evening is quiet."};
    const auto warnings = emotional_word_warnings(record);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("scene 2") != std::string::npos);
    CHECK(warnings[0].find("angry") != std::string::npos);

    record.scenes[1] = "I wait in the line.";
    CHECK(emotional_word_warnings(record).empty());
}
