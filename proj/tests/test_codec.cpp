#include <doctest.h>

#include "parld/json_codec.hpp"
#include "support.hpp"

using namespace parld;
using parld::testing::make_session;
using parld::testing::TempDir;

TEST_CASE("session JSON uses the canonical field names") {
    Session s = make_session(2, {"Subtraction"}, 1);
    s.split = Split::Test;
    s.meta["source"] = "unit";
    json j = to_json(s);

    CHECK(j.at("session_id") == "s1");
    CHECK(j.at("student_id") == "s1-student");
    CHECK(j.at("final_label") == 1);
    CHECK(j.at("split") == "test");
    CHECK(j.at("meta").at("source") == "unit");
    CHECK(j.at("question").at("id") == "q1");
    CHECK(j.at("question").at("kcs")[0].at("id") == "Subtraction");
    CHECK(j.at("question").at("kcs")[0].at("name") == "Subtraction");
    CHECK(j.at("turns")[0].at("index") == 1);
    CHECK(j.at("turns")[0].contains("tutor"));
    CHECK(j.at("turns")[0].contains("student"));

    CHECK(session_from_json(j) == s);
}

TEST_CASE("sessions round-trip through the jsonl file form") {
    TempDir dir;
    std::vector<Session> sessions = {make_session(2, {"KC1", "KC2"}, 0, "a"),
                                     make_session(3, {"KC1"}, 1, "b")};
    sessions[1].split = Split::Train;
    sessions[1].meta["note"] = "second";

    auto path = dir / "sessions.jsonl";
    save_sessions_jsonl(path, sessions);
    std::vector<Session> back = load_sessions_jsonl(path);
    CHECK(back == sessions);

    // one record per line
    std::string content = read_file(path);
    size_t lines = std::count(content.begin(), content.end(), '\n');
    CHECK(lines == sessions.size());
}

TEST_CASE("turn trace JSON round-trips every component") {
    TurnTrace trace;
    trace.turn_index = 3;
    trace.dialogue = {3, "how?", "like this"};
    ZpdBehaviorSchema schema;
    schema.turn_index = 3;
    schema.acquirable.push_back({"tries borrowing with help", {"Subtraction"}});
    trace.schema = schema;
    CognitiveState state;
    state.turn_index = 3;
    state.entries.push_back({"Subtraction", {MasteryLevel::Fair, "partial work"}});
    trace.states = {state, state};
    trace.predictions = {{3, OutcomeLabel::NotMastered, "weak"}, {3, OutcomeLabel::Mastered, "better"}};
    trace.reflections = {{ReflectionJudgment::Inaccurate, "overrated Subtraction", 1}};
    trace.exchanges = {{"analyzer", "analyzer", "v1", "req", "resp", 1}};

    json j = to_json(trace);
    CHECK(trace_from_json(j) == trace);

    // schema absence survives the round trip too
    trace.schema.reset();
    CHECK_FALSE(trace_from_json(to_json(trace)).schema.has_value());
}

TEST_CASE("memory and config JSON round-trip") {
    ConversationMemory memory{"s9", {}};
    TurnTrace trace;
    trace.turn_index = 1;
    trace.dialogue = {1, "t", "s"};
    CognitiveState state;
    state.turn_index = 1;
    state.entries.push_back({"KC1", {MasteryLevel::Good, "ok"}});
    trace.states = {state};
    trace.predictions = {{1, OutcomeLabel::Mastered, "fine"}};
    memory.traces.push_back(trace);
    CHECK(memory_from_json(to_json(memory)) == memory);

    EngineConfig config;
    config.model_name = "gpt-4.1";
    config.max_num = 1;
    config.enable_previewer = false;
    config.reflection_signal = ReflectionSignal::PerTurnCorrectness;
    config.structured_retry_limit = 4;
    CHECK(config_from_json(to_json(config)) == config);
}

TEST_CASE("malformed session JSON is rejected") {
    json j = to_json(make_session(1));
    j.erase("turns");
    CHECK_THROWS(session_from_json(j));

    json bad_split = to_json(make_session(1));
    bad_split["split"] = "holdout";
    CHECK_THROWS(session_from_json(bad_split));
}

TEST_CASE("read_file and write_file round-trip bytes") {
    TempDir dir;
    std::string payload = "line one\nline two\n\xE2\x88\x91 unicode";
    write_file(dir / "blob.txt", payload);
    CHECK(read_file(dir / "blob.txt") == payload);
    CHECK_THROWS(read_file(dir / "missing.txt"));
}
