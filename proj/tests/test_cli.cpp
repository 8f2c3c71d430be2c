// End-to-end runs of the parld CLI against scripted and loopback providers.
#include <doctest.h>

#include <iostream>
#include <json.hpp>
#include <sstream>

#include "parld/cli.hpp"
#include "parld/json_codec.hpp"
#include "support.hpp"

using namespace parld;
using namespace parld::testing;
using nlohmann::json;

namespace {

struct CaptureStreams {
    std::ostringstream out, err;
    std::streambuf* saved_out;
    std::streambuf* saved_err;
    CaptureStreams() : saved_out(std::cout.rdbuf(out.rdbuf())), saved_err(std::cerr.rdbuf(err.rdbuf())) {}
    ~CaptureStreams() {
        std::cout.rdbuf(saved_out);
        std::cerr.rdbuf(saved_err);
    }
};

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run(const std::vector<std::string>& args) {
    CaptureStreams capture;
    int code = run_cli(args);
    return {code, capture.out.str(), capture.err.str()};
}

std::string write_sessions(const TempDir& dir, const std::vector<Session>& sessions,
                           const std::string& name = "sessions.jsonl") {
    auto path = dir / name;
    save_sessions_jsonl(path, sessions);
    return path.string();
}

// A response script for full-pipeline evaluation of single-turn sessions:
// one previewer, analyzer, reasoner round per session.
json eval_responses(size_t session_count) {
    json responses = json::array();
    for (size_t i = 0; i < session_count; ++i) {
        responses.push_back(json::parse(zpd_reply({"Subtraction"})));
        responses.push_back(json::parse(state_reply({"Subtraction"})));
        responses.push_back(json::parse(prediction_reply()));
    }
    return responses;
}

std::string write_script(const TempDir& dir, const json& responses,
                         const std::string& name = "script.json") {
    auto path = dir / name;
    write_file(path, responses.dump(2));
    return path.string();
}

size_t count_lines(const std::string& content) {
    size_t lines = 0;
    std::istringstream in(content);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    return lines;
}

}  // namespace

TEST_CASE("usage errors exit with 1 and point at the problem") {
    SUBCASE("missing required --dataset") {
        auto result = run({"evaluate", "--out", "/tmp/nowhere"});
        CHECK(result.code == 1);
        CHECK(result.err.find("--dataset") != std::string::npos);
        CHECK(result.err.find("parld --help") != std::string::npos);
    }
    SUBCASE("unknown flag") {
        auto result = run({"evaluate", "--dataset", "x", "--out", "y", "--bogus"});
        CHECK(result.code == 1);
    }
    SUBCASE("unknown subcommand") {
        auto result = run({"frobnicate"});
        CHECK(result.code == 1);
    }
    SUBCASE("bad provider name") {
        auto result = run({"evaluate", "--dataset", "x", "--out", "y", "--provider", "psychic"});
        CHECK(result.code == 1);
    }
}

TEST_CASE("the scripted provider is gated behind the test-harness flag") {
    TempDir dir;
    auto dataset = write_sessions(dir, {make_session(1, {"Subtraction"}, 0, "gate1")});
    auto script = write_script(dir, eval_responses(1));
    auto result = run({"evaluate", "--dataset", dataset, "--out", (dir / "run").string(),
                       "--provider", "scripted", "--script", script});
    CHECK(result.code == 1);
    CHECK(result.err.find("reserved for the test harness") != std::string::npos);
}

TEST_CASE("ingest converts mathdial csv and is idempotent over its own output") {
    TempDir dir;
    std::string csv =
        "qid,question,ground_truth,student_profile,conversation,self-correctness\n"
        "42,\"Mrs. Smith baked 350 cookies, then gave away 70. How many are left?\",280,"
        "\"confuses subtraction with addition\","
        "\"Teacher: (probing) Can you subtract 70 from 350?|EOM|Student: I think it is 290|EOM|"
        "Teacher: Check the tens digit.|EOM|Student: 280\",Yes\n"
        "43,,19,,\"Teacher: Hi|EOM|Student: Hi\",Yes\n";
    auto raw = dir / "raw.csv";
    write_file(raw, csv);

    auto out1 = (dir / "out1").string();
    auto result = run({"ingest", "--source", "mathdial", "--input", raw.string(), "--out", out1,
                       "--split", "train"});
    CHECK(result.code == 0);
    CHECK(result.out.find("ingested 1 of 2 raw records (1 dropped)") != std::string::npos);
    json report = json::parse(read_file(std::filesystem::path(out1) / "ingest_report.json"));
    CHECK(report["source"] == "mathdial");
    CHECK(report["total_raw"] == 2);
    CHECK(report["emitted"] == 1);
    CHECK(report["dropped"][0]["reason"] == "missing question text");

    auto sessions_path = std::filesystem::path(out1) / "sessions.jsonl";
    REQUIRE(std::filesystem::exists(sessions_path));

    // Canonical ingest of the canonical output reproduces it byte for byte.
    auto out2 = (dir / "out2").string();
    auto second = run({"ingest", "--source", "canonical", "--input", sessions_path.string(), "--out", out2});
    CHECK(second.code == 0);
    CHECK(read_file(std::filesystem::path(out2) / "sessions.jsonl") == read_file(sessions_path));
}

TEST_CASE("kc-tag fills in missing concepts through the tagger") {
    TempDir dir;
    auto session = make_session(1, {}, 0, "untagged1");
    auto dataset = write_sessions(dir, {session});
    auto script = write_script(dir, json::array({json{{"kcs", {"Subtraction", "Multiplication"}}}}));
    auto out = (dir / "tagged").string();
    auto cache = (dir / "kc_cache.json").string();

    auto result = run({"kc-tag", "--dataset", dataset, "--cache", cache, "--out", out,
                       "--provider", "scripted", "--allow-scripted", "--script", script});
    REQUIRE(result.code == 0);

    auto tagged = load_sessions_jsonl(std::filesystem::path(out) / "sessions.jsonl");
    REQUIRE(tagged.size() == 1);
    CHECK(tagged[0].question.kc_ids() == std::vector<std::string>{"Subtraction", "Multiplication"});
    json report = json::parse(read_file(std::filesystem::path(out) / "tag_report.json"));
    CHECK(report["newly_tagged"] == 1);
    CHECK(report["already_tagged"] == 0);
    CHECK(std::filesystem::exists(cache));
}

TEST_CASE("diagnose writes traces, a summary, and a manifest with a run id") {
    TempDir dir;
    auto dataset = write_sessions(dir, {make_session(1, {"Subtraction"}, 0, "diag1")});
    auto script = write_script(dir, eval_responses(1));
    auto out = dir / "run";

    auto result = run({"diagnose", "--dataset", dataset, "--out", out.string(),
                       "--provider", "scripted", "--allow-scripted", "--script", script});
    REQUIRE(result.code == 0);
    CHECK(result.out.find("diagnosed 1 of 1 session(s)") != std::string::npos);
    CHECK(std::filesystem::exists(out / "traces" / "diag1.trace.jsonl"));
    CHECK(count_lines(read_file(out / "summary.jsonl")) == 1);

    json manifest = json::parse(read_file(out / "manifest.json"));
    CHECK(manifest["command"] == "diagnose");
    CHECK(manifest["run_id"].is_string());
    CHECK_FALSE(manifest["run_id"].get<std::string>().empty());
    CHECK(manifest["dataset"]["sessions"] == 1);
    CHECK(manifest["provider"] == "scripted");
    CHECK(manifest["template_versions"].size() == 10);
}

TEST_CASE("diagnose can filter to named sessions and complains about unknown ids") {
    TempDir dir;
    auto dataset = write_sessions(dir, {make_session(1, {"Subtraction"}, 0, "a"),
                                        make_session(1, {"Subtraction"}, 0, "b")});
    SUBCASE("filter keeps one") {
        auto script = write_script(dir, eval_responses(1));
        auto result = run({"diagnose", "--dataset", dataset, "--out", (dir / "one").string(),
                           "--session", "b", "--provider", "scripted", "--allow-scripted",
                           "--script", script});
        REQUIRE(result.code == 0);
        CHECK(std::filesystem::exists(dir / "one" / "traces" / "b.trace.jsonl"));
        CHECK_FALSE(std::filesystem::exists(dir / "one" / "traces" / "a.trace.jsonl"));
    }
    SUBCASE("unknown id is a runtime error") {
        auto script = write_script(dir, eval_responses(1));
        auto result = run({"diagnose", "--dataset", dataset, "--out", (dir / "none").string(),
                           "--session", "ghost", "--provider", "scripted", "--allow-scripted",
                           "--script", script});
        CHECK(result.code == 2);
        CHECK(result.err.find("session 'ghost' not found in dataset") != std::string::npos);
    }
}

TEST_CASE("evaluate produces metrics, records, and traces from a scripted run") {
    TempDir dir;
    auto dataset = write_sessions(dir, {make_session(1, {"Subtraction"}, 0, "cli1"),
                                        make_session(1, {"Subtraction"}, 1, "cli2")});
    auto script = write_script(dir, eval_responses(2));
    auto out = dir / "run";

    auto result = run({"evaluate", "--dataset", dataset, "--out", out.string(),
                       "--provider", "scripted", "--allow-scripted", "--script", script});
    REQUIRE(result.code == 0);
    // not_mastered against labels 0 and 1 -> one tn, one fn.
    CHECK(result.out.find("ACC 50.00  F1 0.00  (n=2, failures=0)") != std::string::npos);

    json metrics = json::parse(read_file(out / "metrics.json"));
    CHECK(metrics["n"] == 2);
    CHECK(metrics["acc"] == 50.0);
    CHECK(metrics["confusion"]["tn"] == 1);
    CHECK(metrics["confusion"]["fn"] == 1);
    CHECK(metrics["config"]["reflection_signal"] == "none");

    std::string csv = read_file(out / "records.csv");
    CHECK(count_lines(csv) == 3);
    CHECK(csv.find("cli1,0,0") != std::string::npos);
    CHECK(csv.find("cli2,0,1") != std::string::npos);
    CHECK(std::filesystem::exists(out / "traces" / "cli1.trace.jsonl"));
    CHECK(std::filesystem::exists(out / "report.md"));
}

TEST_CASE("ablate runs all four variants with distinct component settings") {
    TempDir dir;
    auto dataset = write_sessions(dir, {make_session(1, {"Subtraction"}, 0, "ab1")});
    // Consumption order: full -> no_previewer -> no_reflector -> both off.
    json responses = json::array();
    auto push_full = [&] {
        responses.push_back(json::parse(zpd_reply({"Subtraction"})));
        responses.push_back(json::parse(state_reply({"Subtraction"})));
        responses.push_back(json::parse(prediction_reply()));
    };
    auto push_no_previewer = [&] {
        responses.push_back(json::parse(state_reply({"Subtraction"})));
        responses.push_back(json::parse(prediction_reply()));
    };
    push_full();
    push_no_previewer();
    push_full();
    push_no_previewer();
    auto script = write_script(dir, responses);
    auto out = dir / "run";

    auto result = run({"ablate", "--dataset", dataset, "--out", out.string(),
                       "--provider", "scripted", "--allow-scripted", "--script", script});
    REQUIRE(result.code == 0);

    json combined = json::parse(read_file(out / "ablation.json"));
    REQUIRE(combined.size() == 4);
    std::vector<std::pair<bool, bool>> seen;
    std::vector<std::string> names;
    for (const auto& entry : combined) {
        names.push_back(entry["variant"]);
        const json& config = entry["metrics"]["config"];
        seen.emplace_back(config["enable_previewer"].get<bool>(), config["enable_reflector"].get<bool>());
        CHECK(entry["metrics"]["n"] == 1);
        CHECK(std::filesystem::exists(out / entry["variant"].get<std::string>() / "metrics.json"));
    }
    CHECK(names == std::vector<std::string>{"full", "no_previewer", "no_reflector",
                                            "no_previewer_no_reflector"});
    CHECK(seen == std::vector<std::pair<bool, bool>>{
                      {true, true}, {false, true}, {true, false}, {false, false}});

    std::string table = read_file(out / "ablation.md");
    CHECK(table.find("| Variant | ACC | F1 | n |") != std::string::npos);
    CHECK(table.find("| no_previewer_no_reflector |") != std::string::npos);
}

TEST_CASE("simulate compares the three policies on label-0 sessions") {
    TempDir dir;
    auto session = make_session(2, {"Subtraction"}, 0, "simcli");
    auto mastered = make_session(2, {"Subtraction"}, 1, "already-mastered");
    auto dataset = write_sessions(dir, {session, mastered});

    const char* wrong = "I think it is 290.";
    const char* right = "Oh wait, the answer is 280.";
    const char* tutor = "Check the tens digit.";
    json responses = json::array();
    // parld episode: student, [preview/analyze/reason], tutor, student, [preview/analyze/reason]
    responses.push_back(wrong);
    responses.push_back(json::parse(zpd_reply({"Subtraction"})));
    responses.push_back(json::parse(state_reply({"Subtraction"})));
    responses.push_back(json::parse(prediction_reply()));
    responses.push_back(tutor);
    responses.push_back(right);
    responses.push_back(json::parse(zpd_reply({"Subtraction"})));
    responses.push_back(json::parse(state_reply({"Subtraction"})));
    responses.push_back(json::parse(prediction_reply()));
    // da episode: student, analyzer, tutor, student
    responses.push_back(wrong);
    responses.push_back(json::parse(state_reply({"Subtraction"})));
    responses.push_back(tutor);
    responses.push_back(right);
    // dr episode: student, tutor, student
    responses.push_back(wrong);
    responses.push_back(tutor);
    responses.push_back(right);
    auto script = write_script(dir, responses);
    auto out = dir / "run";

    auto result = run({"simulate", "--dataset", dataset, "--out", out.string(), "--policies",
                       "parld,da,dr", "--max-reflect", "0", "--provider", "scripted",
                       "--allow-scripted", "--script", script});
    REQUIRE(result.code == 0);
    CHECK(result.out.find("| Policy | CR | Avg. T | Int. Avg. T |") != std::string::npos);
    CHECK(result.out.find("| parld | 100.00 | 2.00 | 2.00 |") != std::string::npos);

    CHECK(count_lines(read_file(out / "episodes.jsonl")) == 3);
    json metrics = json::parse(read_file(out / "sim_metrics.json"));
    REQUIRE(metrics["metrics"].size() == 3);
    CHECK(metrics["metrics"][0]["policy"] == "parld");
    CHECK(metrics["metrics"][1]["policy"] == "da");
    CHECK(metrics["metrics"][2]["policy"] == "dr");
    for (const auto& row : metrics["metrics"]) {
        CHECK(row["cr"] == 100.0);
        CHECK(row["avg_t"] == 2.0);
    }
    CHECK(metrics["failures"].empty());

    json manifest = json::parse(read_file(out / "manifest.json"));
    CHECK(manifest["command"] == "simulate");
    CHECK(manifest["pool_filter"] == true);
    // The mastered session never entered the pool.
    CHECK(manifest["dataset"]["sessions"] == 1);
}

TEST_CASE("simulate refuses an empty pool") {
    TempDir dir;
    auto dataset = write_sessions(dir, {make_session(2, {"Subtraction"}, 1, "done")});
    auto result = run({"simulate", "--dataset", dataset, "--out", (dir / "run").string(),
                       "--provider", "scripted", "--allow-scripted",
                       "--script", write_script(dir, json::array())});
    CHECK(result.code == 2);
    CHECK(result.err.find("no sessions left to simulate") != std::string::npos);
}

TEST_CASE("record and replay-check reproduce a run byte for byte") {
    TempDir dir;
    MockChatServer server(routed_handler(RoutedScript{}));
    EnvVar base("PARLD_API_BASE", server.base_url());
    EnvVar key("PARLD_API_KEY", "test-key");

    auto dataset = write_sessions(dir, {make_session(1, {"Subtraction"}, 0, "rc1")});
    auto cassette = (dir / "cassette.json").string();
    auto out = dir / "run";

    auto recorded = run({"evaluate", "--dataset", dataset, "--out", out.string(),
                         "--provider", "http", "--cassette", cassette});
    REQUIRE(recorded.code == 0);
    size_t live_hits = server.hits();
    CHECK(live_hits == 3);  // previewer, analyzer, reasoner
    REQUIRE(std::filesystem::exists(cassette));

    json manifest = json::parse(read_file(out / "manifest.json"));
    CHECK(manifest["provider"] == "http");
    CHECK(manifest["cassette"] == cassette);

    auto check = run({"replay-check", "--run", out.string()});
    CHECK(check.code == 0);
    CHECK(check.out.find("identical: replay reproduced") != std::string::npos);
    CHECK(server.hits() == live_hits);  // replay stayed offline

    SUBCASE("a drifted dataset is refused") {
        std::string content = read_file(dataset);
        write_file(dataset, content + "\n");
        auto drifted = run({"replay-check", "--run", out.string()});
        CHECK(drifted.code == 2);
        CHECK(drifted.err.find("changed since the recorded run (digest mismatch)") != std::string::npos);
    }
}

TEST_CASE("replay-check needs a recorded manifest") {
    TempDir dir;
    auto result = run({"replay-check", "--run", (dir / "missing").string()});
    CHECK(result.code == 2);
    CHECK(result.err.find("no manifest.json under") != std::string::npos);
}
