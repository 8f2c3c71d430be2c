// Final-turn prediction metrics and the evaluation harness around the engine.
#include <doctest.h>

#include <json.hpp>
#include <random>
#include <sstream>

#include "parld/eval.hpp"
#include "parld/json_codec.hpp"
#include "support.hpp"

using namespace parld;
using namespace parld::testing;
using nlohmann::json;

namespace {

std::vector<EvalRecord> records_from(const std::vector<int>& predicted,
                                     const std::vector<int>& labels) {
    REQUIRE(predicted.size() == labels.size());
    std::vector<EvalRecord> records;
    for (size_t i = 0; i < predicted.size(); ++i)
        records.push_back({"s" + std::to_string(i + 1), predicted[i], labels[i], ""});
    return records;
}

}  // namespace

TEST_CASE("compute_metrics on the mixed worked example") {
    auto records = records_from({1, 1, 0, 0}, {1, 0, 0, 1});
    auto report = compute_metrics(records, EngineConfig{});
    CHECK(report.n == 4);
    CHECK(report.confusion == Confusion{1, 1, 1, 1});
    CHECK(report.acc == 50.0);
    CHECK(report.f1 == 50.0);
}

TEST_CASE("compute_metrics on a perfect run") {
    auto records = records_from({1, 1, 0, 0}, {1, 1, 0, 0});
    auto report = compute_metrics(records, EngineConfig{});
    CHECK(report.confusion == Confusion{2, 0, 0, 2});
    CHECK(report.acc == 100.0);
    CHECK(report.f1 == 100.0);
}

TEST_CASE("compute_metrics when every positive is missed") {
    auto records = records_from({0, 0, 0}, {1, 1, 1});
    auto report = compute_metrics(records, EngineConfig{});
    CHECK(report.confusion == Confusion{0, 0, 3, 0});
    CHECK(report.acc == 0.0);
    CHECK(report.f1 == 0.0);
}

TEST_CASE("compute_metrics keeps the 0/0 conventions") {
    SUBCASE("no records at all") {
        auto report = compute_metrics({}, EngineConfig{});
        CHECK(report.n == 0);
        CHECK(report.acc == 0.0);
        CHECK(report.f1 == 0.0);
    }
    SUBCASE("all true negatives leave the F1 denominator empty") {
        auto records = records_from({0, 0}, {0, 0});
        auto report = compute_metrics(records, EngineConfig{});
        CHECK(report.acc == 100.0);
        CHECK(report.f1 == 0.0);
    }
}

TEST_CASE("compute_metrics matches an independent oracle on 1000 random record sets") {
    std::mt19937 rng(20240817);
    for (int round = 0; round < 1000; ++round) {
        size_t n = rng() % 33;
        std::vector<std::pair<int, int>> pairs;
        std::vector<EvalRecord> records;
        for (size_t i = 0; i < n; ++i) {
            int predicted = static_cast<int>(rng() % 2);
            int label = static_cast<int>(rng() % 2);
            pairs.emplace_back(predicted, label);
            records.push_back({"r" + std::to_string(i), predicted, label, ""});
        }
        auto report = compute_metrics(records, EngineConfig{});
        auto oracle = oracle_eval(pairs);
        REQUIRE(report.confusion == Confusion{oracle.tp, oracle.fp, oracle.fn, oracle.tn});
        REQUIRE(report.acc == oracle.acc);
        REQUIRE(report.f1 == oracle.f1);
    }
}

TEST_CASE("metrics_report_json round-trips through metrics_report_from_json") {
    auto records = records_from({1, 0, 1}, {1, 1, 0});
    EngineConfig config;
    config.model_name = "test-model";
    config.max_num = 3;
    auto report = compute_metrics(records, config);
    auto back = metrics_report_from_json(metrics_report_json(report));
    CHECK(back == report);
}

TEST_CASE("evaluate predicts per session, keeps order, and strips the reflection loop") {
    RoutedScript script;
    script.prediction = "mastered";
    ScriptedProvider provider(routed_handler(script));
    auto registry = PromptRegistry::builtin();

    std::vector<Session> sessions = {make_session(2, {"Subtraction"}, 1, "e1"),
                                     make_session(1, {"Subtraction"}, 0, "e2")};
    EngineConfig config;
    config.reflection_signal = ReflectionSignal::FinalLabel;  // must be overridden
    auto outcome = evaluate(sessions, provider, registry, config);

    REQUIRE(outcome.records.size() == 2);
    CHECK(outcome.records[0].session_id == "e1");
    CHECK(outcome.records[0].predicted == 1);
    CHECK(outcome.records[0].label == 1);
    CHECK(outcome.records[1].session_id == "e2");
    CHECK(outcome.records[1].predicted == 1);
    CHECK(outcome.records[1].label == 0);
    CHECK(outcome.report.n == 2);
    CHECK(outcome.report.confusion == Confusion{1, 1, 0, 0});
    CHECK(outcome.report.acc == 50.0);

    REQUIRE_FALSE(outcome.warnings.empty());
    CHECK(outcome.warnings[0] ==
          "evaluation predicts final-turn performance only: reflection_signal 'final_label' "
          "overridden to 'none'");
    CHECK(outcome.report.config_snapshot.reflection_signal == ReflectionSignal::None);

    // One diagnosis per turn, no second chances: the loop never engages.
    REQUIRE(outcome.runs.size() == 2);
    for (const auto& run : outcome.runs) {
        for (const auto& trace : run.memory.traces) {
            CHECK(trace.states.size() == 1);
            CHECK(trace.predictions.size() == 1);
            CHECK(trace.reflections.empty());
        }
        for (const auto& record : run.exchange_log) CHECK(record.agent != "reflector");
    }

    // The provider only ever saw previewer/analyzer/reasoner traffic.
    for (size_t i = 0; i < provider.request_count(); ++i) {
        auto agent = agent_of(provider.request_at(i));
        CHECK((agent == "previewer" || agent == "analyzer" || agent == "reasoner"));
    }
}

TEST_CASE("evaluate collects per-session failures without aborting the set") {
    RoutedScript script;
    ScriptedProvider provider(routed_handler(script));
    auto registry = PromptRegistry::builtin();

    std::vector<Session> sessions = {make_session(1, {"Subtraction"}, 0, "ok1"),
                                     make_session(0, {"Subtraction"}, 0, "broken"),
                                     make_session(1, {"Subtraction"}, 1, "ok2")};
    auto outcome = evaluate(sessions, provider, registry, EngineConfig{});

    REQUIRE(outcome.records.size() == 2);
    CHECK(outcome.records[0].session_id == "ok1");
    CHECK(outcome.records[1].session_id == "ok2");
    CHECK(outcome.report.n == 2);
    REQUIRE(outcome.failures.size() == 1);
    CHECK(outcome.failures[0].first == "broken");
    CHECK(outcome.failures[0].second == "session broken has no turns");
    REQUIRE(outcome.runs.size() == outcome.records.size());
    CHECK(outcome.runs[1].session_id == "ok2");
}

TEST_CASE("evaluate writes per-session traces when a trace dir is set") {
    TempDir dir;
    RoutedScript script;
    ScriptedProvider provider(routed_handler(script));
    auto registry = PromptRegistry::builtin();
    std::vector<Session> sessions = {make_session(2, {"Subtraction"}, 0, "t1")};
    EvalOptions options;
    options.trace_dir = dir.str();
    auto outcome = evaluate(sessions, provider, registry, EngineConfig{}, options);
    CHECK(outcome.records.size() == 1);
    CHECK(std::filesystem::exists(dir / "t1.trace.jsonl"));
    // One line per turn.
    std::istringstream in(read_file(dir / "t1.trace.jsonl"));
    std::string line;
    size_t lines = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 2);
}

TEST_CASE("evaluate with several workers produces the same records as one") {
    auto make_pool = [] {
        std::vector<Session> sessions;
        for (int i = 1; i <= 6; ++i)
            sessions.push_back(make_session(1, {"Subtraction"}, i % 2, "w" + std::to_string(i)));
        return sessions;
    };
    RoutedScript script;
    auto registry = PromptRegistry::builtin();

    ScriptedProvider serial(routed_handler(script));
    auto base = evaluate(make_pool(), serial, registry, EngineConfig{});

    ScriptedProvider threaded(routed_handler(script));
    EvalOptions options;
    options.workers = 3;
    auto parallel = evaluate(make_pool(), threaded, registry, EngineConfig{}, options);

    CHECK(parallel.records == base.records);
    CHECK(parallel.report == base.report);
}

TEST_CASE("emit_report writes metrics.json, records.csv, and report.md") {
    TempDir dir;
    EvalOutcome outcome;
    outcome.records = records_from({1, 1, 0, 0}, {1, 0, 0, 1});
    outcome.report = compute_metrics(outcome.records, EngineConfig{});
    outcome.failures.emplace_back("lost", "session 'lost' has no turns");
    outcome.warnings.push_back("lost: something minor");
    emit_report(outcome, dir.str());

    json metrics = json::parse(read_file(dir / "metrics.json"));
    CHECK(metrics_report_from_json(metrics) == outcome.report);
    CHECK(metrics["failures"][0]["session_id"] == "lost");
    CHECK(metrics["warnings"][0] == "lost: something minor");

    std::string csv = read_file(dir / "records.csv");
    std::istringstream in(csv);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == outcome.records.size() + 1);
    CHECK(lines[0] == "session_id,predicted,label");
    CHECK(lines[1] == "s1,1,1");
    CHECK(lines[2] == "s2,1,0");

    std::string md = read_file(dir / "report.md");
    CHECK(md.find("| gpt-4.1 | 50.00 | 50.00 |") != std::string::npos);
    CHECK(md.find("1 session(s) failed") != std::string::npos);
}

TEST_CASE("emit_report handles an empty outcome") {
    TempDir dir;
    EvalOutcome outcome;
    outcome.report = compute_metrics({}, EngineConfig{});
    emit_report(outcome, dir.str());
    json metrics = json::parse(read_file(dir / "metrics.json"));
    CHECK(metrics["n"] == 0);
    CHECK(metrics["acc"] == 0.0);
    std::string csv = read_file(dir / "records.csv");
    CHECK(csv == "session_id,predicted,label\n");
    CHECK(std::filesystem::exists(dir / "report.md"));
}
