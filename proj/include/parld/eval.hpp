#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "parld/engine.hpp"

namespace parld {

struct EvalRecord {
    std::string session_id;
    int predicted = 0;  // Mastered -> 1
    int label = 0;
    std::string rationale;

    bool operator==(const EvalRecord&) const = default;
};

struct Confusion {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    int tn = 0;

    bool operator==(const Confusion&) const = default;
};

// ACC and the positive-class (mastered = 1) binary F1, both as percentages.
// 0/0 counts as 0 for F1.
struct MetricsReport {
    size_t n = 0;
    double acc = 0.0;
    double f1 = 0.0;
    Confusion confusion;
    EngineConfig config_snapshot;

    bool operator==(const MetricsReport&) const = default;
};

Confusion confusion_from_records(const std::vector<EvalRecord>& records);
MetricsReport compute_metrics(const std::vector<EvalRecord>& records, const EngineConfig& config);

struct EvalOptions {
    int workers = 1;
    std::filesystem::path trace_dir;  // when set, per-session trace files land here
};

struct EvalOutcome {
    std::vector<EvalRecord> records;  // session order, failed sessions omitted
    MetricsReport report;
    std::vector<std::pair<std::string, std::string>> failures;  // (session_id, reason); excluded from n
    std::vector<std::string> warnings;
    std::vector<SessionRunResult> runs;  // same order as records
};

// Final-turn prediction over the whole set. Prediction runs without the
// reflection loop: a non-none reflection_signal is overridden with a warning.
// Per-session engine failures are collected, not fatal.
EvalOutcome evaluate(const std::vector<Session>& sessions, Provider& provider,
                     const PromptRegistry& prompts, const EngineConfig& config,
                     const EvalOptions& options = {});

// Writes metrics.json, records.csv (header `session_id,predicted,label`) and
// report.md under out_dir.
void emit_report(const EvalOutcome& outcome, const std::filesystem::path& out_dir);

json metrics_report_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const json& j);

}  // namespace parld
