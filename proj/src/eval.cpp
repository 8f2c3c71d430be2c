#include "parld/eval.hpp"

#include <atomic>
#include <cstdio>
#include <sstream>
#include <thread>

#include "parld/json_codec.hpp"

namespace parld {

Confusion confusion_from_records(const std::vector<EvalRecord>& records) {
    Confusion c;
    for (const auto& r : records) {
        if (r.predicted == 1 && r.label == 1) ++c.tp;
        else if (r.predicted == 1 && r.label == 0) ++c.fp;
        else if (r.predicted == 0 && r.label == 1) ++c.fn;
        else ++c.tn;
    }
    return c;
}

MetricsReport compute_metrics(const std::vector<EvalRecord>& records, const EngineConfig& config) {
    MetricsReport report;
    report.n = records.size();
    report.confusion = confusion_from_records(records);
    const Confusion& c = report.confusion;
    if (report.n > 0) report.acc = 100.0 * (c.tp + c.tn) / static_cast<double>(report.n);
    int f1_denom = 2 * c.tp + c.fp + c.fn;
    if (f1_denom > 0) report.f1 = 100.0 * 2 * c.tp / static_cast<double>(f1_denom);
    report.config_snapshot = config;
    return report;
}

EvalOutcome evaluate(const std::vector<Session>& sessions, Provider& provider,
                     const PromptRegistry& prompts, const EngineConfig& config,
                     const EvalOptions& options) {
    EvalOutcome outcome;
    EngineConfig effective = config;
    if (effective.reflection_signal != ReflectionSignal::None) {
        outcome.warnings.push_back("evaluation predicts final-turn performance only: reflection_signal '" +
                                   to_string(effective.reflection_signal) + "' overridden to 'none'");
        effective.reflection_signal = ReflectionSignal::None;
    }

    struct Slot {
        std::optional<SessionRunResult> run;
        std::string failure;
    };
    std::vector<Slot> slots(sessions.size());
    std::atomic<size_t> cursor{0};

    EngineOptions engine_options;
    engine_options.artifact_dir = options.trace_dir;

    auto worker = [&] {
        Engine engine(provider, prompts, effective, engine_options);
        for (;;) {
            size_t i = cursor.fetch_add(1);
            if (i >= sessions.size()) return;
            try {
                SessionRunResult run = engine.run_session(sessions[i]);
                if (!options.trace_dir.empty()) write_session_trace(options.trace_dir, run);
                slots[i].run = std::move(run);
            } catch (const std::exception& e) {
                slots[i].failure = e.what();
                if (slots[i].failure.empty()) slots[i].failure = "unknown error";
            }
        }
    };

    int workers = std::max(1, options.workers);
    if (workers == 1 || sessions.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (size_t i = 0; i < sessions.size(); ++i) {
        Slot& slot = slots[i];
        if (!slot.run) {
            outcome.failures.emplace_back(sessions[i].session_id, slot.failure);
            continue;
        }
        EvalRecord record;
        record.session_id = sessions[i].session_id;
        record.predicted = slot.run->final_prediction.binary();
        record.label = sessions[i].final_label;
        record.rationale = slot.run->final_prediction.rationale;
        outcome.records.push_back(std::move(record));
        for (const auto& w : slot.run->warnings)
            outcome.warnings.push_back(sessions[i].session_id + ": " + w);
        outcome.runs.push_back(std::move(*slot.run));
    }
    outcome.report = compute_metrics(outcome.records, effective);
    return outcome;
}

json metrics_report_json(const MetricsReport& report) {
    return {{"n", report.n},
            {"acc", report.acc},
            {"f1", report.f1},
            {"confusion",
             {{"tp", report.confusion.tp},
              {"fp", report.confusion.fp},
              {"fn", report.confusion.fn},
              {"tn", report.confusion.tn}}},
            {"config", to_json(report.config_snapshot)}};
}

MetricsReport metrics_report_from_json(const json& j) {
    MetricsReport report;
    report.n = j.at("n").get<size_t>();
    report.acc = j.at("acc").get<double>();
    report.f1 = j.at("f1").get<double>();
    const json& c = j.at("confusion");
    report.confusion = {c.at("tp").get<int>(), c.at("fp").get<int>(), c.at("fn").get<int>(),
                        c.at("tn").get<int>()};
    report.config_snapshot = config_from_json(j.at("config"));
    return report;
}

namespace {

std::string fixed2(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", value);
    return buf;
}

}  // namespace

void emit_report(const EvalOutcome& outcome, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);

    json metrics = metrics_report_json(outcome.report);
    json failures = json::array();
    for (const auto& [id, reason] : outcome.failures)
        failures.push_back({{"session_id", id}, {"reason", reason}});
    metrics["failures"] = failures;
    metrics["warnings"] = outcome.warnings;
    write_file(out_dir / "metrics.json", metrics.dump(2) + "\n");

    std::ostringstream csv;
    csv << "session_id,predicted,label\n";
    for (const auto& r : outcome.records)
        csv << r.session_id << "," << r.predicted << "," << r.label << "\n";
    write_file(out_dir / "records.csv", csv.str());

    const MetricsReport& m = outcome.report;
    std::ostringstream md;
    md << "# Final-turn performance prediction\n\n";
    md << "| Model | ACC | F1 |\n|---|---|---|\n";
    md << "| " << m.config_snapshot.model_name << " | " << fixed2(m.acc) << " | " << fixed2(m.f1)
       << " |\n\n";
    md << "n = " << m.n << " sessions; confusion tp=" << m.confusion.tp << " fp=" << m.confusion.fp
       << " fn=" << m.confusion.fn << " tn=" << m.confusion.tn << ".\n";
    if (!outcome.failures.empty())
        md << outcome.failures.size() << " session(s) failed and are excluded from n (see metrics.json).\n";
    md << "\nF1 is the positive-class (mastered = 1) binary F1; an empty denominator counts as 0.\n";
    write_file(out_dir / "report.md", md.str());
}

}  // namespace parld
