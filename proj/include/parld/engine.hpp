#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <utility>

#include "parld/json_codec.hpp"
#include "parld/model.hpp"
#include "parld/prompts.hpp"
#include "parld/provider.hpp"
#include "parld/structured.hpp"

namespace parld {

struct SessionRunResult {
    std::string session_id;
    ConversationMemory memory;
    PerformancePrediction final_prediction;
    EngineConfig config_snapshot;
    std::vector<ExchangeRecord> exchange_log;
    std::vector<std::string> warnings;
};

// Per-turn observed performance signal (1 = performed correctly). Used for
// ReflectionSignal::PerTurnCorrectness, where the signal comes from outside
// the offline record (e.g. the simulation loop).
using ObservedSignalFn = std::function<std::optional<int>(const Session&, const DialogueTurn&)>;

struct EngineOptions {
    int memory_context_budget = 24000;  // chars of reflector context before older traces are summarized
    std::filesystem::path artifact_dir;  // when set, aborted runs leave a partial-trace file here
    ObservedSignalFn observed_signal;    // PerTurnCorrectness source
};

// Orchestrates the preview -> analyze -> reason chain and the reflection
// loop. One Engine drives one session at a time; create one per worker.
class Engine {
public:
    Engine(Provider& provider, const PromptRegistry& prompts, EngineConfig config,
           EngineOptions options = {});

    ZpdBehaviorSchema preview_behavior(const CognitiveState& prev_state, const Question& question);

    CognitiveState analyze_state(const CognitiveState& prev_state,
                                 const std::optional<ZpdBehaviorSchema>& schema,
                                 const DialogueTurn& turn, const Question& question,
                                 const std::optional<ReflectionResult>& critique);

    PerformancePrediction reason_performance(const CognitiveState& state, const Question& question);

    ReflectionResult reflect_chain(const ConversationMemory& memory);

    // One full turn: preview (if enabled) -> analyze -> reason, then the
    // bounded reflection loop while the prediction disagrees with the
    // observed signal. Returns the trace and the turn's final state.
    std::pair<TurnTrace, CognitiveState> run_turn(const ConversationMemory& memory,
                                                  const CognitiveState& prev_state,
                                                  const DialogueTurn& turn, const Question& question,
                                                  std::optional<int> observed);

    SessionRunResult run_session(const Session& session);

    const EngineConfig& config() const { return config_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const std::vector<ExchangeRecord>& pending_exchanges() const { return pending_exchanges_; }

    // Reflector context text for a memory buffer; exposed for audit/tests.
    std::string build_memory_context(const ConversationMemory& memory) const;

private:
    CompletionRequest make_request(const std::vector<ChatMessage>& messages, bool json_mode) const;
    StructuredResult call_structured(TemplateId template_id, const char* agent, const SlotMap& slots,
                                     SchemaId schema);
    void warn(std::string message);

    Provider& provider_;
    const PromptRegistry& prompts_;
    EngineConfig config_;
    EngineOptions options_;
    std::vector<std::string> warnings_;
    std::vector<ExchangeRecord> pending_exchanges_;
};

// Slot-value builders shared by the engine and the simulation driver.
std::string render_question_slot(const Question& question);
std::string render_kcs_slot(const Question& question);
std::string render_dialogue_slot(const DialogueTurn& turn);
std::string render_transcript_slot(const std::vector<DialogueTurn>& turns);

// Writes runs/{run_id}/{session_id}.trace.jsonl (one TurnTrace per line).
void write_session_trace(const std::filesystem::path& run_dir, const SessionRunResult& result);

// One summary.jsonl line per session run. Deterministic content only.
json session_summary_json(const SessionRunResult& result);

}  // namespace parld
