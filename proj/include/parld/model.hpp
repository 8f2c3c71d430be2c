#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace parld {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct KnowledgeConcept {
    std::string id;
    std::string name;

    bool operator==(const KnowledgeConcept&) const = default;
};

struct Question {
    std::string id;
    std::string text;
    std::string answer;
    std::vector<KnowledgeConcept> kcs;

    std::vector<std::string> kc_ids() const;
    bool has_kc(std::string_view kc_id) const;

    bool operator==(const Question&) const = default;
};

struct DialogueTurn {
    int index = 0;  // 1-based
    std::string tutor_utterance;
    std::string student_utterance;

    bool operator==(const DialogueTurn&) const = default;
};

enum class Split { Train, Test, Unsplit };

std::string to_string(Split split);
std::optional<Split> split_from_string(std::string_view text);

struct Session {
    std::string session_id;
    std::string student_id;
    Question question;
    std::vector<DialogueTurn> turns;
    int final_label = 0;  // 1 = mastered, 0 = not mastered
    Split split = Split::Unsplit;
    std::map<std::string, std::string> meta;

    bool operator==(const Session&) const = default;
};

// Throws Error when a structural invariant is broken (gapped turn indices,
// final_label outside {0,1}, duplicate KC ids, empty question text).
void validate_session(const Session& session);

// Unknown is reserved for the initial state S_0; analyzer outputs use the
// closed Good/Fair/Poor scale.
enum class MasteryLevel { Good, Fair, Poor, Unknown };

std::string to_string(MasteryLevel level);
std::optional<MasteryLevel> mastery_from_string(std::string_view text);

struct KcDiagnosis {
    MasteryLevel level = MasteryLevel::Unknown;
    std::string explanation;

    bool operator==(const KcDiagnosis&) const = default;
};

struct KcEntry {
    std::string kc_id;
    KcDiagnosis diagnosis;

    bool operator==(const KcEntry&) const = default;
};

// Per-KC mastery map at one turn. Entries are kept in the question's KC list
// order; key set must equal the question's KC id set exactly.
struct CognitiveState {
    int turn_index = 0;  // 0 = initial
    std::vector<KcEntry> entries;

    const KcDiagnosis* find(std::string_view kc_id) const;
    bool covers(const Question& question) const;

    bool operator==(const CognitiveState&) const = default;
};

struct BehaviorItem {
    std::string description;
    std::vector<std::string> kc_ids;

    bool operator==(const BehaviorItem&) const = default;
};

// Three-zone behavior preview (Mastered / Acquirable / Inaccessible).
struct ZpdBehaviorSchema {
    int turn_index = 0;
    std::vector<BehaviorItem> mastered;
    std::vector<BehaviorItem> acquirable;
    std::vector<BehaviorItem> inaccessible;

    bool empty() const { return mastered.empty() && acquirable.empty() && inaccessible.empty(); }

    bool operator==(const ZpdBehaviorSchema&) const = default;
};

enum class OutcomeLabel { Mastered, NotMastered };

std::string to_string(OutcomeLabel label);
std::optional<OutcomeLabel> outcome_from_string(std::string_view text);

struct PerformancePrediction {
    int turn_index = 0;
    OutcomeLabel label = OutcomeLabel::NotMastered;
    std::string rationale;

    int binary() const { return label == OutcomeLabel::Mastered ? 1 : 0; }

    bool operator==(const PerformancePrediction&) const = default;
};

enum class ReflectionJudgment { Accurate, Inaccurate };

std::string to_string(ReflectionJudgment judgment);
std::optional<ReflectionJudgment> judgment_from_string(std::string_view text);

struct ReflectionResult {
    ReflectionJudgment judgment = ReflectionJudgment::Accurate;
    std::string critique;
    int attempt = 1;

    bool operator==(const ReflectionResult&) const = default;
};

// Audit record of one agent-level LLM call (ids are content digests).
struct ExchangeRecord {
    std::string agent;  // previewer | analyzer | reasoner | reflector | tutor | student | judge | kc_tagger
    std::string template_id;
    std::string template_version;
    std::string request_id;
    std::string response_id;
    int attempts = 1;

    bool operator==(const ExchangeRecord&) const = default;
};

// Complete per-turn record h_t. `states` holds the initial analysis plus one
// entry per reflection rerun; the turn's current state is the last element.
struct TurnTrace {
    int turn_index = 0;
    DialogueTurn dialogue;
    std::optional<ZpdBehaviorSchema> schema;  // absent under the no-previewer ablation
    std::vector<CognitiveState> states;
    std::vector<PerformancePrediction> predictions;
    std::vector<ReflectionResult> reflections;
    std::vector<ExchangeRecord> exchanges;

    const CognitiveState& current_state() const;
    const PerformancePrediction& current_prediction() const;

    bool operator==(const TurnTrace&) const = default;
};

// Session-scoped append-only buffer of turn traces (M_t).
struct ConversationMemory {
    std::string session_id;
    std::vector<TurnTrace> traces;

    bool operator==(const ConversationMemory&) const = default;
};

enum class ReflectionSignal { None, PerTurnCorrectness, FinalLabel };

std::string to_string(ReflectionSignal signal);
std::optional<ReflectionSignal> signal_from_string(std::string_view text);

struct EngineConfig {
    std::string model_name = "gpt-4.1";
    double temperature = 0.0;
    int max_num = 2;  // reflection budget per turn
    bool enable_previewer = true;
    bool enable_reflector = true;
    ReflectionSignal reflection_signal = ReflectionSignal::None;
    int structured_retry_limit = 2;

    bool operator==(const EngineConfig&) const = default;
};

// S_0: every KC mapped to Unknown with a fixed "no evidence yet" explanation.
CognitiveState initial_state(const Question& question);

// M_t = M_{t-1} with the trace appended; trace.turn_index must be the next
// contiguous index.
ConversationMemory memory_append(const ConversationMemory& memory, TurnTrace trace);

// Drops all traces; the session_id is kept so the buffer can be reused.
ConversationMemory memory_purge(const ConversationMemory& memory);

// Canonical text form of a cognitive state. Round-trip is identity; entry
// order is preserved (states built by the engine follow the question's KC
// list order).
std::string serialize_state(const CognitiveState& state);
CognitiveState deserialize_state(const std::string& text);

// KC id matching: exact match first, then one case-insensitive pass.
// Returns the canonical id from `kcs`, or nullopt for a foreign id.
std::optional<std::string> match_kc_id(std::string_view raw, const std::vector<KnowledgeConcept>& kcs);

std::string trim(std::string_view text);
std::string lowercase(std::string_view text);

}  // namespace parld
