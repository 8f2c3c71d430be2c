#include "parld/model.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "parld/json_codec.hpp"

namespace parld {

std::string trim(std::string_view text) {
    size_t begin = 0;
    size_t end = text.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
    return std::string(text.substr(begin, end - begin));
}

std::string lowercase(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> Question::kc_ids() const {
    std::vector<std::string> ids;
    ids.reserve(kcs.size());
    for (const auto& kc : kcs) ids.push_back(kc.id);
    return ids;
}

bool Question::has_kc(std::string_view kc_id) const {
    return std::any_of(kcs.begin(), kcs.end(), [&](const KnowledgeConcept& kc) { return kc.id == kc_id; });
}

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Test: return "test";
        case Split::Unsplit: return "unsplit";
    }
    return "unsplit";
}

std::optional<Split> split_from_string(std::string_view text) {
    if (text == "train") return Split::Train;
    if (text == "test") return Split::Test;
    if (text == "unsplit") return Split::Unsplit;
    return std::nullopt;
}

void validate_session(const Session& session) {
    if (session.session_id.empty()) throw Error("session has empty session_id");
    if (session.question.text.empty())
        throw Error("session " + session.session_id + ": question text empty");
    if (session.final_label != 0 && session.final_label != 1)
        throw Error("session " + session.session_id + ": final_label must be 0 or 1");
    for (size_t i = 0; i < session.turns.size(); ++i) {
        if (session.turns[i].index != static_cast<int>(i) + 1)
            throw Error("session " + session.session_id + ": turn indices must be exactly 1..T");
    }
    std::set<std::string> seen;
    for (const auto& kc : session.question.kcs) {
        if (kc.id.empty()) throw Error("session " + session.session_id + ": KC with empty id");
        if (!seen.insert(kc.id).second)
            throw Error("session " + session.session_id + ": duplicate KC id '" + kc.id + "'");
    }
}

std::string to_string(MasteryLevel level) {
    switch (level) {
        case MasteryLevel::Good: return "Good";
        case MasteryLevel::Fair: return "Fair";
        case MasteryLevel::Poor: return "Poor";
        case MasteryLevel::Unknown: return "Unknown";
    }
    return "Unknown";
}

std::optional<MasteryLevel> mastery_from_string(std::string_view text) {
    std::string t = lowercase(trim(text));
    if (t == "good") return MasteryLevel::Good;
    if (t == "fair") return MasteryLevel::Fair;
    if (t == "poor") return MasteryLevel::Poor;
    if (t == "unknown") return MasteryLevel::Unknown;
    return std::nullopt;
}

const KcDiagnosis* CognitiveState::find(std::string_view kc_id) const {
    for (const auto& entry : entries) {
        if (entry.kc_id == kc_id) return &entry.diagnosis;
    }
    return nullptr;
}

bool CognitiveState::covers(const Question& question) const {
    if (entries.size() != question.kcs.size()) return false;
    for (const auto& kc : question.kcs) {
        if (find(kc.id) == nullptr) return false;
    }
    return true;
}

std::string to_string(OutcomeLabel label) {
    return label == OutcomeLabel::Mastered ? "mastered" : "not_mastered";
}

std::optional<OutcomeLabel> outcome_from_string(std::string_view text) {
    std::string t = lowercase(trim(text));
    if (t == "mastered") return OutcomeLabel::Mastered;
    if (t == "not_mastered" || t == "not mastered" || t == "not-mastered") return OutcomeLabel::NotMastered;
    return std::nullopt;
}

std::string to_string(ReflectionJudgment judgment) {
    return judgment == ReflectionJudgment::Accurate ? "accurate" : "inaccurate";
}

std::optional<ReflectionJudgment> judgment_from_string(std::string_view text) {
    std::string t = lowercase(trim(text));
    if (t == "accurate") return ReflectionJudgment::Accurate;
    if (t == "inaccurate" || t == "not accurate") return ReflectionJudgment::Inaccurate;
    return std::nullopt;
}

const CognitiveState& TurnTrace::current_state() const {
    if (states.empty()) throw Error("turn trace has no states");
    return states.back();
}

const PerformancePrediction& TurnTrace::current_prediction() const {
    if (predictions.empty()) throw Error("turn trace has no predictions");
    return predictions.back();
}

std::string to_string(ReflectionSignal signal) {
    switch (signal) {
        case ReflectionSignal::None: return "none";
        case ReflectionSignal::PerTurnCorrectness: return "per_turn_correctness";
        case ReflectionSignal::FinalLabel: return "final_label";
    }
    return "none";
}

std::optional<ReflectionSignal> signal_from_string(std::string_view text) {
    if (text == "none") return ReflectionSignal::None;
    if (text == "per_turn_correctness") return ReflectionSignal::PerTurnCorrectness;
    if (text == "final_label") return ReflectionSignal::FinalLabel;
    return std::nullopt;
}

CognitiveState initial_state(const Question& question) {
    if (question.kcs.empty()) throw Error("question has no KCs");
    CognitiveState state;
    state.turn_index = 0;
    state.entries.reserve(question.kcs.size());
    for (const auto& kc : question.kcs) {
        state.entries.push_back({kc.id, {MasteryLevel::Unknown, "no evidence yet"}});
    }
    return state;
}

ConversationMemory memory_append(const ConversationMemory& memory, TurnTrace trace) {
    int expected = static_cast<int>(memory.traces.size()) + 1;
    if (trace.turn_index != expected) {
        throw Error("non-contiguous trace: got turn_index " + std::to_string(trace.turn_index) +
                    ", expected " + std::to_string(expected));
    }
    ConversationMemory next = memory;
    next.traces.push_back(std::move(trace));
    return next;
}

ConversationMemory memory_purge(const ConversationMemory& memory) {
    ConversationMemory next;
    next.session_id = memory.session_id;
    return next;
}

std::string serialize_state(const CognitiveState& state) {
    return to_json(state).dump();
}

CognitiveState deserialize_state(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("cannot parse cognitive state: ") + e.what());
    }
    return state_from_json(j);
}

std::optional<std::string> match_kc_id(std::string_view raw, const std::vector<KnowledgeConcept>& kcs) {
    std::string wanted = trim(raw);
    for (const auto& kc : kcs) {
        if (kc.id == wanted) return kc.id;
    }
    std::string lowered = lowercase(wanted);
    for (const auto& kc : kcs) {
        if (lowercase(kc.id) == lowered) return kc.id;
    }
    return std::nullopt;
}

}  // namespace parld
