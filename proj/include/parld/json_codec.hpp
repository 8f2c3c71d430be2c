#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "parld/model.hpp"

namespace parld {

using nlohmann::json;

// Canonical JSON forms. Dumps are deterministic: nlohmann keeps object keys
// sorted and we use compact separators; KC-ordered data lives in arrays.
json to_json(const KnowledgeConcept& kc);
json to_json(const Question& question);
json to_json(const DialogueTurn& turn);
json to_json(const Session& session);
json to_json(const KcDiagnosis& diagnosis);
json to_json(const CognitiveState& state);
json to_json(const BehaviorItem& item);
json to_json(const ZpdBehaviorSchema& schema);
json to_json(const PerformancePrediction& prediction);
json to_json(const ReflectionResult& reflection);
json to_json(const ExchangeRecord& record);
json to_json(const TurnTrace& trace);
json to_json(const ConversationMemory& memory);
json to_json(const EngineConfig& config);

KnowledgeConcept kc_from_json(const json& j);
Question question_from_json(const json& j);
DialogueTurn turn_from_json(const json& j);
Session session_from_json(const json& j);
KcDiagnosis diagnosis_from_json(const json& j);
CognitiveState state_from_json(const json& j);
BehaviorItem behavior_item_from_json(const json& j);
ZpdBehaviorSchema zpd_schema_from_json(const json& j);
PerformancePrediction prediction_from_json(const json& j);
ReflectionResult reflection_from_json(const json& j);
ExchangeRecord exchange_from_json(const json& j);
TurnTrace trace_from_json(const json& j);
ConversationMemory memory_from_json(const json& j);
EngineConfig config_from_json(const json& j);

// *.sessions.jsonl: one canonical session record per line.
std::vector<Session> load_sessions_jsonl(const std::filesystem::path& path);
void save_sessions_jsonl(const std::filesystem::path& path, const std::vector<Session>& sessions);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace parld
