#include "parld/structured.hpp"

#include <algorithm>
#include <set>

namespace parld {

std::string to_string(SchemaId id) {
    switch (id) {
        case SchemaId::ZpdSchema: return "zpd_schema";
        case SchemaId::CognitiveState: return "cognitive_state";
        case SchemaId::Prediction: return "prediction";
        case SchemaId::Reflection: return "reflection";
        case SchemaId::KcTags: return "kc_tags";
    }
    return "unknown";
}

nlohmann::json extract_json_object(const std::string& content) {
    for (size_t start = content.find('{'); start != std::string::npos; start = content.find('{', start + 1)) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (size_t i = start; i < content.size(); ++i) {
            char c = content[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    std::string candidate = content.substr(start, i - start + 1);
                    try {
                        return nlohmann::json::parse(candidate);
                    } catch (const nlohmann::json::exception&) {
                        break;  // try the next '{'
                    }
                }
            }
        }
    }
    throw Error("reply contains no parseable JSON object");
}

namespace {

std::string need_nonempty_string(const nlohmann::json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string())
        throw Error(where + " must contain a string field \"" + key + "\"");
    std::string value = it->get<std::string>();
    if (trim(value).empty()) throw Error(where + " field \"" + key + "\" must be non-empty");
    return value;
}

nlohmann::json validate_zone(const nlohmann::json& schema, const char* zone) {
    nlohmann::json out = nlohmann::json::array();
    auto it = schema.find(zone);
    if (it == schema.end()) return out;  // omitted zone = empty
    if (!it->is_array()) throw Error(std::string("zone \"") + zone + "\" must be an array");
    for (const auto& item : *it) {
        if (!item.is_object()) throw Error(std::string("zone \"") + zone + "\" items must be objects");
        std::string description = need_nonempty_string(item, "description", std::string("zone \"") + zone + "\" item");
        auto ids_it = item.find("kc_ids");
        if (ids_it == item.end() || !ids_it->is_array() || ids_it->empty())
            throw Error(std::string("zone \"") + zone + "\" item needs a non-empty \"kc_ids\" array");
        nlohmann::json ids = nlohmann::json::array();
        for (const auto& id : *ids_it) {
            if (!id.is_string() || trim(id.get<std::string>()).empty())
                throw Error(std::string("zone \"") + zone + "\" kc_ids must be non-empty strings");
            ids.push_back(trim(id.get<std::string>()));
        }
        out.push_back({{"description", description}, {"kc_ids", ids}});
    }
    return out;
}

nlohmann::json validate_zpd(const nlohmann::json& value) {
    if (!value.is_object()) throw Error("ZPD schema must be a JSON object");
    nlohmann::json out{{"mastered", validate_zone(value, "mastered")},
                       {"acquirable", validate_zone(value, "acquirable")},
                       {"inaccessible", validate_zone(value, "inaccessible")}};
    if (out["mastered"].empty() && out["acquirable"].empty() && out["inaccessible"].empty())
        throw Error("ZPD schema must have at least one non-empty zone");
    std::set<std::string> seen;
    for (const char* zone : {"mastered", "acquirable", "inaccessible"}) {
        for (const auto& item : out[zone]) {
            if (!seen.insert(item.dump()).second)
                throw Error("behavior item duplicated across zones: " + item["description"].get<std::string>());
        }
    }
    return out;
}

nlohmann::json validate_cognitive_state(const nlohmann::json& value) {
    if (!value.is_object() || value.empty())
        throw Error("cognitive state must be a non-empty JSON object keyed by KC id");
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [kc, entry] : value.items()) {
        if (!entry.is_object()) throw Error("entry for KC \"" + kc + "\" must be an object");
        auto level_it = entry.find("level");
        if (level_it == entry.end() || !level_it->is_string())
            throw Error("entry for KC \"" + kc + "\" needs a string \"level\"");
        auto level = mastery_from_string(level_it->get<std::string>());
        if (!level || *level == MasteryLevel::Unknown)
            throw Error("level for KC \"" + kc + "\" must be one of Good, Fair, Poor (got \"" +
                        level_it->get<std::string>() + "\")");
        std::string explanation = need_nonempty_string(entry, "explanation", "entry for KC \"" + kc + "\"");
        out[kc] = {{"level", to_string(*level)}, {"explanation", explanation}};
    }
    return out;
}

nlohmann::json validate_prediction(const nlohmann::json& value) {
    if (!value.is_object()) throw Error("prediction must be a JSON object");
    auto pred_it = value.find("prediction");
    if (pred_it == value.end() || !pred_it->is_string())
        throw Error("prediction needs a string field \"prediction\"");
    auto label = outcome_from_string(pred_it->get<std::string>());
    if (!label)
        throw Error("\"prediction\" must be \"mastered\" or \"not_mastered\" (got \"" +
                    pred_it->get<std::string>() + "\")");
    std::string rationale = need_nonempty_string(value, "rationale", "prediction");
    return {{"prediction", to_string(*label)}, {"rationale", rationale}};
}

nlohmann::json validate_reflection(const nlohmann::json& value) {
    if (!value.is_object()) throw Error("reflection must be a JSON object");
    auto judgment_it = value.find("judgment");
    if (judgment_it == value.end() || !judgment_it->is_string())
        throw Error("reflection needs a string field \"judgment\"");
    auto judgment = judgment_from_string(judgment_it->get<std::string>());
    if (!judgment)
        throw Error("\"judgment\" must be \"accurate\" or \"inaccurate\" (got \"" +
                    judgment_it->get<std::string>() + "\")");
    std::string critique;
    if (auto it = value.find("critique"); it != value.end() && it->is_string()) critique = it->get<std::string>();
    if (*judgment == ReflectionJudgment::Inaccurate && trim(critique).empty())
        throw Error("an \"inaccurate\" judgment needs a non-empty \"critique\"");
    return {{"judgment", to_string(*judgment)}, {"critique", critique}};
}

nlohmann::json validate_kc_tags(const nlohmann::json& value) {
    if (!value.is_object()) throw Error("KC tags must be a JSON object");
    auto it = value.find("kcs");
    if (it == value.end() || !it->is_array()) throw Error("KC tags need an array field \"kcs\"");
    std::vector<std::string> names;
    std::set<std::string> seen;
    for (const auto& name : *it) {
        if (!name.is_string() || trim(name.get<std::string>()).empty())
            throw Error("\"kcs\" entries must be non-empty strings");
        std::string trimmed = trim(name.get<std::string>());
        if (seen.insert(lowercase(trimmed)).second) names.push_back(trimmed);
    }
    if (names.empty() || names.size() > 5)
        throw Error("\"kcs\" must hold between 1 and 5 distinct concepts (got " +
                    std::to_string(names.size()) + ")");
    return {{"kcs", names}};
}

}  // namespace

nlohmann::json validate_schema(SchemaId id, const nlohmann::json& value) {
    switch (id) {
        case SchemaId::ZpdSchema: return validate_zpd(value);
        case SchemaId::CognitiveState: return validate_cognitive_state(value);
        case SchemaId::Prediction: return validate_prediction(value);
        case SchemaId::Reflection: return validate_reflection(value);
        case SchemaId::KcTags: return validate_kc_tags(value);
    }
    throw Error("unknown schema id");
}

StructuredResult complete_structured(Provider& provider, const CompletionRequest& request,
                                     SchemaId schema_id, int retry_limit) {
    if (retry_limit < 0) retry_limit = 0;
    validate_request(request);
    CompletionRequest current = request;
    std::vector<std::string> raw_attempts;
    std::string last_error;
    for (int attempt = 1; attempt <= retry_limit + 1; ++attempt) {
        CompletionResponse response = provider.complete(current);
        raw_attempts.push_back(response.content);
        try {
            nlohmann::json object = extract_json_object(response.content);
            nlohmann::json value = validate_schema(schema_id, object);
            return {std::move(value), attempt, std::move(response)};
        } catch (const Error& e) {
            last_error = e.what();
            if (attempt > retry_limit) break;
            current.messages.push_back({Role::Assistant, response.content});
            current.messages.push_back(
                {Role::User, std::string("Your previous reply was not valid: ") + e.what() +
                                 ". Reply again with exactly one JSON object of the required shape."});
        }
    }
    // message first: the move below may empty raw_attempts before it is read
    std::string message = "structured-output failure for schema " + to_string(schema_id) + " after " +
                          std::to_string(raw_attempts.size()) + " attempts: " + last_error;
    throw StructuredOutputError(message, std::move(raw_attempts));
}

}  // namespace parld
