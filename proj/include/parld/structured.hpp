#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "parld/provider.hpp"

namespace parld {

enum class SchemaId { ZpdSchema, CognitiveState, Prediction, Reflection, KcTags };

std::string to_string(SchemaId id);

struct StructuredOutputError : Error {
    std::vector<std::string> raw_attempts;  // every raw model reply, for the audit log
    StructuredOutputError(const std::string& message, std::vector<std::string> attempts)
        : Error(message), raw_attempts(std::move(attempts)) {}
};

// Pulls the first balanced JSON object out of model text (fenced or inline).
// Throws Error when none is found.
nlohmann::json extract_json_object(const std::string& content);

// Validates a parsed object against one of the closed output shapes. Returns
// the normalized value; throws Error with a message suitable for feeding back
// to the model.
nlohmann::json validate_schema(SchemaId id, const nlohmann::json& value);

struct StructuredResult {
    nlohmann::json value;
    int attempts = 1;
    CompletionResponse last_response;
};

// Issues the request and parses/validates the reply. On failure the request
// is reissued with the invalid reply and the validation error appended as a
// corrective exchange, up to retry_limit extra times. Total provider calls
// <= 1 + retry_limit.
StructuredResult complete_structured(Provider& provider, const CompletionRequest& request,
                                     SchemaId schema_id, int retry_limit);

}  // namespace parld
