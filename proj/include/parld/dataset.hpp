#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "parld/json_codec.hpp"
#include "parld/model.hpp"
#include "parld/prompts.hpp"
#include "parld/provider.hpp"

namespace parld {

enum class DatasetSource { MathDial, Comta, Canonical };

std::string to_string(DatasetSource source);

struct IngestReport {
    DatasetSource source = DatasetSource::Canonical;
    size_t total_raw = 0;
    size_t emitted = 0;
    std::vector<std::pair<std::string, std::string>> dropped;  // (raw_id, reason)
    std::vector<std::string> warnings;
};

struct IngestResult {
    std::vector<Session> sessions;
    IngestReport report;
};

// MathDial adapter. Accepts the official CSV or a JSONL mirror with the same
// field names (qid, question, ground_truth, student_profile, conversation,
// self-correctness). Malformed records are dropped with a reason, never
// aborting the batch.
IngestResult load_mathdial(const std::filesystem::path& path, Split split);

// CoMTA adapter. Accepts a JSON array or JSONL of conversations with a
// data: [{role, content}] transcript. With a sidecar the emitted set is
// restricted to the listed session ids (goal-clarity filter).
IngestResult load_comta(const std::filesystem::path& path,
                        const std::optional<std::filesystem::path>& goal_sidecar);

// Canonical sessions.jsonl re-ingest; validates every record.
IngestResult load_canonical(const std::filesystem::path& path);

// Greedy (tutor, student) pairing of a labeled transcript. Consecutive
// same-speaker utterances are joined with a newline. Sets leading_student /
// truncated_final flags.
struct PairedTranscript {
    std::vector<DialogueTurn> turns;
    bool leading_student = false;
    bool truncated_final = false;
};
PairedTranscript pair_transcript(const std::vector<std::pair<bool, std::string>>& utterances);  // (is_tutor, text)

struct TagOptions {
    std::string model_name = "gpt-4.1";
    double temperature = 0.0;
    int structured_retry_limit = 2;
};

struct TagReport {
    size_t already_tagged = 0;
    size_t from_cache = 0;
    size_t newly_tagged = 0;
    std::vector<std::pair<std::string, std::string>> failed;  // (question_id, reason)
};

// Fills in missing KC sets via the kc_tagger prompt. Results are cached by
// question id at cache_path, so reruns make zero provider calls. Questions
// that already carry KCs are untouched.
TagReport tag_kcs(std::vector<Session>& sessions, Provider& provider, const PromptRegistry& prompts,
                  const std::filesystem::path& cache_path, const TagOptions& options = {});

json ingest_report_json(const IngestReport& report);

}  // namespace parld
