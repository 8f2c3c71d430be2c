#include "parld/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "parld/csv.hpp"
#include "parld/json_codec.hpp"
#include "parld/structured.hpp"

namespace parld {

std::string to_string(DatasetSource source) {
    switch (source) {
        case DatasetSource::MathDial: return "mathdial";
        case DatasetSource::Comta: return "comta";
        case DatasetSource::Canonical: return "canonical";
    }
    return "unknown";
}

namespace {

bool starts_with_ci(std::string_view text, std::string_view prefix) {
    if (text.size() < prefix.size()) return false;
    for (size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(text[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    }
    return true;
}

// "Teacher: (probing) Can you..." -> (is_tutor=true, "Can you...").
// Returns nullopt when no speaker label is present.
std::optional<std::pair<bool, std::string>> split_speaker(const std::string& utterance) {
    static const std::vector<std::pair<std::string, bool>> labels = {
        {"teacher:", true}, {"tutor:", true}, {"student:", false},
    };
    std::string trimmed = trim(utterance);
    for (const auto& [label, is_tutor] : labels) {
        if (!starts_with_ci(trimmed, label)) continue;
        std::string text = trim(trimmed.substr(label.size()));
        if (is_tutor && !text.empty() && text.front() == '(') {
            // MathDial prefixes teacher turns with a dialog-act tag; drop it.
            size_t close = text.find(')');
            if (close != std::string::npos && close <= 40) text = trim(text.substr(close + 1));
        }
        return std::make_pair(is_tutor, text);
    }
    return std::nullopt;
}

std::string field_as_string(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return "";
    if (it->is_string()) return it->get<std::string>();
    return it->dump();
}

// MathDial annotates the closing probe "Did the student correct themselves?"
// A plain yes is the only mastered outcome; a qualified yes still means the
// student needed to be carried over the line.
std::optional<int> label_from_self_correctness(const std::string& raw) {
    std::string value = lowercase(trim(raw));
    if (value == "yes") return 1;
    if (starts_with_ci(value, "yes")) return 0;
    if (starts_with_ci(value, "no")) return 0;
    return std::nullopt;
}

struct RawMathDialRecord {
    std::string raw_id;
    std::string qid;
    std::string question;
    std::string ground_truth;
    std::string student_profile;
    std::string conversation;
    std::string self_correctness;
};

std::optional<Session> convert_mathdial(const RawMathDialRecord& raw, Split split, size_t ordinal,
                                        std::string* reason) {
    if (trim(raw.question).empty()) {
        *reason = "missing question text";
        return std::nullopt;
    }
    if (trim(raw.conversation).empty()) {
        *reason = "missing conversation";
        return std::nullopt;
    }
    auto label = label_from_self_correctness(raw.self_correctness);
    if (!label) {
        *reason = "unrecognized correctness annotation '" + trim(raw.self_correctness) + "'";
        return std::nullopt;
    }

    std::vector<std::pair<bool, std::string>> utterances;
    std::string rest = raw.conversation;
    size_t pos = 0;
    while (pos <= rest.size()) {
        size_t eom = rest.find("|EOM|", pos);
        std::string piece = rest.substr(pos, eom == std::string::npos ? std::string::npos : eom - pos);
        pos = eom == std::string::npos ? rest.size() + 1 : eom + 5;
        if (trim(piece).empty()) continue;
        auto speaker = split_speaker(piece);
        if (!speaker) {
            if (utterances.empty()) {
                *reason = "conversation opens without a speaker label";
                return std::nullopt;
            }
            // Continuation of the previous utterance (stray |EOM| inside a turn).
            utterances.back().second += "\n" + trim(piece);
            continue;
        }
        utterances.push_back(std::move(*speaker));
    }
    if (utterances.empty()) {
        *reason = "conversation has no utterances";
        return std::nullopt;
    }

    PairedTranscript paired = pair_transcript(utterances);

    Session session;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu", ordinal);
    session.session_id = "mathdial-" + to_string(split) + "-" + buf;
    session.student_id = session.session_id + "-student";
    session.question.id = raw.qid.empty() ? session.session_id + "-q" : "mathdial-q" + raw.qid;
    session.question.text = trim(raw.question);
    session.question.answer = trim(raw.ground_truth);
    session.turns = paired.turns;
    session.final_label = *label;
    session.split = split;
    if (!trim(raw.student_profile).empty()) session.meta["student_profile"] = trim(raw.student_profile);
    if (!raw.qid.empty()) session.meta["qid"] = raw.qid;
    if (paired.leading_student) session.meta["leading_student"] = "true";
    if (paired.truncated_final) session.meta["truncated_final"] = "true";

    try {
        validate_session(session);
    } catch (const Error& e) {
        *reason = e.what();
        return std::nullopt;
    }
    return session;
}

size_t find_column(const std::vector<std::string>& header, const std::vector<std::string>& names) {
    for (size_t i = 0; i < header.size(); ++i) {
        std::string key = lowercase(trim(header[i]));
        for (const auto& name : names) {
            if (key == name) return i;
        }
    }
    return std::string::npos;
}

std::vector<RawMathDialRecord> read_mathdial_csv(const std::string& content) {
    auto rows = parse_csv(content);
    if (rows.empty()) return {};
    const auto& header = rows.front();
    size_t c_qid = find_column(header, {"qid", "id"});
    size_t c_question = find_column(header, {"question"});
    size_t c_answer = find_column(header, {"ground_truth", "answer"});
    size_t c_profile = find_column(header, {"student_profile", "profile"});
    size_t c_conv = find_column(header, {"conversation", "dialog", "dialogue"});
    size_t c_label = find_column(header, {"self-correctness", "self_correctness"});
    auto cell = [](const std::vector<std::string>& row, size_t col) {
        return col == std::string::npos || col >= row.size() ? std::string() : row[col];
    };
    std::vector<RawMathDialRecord> records;
    for (size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && trim(row[0]).empty()) continue;
        RawMathDialRecord rec;
        rec.raw_id = "row" + std::to_string(r);
        rec.qid = trim(cell(row, c_qid));
        rec.question = cell(row, c_question);
        rec.ground_truth = cell(row, c_answer);
        rec.student_profile = cell(row, c_profile);
        rec.conversation = cell(row, c_conv);
        rec.self_correctness = cell(row, c_label);
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<RawMathDialRecord> read_mathdial_jsonl(const std::string& content) {
    std::vector<RawMathDialRecord> records;
    std::istringstream in(content);
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        RawMathDialRecord rec;
        rec.raw_id = "line" + std::to_string(n);
        try {
            json j = json::parse(line);
            rec.qid = trim(field_as_string(j, "qid"));
            rec.question = field_as_string(j, "question");
            rec.ground_truth = field_as_string(j, "ground_truth");
            if (rec.ground_truth.empty()) rec.ground_truth = field_as_string(j, "answer");
            rec.student_profile = field_as_string(j, "student_profile");
            rec.conversation = field_as_string(j, "conversation");
            rec.self_correctness = field_as_string(j, "self-correctness");
            if (rec.self_correctness.empty()) rec.self_correctness = field_as_string(j, "self_correctness");
        } catch (const json::exception&) {
            // conversation left empty -> dropped downstream with a clear reason
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<std::string> read_id_list(const std::filesystem::path& path) {
    std::string content = read_file(path);
    std::vector<std::string> ids;
    std::string trimmed = trim(content);
    if (!trimmed.empty() && trimmed.front() == '[') {
        for (const auto& v : json::parse(trimmed)) {
            if (v.is_string()) ids.push_back(v.get<std::string>());
            else ids.push_back(v.dump());
        }
        return ids;
    }
    std::istringstream in(content);
    std::string line;
    while (std::getline(in, line)) {
        std::string id = trim(line);
        if (id.empty() || id.front() == '#') continue;
        ids.push_back(id);
    }
    return ids;
}

}  // namespace

PairedTranscript pair_transcript(const std::vector<std::pair<bool, std::string>>& utterances) {
    std::vector<std::pair<bool, std::string>> merged;
    for (const auto& [is_tutor, text] : utterances) {
        if (!merged.empty() && merged.back().first == is_tutor)
            merged.back().second += "\n" + text;
        else
            merged.emplace_back(is_tutor, text);
    }
    PairedTranscript out;
    size_t i = 0;
    int index = 1;
    if (!merged.empty() && !merged.front().first) {
        out.leading_student = true;
        DialogueTurn turn;
        turn.index = index++;
        turn.student_utterance = merged.front().second;
        out.turns.push_back(std::move(turn));
        i = 1;
    }
    while (i < merged.size()) {
        DialogueTurn turn;
        turn.index = index++;
        turn.tutor_utterance = merged[i].second;
        if (i + 1 < merged.size()) {
            turn.student_utterance = merged[i + 1].second;
            i += 2;
        } else {
            out.truncated_final = true;
            i += 1;
        }
        out.turns.push_back(std::move(turn));
    }
    return out;
}

IngestResult load_mathdial(const std::filesystem::path& path, Split split) {
    std::string content = read_file(path);
    std::string ext = lowercase(path.extension().string());
    std::vector<RawMathDialRecord> records;
    std::string head = trim(content.substr(0, std::min<size_t>(content.size(), 256)));
    if (ext == ".jsonl" || ext == ".ndjson" || (!head.empty() && head.front() == '{'))
        records = read_mathdial_jsonl(content);
    else
        records = read_mathdial_csv(content);

    IngestResult result;
    result.report.source = DatasetSource::MathDial;
    result.report.total_raw = records.size();
    for (size_t i = 0; i < records.size(); ++i) {
        std::string reason;
        auto session = convert_mathdial(records[i], split, i + 1, &reason);
        if (session)
            result.sessions.push_back(std::move(*session));
        else
            result.report.dropped.emplace_back(records[i].raw_id, reason);
    }
    result.report.emitted = result.sessions.size();
    return result;
}

IngestResult load_comta(const std::filesystem::path& path,
                        const std::optional<std::filesystem::path>& goal_sidecar) {
    std::string content = read_file(path);
    std::vector<json> records;
    std::string trimmed = trim(content);
    if (!trimmed.empty() && trimmed.front() == '[') {
        for (auto& v : json::parse(trimmed)) records.push_back(std::move(v));
    } else {
        std::istringstream in(content);
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            records.push_back(json::parse(line));
        }
    }

    IngestResult result;
    result.report.source = DatasetSource::Comta;
    result.report.total_raw = records.size();

    std::optional<std::set<std::string>> keep;
    if (goal_sidecar) {
        if (!std::filesystem::exists(*goal_sidecar))
            throw Error("goal filter sidecar not found: " + goal_sidecar->string());
        auto ids = read_id_list(*goal_sidecar);
        keep.emplace(ids.begin(), ids.end());
    }

    std::set<std::string> emitted_ids;
    for (size_t i = 0; i < records.size(); ++i) {
        const json& rec = records[i];
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03zu", i + 1);
        std::string session_id = field_as_string(rec, "id");
        if (session_id.empty()) session_id = std::string("comta-") + buf;
        auto drop = [&](const std::string& reason) {
            result.report.dropped.emplace_back(session_id, reason);
        };
        if (!rec.is_object() || !rec.contains("data") || !rec["data"].is_array()) {
            drop("record has no data array");
            continue;
        }

        std::vector<std::pair<bool, std::string>> utterances;
        bool bad_role = false;
        for (const auto& msg : rec["data"]) {
            std::string role = lowercase(trim(field_as_string(msg, "role")));
            std::string text = trim(field_as_string(msg, "content"));
            bool is_tutor;
            if (role == "assistant" || role == "tutor" || role == "teacher") is_tutor = true;
            else if (role == "user" || role == "student") is_tutor = false;
            else {
                drop("unknown role '" + role + "'");
                bad_role = true;
                break;
            }
            utterances.emplace_back(is_tutor, text);
        }
        if (bad_role) continue;
        if (utterances.empty()) {
            drop("empty transcript");
            continue;
        }

        PairedTranscript paired = pair_transcript(utterances);

        Session session;
        session.session_id = session_id;
        session.student_id = session_id + "-student";
        session.question.id = session_id + "-q";
        // CoMTA opens with the student posing the problem; that opening
        // message is the closest thing to a question statement.
        for (const auto& [is_tutor, text] : utterances) {
            if (!is_tutor && !text.empty()) {
                session.question.text = text;
                break;
            }
        }
        if (session.question.text.empty()) session.question.text = utterances.front().second;
        session.turns = paired.turns;
        std::string expected = lowercase(field_as_string(rec, "expected_result"));
        if (expected.find("not") != std::string::npos) session.final_label = 0;
        else if (expected.find("accept") != std::string::npos || expected.find("correct") != std::string::npos)
            session.final_label = 1;
        else {
            session.final_label = 0;
            result.report.warnings.push_back(session_id + ": no expected_result; final_label defaulted to 0");
        }
        session.split = Split::Unsplit;
        if (!field_as_string(rec, "expected_result").empty())
            session.meta["expected_result"] = field_as_string(rec, "expected_result");
        if (!field_as_string(rec, "math_level").empty())
            session.meta["math_level"] = field_as_string(rec, "math_level");
        if (paired.leading_student) session.meta["leading_student"] = "true";
        if (paired.truncated_final) session.meta["truncated_final"] = "true";

        if (keep) {
            if (!keep->count(session.session_id)) {
                drop("not in goal filter");
                continue;
            }
            session.meta["goal_clear"] = "true";
        }

        try {
            validate_session(session);
        } catch (const Error& e) {
            drop(e.what());
            continue;
        }
        emitted_ids.insert(session.session_id);
        result.sessions.push_back(std::move(session));
    }

    if (keep) {
        for (const auto& id : *keep) {
            if (!emitted_ids.count(id))
                result.report.warnings.push_back("goal filter id '" + id + "' not present in input; ignored");
        }
    }
    result.report.emitted = result.sessions.size();
    return result;
}

IngestResult load_canonical(const std::filesystem::path& path) {
    IngestResult result;
    result.report.source = DatasetSource::Canonical;
    std::string content = read_file(path);
    std::istringstream in(content);
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++n;
        ++result.report.total_raw;
        std::string raw_id = "record" + std::to_string(n);
        try {
            Session session = session_from_json(json::parse(line));
            if (!session.session_id.empty()) raw_id = session.session_id;
            validate_session(session);
            result.sessions.push_back(std::move(session));
        } catch (const std::exception& e) {
            result.report.dropped.emplace_back(raw_id, e.what());
        }
    }
    result.report.emitted = result.sessions.size();
    return result;
}

TagReport tag_kcs(std::vector<Session>& sessions, Provider& provider, const PromptRegistry& prompts,
                  const std::filesystem::path& cache_path, const TagOptions& options) {
    std::map<std::string, std::vector<std::string>> cache;
    if (std::filesystem::exists(cache_path)) {
        json j = json::parse(read_file(cache_path));
        for (const auto& [qid, tags] : j.items()) cache[qid] = tags.get<std::vector<std::string>>();
    }

    TagReport report;
    bool dirty = false;
    for (auto& session : sessions) {
        Question& question = session.question;
        if (!question.kcs.empty()) {
            ++report.already_tagged;
            continue;
        }
        auto it = cache.find(question.id);
        if (it != cache.end()) {
            ++report.from_cache;
        } else {
            try {
                SlotMap slots = {{"question", question.text},
                                 {"answer", question.answer.empty() ? "(not provided)" : question.answer}};
                CompletionRequest request;
                request.model = options.model_name;
                request.messages = prompts.render(TemplateId::KcTagger, slots);
                request.temperature = options.temperature;
                request.json_mode = true;
                StructuredResult result =
                    complete_structured(provider, request, SchemaId::KcTags, options.structured_retry_limit);
                auto names = result.value.at("kcs").get<std::vector<std::string>>();
                it = cache.emplace(question.id, std::move(names)).first;
                dirty = true;
                ++report.newly_tagged;
            } catch (const Error& e) {
                report.failed.emplace_back(question.id, e.what());
                continue;
            }
        }
        question.kcs.clear();
        for (const auto& name : it->second) question.kcs.push_back({name, name});
    }

    if (dirty) {
        json j = json::object();
        for (const auto& [qid, tags] : cache) j[qid] = tags;
        write_file(cache_path, j.dump(2) + "\n");
    }
    return report;
}

json ingest_report_json(const IngestReport& report) {
    json dropped = json::array();
    for (const auto& [raw_id, reason] : report.dropped)
        dropped.push_back({{"raw_id", raw_id}, {"reason", reason}});
    return {{"source", to_string(report.source)},
            {"total_raw", report.total_raw},
            {"emitted", report.emitted},
            {"dropped", dropped},
            {"warnings", report.warnings}};
}

}  // namespace parld
