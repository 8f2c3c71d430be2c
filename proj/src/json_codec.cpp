#include "parld/json_codec.hpp"

#include <fstream>
#include <sstream>

namespace parld {

namespace {

const json& need(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw Error(std::string("missing key '") + key + "'");
    return *it;
}

std::string need_string(const json& j, const char* key) {
    const json& v = need(j, key);
    if (!v.is_string()) throw Error(std::string("key '") + key + "' must be a string");
    return v.get<std::string>();
}

int need_int(const json& j, const char* key) {
    const json& v = need(j, key);
    if (!v.is_number_integer()) throw Error(std::string("key '") + key + "' must be an integer");
    return v.get<int>();
}

}  // namespace

json to_json(const KnowledgeConcept& kc) {
    return json{{"id", kc.id}, {"name", kc.name}};
}

KnowledgeConcept kc_from_json(const json& j) {
    return {need_string(j, "id"), need_string(j, "name")};
}

json to_json(const Question& question) {
    json kcs = json::array();
    for (const auto& kc : question.kcs) kcs.push_back(to_json(kc));
    return json{{"id", question.id}, {"text", question.text}, {"answer", question.answer}, {"kcs", kcs}};
}

Question question_from_json(const json& j) {
    Question q;
    q.id = need_string(j, "id");
    q.text = need_string(j, "text");
    q.answer = need_string(j, "answer");
    for (const auto& kc : need(j, "kcs")) q.kcs.push_back(kc_from_json(kc));
    return q;
}

json to_json(const DialogueTurn& turn) {
    return json{{"index", turn.index}, {"tutor", turn.tutor_utterance}, {"student", turn.student_utterance}};
}

DialogueTurn turn_from_json(const json& j) {
    return {need_int(j, "index"), need_string(j, "tutor"), need_string(j, "student")};
}

json to_json(const Session& session) {
    json turns = json::array();
    for (const auto& t : session.turns) turns.push_back(to_json(t));
    json meta = json::object();
    for (const auto& [k, v] : session.meta) meta[k] = v;
    return json{{"session_id", session.session_id},
                {"student_id", session.student_id},
                {"question", to_json(session.question)},
                {"turns", turns},
                {"final_label", session.final_label},
                {"split", to_string(session.split)},
                {"meta", meta}};
}

Session session_from_json(const json& j) {
    Session s;
    s.session_id = need_string(j, "session_id");
    s.student_id = need_string(j, "student_id");
    s.question = question_from_json(need(j, "question"));
    for (const auto& t : need(j, "turns")) s.turns.push_back(turn_from_json(t));
    s.final_label = need_int(j, "final_label");
    auto split = split_from_string(need_string(j, "split"));
    if (!split) throw Error("unknown split '" + need_string(j, "split") + "'");
    s.split = *split;
    if (auto it = j.find("meta"); it != j.end()) {
        for (const auto& [k, v] : it->items()) {
            if (!v.is_string()) throw Error("meta values must be strings");
            s.meta[k] = v.get<std::string>();
        }
    }
    return s;
}

json to_json(const KcDiagnosis& diagnosis) {
    return json{{"level", to_string(diagnosis.level)}, {"explanation", diagnosis.explanation}};
}

KcDiagnosis diagnosis_from_json(const json& j) {
    std::string level = need_string(j, "level");
    auto parsed = mastery_from_string(level);
    if (!parsed) throw Error("unknown mastery level '" + level + "'");
    return {*parsed, need_string(j, "explanation")};
}

json to_json(const CognitiveState& state) {
    json entries = json::array();
    for (const auto& e : state.entries) {
        entries.push_back(json{{"kc_id", e.kc_id},
                               {"level", to_string(e.diagnosis.level)},
                               {"explanation", e.diagnosis.explanation}});
    }
    return json{{"turn_index", state.turn_index}, {"entries", entries}};
}

CognitiveState state_from_json(const json& j) {
    CognitiveState state;
    state.turn_index = need_int(j, "turn_index");
    for (const auto& e : need(j, "entries")) {
        std::string kc_id = need_string(e, "kc_id");
        std::string level = need_string(e, "level");
        auto parsed = mastery_from_string(level);
        if (!parsed) throw Error("unknown mastery level '" + level + "' for KC '" + kc_id + "'");
        state.entries.push_back({kc_id, {*parsed, need_string(e, "explanation")}});
    }
    return state;
}

json to_json(const BehaviorItem& item) {
    return json{{"description", item.description}, {"kc_ids", item.kc_ids}};
}

BehaviorItem behavior_item_from_json(const json& j) {
    BehaviorItem item;
    item.description = need_string(j, "description");
    for (const auto& id : need(j, "kc_ids")) item.kc_ids.push_back(id.get<std::string>());
    return item;
}

json to_json(const ZpdBehaviorSchema& schema) {
    auto zone = [](const std::vector<BehaviorItem>& items) {
        json out = json::array();
        for (const auto& item : items) out.push_back(to_json(item));
        return out;
    };
    return json{{"turn_index", schema.turn_index},
                {"mastered", zone(schema.mastered)},
                {"acquirable", zone(schema.acquirable)},
                {"inaccessible", zone(schema.inaccessible)}};
}

ZpdBehaviorSchema zpd_schema_from_json(const json& j) {
    ZpdBehaviorSchema schema;
    schema.turn_index = need_int(j, "turn_index");
    for (const auto& item : need(j, "mastered")) schema.mastered.push_back(behavior_item_from_json(item));
    for (const auto& item : need(j, "acquirable")) schema.acquirable.push_back(behavior_item_from_json(item));
    for (const auto& item : need(j, "inaccessible")) schema.inaccessible.push_back(behavior_item_from_json(item));
    return schema;
}

json to_json(const PerformancePrediction& prediction) {
    return json{{"turn_index", prediction.turn_index},
                {"label", to_string(prediction.label)},
                {"rationale", prediction.rationale}};
}

PerformancePrediction prediction_from_json(const json& j) {
    PerformancePrediction p;
    p.turn_index = need_int(j, "turn_index");
    std::string label = need_string(j, "label");
    auto parsed = outcome_from_string(label);
    if (!parsed) throw Error("unknown outcome label '" + label + "'");
    p.label = *parsed;
    p.rationale = need_string(j, "rationale");
    return p;
}

json to_json(const ReflectionResult& reflection) {
    return json{{"judgment", to_string(reflection.judgment)},
                {"critique", reflection.critique},
                {"attempt", reflection.attempt}};
}

ReflectionResult reflection_from_json(const json& j) {
    ReflectionResult r;
    std::string judgment = need_string(j, "judgment");
    auto parsed = judgment_from_string(judgment);
    if (!parsed) throw Error("unknown judgment '" + judgment + "'");
    r.judgment = *parsed;
    r.critique = need_string(j, "critique");
    r.attempt = need_int(j, "attempt");
    return r;
}

json to_json(const ExchangeRecord& record) {
    return json{{"agent", record.agent},
                {"template_id", record.template_id},
                {"template_version", record.template_version},
                {"request_id", record.request_id},
                {"response_id", record.response_id},
                {"attempts", record.attempts}};
}

ExchangeRecord exchange_from_json(const json& j) {
    ExchangeRecord r;
    r.agent = need_string(j, "agent");
    r.template_id = need_string(j, "template_id");
    r.template_version = need_string(j, "template_version");
    r.request_id = need_string(j, "request_id");
    r.response_id = need_string(j, "response_id");
    r.attempts = need_int(j, "attempts");
    return r;
}

json to_json(const TurnTrace& trace) {
    json states = json::array();
    for (const auto& s : trace.states) states.push_back(to_json(s));
    json predictions = json::array();
    for (const auto& p : trace.predictions) predictions.push_back(to_json(p));
    json reflections = json::array();
    for (const auto& r : trace.reflections) reflections.push_back(to_json(r));
    json exchanges = json::array();
    for (const auto& e : trace.exchanges) exchanges.push_back(to_json(e));
    return json{{"turn_index", trace.turn_index},
                {"dialogue", to_json(trace.dialogue)},
                {"schema", trace.schema ? to_json(*trace.schema) : json(nullptr)},
                {"states", states},
                {"predictions", predictions},
                {"reflections", reflections},
                {"exchanges", exchanges}};
}

TurnTrace trace_from_json(const json& j) {
    TurnTrace t;
    t.turn_index = need_int(j, "turn_index");
    t.dialogue = turn_from_json(need(j, "dialogue"));
    if (const json& schema = need(j, "schema"); !schema.is_null()) {
        t.schema = zpd_schema_from_json(schema);
    }
    for (const auto& s : need(j, "states")) t.states.push_back(state_from_json(s));
    for (const auto& p : need(j, "predictions")) t.predictions.push_back(prediction_from_json(p));
    for (const auto& r : need(j, "reflections")) t.reflections.push_back(reflection_from_json(r));
    for (const auto& e : need(j, "exchanges")) t.exchanges.push_back(exchange_from_json(e));
    return t;
}

json to_json(const ConversationMemory& memory) {
    json traces = json::array();
    for (const auto& t : memory.traces) traces.push_back(to_json(t));
    return json{{"session_id", memory.session_id}, {"traces", traces}};
}

ConversationMemory memory_from_json(const json& j) {
    ConversationMemory m;
    m.session_id = need_string(j, "session_id");
    for (const auto& t : need(j, "traces")) m.traces.push_back(trace_from_json(t));
    return m;
}

json to_json(const EngineConfig& config) {
    return json{{"model_name", config.model_name},
                {"temperature", config.temperature},
                {"max_num", config.max_num},
                {"enable_previewer", config.enable_previewer},
                {"enable_reflector", config.enable_reflector},
                {"reflection_signal", to_string(config.reflection_signal)},
                {"structured_retry_limit", config.structured_retry_limit}};
}

EngineConfig config_from_json(const json& j) {
    EngineConfig c;
    if (auto it = j.find("model_name"); it != j.end()) c.model_name = it->get<std::string>();
    if (auto it = j.find("temperature"); it != j.end()) c.temperature = it->get<double>();
    if (auto it = j.find("max_num"); it != j.end()) c.max_num = it->get<int>();
    if (auto it = j.find("enable_previewer"); it != j.end()) c.enable_previewer = it->get<bool>();
    if (auto it = j.find("enable_reflector"); it != j.end()) c.enable_reflector = it->get<bool>();
    if (auto it = j.find("reflection_signal"); it != j.end()) {
        auto parsed = signal_from_string(it->get<std::string>());
        if (!parsed) throw Error("unknown reflection_signal '" + it->get<std::string>() + "'");
        c.reflection_signal = *parsed;
    }
    if (auto it = j.find("structured_retry_limit"); it != j.end()) c.structured_retry_limit = it->get<int>();
    if (c.max_num < 0) throw Error("max_num must be >= 0");
    if (c.temperature < 0) throw Error("temperature must be >= 0");
    return c;
}

std::vector<Session> load_sessions_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open sessions file: " + path.string());
    std::vector<Session> sessions;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            sessions.push_back(session_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return sessions;
}

void save_sessions_jsonl(const std::filesystem::path& path, const std::vector<Session>& sessions) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write sessions file: " + path.string());
    for (const auto& s : sessions) out << to_json(s).dump() << "\n";
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path.string());
    out << content;
}

}  // namespace parld
