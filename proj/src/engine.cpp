#include "parld/engine.hpp"

#include <fstream>
#include <sstream>

#include "parld/json_codec.hpp"

namespace parld {

namespace {

const char* agent_for(TemplateId id) {
    switch (id) {
        case TemplateId::Previewer: return "previewer";
        case TemplateId::Analyzer: return "analyzer";
        case TemplateId::Reasoner: return "reasoner";
        case TemplateId::Reflector: return "reflector";
        default: return "other";
    }
}

}  // namespace

std::string render_question_slot(const Question& question) {
    return question.text;
}

std::string render_kcs_slot(const Question& question) {
    std::ostringstream out;
    for (const auto& kc : question.kcs) {
        out << "- " << kc.id;
        if (!kc.name.empty() && kc.name != kc.id) out << ": " << kc.name;
        out << "\n";
    }
    return out.str();
}

std::string render_dialogue_slot(const DialogueTurn& turn) {
    auto line = [](const char* speaker, const std::string& text) {
        return std::string(speaker) + ": " + (text.empty() ? "[empty — no utterance recorded]" : text);
    };
    return line("Tutor", turn.tutor_utterance) + "\n" + line("Student", turn.student_utterance);
}

std::string render_transcript_slot(const std::vector<DialogueTurn>& turns) {
    std::ostringstream out;
    for (const auto& turn : turns) {
        if (!turn.tutor_utterance.empty()) out << "Tutor: " << turn.tutor_utterance << "\n";
        if (!turn.student_utterance.empty()) out << "Student: " << turn.student_utterance << "\n";
    }
    return out.str();
}

Engine::Engine(Provider& provider, const PromptRegistry& prompts, EngineConfig config,
               EngineOptions options)
    : provider_(provider), prompts_(prompts), config_(std::move(config)), options_(std::move(options)) {
    if (config_.max_num < 0) throw Error("max_num must be >= 0");
    if (config_.temperature < 0) throw Error("temperature must be >= 0");
}

CompletionRequest Engine::make_request(const std::vector<ChatMessage>& messages, bool json_mode) const {
    CompletionRequest request;
    request.model = config_.model_name;
    request.messages = messages;
    request.temperature = config_.temperature;
    request.json_mode = json_mode;
    return request;
}

void Engine::warn(std::string message) {
    warnings_.push_back(std::move(message));
}

StructuredResult Engine::call_structured(TemplateId template_id, const char* agent, const SlotMap& slots,
                                         SchemaId schema) {
    const PromptTemplate& tpl = prompts_.get(template_id);
    auto messages = prompts_.render(template_id, slots);
    CompletionRequest request = make_request(messages, true);
    StructuredResult result = complete_structured(provider_, request, schema, config_.structured_retry_limit);
    pending_exchanges_.push_back({agent, to_string(template_id), tpl.version, canonical_key(request),
                                  fnv1a64_hex(result.last_response.content), result.attempts});
    return result;
}

ZpdBehaviorSchema Engine::preview_behavior(const CognitiveState& prev_state, const Question& question) {
    if (!prev_state.covers(question)) throw Error("previewer: prior state does not cover the question's KCs");
    SlotMap slots{{"question", render_question_slot(question)},
                  {"kcs", render_kcs_slot(question)},
                  {"state", serialize_state(prev_state)}};
    StructuredResult result =
        call_structured(TemplateId::Previewer, agent_for(TemplateId::Previewer), slots, SchemaId::ZpdSchema);

    ZpdBehaviorSchema schema;
    schema.turn_index = prev_state.turn_index + 1;
    auto take_zone = [&](const char* zone, std::vector<BehaviorItem>& out) {
        for (const auto& raw : result.value.at(zone)) {
            BehaviorItem item;
            item.description = raw.at("description").get<std::string>();
            for (const auto& id : raw.at("kc_ids")) {
                auto matched = match_kc_id(id.get<std::string>(), question.kcs);
                if (matched) {
                    item.kc_ids.push_back(*matched);
                } else {
                    warn("previewer: dropped foreign KC id '" + id.get<std::string>() + "' in zone " + zone);
                }
            }
            if (item.kc_ids.empty()) {
                warn("previewer: dropped behavior item with no known KCs: " + item.description);
            } else {
                out.push_back(std::move(item));
            }
        }
    };
    take_zone("mastered", schema.mastered);
    take_zone("acquirable", schema.acquirable);
    take_zone("inaccessible", schema.inaccessible);
    if (schema.empty()) throw Error("previewer: schema empty after dropping foreign KCs");
    return schema;
}

CognitiveState Engine::analyze_state(const CognitiveState& prev_state,
                                     const std::optional<ZpdBehaviorSchema>& schema,
                                     const DialogueTurn& turn, const Question& question,
                                     const std::optional<ReflectionResult>& critique) {
    std::string schema_section;
    if (schema) {
        schema_section = "\nPredicted ZPD-Behavior schema:\n" + to_json(*schema).dump() + "\n";
    }
    std::string critique_section;
    if (critique) {
        critique_section =
            "\nA reflection on the previous diagnosis of this turn returned judgment \"" +
            to_string(critique->judgment) + "\"";
        if (!critique->critique.empty()) critique_section += " with critique:\n" + critique->critique;
        critique_section += "\nRe-diagnose this turn taking the reflection into account.\n";
    }
    SlotMap slots{{"question", render_question_slot(question)},
                  {"kcs", render_kcs_slot(question)},
                  {"state", serialize_state(prev_state)},
                  {"schema_section", schema_section},
                  {"dialogue", render_dialogue_slot(turn)},
                  {"critique_section", critique_section}};
    StructuredResult result =
        call_structured(TemplateId::Analyzer, agent_for(TemplateId::Analyzer), slots, SchemaId::CognitiveState);

    // Re-key the model's entries against K_e, then assemble in KC list order.
    std::map<std::string, KcDiagnosis> matched;
    for (const auto& [raw_id, entry] : result.value.items()) {
        auto canonical = match_kc_id(raw_id, question.kcs);
        if (!canonical) {
            warn("analyzer: dropped entry for unknown KC '" + raw_id + "'");
            continue;
        }
        KcDiagnosis diagnosis{*mastery_from_string(entry.at("level").get<std::string>()),
                              entry.at("explanation").get<std::string>()};
        matched[*canonical] = std::move(diagnosis);
    }

    CognitiveState state;
    state.turn_index = turn.index;
    for (const auto& kc : question.kcs) {
        auto it = matched.find(kc.id);
        if (it != matched.end()) {
            state.entries.push_back({kc.id, it->second});
        } else {
            const KcDiagnosis* prev = prev_state.find(kc.id);
            KcDiagnosis carried{prev ? prev->level : MasteryLevel::Unknown, "carried forward"};
            warn("analyzer: KC '" + kc.id + "' missing from output, carried forward");
            state.entries.push_back({kc.id, std::move(carried)});
        }
    }
    return state;
}

PerformancePrediction Engine::reason_performance(const CognitiveState& state, const Question& question) {
    if (!state.covers(question)) throw Error("reasoner: state does not cover the question's KCs");
    SlotMap slots{{"question", render_question_slot(question)}, {"state", serialize_state(state)}};
    StructuredResult result =
        call_structured(TemplateId::Reasoner, agent_for(TemplateId::Reasoner), slots, SchemaId::Prediction);

    PerformancePrediction prediction;
    prediction.turn_index = state.turn_index;
    prediction.label = *outcome_from_string(result.value.at("prediction").get<std::string>());
    prediction.rationale = result.value.at("rationale").get<std::string>();
    return prediction;
}

std::string Engine::build_memory_context(const ConversationMemory& memory) const {
    auto full_trace = [](const TurnTrace& trace) {
        std::ostringstream out;
        out << "Turn " << trace.turn_index << ":\n";
        out << render_dialogue_slot(trace.dialogue) << "\n";
        out << "ZPD-Behavior schema: " << (trace.schema ? to_json(*trace.schema).dump() : "(none)") << "\n";
        out << "Cognitive state: " << serialize_state(trace.current_state()) << "\n";
        const auto& p = trace.current_prediction();
        out << "Prediction: " << to_string(p.label) << " — " << p.rationale << "\n";
        if (!trace.reflections.empty())
            out << "Reflections already run this turn: " << trace.reflections.size() << "\n";
        return out.str();
    };
    auto summary_line = [](const TurnTrace& trace) {
        std::ostringstream out;
        out << "Turn " << trace.turn_index << " (summary): predicted "
            << to_string(trace.current_prediction().label) << "; levels";
        for (const auto& e : trace.current_state().entries)
            out << " " << e.kc_id << "=" << to_string(e.diagnosis.level);
        out << "\n";
        return out.str();
    };

    std::string full;
    for (const auto& trace : memory.traces) full += full_trace(trace) + "\n";
    if (static_cast<int>(full.size()) <= options_.memory_context_budget) return full;

    // Over budget: keep the last 3 traces verbatim, one summary line each
    // for the rest.
    std::string out;
    size_t keep_from = memory.traces.size() > 3 ? memory.traces.size() - 3 : 0;
    for (size_t i = 0; i < memory.traces.size(); ++i) {
        if (i < keep_from) {
            out += summary_line(memory.traces[i]);
        } else {
            out += full_trace(memory.traces[i]) + "\n";
        }
    }
    return out;
}

ReflectionResult Engine::reflect_chain(const ConversationMemory& memory) {
    if (memory.traces.empty()) throw Error("reflect_chain: memory is empty");
    if (memory.traces.back().predictions.empty())
        throw Error("reflect_chain: last trace has no prediction");
    SlotMap slots{{"memory_context", build_memory_context(memory)}};
    StructuredResult result =
        call_structured(TemplateId::Reflector, agent_for(TemplateId::Reflector), slots, SchemaId::Reflection);

    ReflectionResult reflection;
    reflection.judgment = *judgment_from_string(result.value.at("judgment").get<std::string>());
    reflection.critique = result.value.at("critique").get<std::string>();
    return reflection;
}

std::pair<TurnTrace, CognitiveState> Engine::run_turn(const ConversationMemory& memory,
                                                      const CognitiveState& prev_state,
                                                      const DialogueTurn& turn, const Question& question,
                                                      std::optional<int> observed) {
    int expected = static_cast<int>(memory.traces.size()) + 1;
    if (turn.index != expected)
        throw Error("run_turn: turn index " + std::to_string(turn.index) + ", expected " +
                    std::to_string(expected));

    size_t exchanges_mark = pending_exchanges_.size();

    TurnTrace trace;
    trace.turn_index = turn.index;
    trace.dialogue = turn;
    if (config_.enable_previewer) trace.schema = preview_behavior(prev_state, question);

    CognitiveState state = analyze_state(prev_state, trace.schema, turn, question, std::nullopt);
    PerformancePrediction prediction = reason_performance(state, question);
    trace.states.push_back(state);
    trace.predictions.push_back(prediction);

    const bool reflective =
        config_.enable_reflector && config_.reflection_signal != ReflectionSignal::None && observed.has_value();
    while (reflective && prediction.binary() != *observed &&
           static_cast<int>(trace.reflections.size()) < config_.max_num) {
        // The reflector sees M_{t-1} plus the in-progress trace h_t.
        ConversationMemory audited = memory_append(memory, trace);
        ReflectionResult reflection = reflect_chain(audited);
        reflection.attempt = static_cast<int>(trace.reflections.size()) + 1;
        trace.reflections.push_back(reflection);

        state = analyze_state(prev_state, trace.schema, turn, question, reflection);
        prediction = reason_performance(state, question);
        trace.states.push_back(state);
        trace.predictions.push_back(prediction);
    }

    trace.exchanges.assign(pending_exchanges_.begin() + exchanges_mark, pending_exchanges_.end());
    pending_exchanges_.resize(exchanges_mark);
    return {std::move(trace), std::move(state)};
}

SessionRunResult Engine::run_session(const Session& session) {
    validate_session(session);
    if (session.turns.empty()) throw Error("session " + session.session_id + " has no turns");
    if (session.question.kcs.empty()) throw Error("session " + session.session_id + ": question has no KCs");

    warnings_.clear();
    pending_exchanges_.clear();

    ConversationMemory memory = memory_purge(ConversationMemory{session.session_id, {}});
    CognitiveState state = initial_state(session.question);

    auto observed_for = [&](const DialogueTurn& turn) -> std::optional<int> {
        switch (config_.reflection_signal) {
            case ReflectionSignal::None: return std::nullopt;
            case ReflectionSignal::FinalLabel: return session.final_label;
            case ReflectionSignal::PerTurnCorrectness:
                return options_.observed_signal ? options_.observed_signal(session, turn) : std::nullopt;
        }
        return std::nullopt;
    };

    for (const auto& turn : session.turns) {
        try {
            auto [trace, next_state] = run_turn(memory, state, turn, session.question, observed_for(turn));
            memory = memory_append(memory, std::move(trace));
            state = std::move(next_state);
        } catch (const Error& e) {
            if (!options_.artifact_dir.empty()) {
                json partial{{"session_id", session.session_id},
                             {"aborted_at_turn", turn.index},
                             {"error", e.what()},
                             {"memory", to_json(memory)}};
                write_file(options_.artifact_dir / (session.session_id + ".partial.json"),
                           partial.dump(2) + "\n");
            }
            throw Error("session " + session.session_id + " aborted at turn " +
                        std::to_string(turn.index) + ": " + e.what());
        }
    }

    SessionRunResult result;
    result.session_id = session.session_id;
    result.final_prediction = memory.traces.back().current_prediction();
    result.config_snapshot = config_;
    for (const auto& trace : memory.traces)
        result.exchange_log.insert(result.exchange_log.end(), trace.exchanges.begin(), trace.exchanges.end());
    result.memory = std::move(memory);
    result.warnings = warnings_;
    return result;
}

void write_session_trace(const std::filesystem::path& run_dir, const SessionRunResult& result) {
    std::filesystem::create_directories(run_dir);
    std::ofstream out(run_dir / (result.session_id + ".trace.jsonl"));
    if (!out) throw Error("cannot write trace file for session " + result.session_id);
    for (const auto& trace : result.memory.traces) out << to_json(trace).dump() << "\n";
}

json session_summary_json(const SessionRunResult& result) {
    return json{{"session_id", result.session_id},
                {"turns", result.memory.traces.size()},
                {"final_prediction", to_json(result.final_prediction)},
                {"exchanges", result.exchange_log.size()},
                {"warnings", result.warnings}};
}

}  // namespace parld
