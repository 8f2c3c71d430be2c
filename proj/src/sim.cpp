#include "parld/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "parld/json_codec.hpp"
#include "parld/structured.hpp"

namespace parld {

std::string to_string(SimPolicy policy) {
    switch (policy) {
        case SimPolicy::Parld: return "parld";
        case SimPolicy::Da: return "da";
        case SimPolicy::Dr: return "dr";
    }
    return "unknown";
}

std::optional<SimPolicy> policy_from_string(std::string_view text) {
    if (text == "parld") return SimPolicy::Parld;
    if (text == "da") return SimPolicy::Da;
    if (text == "dr") return SimPolicy::Dr;
    return std::nullopt;
}

std::string render_state_levels(const CognitiveState& state) {
    std::ostringstream out;
    for (const auto& entry : state.entries) {
        out << entry.kc_id << ": " << to_string(entry.diagnosis.level);
        if (!entry.diagnosis.explanation.empty()) out << " — " << entry.diagnosis.explanation;
        out << "\n";
    }
    return out.str();
}

namespace {

CompletionResponse call_plain(Provider& provider, const PromptRegistry& prompts, TemplateId id,
                              const char* agent, const SlotMap& slots, const EngineConfig& config,
                              std::vector<ExchangeRecord>* exchanges) {
    const PromptTemplate& tpl = prompts.get(id);
    CompletionRequest request;
    request.model = config.model_name;
    request.messages = prompts.render(id, slots);
    request.temperature = config.temperature;
    validate_request(request);
    CompletionResponse response = provider.complete(request);
    if (exchanges)
        exchanges->push_back({agent, to_string(id), tpl.version, canonical_key(request),
                              fnv1a64_hex(response.content), 1});
    return response;
}

// Number tokens with digit-group commas stripped; "1,234.5" reads as one token.
std::vector<double> extract_numbers(const std::string& text) {
    std::vector<double> numbers;
    size_t i = 0;
    auto digit = [&](size_t k) { return k < text.size() && std::isdigit(static_cast<unsigned char>(text[k])); };
    while (i < text.size()) {
        bool sign = (text[i] == '-' || text[i] == '+') && (digit(i + 1) || (i + 2 < text.size() && text[i + 1] == '.' && digit(i + 2)));
        bool bare_dot = text[i] == '.' && digit(i + 1);
        if (!digit(i) && !sign && !bare_dot) {
            ++i;
            continue;
        }
        std::string token;
        if (sign) token += text[i++];
        bool seen_dot = false;
        while (i < text.size()) {
            char c = text[i];
            if (std::isdigit(static_cast<unsigned char>(c))) {
                token += c;
                ++i;
            } else if (c == '.' && !seen_dot && digit(i + 1)) {
                token += c;
                seen_dot = true;
                ++i;
            } else if (c == ',' && digit(i + 1) && digit(i + 2) && digit(i + 3) && !digit(i + 4)) {
                i += 1;  // thousands separator
            } else {
                break;
            }
        }
        if (!token.empty() && token != "-" && token != "+") numbers.push_back(std::strtod(token.c_str(), nullptr));
    }
    return numbers;
}

// The reference answer counts as numeric when it *is* one number, or when it
// ends in one (worked solutions that close with the result).
std::optional<double> numeric_reference(const std::string& answer) {
    std::string cleaned;
    for (char c : trim(answer)) {
        if (c == '$' || c == '%') continue;
        cleaned += c;
    }
    cleaned = trim(cleaned);
    if (cleaned.empty()) return std::nullopt;
    auto numbers = extract_numbers(cleaned);
    if (numbers.empty()) return std::nullopt;
    char* end = nullptr;
    std::string commaless;
    for (char c : cleaned)
        if (c != ',') commaless += c;
    double whole = std::strtod(commaless.c_str(), &end);
    if (end && *end == '\0') return whole;
    // trailing-number check: strip closing punctuation, then the last word
    std::string tail = cleaned;
    while (!tail.empty() && (std::ispunct(static_cast<unsigned char>(tail.back())) || std::isspace(static_cast<unsigned char>(tail.back()))))
        tail.pop_back();
    size_t cut = tail.find_last_of(" \t\n");
    std::string last_word = cut == std::string::npos ? tail : tail.substr(cut + 1);
    auto tail_numbers = extract_numbers(last_word);
    if (tail_numbers.size() == 1 && !last_word.empty() &&
        (std::isdigit(static_cast<unsigned char>(last_word.front())) || last_word.front() == '-' ||
         last_word.front() == '.' || last_word.front() == '$'))
        return tail_numbers.front();
    return std::nullopt;
}

std::string normalize_answer_text(const std::string& text) {
    std::string out;
    bool pending_space = false;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out += ' ';
            pending_space = false;
        }
        out += static_cast<char>(std::tolower(c));
    }
    while (!out.empty() && (out.back() == '.' || out.back() == '!' || out.back() == '?')) out.pop_back();
    return out;
}

bool word_bounded_find(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return false;
    auto boundary = [&](size_t pos) {
        if (pos >= haystack.size()) return true;
        unsigned char c = static_cast<unsigned char>(haystack[pos]);
        return !std::isalnum(c);
    };
    for (size_t pos = haystack.find(needle); pos != std::string::npos;
         pos = haystack.find(needle, pos + 1)) {
        bool left_ok = pos == 0 || boundary(pos - 1);
        bool right_ok = boundary(pos + needle.size());
        if (left_ok && right_ok) return true;
    }
    return false;
}

}  // namespace

std::string simulate_student(const std::string& profile, const Question& question,
                             const std::vector<DialogueTurn>& transcript,
                             const std::string& tutor_utterance, Provider& provider,
                             const PromptRegistry& prompts, const EngineConfig& config,
                             std::vector<ExchangeRecord>* exchanges) {
    if (trim(tutor_utterance).empty()) throw Error("simulate_student: tutor utterance is empty");
    SlotMap slots{{"profile", profile.empty() ? "(no profile provided)" : profile},
                  {"question", render_question_slot(question)},
                  {"transcript", transcript.empty() ? "(conversation is just starting)"
                                                    : render_transcript_slot(transcript)},
                  {"tutor_utterance", tutor_utterance}};
    return call_plain(provider, prompts, TemplateId::SimulatedStudent, "student", slots, config, exchanges)
        .content;
}

int judge_correct(const std::string& student_utterance, const Question& question, Provider* provider,
                  const PromptRegistry& prompts, const EngineConfig& config,
                  std::vector<ExchangeRecord>* exchanges) {
    if (trim(question.answer).empty()) throw Error("judge_correct: question has no reference answer");

    auto reference = numeric_reference(question.answer);
    if (reference) {
        auto numbers = extract_numbers(student_utterance);
        if (!numbers.empty()) {
            double stated = numbers.back();
            double tolerance = 1e-6 * std::max(1.0, std::fabs(*reference));
            return std::fabs(stated - *reference) <= tolerance ? 1 : 0;
        }
        // no number stated -> extraction failed, ask the judge
    } else {
        std::string norm_utterance = normalize_answer_text(student_utterance);
        std::string norm_answer = normalize_answer_text(question.answer);
        if (norm_utterance == norm_answer) return 1;
        return word_bounded_find(norm_utterance, norm_answer) ? 1 : 0;
    }

    if (!provider) throw Error("judge_correct: no number stated and no judge provider available");
    SlotMap slots{{"question", render_question_slot(question)},
                  {"answer", question.answer},
                  {"student_utterance", student_utterance}};
    std::string verdict =
        call_plain(*provider, prompts, TemplateId::CorrectnessJudge, "judge", slots, config, exchanges)
            .content;
    std::string upper;
    for (char c : verdict) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (upper.find("INCORRECT") != std::string::npos) return 0;
    if (upper.find("CORRECT") != std::string::npos) return 1;
    throw Error("judge_correct: judge reply contained neither CORRECT nor INCORRECT");
}

std::string next_tutor_utterance(SimPolicy policy, const std::vector<DialogueTurn>& transcript,
                                 const Question& question, const std::optional<CognitiveState>& state,
                                 Provider& provider, const PromptRegistry& prompts,
                                 const EngineConfig& config, std::vector<ExchangeRecord>* exchanges) {
    std::string transcript_text =
        transcript.empty() ? "(conversation is just starting)" : render_transcript_slot(transcript);

    switch (policy) {
        case SimPolicy::Parld: {
            if (!state) throw Error("parld policy needs a diagnosed cognitive state");
            SlotMap slots{{"question", render_question_slot(question)},
                          {"transcript", transcript_text},
                          {"state", render_state_levels(*state)}};
            return call_plain(provider, prompts, TemplateId::TutorInstructionParld, "tutor", slots, config,
                              exchanges)
                .content;
        }
        case SimPolicy::Da: {
            // Stateless per-turn analysis over the dialogue so far, then the
            // instruction derived from it.
            SlotMap analyzer_slots{{"question", render_question_slot(question)},
                                   {"kcs", render_kcs_slot(question)},
                                   {"state", serialize_state(initial_state(question))},
                                   {"schema_section", ""},
                                   {"dialogue", transcript_text},
                                   {"critique_section", ""}};
            const PromptTemplate& tpl = prompts.get(TemplateId::Analyzer);
            CompletionRequest request;
            request.model = config.model_name;
            request.messages = prompts.render(TemplateId::Analyzer, analyzer_slots);
            request.temperature = config.temperature;
            request.json_mode = true;
            StructuredResult result =
                complete_structured(provider, request, SchemaId::CognitiveState, config.structured_retry_limit);
            if (exchanges)
                exchanges->push_back({"analyzer", to_string(TemplateId::Analyzer), tpl.version,
                                      canonical_key(request), fnv1a64_hex(result.last_response.content),
                                      result.attempts});

            CognitiveState analyzed;
            std::map<std::string, KcDiagnosis> matched;
            for (const auto& [raw_id, entry] : result.value.items()) {
                auto canonical = match_kc_id(raw_id, question.kcs);
                if (!canonical) continue;
                matched[*canonical] = {*mastery_from_string(entry.at("level").get<std::string>()),
                                       entry.at("explanation").get<std::string>()};
            }
            for (const auto& kc : question.kcs) {
                auto it = matched.find(kc.id);
                if (it != matched.end()) analyzed.entries.push_back({kc.id, it->second});
            }
            std::string analysis =
                analyzed.entries.empty() ? result.value.dump() : render_state_levels(analyzed);

            SlotMap slots{{"question", render_question_slot(question)},
                          {"transcript", transcript_text},
                          {"analysis", analysis}};
            return call_plain(provider, prompts, TemplateId::TutorInstructionDa, "tutor", slots, config,
                              exchanges)
                .content;
        }
        case SimPolicy::Dr: {
            SlotMap slots{{"question", render_question_slot(question)}, {"transcript", transcript_text}};
            return call_plain(provider, prompts, TemplateId::TutorDirectRespond, "tutor", slots, config,
                              exchanges)
                .content;
        }
    }
    throw Error("unknown tutoring policy");
}

SimEpisode run_episode(const Session& session, SimPolicy policy, Provider& provider,
                       const PromptRegistry& prompts, const EngineConfig& config,
                       const SimOptions& options) {
    validate_session(session);
    if (session.turns.empty()) throw Error("session " + session.session_id + " has no turns");
    if (policy == SimPolicy::Parld && session.question.kcs.empty())
        throw Error("session " + session.session_id + ": parld policy needs tagged KCs");
    if (trim(session.question.answer).empty())
        throw Error("session " + session.session_id + ": simulation needs a reference answer");

    SimEpisode episode;
    episode.session_id = session.session_id;
    episode.policy = policy;
    episode.turn_budget = static_cast<int>(session.turns.size());

    auto profile_it = session.meta.find("student_profile");
    std::string profile = profile_it == session.meta.end() ? "" : profile_it->second;

    std::optional<Engine> engine;
    ConversationMemory memory{session.session_id, {}};
    CognitiveState state;
    if (policy == SimPolicy::Parld) {
        EngineConfig engine_config = config;
        engine_config.reflection_signal = ReflectionSignal::PerTurnCorrectness;
        EngineOptions engine_options;
        engine_options.artifact_dir = options.artifact_dir;
        engine.emplace(provider, prompts, engine_config, engine_options);
        state = initial_state(session.question);
    }

    const char* fallback_opener = "Let's work through this problem together. How would you start?";
    size_t engine_warning_mark = 0;
    try {
        for (int t = 1; t <= episode.turn_budget; ++t) {
            std::string tutor_utterance;
            if (t == 1)
                tutor_utterance = session.turns.front().tutor_utterance;
            else
                tutor_utterance = next_tutor_utterance(
                    policy, episode.transcript, session.question,
                    engine ? std::optional<CognitiveState>(state) : std::nullopt, provider, prompts,
                    config, &episode.exchanges);
            if (trim(tutor_utterance).empty()) tutor_utterance = fallback_opener;

            std::string student_utterance =
                simulate_student(profile, session.question, episode.transcript, tutor_utterance, provider,
                                 prompts, config, &episode.exchanges);

            DialogueTurn turn;
            turn.index = t;
            turn.tutor_utterance = tutor_utterance;
            turn.student_utterance = student_utterance;
            episode.transcript.push_back(turn);
            episode.turns_used = t;

            int correct;
            try {
                correct = judge_correct(student_utterance, session.question, &provider, prompts, config,
                                        &episode.exchanges);
            } catch (const Error& e) {
                episode.judged = false;
                episode.warnings.push_back("turn " + std::to_string(t) +
                                           ": correctness judging failed: " + e.what());
                break;
            }

            if (engine) {
                auto [trace, next_state] = engine->run_turn(memory, state, turn, session.question, correct);
                episode.exchanges.insert(episode.exchanges.end(), trace.exchanges.begin(),
                                         trace.exchanges.end());
                const auto& engine_warnings = engine->warnings();
                for (size_t w = engine_warning_mark; w < engine_warnings.size(); ++w)
                    episode.warnings.push_back(engine_warnings[w]);
                engine_warning_mark = engine_warnings.size();
                memory = memory_append(memory, std::move(trace));
                state = std::move(next_state);
            }

            if (correct == 1) {
                episode.solved = true;
                break;
            }
        }
    } catch (const Error& e) {
        if (!options.artifact_dir.empty()) {
            std::filesystem::create_directories(options.artifact_dir);
            json partial = sim_episode_json(episode);
            partial["error"] = e.what();
            write_file(options.artifact_dir /
                           (session.session_id + "." + to_string(policy) + ".partial.json"),
                       partial.dump(2) + "\n");
        }
        throw Error("episode " + session.session_id + " (" + to_string(policy) + ") failed: " + e.what());
    }
    return episode;
}

std::vector<Session> filter_sim_pool(const std::vector<Session>& sessions) {
    std::vector<Session> pool;
    for (const auto& session : sessions)
        if (session.final_label == 0) pool.push_back(session);
    return pool;
}

SimOutcome run_simulation(const std::vector<Session>& sessions, const std::vector<SimPolicy>& policies,
                          Provider& provider, const PromptRegistry& prompts, const EngineConfig& config,
                          const SimOptions& options) {
    if (policies.empty()) throw Error("run_simulation: no policies requested");
    SimOutcome outcome;

    struct Task {
        size_t session_index;
        SimPolicy policy;
    };
    std::vector<Task> tasks;
    for (size_t s = 0; s < sessions.size(); ++s)
        for (SimPolicy policy : policies) tasks.push_back({s, policy});

    struct Slot {
        std::optional<SimEpisode> episode;
        std::string failure;
    };
    std::vector<Slot> slots(tasks.size());
    std::atomic<size_t> cursor{0};

    auto worker = [&] {
        for (;;) {
            size_t i = cursor.fetch_add(1);
            if (i >= tasks.size()) return;
            const Task& task = tasks[i];
            try {
                slots[i].episode =
                    run_episode(sessions[task.session_index], task.policy, provider, prompts, config, options);
            } catch (const std::exception& e) {
                slots[i].failure = e.what();
                if (slots[i].failure.empty()) slots[i].failure = "unknown error";
            }
        }
    };

    int workers = std::max(1, options.workers);
    if (workers == 1 || tasks.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::set<std::string> failed_sessions;
    for (size_t i = 0; i < tasks.size(); ++i) {
        if (slots[i].episode) continue;
        const std::string& id = sessions[tasks[i].session_index].session_id;
        outcome.failures.emplace_back(id + "/" + to_string(tasks[i].policy), slots[i].failure);
        failed_sessions.insert(id);
    }

    std::vector<SimEpisode> for_metrics;
    for (size_t i = 0; i < tasks.size(); ++i) {
        if (!slots[i].episode) continue;
        if (!failed_sessions.count(slots[i].episode->session_id))
            for_metrics.push_back(*slots[i].episode);
        outcome.episodes.push_back(std::move(*slots[i].episode));
    }
    for (const auto& id : failed_sessions)
        outcome.warnings.push_back("session " + id +
                                   " excluded from metrics: an episode failed under at least one policy");

    outcome.metrics = compute_sim_metrics(for_metrics);
    return outcome;
}

std::vector<SimMetrics> compute_sim_metrics(const std::vector<SimEpisode>& episodes) {
    std::map<SimPolicy, std::map<std::string, const SimEpisode*>> by_policy;
    for (const auto& episode : episodes) {
        auto& per_session = by_policy[episode.policy];
        if (!per_session.emplace(episode.session_id, &episode).second)
            throw Error("duplicate episode for session '" + episode.session_id + "' under policy " +
                        to_string(episode.policy));
    }
    if (by_policy.empty()) return {};

    auto ids_of = [](const std::map<std::string, const SimEpisode*>& m) {
        std::vector<std::string> ids;
        ids.reserve(m.size());
        for (const auto& [id, _] : m) ids.push_back(id);
        return ids;
    };
    const auto reference_ids = ids_of(by_policy.begin()->second);
    for (const auto& [policy, per_session] : by_policy) {
        if (ids_of(per_session) != reference_ids)
            throw Error("policies evaluated on different session sets");
    }

    std::set<std::string> solved_by_all(reference_ids.begin(), reference_ids.end());
    for (const auto& [policy, per_session] : by_policy) {
        for (auto it = solved_by_all.begin(); it != solved_by_all.end();) {
            if (!per_session.at(*it)->solved || !per_session.at(*it)->judged)
                it = solved_by_all.erase(it);
            else
                ++it;
        }
    }

    std::vector<SimMetrics> out;
    for (const auto& [policy, per_session] : by_policy) {
        SimMetrics metrics;
        metrics.policy = policy;
        double solved_turns = 0;
        double intersection_turns = 0;
        size_t intersection_n = 0;
        for (const auto& [id, episode] : per_session) {
            if (!episode->judged) {
                ++metrics.unjudged;
                continue;
            }
            ++metrics.total;
            if (episode->solved) {
                ++metrics.solved;
                solved_turns += episode->turns_used;
            }
            if (solved_by_all.count(id)) {
                intersection_turns += episode->turns_used;
                ++intersection_n;
            }
        }
        if (metrics.total > 0) metrics.cr = 100.0 * static_cast<double>(metrics.solved) /
                                            static_cast<double>(metrics.total);
        if (metrics.solved > 0) metrics.avg_t = solved_turns / static_cast<double>(metrics.solved);
        if (intersection_n > 0) metrics.int_avg_t = intersection_turns / static_cast<double>(intersection_n);
        out.push_back(metrics);
    }
    return out;
}

json sim_episode_json(const SimEpisode& episode) {
    json transcript = json::array();
    for (const auto& turn : episode.transcript) transcript.push_back(to_json(turn));
    json exchanges = json::array();
    for (const auto& exchange : episode.exchanges) exchanges.push_back(to_json(exchange));
    return {{"session_id", episode.session_id}, {"policy", to_string(episode.policy)},
            {"transcript", transcript},         {"solved", episode.solved},
            {"judged", episode.judged},         {"turns_used", episode.turns_used},
            {"turn_budget", episode.turn_budget}, {"exchanges", exchanges},
            {"warnings", episode.warnings}};
}

SimEpisode sim_episode_from_json(const json& j) {
    SimEpisode episode;
    episode.session_id = j.at("session_id").get<std::string>();
    auto policy = policy_from_string(j.at("policy").get<std::string>());
    if (!policy) throw Error("unknown policy '" + j.at("policy").get<std::string>() + "'");
    episode.policy = *policy;
    for (const auto& turn : j.at("transcript")) episode.transcript.push_back(turn_from_json(turn));
    episode.solved = j.at("solved").get<bool>();
    episode.judged = j.at("judged").get<bool>();
    episode.turns_used = j.at("turns_used").get<int>();
    episode.turn_budget = j.at("turn_budget").get<int>();
    for (const auto& exchange : j.at("exchanges")) episode.exchanges.push_back(exchange_from_json(exchange));
    episode.warnings = j.at("warnings").get<std::vector<std::string>>();
    return episode;
}

json sim_metrics_json(const std::vector<SimMetrics>& metrics) {
    json out = json::array();
    for (const auto& m : metrics) {
        json row = {{"policy", to_string(m.policy)}, {"total", m.total},   {"solved", m.solved},
                    {"unjudged", m.unjudged},        {"cr", m.cr},         {"avg_t", nullptr},
                    {"int_avg_t", nullptr}};
        if (m.avg_t) row["avg_t"] = *m.avg_t;
        if (m.int_avg_t) row["int_avg_t"] = *m.int_avg_t;
        out.push_back(row);
    }
    return out;
}

}  // namespace parld
