#pragma once

// Shared fixtures: scratch directories, canned sessions, an agent-routing
// scripted handler, a loopback chat-completions server, and brute-force
// metric oracles kept deliberately separate from the library's code paths.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "parld/eval.hpp"
#include "parld/provider.hpp"
#include "parld/sim.hpp"

namespace parld::testing {

// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::atomic<unsigned> counter{0};
        std::mt19937_64 rng(std::random_device{}());
        char name[64];
        std::snprintf(name, sizeof name, "parld-test-%08llx-%u",
                      static_cast<unsigned long long>(rng() & 0xffffffffull), counter.fetch_add(1));
        path = std::filesystem::temp_directory_path() / name;
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path / name; }
    std::string str() const { return path.string(); }
};

inline Question make_question(std::vector<std::string> kc_ids = {"Subtraction"},
                              std::string answer = "280") {
    Question q;
    q.id = "q1";
    q.text = "A farmer had 350 sheep and sold 70. How many are left?";
    q.answer = std::move(answer);
    for (auto& id : kc_ids) q.kcs.push_back({id, id});
    return q;
}

inline Session make_session(int turn_count, std::vector<std::string> kc_ids = {"Subtraction"},
                            int final_label = 0, std::string session_id = "s1") {
    Session s;
    s.session_id = std::move(session_id);
    s.student_id = s.session_id + "-student";
    s.question = make_question(std::move(kc_ids));
    for (int t = 1; t <= turn_count; ++t) {
        DialogueTurn turn;
        turn.index = t;
        turn.tutor_utterance = "What do you get at step " + std::to_string(t) + "?";
        turn.student_utterance = "Maybe " + std::to_string(t * 10) + "?";
        s.turns.push_back(turn);
    }
    s.final_label = final_label;
    s.meta["student_profile"] = "confuses subtraction with addition";
    return s;
}

// Which agent a request belongs to, recovered from the system prompt.
inline std::string agent_of(const CompletionRequest& request) {
    if (request.messages.empty()) return "other";
    const std::string& text = request.messages.front().content;
    auto has = [&](const char* marker) { return text.find(marker) != std::string::npos; };
    if (has("Behavior Previewer")) return "previewer";
    if (has("State Analyzer")) return "analyzer";
    if (has("Performance Reasoner")) return "reasoner";
    if (has("Chain Reflector")) return "reflector";
    if (has("role-playing a student")) return "student";
    if (has("CORRECT or INCORRECT")) return "judge";
    if (has("tag math questions")) return "kc_tagger";
    if (has("diagnosed cognitive state")) return "tutor_parld";
    if (has("per-turn analysis")) return "tutor_da";
    if (has("Respond directly")) return "tutor_dr";
    return "other";
}

inline std::string zpd_reply(const std::vector<std::string>& kc_ids) {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& id : kc_ids) ids.push_back(id);
    nlohmann::json reply{
        {"mastered", nlohmann::json::array()},
        {"acquirable", {{{"description", "attempts the computation with hints"}, {"kc_ids", ids}}}},
        {"inaccessible", nlohmann::json::array()}};
    return reply.dump();
}

inline std::string state_reply(const std::vector<std::string>& kc_ids, const std::string& level = "Fair") {
    nlohmann::json reply = nlohmann::json::object();
    for (const auto& id : kc_ids)
        reply[id] = {{"level", level}, {"explanation", "evidence from the latest turn"}};
    return reply.dump();
}

inline std::string prediction_reply(const std::string& label = "not_mastered",
                                    const std::string& rationale = "weighed the per-KC levels") {
    return nlohmann::json{{"prediction", label}, {"rationale", rationale}}.dump();
}

inline std::string reflection_reply(const std::string& judgment = "inaccurate",
                                    const std::string& critique = "re-examine the first concept") {
    return nlohmann::json{{"judgment", judgment}, {"critique", critique}}.dump();
}

// One handler that answers every agent with a valid canned reply. Tests that
// need per-call behavior wrap it or write their own lambda over agent_of.
struct RoutedScript {
    std::vector<std::string> kc_ids = {"Subtraction"};
    std::string level = "Fair";
    std::string prediction = "not_mastered";
    std::string judgment = "inaccurate";
    std::string critique = "re-examine the first concept";
    std::string tutor_reply = "Walk me through the first step again.";
    std::string student_reply = "I am still not sure.";
    std::string judge_reply = "INCORRECT";
    std::string kc_reply = R"({"kcs": ["Subtraction"]})";
};

inline ScriptedProvider::Handler routed_handler(RoutedScript script) {
    return [script = std::move(script)](const CompletionRequest& request) -> std::string {
        std::string agent = agent_of(request);
        if (agent == "previewer") return zpd_reply(script.kc_ids);
        if (agent == "analyzer") return state_reply(script.kc_ids, script.level);
        if (agent == "reasoner") return prediction_reply(script.prediction);
        if (agent == "reflector") return reflection_reply(script.judgment, script.critique);
        if (agent == "student") return script.student_reply;
        if (agent == "judge") return script.judge_reply;
        if (agent == "kc_tagger") return script.kc_reply;
        return script.tutor_reply;
    };
}

// ---------------------------------------------------------------------------
// brute-force metric oracles

struct OracleEval {
    int tp = 0, fp = 0, fn = 0, tn = 0;
    double acc = 0.0, f1 = 0.0;
};

inline OracleEval oracle_eval(const std::vector<std::pair<int, int>>& pred_label) {
    OracleEval o;
    int correct = 0;
    for (auto [p, l] : pred_label) {
        if (p == l) ++correct;
        if (p == 1 && l == 1) ++o.tp;
        if (p == 1 && l == 0) ++o.fp;
        if (p == 0 && l == 1) ++o.fn;
        if (p == 0 && l == 0) ++o.tn;
    }
    if (!pred_label.empty()) o.acc = 100.0 * correct / static_cast<double>(pred_label.size());
    int denom = 2 * o.tp + o.fp + o.fn;
    if (denom > 0) o.f1 = 100.0 * 2 * o.tp / static_cast<double>(denom);
    return o;
}

struct OracleSimRow {
    SimPolicy policy;
    size_t total = 0, solved = 0, unjudged = 0;
    double cr = 0.0;
    std::optional<double> avg_t;
    std::optional<double> int_avg_t;
};

inline std::vector<OracleSimRow> oracle_sim(const std::vector<SimEpisode>& episodes) {
    std::vector<SimPolicy> policies;
    std::vector<std::string> ids;
    for (const auto& e : episodes) {
        if (std::find(policies.begin(), policies.end(), e.policy) == policies.end())
            policies.push_back(e.policy);
        if (std::find(ids.begin(), ids.end(), e.session_id) == ids.end()) ids.push_back(e.session_id);
    }
    std::sort(policies.begin(), policies.end());

    auto find = [&](SimPolicy p, const std::string& id) -> const SimEpisode* {
        for (const auto& e : episodes)
            if (e.policy == p && e.session_id == id) return &e;
        return nullptr;
    };

    std::vector<std::string> solved_by_all;
    for (const auto& id : ids) {
        bool all = true;
        for (SimPolicy p : policies) {
            const SimEpisode* e = find(p, id);
            if (!e || !e->solved || !e->judged) all = false;
        }
        if (all) solved_by_all.push_back(id);
    }

    std::vector<OracleSimRow> rows;
    for (SimPolicy p : policies) {
        OracleSimRow row;
        row.policy = p;
        double solved_turns = 0, int_turns = 0;
        size_t int_n = 0;
        for (const auto& id : ids) {
            const SimEpisode* e = find(p, id);
            if (!e) continue;
            if (!e->judged) {
                ++row.unjudged;
                continue;
            }
            ++row.total;
            if (e->solved) {
                ++row.solved;
                solved_turns += e->turns_used;
            }
            if (std::find(solved_by_all.begin(), solved_by_all.end(), id) != solved_by_all.end()) {
                int_turns += e->turns_used;
                ++int_n;
            }
        }
        if (row.total > 0) row.cr = 100.0 * static_cast<double>(row.solved) / static_cast<double>(row.total);
        if (row.solved > 0) row.avg_t = solved_turns / static_cast<double>(row.solved);
        if (int_n > 0) row.int_avg_t = int_turns / static_cast<double>(int_n);
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// loopback chat-completions endpoint backed by the same routing handler

class MockChatServer {
public:
    explicit MockChatServer(ScriptedProvider::Handler handler) : handler_(std::move(handler)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits_;
            nlohmann::json body = nlohmann::json::parse(req.body);
            CompletionRequest request;
            request.model = body.value("model", "");
            request.temperature = body.value("temperature", 0.0);
            for (const auto& m : body.at("messages")) {
                ChatMessage message;
                std::string role = m.at("role").get<std::string>();
                message.role = role == "system"    ? Role::System
                               : role == "assistant" ? Role::Assistant
                                                     : Role::User;
                message.content = m.at("content").get<std::string>();
                request.messages.push_back(std::move(message));
            }
            std::string reply = handler_(request);
            nlohmann::json out{
                {"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}}}}},
                {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 7}}}};
            res.set_content(out.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockChatServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    size_t hits() const { return hits_.load(); }

private:
    httplib::Server server_;
    ScriptedProvider::Handler handler_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<size_t> hits_{0};
};

// Environment variable override, restored on destruction.
struct EnvVar {
    std::string name;
    std::optional<std::string> saved;

    EnvVar(const std::string& name_, const std::string& value) : name(name_) {
        if (const char* old = std::getenv(name.c_str())) saved = old;
        ::setenv(name.c_str(), value.c_str(), 1);
    }
    ~EnvVar() {
        if (saved)
            ::setenv(name.c_str(), saved->c_str(), 1);
        else
            ::unsetenv(name.c_str());
    }
    EnvVar(const EnvVar&) = delete;
    EnvVar& operator=(const EnvVar&) = delete;
};

inline std::string read_text(const std::filesystem::path& path) { return read_file(path); }

}  // namespace parld::testing
