#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "parld/engine.hpp"

namespace parld {

// Tutoring policies under comparison: parld = diagnosis-informed instructions,
// da = per-turn direct analysis + instruction, dr = direct response.
enum class SimPolicy { Parld, Da, Dr };

std::string to_string(SimPolicy policy);
std::optional<SimPolicy> policy_from_string(std::string_view text);

struct SimEpisode {
    std::string session_id;
    SimPolicy policy = SimPolicy::Dr;
    std::vector<DialogueTurn> transcript;
    bool solved = false;
    bool judged = true;  // false = correctness judging failed; excluded from metrics
    int turns_used = 0;
    int turn_budget = 0;
    std::vector<ExchangeRecord> exchanges;
    std::vector<std::string> warnings;

    bool operator==(const SimEpisode&) const = default;
};

struct SimMetrics {
    SimPolicy policy = SimPolicy::Dr;
    size_t total = 0;    // judged episodes
    size_t solved = 0;
    size_t unjudged = 0;
    double cr = 0.0;                  // 100 * solved / total
    std::optional<double> avg_t;      // mean turns over solved episodes
    std::optional<double> int_avg_t;  // mean turns over sessions solved by every policy

    bool operator==(const SimMetrics&) const = default;
};

// "<kc>: <level> — <explanation>" per line; the state rendering handed to
// tutor prompts.
std::string render_state_levels(const CognitiveState& state);

// One simulated student reply, conditioned on the profile, the dialogue so
// far, and the tutor's latest message (which must be non-empty).
std::string simulate_student(const std::string& profile, const Question& question,
                             const std::vector<DialogueTurn>& transcript,
                             const std::string& tutor_utterance, Provider& provider,
                             const PromptRegistry& prompts, const EngineConfig& config,
                             std::vector<ExchangeRecord>* exchanges = nullptr);

// 1 when the utterance states the reference answer. Deterministic extraction
// first (last number vs numeric answer under 1e-6 relative tolerance;
// whole-word match otherwise); the correctness_judge prompt only when
// extraction fails. Throws Error when no verdict can be reached.
int judge_correct(const std::string& student_utterance, const Question& question, Provider* provider,
                  const PromptRegistry& prompts, const EngineConfig& config,
                  std::vector<ExchangeRecord>* exchanges = nullptr);

// Policy-specific next tutor message. parld needs the diagnosed state; da
// makes a stateless analysis call then instructs (2 provider calls); dr
// responds directly (1 call).
std::string next_tutor_utterance(SimPolicy policy, const std::vector<DialogueTurn>& transcript,
                                 const Question& question, const std::optional<CognitiveState>& state,
                                 Provider& provider, const PromptRegistry& prompts,
                                 const EngineConfig& config,
                                 std::vector<ExchangeRecord>* exchanges = nullptr);

struct SimOptions {
    int workers = 1;
    std::filesystem::path artifact_dir;  // partial episodes on failure
};

// One tutoring episode. Turn 1 replays the session's original opening tutor
// utterance; later tutor turns come from the policy; every student reply is
// simulated and judged; terminate on a correct answer or budget exhaustion
// (budget = the source session's turn count). Under parld the diagnosis
// engine runs after each student reply with the judged correctness as the
// per-turn reflection signal.
SimEpisode run_episode(const Session& session, SimPolicy policy, Provider& provider,
                       const PromptRegistry& prompts, const EngineConfig& config,
                       const SimOptions& options = {});

// Sessions eligible for simulation: the student did not master the question
// in the original transcript (final_label = 0).
std::vector<Session> filter_sim_pool(const std::vector<Session>& sessions);

struct SimOutcome {
    std::vector<SimEpisode> episodes;  // session-major, policies in request order
    std::vector<SimMetrics> metrics;
    std::vector<std::pair<std::string, std::string>> failures;  // (session_id/policy, reason)
    std::vector<std::string> warnings;
};

// Runs every (session, policy) episode on a bounded worker pool. Sessions
// with a hard failure under any policy are excluded from metrics (disclosed
// in warnings) so all policies stay on the same session set.
SimOutcome run_simulation(const std::vector<Session>& sessions, const std::vector<SimPolicy>& policies,
                          Provider& provider, const PromptRegistry& prompts, const EngineConfig& config,
                          const SimOptions& options = {});

// CR / Avg. T / Int. Avg. T per policy. Every policy must cover the same
// session id set; unjudged episodes count toward no metric.
std::vector<SimMetrics> compute_sim_metrics(const std::vector<SimEpisode>& episodes);

json sim_episode_json(const SimEpisode& episode);
SimEpisode sim_episode_from_json(const json& j);
json sim_metrics_json(const std::vector<SimMetrics>& metrics);

}  // namespace parld
