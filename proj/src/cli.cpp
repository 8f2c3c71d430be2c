#include "parld/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <thread>

#include "parld/dataset.hpp"
#include "parld/eval.hpp"
#include "parld/http_provider.hpp"
#include "parld/json_codec.hpp"
#include "parld/sim.hpp"

namespace parld {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct CommonOpts {
    std::string dataset;
    std::string model = "gpt-4.1";
    std::string provider = "http";
    std::string cassette;
    std::string out;
    std::string config_file;
    std::string prompt_dir;
    std::string split = "all";
    int workers = 1;
    int max_reflect = -1;  // -1 = dataset-dependent default (2; 1 for comta ids)
    int retry_limit = 2;
    double temperature = 0.0;
    long limit = 0;  // 0 = whole set
    bool no_previewer = false;
    bool no_reflector = false;
    bool allow_scripted = false;
    std::string script_file;

    // set while registering flags, to tell explicit values from defaults
    CLI::Option* model_opt = nullptr;
    CLI::Option* temperature_opt = nullptr;
    CLI::Option* retry_opt = nullptr;
    CLI::Option* max_reflect_opt = nullptr;
    CLI::Option* previewer_opt = nullptr;
    CLI::Option* reflector_opt = nullptr;
};

void add_provider_flags(CLI::App* cmd, CommonOpts& opts) {
    opts.model_opt = cmd->add_option("--model", opts.model, "Chat model name");
    cmd->add_option("--provider", opts.provider, "Provider: http or replay")
        ->check(CLI::IsMember({"http", "replay", "scripted"}));
    cmd->add_option("--cassette", opts.cassette,
                    "Cassette path: recorded when --provider http, required for replay");
    opts.temperature_opt = cmd->add_option("--temperature", opts.temperature, "Sampling temperature");
    opts.retry_opt =
        cmd->add_option("--retry-limit", opts.retry_limit, "Extra attempts to repair structured output");
    cmd->add_option("--config", opts.config_file, "Engine config JSON; flags override its fields");
    cmd->add_option("--prompts", opts.prompt_dir, "Prompt asset directory overriding built-ins");
    // test-harness backdoor, hidden from help on purpose
    cmd->add_flag("--allow-scripted", opts.allow_scripted)->group("");
    cmd->add_option("--script", opts.script_file)->group("");
}

void add_run_flags(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--workers", opts.workers, "Worker pool size")->check(CLI::PositiveNumber);
    opts.max_reflect_opt = cmd->add_option(
        "--max-reflect", opts.max_reflect,
        "Reflection budget per turn (default 2; 1 when every session id is comta-*)");
    opts.previewer_opt = cmd->add_flag("--no-previewer", opts.no_previewer, "Disable the behavior previewer");
    opts.reflector_opt = cmd->add_flag("--no-reflector", opts.no_reflector, "Disable the chain reflector");
    cmd->add_option("--limit", opts.limit, "Use only the first N sessions")->check(CLI::NonNegativeNumber);
}

std::string quote_arg(const std::string& arg) {
    if (arg.find_first_of(" \t\"'") == std::string::npos) return arg;
    std::string out = "\"";
    for (char c : arg) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

std::string join_args(const std::vector<std::string>& args) {
    std::string out;
    for (const auto& arg : args) {
        if (!out.empty()) out += ' ';
        out += quote_arg(arg);
    }
    return out;
}

std::string make_run_id() {
    std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm_utc);
    std::mt19937_64 rng(std::random_device{}());
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "%06llx",
                  static_cast<unsigned long long>(rng() & 0xffffff));
    return std::string(stamp) + "-" + suffix;
}

std::string file_digest(const std::filesystem::path& path) {
    return fnv1a64_hex(read_file(path));
}

struct ProviderBundle {
    std::unique_ptr<Provider> base;
    std::unique_ptr<RecordingProvider> recorder;

    Provider& active() { return recorder ? static_cast<Provider&>(*recorder) : *base; }
    void flush() {
        if (recorder) recorder->flush();
    }
};

ProviderBundle make_provider(const CommonOpts& opts) {
    ProviderBundle bundle;
    if (opts.provider == "http") {
        bundle.base = std::make_unique<HttpProvider>();
        if (!opts.cassette.empty())
            bundle.recorder = std::make_unique<RecordingProvider>(*bundle.base, opts.cassette);
    } else if (opts.provider == "replay") {
        if (opts.cassette.empty()) throw Error("--provider replay needs --cassette");
        bundle.base = std::make_unique<ReplayProvider>(Cassette::load(opts.cassette));
    } else if (opts.provider == "scripted") {
        if (opts.script_file.empty()) throw Error("--provider scripted needs --script <file>");
        json responses = json::parse(read_file(opts.script_file));
        if (!responses.is_array()) throw Error("--script file must hold a JSON array of responses");
        auto scripted = std::make_unique<ScriptedProvider>();
        for (const auto& response : responses)
            scripted->push_response(response.is_string() ? response.get<std::string>() : response.dump());
        bundle.base = std::move(scripted);
    } else {
        throw Error("unknown provider '" + opts.provider + "'");
    }
    return bundle;
}

PromptRegistry resolve_prompts(const CommonOpts& opts) {
    if (!opts.prompt_dir.empty()) return PromptRegistry::load_dir(opts.prompt_dir);
    return PromptRegistry::builtin();
}

int default_max_reflect(const std::vector<Session>& sessions) {
    if (sessions.empty()) return 2;
    for (const auto& session : sessions) {
        if (session.session_id.rfind("comta", 0) != 0) return 2;
    }
    return 1;
}

EngineConfig resolve_config(const CommonOpts& opts, const std::vector<Session>& sessions) {
    EngineConfig config;
    bool from_file = !opts.config_file.empty();
    if (from_file) config = config_from_json(json::parse(read_file(opts.config_file)));
    if (!from_file || opts.model_opt->count()) config.model_name = opts.model;
    if (!from_file || opts.temperature_opt->count()) config.temperature = opts.temperature;
    if (!from_file || opts.retry_opt->count()) config.structured_retry_limit = opts.retry_limit;
    if (opts.previewer_opt && (!from_file || opts.previewer_opt->count()))
        config.enable_previewer = !opts.no_previewer;
    if (opts.reflector_opt && (!from_file || opts.reflector_opt->count()))
        config.enable_reflector = !opts.no_reflector;
    if (opts.max_reflect_opt && opts.max_reflect_opt->count()) config.max_num = opts.max_reflect;
    else if (!from_file) config.max_num = default_max_reflect(sessions);
    return config;
}

std::vector<Session> load_dataset(const std::string& path, std::vector<std::string>* notes) {
    IngestResult result = load_canonical(path);
    for (const auto& [raw_id, reason] : result.report.dropped) {
        if (notes) notes->push_back("skipped " + raw_id + ": " + reason);
    }
    if (result.sessions.empty()) throw Error("dataset '" + path + "' holds no usable sessions");
    return std::move(result.sessions);
}

void apply_split_and_limit(std::vector<Session>& sessions, const std::string& split, long limit) {
    if (split != "all") {
        auto wanted = split_from_string(split);
        if (!wanted) throw Error("unknown split '" + split + "'");
        std::erase_if(sessions, [&](const Session& s) { return s.split != *wanted; });
    }
    if (limit > 0 && sessions.size() > static_cast<size_t>(limit)) sessions.resize(limit);
}

void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const std::vector<std::string>& argv, const EngineConfig& config,
                    const PromptRegistry& prompts, const std::string& dataset_path, size_t session_count,
                    const CommonOpts& opts, json extra = json::object()) {
    json manifest{{"run_id", make_run_id()},
                  {"command", command},
                  {"argv", argv},
                  {"command_line", join_args(argv)},
                  {"config", to_json(config)},
                  {"template_versions", prompts.versions()},
                  {"dataset",
                   {{"path", dataset_path},
                    {"digest", file_digest(dataset_path)},
                    {"sessions", session_count}}},
                  {"provider", opts.provider},
                  {"cassette", opts.cassette}};
    for (const auto& [key, value] : extra.items()) manifest[key] = value;
    std::filesystem::create_directories(out_dir);
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

int reject_scripted_without_gate(const CommonOpts& opts) {
    if (opts.provider == "scripted" && !opts.allow_scripted) {
        std::cerr << "--provider scripted is reserved for the test harness\n";
        return kExitUsage;
    }
    return kExitOk;
}

std::string fixed2(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", value);
    return buf;
}

std::string opt_fixed2(const std::optional<double>& value) {
    return value ? fixed2(*value) : std::string("—");
}

// ---------------------------------------------------------------------------
// subcommand payloads

struct IngestArgs {
    std::string source;
    std::string input;
    std::string out;
    std::string split = "unsplit";
    std::string goal_filter;
};

int cmd_ingest(const IngestArgs& args) {
    IngestResult result;
    if (args.source == "mathdial") {
        auto split = split_from_string(args.split);
        if (!split) throw Error("unknown split '" + args.split + "'");
        result = load_mathdial(args.input, *split);
    } else if (args.source == "comta") {
        std::optional<std::filesystem::path> sidecar;
        if (!args.goal_filter.empty()) sidecar = args.goal_filter;
        result = load_comta(args.input, sidecar);
    } else {
        result = load_canonical(args.input);
    }

    std::filesystem::create_directories(args.out);
    save_sessions_jsonl(std::filesystem::path(args.out) / "sessions.jsonl", result.sessions);
    write_file(std::filesystem::path(args.out) / "ingest_report.json",
               ingest_report_json(result.report).dump(2) + "\n");

    for (const auto& warning : result.report.warnings) std::cerr << "warning: " << warning << "\n";
    std::cout << "ingested " << result.report.emitted << " of " << result.report.total_raw
              << " raw records (" << result.report.dropped.size() << " dropped) -> " << args.out
              << "/sessions.jsonl\n";
    return kExitOk;
}

struct KcTagArgs {
    CommonOpts common;
    std::string cache;
};

int cmd_kc_tag(const std::vector<std::string>& argv, const KcTagArgs& args) {
    if (int rc = reject_scripted_without_gate(args.common); rc != kExitOk) return rc;
    std::vector<std::string> notes;
    std::vector<Session> sessions = load_dataset(args.common.dataset, &notes);
    for (const auto& note : notes) std::cerr << "warning: " << note << "\n";

    PromptRegistry prompts = resolve_prompts(args.common);
    EngineConfig config = resolve_config(args.common, sessions);
    write_manifest(args.common.out, "kc-tag", argv, config, prompts, args.common.dataset,
                   sessions.size(), args.common, {{"kc_cache", args.cache}});

    ProviderBundle provider = make_provider(args.common);
    TagOptions options;
    options.model_name = config.model_name;
    options.temperature = config.temperature;
    options.structured_retry_limit = config.structured_retry_limit;
    TagReport report = tag_kcs(sessions, provider.active(), prompts, args.cache, options);
    provider.flush();

    save_sessions_jsonl(std::filesystem::path(args.common.out) / "sessions.jsonl", sessions);
    json failures = json::array();
    for (const auto& [qid, reason] : report.failed)
        failures.push_back({{"question_id", qid}, {"reason", reason}});
    write_file(std::filesystem::path(args.common.out) / "tag_report.json",
               json{{"already_tagged", report.already_tagged},
                    {"from_cache", report.from_cache},
                    {"newly_tagged", report.newly_tagged},
                    {"failed", failures}}
                       .dump(2) +
                   "\n");

    std::cout << "tagged " << report.newly_tagged << " question(s), " << report.from_cache
              << " from cache, " << report.already_tagged << " already tagged, " << report.failed.size()
              << " failed -> " << args.common.out << "/sessions.jsonl\n";
    return kExitOk;
}

struct DiagnoseArgs {
    CommonOpts common;
    std::vector<std::string> session_ids;
    std::string signal = "none";
};

int cmd_diagnose(const std::vector<std::string>& argv, const DiagnoseArgs& args) {
    if (int rc = reject_scripted_without_gate(args.common); rc != kExitOk) return rc;
    std::vector<std::string> notes;
    std::vector<Session> sessions = load_dataset(args.common.dataset, &notes);
    for (const auto& note : notes) std::cerr << "warning: " << note << "\n";

    if (!args.session_ids.empty()) {
        std::vector<Session> picked;
        for (const auto& id : args.session_ids) {
            auto it = std::find_if(sessions.begin(), sessions.end(),
                                   [&](const Session& s) { return s.session_id == id; });
            if (it == sessions.end()) throw Error("session '" + id + "' not found in dataset");
            picked.push_back(*it);
        }
        sessions = std::move(picked);
    }
    apply_split_and_limit(sessions, args.common.split, args.common.limit);

    auto signal = signal_from_string(args.signal);
    if (!signal) throw Error("unknown reflection signal '" + args.signal + "'");

    PromptRegistry prompts = resolve_prompts(args.common);
    EngineConfig config = resolve_config(args.common, sessions);
    config.reflection_signal = *signal;
    write_manifest(args.common.out, "diagnose", argv, config, prompts, args.common.dataset,
                   sessions.size(), args.common, {{"signal", args.signal}});

    ProviderBundle provider = make_provider(args.common);
    std::filesystem::path out_dir(args.common.out);
    std::filesystem::path trace_dir = out_dir / "traces";

    struct Slot {
        std::optional<SessionRunResult> run;
        std::string failure;
    };
    std::vector<Slot> slots(sessions.size());
    std::atomic<size_t> cursor{0};
    EngineOptions engine_options;
    engine_options.artifact_dir = trace_dir;
    std::filesystem::create_directories(trace_dir);

    auto worker = [&] {
        Engine engine(provider.active(), prompts, config, engine_options);
        for (;;) {
            size_t i = cursor.fetch_add(1);
            if (i >= sessions.size()) return;
            try {
                SessionRunResult run = engine.run_session(sessions[i]);
                write_session_trace(trace_dir, run);
                slots[i].run = std::move(run);
            } catch (const std::exception& e) {
                slots[i].failure = e.what();
            }
        }
    };
    int workers = std::max(1, args.common.workers);
    if (workers == 1 || sessions.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    provider.flush();

    std::ostringstream summary;
    json failures = json::array();
    size_t succeeded = 0;
    for (size_t i = 0; i < sessions.size(); ++i) {
        if (slots[i].run) {
            summary << session_summary_json(*slots[i].run).dump() << "\n";
            ++succeeded;
        } else {
            failures.push_back({{"session_id", sessions[i].session_id}, {"reason", slots[i].failure}});
        }
    }
    write_file(out_dir / "summary.jsonl", summary.str());
    if (!failures.empty()) write_file(out_dir / "failures.json", failures.dump(2) + "\n");

    std::cout << "diagnosed " << succeeded << " of " << sessions.size() << " session(s) -> "
              << trace_dir.string() << "\n";
    return kExitOk;
}

struct EvaluateArgs {
    CommonOpts common;
};

int run_evaluation(const std::vector<Session>& sessions, Provider& provider,
                   const PromptRegistry& prompts, const EngineConfig& config, int workers,
                   const std::filesystem::path& out_dir) {
    EvalOptions options;
    options.workers = workers;
    options.trace_dir = out_dir / "traces";
    EvalOutcome outcome = evaluate(sessions, provider, prompts, config, options);
    emit_report(outcome, out_dir);
    std::cout << "ACC " << fixed2(outcome.report.acc) << "  F1 " << fixed2(outcome.report.f1) << "  (n="
              << outcome.report.n << ", failures=" << outcome.failures.size() << ") -> "
              << out_dir.string() << "\n";
    return kExitOk;
}

int cmd_evaluate(const std::vector<std::string>& argv, const EvaluateArgs& args) {
    if (int rc = reject_scripted_without_gate(args.common); rc != kExitOk) return rc;
    std::vector<std::string> notes;
    std::vector<Session> sessions = load_dataset(args.common.dataset, &notes);
    for (const auto& note : notes) std::cerr << "warning: " << note << "\n";
    apply_split_and_limit(sessions, args.common.split, args.common.limit);

    PromptRegistry prompts = resolve_prompts(args.common);
    EngineConfig config = resolve_config(args.common, sessions);
    config.reflection_signal = ReflectionSignal::None;  // final-turn prediction only
    write_manifest(args.common.out, "evaluate", argv, config, prompts, args.common.dataset,
                   sessions.size(), args.common, {{"split", args.common.split}});

    ProviderBundle provider = make_provider(args.common);
    int rc = run_evaluation(sessions, provider.active(), prompts, config, args.common.workers,
                            args.common.out);
    provider.flush();
    return rc;
}

struct AblateArgs {
    CommonOpts common;
};

int cmd_ablate(const std::vector<std::string>& argv, const AblateArgs& args) {
    if (int rc = reject_scripted_without_gate(args.common); rc != kExitOk) return rc;
    std::vector<std::string> notes;
    std::vector<Session> sessions = load_dataset(args.common.dataset, &notes);
    for (const auto& note : notes) std::cerr << "warning: " << note << "\n";
    apply_split_and_limit(sessions, args.common.split, args.common.limit);

    PromptRegistry prompts = resolve_prompts(args.common);
    EngineConfig base = resolve_config(args.common, sessions);
    base.reflection_signal = ReflectionSignal::None;

    struct Variant {
        const char* name;
        bool previewer;
        bool reflector;
    };
    const Variant variants[] = {{"full", true, true},
                                {"no_previewer", false, true},
                                {"no_reflector", true, false},
                                {"no_previewer_no_reflector", false, false}};

    write_manifest(args.common.out, "ablate", argv, base, prompts, args.common.dataset, sessions.size(),
                   args.common,
                   {{"variants", {"full", "no_previewer", "no_reflector", "no_previewer_no_reflector"}}});

    ProviderBundle provider = make_provider(args.common);
    std::filesystem::path out_dir(args.common.out);
    json combined = json::array();
    std::ostringstream table;
    table << "# Component ablation\n\n| Variant | ACC | F1 | n |\n|---|---|---|---|\n";
    for (const Variant& variant : variants) {
        EngineConfig config = base;
        config.enable_previewer = variant.previewer;
        config.enable_reflector = variant.reflector;
        EvalOptions options;
        options.workers = args.common.workers;
        options.trace_dir = out_dir / variant.name / "traces";
        EvalOutcome outcome = evaluate(sessions, provider.active(), prompts, config, options);
        emit_report(outcome, out_dir / variant.name);
        combined.push_back({{"variant", variant.name}, {"metrics", metrics_report_json(outcome.report)}});
        table << "| " << variant.name << " | " << fixed2(outcome.report.acc) << " | "
              << fixed2(outcome.report.f1) << " | " << outcome.report.n << " |\n";
        std::cout << variant.name << ": ACC " << fixed2(outcome.report.acc) << "  F1 "
                  << fixed2(outcome.report.f1) << " (n=" << outcome.report.n << ")\n";
    }
    provider.flush();
    write_file(out_dir / "ablation.json", combined.dump(2) + "\n");
    write_file(out_dir / "ablation.md", table.str());
    return kExitOk;
}

struct SimulateArgs {
    CommonOpts common;
    std::string policies = "parld,da,dr";
    bool no_pool_filter = false;
};

int cmd_simulate(const std::vector<std::string>& argv, const SimulateArgs& args) {
    if (int rc = reject_scripted_without_gate(args.common); rc != kExitOk) return rc;
    std::vector<std::string> notes;
    std::vector<Session> sessions = load_dataset(args.common.dataset, &notes);
    for (const auto& note : notes) std::cerr << "warning: " << note << "\n";
    apply_split_and_limit(sessions, args.common.split, 0);
    if (!args.no_pool_filter) sessions = filter_sim_pool(sessions);
    if (args.common.limit > 0 && sessions.size() > static_cast<size_t>(args.common.limit))
        sessions.resize(args.common.limit);
    if (sessions.empty()) throw Error("no sessions left to simulate (pool filter keeps final_label = 0)");

    std::vector<SimPolicy> policies;
    std::stringstream list(args.policies);
    std::string token;
    while (std::getline(list, token, ',')) {
        auto policy = policy_from_string(trim(token));
        if (!policy) throw Error("unknown policy '" + token + "'");
        if (std::find(policies.begin(), policies.end(), *policy) == policies.end())
            policies.push_back(*policy);
    }
    if (policies.empty()) throw Error("--policies named no policy");

    PromptRegistry prompts = resolve_prompts(args.common);
    EngineConfig config = resolve_config(args.common, sessions);
    write_manifest(args.common.out, "simulate", argv, config, prompts, args.common.dataset,
                   sessions.size(), args.common,
                   {{"policies", args.policies}, {"pool_filter", !args.no_pool_filter}});

    ProviderBundle provider = make_provider(args.common);
    SimOptions options;
    options.workers = args.common.workers;
    options.artifact_dir = std::filesystem::path(args.common.out) / "partials";
    SimOutcome outcome = run_simulation(sessions, policies, provider.active(), prompts, config, options);
    provider.flush();

    std::filesystem::path out_dir(args.common.out);
    std::ostringstream episodes;
    for (const auto& episode : outcome.episodes) episodes << sim_episode_json(episode).dump() << "\n";
    write_file(out_dir / "episodes.jsonl", episodes.str());

    json failures = json::array();
    for (const auto& [what, reason] : outcome.failures)
        failures.push_back({{"episode", what}, {"reason", reason}});
    write_file(out_dir / "sim_metrics.json",
               json{{"metrics", sim_metrics_json(outcome.metrics)},
                    {"failures", failures},
                    {"warnings", outcome.warnings}}
                       .dump(2) +
                   "\n");

    std::cout << "| Policy | CR | Avg. T | Int. Avg. T |\n|---|---|---|---|\n";
    for (const auto& m : outcome.metrics) {
        std::cout << "| " << to_string(m.policy) << " | " << fixed2(m.cr) << " | " << opt_fixed2(m.avg_t)
                  << " | " << opt_fixed2(m.int_avg_t) << " |\n";
    }
    if (!outcome.failures.empty())
        std::cerr << outcome.failures.size() << " episode(s) failed; see sim_metrics.json\n";
    return kExitOk;
}

struct ReplayCheckArgs {
    std::string run_dir;
    std::string cassette;
};

std::vector<std::string> rewrite_argv(std::vector<std::string> argv, const std::string& cassette,
                                      const std::string& out_dir) {
    auto set_flag = [&argv](const std::string& flag, const std::string& value) {
        for (size_t i = 0; i + 1 < argv.size(); ++i) {
            if (argv[i] == flag) {
                argv[i + 1] = value;
                return;
            }
        }
        argv.push_back(flag);
        argv.push_back(value);
    };
    set_flag("--provider", "replay");
    set_flag("--cassette", cassette);
    set_flag("--out", out_dir);
    return argv;
}

int cmd_replay_check(const ReplayCheckArgs& args) {
    std::filesystem::path run_dir(args.run_dir);
    std::filesystem::path manifest_path = run_dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw Error("no manifest.json under '" + args.run_dir + "'");
    json manifest = json::parse(read_file(manifest_path));

    std::string cassette = args.cassette;
    if (cassette.empty()) cassette = manifest.value("cassette", "");
    if (cassette.empty()) throw Error("run has no cassette on record; pass --cassette");
    if (!std::filesystem::exists(cassette)) throw Error("cassette '" + cassette + "' not found");

    const json& dataset = manifest.at("dataset");
    std::string dataset_path = dataset.at("path").get<std::string>();
    if (!std::filesystem::exists(dataset_path))
        throw Error("dataset '" + dataset_path + "' from the manifest no longer exists");
    std::string digest = file_digest(dataset_path);
    if (digest != dataset.at("digest").get<std::string>())
        throw Error("dataset '" + dataset_path + "' changed since the recorded run (digest mismatch)");

    std::filesystem::path replay_dir =
        std::filesystem::temp_directory_path() /
        ("parld-replay-" + fnv1a64_hex(std::filesystem::absolute(run_dir).string() + make_run_id()));
    std::filesystem::create_directories(replay_dir);

    std::vector<std::string> argv = manifest.at("argv").get<std::vector<std::string>>();
    argv = rewrite_argv(std::move(argv), cassette, replay_dir.string());

    int rc = run_cli(argv);
    if (rc != kExitOk) {
        std::filesystem::remove_all(replay_dir);
        throw Error("replay run exited with code " + std::to_string(rc));
    }

    // byte-compare everything except the manifest (it carries the run id) and
    // the cassette itself, in both directions
    std::filesystem::path cassette_abs = std::filesystem::absolute(cassette);
    auto skip = [&](const std::filesystem::path& root, const std::filesystem::path& file) {
        std::filesystem::path rel = std::filesystem::relative(file, root);
        if (rel == "manifest.json") return true;
        if (std::filesystem::absolute(file) == cassette_abs) return true;
        return false;
    };
    auto collect = [&](const std::filesystem::path& root) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
            if (!entry.is_regular_file()) continue;
            if (skip(root, entry.path())) continue;
            files.push_back(std::filesystem::relative(entry.path(), root));
        }
        std::sort(files.begin(), files.end());
        return files;
    };

    std::vector<std::string> differing;
    auto original_files = collect(run_dir);
    auto replayed_files = collect(replay_dir);
    for (const auto& rel : original_files) {
        std::filesystem::path other = replay_dir / rel;
        if (!std::filesystem::exists(other)) {
            differing.push_back(rel.string() + " (missing from replay)");
            continue;
        }
        if (read_file(run_dir / rel) != read_file(other)) differing.push_back(rel.string());
    }
    for (const auto& rel : replayed_files) {
        if (!std::filesystem::exists(run_dir / rel))
            differing.push_back(rel.string() + " (extra in replay)");
    }
    std::filesystem::remove_all(replay_dir);

    if (differing.empty()) {
        std::cout << "identical: replay reproduced " << original_files.size() << " file(s) byte for byte\n";
        return kExitOk;
    }
    std::cerr << "replay differs in " << differing.size() << " file(s):\n";
    for (const auto& file : differing) std::cerr << "  " << file << "\n";
    return kExitRuntime;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Dialogue-based learning diagnosis and tutoring experiments"};
    app.name("parld");
    app.require_subcommand(1);

    IngestArgs ingest_args;
    CLI::App* ingest = app.add_subcommand("ingest", "Convert a raw dataset into canonical session files");
    ingest->add_option("--source", ingest_args.source, "mathdial, comta or canonical")
        ->required()
        ->check(CLI::IsMember({"mathdial", "comta", "canonical"}));
    ingest->add_option("--input", ingest_args.input, "Raw dataset file")->required();
    ingest->add_option("--out", ingest_args.out, "Output directory")->required();
    ingest->add_option("--split", ingest_args.split, "Split tag for mathdial records")
        ->check(CLI::IsMember({"train", "test", "unsplit"}));
    ingest->add_option("--goal-filter", ingest_args.goal_filter,
                       "Sidecar id list for the comta goal-clarity filter");

    KcTagArgs kc_args;
    CLI::App* kc_tag = app.add_subcommand("kc-tag", "Tag questions with knowledge concepts via the LLM");
    kc_tag->add_option("--dataset", kc_args.common.dataset, "Canonical sessions.jsonl")->required();
    kc_tag->add_option("--cache", kc_args.cache, "Tag cache JSON (question id -> concepts)")->required();
    kc_tag->add_option("--out", kc_args.common.out, "Output directory")->required();
    add_provider_flags(kc_tag, kc_args.common);

    DiagnoseArgs diagnose_args;
    CLI::App* diagnose = app.add_subcommand("diagnose", "Run the diagnosis pipeline over sessions");
    diagnose->add_option("--dataset", diagnose_args.common.dataset, "Canonical sessions.jsonl")->required();
    diagnose->add_option("--out", diagnose_args.common.out, "Run directory")->required();
    diagnose->add_option("--session", diagnose_args.session_ids, "Only these session ids");
    diagnose->add_option("--signal", diagnose_args.signal,
                         "Reflection signal: none, per_turn_correctness or final_label");
    diagnose->add_option("--split", diagnose_args.common.split, "all, train or test");
    add_provider_flags(diagnose, diagnose_args.common);
    add_run_flags(diagnose, diagnose_args.common);

    EvaluateArgs evaluate_args;
    CLI::App* evaluate_cmd =
        app.add_subcommand("evaluate", "Final-turn performance prediction with ACC/F1 report");
    evaluate_cmd->add_option("--dataset", evaluate_args.common.dataset, "Canonical sessions.jsonl")
        ->required();
    evaluate_cmd->add_option("--out", evaluate_args.common.out, "Run directory")->required();
    evaluate_cmd->add_option("--split", evaluate_args.common.split, "all, train or test");
    add_provider_flags(evaluate_cmd, evaluate_args.common);
    add_run_flags(evaluate_cmd, evaluate_args.common);

    AblateArgs ablate_args;
    CLI::App* ablate = app.add_subcommand("ablate", "Evaluate the four component-ablation variants");
    ablate->add_option("--dataset", ablate_args.common.dataset, "Canonical sessions.jsonl")->required();
    ablate->add_option("--out", ablate_args.common.out, "Run directory")->required();
    ablate->add_option("--split", ablate_args.common.split, "all, train or test");
    add_provider_flags(ablate, ablate_args.common);
    add_run_flags(ablate, ablate_args.common);

    SimulateArgs simulate_args;
    CLI::App* simulate =
        app.add_subcommand("simulate", "Tutoring-policy comparison with a simulated student");
    simulate->add_option("--dataset", simulate_args.common.dataset, "Canonical sessions.jsonl")->required();
    simulate->add_option("--out", simulate_args.common.out, "Run directory")->required();
    simulate->add_option("--policies", simulate_args.policies, "Comma list from parld,da,dr");
    simulate->add_flag("--no-pool-filter", simulate_args.no_pool_filter,
                       "Simulate every session, not just originally unmastered ones");
    simulate->add_option("--split", simulate_args.common.split, "all, train or test");
    add_provider_flags(simulate, simulate_args.common);
    add_run_flags(simulate, simulate_args.common);

    ReplayCheckArgs replay_args;
    CLI::App* replay_check =
        app.add_subcommand("replay-check", "Re-run a recorded run from its cassette and compare outputs");
    replay_check->add_option("--run", replay_args.run_dir, "Run directory with manifest.json")->required();
    replay_check->add_option("--cassette", replay_args.cassette, "Cassette (default: the manifest's)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << "run 'parld --help' (or 'parld <command> --help') for usage\n";
        return kExitUsage;
    }

    try {
        if (ingest->parsed()) return cmd_ingest(ingest_args);
        if (kc_tag->parsed()) return cmd_kc_tag(args, kc_args);
        if (diagnose->parsed()) return cmd_diagnose(args, diagnose_args);
        if (evaluate_cmd->parsed()) return cmd_evaluate(args, evaluate_args);
        if (ablate->parsed()) return cmd_ablate(args, ablate_args);
        if (simulate->parsed()) return cmd_simulate(args, simulate_args);
        if (replay_check->parsed()) return cmd_replay_check(replay_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    std::cerr << "error: no command given\n";
    return kExitUsage;
}

}  // namespace parld
