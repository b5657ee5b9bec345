#pragma once
#include <fcntl.h>
#include <unistd.h>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "parley/analysis.hpp"
#include "parley/data.hpp"
#include "parley/detail/parallel.hpp"
#include "parley/domain.hpp"
#include "parley/error.hpp"
#include "parley/evaluation.hpp"
#include "parley/interaction.hpp"
#include "parley/persona.hpp"
#include "parley/prompting.hpp"
#include "parley/provider.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Global options and configuration loading

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool dry_run = false;
    std::optional<int> max_concurrency;
    std::optional<std::string> cache_dir;
};

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    RunConfig config;
    try {
        config = j.get<RunConfig>();
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    validate(config);
    return config;
}

// A single master seed fans out into one independent stream per role, so
// changing it moves every sampling decision at once.
inline void apply_overrides(RunConfig& config, const GlobalOptions& global) {
    if (global.seed) {
        config.seeker_sampling.seed = derive_seed(*global.seed, "seeker");
        config.assistant_sampling.seed = derive_seed(*global.seed, "assistant");
        config.evaluator_sampling.seed = derive_seed(*global.seed, "evaluator");
        config.persona_seed = derive_seed(*global.seed, "persona");
        config.sample_seed = derive_seed(*global.seed, "sample");
    }
    if (global.max_concurrency) config.max_concurrency = *global.max_concurrency;
    if (global.cache_dir) config.cache_dir = *global.cache_dir;
    validate(config);
}

// ---------------------------------------------------------------------------
// Run directory plumbing

namespace detail {

// Exclusive advisory lock: creating <run_dir>/lock with O_EXCL succeeds for
// exactly one process; the file is removed on destruction.
class RunLock {
public:
    RunLock() = default;

    explicit RunLock(const std::filesystem::path& dir) {
        std::filesystem::create_directories(dir);
        path_ = dir / "lock";
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw ConfigError("run directory " + dir.string() + " is locked; remove " +
                              path_.string() + " if no other run is active");
        }
    }

    RunLock(RunLock&& other) noexcept { *this = std::move(other); }
    RunLock& operator=(RunLock&& other) noexcept {
        if (this != &other) {
            release();
            fd_ = other.fd_;
            path_ = std::move(other.path_);
            other.fd_ = -1;
        }
        return *this;
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;
    ~RunLock() { release(); }

    void release() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
    std::filesystem::path path_;
};

// Appending step log. Lines carry no timestamps so identical command
// sequences produce identical logs.
class RunLogger {
public:
    RunLogger() = default;
    explicit RunLogger(const std::filesystem::path& path) { out_.open(path, std::ios::app); }

    void line(const std::string& text) {
        if (out_) {
            out_ << text << "\n";
            out_.flush();
        }
    }

private:
    std::ofstream out_;
};

}  // namespace detail

struct CommandContext {
    GlobalOptions global;
    RunConfig config;
    PersonaRegistry registry;
    TemplateSet templates;
    std::string digest;
    std::filesystem::path run_dir;
};

inline CommandContext make_context(const GlobalOptions& global) {
    CommandContext ctx;
    ctx.global = global;
    ctx.config = load_config_file(global.config_path);
    apply_overrides(ctx.config, global);
    ctx.registry = PersonaRegistry::load(ctx.config.persona_file);
    ctx.templates = TemplateSet::load(ctx.config.template_dir);
    PersonaDistribution::from_config(ctx.config, ctx.registry);  // surface errors early
    ctx.digest = config_digest(ctx.config);
    ctx.run_dir = std::filesystem::path(ctx.config.output_dir) / config_digest_prefix(ctx.config);
    return ctx;
}

// Rebinds the context to a modified configuration (digest and run dir move
// with it). Used by persona sweeps.
inline CommandContext with_config(const CommandContext& base, RunConfig config) {
    CommandContext ctx;
    ctx.global = base.global;
    ctx.config = std::move(config);
    validate(ctx.config);
    ctx.registry = base.registry;
    ctx.templates = base.templates;
    PersonaDistribution::from_config(ctx.config, ctx.registry);
    ctx.digest = config_digest(ctx.config);
    ctx.run_dir = std::filesystem::path(ctx.config.output_dir) / config_digest_prefix(ctx.config);
    return ctx;
}

inline std::vector<Question> load_configured_questions(const RunConfig& config) {
    if (config.questions_path.empty()) throw ConfigError("questions_path is not set");
    auto questions = load_questions(config.questions_path, config.questions_format,
                                    config.lenient_load);
    if (config.sample_questions) {
        questions = sample_questions(questions, *config.sample_questions, config.sample_seed);
    }
    if (questions.empty()) throw DataError("no questions loaded from " + config.questions_path);
    return questions;
}

inline std::map<std::string, Question> index_questions(const std::vector<Question>& questions) {
    std::map<std::string, Question> out;
    for (const auto& q : questions) out[q.id] = q;
    return out;
}

inline std::map<std::string, std::uint64_t> seed_map(const RunConfig& config) {
    return {{"seeker", config.seeker_sampling.seed},
            {"assistant", config.assistant_sampling.seed},
            {"evaluator", config.evaluator_sampling.seed},
            {"persona", config.persona_seed},
            {"sample", config.sample_seed}};
}

inline void write_run_meta(const CommandContext& ctx, const std::string& command) {
    json j{{"config_digest", ctx.digest},
           {"template_digest", ctx.templates.digest()},
           {"seeds", json(seed_map(ctx.config))},
           {"last_command", command},
           {"semantic_config", semantic_config_json(ctx.config)}};
    std::ofstream out(ctx.run_dir / "run_meta.json", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + (ctx.run_dir / "run_meta.json").string());
    out << j.dump(2) << "\n";
}

inline bool has_parse_budget_failure(const std::vector<EvaluationRecord>& records) {
    for (const auto& r : records) {
        if (r.invalid_reason == "parse_budget") return true;
        if (r.diagnostic.find("(parse_budget)") != std::string::npos) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Shared evaluation driver

struct EvaluationOutput {
    std::vector<EvaluationRecord> run_records;  // empty in multi-perspective mode
    std::vector<EvaluationRecord> averaged;     // one record per transcript (x evaluator)
};

// Scores a transcript set, grouping work by (assistant model, persona,
// interaction run) and executing groups concurrently. Output order is
// canonical regardless of scheduling; raw evaluator outputs are re-emitted
// to raw_sink in that same order.
inline EvaluationOutput evaluate_transcripts(const CommandContext& ctx, ProviderHub& hub,
                                             const std::vector<Transcript>& transcripts,
                                             const std::map<std::string, Question>& questions_by_id,
                                             bool multi_perspective_mode,
                                             const RawOutputSink& raw_sink = {}) {
    const RunConfig& config = ctx.config;
    EvaluationOutput out;
    if (transcripts.empty()) return out;

    std::vector<std::exception_ptr> failures;
    std::mutex failures_mutex;

    if (multi_perspective_mode) {
        if (config.evaluator_models.size() < 2) {
            throw ConfigError("multi-perspective evaluation needs at least 2 evaluator_models");
        }
        std::vector<EvaluationRecord> results(transcripts.size());
        std::vector<std::vector<json>> raws(transcripts.size());
        detail::parallel_for(transcripts.size(), config.max_concurrency, [&](std::size_t i) {
            try {
                RawOutputSink collect;
                if (raw_sink) {
                    collect = [&raws, i](const json& j) { raws[i].push_back(j); };
                }
                results[i] = multi_perspective(transcripts[i], questions_by_id,
                                               config.evaluator_models,
                                               ctx.registry.get(transcripts[i].persona_name),
                                               config, hub, ctx.templates, collect);
            } catch (...) {
                std::lock_guard<std::mutex> guard(failures_mutex);
                failures.push_back(std::current_exception());
            }
        });
        if (!failures.empty()) std::rethrow_exception(failures.front());
        if (raw_sink) {
            for (const auto& group : raws) {
                for (const auto& j : group) raw_sink(j);
            }
        }
        out.averaged = std::move(results);
        return out;
    }

    if (config.evaluator_models.empty()) throw ConfigError("evaluator_models is empty");
    const std::string& evaluator = config.evaluator_models.front();

    struct Group {
        std::vector<Transcript> transcripts;
    };
    std::vector<std::string> order;
    std::map<std::string, Group> groups;
    for (const auto& t : transcripts) {
        std::string key = t.assistant_model_id + "\x1f" + t.persona_name + "\x1f" +
                          std::to_string(t.run_index);
        if (!groups.count(key)) order.push_back(key);
        groups[key].transcripts.push_back(t);
    }

    std::vector<std::vector<EvaluationRecord>> group_records(order.size());
    std::vector<std::vector<json>> group_raws(order.size());
    detail::parallel_for(order.size(), config.max_concurrency, [&](std::size_t i) {
        try {
            const Group& group = groups.at(order[i]);
            RawOutputSink collect;
            if (raw_sink) {
                collect = [&group_raws, i](const json& j) { group_raws[i].push_back(j); };
            }
            group_records[i] = evaluate(group.transcripts, questions_by_id, evaluator,
                                        ctx.registry.get(group.transcripts.front().persona_name),
                                        config, hub, ctx.templates, collect);
        } catch (...) {
            std::lock_guard<std::mutex> guard(failures_mutex);
            failures.push_back(std::current_exception());
        }
    });
    if (!failures.empty()) std::rethrow_exception(failures.front());
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (raw_sink) {
            for (const auto& j : group_raws[i]) raw_sink(j);
        }
        out.run_records.insert(out.run_records.end(), group_records[i].begin(),
                               group_records[i].end());
    }
    out.averaged = average_runs_by_transcript(out.run_records);
    return out;
}

inline void write_evaluations(const CommandContext& ctx, const EvaluationOutput& output) {
    JsonlWriter writer((ctx.run_dir / "evaluations.jsonl").string());
    for (const auto& r : output.run_records) writer.write_value(r);
    for (const auto& r : output.averaged) writer.write_value(r);
}

// Prefer run averages when a record file mixes per-run records with them.
inline std::vector<EvaluationRecord> select_for_analysis(
    const std::vector<EvaluationRecord>& records) {
    std::vector<EvaluationRecord> averaged;
    for (const auto& r : records) {
        if (r.run_index == -1) averaged.push_back(r);
    }
    return averaged.empty() ? records : averaged;
}

// ---------------------------------------------------------------------------
// Aggregation helpers shared by benchmark and report

// Per-(model, persona) rows plus, when the configured mixture has several
// personas, one weighted "mixture" row per model that has every persona
// covered.
inline std::vector<AggregateRow> build_aggregate_rows(
    const CommandContext& ctx, const std::vector<EvaluationRecord>& averaged,
    const std::vector<Transcript>& transcripts,
    const std::map<std::string, Question>& questions_by_id, detail::RunLogger* log = nullptr) {
    std::vector<AggregateRow> rows = aggregate(averaged, transcripts, questions_by_id, true);
    auto distribution = PersonaDistribution::from_config(ctx.config, ctx.registry);
    if (distribution.entries.size() < 2) return rows;

    std::set<std::string> models;
    for (const auto& row : rows) models.insert(row.model_id);
    for (const auto& model : models) {
        std::map<std::string, AggregateRow> per_persona;
        for (const auto& row : rows) {
            if (row.model_id == model) per_persona[row.persona_name] = row;
        }
        bool complete = true;
        for (const auto& [name, weight] : distribution.entries) {
            if (!per_persona.count(name)) {
                complete = false;
                if (log) {
                    log->line("aggregate: no " + name + " slots for " + model +
                              ", skipping mixture row");
                }
            }
        }
        if (complete) rows.push_back(mix_scores(per_persona, distribution));
    }
    std::sort(rows.begin(), rows.end(), [](const AggregateRow& a, const AggregateRow& b) {
        return std::tie(a.model_id, a.persona_name) < std::tie(b.model_id, b.persona_name);
    });
    return rows;
}

inline std::optional<Granularity> resolve_granularity(const RunConfig& config,
                                                      const std::string& flag_value) {
    if (!flag_value.empty()) return granularity_from_string(flag_value);
    return config.granularity;
}

// ---------------------------------------------------------------------------
// Subcommand: validate-config

inline int cmd_validate_config(const CommandContext& ctx) {
    auto distribution = PersonaDistribution::from_config(ctx.config, ctx.registry);
    std::cout << "config ok\n";
    std::cout << "  digest: " << config_digest_prefix(ctx.config) << "\n";
    std::cout << "  run dir: " << ctx.run_dir.string() << "\n";
    std::cout << "  seeker: " << (ctx.config.seeker_model.empty() ? "(unset)"
                                                                  : ctx.config.seeker_model)
              << "\n";
    std::cout << "  assistants: " << detail::join(ctx.config.assistant_models, ", ") << "\n";
    std::cout << "  evaluators: " << detail::join(ctx.config.evaluator_models, ", ") << "\n";
    std::cout << "  personas:";
    for (const auto& [name, weight] : distribution.entries) {
        std::cout << " " << name << "=" << json(weight).dump();
    }
    std::cout << "\n";
    if (!ctx.config.questions_path.empty()) {
        auto questions = load_configured_questions(ctx.config);
        std::cout << "  questions: " << questions.size() << " from " << ctx.config.questions_path
                  << " (" << ctx.config.questions_format << ")\n";
    }
    if (!ctx.config.annotations_path.empty()) {
        auto annotations = load_annotations(ctx.config.annotations_path, ctx.config.lenient_load);
        std::cout << "  annotations: " << annotations.size() << " from "
                  << ctx.config.annotations_path << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Subcommand: interact

inline int cmd_interact(const CommandContext& ctx) {
    if (ctx.config.seeker_model.empty()) throw ConfigError("seeker_model is not set");
    if (ctx.config.assistant_models.empty()) throw ConfigError("assistant_models is empty");
    auto questions = load_configured_questions(ctx.config);
    long slots = static_cast<long>(ctx.config.assistant_models.size()) *
                 static_cast<long>(questions.size()) * ctx.config.runs_per_question;
    if (ctx.global.dry_run) {
        std::cout << "dry run: interact\n";
        std::cout << "  run dir: " << ctx.run_dir.string() << "\n";
        std::cout << "  questions: " << questions.size() << ", models: "
                  << ctx.config.assistant_models.size() << ", runs per question: "
                  << ctx.config.runs_per_question << "\n";
        std::cout << "  dialogue slots: " << slots << "\n";
        std::cout << "  request ceiling: " << slots * (2 * ctx.config.max_turns + 2)
                  << " calls\n";
        return 0;
    }
    detail::RunLock lock(ctx.run_dir);
    detail::RunLogger log(ctx.run_dir / "log.txt");
    log.line("interact: config " + ctx.digest);
    auto hub = build_provider_hub(ctx.config);
    auto transcripts = run_batch(questions, ctx.config, ctx.registry, *hub, ctx.templates);
    write_jsonl((ctx.run_dir / "transcripts.jsonl").string(), transcripts);
    write_run_meta(ctx, "interact");

    std::map<std::string, int> terminations;
    for (const auto& t : transcripts) ++terminations[to_string(t.termination)];
    std::string tally;
    for (const auto& [name, count] : terminations) {
        tally += (tally.empty() ? "" : ", ") + name + "=" + std::to_string(count);
    }
    log.line("interact: wrote " + std::to_string(transcripts.size()) + " transcripts (" + tally +
             ")");
    std::cout << "wrote " << transcripts.size() << " transcripts to "
              << (ctx.run_dir / "transcripts.jsonl").string() << "\n";
    std::cout << "terminations: " << tally << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Subcommand: evaluate

struct EvaluateOptions {
    std::string transcripts_path;
    bool multi_perspective = false;
};

inline int cmd_evaluate(const CommandContext& ctx, const EvaluateOptions& opt) {
    if (ctx.config.evaluator_models.empty()) throw ConfigError("evaluator_models is empty");
    if (opt.multi_perspective && ctx.config.evaluator_models.size() < 2) {
        throw ConfigError("--multi-perspective needs at least 2 evaluator_models");
    }
    std::string transcripts_path = opt.transcripts_path.empty()
                                       ? (ctx.run_dir / "transcripts.jsonl").string()
                                       : opt.transcripts_path;
    if (ctx.global.dry_run) {
        std::cout << "dry run: evaluate\n";
        std::cout << "  transcripts: " << transcripts_path << "\n";
        std::cout << "  evaluator: "
                  << (opt.multi_perspective
                          ? "multi(" + detail::join(ctx.config.evaluator_models, ",") + ")"
                          : ctx.config.evaluator_models.front())
                  << "\n";
        std::cout << "  runs per transcript: " << ctx.config.eval_runs_per_transcript << "\n";
        return 0;
    }
    auto questions = load_configured_questions(ctx.config);
    auto questions_by_id = index_questions(questions);
    auto transcripts = read_jsonl<Transcript>(transcripts_path);
    if (transcripts.empty()) throw DataError("no transcripts in " + transcripts_path);
    for (const auto& t : transcripts) validate(t);

    detail::RunLock lock(ctx.run_dir);
    detail::RunLogger log(ctx.run_dir / "log.txt");
    log.line("evaluate: " + std::to_string(transcripts.size()) + " transcripts from " +
             std::filesystem::path(transcripts_path).filename().string());
    auto hub = build_provider_hub(ctx.config);
    JsonlWriter raw_writer((ctx.run_dir / "evaluator_raw.jsonl").string());
    auto output = evaluate_transcripts(ctx, *hub, transcripts, questions_by_id,
                                       opt.multi_perspective,
                                       [&](const json& j) { raw_writer.write(j); });
    write_evaluations(ctx, output);
    write_run_meta(ctx, "evaluate");

    int valid = 0;
    for (const auto& r : output.averaged) {
        if (r.valid) ++valid;
    }
    log.line("evaluate: wrote " + std::to_string(output.run_records.size()) + " run records, " +
             std::to_string(output.averaged.size()) + " averages (" + std::to_string(valid) +
             " valid)");
    std::cout << "wrote " << output.run_records.size() + output.averaged.size() << " records to "
              << (ctx.run_dir / "evaluations.jsonl").string() << "\n";
    std::cout << "valid averaged records: " << valid << "/" << output.averaged.size() << "\n";
    bool budget_failure = has_parse_budget_failure(output.run_records) ||
                          has_parse_budget_failure(output.averaged);
    if (budget_failure) {
        std::cerr << "warning: evaluator output stayed unparseable past the retry budget for "
                     "at least one call\n";
        return static_cast<int>(ErrorKind::parse_budget);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Subcommand: metaeval

struct MetaevalOptions {
    std::string records_path;
    std::string annotations_path;
    std::string granularity;
};

inline int cmd_metaeval(const CommandContext& ctx, const MetaevalOptions& opt) {
    auto granularity = resolve_granularity(ctx.config, opt.granularity);
    if (!granularity) {
        throw ConfigError("meta-evaluation needs --granularity (or granularity in the config)");
    }
    std::string records_path = opt.records_path.empty()
                                   ? (ctx.run_dir / "evaluations.jsonl").string()
                                   : opt.records_path;
    std::string annotations_path =
        opt.annotations_path.empty() ? ctx.config.annotations_path : opt.annotations_path;
    if (annotations_path.empty()) {
        throw ConfigError("meta-evaluation needs --annotations (or annotations_path in the "
                          "config)");
    }
    if (ctx.global.dry_run) {
        std::cout << "dry run: metaeval\n";
        std::cout << "  records: " << records_path << "\n";
        std::cout << "  annotations: " << annotations_path << "\n";
        std::cout << "  granularity: " << to_string(*granularity) << "\n";
        return 0;
    }
    auto records = select_for_analysis(read_jsonl<EvaluationRecord>(records_path));
    auto annotations = load_annotations(annotations_path, ctx.config.lenient_load);
    auto correlation =
        correlation_report(records, annotations, *granularity, ctx.config.overall_method);

    detail::RunLock lock(ctx.run_dir);
    detail::RunLogger log(ctx.run_dir / "log.txt");
    ReportInputs inputs;
    inputs.human_rows = aggregate_human(annotations);
    inputs.correlation = correlation;
    inputs.config_digest = ctx.digest;
    inputs.template_digest = ctx.templates.digest();
    inputs.seeds = seed_map(ctx.config);
    render_report(inputs, ctx.run_dir);
    write_run_meta(ctx, "metaeval");
    log.line("metaeval: " + to_string(*granularity) + " over " +
             std::to_string(records.size()) + " records, " + std::to_string(annotations.size()) +
             " annotations");

    for (const auto& [metric, mc] : correlation.metrics) {
        std::cout << metric << ": r="
                  << (mc.r ? detail::fixed4(*mc.r) : std::string("undefined")) << " (n="
                  << mc.n_pairs << ")\n";
    }
    std::cout << "overall (" << correlation.overall_method << "): "
              << (correlation.overall_r ? detail::fixed4(*correlation.overall_r)
                                        : std::string("undefined"))
              << "\n";
    if (!correlation.unmatched_keys.empty()) {
        std::cout << "unmatched keys: " << correlation.unmatched_keys.size() << " (see report)\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Subcommand: benchmark

struct BenchmarkOptions {
    bool multi_perspective = false;
    bool baseline = false;
    std::string persona_sweep;
    std::string granularity;
};

struct BenchmarkResult {
    int exit_code = 0;
    std::vector<AggregateRow> overall_rows;  // per model, personas pooled
};

inline BenchmarkResult run_benchmark_once(const CommandContext& ctx,
                                          const BenchmarkOptions& opt) {
    if (ctx.config.seeker_model.empty()) throw ConfigError("seeker_model is not set");
    if (ctx.config.assistant_models.empty()) throw ConfigError("assistant_models is empty");
    if (ctx.config.evaluator_models.empty()) throw ConfigError("evaluator_models is empty");
    if (opt.multi_perspective && ctx.config.evaluator_models.size() < 2) {
        throw ConfigError("--multi-perspective needs at least 2 evaluator_models");
    }
    auto questions = load_configured_questions(ctx.config);
    auto questions_by_id = index_questions(questions);
    if (ctx.global.dry_run) {
        long slots = static_cast<long>(ctx.config.assistant_models.size()) *
                     static_cast<long>(questions.size()) * ctx.config.runs_per_question;
        std::cout << "dry run: benchmark\n";
        std::cout << "  run dir: " << ctx.run_dir.string() << "\n";
        std::cout << "  dialogue slots: " << slots << ", eval runs per transcript: "
                  << ctx.config.eval_runs_per_transcript << "\n";
        if (opt.baseline) std::cout << "  baseline: " << questions.size() << " direct calls\n";
        return {};
    }

    detail::RunLock lock(ctx.run_dir);
    detail::RunLogger log(ctx.run_dir / "log.txt");
    log.line("benchmark: config " + ctx.digest);
    auto hub = build_provider_hub(ctx.config);

    auto transcripts = run_batch(questions, ctx.config, ctx.registry, *hub, ctx.templates);
    write_jsonl((ctx.run_dir / "transcripts.jsonl").string(), transcripts);
    log.line("benchmark: wrote " + std::to_string(transcripts.size()) + " transcripts");

    JsonlWriter raw_writer((ctx.run_dir / "evaluator_raw.jsonl").string());
    auto output = evaluate_transcripts(ctx, *hub, transcripts, questions_by_id,
                                       opt.multi_perspective,
                                       [&](const json& j) { raw_writer.write(j); });
    write_evaluations(ctx, output);
    log.line("benchmark: wrote " + std::to_string(output.averaged.size()) +
             " averaged evaluation records");

    ReportInputs inputs;
    inputs.rows = build_aggregate_rows(ctx, output.averaged, transcripts, questions_by_id, &log);
    inputs.config_digest = ctx.digest;
    inputs.template_digest = ctx.templates.digest();
    inputs.seeds = seed_map(ctx.config);
    if (opt.baseline) {
        for (const auto& model : ctx.config.assistant_models) {
            inputs.baseline_rows.push_back(non_interactive_baseline(
                questions, model, ctx.config, *hub, ctx.templates));
        }
        log.line("benchmark: baseline over " + std::to_string(questions.size()) + " questions");
    }
    if (!ctx.config.annotations_path.empty()) {
        auto annotations = load_annotations(ctx.config.annotations_path, ctx.config.lenient_load);
        inputs.human_rows = aggregate_human(annotations);
        if (auto granularity = resolve_granularity(ctx.config, opt.granularity)) {
            inputs.correlation = correlation_report(output.averaged, annotations, *granularity,
                                                    ctx.config.overall_method);
        }
    }
    render_report(inputs, ctx.run_dir);
    write_run_meta(ctx, "benchmark");
    log.line("benchmark: report written");
    std::cout << render_markdown(inputs) << "\n";

    BenchmarkResult result;
    result.overall_rows = aggregate(output.averaged, transcripts, questions_by_id, false);
    if (has_parse_budget_failure(output.run_records) ||
        has_parse_budget_failure(output.averaged)) {
        std::cerr << "warning: evaluator output stayed unparseable past the retry budget for "
                     "at least one call\n";
        result.exit_code = static_cast<int>(ErrorKind::parse_budget);
    }
    return result;
}

// Parses "Name=0.25,0.5,1.0" into the persona name and its weight ladder.
inline std::pair<std::string, std::vector<double>> parse_persona_sweep(const std::string& spec) {
    auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= spec.size()) {
        throw ConfigError("--persona-sweep expects Name=w1,w2,... got: " + spec);
    }
    std::string name = spec.substr(0, eq);
    std::vector<double> weights;
    std::string rest = spec.substr(eq + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        auto comma = rest.find(',', pos);
        std::string item = rest.substr(pos, comma == std::string::npos ? std::string::npos
                                                                       : comma - pos);
        item = detail::trim(item);
        if (item.empty()) throw ConfigError("--persona-sweep has an empty weight in: " + spec);
        double w = 0.0;
        try {
            std::size_t used = 0;
            w = std::stod(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("--persona-sweep weight is not a number: " + item);
        }
        if (w < 0.0 || w > 1.0) {
            throw ConfigError("--persona-sweep weight outside [0,1]: " + item);
        }
        weights.push_back(w);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (weights.empty()) throw ConfigError("--persona-sweep has no weights: " + spec);
    return {name, weights};
}

inline int cmd_benchmark(const CommandContext& ctx, const BenchmarkOptions& opt) {
    if (opt.persona_sweep.empty()) return run_benchmark_once(ctx, opt).exit_code;

    auto [persona_name, weights] = parse_persona_sweep(opt.persona_sweep);
    if (!ctx.registry.has(persona_name)) throw ConfigError("unknown persona: " + persona_name);
    if (persona_name == "default") {
        throw ConfigError("--persona-sweep varies a persona against default; sweeping default "
                          "itself is meaningless");
    }
    BenchmarkOptions sub_opt = opt;
    sub_opt.persona_sweep.clear();

    int exit_code = 0;
    json summary_runs = json::array();
    std::string summary_md = "# Persona Sweep: " + persona_name + "\n\n";
    summary_md += "| Weight | Model | Helpfulness | Fluency | # Queries | Accuracy | Run |\n";
    summary_md += "| --- | --- | --- | --- | --- | --- | --- |\n";
    for (double w : weights) {
        RunConfig sub_config = ctx.config;
        sub_config.persona_distribution.clear();
        if (w >= 1.0 - 1e-12) {
            sub_config.persona_distribution[persona_name] = 1.0;
        } else if (w <= 1e-12) {
            sub_config.persona_distribution["default"] = 1.0;
        } else {
            sub_config.persona_distribution[persona_name] = w;
            sub_config.persona_distribution["default"] = 1.0 - w;
        }
        CommandContext sub_ctx = with_config(ctx, sub_config);
        std::cout << "== sweep " << persona_name << "=" << json(w).dump() << " -> "
                  << sub_ctx.run_dir.string() << "\n";
        BenchmarkResult result = run_benchmark_once(sub_ctx, sub_opt);
        exit_code = std::max(exit_code, result.exit_code);
        for (const auto& row : result.overall_rows) {
            auto cell = [&](const char* metric) {
                auto it = row.metrics.find(metric);
                return it == row.metrics.end() ? std::string("-")
                                               : detail::metric_cell(it->second, true);
            };
            summary_md += "| " + json(w).dump() + " | " + row.model_id + " | " +
                          cell("helpfulness") + " | " + cell("fluency") + " | " +
                          cell("num_queries") + " | " + cell("accuracy") + " | " +
                          config_digest_prefix(sub_ctx.config) + " |\n";
        }
        summary_runs.push_back(json{{"weight", w},
                                    {"config_digest", sub_ctx.digest},
                                    {"rows", result.overall_rows}});
    }
    if (!ctx.global.dry_run) {
        std::filesystem::create_directories(ctx.config.output_dir);
        std::filesystem::path base =
            std::filesystem::path(ctx.config.output_dir) / ("sweep-" + persona_name);
        {
            std::ofstream out(base.string() + ".md", std::ios::binary | std::ios::trunc);
            if (!out) throw DataError("cannot write " + base.string() + ".md");
            out << summary_md;
        }
        {
            std::ofstream out(base.string() + ".json", std::ios::binary | std::ios::trunc);
            if (!out) throw DataError("cannot write " + base.string() + ".json");
            out << json{{"persona", persona_name}, {"runs", summary_runs}}.dump(2) << "\n";
        }
        std::cout << "\n" << summary_md;
        std::cout << "sweep summary written to " << base.string() << ".md\n";
    }
    return exit_code;
}

// ---------------------------------------------------------------------------
// Subcommand: report

struct ReportOptions {
    std::string transcripts_path;
    std::string records_path;
    std::string annotations_path;
    std::string granularity;
};

inline int cmd_report(const CommandContext& ctx, const ReportOptions& opt) {
    std::string transcripts_path = opt.transcripts_path.empty()
                                       ? (ctx.run_dir / "transcripts.jsonl").string()
                                       : opt.transcripts_path;
    std::string records_path = opt.records_path.empty()
                                   ? (ctx.run_dir / "evaluations.jsonl").string()
                                   : opt.records_path;
    if (ctx.global.dry_run) {
        std::cout << "dry run: report\n";
        std::cout << "  transcripts: " << transcripts_path << "\n";
        std::cout << "  records: " << records_path << "\n";
        std::cout << "  would write " << (ctx.run_dir / "report.{md,csv,json}").string() << "\n";
        return 0;
    }
    auto questions = load_configured_questions(ctx.config);
    auto questions_by_id = index_questions(questions);
    auto transcripts = read_jsonl<Transcript>(transcripts_path);
    if (transcripts.empty()) throw DataError("no transcripts in " + transcripts_path);
    auto records = select_for_analysis(read_jsonl<EvaluationRecord>(records_path));

    detail::RunLock lock(ctx.run_dir);
    detail::RunLogger log(ctx.run_dir / "log.txt");
    ReportInputs inputs;
    inputs.rows = build_aggregate_rows(ctx, records, transcripts, questions_by_id, &log);
    inputs.config_digest = ctx.digest;
    inputs.template_digest = ctx.templates.digest();
    inputs.seeds = seed_map(ctx.config);
    std::string annotations_path =
        opt.annotations_path.empty() ? ctx.config.annotations_path : opt.annotations_path;
    if (!annotations_path.empty()) {
        auto annotations = load_annotations(annotations_path, ctx.config.lenient_load);
        inputs.human_rows = aggregate_human(annotations);
        if (auto granularity = resolve_granularity(ctx.config, opt.granularity)) {
            inputs.correlation = correlation_report(records, annotations, *granularity,
                                                    ctx.config.overall_method);
        }
    }
    render_report(inputs, ctx.run_dir);
    write_run_meta(ctx, "report");
    log.line("report: rendered from " +
             std::filesystem::path(transcripts_path).filename().string() + " and " +
             std::filesystem::path(records_path).filename().string());
    std::cout << render_markdown(inputs) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline int cli_main(int argc, char** argv) {
    CLI::App app{"Interactive evaluation harness: persona-driven seekers query candidate "
                 "assistants, evaluator models score the dialogues, and reports correlate the "
                 "scores with human judgments"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions global;
    app.add_option("--config", global.config_path, "Run configuration JSON")
        ->required()
        ->envname("PARLEY_CONFIG");
    app.add_option("--seed", global.seed, "Master seed; derives all role seeds");
    app.add_flag("--dry-run", global.dry_run,
                 "Describe the planned work without contacting any backend or writing outputs");
    app.add_option("--max-concurrency", global.max_concurrency,
                   "Cap on in-flight requests per backend")
        ->check(CLI::PositiveNumber);
    app.add_option("--cache-dir", global.cache_dir,
                   "Response cache directory (overrides the config)");

    auto* interact = app.add_subcommand(
        "interact", "Run seeker-assistant dialogues over the question set");
    auto* evaluate = app.add_subcommand(
        "evaluate", "Score stored transcripts with the configured evaluator");
    EvaluateOptions evaluate_opt;
    evaluate->add_option("--transcripts", evaluate_opt.transcripts_path,
                         "Transcript JSON-Lines file (default: the run directory's)");
    evaluate->add_flag("--multi-perspective", evaluate_opt.multi_perspective,
                       "Average scores across all configured evaluator models");

    auto* metaeval = app.add_subcommand(
        "metaeval", "Correlate harness scores with human annotations");
    MetaevalOptions metaeval_opt;
    metaeval->add_option("--records", metaeval_opt.records_path,
                         "Evaluation record JSON-Lines file (default: the run directory's)");
    metaeval->add_option("--annotations", metaeval_opt.annotations_path,
                         "Human annotation JSON-Lines file (default: config annotations_path)");
    metaeval->add_option("--granularity", metaeval_opt.granularity,
                         "Pairing level: per_model, per_question, or per_worker");

    auto* benchmark = app.add_subcommand(
        "benchmark", "Full pipeline: interact, evaluate, aggregate, report");
    BenchmarkOptions benchmark_opt;
    benchmark->add_flag("--multi-perspective", benchmark_opt.multi_perspective,
                        "Average scores across all configured evaluator models");
    benchmark->add_flag("--baseline", benchmark_opt.baseline,
                        "Also measure direct single-shot answering without dialogue");
    benchmark->add_option("--persona-sweep", benchmark_opt.persona_sweep,
                          "Repeat the benchmark over persona weights, e.g. Expert=0.25,0.5,1");
    benchmark->add_option("--granularity", benchmark_opt.granularity,
                          "Pairing level for the human-correlation section");

    auto* report = app.add_subcommand(
        "report", "Re-render reports from stored transcripts and records");
    ReportOptions report_opt;
    report->add_option("--transcripts", report_opt.transcripts_path,
                       "Transcript JSON-Lines file (default: the run directory's)");
    report->add_option("--records", report_opt.records_path,
                       "Evaluation record JSON-Lines file (default: the run directory's)");
    report->add_option("--annotations", report_opt.annotations_path,
                       "Human annotation JSON-Lines file (default: config annotations_path)");
    report->add_option("--granularity", report_opt.granularity,
                       "Pairing level for the human-correlation section");

    auto* validate_config = app.add_subcommand(
        "validate-config", "Check the configuration and referenced resources");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message
        return static_cast<int>(ErrorKind::config);
    }

    try {
        CommandContext ctx = make_context(global);
        if (interact->parsed()) return cmd_interact(ctx);
        if (evaluate->parsed()) return cmd_evaluate(ctx, evaluate_opt);
        if (metaeval->parsed()) return cmd_metaeval(ctx, metaeval_opt);
        if (benchmark->parsed()) return cmd_benchmark(ctx, benchmark_opt);
        if (report->parsed()) return cmd_report(ctx, report_opt);
        if (validate_config->parsed()) return cmd_validate_config(ctx);
        throw ConfigError("no subcommand given");
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::config);
    }
}

}  // namespace parley
