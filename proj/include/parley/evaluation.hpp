#pragma once
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "parley/detail/strings.hpp"
#include "parley/domain.hpp"
#include "parley/prompting.hpp"
#include "parley/provider.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Score parsing

// Raised for evaluator output that cannot be parsed; maps to the
// parse-budget exit code when it survives all retries.
class ScoreParseError : public Error {
public:
    explicit ScoreParseError(std::string message)
        : Error(ErrorKind::parse_budget, std::move(message)) {}
};

struct ParsedScores {
    double helpfulness = 0.0;  // [1,5]
    double fluency = 0.0;      // [1,5]
    std::string free_form;
};

// Canonical line rendering of a score triple; parse_scores inverts it.
inline std::string render_scores(const ParsedScores& scores) {
    auto num = [](double v) { return json(v).dump(); };
    return "Fluency (5-point Likert): " + num(scores.fluency) +
           "\nHelpfulness (5-point Likert): " + num(scores.helpfulness) +
           "\nHelpfulness (free-form): " + scores.free_form;
}

namespace detail {

// Matches "<label>[ (5-point Likert)] <: or dash> <number>", case-insensitive
// label, leading list markers tolerated. Returns the numeric value.
inline std::optional<double> match_likert_line(const std::string& line,
                                               const std::string& label) {
    auto make = [](const char* name) {
        return std::regex(std::string("^[^A-Za-z]*") + name +
                              "\\s*(?:\\(5-point likert\\))?\\s*(?::|-|\xe2\x80\x93)\\s*"
                              "([0-9]+(?:\\.[0-9]+)?)\\b.*$",
                          std::regex::icase);
    };
    static const std::regex fluency_pattern = make("fluency");
    static const std::regex helpfulness_pattern = make("helpfulness");
    const std::regex& pattern = label == "fluency" ? fluency_pattern : helpfulness_pattern;
    std::smatch m;
    if (!std::regex_match(line, m, pattern)) return std::nullopt;
    return std::stod(m[1].str());
}

inline bool is_free_form_line(const std::string& line, std::string* rest) {
    static const std::regex pattern(
        "^[^A-Za-z]*helpfulness\\s*\\(free-form\\)\\s*(?::|-|\xe2\x80\x93)\\s*(.*)$",
        std::regex::icase);
    std::smatch m;
    if (!std::regex_match(line, m, pattern)) return false;
    if (rest) *rest = m[1].str();
    return true;
}

inline bool is_metric_label_line(const std::string& line) {
    return match_likert_line(line, "fluency").has_value() ||
           match_likert_line(line, "helpfulness").has_value() ||
           is_free_form_line(line, nullptr);
}

}  // namespace detail

// Extracts the two Likert values and the free-form text from one evaluator
// output block. Accepts "Fluency: 4", "Fluency (5-point Likert): 4", and
// dash separators; integer or decimal values. Fails on a missing metric, a
// value outside [1,5], or two conflicting values for one metric.
inline ParsedScores parse_scores(const std::string& raw) {
    std::optional<double> fluency;
    std::optional<double> helpfulness;
    std::optional<std::string> free_form;
    std::vector<std::string> free_form_tail;
    std::vector<std::string> trailing_prose;
    bool in_free_form = false;

    for (const auto& line : detail::split_lines(raw)) {
        std::string rest;
        if (detail::is_free_form_line(line, &rest)) {
            if (!free_form) {
                free_form = rest;
            } else if (detail::trim(*free_form).empty()) {
                *free_form = rest;
            }
            in_free_form = true;
            continue;
        }
        if (auto v = detail::match_likert_line(line, "fluency")) {
            if (fluency && *fluency != *v) {
                throw ScoreParseError("ambiguous fluency values: " + std::to_string(*fluency) +
                                      " vs " + std::to_string(*v));
            }
            fluency = v;
            in_free_form = false;
            trailing_prose.clear();
            continue;
        }
        if (auto v = detail::match_likert_line(line, "helpfulness")) {
            if (helpfulness && *helpfulness != *v) {
                throw ScoreParseError("ambiguous helpfulness values: " +
                                      std::to_string(*helpfulness) + " vs " +
                                      std::to_string(*v));
            }
            helpfulness = v;
            in_free_form = false;
            trailing_prose.clear();
            continue;
        }
        if (in_free_form) {
            free_form_tail.push_back(line);
        } else if (!detail::trim(line).empty()) {
            trailing_prose.push_back(line);
        }
    }

    if (!fluency) throw ScoreParseError("missing metric: fluency");
    if (!helpfulness) throw ScoreParseError("missing metric: helpfulness");
    if (*fluency < 1.0 || *fluency > 5.0) {
        throw ScoreParseError("fluency out of range: " + std::to_string(*fluency));
    }
    if (*helpfulness < 1.0 || *helpfulness > 5.0) {
        throw ScoreParseError("helpfulness out of range: " + std::to_string(*helpfulness));
    }

    ParsedScores out;
    out.fluency = *fluency;
    out.helpfulness = *helpfulness;
    if (free_form) {
        std::string text = *free_form;
        while (!free_form_tail.empty() && detail::trim(free_form_tail.back()).empty()) {
            free_form_tail.pop_back();
        }
        for (const auto& extra : free_form_tail) text += "\n" + extra;
        out.free_form = detail::trim(text);
    } else {
        out.free_form = detail::trim(detail::join(trailing_prose, "\n"));
    }
    return out;
}

// Splits a worker-batched evaluator output into positional score blocks (a
// repeated metric label opens the next block) and parses each. The block
// count must equal expected_n or the whole batch fails.
inline std::vector<ParsedScores> parse_scores_batch(const std::string& raw, int expected_n) {
    std::vector<std::vector<std::string>> blocks;
    std::vector<std::string> current;
    bool seen_fluency = false;
    bool seen_helpfulness = false;
    bool seen_free_form = false;
    for (const auto& line : detail::split_lines(raw)) {
        bool f = detail::match_likert_line(line, "fluency").has_value();
        bool h = detail::match_likert_line(line, "helpfulness").has_value();
        bool ff = detail::is_free_form_line(line, nullptr);
        if ((f && seen_fluency) || (h && seen_helpfulness) || (ff && seen_free_form)) {
            blocks.push_back(current);
            current.clear();
            seen_fluency = seen_helpfulness = seen_free_form = false;
        }
        seen_fluency = seen_fluency || f;
        seen_helpfulness = seen_helpfulness || h;
        seen_free_form = seen_free_form || ff;
        current.push_back(line);
    }
    if (seen_fluency || seen_helpfulness || seen_free_form) blocks.push_back(current);

    if (static_cast<int>(blocks.size()) != expected_n) {
        throw ScoreParseError("expected " + std::to_string(expected_n) + " score blocks, found " +
                              std::to_string(blocks.size()));
    }
    std::vector<ParsedScores> out;
    out.reserve(blocks.size());
    for (const auto& block : blocks) out.push_back(parse_scores(detail::join(block, "\n")));
    return out;
}

// ---------------------------------------------------------------------------
// Evaluator calls

// Sink for raw evaluator outputs, persisted alongside the parsed records for
// audit. Called once per completed evaluator call.
using RawOutputSink = std::function<void(const json&)>;

// Scores transcripts with one evaluator model under one persona. Default
// mode sends one prompt per transcript; config.batch_evaluation sends all
// transcripts of this call in a single worker-style prompt. Each of the
// config.eval_runs_per_transcript runs yields one record per transcript.
// A call whose output stays unparseable through config.parse_retries retries
// (the retry appends a one-line format reminder) produces invalid records;
// provider failures likewise. Invalid records carry their reason and never
// reach any mean.
inline std::vector<EvaluationRecord> evaluate(const std::vector<Transcript>& transcripts,
                                              const std::map<std::string, Question>& questions_by_id,
                                              const std::string& evaluator_model,
                                              const Persona& persona, const RunConfig& config,
                                              ProviderHub& hub,
                                              const TemplateSet& templates = TemplateSet(),
                                              const RawOutputSink& raw_sink = {}) {
    if (transcripts.empty()) return {};
    for (const auto& t : transcripts) validate(t);

    auto make_record = [&](const Transcript& t, int run) {
        EvaluationRecord r;
        r.transcript_ref = transcript_ref(t);
        r.evaluator_model_id = evaluator_model;
        r.persona_name = persona.name;
        r.run_index = run;
        return r;
    };

    auto call = [&](const std::string& prompt, const std::string& tag) {
        ChatRequest req;
        req.model_id = evaluator_model;
        req.messages.push_back({"user", prompt});
        req.temperature = config.evaluator_sampling.temperature;
        req.max_response_length = config.evaluator_sampling.max_response_length;
        req.seed = derive_seed(config.evaluator_sampling.seed, tag);
        return hub.complete(req).text;
    };

    std::vector<EvaluationRecord> records;

    auto score_group = [&](const std::vector<Transcript>& group, int run) {
        std::string prompt = build_evaluation_prompt(group, questions_by_id, persona, config,
                                                     templates);
        std::vector<std::string> refs;
        for (const auto& t : group) refs.push_back(transcript_ref(t));
        std::string group_tag = detail::join(refs, ",");
        std::string last_error;
        for (int attempt = 0; attempt <= config.parse_retries; ++attempt) {
            std::string attempt_prompt =
                attempt == 0 ? prompt : prompt + "\n" + retry_reminder(templates);
            std::string raw;
            try {
                raw = call(attempt_prompt, "evaluator|" + group_tag + "|" +
                                               std::to_string(run) + "|" +
                                               std::to_string(attempt));
            } catch (const ProviderError& e) {
                for (const auto& t : group) {
                    EvaluationRecord r = make_record(t, run);
                    r.invalid_reason = "provider";
                    r.diagnostic = e.what();
                    records.push_back(r);
                }
                return;
            }
            if (raw_sink) {
                raw_sink(json{{"transcript_refs", refs},
                              {"evaluator_model_id", evaluator_model},
                              {"persona_name", persona.name},
                              {"run_index", run},
                              {"attempt", attempt},
                              {"raw", raw}});
            }
            try {
                std::vector<ParsedScores> scores;
                if (group.size() == 1) {
                    scores.push_back(parse_scores(raw));
                } else {
                    scores = parse_scores_batch(raw, static_cast<int>(group.size()));
                }
                for (std::size_t i = 0; i < group.size(); ++i) {
                    EvaluationRecord r = make_record(group[i], run);
                    r.helpfulness = scores[i].helpfulness;
                    r.fluency = scores[i].fluency;
                    r.free_form = scores[i].free_form;
                    r.valid = true;
                    records.push_back(validate(r));
                }
                return;
            } catch (const ScoreParseError& e) {
                last_error = e.what();
            }
        }
        for (const auto& t : group) {
            EvaluationRecord r = make_record(t, run);
            r.invalid_reason = "parse_budget";
            r.diagnostic = last_error;
            records.push_back(r);
        }
    };

    for (int run = 0; run < config.eval_runs_per_transcript; ++run) {
        if (config.batch_evaluation) {
            score_group(transcripts, run);
        } else {
            for (const auto& t : transcripts) score_group({t}, run);
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// Averaging

// Collapses all records for one transcript (from one evaluator) into a
// single averaged record with run_index -1. Only valid records contribute;
// zero valid records yield an invalid aggregate.
inline EvaluationRecord average_runs(const std::vector<EvaluationRecord>& records) {
    if (records.empty()) throw ConfigError("average_runs: no records");
    EvaluationRecord out;
    out.transcript_ref = records.front().transcript_ref;
    out.evaluator_model_id = records.front().evaluator_model_id;
    out.persona_name = records.front().persona_name;
    out.run_index = -1;
    for (const auto& r : records) {
        if (r.transcript_ref != out.transcript_ref) {
            throw ConfigError("average_runs: records span multiple transcripts");
        }
    }
    double helpfulness = 0.0;
    double fluency = 0.0;
    int n = 0;
    std::vector<std::string> notes;
    for (const auto& r : records) {
        if (!r.valid) continue;
        helpfulness += *r.helpfulness;
        fluency += *r.fluency;
        if (!r.free_form.empty()) {
            notes.push_back("[run " + std::to_string(r.run_index) + "] " + r.free_form);
        }
        ++n;
    }
    if (n == 0) {
        out.invalid_reason = "no_valid_runs";
        out.diagnostic = "no valid evaluation runs to average";
        return out;
    }
    out.helpfulness = helpfulness / n;
    out.fluency = fluency / n;
    out.free_form = detail::join(notes, "\n");
    out.valid = true;
    return validate(out), out;
}

// Groups records by transcript_ref (preserving first-seen order) and
// averages each group's runs.
inline std::vector<EvaluationRecord> average_runs_by_transcript(
    const std::vector<EvaluationRecord>& records) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<EvaluationRecord>> groups;
    for (const auto& r : records) {
        std::string key = r.transcript_ref + "\x1f" + r.evaluator_model_id;
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(r);
    }
    std::vector<EvaluationRecord> out;
    out.reserve(order.size());
    for (const auto& key : order) out.push_back(average_runs(groups[key]));
    return out;
}

// Multi-perspective score: evaluates the transcript with every model in
// evaluator_models (>= 2 required) and averages the per-model run means with
// equal weight. Models whose runs were all invalid are excluded and flagged;
// if every model is excluded the result is invalid. The evaluator model list
// order never affects the result.
inline EvaluationRecord multi_perspective(const Transcript& transcript,
                                          const std::map<std::string, Question>& questions_by_id,
                                          std::vector<std::string> evaluator_models,
                                          const Persona& persona, const RunConfig& config,
                                          ProviderHub& hub,
                                          const TemplateSet& templates = TemplateSet(),
                                          const RawOutputSink& raw_sink = {}) {
    if (evaluator_models.size() < 2) {
        throw ConfigError("multi_perspective requires at least 2 evaluator models");
    }
    std::sort(evaluator_models.begin(), evaluator_models.end());
    EvaluationRecord out;
    out.transcript_ref = transcript_ref(transcript);
    out.evaluator_model_id = "multi(" + detail::join(evaluator_models, ",") + ")";
    out.persona_name = persona.name;
    out.run_index = -1;

    double helpfulness = 0.0;
    double fluency = 0.0;
    int n = 0;
    std::vector<std::string> notes;
    std::vector<std::string> excluded;
    for (const auto& model : evaluator_models) {
        auto records = evaluate({transcript}, questions_by_id, model, persona, config, hub,
                                templates, raw_sink);
        EvaluationRecord averaged = average_runs(records);
        if (!averaged.valid) {
            excluded.push_back(model + " (" + averaged.invalid_reason + ")");
            continue;
        }
        helpfulness += *averaged.helpfulness;
        fluency += *averaged.fluency;
        if (!averaged.free_form.empty()) {
            notes.push_back("[" + model + "] " + averaged.free_form);
        }
        ++n;
    }
    if (!excluded.empty()) {
        out.diagnostic = "excluded evaluator models: " + detail::join(excluded, "; ");
    }
    if (n == 0) {
        out.invalid_reason = "no_valid_runs";
        return out;
    }
    out.helpfulness = helpfulness / n;
    out.fluency = fluency / n;
    out.free_form = detail::join(notes, "\n");
    out.valid = true;
    return validate(out), out;
}

}  // namespace parley
