#pragma once
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "parley/data.hpp"
#include "parley/detail/parallel.hpp"
#include "parley/detail/strings.hpp"
#include "parley/domain.hpp"
#include "parley/error.hpp"
#include "parley/interaction.hpp"
#include "parley/prompting.hpp"
#include "parley/provider.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Answer matching

// Exact-match canonical form: lowercase, punctuation stripped, whitespace
// collapsed, leading articles removed.
inline std::string normalize_answer(const std::string& text) {
    std::vector<std::string> tokens;
    std::string token;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!token.empty()) {
            tokens.push_back(token);
            token.clear();
        }
    }
    if (!token.empty()) tokens.push_back(token);
    std::size_t start = 0;
    while (start < tokens.size() &&
           (tokens[start] == "a" || tokens[start] == "an" || tokens[start] == "the")) {
        ++start;
    }
    return detail::join({tokens.begin() + static_cast<std::ptrdiff_t>(start), tokens.end()}, " ");
}

inline bool answer_matches(const std::string& answer, const Question& q) {
    if (q.multi_choice()) {
        return detail::to_upper(detail::trim(answer)) == q.gold[0];
    }
    std::string got = normalize_answer(answer);
    for (const auto& g : q.gold) {
        if (got == normalize_answer(g)) return true;
    }
    return false;
}

inline bool answer_is_correct(const Transcript& t, const Question& q) {
    return t.final_answer && answer_matches(*t.final_answer, q);
}

// Fraction of transcripts whose final answer matches gold, per assistant
// model. Unanswered transcripts count as incorrect.
inline std::map<std::string, double> accuracy(const std::vector<Transcript>& transcripts,
                                              const std::map<std::string, Question>& questions_by_id) {
    if (transcripts.empty()) throw DataError("accuracy: empty transcript set");
    std::map<std::string, std::pair<int, int>> tally;  // model -> (correct, total)
    for (const auto& t : transcripts) {
        auto it = questions_by_id.find(t.question_id);
        if (it == questions_by_id.end()) {
            throw DataError("accuracy: unresolvable question id " + t.question_id);
        }
        auto& [correct, total] = tally[t.assistant_model_id];
        if (answer_is_correct(t, it->second)) ++correct;
        ++total;
    }
    std::map<std::string, double> out;
    for (const auto& [model, ct] : tally) {
        out[model] = static_cast<double>(ct.first) / ct.second;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

namespace detail {

inline MetricStat stat_of(const std::vector<double>& values) {
    MetricStat s;
    s.n = static_cast<int>(values.size());
    if (s.n == 0) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / s.n;
    if (s.n == 1) return s;  // sem stays 0 for a single sample
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.sem = std::sqrt(sq / (s.n - 1)) / std::sqrt(static_cast<double>(s.n));
    return s;
}

}  // namespace detail

// Per-(model[, persona]) means with standard errors. Helpfulness and fluency
// come from valid evaluation records, num_queries and accuracy from the
// underlying transcripts. Rows come out sorted by (model, persona).
inline std::vector<AggregateRow> aggregate(const std::vector<EvaluationRecord>& records,
                                           const std::vector<Transcript>& transcripts,
                                           const std::map<std::string, Question>& questions_by_id,
                                           bool by_persona = false) {
    if (transcripts.empty()) throw DataError("aggregate: empty transcript set");
    std::map<std::string, const Transcript*> by_ref;
    for (const auto& t : transcripts) by_ref[transcript_ref(t)] = &t;

    struct Bucket {
        std::vector<double> helpfulness;
        std::vector<double> fluency;
        std::vector<double> num_queries;
        std::vector<double> correct;
    };
    std::map<std::pair<std::string, std::string>, Bucket> buckets;

    for (const auto& t : transcripts) {
        auto qit = questions_by_id.find(t.question_id);
        if (qit == questions_by_id.end()) {
            throw DataError("aggregate: unresolvable question id " + t.question_id);
        }
        Bucket& b = buckets[{t.assistant_model_id, by_persona ? t.persona_name : std::string()}];
        b.num_queries.push_back(static_cast<double>(t.num_queries));
        b.correct.push_back(answer_is_correct(t, qit->second) ? 1.0 : 0.0);
    }
    for (const auto& r : records) {
        if (!r.valid) continue;
        auto it = by_ref.find(r.transcript_ref);
        if (it == by_ref.end()) {
            throw DataError("aggregate: record references unknown transcript " +
                            r.transcript_ref);
        }
        const Transcript& t = *it->second;
        Bucket& b = buckets[{t.assistant_model_id, by_persona ? t.persona_name : std::string()}];
        b.helpfulness.push_back(*r.helpfulness);
        b.fluency.push_back(*r.fluency);
    }

    std::vector<AggregateRow> out;
    for (const auto& [key, b] : buckets) {
        AggregateRow row;
        row.model_id = key.first;
        row.persona_name = key.second;
        if (!b.helpfulness.empty()) {
            row.metrics["helpfulness"] = detail::stat_of(b.helpfulness);
            row.metrics["fluency"] = detail::stat_of(b.fluency);
        }
        row.metrics["num_queries"] = detail::stat_of(b.num_queries);
        row.metrics["accuracy"] = detail::stat_of(b.correct);
        out.push_back(row);
    }
    return out;
}

// Per-model means over human annotations, shaped like harness aggregates for
// side-by-side reporting.
inline std::vector<AggregateRow> aggregate_human(const std::vector<HumanAnnotation>& annotations) {
    if (annotations.empty()) throw DataError("aggregate_human: empty annotation set");
    struct Bucket {
        std::vector<double> helpfulness;
        std::vector<double> fluency;
        std::vector<double> num_queries;
        std::vector<double> correct;
    };
    std::map<std::string, Bucket> buckets;
    for (const auto& a : annotations) {
        Bucket& b = buckets[a.assistant_model_id];
        b.helpfulness.push_back(a.helpfulness);
        b.fluency.push_back(a.fluency);
        b.num_queries.push_back(static_cast<double>(a.num_queries));
        b.correct.push_back(a.correct ? 1.0 : 0.0);
    }
    std::vector<AggregateRow> out;
    for (const auto& [model, b] : buckets) {
        AggregateRow row;
        row.model_id = model;
        row.metrics["helpfulness"] = detail::stat_of(b.helpfulness);
        row.metrics["fluency"] = detail::stat_of(b.fluency);
        row.metrics["num_queries"] = detail::stat_of(b.num_queries);
        row.metrics["accuracy"] = detail::stat_of(b.correct);
        out.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pearson correlation

// Product-moment coefficient, two-pass centered computation. Requires equal
// lengths of at least 2 and two non-constant vectors.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DataError("pearson: vector length mismatch");
    if (x.size() < 2) throw DataError("pearson: need at least 2 points");
    double n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx;
        double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw DataError("pearson: constant vector (r undefined)");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline std::optional<double> pearson_or_undefined(const std::vector<double>& x,
                                                  const std::vector<double>& y) {
    try {
        return pearson(x, y);
    } catch (const DataError& e) {
        if (std::string(e.what()).find("constant vector") != std::string::npos) {
            return std::nullopt;
        }
        throw;
    }
}

// ---------------------------------------------------------------------------
// Correlation report

namespace detail {

struct CorrAcc {
    double sum_h = 0.0;
    double sum_f = 0.0;
    int n = 0;

    void add(double h, double f) {
        sum_h += h;
        sum_f += f;
        ++n;
    }
    double mean_h() const { return sum_h / n; }
    double mean_f() const { return sum_f / n; }
};

inline CorrelationReport finish_correlation(const std::map<std::string, CorrAcc>& harness,
                                            const std::map<std::string, CorrAcc>& human,
                                            Granularity granularity,
                                            const std::string& overall_method,
                                            std::vector<std::string> unmatched) {
    if (overall_method != "concatenated" && overall_method != "mean_of_rs") {
        throw ConfigError("unknown overall correlation method: " + overall_method);
    }
    std::vector<double> xs_h, xs_f, ys_h, ys_f;  // x = harness, y = human
    for (const auto& [key, acc] : harness) {
        auto it = human.find(key);
        if (it == human.end()) {
            unmatched.push_back("interactive:" + key);
            continue;
        }
        xs_h.push_back(acc.mean_h());
        xs_f.push_back(acc.mean_f());
        ys_h.push_back(it->second.mean_h());
        ys_f.push_back(it->second.mean_f());
    }
    for (const auto& [key, acc] : human) {
        if (!harness.count(key)) unmatched.push_back("human:" + key);
    }
    if (xs_h.size() < 2) {
        throw DataError("correlation: fewer than 2 matched pairs at " + to_string(granularity));
    }
    CorrelationReport report;
    report.granularity = granularity;
    report.overall_method = overall_method;
    std::sort(unmatched.begin(), unmatched.end());
    report.unmatched_keys = std::move(unmatched);
    report.metrics["helpfulness"] =
        MetricCorrelation{pearson_or_undefined(xs_h, ys_h), static_cast<int>(xs_h.size())};
    report.metrics["fluency"] =
        MetricCorrelation{pearson_or_undefined(xs_f, ys_f), static_cast<int>(xs_f.size())};
    if (overall_method == "mean_of_rs") {
        double sum = 0.0;
        int defined = 0;
        for (const auto& [name, mc] : report.metrics) {
            if (mc.r) {
                sum += *mc.r;
                ++defined;
            }
        }
        if (defined > 0) report.overall_r = sum / defined;
    } else {
        std::vector<double> xs = xs_h;
        xs.insert(xs.end(), xs_f.begin(), xs_f.end());
        std::vector<double> ys = ys_h;
        ys.insert(ys.end(), ys_f.begin(), ys_f.end());
        report.overall_r = pearson_or_undefined(xs, ys);
    }
    return report;
}

}  // namespace detail

// Pairs harness scores with human annotations at the chosen granularity and
// reports per-metric Pearson r plus an overall figure (concatenated
// helpfulness+fluency pairs by default, or the mean of the per-metric rs).
//
// per_model joins on assistant model id; per_question on (model, question)
// via the annotation's conversation_ref; per_worker pairs each worker's mean
// with the harness mean over the same conversations. Keys present on only
// one side are reported and excluded; fewer than 2 surviving pairs is an
// error.
inline CorrelationReport correlation_report(const std::vector<EvaluationRecord>& harness_records,
                                            const std::vector<HumanAnnotation>& annotations,
                                            Granularity granularity,
                                            const std::string& overall_method = "concatenated") {
    std::map<std::string, detail::CorrAcc> harness_by_ref;
    for (const auto& r : harness_records) {
        if (!r.valid) continue;
        harness_by_ref[r.transcript_ref].add(*r.helpfulness, *r.fluency);
    }
    if (harness_by_ref.empty()) throw DataError("correlation: no valid harness records");
    if (annotations.empty()) throw DataError("correlation: empty annotation set");

    std::map<std::string, detail::CorrAcc> harness_groups;
    std::map<std::string, detail::CorrAcc> human_groups;
    std::vector<std::string> unmatched;

    if (granularity == Granularity::per_worker) {
        std::set<std::string> covered_refs;
        for (const auto& a : annotations) {
            auto it = harness_by_ref.find(a.conversation_ref);
            if (it == harness_by_ref.end()) {
                unmatched.push_back("human:" + a.worker_id + "|" + a.conversation_ref);
                continue;
            }
            covered_refs.insert(a.conversation_ref);
            human_groups[a.worker_id].add(a.helpfulness, a.fluency);
            harness_groups[a.worker_id].add(it->second.mean_h(), it->second.mean_f());
        }
        for (const auto& [ref, acc] : harness_by_ref) {
            if (!covered_refs.count(ref)) unmatched.push_back("interactive:" + ref);
        }
        return detail::finish_correlation(harness_groups, human_groups, granularity,
                                          overall_method, std::move(unmatched));
    }

    auto group_key = [&](const std::string& ref) {
        auto parsed = parse_transcript_ref(ref);
        return granularity == Granularity::per_model
                   ? parsed.assistant_model_id
                   : parsed.assistant_model_id + "|" + parsed.question_id;
    };
    for (const auto& [ref, acc] : harness_by_ref) {
        harness_groups[group_key(ref)].add(acc.mean_h(), acc.mean_f());
    }
    for (const auto& a : annotations) {
        std::string key;
        if (granularity == Granularity::per_model) {
            key = a.assistant_model_id;
        } else {
            if (a.conversation_ref.empty()) {
                throw DataError("correlation: per_question pairing needs conversation_ref");
            }
            key = group_key(a.conversation_ref);
        }
        human_groups[key].add(a.helpfulness, a.fluency);
    }
    return detail::finish_correlation(harness_groups, human_groups, granularity,
                                      overall_method, std::move(unmatched));
}

// ---------------------------------------------------------------------------
// Non-interactive baseline

// Sends each question's forced-answer instruction as a single user message
// (no dialogue), then scores accuracy and response length. Falls back to the
// whole trimmed response when no answer pattern is found. Returns one row
// with "accuracy" and "sentence_count" metrics.
inline AggregateRow non_interactive_baseline(
    const std::vector<Question>& questions, const std::string& assistant_model,
    const RunConfig& config, ProviderHub& hub, const TemplateSet& templates = TemplateSet(),
    const std::set<std::string>& abbreviations = default_abbreviations()) {
    if (questions.empty()) throw DataError("baseline: empty question set");
    if (assistant_model.empty()) throw ConfigError("baseline: empty assistant model id");
    for (const auto& q : questions) validate(q);

    std::vector<double> correct(questions.size(), 0.0);
    std::vector<std::optional<int>> sentences(questions.size());
    detail::parallel_for(questions.size(), config.max_concurrency, [&](std::size_t i) {
        const Question& q = questions[i];
        ChatRequest req;
        req.model_id = assistant_model;
        req.messages.push_back({"user", build_force_answer_prompt(q, templates)});
        req.temperature = config.assistant_sampling.temperature;
        req.max_response_length = config.assistant_sampling.max_response_length;
        req.seed = derive_seed(config.assistant_sampling.seed,
                               "baseline|" + q.id + "|" + assistant_model);
        std::string text;
        try {
            text = hub.complete(req).text;
        } catch (const Error&) {
            return;  // failed slot counts as incorrect, no length sample
        }
        auto answer = detect_final_answer(text, q);
        std::string final_answer = answer ? *answer : detail::trim(text);
        if (answer_matches(final_answer, q)) correct[i] = 1.0;
        sentences[i] = sentence_count(text, abbreviations);
    });

    std::vector<double> lengths;
    for (const auto& s : sentences) {
        if (s) lengths.push_back(static_cast<double>(*s));
    }
    AggregateRow row;
    row.model_id = assistant_model;
    row.persona_name = "non_interactive";
    row.metrics["accuracy"] = detail::stat_of(correct);
    row.metrics["sentence_count"] = detail::stat_of(lengths);
    return row;
}

// ---------------------------------------------------------------------------
// Report rendering

struct ReportInputs {
    std::vector<AggregateRow> rows;           // interactive-run aggregates
    std::vector<AggregateRow> human_rows;     // reference means, rendered without error bars
    std::vector<AggregateRow> baseline_rows;  // non-interactive baseline
    std::optional<CorrelationReport> correlation;
    std::string config_digest;
    std::string template_digest;
    std::map<std::string, std::uint64_t> seeds;
};

namespace detail {

inline std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// "4.30 (±0.06)", or the bare mean when the error is zero or suppressed.
inline std::string metric_cell(const MetricStat& m, bool with_error) {
    if (m.n == 0) return "-";
    if (!with_error || m.sem == 0.0) return fixed2(m.mean);
    return fixed2(m.mean) + " (±" + fixed2(m.sem) + ")";
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += "\"\"";
        } else {
            out.push_back(c);
        }
    }
    out += "\"";
    return out;
}

inline const MetricStat* find_metric(const AggregateRow& row, const std::string& name) {
    auto it = row.metrics.find(name);
    return it == row.metrics.end() ? nullptr : &it->second;
}

inline void append_table(std::string& md, const std::vector<AggregateRow>& rows,
                         const std::vector<std::pair<std::string, std::string>>& columns,
                         bool with_persona, bool with_error) {
    md += "| Model |";
    if (with_persona) md += " Persona |";
    for (const auto& [name, header] : columns) md += " " + header + " |";
    md += " N |\n";
    md += "| --- |";
    if (with_persona) md += " --- |";
    for (std::size_t i = 0; i < columns.size() + 1; ++i) md += " --- |";
    md += "\n";
    for (const auto& row : rows) {
        md += "| " + row.model_id + " |";
        if (with_persona) {
            md += " " + (row.persona_name.empty() ? std::string("all") : row.persona_name) + " |";
        }
        int n = 0;
        for (const auto& [name, header] : columns) {
            const MetricStat* m = find_metric(row, name);
            md += " " + (m ? metric_cell(*m, with_error) : std::string("-")) + " |";
            if (m && m->n > n) n = m->n;
        }
        md += " " + std::to_string(n) + " |\n";
    }
}

}  // namespace detail

inline std::string render_markdown(const ReportInputs& in) {
    const std::vector<std::pair<std::string, std::string>> interactive_columns = {
        {"helpfulness", "Helpfulness"},
        {"fluency", "Fluency"},
        {"num_queries", "# Queries"},
        {"accuracy", "Accuracy"}};
    bool with_persona = std::any_of(in.rows.begin(), in.rows.end(),
                                    [](const AggregateRow& r) { return !r.persona_name.empty(); });
    std::string md = "# Interactive Evaluation Report\n\n";
    if (!in.config_digest.empty()) md += "Config digest: `" + in.config_digest + "`\n\n";
    if (!in.rows.empty()) {
        md += "## Assistant Quality\n\n";
        detail::append_table(md, in.rows, interactive_columns, with_persona, true);
        md += "\n";
    }
    if (!in.human_rows.empty()) {
        md += "## Human Reference\n\n";
        detail::append_table(md, in.human_rows, interactive_columns, false, false);
        md += "\n";
    }
    if (in.correlation) {
        const CorrelationReport& c = *in.correlation;
        md += "## Correlation With Human Judgments\n\n";
        md += "Granularity: " + to_string(c.granularity) + "; overall method: " +
              c.overall_method + ".\n\n";
        md += "| Metric | r | Pairs |\n| --- | --- | --- |\n";
        int pair_total = 0;
        for (const auto& [name, mc] : c.metrics) {
            md += "| " + name + " | " + (mc.r ? detail::fixed4(*mc.r) : std::string("undefined")) +
                  " | " + std::to_string(mc.n_pairs) + " |\n";
            pair_total += mc.n_pairs;
        }
        md += "| overall | " +
              (c.overall_r ? detail::fixed4(*c.overall_r) : std::string("undefined")) + " | " +
              std::to_string(pair_total) + " |\n";
        if (!c.unmatched_keys.empty()) {
            md += "\nUnmatched keys excluded from pairing: " +
                  detail::join(c.unmatched_keys, ", ") + "\n";
        }
        md += "\n";
    }
    if (!in.baseline_rows.empty()) {
        md += "## Non-Interactive Baseline\n\n";
        detail::append_table(
            md, in.baseline_rows,
            {{"accuracy", "Accuracy"}, {"sentence_count", "Sentences Per Response"}}, false,
            true);
        md += "\n";
    }
    while (md.size() >= 2 && md[md.size() - 1] == '\n' && md[md.size() - 2] == '\n') {
        md.pop_back();
    }
    return md;
}

inline std::string render_csv(const ReportInputs& in) {
    std::string csv = "section,model,persona,metric,mean,stderr,n\n";
    auto emit = [&](const std::string& section, const std::vector<AggregateRow>& rows) {
        for (const auto& row : rows) {
            for (const auto& [name, m] : row.metrics) {
                csv += section + "," + detail::csv_field(row.model_id) + "," +
                       detail::csv_field(row.persona_name) + "," + name + "," +
                       json(m.mean).dump() + "," + json(m.sem).dump() + "," +
                       std::to_string(m.n) + "\n";
            }
        }
    };
    emit("interactive", in.rows);
    emit("human", in.human_rows);
    emit("baseline", in.baseline_rows);
    return csv;
}

inline std::string render_json_report(const ReportInputs& in) {
    auto rows_json = [](const std::vector<AggregateRow>& rows) {
        json arr = json::array();
        for (const auto& row : rows) {
            json j = row;
            for (auto& [name, m] : j.at("metrics").items()) {
                if (m.at("n").get<int>() == 1) m["single_sample"] = true;
            }
            arr.push_back(j);
        }
        return arr;
    };
    json j{{"config_digest", in.config_digest},
           {"template_digest", in.template_digest},
           {"seeds", in.seeds},
           {"rows", rows_json(in.rows)},
           {"human_rows", rows_json(in.human_rows)},
           {"baseline_rows", rows_json(in.baseline_rows)},
           {"correlation", in.correlation ? json(*in.correlation) : json(nullptr)}};
    return j.dump(2) + "\n";
}

// Writes report.md, report.csv, and report.json into dir. Output bytes are a
// pure function of the inputs: no timestamps, hostnames, or absolute paths.
inline void render_report(const ReportInputs& in, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto write = [&](const char* name, const std::string& content) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + (dir / name).string());
        out << content;
    };
    write("report.md", render_markdown(in));
    write("report.csv", render_csv(in));
    write("report.json", render_json_report(in));
}

}  // namespace parley
