#pragma once
#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "parley/detail/sha256.hpp"
#include "parley/error.hpp"

namespace parley {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Questions

enum class DatasetTag { mmlu, hotpotqa, ambigqa, nq, custom };

inline std::string to_string(DatasetTag t) {
    switch (t) {
        case DatasetTag::mmlu: return "mmlu";
        case DatasetTag::hotpotqa: return "hotpotqa";
        case DatasetTag::ambigqa: return "ambigqa";
        case DatasetTag::nq: return "nq";
        case DatasetTag::custom: return "custom";
    }
    return "custom";
}

inline DatasetTag dataset_tag_from_string(const std::string& s) {
    if (s == "mmlu") return DatasetTag::mmlu;
    if (s == "hotpotqa") return DatasetTag::hotpotqa;
    if (s == "ambigqa") return DatasetTag::ambigqa;
    if (s == "nq") return DatasetTag::nq;
    if (s == "custom") return DatasetTag::custom;
    throw DataError("unknown dataset tag: " + s);
}

// One QA item, either multi-choice (choices nonempty, gold is one label) or
// open (choices empty, gold is a nonempty set of acceptable strings).
struct Question {
    std::string id;
    std::string body;
    std::vector<std::pair<std::string, std::string>> choices;  // (label, text) in label order
    std::vector<std::string> gold;
    DatasetTag dataset = DatasetTag::custom;
    std::map<std::string, std::string> metadata;

    bool multi_choice() const { return !choices.empty(); }

    std::vector<std::string> labels() const {
        std::vector<std::string> out;
        out.reserve(choices.size());
        for (const auto& [label, text] : choices) out.push_back(label);
        return out;
    }
};

// Returns the question unchanged if every invariant holds, else throws
// DataError naming the violated invariant.
inline const Question& validate(const Question& q) {
    if (q.id.empty()) throw DataError("question has empty id");
    if (q.body.empty()) throw DataError("question " + q.id + ": empty body");
    if (q.multi_choice()) {
        for (std::size_t i = 0; i < q.choices.size(); ++i) {
            std::string expect(1, static_cast<char>('A' + i));
            if (q.choices[i].first != expect) {
                throw DataError("question " + q.id + ": non-consecutive labels (expected " +
                                expect + ", got " + q.choices[i].first + ")");
            }
            if (q.choices[i].second.empty()) {
                throw DataError("question " + q.id + ": empty option text for " + expect);
            }
        }
        if (q.gold.size() != 1) {
            throw DataError("question " + q.id + ": multi-choice gold must be exactly one label");
        }
        auto ls = q.labels();
        if (std::find(ls.begin(), ls.end(), q.gold[0]) == ls.end()) {
            throw DataError("question " + q.id + ": gold label " + q.gold[0] +
                            " not among choices");
        }
    } else {
        if (q.gold.empty()) throw DataError("question " + q.id + ": empty gold set");
        for (const auto& g : q.gold) {
            if (g.empty()) throw DataError("question " + q.id + ": empty gold answer string");
        }
    }
    return q;
}

inline void to_json(json& j, const Question& q) {
    json choices = json::object();
    for (const auto& [label, text] : q.choices) choices[label] = text;
    j = json{{"id", q.id},
             {"question", q.body},
             {"choices", choices},
             {"gold", q.gold},
             {"dataset", to_string(q.dataset)},
             {"metadata", q.metadata}};
}

inline void from_json(const json& j, Question& q) {
    q.id = j.at("id").get<std::string>();
    q.body = j.at("question").get<std::string>();
    q.choices.clear();
    if (j.contains("choices")) {
        // json objects iterate in sorted key order, which is label order here.
        for (const auto& [label, text] : j.at("choices").items()) {
            q.choices.emplace_back(label, text.get<std::string>());
        }
    }
    q.gold = j.value("gold", std::vector<std::string>{});
    q.dataset = dataset_tag_from_string(j.value("dataset", "custom"));
    q.metadata = j.value("metadata", std::map<std::string, std::string>{});
}

// ---------------------------------------------------------------------------
// Personas

// Metric keys a persona may override in the evaluation prompt.
inline const std::vector<std::string>& persona_metric_keys() {
    static const std::vector<std::string> keys{"fluency", "helpfulness", "helpfulness_free_form"};
    return keys;
}

// A named prompt bundle encoding a user archetype; conditions both the
// interaction role/task lines and the evaluation metric definitions.
struct Persona {
    std::string name;
    std::string interaction_role_prompt;
    std::string evaluation_role_prompt;
    std::map<std::string, std::string> metric_overrides;  // metric key -> definition text
    double weight = 0.0;  // mixture weight when declared in a persona file
};

inline const Persona& validate(const Persona& p) {
    if (p.name.empty()) throw ConfigError("persona has empty name");
    if (p.interaction_role_prompt.empty()) {
        throw ConfigError("persona " + p.name + ": empty interaction_role_prompt");
    }
    if (p.evaluation_role_prompt.empty()) {
        throw ConfigError("persona " + p.name + ": empty evaluation_role_prompt");
    }
    const auto& keys = persona_metric_keys();
    for (const auto& [metric, text] : p.metric_overrides) {
        if (std::find(keys.begin(), keys.end(), metric) == keys.end()) {
            throw ConfigError("persona " + p.name + ": override for unknown metric name '" +
                              metric + "'");
        }
        if (text.empty()) {
            throw ConfigError("persona " + p.name + ": empty override for metric " + metric);
        }
    }
    if (p.weight < 0.0 || p.weight > 1.0) {
        throw ConfigError("persona " + p.name + ": weight outside [0,1]");
    }
    return p;
}

inline void to_json(json& j, const Persona& p) {
    j = json{{"name", p.name},
             {"interaction_role_prompt", p.interaction_role_prompt},
             {"evaluation_role_prompt", p.evaluation_role_prompt},
             {"metric_overrides", p.metric_overrides},
             {"weight", p.weight}};
}

inline void from_json(const json& j, Persona& p) {
    p.name = j.at("name").get<std::string>();
    p.interaction_role_prompt = j.at("interaction_role_prompt").get<std::string>();
    p.evaluation_role_prompt = j.at("evaluation_role_prompt").get<std::string>();
    p.metric_overrides = j.value("metric_overrides", std::map<std::string, std::string>{});
    p.weight = j.value("weight", 0.0);
}

// ---------------------------------------------------------------------------
// Transcripts

enum class Speaker { seeker, assistant };

inline std::string to_string(Speaker s) {
    return s == Speaker::seeker ? "seeker" : "assistant";
}

inline Speaker speaker_from_string(const std::string& s) {
    if (s == "seeker") return Speaker::seeker;
    if (s == "assistant") return Speaker::assistant;
    throw DataError("unknown speaker: " + s);
}

struct Turn {
    int index = 0;  // position in the transcript's turn list
    Speaker speaker = Speaker::seeker;
    std::string text;
};

inline void to_json(json& j, const Turn& t) {
    j = json{{"index", t.index}, {"speaker", to_string(t.speaker)}, {"text", t.text}};
}

inline void from_json(const json& j, Turn& t) {
    t.index = j.at("index").get<int>();
    t.speaker = speaker_from_string(j.at("speaker").get<std::string>());
    t.text = j.at("text").get<std::string>();
}

enum class Termination { answered, turn_limit_forced, unanswered };

inline std::string to_string(Termination t) {
    switch (t) {
        case Termination::answered: return "answered";
        case Termination::turn_limit_forced: return "turn_limit_forced";
        case Termination::unanswered: return "unanswered";
    }
    return "unanswered";
}

inline Termination termination_from_string(const std::string& s) {
    if (s == "answered") return Termination::answered;
    if (s == "turn_limit_forced") return Termination::turn_limit_forced;
    if (s == "unanswered") return Termination::unanswered;
    throw DataError("unknown termination: " + s);
}

// One complete seeker/assistant interaction over a single question.
struct Transcript {
    std::string question_id;
    std::string seeker_model_id;
    std::string assistant_model_id;
    std::string persona_name;
    std::vector<Turn> turns;  // strictly alternating, seeker first
    std::optional<std::string> final_answer;
    int num_queries = 0;  // count of assistant turns
    Termination termination = Termination::unanswered;
    int run_index = 0;
    std::string config_digest;
    std::string diagnostic;  // nonempty only for degraded outcomes
};

// Key joining a transcript to its evaluation records and human annotations.
inline std::string transcript_ref(const Transcript& t) {
    return t.question_id + "|" + t.assistant_model_id + "|" + std::to_string(t.run_index);
}

struct TranscriptRef {
    std::string question_id;
    std::string assistant_model_id;
    int run_index = 0;
};

inline TranscriptRef parse_transcript_ref(const std::string& ref) {
    auto first = ref.find('|');
    auto last = ref.rfind('|');
    if (first == std::string::npos || last == first) {
        throw DataError("malformed transcript ref: " + ref);
    }
    TranscriptRef out;
    out.question_id = ref.substr(0, first);
    out.assistant_model_id = ref.substr(first + 1, last - first - 1);
    try {
        out.run_index = std::stoi(ref.substr(last + 1));
    } catch (const std::exception&) {
        throw DataError("malformed transcript ref (run index): " + ref);
    }
    return out;
}

inline const Transcript& validate(const Transcript& t) {
    int assistant_turns = 0;
    for (std::size_t i = 0; i < t.turns.size(); ++i) {
        const Turn& turn = t.turns[i];
        if (turn.index != static_cast<int>(i)) {
            throw DataError("transcript " + transcript_ref(t) + ": turn index " +
                            std::to_string(turn.index) + " at position " + std::to_string(i));
        }
        Speaker expect = (i % 2 == 0) ? Speaker::seeker : Speaker::assistant;
        if (turn.speaker != expect) {
            throw DataError("transcript " + transcript_ref(t) +
                            ": turns must alternate starting with seeker");
        }
        if (turn.text.empty()) {
            throw DataError("transcript " + transcript_ref(t) + ": empty turn text");
        }
        if (turn.speaker == Speaker::assistant) ++assistant_turns;
    }
    if (t.num_queries != assistant_turns) {
        throw DataError("transcript " + transcript_ref(t) + ": num_queries " +
                        std::to_string(t.num_queries) + " != assistant turns " +
                        std::to_string(assistant_turns));
    }
    bool has_answer = t.final_answer.has_value();
    bool should_have = t.termination != Termination::unanswered;
    if (has_answer != should_have) {
        throw DataError("transcript " + transcript_ref(t) +
                        ": final_answer presence inconsistent with termination " +
                        to_string(t.termination));
    }
    return t;
}

inline void to_json(json& j, const Transcript& t) {
    j = json{{"question_id", t.question_id},
             {"seeker_model_id", t.seeker_model_id},
             {"assistant_model_id", t.assistant_model_id},
             {"persona_name", t.persona_name},
             {"turns", t.turns},
             {"final_answer", t.final_answer ? json(*t.final_answer) : json(nullptr)},
             {"num_queries", t.num_queries},
             {"termination", to_string(t.termination)},
             {"run_index", t.run_index},
             {"config_digest", t.config_digest},
             {"diagnostic", t.diagnostic}};
}

inline void from_json(const json& j, Transcript& t) {
    t.question_id = j.at("question_id").get<std::string>();
    t.seeker_model_id = j.at("seeker_model_id").get<std::string>();
    t.assistant_model_id = j.at("assistant_model_id").get<std::string>();
    t.persona_name = j.at("persona_name").get<std::string>();
    t.turns = j.at("turns").get<std::vector<Turn>>();
    if (j.contains("final_answer") && !j.at("final_answer").is_null()) {
        t.final_answer = j.at("final_answer").get<std::string>();
    } else {
        t.final_answer.reset();
    }
    t.num_queries = j.at("num_queries").get<int>();
    t.termination = termination_from_string(j.at("termination").get<std::string>());
    t.run_index = j.at("run_index").get<int>();
    t.config_digest = j.value("config_digest", "");
    t.diagnostic = j.value("diagnostic", "");
}

// ---------------------------------------------------------------------------
// Evaluation records

// One evaluator pass (or an average of passes) over a transcript.
struct EvaluationRecord {
    std::string transcript_ref;
    std::string evaluator_model_id;
    std::string persona_name;
    std::optional<double> helpfulness;  // 5-point Likert
    std::optional<double> fluency;      // 5-point Likert
    std::string free_form;
    int run_index = 0;  // -1 for run averages
    bool valid = false;
    std::string invalid_reason;  // "parse_budget", "provider", "no_valid_runs", or empty
    std::string diagnostic;
};

inline const EvaluationRecord& validate(const EvaluationRecord& r) {
    if (r.valid) {
        if (!r.helpfulness || !r.fluency) {
            throw DataError("evaluation record " + r.transcript_ref +
                            ": valid record missing a Likert value");
        }
        if (*r.helpfulness < 1.0 || *r.helpfulness > 5.0 || *r.fluency < 1.0 ||
            *r.fluency > 5.0) {
            throw DataError("evaluation record " + r.transcript_ref +
                            ": Likert value outside [1,5]");
        }
    }
    return r;
}

inline void to_json(json& j, const EvaluationRecord& r) {
    j = json{{"transcript_ref", r.transcript_ref},
             {"evaluator_model_id", r.evaluator_model_id},
             {"persona_name", r.persona_name},
             {"helpfulness", r.helpfulness ? json(*r.helpfulness) : json(nullptr)},
             {"fluency", r.fluency ? json(*r.fluency) : json(nullptr)},
             {"free_form", r.free_form},
             {"run_index", r.run_index},
             {"valid", r.valid},
             {"invalid_reason", r.invalid_reason},
             {"diagnostic", r.diagnostic}};
}

inline void from_json(const json& j, EvaluationRecord& r) {
    r.transcript_ref = j.at("transcript_ref").get<std::string>();
    r.evaluator_model_id = j.at("evaluator_model_id").get<std::string>();
    r.persona_name = j.at("persona_name").get<std::string>();
    r.helpfulness.reset();
    if (j.contains("helpfulness") && !j.at("helpfulness").is_null()) {
        r.helpfulness = j.at("helpfulness").get<double>();
    }
    r.fluency.reset();
    if (j.contains("fluency") && !j.at("fluency").is_null()) {
        r.fluency = j.at("fluency").get<double>();
    }
    r.free_form = j.value("free_form", "");
    r.run_index = j.at("run_index").get<int>();
    r.valid = j.at("valid").get<bool>();
    r.invalid_reason = j.value("invalid_reason", "");
    r.diagnostic = j.value("diagnostic", "");
}

// ---------------------------------------------------------------------------
// Human annotations

struct HumanAnnotation {
    std::string worker_id;
    std::string conversation_ref;  // matches a transcript_ref when joining per conversation
    double helpfulness = 0.0;
    double fluency = 0.0;
    int num_queries = 0;
    bool correct = false;
    std::string assistant_model_id;
};

inline const HumanAnnotation& validate(const HumanAnnotation& a) {
    if (a.worker_id.empty()) throw DataError("annotation has empty worker_id");
    if (a.helpfulness < 1.0 || a.helpfulness > 5.0) {
        throw DataError("annotation " + a.worker_id + "/" + a.conversation_ref +
                        ": helpfulness outside [1,5]");
    }
    if (a.fluency < 1.0 || a.fluency > 5.0) {
        throw DataError("annotation " + a.worker_id + "/" + a.conversation_ref +
                        ": fluency outside [1,5]");
    }
    if (a.num_queries < 0) {
        throw DataError("annotation " + a.worker_id + "/" + a.conversation_ref +
                        ": negative num_queries");
    }
    if (a.assistant_model_id.empty()) {
        throw DataError("annotation " + a.worker_id + "/" + a.conversation_ref +
                        ": empty assistant_model_id");
    }
    return a;
}

inline void to_json(json& j, const HumanAnnotation& a) {
    j = json{{"worker_id", a.worker_id},
             {"conversation_ref", a.conversation_ref},
             {"helpfulness", a.helpfulness},
             {"fluency", a.fluency},
             {"num_queries", a.num_queries},
             {"correct", a.correct},
             {"assistant_model_id", a.assistant_model_id}};
}

inline void from_json(const json& j, HumanAnnotation& a) {
    a.worker_id = j.at("worker_id").get<std::string>();
    a.conversation_ref = j.value("conversation_ref", "");
    a.helpfulness = j.at("helpfulness").get<double>();
    a.fluency = j.at("fluency").get<double>();
    a.num_queries = j.at("num_queries").get<int>();
    a.correct = j.at("correct").get<bool>();
    a.assistant_model_id = j.at("assistant_model_id").get<std::string>();
}

// ---------------------------------------------------------------------------
// Aggregates and correlations

struct MetricStat {
    double mean = 0.0;
    double sem = 0.0;  // standard error of the mean; 0 when n == 1
    int n = 0;
};

inline void to_json(json& j, const MetricStat& m) {
    j = json{{"mean", m.mean}, {"stderr", m.sem}, {"n", m.n}};
}

inline void from_json(const json& j, MetricStat& m) {
    m.mean = j.at("mean").get<double>();
    m.sem = j.at("stderr").get<double>();
    m.n = j.at("n").get<int>();
}

// Per-group metric means; group key is (assistant model, optional persona).
struct AggregateRow {
    std::string model_id;
    std::string persona_name;  // empty for all-persona / mixed rows
    std::map<std::string, MetricStat> metrics;
};

inline void to_json(json& j, const AggregateRow& r) {
    j = json{{"model_id", r.model_id},
             {"persona_name", r.persona_name},
             {"metrics", r.metrics}};
}

inline void from_json(const json& j, AggregateRow& r) {
    r.model_id = j.at("model_id").get<std::string>();
    r.persona_name = j.value("persona_name", "");
    r.metrics = j.at("metrics").get<std::map<std::string, MetricStat>>();
}

enum class Granularity { per_model, per_question, per_worker };

inline std::string to_string(Granularity g) {
    switch (g) {
        case Granularity::per_model: return "per_model";
        case Granularity::per_question: return "per_question";
        case Granularity::per_worker: return "per_worker";
    }
    return "per_model";
}

inline Granularity granularity_from_string(const std::string& s) {
    if (s == "per_model") return Granularity::per_model;
    if (s == "per_question") return Granularity::per_question;
    if (s == "per_worker") return Granularity::per_worker;
    throw ConfigError("unknown granularity: " + s);
}

struct MetricCorrelation {
    std::optional<double> r;  // absent when undefined (constant vector)
    int n_pairs = 0;
};

inline void to_json(json& j, const MetricCorrelation& c) {
    j = json{{"r", c.r ? json(*c.r) : json(nullptr)}, {"n_pairs", c.n_pairs}};
}

inline void from_json(const json& j, MetricCorrelation& c) {
    c.r.reset();
    if (j.contains("r") && !j.at("r").is_null()) c.r = j.at("r").get<double>();
    c.n_pairs = j.at("n_pairs").get<int>();
}

struct CorrelationReport {
    std::map<std::string, MetricCorrelation> metrics;  // "helpfulness", "fluency"
    Granularity granularity = Granularity::per_model;
    std::optional<double> overall_r;
    std::string overall_method = "concatenated";  // or "mean_of_rs"
    std::vector<std::string> unmatched_keys;
};

inline void to_json(json& j, const CorrelationReport& c) {
    j = json{{"metrics", c.metrics},
             {"granularity", to_string(c.granularity)},
             {"overall_r", c.overall_r ? json(*c.overall_r) : json(nullptr)},
             {"overall_method", c.overall_method},
             {"unmatched_keys", c.unmatched_keys}};
}

inline void from_json(const json& j, CorrelationReport& c) {
    c.metrics = j.at("metrics").get<std::map<std::string, MetricCorrelation>>();
    c.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    c.overall_r.reset();
    if (j.contains("overall_r") && !j.at("overall_r").is_null()) {
        c.overall_r = j.at("overall_r").get<double>();
    }
    c.overall_method = j.value("overall_method", "concatenated");
    c.unmatched_keys = j.value("unmatched_keys", std::vector<std::string>{});
}

// ---------------------------------------------------------------------------
// Run configuration

struct SamplingParams {
    double temperature = 0.7;
    int max_response_length = 1024;
    std::uint64_t seed = 0;
};

inline void to_json(json& j, const SamplingParams& p) {
    j = json{{"temperature", p.temperature},
             {"max_response_length", p.max_response_length},
             {"seed", p.seed}};
}

inline void from_json(const json& j, SamplingParams& p) {
    p.temperature = j.value("temperature", p.temperature);
    p.max_response_length = j.value("max_response_length", p.max_response_length);
    p.seed = j.value("seed", p.seed);
}

struct RetryPolicy {
    int attempts = 5;
    double base_delay_s = 1.0;
    double factor = 2.0;
    bool jitter = true;
};

inline void to_json(json& j, const RetryPolicy& p) {
    j = json{{"attempts", p.attempts},
             {"base_delay_s", p.base_delay_s},
             {"factor", p.factor},
             {"jitter", p.jitter}};
}

inline void from_json(const json& j, RetryPolicy& p) {
    p.attempts = j.value("attempts", p.attempts);
    p.base_delay_s = j.value("base_delay_s", p.base_delay_s);
    p.factor = j.value("factor", p.factor);
    p.jitter = j.value("jitter", p.jitter);
}

// How a logical model id is served. Operational only; never part of the
// config digest, so recorded and replayed runs share provenance.
struct ModelEndpoint {
    std::string backend;      // "http", "replay", "record", "simulator"
    std::string model_name;   // wire-level model name for http backends
    std::string base_url;     // e.g. "https://api.example.com"
    std::string api_key_env;  // env var holding the bearer token
    std::string fixture_path; // replay/record fixture (JSON-Lines)
};

inline void to_json(json& j, const ModelEndpoint& e) {
    j = json{{"backend", e.backend},
             {"model_name", e.model_name},
             {"base_url", e.base_url},
             {"api_key_env", e.api_key_env},
             {"fixture_path", e.fixture_path}};
}

inline void from_json(const json& j, ModelEndpoint& e) {
    e.backend = j.value("backend", "simulator");
    e.model_name = j.value("model_name", "");
    e.base_url = j.value("base_url", "");
    e.api_key_env = j.value("api_key_env", "");
    e.fixture_path = j.value("fixture_path", "");
}

enum class AssistantContext { immediate_only, full_history };

inline std::string to_string(AssistantContext c) {
    return c == AssistantContext::immediate_only ? "immediate_only" : "full_history";
}

inline AssistantContext assistant_context_from_string(const std::string& s) {
    if (s == "immediate_only") return AssistantContext::immediate_only;
    if (s == "full_history") return AssistantContext::full_history;
    throw ConfigError("unknown assistant_context: " + s);
}

struct RunConfig {
    // Interaction loop
    int max_turns = 10;
    int runs_per_question = 3;
    std::string seeker_model;
    std::vector<std::string> assistant_models;
    AssistantContext assistant_context = AssistantContext::immediate_only;

    // Evaluation
    int eval_runs_per_transcript = 3;
    std::vector<std::string> evaluator_models;
    bool debias = false;
    bool batch_evaluation = false;
    bool show_gold = true;
    int parse_retries = 2;

    // Sampling, per role
    SamplingParams seeker_sampling{0.7, 1024, 0};
    SamplingParams assistant_sampling{0.7, 1024, 0};
    SamplingParams evaluator_sampling{0.0, 1024, 0};

    // Personas
    std::map<std::string, double> persona_distribution{{"default", 1.0}};
    std::uint64_t persona_seed = 0;
    std::string persona_file;  // optional user persona definitions (JSON)

    // Data
    std::string questions_path;
    std::string questions_format = "multichoice_jsonl";
    std::string annotations_path;
    std::optional<int> sample_questions;  // seeded uniform subsample when set
    std::uint64_t sample_seed = 0;
    bool lenient_load = false;

    // Analysis
    std::optional<Granularity> granularity;  // required by meta-evaluation, never defaulted
    std::string overall_method = "concatenated";

    // Operational (excluded from the config digest)
    std::string output_dir = "runs";
    std::string template_dir;  // empty = embedded templates
    std::string cache_dir;     // empty = cache disabled
    int max_concurrency = 4;
    RetryPolicy retry;
    std::optional<int> request_budget;
    std::map<std::string, ModelEndpoint> endpoints;
};

inline void to_json(json& j, const RunConfig& c) {
    j = json{{"max_turns", c.max_turns},
             {"runs_per_question", c.runs_per_question},
             {"seeker_model", c.seeker_model},
             {"assistant_models", c.assistant_models},
             {"assistant_context", to_string(c.assistant_context)},
             {"eval_runs_per_transcript", c.eval_runs_per_transcript},
             {"evaluator_models", c.evaluator_models},
             {"debias", c.debias},
             {"batch_evaluation", c.batch_evaluation},
             {"show_gold", c.show_gold},
             {"parse_retries", c.parse_retries},
             {"seeker_sampling", c.seeker_sampling},
             {"assistant_sampling", c.assistant_sampling},
             {"evaluator_sampling", c.evaluator_sampling},
             {"persona_distribution", c.persona_distribution},
             {"persona_seed", c.persona_seed},
             {"persona_file", c.persona_file},
             {"questions_path", c.questions_path},
             {"questions_format", c.questions_format},
             {"annotations_path", c.annotations_path},
             {"sample_questions", c.sample_questions ? json(*c.sample_questions) : json(nullptr)},
             {"sample_seed", c.sample_seed},
             {"lenient_load", c.lenient_load},
             {"granularity", c.granularity ? json(to_string(*c.granularity)) : json(nullptr)},
             {"overall_method", c.overall_method},
             {"output_dir", c.output_dir},
             {"template_dir", c.template_dir},
             {"cache_dir", c.cache_dir},
             {"max_concurrency", c.max_concurrency},
             {"retry", c.retry},
             {"request_budget", c.request_budget ? json(*c.request_budget) : json(nullptr)},
             {"endpoints", c.endpoints}};
}

inline void from_json(const json& j, RunConfig& c) {
    RunConfig defaults;
    c.max_turns = j.value("max_turns", defaults.max_turns);
    c.runs_per_question = j.value("runs_per_question", defaults.runs_per_question);
    c.seeker_model = j.value("seeker_model", "");
    c.assistant_models = j.value("assistant_models", std::vector<std::string>{});
    c.assistant_context =
        assistant_context_from_string(j.value("assistant_context", "immediate_only"));
    c.eval_runs_per_transcript =
        j.value("eval_runs_per_transcript", defaults.eval_runs_per_transcript);
    c.evaluator_models = j.value("evaluator_models", std::vector<std::string>{});
    c.debias = j.value("debias", defaults.debias);
    c.batch_evaluation = j.value("batch_evaluation", defaults.batch_evaluation);
    c.show_gold = j.value("show_gold", defaults.show_gold);
    c.parse_retries = j.value("parse_retries", defaults.parse_retries);
    c.seeker_sampling = j.value("seeker_sampling", defaults.seeker_sampling);
    c.assistant_sampling = j.value("assistant_sampling", defaults.assistant_sampling);
    c.evaluator_sampling = j.value("evaluator_sampling", defaults.evaluator_sampling);
    c.persona_distribution =
        j.value("persona_distribution", std::map<std::string, double>{{"default", 1.0}});
    c.persona_seed = j.value("persona_seed", defaults.persona_seed);
    c.persona_file = j.value("persona_file", "");
    c.questions_path = j.value("questions_path", "");
    c.questions_format = j.value("questions_format", defaults.questions_format);
    c.annotations_path = j.value("annotations_path", "");
    c.sample_questions.reset();
    if (j.contains("sample_questions") && !j.at("sample_questions").is_null()) {
        c.sample_questions = j.at("sample_questions").get<int>();
    }
    c.sample_seed = j.value("sample_seed", defaults.sample_seed);
    c.lenient_load = j.value("lenient_load", defaults.lenient_load);
    c.granularity.reset();
    if (j.contains("granularity") && !j.at("granularity").is_null()) {
        c.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    }
    c.overall_method = j.value("overall_method", defaults.overall_method);
    c.output_dir = j.value("output_dir", defaults.output_dir);
    c.template_dir = j.value("template_dir", "");
    c.cache_dir = j.value("cache_dir", "");
    c.max_concurrency = j.value("max_concurrency", defaults.max_concurrency);
    c.retry = j.value("retry", defaults.retry);
    c.request_budget.reset();
    if (j.contains("request_budget") && !j.at("request_budget").is_null()) {
        c.request_budget = j.at("request_budget").get<int>();
    }
    c.endpoints = j.value("endpoints", std::map<std::string, ModelEndpoint>{});
}

inline const RunConfig& validate(const RunConfig& c) {
    if (c.max_turns < 1) throw ConfigError("max_turns must be >= 1");
    if (c.runs_per_question < 1) throw ConfigError("runs_per_question must be >= 1");
    if (c.eval_runs_per_transcript < 1) throw ConfigError("eval_runs_per_transcript must be >= 1");
    if (c.parse_retries < 0) throw ConfigError("parse_retries must be >= 0");
    if (c.max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
    if (c.seeker_sampling.temperature < 0 || c.assistant_sampling.temperature < 0 ||
        c.evaluator_sampling.temperature < 0) {
        throw ConfigError("temperature must be >= 0");
    }
    if (c.persona_distribution.empty()) throw ConfigError("persona_distribution is empty");
    double sum = 0.0;
    for (const auto& [name, w] : c.persona_distribution) {
        if (w < 0) throw ConfigError("persona weight for " + name + " is negative");
        sum += w;
    }
    if (sum < 1.0 - 1e-9 || sum > 1.0 + 1e-9) {
        throw ConfigError("persona weights sum to " + std::to_string(sum) + ", expected 1");
    }
    if (c.overall_method != "concatenated" && c.overall_method != "mean_of_rs") {
        throw ConfigError("overall_method must be 'concatenated' or 'mean_of_rs'");
    }
    if (c.retry.attempts < 1) throw ConfigError("retry.attempts must be >= 1");
    return c;
}

// Canonical serialization of the semantic configuration: every field that can
// change what a run computes, and none of the fields that only say where or
// how fast it runs (output/cache paths, concurrency, retries, endpoint
// wiring). Recording a run and replaying it therefore share one digest.
inline json semantic_config_json(const RunConfig& c) {
    return json{{"max_turns", c.max_turns},
                {"runs_per_question", c.runs_per_question},
                {"seeker_model", c.seeker_model},
                {"assistant_models", c.assistant_models},
                {"assistant_context", to_string(c.assistant_context)},
                {"eval_runs_per_transcript", c.eval_runs_per_transcript},
                {"evaluator_models", c.evaluator_models},
                {"debias", c.debias},
                {"batch_evaluation", c.batch_evaluation},
                {"show_gold", c.show_gold},
                {"parse_retries", c.parse_retries},
                {"seeker_sampling", c.seeker_sampling},
                {"assistant_sampling", c.assistant_sampling},
                {"evaluator_sampling", c.evaluator_sampling},
                {"persona_distribution", c.persona_distribution},
                {"persona_seed", c.persona_seed},
                {"questions_path", c.questions_path},
                {"questions_format", c.questions_format},
                {"annotations_path", c.annotations_path},
                {"sample_questions",
                 c.sample_questions ? json(*c.sample_questions) : json(nullptr)},
                {"sample_seed", c.sample_seed},
                {"granularity", c.granularity ? json(to_string(*c.granularity)) : json(nullptr)},
                {"overall_method", c.overall_method}};
}

// Stable hex digest identifying the semantic configuration; names the run
// directory and is stamped into every transcript, record, and report.
inline std::string config_digest(const RunConfig& c) {
    return detail::sha256_hex(semantic_config_json(c).dump());
}

inline std::string config_digest_prefix(const RunConfig& c) {
    return config_digest(c).substr(0, 12);
}

}  // namespace parley
