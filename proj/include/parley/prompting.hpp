#pragma once
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "parley/detail/sha256.hpp"
#include "parley/detail/strings.hpp"
#include "parley/domain.hpp"
#include "parley/error.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Templates
//
// Every prompt is assembled from named templates. The embedded defaults below
// are authoritative; the same texts ship as editable files under templates/
// (one trailing newline added per file) so operators can audit or hot-swap
// them via RunConfig.template_dir. The only placeholder syntax is
// {answer_pattern}, replaced with the question's answer directive.

namespace templates {

inline constexpr std::string_view stage1_role_task =
    "You are mimicking a human.\n"
    "You are trying to choose the correct answer to the given question.";

inline constexpr std::string_view stage1_discussion =
    "Please ask an assistant sub-questions for help approaching answers.\n"
    "In each turn, please only ask one sub-question to interact with an assistant. In the "
    "sub-questions, please include all necessary information, such as the question and options, "
    "in the original question. If you know the answer, please output \"So, the answer is: "
    "{answer_pattern}.\"";

inline constexpr std::string_view stage1_force_answer =
    "Please choose the correct answer to the given question. Please output \"So, the answer is: "
    "{answer_pattern}.\"";

inline constexpr std::string_view stage2_role =
    "You are a helpful and precise assistant for checking the quality of the AI assistant's "
    "responses in interactions.";

inline constexpr std::string_view stage2_debias =
    "Please act as an impartial and unbiased judge. In your evaluation, please be objective and "
    "do not include any bias or your preference.";

inline constexpr std::string_view stage2_metrics =
    "Fluency (5-point Likert): How clear (or fluent) were the responses from the AI Assistant?\n"
    "Helpfulness (5-point Likert): How helpful was having access to the AI Assistant compared "
    "to not having access?\n"
    "Helpfulness (free-form): Why did you find the AI Assistant helpful or unhelpful?";

inline constexpr std::string_view stage2_instruction_header =
    "Please evaluate the above conversations between user and AI assistant by using the "
    "following metrics:";

inline constexpr std::string_view stage2_instruction_footer =
    "Please output each of the above metrics line-by-line.";

inline constexpr std::string_view stage2_retry_reminder =
    "Reminder: please output exactly one line per metric, in the form \"Fluency (5-point "
    "Likert): <1-5>\", \"Helpfulness (5-point Likert): <1-5>\", \"Helpfulness (free-form): "
    "<your explanation>\".";

}  // namespace templates

// The named template texts a run resolves once at startup.
class TemplateSet {
public:
    // Embedded defaults.
    TemplateSet() {
        texts_ = {{"stage1_role_task", std::string(templates::stage1_role_task)},
                  {"stage1_discussion", std::string(templates::stage1_discussion)},
                  {"stage1_force_answer", std::string(templates::stage1_force_answer)},
                  {"stage2_role", std::string(templates::stage2_role)},
                  {"stage2_debias", std::string(templates::stage2_debias)},
                  {"stage2_metrics", std::string(templates::stage2_metrics)},
                  {"stage2_instruction_header", std::string(templates::stage2_instruction_header)},
                  {"stage2_instruction_footer", std::string(templates::stage2_instruction_footer)},
                  {"stage2_retry_reminder", std::string(templates::stage2_retry_reminder)}};
    }

    // Embedded defaults, with any template overridden by a matching
    // <name>.txt file in dir. One trailing newline per file is stripped.
    static TemplateSet load(const std::string& dir) {
        TemplateSet set;
        if (dir.empty()) return set;
        if (!std::filesystem::is_directory(dir)) {
            throw ConfigError("template_dir does not exist: " + dir);
        }
        for (auto& [name, text] : set.texts_) {
            auto path = std::filesystem::path(dir) / (name + ".txt");
            if (!std::filesystem::exists(path)) continue;
            std::ifstream in(path, std::ios::binary);
            if (!in) throw ConfigError("cannot read template file: " + path.string());
            std::ostringstream buf;
            buf << in.rdbuf();
            std::string content = buf.str();
            if (!content.empty() && content.back() == '\n') content.pop_back();
            text = content;
        }
        return set;
    }

    const std::string& get(const std::string& name) const {
        auto it = texts_.find(name);
        if (it == texts_.end()) throw ConfigError("unknown template: " + name);
        return it->second;
    }

    const std::map<std::string, std::string>& all() const { return texts_; }

    // Provenance digest over every template, stamped into run outputs.
    std::string digest() const {
        detail::Sha256 h;
        for (const auto& [name, text] : texts_) {
            h.update(name);
            h.update(std::string_view("\0", 1));
            h.update(text);
            h.update(std::string_view("\0", 1));
        }
        auto bytes = h.digest();
        static constexpr char hex[] = "0123456789abcdef";
        std::string out;
        out.reserve(64);
        for (auto b : bytes) {
            out.push_back(hex[b >> 4]);
            out.push_back(hex[b & 0xf]);
        }
        return out;
    }

private:
    std::map<std::string, std::string> texts_;
};

// ---------------------------------------------------------------------------
// Question rendering

// Multi-choice: question text, then one "L. option" line per choice in label
// order. Open: the bare question text.
inline std::string format_question(const Question& question) {
    std::string out = question.body;
    for (const auto& [label, text] : question.choices) {
        out += "\n";
        out += label;
        out += ". ";
        out += text;
    }
    return out;
}

// The directive naming what an answer looks like: the choice-label list
// ("A, B, C, or D") for multi-choice, "<your answer>" for open questions.
inline std::string answer_pattern(const Question& question) {
    if (!question.multi_choice()) return "<your answer>";
    return detail::oxford_or(question.labels());
}

// ---------------------------------------------------------------------------
// Stage-1 (interaction) prompts

// System prompt pieces for one interaction. The system_prompt is the complete
// string handed to the seeker model: role/task lines, the discussion
// instruction, a blank line, then the question block.
struct PromptBundle {
    std::string system_prompt;
    std::string role_task;       // persona-conditioned role and task description
    std::string discussion;      // persona-invariant per-turn instruction
    std::string question_block;
};

// Builds the seeker system prompt. The default persona uses the stock
// role/task lines; any other persona replaces exactly those lines with its
// interaction_role_prompt. The discussion instruction never varies by
// persona; only its {answer_pattern} placeholder varies by question shape.
inline PromptBundle build_interaction_prompt(const Persona& persona, const Question& question,
                                             const TemplateSet& templates = TemplateSet()) {
    PromptBundle bundle;
    bundle.role_task = persona.name == "default" ? templates.get("stage1_role_task")
                                                 : persona.interaction_role_prompt;
    bundle.discussion = detail::replace_all(templates.get("stage1_discussion"),
                                            "{answer_pattern}", answer_pattern(question));
    bundle.question_block = format_question(question);
    bundle.system_prompt =
        bundle.role_task + "\n" + bundle.discussion + "\n\n" + bundle.question_block;
    return bundle;
}

// Fallback system prompt issued once when the turn limit is reached without
// a detected answer.
inline std::string build_force_answer_prompt(const Question& question,
                                             const TemplateSet& templates = TemplateSet()) {
    std::string instruction = detail::replace_all(templates.get("stage1_force_answer"),
                                                  "{answer_pattern}", answer_pattern(question));
    return instruction + "\n\n" + format_question(question);
}

// ---------------------------------------------------------------------------
// Stage-2 (evaluation) prompts

// The three metric-definition lines, with persona metric_overrides replacing
// the definition text after the matching label.
inline std::string render_metric_definitions(const Persona& persona,
                                             const TemplateSet& templates = TemplateSet()) {
    auto lines = detail::split_lines(templates.get("stage2_metrics"));
    if (lines.size() != 3) {
        throw ConfigError("stage2_metrics template must have exactly 3 lines");
    }
    static const std::map<std::string, std::size_t> line_of = {
        {"fluency", 0}, {"helpfulness", 1}, {"helpfulness_free_form", 2}};
    for (const auto& [metric, text] : persona.metric_overrides) {
        auto it = line_of.find(metric);
        if (it == line_of.end()) {
            throw ConfigError("persona " + persona.name + ": override for unknown metric name '" +
                              metric + "'");
        }
        auto colon = lines[it->second].find(':');
        if (colon == std::string::npos) {
            throw ConfigError("stage2_metrics template line missing label separator");
        }
        lines[it->second] = lines[it->second].substr(0, colon) + ": " + text;
    }
    return detail::join(lines, "\n");
}

// One numbered question/gold/conversation/answer block per transcript, in
// submission order. Blocks are 1-indexed to match the closing instruction's
// "above conversations" framing.
inline std::string render_conversation_blocks(
    const std::vector<Transcript>& transcripts,
    const std::map<std::string, Question>& questions_by_id, bool show_gold) {
    std::string out;
    for (std::size_t i = 0; i < transcripts.size(); ++i) {
        const Transcript& t = transcripts[i];
        auto qit = questions_by_id.find(t.question_id);
        if (qit == questions_by_id.end()) {
            throw DataError("evaluation prompt: unknown question id " + t.question_id);
        }
        const Question& q = qit->second;
        std::string n = std::to_string(i + 1);
        if (i) out += "\n\n";
        out += "Question " + n + ":\n" + format_question(q);
        if (show_gold) {
            out += "\nGolden Answer " + n + ": " + detail::join(q.gold, "; ");
        }
        out += "\nConversation " + n + ":";
        for (const Turn& turn : t.turns) {
            out += "\n";
            out += turn.speaker == Speaker::seeker ? "User: " : "Assistant: ";
            out += turn.text;
        }
        out += "\nUser Answer " + n + ": ";
        out += t.final_answer ? *t.final_answer : "(no answer)";
    }
    return out;
}

// Complete Stage-2 prompt: role/task description (persona-adjusted, debias
// sentence prepended when configured), the numbered conversation blocks, and
// the metric/instruction footer.
inline std::string build_evaluation_prompt(const std::vector<Transcript>& transcripts,
                                           const std::map<std::string, Question>& questions_by_id,
                                           const Persona& persona, const RunConfig& config,
                                           const TemplateSet& templates = TemplateSet()) {
    if (transcripts.empty()) {
        throw ConfigError("build_evaluation_prompt: empty transcript list");
    }
    std::string role = persona.name == "default" ? templates.get("stage2_role")
                                                 : persona.evaluation_role_prompt;
    std::string out;
    if (config.debias) {
        out += templates.get("stage2_debias");
        out += "\n";
    }
    out += role;
    out += "\n\n";
    out += render_conversation_blocks(transcripts, questions_by_id, config.show_gold);
    out += "\n\n";
    out += templates.get("stage2_instruction_header");
    out += "\n";
    out += render_metric_definitions(persona, templates);
    out += "\n";
    out += templates.get("stage2_instruction_footer");
    return out;
}

// One-line format reminder appended to the prompt on parse-failure retries.
inline std::string retry_reminder(const TemplateSet& templates = TemplateSet()) {
    return templates.get("stage2_retry_reminder");
}

}  // namespace parley
