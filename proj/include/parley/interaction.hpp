#pragma once
#include <cctype>
#include <optional>
#include <string>
#include <vector>

#include "parley/detail/parallel.hpp"
#include "parley/detail/strings.hpp"
#include "parley/domain.hpp"
#include "parley/persona.hpp"
#include "parley/prompting.hpp"
#include "parley/provider.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Answer detection

// Scans for the literal answer phrase (case-insensitive, last occurrence
// wins). Multi-choice: the first standalone letter after the phrase that is
// one of the question's labels. Open QA: the trimmed remainder of the
// sentence after the phrase/colon, decimal points not treated as sentence
// ends. Returns nothing when the phrase is absent or no usable answer
// follows it.
inline std::optional<std::string> detect_final_answer(const std::string& text,
                                                      const Question& question) {
    static const std::string phrase = "so, the answer is";
    std::string lower = detail::to_lower(text);
    auto pos = lower.rfind(phrase);
    if (pos == std::string::npos) return std::nullopt;
    std::size_t after = pos + phrase.size();

    auto is_alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };

    if (question.multi_choice()) {
        auto labels = question.labels();
        for (std::size_t i = after; i < text.size(); ++i) {
            char up = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i])));
            if (up < 'A' || up > 'Z') continue;
            bool left_ok = i == 0 || !is_alnum(text[i - 1]);
            bool right_ok = i + 1 == text.size() || !is_alnum(text[i + 1]);
            if (!left_ok || !right_ok) continue;
            std::string candidate(1, up);
            if (std::find(labels.begin(), labels.end(), candidate) != labels.end()) {
                return candidate;
            }
        }
        return std::nullopt;
    }

    std::size_t i = after;
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    if (i < text.size() && text[i] == ':') ++i;
    std::size_t end = text.size();
    for (std::size_t k = i; k < text.size(); ++k) {
        char c = text[k];
        if (c == '\n' || c == '!' || c == '?') {
            end = k;
            break;
        }
        if (c == '.') {
            bool decimal = k > 0 && k + 1 < text.size() &&
                           std::isdigit(static_cast<unsigned char>(text[k - 1])) &&
                           std::isdigit(static_cast<unsigned char>(text[k + 1]));
            if (!decimal) {
                end = k;
                break;
            }
        }
    }
    std::string answer = detail::trim(text.substr(i, end - i));
    while (answer.size() >= 2 && ((answer.front() == '"' && answer.back() == '"') ||
                                  (answer.front() == '\'' && answer.back() == '\''))) {
        answer = detail::trim(answer.substr(1, answer.size() - 2));
    }
    if (answer.empty()) return std::nullopt;
    return answer;
}

// ---------------------------------------------------------------------------
// Interaction loop

// Drives one seeker/assistant interaction to completion.
//
// The seeker is called with the Stage-1 system prompt plus the dialogue so
// far (its own queries as assistant-role messages, the assistant's replies as
// user-role). A detected answer ends the loop without storing the answering
// message as a turn. Otherwise the seeker message goes to the assistant:
// under immediate_only as the lone message of the request, under full_history
// with the whole exchange. At max_turns assistant turns, the force-answer
// prompt is issued to the seeker once.
inline Transcript run_interaction(const Question& question, const std::string& seeker_model,
                                  const std::string& assistant_model, const Persona& persona,
                                  const RunConfig& config, ProviderHub& hub,
                                  const TemplateSet& templates = TemplateSet(),
                                  int run_index = 0) {
    validate(question);
    Transcript t;
    t.question_id = question.id;
    t.seeker_model_id = seeker_model;
    t.assistant_model_id = assistant_model;
    t.persona_name = persona.name;
    t.run_index = run_index;
    t.config_digest = config_digest(config);

    PromptBundle bundle = build_interaction_prompt(persona, question, templates);
    std::string tag = question.id + "|" + assistant_model + "|" + std::to_string(run_index);

    int seeker_calls = 0;
    auto call_seeker = [&](const std::string& system_text) {
        ChatRequest req;
        req.model_id = seeker_model;
        req.messages.push_back({"system", system_text});
        for (const Turn& turn : t.turns) {
            req.messages.push_back(
                {turn.speaker == Speaker::seeker ? "assistant" : "user", turn.text});
        }
        req.temperature = config.seeker_sampling.temperature;
        req.max_response_length = config.seeker_sampling.max_response_length;
        req.seed = derive_seed(config.seeker_sampling.seed,
                               "seeker|" + tag + "|" + std::to_string(seeker_calls));
        ++seeker_calls;
        return hub.complete(req).text;
    };

    auto call_assistant = [&](const std::string& seeker_message) {
        ChatRequest req;
        req.model_id = assistant_model;
        if (config.assistant_context == AssistantContext::immediate_only) {
            req.messages.push_back({"user", seeker_message});
        } else {
            for (const Turn& turn : t.turns) {
                req.messages.push_back(
                    {turn.speaker == Speaker::seeker ? "user" : "assistant", turn.text});
            }
            req.messages.push_back({"user", seeker_message});
        }
        req.temperature = config.assistant_sampling.temperature;
        req.max_response_length = config.assistant_sampling.max_response_length;
        req.seed = derive_seed(config.assistant_sampling.seed,
                               "assistant|" + tag + "|" + std::to_string(t.num_queries));
        return hub.complete(req).text;
    };

    while (true) {
        std::string message = call_seeker(bundle.system_prompt);
        if (detail::trim(message).empty()) {
            t.termination = Termination::unanswered;
            t.diagnostic = "seeker returned an empty message";
            break;
        }
        if (auto answer = detect_final_answer(message, question)) {
            t.final_answer = *answer;
            t.termination = Termination::answered;
            break;
        }
        if (t.num_queries == config.max_turns) {
            std::string forced = call_seeker(build_force_answer_prompt(question, templates));
            if (auto answer = detect_final_answer(forced, question)) {
                t.final_answer = *answer;
                t.termination = Termination::turn_limit_forced;
            } else {
                t.termination = Termination::unanswered;
                t.diagnostic = "no answer extracted after turn limit";
            }
            break;
        }
        std::string reply = call_assistant(message);
        if (detail::trim(reply).empty()) {
            throw ProviderError("assistant " + assistant_model + " returned an empty reply");
        }
        t.turns.push_back(Turn{static_cast<int>(t.turns.size()), Speaker::seeker, message});
        t.turns.push_back(Turn{static_cast<int>(t.turns.size()), Speaker::assistant, reply});
        ++t.num_queries;
    }
    return validate(t), t;
}

// ---------------------------------------------------------------------------
// Batch execution

// Runs every (assistant model, question, run) slot, assigning personas from
// the distribution schedule. Slots execute concurrently up to
// config.max_concurrency; a failed slot becomes an unanswered transcript
// carrying its diagnostic and the batch continues. Output order is canonical
// (model, then question, then run index) regardless of scheduling.
inline std::vector<Transcript> run_batch(const std::vector<Question>& questions,
                                         const RunConfig& config,
                                         const PersonaRegistry& registry, ProviderHub& hub,
                                         const TemplateSet& templates = TemplateSet()) {
    for (const auto& q : questions) validate(q);
    if (questions.empty()) return {};
    if (config.assistant_models.empty()) {
        throw ConfigError("run_batch: no assistant models configured");
    }
    auto distribution = PersonaDistribution::from_config(config, registry);
    auto assignment = PersonaAssignment::build(distribution,
                                               static_cast<int>(questions.size()),
                                               config.runs_per_question);
    std::string digest = config_digest(config);

    struct Slot {
        int model_index;
        int question_index;
        int run_index;
    };
    std::vector<Slot> slots;
    for (int m = 0; m < static_cast<int>(config.assistant_models.size()); ++m) {
        for (int q = 0; q < static_cast<int>(questions.size()); ++q) {
            for (int r = 0; r < config.runs_per_question; ++r) {
                slots.push_back(Slot{m, q, r});
            }
        }
    }

    std::vector<Transcript> out(slots.size());
    detail::parallel_for(static_cast<int>(slots.size()), config.max_concurrency, [&](int i) {
        const Slot& slot = slots[static_cast<std::size_t>(i)];
        const Question& question = questions[static_cast<std::size_t>(slot.question_index)];
        const std::string& model =
            config.assistant_models[static_cast<std::size_t>(slot.model_index)];
        const Persona& persona =
            registry.get(assignment.at(slot.question_index, slot.run_index));
        try {
            out[static_cast<std::size_t>(i)] =
                run_interaction(question, config.seeker_model, model, persona, config, hub,
                                templates, slot.run_index);
        } catch (const std::exception& e) {
            Transcript failed;
            failed.question_id = question.id;
            failed.seeker_model_id = config.seeker_model;
            failed.assistant_model_id = model;
            failed.persona_name = persona.name;
            failed.run_index = slot.run_index;
            failed.config_digest = digest;
            failed.termination = Termination::unanswered;
            failed.diagnostic = e.what();
            out[static_cast<std::size_t>(i)] = std::move(failed);
        }
    });
    return out;
}

}  // namespace parley
