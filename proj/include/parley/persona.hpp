#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "parley/detail/sha256.hpp"
#include "parley/domain.hpp"
#include "parley/error.hpp"
#include "parley/prompting.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Registry

// Built-in personas. The default persona's prompts are the stock Stage-1 and
// Stage-2 role/task texts; the named personas replace those texts and (except
// for default) redefine the helpfulness metric to their evaluation stance.
inline const std::map<std::string, Persona>& builtin_personas() {
    static const std::map<std::string, Persona> registry = [] {
        std::map<std::string, Persona> r;
        Persona def;
        def.name = "default";
        def.interaction_role_prompt = std::string(templates::stage1_role_task);
        def.evaluation_role_prompt = std::string(templates::stage2_role);
        r[def.name] = def;

        Persona expert;
        expert.name = "Expert";
        expert.interaction_role_prompt =
            "You are mimicking a knowledgeable human who can quickly understand new concepts. "
            "You need help from an assistant to learn and answer questions.";
        expert.evaluation_role_prompt =
            "The AI Assistant helps a knowledgeable human to answer a question. The assistant "
            "should provide straightforward, informative, and in-depth answers to human "
            "questions.";
        expert.metric_overrides = {{"helpfulness", expert.evaluation_role_prompt}};
        r[expert.name] = expert;

        Persona critical;
        critical.name = "Critical-Thinker";
        critical.interaction_role_prompt =
            "You are mimicking a human who prefers interactions rich in critical information. "
            "You need help from an assistant and try to get critical information from it to "
            "answer the following questions.";
        critical.evaluation_role_prompt =
            "The AI Assistant should provide clear, non-vague, and precise information or "
            "options and help user deduce answers.";
        critical.metric_overrides = {{"helpfulness", critical.evaluation_role_prompt}};
        r[critical.name] = critical;

        Persona adaptability;
        adaptability.name = "Adaptability-Seeker";
        adaptability.interaction_role_prompt =
            "You are mimicking a human who prefers an adaptable assistant who can always "
            "understand his questions. You need help from an assistant to answer questions.";
        adaptability.evaluation_role_prompt =
            "The AI Assistant helps a human who prefers an adaptable assistant. The assistant "
            "should understand user's questions, provide related options, and help user deduce "
            "answers.";
        adaptability.metric_overrides = {{"helpfulness", adaptability.evaluation_role_prompt}};
        r[adaptability.name] = adaptability;

        Persona clarity;
        clarity.name = "Clarity-Seeker";
        clarity.interaction_role_prompt =
            "You are mimicking a human who prefers clear information in conversations. You need "
            "help from an assistant and want to get clear information from it to answer "
            "questions.";
        clarity.evaluation_role_prompt =
            "The AI Assistant helps a human who prefers clear information in conversations. The "
            "AI should provide non-vague, precise information to help user deduce answers.";
        clarity.metric_overrides = {{"helpfulness", clarity.evaluation_role_prompt}};
        r[clarity.name] = clarity;
        return r;
    }();
    return registry;
}

// Built-ins plus optional user personas from a JSON file ({"personas": [...]}
// or a bare array). User personas may not shadow built-in names.
class PersonaRegistry {
public:
    PersonaRegistry() : personas_(builtin_personas()) {}

    static PersonaRegistry load(const std::string& persona_file) {
        PersonaRegistry reg;
        if (persona_file.empty()) return reg;
        std::ifstream in(persona_file);
        if (!in) throw ConfigError("cannot read persona file: " + persona_file);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("persona file " + persona_file + ": " + e.what());
        }
        const json& list = j.is_array() ? j : j.at("personas");
        for (const auto& item : list) {
            Persona p = item.get<Persona>();
            validate(p);
            if (builtin_personas().count(p.name)) {
                throw ConfigError("persona file redefines built-in persona " + p.name);
            }
            reg.personas_[p.name] = p;
        }
        return reg;
    }

    const Persona& get(const std::string& name) const {
        auto it = personas_.find(name);
        if (it == personas_.end()) throw ConfigError("unknown persona: " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return personas_.count(name) > 0; }

    const std::map<std::string, Persona>& all() const { return personas_; }

private:
    std::map<std::string, Persona> personas_;
};

// ---------------------------------------------------------------------------
// Distribution and assignment

// A persona mixture plus the seed that fixes its slot assignment. Weights
// must be nonnegative and sum to 1; zero-weight entries are dropped.
struct PersonaDistribution {
    std::map<std::string, double> entries;
    std::uint64_t seed = 0;

    static PersonaDistribution make(const std::map<std::string, double>& weights,
                                    std::uint64_t seed, const PersonaRegistry& registry) {
        PersonaDistribution d;
        d.seed = seed;
        double sum = 0.0;
        for (const auto& [name, w] : weights) {
            if (w < 0) throw ConfigError("persona weight for " + name + " is negative");
            if (!registry.has(name)) throw ConfigError("unknown persona: " + name);
            sum += w;
            if (w > 0) d.entries[name] = w;
        }
        if (sum < 1.0 - 1e-9 || sum > 1.0 + 1e-9) {
            throw ConfigError("persona weights sum to " + std::to_string(sum) + ", expected 1");
        }
        if (d.entries.empty()) throw ConfigError("persona distribution is empty");
        return d;
    }

    static PersonaDistribution from_config(const RunConfig& config,
                                           const PersonaRegistry& registry) {
        return make(config.persona_distribution, config.persona_seed, registry);
    }
};

// Deterministic persona-per-slot schedule for one job. Slot counts follow
// largest-remainder apportionment over the job's N = questions x runs slots
// (every persona gets floor(w*N) or ceil(w*N) slots), then slots are
// interleaved so every persona is spread across the job; ties break by a
// seed-derived order.
class PersonaAssignment {
public:
    static PersonaAssignment build(const PersonaDistribution& distribution, int num_questions,
                                   int runs_per_question) {
        if (distribution.entries.empty()) {
            throw ConfigError("persona distribution is empty");
        }
        if (num_questions < 1 || runs_per_question < 1) {
            throw ConfigError("persona assignment needs a positive job shape");
        }
        PersonaAssignment out;
        out.runs_per_question_ = runs_per_question;
        int total = num_questions * runs_per_question;

        std::vector<std::string> names;
        std::vector<double> weights;
        for (const auto& [name, w] : distribution.entries) {
            names.push_back(name);
            weights.push_back(w);
        }
        // Seeded tiebreak order: personas ranked by a per-name hash.
        std::vector<std::size_t> rank(names.size());
        std::iota(rank.begin(), rank.end(), std::size_t(0));
        std::vector<std::uint64_t> salt(names.size());
        for (std::size_t i = 0; i < names.size(); ++i) {
            salt[i] = detail::sha256_prefix_u64(std::to_string(distribution.seed) + "|" +
                                                names[i]);
        }
        std::sort(rank.begin(), rank.end(),
                  [&](std::size_t a, std::size_t b) { return salt[a] < salt[b]; });
        std::vector<std::size_t> tiebreak(names.size());
        for (std::size_t pos = 0; pos < rank.size(); ++pos) tiebreak[rank[pos]] = pos;

        // Largest-remainder slot counts.
        std::vector<int> counts(names.size());
        std::vector<double> remainders(names.size());
        int assigned = 0;
        for (std::size_t i = 0; i < names.size(); ++i) {
            double quota = weights[i] * total;
            counts[i] = static_cast<int>(std::floor(quota));
            remainders[i] = quota - counts[i];
            assigned += counts[i];
        }
        std::vector<std::size_t> order(names.size());
        std::iota(order.begin(), order.end(), std::size_t(0));
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (remainders[a] != remainders[b]) return remainders[a] > remainders[b];
            return tiebreak[a] < tiebreak[b];
        });
        for (int extra = 0; extra < total - assigned; ++extra) {
            ++counts[order[extra % order.size()]];
        }

        // Quota interleave: each slot goes to the persona furthest behind its
        // proportional pace, among those with slots left.
        std::vector<int> used(names.size(), 0);
        out.slots_.reserve(total);
        for (int k = 0; k < total; ++k) {
            std::size_t best = names.size();
            double best_score = -1e300;
            for (std::size_t i = 0; i < names.size(); ++i) {
                if (used[i] >= counts[i]) continue;
                double score = weights[i] * (k + 1) - used[i];
                if (best == names.size() || score > best_score ||
                    (score == best_score && tiebreak[i] < tiebreak[best])) {
                    best = i;
                    best_score = score;
                }
            }
            ++used[best];
            out.slots_.push_back(names[best]);
        }
        return out;
    }

    const std::string& at(int question_index, int run_index) const {
        int slot = question_index * runs_per_question_ + run_index;
        if (slot < 0 || slot >= static_cast<int>(slots_.size())) {
            throw ConfigError("persona assignment slot out of range");
        }
        return slots_[slot];
    }

    std::map<std::string, int> counts() const {
        std::map<std::string, int> out;
        for (const auto& name : slots_) ++out[name];
        return out;
    }

private:
    std::vector<std::string> slots_;
    int runs_per_question_ = 1;
};

// The persona for one (question, run) slot. A deterministic function of the
// distribution, its seed, the indices, and the job shape.
inline std::string assigned_persona(const PersonaDistribution& distribution, int question_index,
                                    int run_index, int num_questions, int runs_per_question) {
    return PersonaAssignment::build(distribution, num_questions, runs_per_question)
        .at(question_index, run_index);
}

// ---------------------------------------------------------------------------
// Mixture scoring

// Distribution-weighted combination of per-persona aggregates: mixed mean is
// the weighted mean, stderr the weighted root-sum-square of component
// standard errors, n the total sample count.
inline AggregateRow mix_scores(const std::map<std::string, AggregateRow>& per_persona,
                               const PersonaDistribution& distribution) {
    if (distribution.entries.empty()) throw ConfigError("persona distribution is empty");
    std::vector<std::string> metrics;
    std::string model_id;
    for (const auto& [name, weight] : distribution.entries) {
        auto it = per_persona.find(name);
        if (it == per_persona.end()) {
            throw ConfigError("mix_scores: missing persona aggregate for " + name);
        }
        if (model_id.empty()) {
            model_id = it->second.model_id;
            for (const auto& [metric, stat] : it->second.metrics) metrics.push_back(metric);
        } else if (it->second.model_id != model_id) {
            throw ConfigError("mix_scores: aggregates span multiple models");
        }
    }
    AggregateRow out;
    out.model_id = model_id;
    out.persona_name = "mixture";
    for (const auto& metric : metrics) {
        double mean = 0.0;
        double var_term = 0.0;
        int n = 0;
        for (const auto& [name, weight] : distribution.entries) {
            const AggregateRow& row = per_persona.at(name);
            auto it = row.metrics.find(metric);
            if (it == row.metrics.end()) {
                throw ConfigError("mix_scores: persona " + name + " missing metric " + metric);
            }
            if (it->second.n < 1) {
                throw ConfigError("mix_scores: persona " + name + " has empty metric " + metric);
            }
            mean += weight * it->second.mean;
            var_term += (weight * it->second.sem) * (weight * it->second.sem);
            n += it->second.n;
        }
        out.metrics[metric] = MetricStat{mean, std::sqrt(var_term), n};
    }
    return out;
}

}  // namespace parley
