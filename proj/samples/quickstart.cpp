// Runs a small benchmark fully in process: a simulated seeker quizzes two
// simulated assistants on three questions, a simulated judge scores the
// transcripts, and the aggregate table prints as markdown.
#include "parley/parley.hpp"

#include <iostream>

using namespace parley;

int main() {
    std::vector<Question> questions(3);
    questions[0].id = "q1";
    questions[0].body = "Which planet is known as the Red Planet?";
    questions[0].choices = {{"A", "Venus"}, {"B", "Mars"}, {"C", "Jupiter"}, {"D", "Mercury"}};
    questions[0].gold = {"B"};
    questions[0].dataset = DatasetTag::mmlu;
    questions[1].id = "q2";
    questions[1].body = "What gas do plants absorb during photosynthesis?";
    questions[1].choices = {{"A", "Oxygen"}, {"B", "Nitrogen"}, {"C", "Carbon dioxide"}};
    questions[1].gold = {"C"};
    questions[1].dataset = DatasetTag::mmlu;
    questions[2].id = "q3";
    questions[2].body = "Who wrote the novel Dune?";
    questions[2].gold = {"Frank Herbert"};
    questions[2].dataset = DatasetTag::nq;

    RunConfig config;
    config.seeker_model = "seeker";
    config.assistant_models = {"alpha", "beta"};
    config.evaluator_models = {"judge"};
    config.max_turns = 3;
    config.runs_per_question = 2;

    // Models without a configured endpoint get the deterministic simulator.
    auto hub = build_provider_hub(config);
    auto transcripts = run_batch(questions, config, PersonaRegistry(), *hub);

    std::map<std::string, Question> by_id;
    for (const auto& q : questions) by_id[q.id] = q;
    const Persona& judge_persona = builtin_personas().at("default");
    auto records = evaluate(transcripts, by_id, "judge", judge_persona, config, *hub);

    ReportInputs inputs;
    inputs.rows = aggregate(records, transcripts, by_id);
    std::cout << render_markdown(inputs);
    return 0;
}
