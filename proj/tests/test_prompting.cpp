#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace parley;
using Catch::Matchers::ContainsSubstring;
using testutil::TempDir;
using testutil::golden_transcript;
using testutil::make_transcript;
using testutil::mc_question;
using testutil::open_question;
using testutil::read_golden;
using testutil::write_file;

namespace {

std::map<std::string, Question> fixture_questions() {
    return {{"g1", mc_question()}, {"g2", open_question()}};
}

const Persona& builtin(const std::string& name) { return builtin_personas().at(name); }

}  // namespace

TEST_CASE("question formatting lists labeled choices", "[prompting]") {
    REQUIRE(format_question(mc_question()) ==
            "Which planet is known as the Red Planet?\nA. Venus\nB. Mars\nC. Jupiter\n"
            "D. Mercury");
    REQUIRE(format_question(open_question()) == "Who wrote the novel Dune?");

    auto two = mc_question();
    two.choices = {{"A", "Yes"}, {"B", "No"}};
    REQUIRE(format_question(two) ==
            "Which planet is known as the Red Planet?\nA. Yes\nB. No");
}

TEST_CASE("answer pattern follows the label set", "[prompting]") {
    REQUIRE(answer_pattern(mc_question()) == "A, B, C, or D");
    auto two = mc_question();
    two.choices = {{"A", "Yes"}, {"B", "No"}};
    REQUIRE(answer_pattern(two) == "A or B");
    auto one = mc_question();
    one.choices = {{"A", "Only"}};
    one.gold = {"A"};
    REQUIRE(answer_pattern(one) == "A");
    REQUIRE(answer_pattern(open_question()) == "<your answer>");
}

TEST_CASE("interaction prompt matches the pinned bytes", "[prompting][golden]") {
    auto bundle = build_interaction_prompt(builtin("default"), mc_question());
    REQUIRE(bundle.system_prompt == read_golden("stage1_default.txt"));
    REQUIRE_THAT(bundle.system_prompt, ContainsSubstring("You are mimicking a human."));
    REQUIRE_THAT(bundle.system_prompt,
                 ContainsSubstring("please only ask one sub-question"));
    REQUIRE_THAT(bundle.system_prompt,
                 ContainsSubstring("So, the answer is: A, B, C, or D."));

    REQUIRE(build_interaction_prompt(builtin("Expert"), mc_question()).system_prompt ==
            read_golden("stage1_expert.txt"));
    REQUIRE(build_interaction_prompt(builtin("default"), open_question()).system_prompt ==
            read_golden("stage1_open.txt"));
}

TEST_CASE("interaction prompt construction is pure", "[prompting]") {
    auto a = build_interaction_prompt(builtin("default"), mc_question());
    auto b = build_interaction_prompt(builtin("default"), mc_question());
    REQUIRE(a.system_prompt == b.system_prompt);
    REQUIRE(a.system_prompt ==
            a.role_task + "\n" + a.discussion + "\n\n" + a.question_block);
}

TEST_CASE("personas replace only the role lines", "[prompting]") {
    auto def = build_interaction_prompt(builtin("default"), mc_question());
    for (const auto& [name, persona] : builtin_personas()) {
        auto made = build_interaction_prompt(persona, mc_question());
        if (name != "default") {
            REQUIRE(made.role_task == persona.interaction_role_prompt);
        }
        REQUIRE(made.discussion == def.discussion);
        REQUIRE(made.question_block == def.question_block);
        REQUIRE(made.system_prompt ==
                made.role_task + "\n" + def.discussion + "\n\n" + def.question_block);
    }
}

TEST_CASE("force answer prompt matches the pinned bytes", "[prompting][golden]") {
    REQUIRE(build_force_answer_prompt(mc_question()) == read_golden("force_answer_mc.txt"));
    REQUIRE(build_force_answer_prompt(open_question()) ==
            read_golden("force_answer_open.txt"));
}

TEST_CASE("evaluation prompt matches the pinned bytes", "[prompting][golden]") {
    RunConfig config;
    auto questions = fixture_questions();
    std::vector<Transcript> one{golden_transcript()};

    std::string prompt = build_evaluation_prompt(one, questions, builtin("default"), config);
    REQUIRE(prompt == read_golden("stage2_default.txt"));
    REQUIRE_THAT(prompt, ContainsSubstring("How clear (or fluent) were the responses"));
    REQUIRE_THAT(prompt, ContainsSubstring("How helpful was having access"));

    RunConfig debias = config;
    debias.debias = true;
    std::string debiased =
        build_evaluation_prompt(one, questions, builtin("default"), debias);
    REQUIRE(debiased == read_golden("stage2_debias.txt"));
    REQUIRE_THAT(debiased,
                 Catch::Matchers::StartsWith(
                     "Please act as an impartial and unbiased judge."));
    REQUIRE(debiased.substr(debiased.find('\n') + 1) == prompt);

    REQUIRE(build_evaluation_prompt(one, questions, builtin("Expert"), config) ==
            read_golden("stage2_expert.txt"));

    auto open_t = make_transcript({{"Which author created the planet Arrakis?",
                                    "Frank Herbert created Arrakis in his novel Dune."}},
                                  "Frank Herbert", "g2");
    std::vector<Transcript> both{golden_transcript(), open_t};
    REQUIRE(build_evaluation_prompt(both, questions, builtin("default"), config) ==
            read_golden("stage2_batch.txt"));
}

TEST_CASE("metric definitions honor persona overrides", "[prompting]") {
    REQUIRE(render_metric_definitions(builtin("default")) ==
            std::string(templates::stage2_metrics));

    auto lines = detail::split_lines(render_metric_definitions(builtin("Critical-Thinker")));
    REQUIRE(lines.size() == 3);
    REQUIRE(lines[0] ==
            "Fluency (5-point Likert): How clear (or fluent) were the responses from the AI "
            "Assistant?");
    REQUIRE(lines[1] ==
            "Helpfulness (5-point Likert): " +
                builtin("Critical-Thinker").evaluation_role_prompt);
    REQUIRE(lines[2] ==
            "Helpfulness (free-form): Why did you find the AI Assistant helpful or "
            "unhelpful?");

    Persona bad = builtin("default");
    bad.name = "Broken";
    bad.metric_overrides = {{"accuracy", "not overridable"}};
    REQUIRE_THROWS_AS(render_metric_definitions(bad), ConfigError);
}

TEST_CASE("conversation blocks can hide gold and mark missing answers", "[prompting]") {
    auto questions = fixture_questions();
    auto hidden = render_conversation_blocks({golden_transcript()}, questions, false);
    REQUIRE_THAT(hidden, !ContainsSubstring("Golden Answer"));

    auto unanswered = make_transcript({{"Any hints?", "Not really."}}, "");
    auto blocks = render_conversation_blocks({unanswered}, questions, true);
    REQUIRE_THAT(blocks, ContainsSubstring("User Answer 1: (no answer)"));

    auto stray = golden_transcript();
    stray.question_id = "missing";
    REQUIRE_THROWS_AS(render_conversation_blocks({stray}, questions, true), DataError);
}

TEST_CASE("evaluation prompt rejects an empty transcript list", "[prompting]") {
    RunConfig config;
    auto questions = fixture_questions();
    REQUIRE_THROWS_AS(build_evaluation_prompt({}, questions, builtin("default"), config),
                      ConfigError);
}

TEST_CASE("retry reminder names every metric line", "[prompting]") {
    REQUIRE(retry_reminder() == std::string(templates::stage2_retry_reminder));
    REQUIRE_THAT(retry_reminder(), ContainsSubstring("Fluency (5-point Likert)"));
}

TEST_CASE("shipped template files mirror the embedded defaults", "[prompting]") {
    TemplateSet defaults;
    TemplateSet shipped = TemplateSet::load(TEST_TEMPLATE_DIR);
    REQUIRE(shipped.digest() == defaults.digest());
    REQUIRE(shipped.all() == defaults.all());
}

TEST_CASE("template overrides swap single texts", "[prompting]") {
    TempDir dir;
    write_file(dir / "stage2_role.txt", "You are a strict grader.\n");
    TemplateSet overridden = TemplateSet::load(dir.path().string());
    REQUIRE(overridden.get("stage2_role") == "You are a strict grader.");
    REQUIRE(overridden.get("stage1_role_task") == TemplateSet().get("stage1_role_task"));
    REQUIRE(overridden.digest() != TemplateSet().digest());

    RunConfig config;
    std::string prompt = build_evaluation_prompt({golden_transcript()}, fixture_questions(),
                                                 builtin("default"), config, overridden);
    REQUIRE_THAT(prompt, Catch::Matchers::StartsWith("You are a strict grader.\n\n"));
}

TEST_CASE("template loading surfaces bad paths and ignores strays", "[prompting]") {
    REQUIRE_THROWS_AS(TemplateSet::load("/nonexistent/template/dir"), ConfigError);
    REQUIRE_THROWS_AS(TemplateSet().get("unknown_template"), ConfigError);
    TempDir dir;
    write_file(dir / "not_a_template.txt", "stray\n");
    REQUIRE(TemplateSet::load(dir.path().string()).digest() == TemplateSet().digest());
}

TEST_CASE("template digest is stable and 64 hex chars", "[prompting]") {
    auto d1 = TemplateSet().digest();
    auto d2 = TemplateSet().digest();
    REQUIRE(d1 == d2);
    REQUIRE(d1.size() == 64);
    REQUIRE(d1.find_first_not_of("0123456789abcdef") == std::string::npos);
}
