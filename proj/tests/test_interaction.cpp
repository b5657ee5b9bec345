#include <catch2/catch_amalgamated.hpp>

#include <mutex>

#include "answer_cases.hpp"
#include "helpers.hpp"

using namespace parley;
using Catch::Matchers::ContainsSubstring;
using testutil::mc_question;
using testutil::open_question;

namespace {

// Forwards to an inner backend while keeping a copy of every request.
class CapturingBackend : public Backend {
public:
    explicit CapturingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}
    ChatResponse complete(const ChatRequest& request) override {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            requests.push_back(request);
        }
        return inner_->complete(request);
    }
    std::vector<ChatRequest> requests;

private:
    std::shared_ptr<Backend> inner_;
    std::mutex mutex_;
};

struct Rig {
    ProviderHub hub{RetryPolicy{1, 0.0, 1.0, false}, 1};
    std::shared_ptr<CapturingBackend> seeker;
    std::shared_ptr<CapturingBackend> assistant;

    Rig(std::vector<std::string> seeker_script, std::vector<std::string> assistant_script) {
        seeker = std::make_shared<CapturingBackend>(
            std::make_shared<MockScriptBackend>(std::move(seeker_script)));
        assistant = std::make_shared<CapturingBackend>(
            std::make_shared<MockScriptBackend>(std::move(assistant_script)));
        hub.register_model("seek", seeker);
        hub.register_model("assist", assistant);
    }

    Transcript run(const Question& question, const RunConfig& config, int run_index = 0) {
        return run_interaction(question, "seek", "assist",
                               builtin_personas().at("default"), config, hub, TemplateSet(),
                               run_index);
    }
};

RunConfig small_config(int max_turns = 10) {
    RunConfig config;
    config.seeker_model = "seek";
    config.assistant_models = {"assist"};
    config.max_turns = max_turns;
    config.runs_per_question = 1;
    config.max_concurrency = 1;
    return config;
}

}  // namespace

TEST_CASE("answer extraction handles the full fixture table", "[interaction]") {
    auto cases = testutil::answer_cases();
    REQUIRE(cases.size() >= 20);
    for (const auto& c : cases) {
        INFO(c.label << ": " << c.text);
        auto got = detect_final_answer(c.text, c.question);
        REQUIRE(got == c.expected);
    }
}

TEST_CASE("one exchange then an answer stores two turns", "[interaction]") {
    Rig rig({"Could you give me a hint about the planets?", "So, the answer is: B"},
            {"Mars is often called red."});
    auto t = rig.run(mc_question(), small_config());
    REQUIRE(t.turns.size() == 2);
    REQUIRE(t.num_queries == 1);
    REQUIRE(t.termination == Termination::answered);
    REQUIRE(t.final_answer == "B");
    REQUIRE(t.turns[0].speaker == Speaker::seeker);
    REQUIRE(t.turns[0].text == "Could you give me a hint about the planets?");
    REQUIRE(t.turns[1].speaker == Speaker::assistant);
    // The answering message is not stored as a turn.
    REQUIRE(t.turns[1].text == "Mars is often called red.");
    REQUIRE(t.config_digest == config_digest(small_config()));
}

TEST_CASE("an immediate answer needs no assistant call", "[interaction]") {
    Rig rig({"So, the answer is: D"}, {});
    auto t = rig.run(mc_question(), small_config());
    REQUIRE(t.turns.empty());
    REQUIRE(t.num_queries == 0);
    REQUIRE(t.termination == Termination::answered);
    REQUIRE(t.final_answer == "D");
    REQUIRE(rig.assistant->requests.empty());
    REQUIRE(rig.seeker->requests.size() == 1);
}

TEST_CASE("the turn limit forces one final answer attempt", "[interaction]") {
    Rig rig({"What is a planet?", "Why is Mars red?", "Still unsure, tell me more",
             "So, the answer is: A"},
            {"A planet orbits a star.", "Iron oxide."});
    auto t = rig.run(mc_question(), small_config(2));
    REQUIRE(t.termination == Termination::turn_limit_forced);
    REQUIRE(t.final_answer == "A");
    REQUIRE(t.num_queries == 2);
    REQUIRE(t.turns.size() == 4);
    REQUIRE(rig.seeker->requests.size() == 4);    // max_turns + 2
    REQUIRE(rig.assistant->requests.size() == 2); // max_turns
    // The forced call swaps in the force-answer system prompt.
    REQUIRE(rig.seeker->requests.back().messages[0].text ==
            build_force_answer_prompt(mc_question()));
}

TEST_CASE("an unanswerable run ends unanswered with a diagnostic", "[interaction]") {
    Rig rig({"What is a planet?", "Why is Mars red?", "Hmm", "I still do not know"},
            {"A planet orbits a star.", "Iron oxide."});
    auto t = rig.run(mc_question(), small_config(2));
    REQUIRE(t.termination == Termination::unanswered);
    REQUIRE_FALSE(t.final_answer.has_value());
    REQUIRE(t.diagnostic == "no answer extracted after turn limit");
    REQUIRE(t.num_queries == 2);
}

TEST_CASE("an empty seeker message aborts the loop", "[interaction]") {
    Rig rig({"   "}, {});
    auto t = rig.run(mc_question(), small_config());
    REQUIRE(t.termination == Termination::unanswered);
    REQUIRE(t.diagnostic == "seeker returned an empty message");
    REQUIRE(t.turns.empty());
}

TEST_CASE("an empty assistant reply is a provider failure", "[interaction]") {
    Rig rig({"What is a planet?"}, {"  "});
    REQUIRE_THROWS_WITH(rig.run(mc_question(), small_config()),
                        ContainsSubstring("empty reply"));
}

TEST_CASE("the seeker sees its own queries as assistant turns", "[interaction]") {
    Rig rig({"First question?", "Second question?", "So, the answer is: C"},
            {"Reply one.", "Reply two."});
    auto t = rig.run(mc_question(), small_config());
    REQUIRE(t.num_queries == 2);
    REQUIRE(rig.seeker->requests.size() == 3);

    const auto& first = rig.seeker->requests[0];
    REQUIRE(first.messages.size() == 1);
    REQUIRE(first.messages[0].role == "system");
    REQUIRE(first.messages[0].text ==
            build_interaction_prompt(builtin_personas().at("default"), mc_question())
                .system_prompt);

    const auto& third = rig.seeker->requests[2];
    REQUIRE(third.messages.size() == 5);
    REQUIRE(third.messages[1].role == "assistant");
    REQUIRE(third.messages[1].text == "First question?");
    REQUIRE(third.messages[2].role == "user");
    REQUIRE(third.messages[2].text == "Reply one.");
    REQUIRE(third.messages[3].role == "assistant");
    REQUIRE(third.messages[4].role == "user");
}

TEST_CASE("immediate-only context sends single-message assistant requests", "[interaction]") {
    Rig rig({"First question?", "Second question?", "So, the answer is: C"},
            {"Reply one.", "Reply two."});
    rig.run(mc_question(), small_config());
    REQUIRE(rig.assistant->requests.size() == 2);
    for (const auto& req : rig.assistant->requests) {
        REQUIRE(req.messages.size() == 1);
        REQUIRE(req.messages[0].role == "user");
    }
    REQUIRE(rig.assistant->requests[1].messages[0].text == "Second question?");
}

TEST_CASE("full-history context accumulates the dialogue", "[interaction]") {
    auto config = small_config();
    config.assistant_context = AssistantContext::full_history;
    Rig rig({"First question?", "Second question?", "So, the answer is: C"},
            {"Reply one.", "Reply two."});
    rig.run(mc_question(), config);
    REQUIRE(rig.assistant->requests.size() == 2);
    REQUIRE(rig.assistant->requests[0].messages.size() == 1);
    const auto& second = rig.assistant->requests[1];
    REQUIRE(second.messages.size() == 3);
    REQUIRE(second.messages[0].role == "user");
    REQUIRE(second.messages[0].text == "First question?");
    REQUIRE(second.messages[1].role == "assistant");
    REQUIRE(second.messages[1].text == "Reply one.");
    REQUIRE(second.messages[2].role == "user");
    REQUIRE(second.messages[2].text == "Second question?");
}

TEST_CASE("per-call seeds differ across calls and runs", "[interaction]") {
    auto run_once = [&](int run_index) {
        Rig rig({"First question?", "So, the answer is: B"}, {"Reply."});
        rig.run(mc_question(), small_config(), run_index);
        std::vector<std::uint64_t> seeds;
        for (const auto& req : rig.seeker->requests) seeds.push_back(*req.seed);
        seeds.push_back(*rig.assistant->requests[0].seed);
        return seeds;
    };
    auto a = run_once(0);
    auto b = run_once(0);
    auto c = run_once(1);
    REQUIRE(a == b);                 // deterministic
    REQUIRE(a[0] != a[1]);           // per-call tags
    REQUIRE(a != c);                 // run index feeds the tag
}

TEST_CASE("sampling parameters flow through per role", "[interaction]") {
    auto config = small_config();
    config.seeker_sampling = SamplingParams{0.9, 256, 5};
    config.assistant_sampling = SamplingParams{0.1, 128, 6};
    Rig rig({"First question?", "So, the answer is: B"}, {"Reply."});
    rig.run(mc_question(), config);
    REQUIRE(rig.seeker->requests[0].temperature == 0.9);
    REQUIRE(rig.seeker->requests[0].max_response_length == 256);
    REQUIRE(rig.assistant->requests[0].temperature == 0.1);
    REQUIRE(rig.assistant->requests[0].max_response_length == 128);
}

TEST_CASE("personas swap the seeker system prompt", "[interaction]") {
    Rig rig({"So, the answer is: B"}, {});
    auto config = small_config();
    auto t = run_interaction(mc_question(), "seek", "assist",
                             builtin_personas().at("Expert"), config, rig.hub);
    REQUIRE(t.persona_name == "Expert");
    REQUIRE_THAT(rig.seeker->requests[0].messages[0].text,
                 Catch::Matchers::StartsWith(
                     builtin_personas().at("Expert").interaction_role_prompt));
}

TEST_CASE("open questions flow through the loop", "[interaction]") {
    Rig rig({"Who created Arrakis?", "So, the answer is: Frank Herbert."},
            {"The author of Dune."});
    auto t = rig.run(open_question(), small_config());
    REQUIRE(t.termination == Termination::answered);
    REQUIRE(t.final_answer == "Frank Herbert");
}

TEST_CASE("batches preserve canonical slot order", "[interaction]") {
    auto config = small_config();
    config.assistant_models = {"alpha", "beta"};
    config.runs_per_question = 2;
    config.seeker_model = "seek";
    config.max_concurrency = 4;
    auto hub = build_provider_hub(config);
    std::vector<Question> questions{mc_question("q1"), mc_question("q2")};

    auto out = run_batch(questions, config, PersonaRegistry(), *hub);
    REQUIRE(out.size() == 8);
    int i = 0;
    for (const auto& model : {"alpha", "beta"}) {
        for (const auto& qid : {"q1", "q2"}) {
            for (int run = 0; run < 2; ++run, ++i) {
                REQUIRE(out[i].assistant_model_id == model);
                REQUIRE(out[i].question_id == qid);
                REQUIRE(out[i].run_index == run);
                REQUIRE(out[i].persona_name == "default");
            }
        }
    }
}

TEST_CASE("batch output is independent of concurrency", "[interaction]") {
    auto config = small_config();
    config.assistant_models = {"alpha"};
    config.runs_per_question = 2;
    std::vector<Question> questions{mc_question("q1"), mc_question("q2"),
                                    mc_question("q3")};

    auto run_with = [&](int workers) {
        auto c = config;
        c.max_concurrency = workers;
        auto hub = build_provider_hub(c);
        return json(run_batch(questions, c, PersonaRegistry(), *hub));
    };
    REQUIRE(run_with(1) == run_with(8));
}

TEST_CASE("batch personas follow the distribution schedule", "[interaction]") {
    auto config = small_config();
    config.persona_distribution = {{"Expert", 0.5}, {"default", 0.5}};
    config.runs_per_question = 2;
    auto hub = build_provider_hub(config);
    std::vector<Question> questions;
    for (int i = 0; i < 5; ++i) questions.push_back(mc_question("q" + std::to_string(i)));

    auto out = run_batch(questions, config, PersonaRegistry(), *hub);
    std::map<std::string, int> counts;
    for (const auto& t : out) ++counts[t.persona_name];
    REQUIRE(counts.at("Expert") == 5);
    REQUIRE(counts.at("default") == 5);

    auto assignment = PersonaAssignment::build(
        PersonaDistribution::from_config(config, PersonaRegistry()), 5, 2);
    for (const auto& t : out) {
        int q = t.question_id[1] - '0';
        REQUIRE(t.persona_name == assignment.at(q, t.run_index));
    }
}

TEST_CASE("a failing slot becomes a diagnostic transcript", "[interaction]") {
    auto config = small_config();
    config.assistant_models = {"alpha", "bad"};
    ProviderHub hub(RetryPolicy{1, 0.0, 1.0, false}, 1);
    hub.register_model("seek",
                       std::make_shared<MockScriptBackend>(std::vector<std::string>{
                           "Q one?", "So, the answer is: A", "Q two?", "So, the answer is: B",
                           "Q three?", "Q four?"}));
    hub.register_model("alpha", std::make_shared<MockScriptBackend>(
                                    std::vector<std::string>{"Reply.", "Reply."}));
    hub.register_model("bad",
                       std::make_shared<MockScriptBackend>(std::vector<std::string>{}));
    std::vector<Question> questions{mc_question("q1"), mc_question("q2")};

    auto out = run_batch(questions, config, PersonaRegistry(), hub);
    REQUIRE(out.size() == 4);
    REQUIRE(out[0].termination == Termination::answered);
    REQUIRE(out[1].termination == Termination::answered);
    for (int i : {2, 3}) {
        REQUIRE(out[i].assistant_model_id == "bad");
        REQUIRE(out[i].termination == Termination::unanswered);
        REQUIRE_THAT(out[i].diagnostic, ContainsSubstring("mock script exhausted"));
        REQUIRE(out[i].config_digest == config_digest(config));
    }
}

TEST_CASE("batches reject empty model lists and validate questions", "[interaction]") {
    auto config = small_config();
    config.assistant_models = {};
    auto hub = build_provider_hub(small_config());
    REQUIRE_THROWS_AS(run_batch({mc_question()}, config, PersonaRegistry(), *hub),
                      ConfigError);

    auto bad = mc_question();
    bad.gold = {"Z"};
    REQUIRE_THROWS_AS(run_batch({bad}, small_config(), PersonaRegistry(), *hub), DataError);
    REQUIRE(run_batch({}, small_config(), PersonaRegistry(), *hub).empty());
}

TEST_CASE("simulated interactions keep every transcript invariant", "[interaction][property]") {
    testutil::Rng rng(4242);
    for (int iter = 0; iter < 60; ++iter) {
        auto config = small_config(1 + static_cast<int>(rng.below(3)));
        Question q = mc_question("q" + std::to_string(iter));
        int n_choices = 2 + static_cast<int>(rng.below(4));
        q.choices.clear();
        for (int c = 0; c < n_choices; ++c) {
            q.choices.push_back({std::string(1, static_cast<char>('A' + c)),
                                 "option " + std::to_string(c)});
        }
        q.gold = {q.choices[rng.below(n_choices)].first};

        ProviderHub hub(RetryPolicy{1, 0.0, 1.0, false}, 1);
        auto seeker = std::make_shared<CapturingBackend>(std::make_shared<SimulatorBackend>());
        auto assistant =
            std::make_shared<CapturingBackend>(std::make_shared<SimulatorBackend>());
        hub.register_model("seek", seeker);
        hub.register_model("assist", assistant);

        auto t = run_interaction(q, "seek", "assist", builtin_personas().at("default"),
                                 config, hub, TemplateSet(), static_cast<int>(rng.below(3)));
        REQUIRE_NOTHROW(validate(t));
        REQUIRE(static_cast<int>(assistant->requests.size()) <= config.max_turns);
        REQUIRE(static_cast<int>(seeker->requests.size()) <= config.max_turns + 2);
        for (const auto& req : assistant->requests) {
            REQUIRE(req.messages.size() == 1);
        }
        if (t.termination != Termination::unanswered && q.multi_choice()) {
            auto labels = q.labels();
            REQUIRE(std::find(labels.begin(), labels.end(), *t.final_answer) !=
                    labels.end());
        }
    }
}
