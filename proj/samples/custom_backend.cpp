// Plugs a hand-written assistant into the dialogue loop. The backend answers
// from a fixed rulebook, which is the shape any real integration takes: accept
// a ChatRequest, return a ChatResponse.
#include "parley/parley.hpp"

#include <iostream>

using namespace parley;

namespace {

// Answers multiple-choice sub-questions by keyword lookup; everything else
// gets a polite shrug. Deliberately imperfect so transcripts show follow-ups.
class RulebookAssistant final : public Backend {
public:
    ChatResponse complete(const ChatRequest& request) override {
        const std::string& ask = request.messages.back().text;
        std::string reply = "I am not certain about that one.";
        if (ask.find("key facts") != std::string::npos ||
            ask.find("Red Planet") != std::string::npos) {
            reply = "Mars is called the Red Planet because iron oxide colors its surface.";
        } else if (ask.find("confident") != std::string::npos) {
            reply = "Fairly confident: the red surface color points to Mars.";
        }
        return ChatResponse{reply, FinishReason::complete, Provenance::live};
    }
};

}  // namespace

int main() {
    Question q;
    q.id = "demo";
    q.body = "Which planet is known as the Red Planet?";
    q.choices = {{"A", "Venus"}, {"B", "Mars"}, {"C", "Jupiter"}, {"D", "Mercury"}};
    q.gold = {"B"};
    q.dataset = DatasetTag::mmlu;

    RunConfig config;
    config.max_turns = 4;

    ProviderHub hub;
    hub.register_model("seeker", std::make_shared<SimulatorBackend>());
    hub.register_model("rulebook", std::make_shared<RulebookAssistant>());

    const Persona& persona = builtin_personas().at("Expert");
    Transcript t = run_interaction(q, "seeker", "rulebook", persona, config, hub);

    for (const auto& turn : t.turns) {
        std::cout << (turn.speaker == Speaker::seeker ? "seeker:    " : "assistant: ")
                  << turn.text << "\n";
    }
    std::cout << "final answer: " << t.final_answer.value_or("(none)") << "\n"
              << "termination:  " << to_string(t.termination) << "\n"
              << "queries used: " << t.num_queries << "\n"
              << "correct:      " << (answer_is_correct(t, q) ? "yes" : "no") << "\n";
    return 0;
}
