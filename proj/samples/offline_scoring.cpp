// Meta-evaluation without any model calls: loads human annotations from disk,
// pairs them with previously collected judge scores, and reports how well the
// judge tracks the human panel.
#include "parley/parley.hpp"

#include <iostream>

using namespace parley;

int main(int argc, char** argv) {
    std::string annotations_path = argc > 1 ? argv[1] : "samples/data/annotations.jsonl";
    std::vector<HumanAnnotation> annotations;
    try {
        annotations = load_annotations(annotations_path);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return e.exit_code();
    }

    // Stand-in for evaluations.jsonl from an earlier run; one averaged judge
    // score per (question, model) conversation the humans also rated.
    auto judged = [](std::string ref, double helpfulness, double fluency) {
        EvaluationRecord r;
        r.transcript_ref = std::move(ref);
        r.evaluator_model_id = "judge";
        r.persona_name = "default";
        r.helpfulness = helpfulness;
        r.fluency = fluency;
        r.free_form = "prior run";
        r.valid = true;
        return r;
    };
    std::vector<EvaluationRecord> records = {
        judged("q1|alpha|0", 4.5, 4.2), judged("q2|alpha|0", 3.8, 4.0),
        judged("q3|alpha|0", 4.1, 4.4), judged("q1|beta|0", 2.4, 3.1),
        judged("q2|beta|0", 3.0, 3.3),  judged("q3|beta|0", 2.2, 2.9),
    };

    ReportInputs inputs;
    inputs.human_rows = aggregate_human(annotations);
    inputs.correlation = correlation_report(records, annotations, Granularity::per_question);
    std::cout << render_markdown(inputs);
    return 0;
}
