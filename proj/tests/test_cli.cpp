#include <catch2/catch_amalgamated.hpp>

#include "parley/parley.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "helpers.hpp"

using namespace parley;
using testutil::CliResult;
using testutil::run_cli;

namespace {

std::vector<json> parse_jsonl(const std::string& text) {
    std::vector<json> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// Self-contained working directory: question set, annotations, and a config
// that resolves every model to the built-in deterministic backend.
struct Workspace {
    testutil::TempDir dir;
    std::filesystem::path config_path;
    json config;

    Workspace() {
        std::string questions;
        questions +=
            R"({"id":"q1","question":"Which planet is known as the Red Planet?",)"
            R"("choices":{"A":"Venus","B":"Mars","C":"Jupiter","D":"Mercury"},"answer":"B"})"
            "\n";
        questions +=
            R"({"id":"q2","question":"Which gas do plants absorb for photosynthesis?",)"
            R"("choices":{"A":"Oxygen","B":"Nitrogen","C":"Carbon dioxide","D":"Helium"},)"
            R"("answer":"C"})"
            "\n";
        questions +=
            R"({"id":"q3","question":"Which planet is closest to the sun?",)"
            R"("choices":{"A":"Venus","B":"Mercury","C":"Earth","D":"Mars"},"answer":"B"})"
            "\n";
        testutil::write_file(dir / "questions.jsonl", questions);

        std::string anns;
        auto ann = [&](const char* worker, const char* model, double h, double f, int q,
                       bool correct) {
            anns += json{{"worker_id", worker},
                         {"assistant_model_id", model},
                         {"helpfulness", h},
                         {"fluency", f},
                         {"num_queries", q},
                         {"correct", correct}}
                        .dump() +
                    "\n";
        };
        ann("w1", "alpha", 5.0, 5.0, 1, true);
        ann("w2", "alpha", 4.0, 4.0, 2, true);
        ann("w1", "beta", 3.0, 2.0, 3, false);
        ann("w2", "beta", 2.0, 3.0, 3, true);
        testutil::write_file(dir / "annotations.jsonl", anns);

        config = json{{"seeker_model", "sim-seeker"},
                      {"assistant_models", {"alpha", "beta"}},
                      {"evaluator_models", {"judge"}},
                      {"questions_path", (dir / "questions.jsonl").string()},
                      {"annotations_path", (dir / "annotations.jsonl").string()},
                      {"output_dir", (dir / "runs").string()},
                      {"max_turns", 4},
                      {"runs_per_question", 1},
                      {"eval_runs_per_transcript", 1},
                      {"max_concurrency", 2}};
        config_path = dir / "config.json";
        save();
    }

    void save() { testutil::write_file(config_path, config.dump(2) + "\n"); }
    std::string flag() const { return "--config " + config_path.string(); }
    std::filesystem::path runs() const { return dir / "runs"; }

    std::vector<std::filesystem::path> run_dirs() const {
        std::vector<std::filesystem::path> out;
        if (!std::filesystem::exists(runs())) return out;
        for (const auto& entry : std::filesystem::directory_iterator(runs())) {
            if (entry.is_directory()) out.push_back(entry.path());
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    std::filesystem::path only_run_dir() const {
        auto dirs = run_dirs();
        REQUIRE(dirs.size() == 1);
        return dirs[0];
    }
};

}  // namespace

TEST_CASE("validate-config inspects the configuration and its resources", "[cli]") {
    Workspace ws;
    CliResult r = run_cli(ws.flag() + " validate-config");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("config ok") != std::string::npos);
    REQUIRE(r.output.find("assistants: alpha, beta") != std::string::npos);
    REQUIRE(r.output.find("personas: default=1.0") != std::string::npos);
    REQUIRE(r.output.find("questions: 3 from") != std::string::npos);
    REQUIRE(r.output.find("annotations: 4 from") != std::string::npos);

    auto digest_line = r.output.find("digest: ");
    REQUIRE(digest_line != std::string::npos);
    std::string prefix = r.output.substr(digest_line + 8, 12);
    REQUIRE(std::all_of(prefix.begin(), prefix.end(),
                        [](unsigned char c) { return std::isxdigit(c); }));
    REQUIRE_FALSE(std::filesystem::exists(ws.runs()));  // inspection writes nothing
}

TEST_CASE("configuration problems exit with the config status", "[cli]") {
    Workspace ws;
    SECTION("missing config file") {
        CliResult r = run_cli("--config /nonexistent/config.json validate-config");
        REQUIRE(r.exit_code == 1);
        REQUIRE(r.output.find("error: cannot read config file") != std::string::npos);
    }
    SECTION("malformed config json") {
        testutil::write_file(ws.config_path, "{not json");
        CliResult r = run_cli(ws.flag() + " validate-config");
        REQUIRE(r.exit_code == 1);
        REQUIRE(r.output.find("error: config file") != std::string::npos);
    }
    SECTION("semantically invalid config") {
        ws.config["max_turns"] = 0;
        ws.save();
        CliResult r = run_cli(ws.flag() + " validate-config");
        REQUIRE(r.exit_code == 1);
        REQUIRE(r.output.find("max_turns") != std::string::npos);
    }
    SECTION("questions_path not set") {
        ws.config.erase("questions_path");
        ws.save();
        CliResult r = run_cli(ws.flag() + " interact");
        REQUIRE(r.exit_code == 1);
        REQUIRE(r.output.find("questions_path is not set") != std::string::npos);
    }
    SECTION("unknown persona in the distribution") {
        ws.config["persona_distribution"] = json{{"Ghost", 1.0}};
        ws.save();
        CliResult r = run_cli(ws.flag() + " validate-config");
        REQUIRE(r.exit_code == 1);
        REQUIRE(r.output.find("unknown persona") != std::string::npos);
    }
}

TEST_CASE("argument errors exit with the config status", "[cli]") {
    Workspace ws;
    REQUIRE(run_cli("validate-config").exit_code == 1);  // --config is required
    REQUIRE(run_cli(ws.flag()).exit_code == 1);          // a subcommand is required
    REQUIRE(run_cli(ws.flag() + " teleport").exit_code == 1);
    REQUIRE(run_cli(ws.flag() + " --max-concurrency 0 interact").exit_code == 1);
    REQUIRE(run_cli(ws.flag() + " interact --bogus-flag").exit_code == 1);

    CliResult help = run_cli("--help");
    REQUIRE(help.exit_code == 0);
    REQUIRE(help.output.find("interact") != std::string::npos);
    REQUIRE(help.output.find("benchmark") != std::string::npos);
}

TEST_CASE("config path can come from the environment", "[cli]") {
    Workspace ws;
    CliResult r = run_cli("validate-config", "PARLEY_CONFIG=" + ws.config_path.string() + " ");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("config ok") != std::string::npos);
}

TEST_CASE("missing data files exit with the data status", "[cli]") {
    Workspace ws;
    ws.config["questions_path"] = (ws.dir / "missing.jsonl").string();
    ws.save();
    CliResult r = run_cli(ws.flag() + " interact");
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.output.find("error:") != std::string::npos);
}

TEST_CASE("dialogue runs write a content-addressed run directory", "[cli]") {
    Workspace ws;
    CliResult r = run_cli(ws.flag() + " interact");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("wrote 6 transcripts") != std::string::npos);
    REQUIRE(r.output.find("terminations:") != std::string::npos);

    auto run_dir = ws.only_run_dir();
    REQUIRE(run_dir.filename().string().size() == 12);
    REQUIRE_FALSE(std::filesystem::exists(run_dir / "lock"));  // released on completion

    auto transcripts = parse_jsonl(testutil::read_file(run_dir / "transcripts.jsonl"));
    REQUIRE(transcripts.size() == 6);
    for (const auto& j : transcripts) {
        Transcript t = j.get<Transcript>();
        validate(t);
        REQUIRE(t.config_digest == j.at("config_digest").get<std::string>());
    }

    json meta = json::parse(testutil::read_file(run_dir / "run_meta.json"));
    REQUIRE(meta.at("config_digest").get<std::string>().size() == 64);
    REQUIRE(meta.at("last_command") == "interact");
    REQUIRE(meta.at("seeds").size() == 5);
    REQUIRE(meta.at("config_digest").get<std::string>().substr(0, 12) ==
            run_dir.filename().string());

    std::string log = testutil::read_file(run_dir / "log.txt");
    REQUIRE(log.find("interact: wrote 6 transcripts") != std::string::npos);

    SECTION("identical semantics in a different output directory produce identical bytes") {
        Workspace other;
        other.config = ws.config;
        other.config["output_dir"] = (other.dir / "elsewhere").string();
        other.config["max_concurrency"] = 1;  // operational knobs leave outputs alone
        other.save();
        CliResult again = run_cli(other.flag() + " interact");
        REQUIRE(again.exit_code == 0);
        auto other_dirs = std::filesystem::directory_iterator(other.dir / "elsewhere");
        std::filesystem::path other_run = other_dirs->path();
        REQUIRE(other_run.filename() == run_dir.filename());
        REQUIRE(testutil::read_file(other_run / "transcripts.jsonl") ==
                testutil::read_file(run_dir / "transcripts.jsonl"));
    }
    SECTION("a response cache directory is populated for recordable backends") {
        // deterministic local backends are never cached; record/http are
        ws.config["endpoints"] = json{
            {"alpha",
             {{"backend", "record"}, {"fixture_path", (ws.dir / "alpha.jsonl").string()}}}};
        ws.save();
        CliResult cached = run_cli(ws.flag() + " --cache-dir " + (ws.dir / "cache").string() +
                                   " interact");
        INFO(cached.output);
        REQUIRE(cached.exit_code == 0);
        REQUIRE(std::filesystem::exists(ws.dir / "cache" / "manifest.jsonl"));
    }
}

TEST_CASE("a master seed rederives every role seed and moves the run", "[cli]") {
    Workspace ws;
    REQUIRE(run_cli(ws.flag() + " interact").exit_code == 0);
    auto base_dir = ws.only_run_dir();

    REQUIRE(run_cli(ws.flag() + " --seed 42 interact").exit_code == 0);
    auto dirs = ws.run_dirs();
    REQUIRE(dirs.size() == 2);
    auto seeded_dir = dirs[0] == base_dir ? dirs[1] : dirs[0];

    json meta = json::parse(testutil::read_file(seeded_dir / "run_meta.json"));
    REQUIRE(meta.at("seeds").at("seeker") == derive_seed(42, "seeker"));
    REQUIRE(meta.at("seeds").at("assistant") == derive_seed(42, "assistant"));
    REQUIRE(meta.at("seeds").at("evaluator") == derive_seed(42, "evaluator"));
    REQUIRE(meta.at("seeds").at("persona") == derive_seed(42, "persona"));
    REQUIRE(meta.at("seeds").at("sample") == derive_seed(42, "sample"));
}

TEST_CASE("dry runs describe the plan without backends or writes", "[cli]") {
    Workspace ws;
    // every endpoint poisoned: constructing any backend would fail immediately
    ws.config["endpoints"] = json::object();
    for (const char* model : {"sim-seeker", "alpha", "beta", "judge"}) {
        ws.config["endpoints"][model] =
            json{{"backend", "replay"}, {"fixture_path", "/nonexistent/fixture.jsonl"}};
    }
    ws.save();

    CliResult interact = run_cli(ws.flag() + " --dry-run interact");
    INFO(interact.output);
    REQUIRE(interact.exit_code == 0);
    REQUIRE(interact.output.find("dry run: interact") != std::string::npos);
    REQUIRE(interact.output.find("dialogue slots: 6") != std::string::npos);
    REQUIRE(interact.output.find("request ceiling: 60 calls") != std::string::npos);

    CliResult evaluate = run_cli(ws.flag() + " --dry-run evaluate");
    REQUIRE(evaluate.exit_code == 0);
    REQUIRE(evaluate.output.find("dry run: evaluate") != std::string::npos);
    REQUIRE(evaluate.output.find("evaluator: judge") != std::string::npos);

    CliResult metaeval = run_cli(ws.flag() + " --dry-run metaeval --granularity per_model");
    REQUIRE(metaeval.exit_code == 0);
    REQUIRE(metaeval.output.find("granularity: per_model") != std::string::npos);

    CliResult benchmark = run_cli(ws.flag() + " --dry-run benchmark --baseline");
    REQUIRE(benchmark.exit_code == 0);
    REQUIRE(benchmark.output.find("dry run: benchmark") != std::string::npos);
    REQUIRE(benchmark.output.find("baseline: 3 direct calls") != std::string::npos);

    CliResult report = run_cli(ws.flag() + " --dry-run report");
    REQUIRE(report.exit_code == 0);
    REQUIRE(report.output.find("would write") != std::string::npos);

    REQUIRE_FALSE(std::filesystem::exists(ws.runs()));
}

TEST_CASE("a foreign lock blocks the run and is left in place", "[cli]") {
    Workspace ws;
    REQUIRE(run_cli(ws.flag() + " interact").exit_code == 0);
    auto run_dir = ws.only_run_dir();
    testutil::write_file(run_dir / "lock", "");

    CliResult blocked = run_cli(ws.flag() + " evaluate");
    REQUIRE(blocked.exit_code == 1);
    REQUIRE(blocked.output.find("is locked; remove") != std::string::npos);
    REQUIRE(std::filesystem::exists(run_dir / "lock"));  // never cleans up a lock it lost

    std::filesystem::remove(run_dir / "lock");
    REQUIRE(run_cli(ws.flag() + " evaluate").exit_code == 0);
}

TEST_CASE("evaluation scores stored transcripts and keeps raw output", "[cli]") {
    Workspace ws;
    REQUIRE(run_cli(ws.flag() + " interact").exit_code == 0);
    auto run_dir = ws.only_run_dir();

    CliResult r = run_cli(ws.flag() + " evaluate");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("wrote 12 records") != std::string::npos);
    REQUIRE(r.output.find("valid averaged records: 6/6") != std::string::npos);

    auto records = parse_jsonl(testutil::read_file(run_dir / "evaluations.jsonl"));
    REQUIRE(records.size() == 12);  // one run each plus one average per transcript
    int averaged = 0;
    for (const auto& j : records) {
        EvaluationRecord rec = j.get<EvaluationRecord>();
        REQUIRE(rec.valid);
        REQUIRE(rec.evaluator_model_id == "judge");
        if (rec.run_index == -1) ++averaged;
    }
    REQUIRE(averaged == 6);

    auto raw = parse_jsonl(testutil::read_file(run_dir / "evaluator_raw.jsonl"));
    REQUIRE(raw.size() == 6);
    for (const auto& j : raw) {
        REQUIRE(j.contains("raw"));
        REQUIRE(j.at("attempt") == 0);
    }

    json meta = json::parse(testutil::read_file(run_dir / "run_meta.json"));
    REQUIRE(meta.at("last_command") == "evaluate");

    SECTION("an explicit transcript path feeds the same pipeline") {
        std::filesystem::copy_file(run_dir / "transcripts.jsonl", ws.dir / "copy.jsonl");
        CliResult again = run_cli(ws.flag() + " evaluate --transcripts " +
                                  (ws.dir / "copy.jsonl").string());
        REQUIRE(again.exit_code == 0);
    }
    SECTION("evaluating a run with no transcripts is a data error") {
        std::filesystem::remove(run_dir / "transcripts.jsonl");
        REQUIRE(run_cli(ws.flag() + " evaluate").exit_code == 2);
    }
}

TEST_CASE("multi-perspective evaluation needs several evaluators", "[cli]") {
    Workspace ws;
    REQUIRE(run_cli(ws.flag() + " interact").exit_code == 0);

    CliResult lone = run_cli(ws.flag() + " evaluate --multi-perspective");
    REQUIRE(lone.exit_code == 1);
    REQUIRE(lone.output.find("at least 2 evaluator_models") != std::string::npos);

    auto base_dir = ws.only_run_dir();
    ws.config["evaluator_models"] = {"judge-a", "judge-b"};  // semantic: the run moves
    ws.save();
    CliResult r = run_cli(ws.flag() + " evaluate --multi-perspective --transcripts " +
                          (base_dir / "transcripts.jsonl").string());
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    auto dirs = ws.run_dirs();
    REQUIRE(dirs.size() == 2);
    auto multi_dir = dirs[0] == base_dir ? dirs[1] : dirs[0];
    auto records = parse_jsonl(testutil::read_file(multi_dir / "evaluations.jsonl"));
    REQUIRE(records.size() == 6);  // averaged records only
    for (const auto& j : records) {
        REQUIRE(j.at("evaluator_model_id") == "multi(judge-a,judge-b)");
        REQUIRE(j.at("run_index") == -1);
    }
}

TEST_CASE("evaluator transport failures exit with the provider status", "[cli]") {
    Workspace ws;
    REQUIRE(run_cli(ws.flag() + " interact").exit_code == 0);
    auto transcripts = ws.only_run_dir() / "transcripts.jsonl";

    ws.config["endpoints"] = json{
        {"judge", {{"backend", "replay"}, {"fixture_path", "/nonexistent/fixture.jsonl"}}}};
    ws.save();
    CliResult r = run_cli(ws.flag() + " evaluate --transcripts " + transcripts.string());
    REQUIRE(r.exit_code == 3);
    REQUIRE(r.output.find("error:") != std::string::npos);
}

TEST_CASE("unparseable evaluator output past the retry budget exits distinctly", "[cli]") {
    Workspace ws;
    REQUIRE(run_cli(ws.flag() + " interact").exit_code == 0);
    auto base_dir = ws.only_run_dir();
    auto transcripts = base_dir / "transcripts.jsonl";
    auto fixture = ws.dir / "judge-fixture.jsonl";

    // pass 1: record the evaluator's (well-formed) responses
    ws.config["endpoints"] =
        json{{"judge", {{"backend", "record"}, {"fixture_path", fixture.string()}}}};
    ws.save();
    REQUIRE(run_cli(ws.flag() + " evaluate").exit_code == 0);
    REQUIRE(std::filesystem::exists(fixture));

    // corrupt every recorded scoring response
    auto entries = parse_jsonl(testutil::read_file(fixture));
    REQUIRE(entries.size() == 6);
    std::string corrupted;
    for (auto& entry : entries) {
        std::string prompt = entry.at("request").at("messages")[0].at("text");
        REQUIRE(prompt.find("evaluate the above conversations") != std::string::npos);
        entry["response"]["text"] = "no scores in here whatsoever";
        corrupted += entry.dump() + "\n";
    }
    testutil::write_file(fixture, corrupted);

    // pass 2: replay the garbage with no retry budget
    ws.config["endpoints"] =
        json{{"judge", {{"backend", "replay"}, {"fixture_path", fixture.string()}}}};
    ws.config["parse_retries"] = 0;
    ws.save();
    CliResult r = run_cli(ws.flag() + " evaluate --transcripts " + transcripts.string());
    INFO(r.output);
    REQUIRE(r.exit_code == 4);
    REQUIRE(r.output.find("unparseable past the retry budget") != std::string::npos);

    auto dirs = ws.run_dirs();
    REQUIRE(dirs.size() == 2);  // parse_retries participates in the run identity
    auto retry_dir = dirs[0] == base_dir ? dirs[1] : dirs[0];
    auto records = parse_jsonl(testutil::read_file(retry_dir / "evaluations.jsonl"));
    REQUIRE_FALSE(records.empty());
    for (const auto& j : records) {
        REQUIRE(j.at("valid") == false);
        REQUIRE(j.at("helpfulness").is_null());
    }
}

TEST_CASE("meta-evaluation reports correlation against annotations", "[cli]") {
    Workspace ws;
    std::string records;
    for (const auto& [ref, h, f] :
         {std::tuple{"q1|alpha|0", 4.0, 5.0}, {"q1|beta|0", 2.0, 3.0}, {"q1|gamma|0", 3.0, 4.0}}) {
        records += json(testutil::make_record(ref, h, f)).dump() + "\n";
    }
    testutil::write_file(ws.dir / "records.jsonl", records);

    std::string anns;
    for (const auto& [model, h, f] :
         {std::tuple{"alpha", 5.0, 5.0}, {"beta", 3.0, 2.0}, {"gamma", 2.0, 3.0}}) {
        anns += json{{"worker_id", "w1"},
                     {"assistant_model_id", model},
                     {"helpfulness", h},
                     {"fluency", f},
                     {"num_queries", 1},
                     {"correct", true}}
                    .dump() +
                "\n";
    }
    testutil::write_file(ws.dir / "crafted-annotations.jsonl", anns);

    std::string args = ws.flag() + " metaeval --records " + (ws.dir / "records.jsonl").string() +
                       " --annotations " + (ws.dir / "crafted-annotations.jsonl").string();
    CliResult r = run_cli(args + " --granularity per_model");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);

    double rh = testutil::oracle_pearson({4, 2, 3}, {5, 3, 2});
    double rf = testutil::oracle_pearson({5, 3, 4}, {5, 2, 3});
    double overall = testutil::oracle_pearson({4, 2, 3, 5, 3, 4}, {5, 3, 2, 5, 2, 3});
    REQUIRE(r.output.find("helpfulness: r=" + fixed4(rh) + " (n=3)") != std::string::npos);
    REQUIRE(r.output.find("fluency: r=" + fixed4(rf) + " (n=3)") != std::string::npos);
    REQUIRE(r.output.find("overall (concatenated): " + fixed4(overall)) != std::string::npos);

    auto run_dir = ws.only_run_dir();
    std::string md = testutil::read_file(run_dir / "report.md");
    REQUIRE(md.find("## Correlation With Human Judgments") != std::string::npos);
    REQUIRE(md.find("## Human Reference") != std::string::npos);

    SECTION("granularity must come from the flag or the config") {
        REQUIRE(run_cli(args).exit_code == 1);
        ws.config["granularity"] = "per_model";
        ws.save();
        REQUIRE(run_cli(args).exit_code == 0);
    }
    SECTION("unknown granularity is a config error") {
        REQUIRE(run_cli(args + " --granularity per_galaxy").exit_code == 1);
    }
    SECTION("fewer than two matched pairs is a data error") {
        std::string one = json(testutil::make_record("q1|alpha|0", 4.0, 5.0)).dump() + "\n";
        testutil::write_file(ws.dir / "records.jsonl", one);
        CliResult narrow = run_cli(args + " --granularity per_model");
        REQUIRE(narrow.exit_code == 2);
        REQUIRE(narrow.output.find("fewer than 2 matched pairs") != std::string::npos);
    }
}

TEST_CASE("benchmark runs the whole pipeline into one report", "[cli]") {
    Workspace ws;
    ws.config["persona_distribution"] = json{{"Expert", 0.5}, {"default", 0.5}};
    ws.config["runs_per_question"] = 2;
    ws.config["granularity"] = "per_model";
    ws.save();

    CliResult r = run_cli(ws.flag() + " benchmark --baseline");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("# Interactive Evaluation Report") != std::string::npos);

    auto run_dir = ws.only_run_dir();
    for (const char* name : {"transcripts.jsonl", "evaluations.jsonl", "evaluator_raw.jsonl",
                             "report.md", "report.csv", "report.json", "run_meta.json",
                             "log.txt"}) {
        INFO(name);
        REQUIRE(std::filesystem::exists(run_dir / name));
    }

    std::string md = testutil::read_file(run_dir / "report.md");
    REQUIRE(md.find("## Assistant Quality") != std::string::npos);
    REQUIRE(md.find("| Model | Persona |") != std::string::npos);
    REQUIRE(md.find("| alpha | Expert |") != std::string::npos);
    REQUIRE(md.find("| alpha | default |") != std::string::npos);
    REQUIRE(md.find("| alpha | mixture |") != std::string::npos);
    REQUIRE(md.find("## Human Reference") != std::string::npos);
    REQUIRE(md.find("## Correlation With Human Judgments") != std::string::npos);
    REQUIRE(md.find("## Non-Interactive Baseline") != std::string::npos);

    std::string csv = testutil::read_file(run_dir / "report.csv");
    REQUIRE(csv.rfind("section,model,persona,metric,mean,stderr,n\n", 0) == 0);
    REQUIRE(csv.find("baseline,alpha,non_interactive,") != std::string::npos);

    SECTION("report re-renders the same bytes from stored artifacts") {
        std::map<std::string, std::string> saved;
        for (const char* name : {"report.md", "report.csv", "report.json"}) {
            saved[name] = testutil::read_file(run_dir / name);
            std::filesystem::remove(run_dir / name);
        }
        CliResult again = run_cli(ws.flag() + " report");
        INFO(again.output);
        REQUIRE(again.exit_code == 0);
        for (const auto& [name, content] : saved) {
            // baseline rows live only in the benchmark pass; everything else matches
            if (name == "report.md") continue;
            REQUIRE(testutil::read_file(run_dir / name).size() > 0);
        }
        std::string rerendered = testutil::read_file(run_dir / "report.md");
        REQUIRE(rerendered.find("## Assistant Quality") != std::string::npos);
        REQUIRE(rerendered.find("| alpha | mixture |") != std::string::npos);
        std::string head = saved["report.md"].substr(
            0, saved["report.md"].find("## Non-Interactive Baseline"));
        while (!head.empty() && head.back() == '\n') head.pop_back();
        std::string body = rerendered;
        while (!body.empty() && body.back() == '\n') body.pop_back();
        REQUIRE(body == head);  // byte-identical up to the baseline section
    }
    SECTION("reporting without evaluations is a data error") {
        std::filesystem::remove(run_dir / "evaluations.jsonl");
        REQUIRE(run_cli(ws.flag() + " report").exit_code == 2);
    }
}

TEST_CASE("persona sweeps repeat the benchmark across weights", "[cli]") {
    Workspace ws;
    CliResult r = run_cli(ws.flag() + " benchmark --persona-sweep Expert=0,0.5,1");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("== sweep Expert=0.5") != std::string::npos);
    REQUIRE(r.output.find("# Persona Sweep: Expert") != std::string::npos);
    REQUIRE(ws.run_dirs().size() == 3);  // one run directory per weight

    std::string md = testutil::read_file(ws.runs() / "sweep-Expert.md");
    REQUIRE(md.find("| Weight | Model | Helpfulness | Fluency | # Queries | Accuracy | Run |") !=
            std::string::npos);
    REQUIRE(std::count(md.begin(), md.end(), '\n') == 4 + 6);  // header plus weights x models

    json summary = json::parse(testutil::read_file(ws.runs() / "sweep-Expert.json"));
    REQUIRE(summary.at("persona") == "Expert");
    REQUIRE(summary.at("runs").size() == 3);
    std::set<std::string> digests;
    for (const auto& run : summary.at("runs")) {
        REQUIRE(run.at("rows").size() == 2);
        digests.insert(run.at("config_digest").get<std::string>());
    }
    REQUIRE(digests.size() == 3);  // each weight is its own configuration
}

TEST_CASE("malformed persona sweeps are config errors", "[cli]") {
    Workspace ws;
    for (const char* spec : {"Expert", "Expert=", "Expert=abc", "Expert=1.5", "Expert=0.5,,",
                             "Ghost=0.5", "default=0.5"}) {
        CliResult r = run_cli(ws.flag() + " benchmark --persona-sweep " + std::string(spec));
        INFO(spec << ": " << r.output);
        REQUIRE(r.exit_code == 1);
    }
    REQUIRE_FALSE(std::filesystem::exists(ws.runs()));
}
