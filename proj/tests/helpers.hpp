#pragma once
// Shared fixtures and utilities for the test suite and the acceptance runner.

#include <sys/wait.h>

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "parley/parley.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Deterministic 64-bit generator for property tests (splitmix64 update step).
struct Rng {
    std::uint64_t state;
    explicit Rng(std::uint64_t seed) : state(seed) {}
    std::uint64_t next() {
        state += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    // Uniform in [0, n).
    std::uint64_t below(std::uint64_t n) { return next() % n; }
    // Uniform-ish double in [lo, hi].
    double real(double lo, double hi) {
        double unit = static_cast<double>(next() >> 11) * 0x1.0p-53;
        return lo + unit * (hi - lo);
    }
};

inline parley::Question mc_question(std::string id = "g1") {
    parley::Question q;
    q.id = std::move(id);
    q.body = "Which planet is known as the Red Planet?";
    q.choices = {{"A", "Venus"}, {"B", "Mars"}, {"C", "Jupiter"}, {"D", "Mercury"}};
    q.gold = {"B"};
    q.dataset = parley::DatasetTag::mmlu;
    return q;
}

inline parley::Question open_question(std::string id = "g2") {
    parley::Question q;
    q.id = std::move(id);
    q.body = "Who wrote the novel Dune?";
    q.gold = {"Frank Herbert"};
    q.dataset = parley::DatasetTag::nq;
    return q;
}

// Builds a valid transcript from (seeker, assistant) exchange pairs.
inline parley::Transcript make_transcript(
    const std::vector<std::pair<std::string, std::string>>& exchanges,
    std::string final_answer = "B", std::string question_id = "g1",
    std::string assistant_model = "alpha", int run_index = 0,
    std::string persona = "default") {
    parley::Transcript t;
    t.question_id = std::move(question_id);
    t.seeker_model_id = "sim";
    t.assistant_model_id = std::move(assistant_model);
    t.persona_name = std::move(persona);
    t.run_index = run_index;
    int idx = 0;
    for (const auto& [ask, reply] : exchanges) {
        t.turns.push_back({idx++, parley::Speaker::seeker, ask});
        t.turns.push_back({idx++, parley::Speaker::assistant, reply});
    }
    t.num_queries = static_cast<int>(exchanges.size());
    if (final_answer.empty()) {
        t.termination = parley::Termination::unanswered;
    } else {
        t.final_answer = std::move(final_answer);
        t.termination = parley::Termination::answered;
    }
    return t;
}

inline parley::Transcript golden_transcript() {
    return make_transcript({{"Is Mars known as the Red Planet?",
                             "Yes. Mars is commonly called the Red Planet because iron oxide "
                             "colors its surface."}});
}

inline parley::EvaluationRecord make_record(std::string ref, double helpfulness,
                                            double fluency, int run_index = 0,
                                            std::string evaluator = "judge",
                                            std::string persona = "default") {
    parley::EvaluationRecord r;
    r.transcript_ref = std::move(ref);
    r.evaluator_model_id = std::move(evaluator);
    r.persona_name = std::move(persona);
    r.run_index = run_index;
    r.helpfulness = helpfulness;
    r.fluency = fluency;
    r.free_form = "ok";
    r.valid = true;
    return r;
}

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        auto base = fs::temp_directory_path();
        path_ = base / ("parley-test-" + std::to_string(::getpid()) + "-" +
                        std::to_string(counter.fetch_add(1)));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    fs::path path_;
};

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

// Golden files carry one editor-appended trailing newline that is not part of
// the expected bytes.
inline std::string read_golden(const std::string& name) {
    std::string text = read_file(fs::path(TEST_GOLDEN_DIR) / name);
    if (!text.empty() && text.back() == '\n') text.pop_back();
    return text;
}

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

// Runs the command line tool with the given arguments, capturing output.
// `env_prefix` may hold VAR=value assignments prepended to the command.
inline CliResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    std::string cmd = env_prefix + (env_prefix.empty() ? "" : " ") + PARLEY_BIN + " " + args +
                      " 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed for: " + cmd);
    CliResult result;
    char buf[4096];
    size_t got = 0;
    while ((got = ::fread(buf, 1, sizeof(buf), pipe)) > 0) {
        result.output.append(buf, got);
    }
    int status = ::pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

inline std::string json_line(const parley::json& j) { return j.dump() + "\n"; }

// Definitional correlation oracle in extended precision, written from the
// raw-moment formula so it shares no code with the implementation under test.
inline double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    long double n = static_cast<long double>(x.size());
    long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        long double a = x[i], b = y[i];
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    long double num = n * sxy - sx * sy;
    long double den = sqrtl(n * sxx - sx * sx) * sqrtl(n * syy - sy * sy);
    return static_cast<double>(num / den);
}

}  // namespace testutil
