#pragma once
#include <cctype>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "parley/detail/sha256.hpp"
#include "parley/detail/strings.hpp"
#include "parley/domain.hpp"
#include "parley/error.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Manifests

struct DatasetManifest {
    std::string path;
    std::string format;  // multichoice_jsonl | openqa_jsonl | annotations_jsonl
    int count = 0;       // lines successfully parsed
    std::string digest;  // hex digest over the raw file bytes
};

inline void to_json(json& j, const DatasetManifest& m) {
    j = json{{"path", m.path}, {"format", m.format}, {"count", m.count}, {"digest", m.digest}};
}

inline void from_json(const json& j, DatasetManifest& m) {
    m.path = j.at("path").get<std::string>();
    m.format = j.at("format").get<std::string>();
    m.count = j.at("count").get<int>();
    m.digest = j.at("digest").get<std::string>();
}

inline std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return detail::sha256_hex(buf.str());
}

// ---------------------------------------------------------------------------
// Loading

namespace detail {

inline Question question_from_dataset_line(const json& j, const std::string& format) {
    Question q;
    q.id = j.at("id").get<std::string>();
    q.body = j.at("question").get<std::string>();
    q.dataset = dataset_tag_from_string(j.value("dataset", "custom"));
    if (j.contains("metadata")) {
        q.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    }
    if (format == "multichoice_jsonl") {
        for (const auto& [label, text] : j.at("choices").items()) {
            q.choices.emplace_back(label, text.get<std::string>());
        }
        q.gold = {j.at("answer").get<std::string>()};
    } else if (format == "openqa_jsonl") {
        q.gold = j.at("answers").get<std::vector<std::string>>();
    } else {
        throw DataError("unknown question format: " + format);
    }
    return q;
}

template <typename T, typename ParseLine>
std::vector<T> load_jsonl_validated(const std::string& path, bool lenient,
                                    const ParseLine& parse_line, DatasetManifest* manifest) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read file: " + path);
    std::vector<T> out;
    std::vector<std::string> errors;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(parse_line(json::parse(line)));
        } catch (const std::exception& e) {
            errors.push_back(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!errors.empty() && !lenient) {
        std::string report = std::to_string(errors.size()) + " malformed line(s):";
        for (const auto& e : errors) report += "\n  " + e;
        throw DataError(report);
    }
    if (manifest) {
        manifest->path = path;
        manifest->count = static_cast<int>(out.size());
        manifest->digest = file_digest(path);
    }
    return out;
}

}  // namespace detail

// Loads and validates a question file. Every line must parse into a valid
// Question unless lenient is set; duplicate ids always fail the load.
inline std::vector<Question> load_questions(const std::string& path, const std::string& format,
                                            bool lenient = false,
                                            DatasetManifest* manifest = nullptr) {
    auto questions = detail::load_jsonl_validated<Question>(
        path, lenient,
        [&](const json& j) {
            Question q = detail::question_from_dataset_line(j, format);
            validate(q);
            return q;
        },
        manifest);
    std::set<std::string> seen;
    for (const auto& q : questions) {
        if (!seen.insert(q.id).second) {
            throw DataError(path + ": duplicate question id " + q.id);
        }
    }
    if (manifest) manifest->format = format;
    return questions;
}

// Loads and validates a human-annotation file (normalized schema, one
// annotation object per line).
inline std::vector<HumanAnnotation> load_annotations(const std::string& path,
                                                     bool lenient = false,
                                                     DatasetManifest* manifest = nullptr) {
    auto annotations = detail::load_jsonl_validated<HumanAnnotation>(
        path, lenient,
        [](const json& j) {
            HumanAnnotation a = j.get<HumanAnnotation>();
            validate(a);
            return a;
        },
        manifest);
    if (manifest) manifest->format = "annotations_jsonl";
    return annotations;
}

// Deterministic subsample of n questions (seeded index selection, original
// file order preserved). n >= size returns everything.
inline std::vector<Question> sample_questions(const std::vector<Question>& questions, int n,
                                              std::uint64_t seed) {
    if (n < 0) throw ConfigError("sample size must be >= 0");
    if (n >= static_cast<int>(questions.size())) return questions;
    std::vector<std::size_t> indices(questions.size());
    std::iota(indices.begin(), indices.end(), std::size_t(0));
    std::mt19937_64 rng(seed);
    for (int i = 0; i < n; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng() % (indices.size() - i));
        std::swap(indices[static_cast<std::size_t>(i)], indices[j]);
    }
    indices.resize(static_cast<std::size_t>(n));
    std::sort(indices.begin(), indices.end());
    std::vector<Question> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(questions[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

// Serialized single-writer JSON-Lines appender; one flushed line per value.
class JsonlWriter {
public:
    explicit JsonlWriter(const std::string& path) {
        auto parent = std::filesystem::path(path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        out_.open(path, std::ios::trunc);
        if (!out_) throw DataError("cannot write file: " + path);
    }

    void write(const json& value) {
        out_ << value.dump() << "\n";
        out_.flush();
    }

    template <typename T>
    void write_value(const T& value) {
        write(json(value));
    }

private:
    std::ofstream out_;
};

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& values) {
    JsonlWriter writer(path);
    for (const auto& v : values) writer.write_value(v);
}

template <typename T>
std::vector<T> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read file: " + path);
    std::vector<T> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line).get<T>());
        } catch (const std::exception& e) {
            throw DataError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sentence counting

// Abbreviation tokens whose trailing period does not end a sentence. The
// same list ships as data/abbreviations.txt (one lowercase token per line,
// inner dots kept, trailing dot omitted).
inline const std::set<std::string>& default_abbreviations() {
    static const std::set<std::string> abbrevs{"al",  "approx", "dr",  "e.g", "etc", "fig",
                                              "i.e", "mr",     "mrs", "ms",  "no",  "prof",
                                              "st",  "vs"};
    return abbrevs;
}

inline std::set<std::string> load_abbreviations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read abbreviation list: " + path);
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto token = detail::to_lower(detail::trim(line));
        if (!token.empty() && token[0] != '#') out.insert(token);
    }
    return out;
}

// Counts maximal nonempty segments terminated by '.', '!', '?' or
// end-of-text. A '.' does not terminate when it sits between two digits
// (decimal), is directly followed by an alphanumeric character (intra-token
// dot), or closes a listed abbreviation. Consecutive terminators do not
// produce empty sentences.
inline int sentence_count(const std::string& text,
                          const std::set<std::string>& abbreviations = default_abbreviations()) {
    auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    auto is_alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    auto is_token_char = [](char c) {
        return std::isalpha(static_cast<unsigned char>(c)) != 0 || c == '.';
    };

    int count = 0;
    bool has_content = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '!' || c == '?') {
            if (has_content) ++count;
            has_content = false;
            continue;
        }
        if (c == '.') {
            bool decimal = i > 0 && i + 1 < text.size() && is_digit(text[i - 1]) &&
                           is_digit(text[i + 1]);
            bool intra_token = i + 1 < text.size() && is_alnum(text[i + 1]);
            if (decimal || intra_token) {
                has_content = true;
                continue;
            }
            std::size_t j = i;
            while (j > 0 && is_token_char(text[j - 1])) --j;
            std::string token = detail::to_lower(text.substr(j, i - j));
            while (!token.empty() && token.back() == '.') token.pop_back();
            if (!token.empty() && abbreviations.count(token)) {
                has_content = true;
                continue;
            }
            if (has_content) ++count;
            has_content = false;
            continue;
        }
        if (!std::isspace(static_cast<unsigned char>(c))) has_content = true;
    }
    if (has_content) ++count;
    return count;
}

}  // namespace parley
