#pragma once
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "parley/detail/sha256.hpp"
#include "parley/detail/strings.hpp"
#include "parley/domain.hpp"
#include "parley/error.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Requests and responses

struct ChatMessage {
    std::string role;  // "system", "user", "assistant"
    std::string text;
};

inline void to_json(json& j, const ChatMessage& m) {
    j = json{{"role", m.role}, {"text", m.text}};
}

inline void from_json(const json& j, ChatMessage& m) {
    m.role = j.at("role").get<std::string>();
    m.text = j.at("text").get<std::string>();
}

struct ChatRequest {
    std::string model_id;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_response_length = 1024;
    std::optional<std::uint64_t> seed;
};

inline void to_json(json& j, const ChatRequest& r) {
    j = json{{"model_id", r.model_id},
             {"messages", r.messages},
             {"temperature", r.temperature},
             {"max_response_length", r.max_response_length},
             {"seed", r.seed ? json(*r.seed) : json(nullptr)}};
}

inline void from_json(const json& j, ChatRequest& r) {
    r.model_id = j.at("model_id").get<std::string>();
    r.messages = j.at("messages").get<std::vector<ChatMessage>>();
    r.temperature = j.at("temperature").get<double>();
    r.max_response_length = j.at("max_response_length").get<int>();
    r.seed.reset();
    if (j.contains("seed") && !j.at("seed").is_null()) {
        r.seed = j.at("seed").get<std::uint64_t>();
    }
}

inline const ChatRequest& validate(const ChatRequest& r) {
    if (r.model_id.empty()) throw ProviderError("request has empty model_id");
    if (r.messages.empty()) throw ProviderError("request has no messages");
    const std::string& first = r.messages.front().role;
    if (first != "system" && first != "user") {
        throw ProviderError("first message role must be system or user, got " + first);
    }
    for (const auto& m : r.messages) {
        if (m.role != "system" && m.role != "user" && m.role != "assistant") {
            throw ProviderError("unknown message role: " + m.role);
        }
    }
    if (r.temperature < 0) throw ProviderError("temperature must be >= 0");
    return r;
}

enum class FinishReason { complete, truncated, error };

inline std::string to_string(FinishReason f) {
    switch (f) {
        case FinishReason::complete: return "complete";
        case FinishReason::truncated: return "truncated";
        case FinishReason::error: return "error";
    }
    return "error";
}

inline FinishReason finish_reason_from_string(const std::string& s) {
    if (s == "complete") return FinishReason::complete;
    if (s == "truncated") return FinishReason::truncated;
    if (s == "error") return FinishReason::error;
    throw DataError("unknown finish reason: " + s);
}

enum class Provenance { live, cache, mock };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::live: return "live";
        case Provenance::cache: return "cache";
        case Provenance::mock: return "mock";
    }
    return "mock";
}

inline Provenance provenance_from_string(const std::string& s) {
    if (s == "live") return Provenance::live;
    if (s == "cache") return Provenance::cache;
    if (s == "mock") return Provenance::mock;
    throw DataError("unknown provenance: " + s);
}

struct ChatResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::complete;
    Provenance provenance = Provenance::mock;
};

inline void to_json(json& j, const ChatResponse& r) {
    j = json{{"text", r.text},
             {"finish_reason", to_string(r.finish_reason)},
             {"provenance", to_string(r.provenance)}};
}

inline void from_json(const json& j, ChatResponse& r) {
    r.text = j.at("text").get<std::string>();
    r.finish_reason = finish_reason_from_string(j.at("finish_reason").get<std::string>());
    r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
}

// Stable content digest over everything that identifies a request; equal
// requests share a key, any field change produces a new one.
inline std::string cache_key(const ChatRequest& request) {
    return detail::sha256_hex(json(request).dump());
}

// Stable per-call seed derived from a role-level seed and a call-site tag
// (question id, run index, turn number, ...). Makes every request digest
// unique and replayable regardless of scheduling order.
inline std::uint64_t derive_seed(std::uint64_t role_seed, std::string_view tag) {
    return detail::sha256_prefix_u64(std::to_string(role_seed) + "|" + std::string(tag));
}

// ---------------------------------------------------------------------------
// Backends

class Backend {
public:
    virtual ~Backend() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// Answers requests from a fixed script, in order. Serialized internally.
class MockScriptBackend : public Backend {
public:
    explicit MockScriptBackend(std::vector<std::string> script) {
        for (auto& text : script) {
            script_.push_back(ChatResponse{std::move(text), FinishReason::complete,
                                           Provenance::mock});
        }
    }

    explicit MockScriptBackend(std::vector<ChatResponse> script)
        : script_(script.begin(), script.end()) {}

    ChatResponse complete(const ChatRequest& request) override {
        validate(request);
        std::lock_guard<std::mutex> lock(mutex_);
        if (script_.empty()) {
            throw ProviderError("mock script exhausted for model " + request.model_id);
        }
        ChatResponse out = script_.front();
        script_.pop_front();
        return out;
    }

    std::size_t remaining() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return script_.size();
    }

private:
    mutable std::mutex mutex_;
    std::deque<ChatResponse> script_;
};

// Deterministic model stand-in: the response is a pure function of the
// request digest, so concurrent schedules, reruns, and replays all agree.
// Seeker-shaped requests ask a bounded number of sub-questions then answer;
// evaluator-shaped requests emit well-formed metric lines; anything else gets
// a short assistant-style reply.
class SimulatorBackend : public Backend {
public:
    ChatResponse complete(const ChatRequest& request) override {
        validate(request);
        std::string digest = cache_key(request);
        std::uint64_t bits = detail::sha256_prefix_u64(digest);
        const std::string& system = request.messages.front().text;

        // The instruction header survives persona role rewrites, so check the
        // evaluator shape before anything keyed on role wording.
        if (detail::contains_ci(system, "evaluate the above conversations")) {
            return respond(evaluator_output(request, bits));
        }
        if (detail::contains_ci(system, "choose the correct answer to the given question") &&
            detail::contains_ci(system, "Please output \"So, the answer is:") &&
            !detail::contains_ci(system, "sub-question")) {
            return respond(answer_line(system, bits));
        }
        if (detail::contains_ci(system, "mimicking")) {
            int own_queries = 0;
            for (const auto& m : request.messages) {
                if (m.role == "assistant") ++own_queries;
            }
            int target_queries = static_cast<int>(bits % 3);  // 0..2 sub-questions
            if (own_queries >= target_queries) {
                return respond(answer_line(system, bits));
            }
            return respond("Could you explain the key facts behind this question? (ref " +
                           digest.substr(0, 8) + ")");
        }
        return respond("Here is some information that may help (ref " + digest.substr(0, 8) +
                       "). Consider each option against the question carefully.");
    }

private:
    static ChatResponse respond(std::string text) {
        return ChatResponse{std::move(text), FinishReason::complete, Provenance::mock};
    }

    // Reads the option labels out of the question block to pick a letter;
    // open questions get a digest-derived free-text answer.
    static std::string answer_line(const std::string& system, std::uint64_t bits) {
        std::vector<std::string> labels;
        for (const auto& line : detail::split_lines(system)) {
            if (line.size() >= 3 && line[0] >= 'A' && line[0] <= 'Z' && line[1] == '.' &&
                line[2] == ' ') {
                labels.emplace_back(1, line[0]);
            }
        }
        if (labels.empty()) {
            return "So, the answer is: answer " + std::to_string(bits % 100) + ".";
        }
        return "So, the answer is: " + labels[bits % labels.size()] + ".";
    }

    // One metric block per conversation in the prompt (counted by its
    // numbered "User Answer n:" lines; at least one block).
    static std::string evaluator_output(const ChatRequest& request, std::uint64_t bits) {
        int blocks = 0;
        for (const auto& m : request.messages) {
            for (const auto& line : detail::split_lines(m.text)) {
                if (detail::starts_with(line, "User Answer ")) ++blocks;
            }
        }
        if (blocks == 0) blocks = 1;
        std::string out;
        for (int b = 0; b < blocks; ++b) {
            std::uint64_t h = bits >> (b % 8);
            if (b) out += "\n";
            out += "Fluency (5-point Likert): " + std::to_string(1 + (h >> 3) % 5) + "\n";
            out += "Helpfulness (5-point Likert): " + std::to_string(1 + (h >> 9) % 5) + "\n";
            out += "Helpfulness (free-form): The assistant's replies were " +
                   std::string((h >> 15) % 2 ? "generally relevant" : "only partly relevant") +
                   " to the question.";
        }
        return out;
    }
};

// One fixture entry: the request digest, the request itself, the response.
struct FixtureEntry {
    std::string digest;
    ChatRequest request;
    ChatResponse response;
};

inline void to_json(json& j, const FixtureEntry& e) {
    j = json{{"digest", e.digest}, {"request", e.request}, {"response", e.response}};
}

inline void from_json(const json& j, FixtureEntry& e) {
    e.digest = j.at("digest").get<std::string>();
    e.request = j.at("request").get<ChatRequest>();
    e.response = j.at("response").get<ChatResponse>();
}

// Replays a recorded session: requests are matched by digest first, then (in
// non-strict mode) by script position among the not-yet-consumed entries.
class ReplayBackend : public Backend {
public:
    explicit ReplayBackend(const std::string& fixture_path, bool strict = true)
        : strict_(strict) {
        std::ifstream in(fixture_path);
        if (!in) throw ProviderError("cannot read fixture: " + fixture_path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::trim(line).empty()) continue;
            try {
                entries_.push_back(json::parse(line).get<FixtureEntry>());
            } catch (const std::exception& e) {
                throw ProviderError("fixture " + fixture_path + " line " +
                                    std::to_string(line_no) + ": " + e.what());
            }
            consumed_.push_back(false);
        }
    }

    ChatResponse complete(const ChatRequest& request) override {
        validate(request);
        std::string digest = cache_key(request);
        std::lock_guard<std::mutex> lock(mutex_);
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (!consumed_[i] && entries_[i].digest == digest) {
                consumed_[i] = true;
                return entries_[i].response;
            }
        }
        if (strict_) {
            throw ProviderError("no recorded response for request digest " + digest);
        }
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (!consumed_[i]) {
                consumed_[i] = true;
                return entries_[i].response;
            }
        }
        throw ProviderError("replay fixture exhausted (request digest " + digest + ")");
    }

private:
    bool strict_;
    std::mutex mutex_;
    std::vector<FixtureEntry> entries_;
    std::vector<bool> consumed_;
};

// Wraps a backend and appends every (request, response) pair to a fixture
// file that ReplayBackend can later serve.
class RecordingBackend : public Backend {
public:
    RecordingBackend(std::shared_ptr<Backend> inner, const std::string& fixture_path)
        : inner_(std::move(inner)) {
        auto parent = std::filesystem::path(fixture_path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        out_.open(fixture_path, std::ios::app);
        if (!out_) throw ProviderError("cannot open fixture for append: " + fixture_path);
    }

    ChatResponse complete(const ChatRequest& request) override {
        ChatResponse response = inner_->complete(request);
        FixtureEntry entry{cache_key(request), request, response};
        std::lock_guard<std::mutex> lock(mutex_);
        out_ << json(entry).dump() << "\n";
        out_.flush();
        return response;
    }

private:
    std::shared_ptr<Backend> inner_;
    std::mutex mutex_;
    std::ofstream out_;
};

// Content-addressed response cache: one file per request digest plus a
// manifest index. A hit re-checks the stored request's digest so a corrupted
// or foreign entry can never be served.
class CacheBackend : public Backend {
public:
    CacheBackend(std::shared_ptr<Backend> inner, const std::string& cache_dir)
        : inner_(std::move(inner)), dir_(cache_dir) {
        std::filesystem::create_directories(dir_);
    }

    ChatResponse complete(const ChatRequest& request) override {
        validate(request);
        std::string digest = cache_key(request);
        auto path = dir_ / (digest + ".json");
        if (std::filesystem::exists(path)) {
            std::ifstream in(path);
            if (in) {
                try {
                    auto entry = json::parse(in).get<FixtureEntry>();
                    if (entry.digest != digest || cache_key(entry.request) != digest) {
                        throw ProviderError("cache entry digest mismatch at " + path.string());
                    }
                    ChatResponse out = entry.response;
                    out.provenance = Provenance::cache;
                    return out;
                } catch (const json::exception& e) {
                    throw ProviderError("corrupt cache entry at " + path.string() + ": " +
                                        e.what());
                }
            }
        }
        ChatResponse response = inner_->complete(request);
        write_entry(path, FixtureEntry{digest, request, response});
        return response;
    }

private:
    void write_entry(const std::filesystem::path& path, const FixtureEntry& entry) {
        auto tmp = path;
        tmp += ".tmp." + std::to_string(
                             std::hash<std::thread::id>{}(std::this_thread::get_id()));
        {
            std::ofstream out(tmp);
            out << json(entry).dump() << "\n";
        }
        std::filesystem::rename(tmp, path);
        std::lock_guard<std::mutex> lock(mutex_);
        std::ofstream manifest(dir_ / "manifest.jsonl", std::ios::app);
        manifest << json{{"digest", entry.digest}}.dump() << "\n";
    }

    std::shared_ptr<Backend> inner_;
    std::filesystem::path dir_;
    std::mutex mutex_;
};

}  // namespace parley

#include "parley/detail/http_backend.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Provider hub

namespace detail {

// Counting semaphore on a condition variable; caps in-flight requests.
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(int limit) : available_(limit) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return available_ > 0; });
        --available_;
    }

    void release() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            ++available_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int available_;
};

class GateGuard {
public:
    explicit GateGuard(ConcurrencyGate& gate) : gate_(gate) { gate_.acquire(); }
    ~GateGuard() { gate_.release(); }
    GateGuard(const GateGuard&) = delete;
    GateGuard& operator=(const GateGuard&) = delete;

private:
    ConcurrencyGate& gate_;
};

}  // namespace detail

// Routes requests to registered model backends, enforcing the per-backend
// concurrency ceiling, the retry policy, and an optional total request
// budget. Thread-safe after registration.
class ProviderHub {
public:
    explicit ProviderHub(RetryPolicy retry = RetryPolicy{}, int max_concurrency = 4)
        : retry_(retry), max_concurrency_(max_concurrency) {
        sleep_fn_ = [](double seconds) {
            std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
        };
    }

    void register_model(const std::string& model_id, std::shared_ptr<Backend> backend) {
        if (!backend) throw ConfigError("null backend for model " + model_id);
        backends_[model_id] = backend;
        if (!gates_.count(backend.get())) {
            gates_[backend.get()] = std::make_unique<detail::ConcurrencyGate>(max_concurrency_);
        }
    }

    bool has_model(const std::string& model_id) const { return backends_.count(model_id) > 0; }

    void set_request_budget(std::optional<int> budget) { budget_ = budget; }
    int requests_made() const { return used_.load(); }

    // Test seam: replaces the real sleep between retry attempts.
    void set_sleep_fn(std::function<void(double)> fn) { sleep_fn_ = std::move(fn); }

    ChatResponse complete(const ChatRequest& request) {
        validate(request);
        auto it = backends_.find(request.model_id);
        if (it == backends_.end()) {
            throw ProviderError("unknown model: " + request.model_id);
        }
        if (budget_) {
            int prior = used_.fetch_add(1);
            if (prior >= *budget_) {
                used_.fetch_sub(1);
                throw ProviderError("request budget exhausted (" + std::to_string(*budget_) +
                                    ")");
            }
        } else {
            used_.fetch_add(1);
        }
        detail::GateGuard guard(*gates_.at(it->second.get()));
        double delay = retry_.base_delay_s;
        for (int attempt = 1;; ++attempt) {
            try {
                return it->second->complete(request);
            } catch (const ProviderError& e) {
                if (!e.retryable() || attempt >= retry_.attempts) throw;
                double sleep_for = delay;
                if (retry_.jitter) {
                    std::uint64_t h = detail::sha256_prefix_u64(cache_key(request) + "#" +
                                                                std::to_string(attempt));
                    sleep_for *= 0.5 + 0.5 * (double(h % 1000) / 1000.0);
                }
                sleep_fn_(sleep_for);
                delay *= retry_.factor;
            }
        }
    }

private:
    std::map<std::string, std::shared_ptr<Backend>> backends_;
    std::map<Backend*, std::unique_ptr<detail::ConcurrencyGate>> gates_;
    RetryPolicy retry_;
    int max_concurrency_;
    std::optional<int> budget_;
    std::atomic<int> used_{0};
    std::function<void(double)> sleep_fn_;
};

// Builds the hub described by config.endpoints. Each model id gets its
// backend kind: "simulator", "replay" (strict), "record" (simulator inside
// unless base_url set), or "http"; a nonempty config.cache_dir wraps live
// backends in the response cache.
inline std::shared_ptr<ProviderHub> build_provider_hub(const RunConfig& config) {
    auto hub_ptr = std::make_shared<ProviderHub>(config.retry, config.max_concurrency);
    ProviderHub& hub = *hub_ptr;
    hub.set_request_budget(config.request_budget);
    std::vector<std::string> models;
    models.push_back(config.seeker_model);
    models.insert(models.end(), config.assistant_models.begin(), config.assistant_models.end());
    models.insert(models.end(), config.evaluator_models.begin(), config.evaluator_models.end());
    std::map<std::string, std::shared_ptr<Backend>> by_fixture;
    for (const auto& model : models) {
        if (model.empty() || hub.has_model(model)) continue;
        ModelEndpoint endpoint;  // default: simulator
        auto it = config.endpoints.find(model);
        if (it != config.endpoints.end()) endpoint = it->second;
        std::shared_ptr<Backend> backend;
        if (endpoint.backend == "simulator" || endpoint.backend.empty()) {
            backend = std::make_shared<SimulatorBackend>();
        } else if (endpoint.backend == "replay") {
            if (endpoint.fixture_path.empty()) {
                throw ConfigError("model " + model + ": replay backend needs fixture_path");
            }
            auto& shared = by_fixture["replay:" + endpoint.fixture_path];
            if (!shared) shared = std::make_shared<ReplayBackend>(endpoint.fixture_path);
            backend = shared;
        } else if (endpoint.backend == "record") {
            if (endpoint.fixture_path.empty()) {
                throw ConfigError("model " + model + ": record backend needs fixture_path");
            }
            auto& shared = by_fixture["record:" + endpoint.fixture_path];
            if (!shared) {
                std::shared_ptr<Backend> inner;
                if (!endpoint.base_url.empty()) {
                    inner = std::make_shared<HttpBackend>(endpoint);
                } else {
                    inner = std::make_shared<SimulatorBackend>();
                }
                shared = std::make_shared<RecordingBackend>(inner, endpoint.fixture_path);
            }
            backend = shared;
        } else if (endpoint.backend == "http") {
            if (endpoint.base_url.empty()) {
                throw ConfigError("model " + model + ": http backend needs base_url");
            }
            backend = std::make_shared<HttpBackend>(endpoint);
        } else {
            throw ConfigError("model " + model + ": unknown backend kind '" + endpoint.backend +
                              "'");
        }
        if (!config.cache_dir.empty() &&
            (endpoint.backend == "http" || endpoint.backend == "record")) {
            backend = std::make_shared<CacheBackend>(backend, config.cache_dir);
        }
        hub.register_model(model, backend);
    }
    return hub_ptr;
}

}  // namespace parley
