#pragma once
// Judge calls: verdict parsing, retry policy, the verdict store and the
// batch runner. Transports are pluggable (HTTP, mock, scripted).

#include "coteval/corpus.hpp"
#include "coteval/hashing.hpp"
#include "coteval/rubric.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

namespace coteval {

struct JudgeEndpoint {
    std::string model_id;
    std::string label;
    std::string base_url;
    std::string auth_env;
    double timeout_seconds = 120.0;
    int max_parse_retries = 3;
    nlohmann::json params = nlohmann::json{{"temperature", 0}};  // merged into the request body
};

enum class VerdictStatus { Scored, Missing, TransportFailed };

inline std::string_view to_string(VerdictStatus s) {
    switch (s) {
        case VerdictStatus::Scored: return "scored";
        case VerdictStatus::Missing: return "missing";
        case VerdictStatus::TransportFailed: return "transport_failed";
    }
    return "unknown";
}

struct JudgeVerdict {
    std::string sample_id;
    std::string dim_id;
    std::string model_label;
    VerdictStatus status = VerdictStatus::Scored;
    int score = 0;  // 1-5 when status == Scored
    std::string rationale;
    int attempts = 0;
    std::string prompt_hash;
    std::string timestamp;
    std::string error;  // last failure cause, empty on a clean first-try score

    bool scored() const { return status == VerdictStatus::Scored; }
    bool resolved() const { return status != VerdictStatus::TransportFailed; }
};

// ---------------------------------------------------------------------------
// Parsing

enum class ParseErrorKind { NoJsonObject, ScoreOutOfRange, ScoreNotInteger, MissingKey };

inline std::string_view to_string(ParseErrorKind k) {
    switch (k) {
        case ParseErrorKind::NoJsonObject: return "no_json_object";
        case ParseErrorKind::ScoreOutOfRange: return "score_out_of_range";
        case ParseErrorKind::ScoreNotInteger: return "score_not_integer";
        case ParseErrorKind::MissingKey: return "missing_key";
    }
    return "unknown";
}

class VerdictParseError : public std::runtime_error {
public:
    VerdictParseError(ParseErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ParseErrorKind kind() const { return kind_; }

private:
    ParseErrorKind kind_;
};

struct ParsedVerdict {
    int score = 0;
    std::string rationale;
};

/// First well-formed JSON object embedded in `text`, scanning each '{' in turn.
inline std::optional<nlohmann::json> first_json_object(std::string_view text) {
    for (auto start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            char c = text[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '{') ++depth;
            else if (c == '}' && --depth == 0) {
                auto candidate = nlohmann::json::parse(text.substr(start, i - start + 1), nullptr, false);
                if (!candidate.is_discarded() && candidate.is_object()) return candidate;
                break;
            }
        }
    }
    return std::nullopt;
}

/// Extracts {"score": 1-5, "rationale": "..."} from raw model output.
inline ParsedVerdict parse_verdict(std::string_view text) {
    auto obj = first_json_object(text);
    if (!obj) throw VerdictParseError(ParseErrorKind::NoJsonObject, "no well-formed JSON object in output");
    auto score = obj->find("score");
    if (score == obj->end()) throw VerdictParseError(ParseErrorKind::MissingKey, "missing key 'score'");
    auto rationale = obj->find("rationale");
    if (rationale == obj->end() || !rationale->is_string())
        throw VerdictParseError(ParseErrorKind::MissingKey, "missing string key 'rationale'");
    if (!score->is_number_integer())
        throw VerdictParseError(ParseErrorKind::ScoreNotInteger, "score is not an integer: " + score->dump());
    auto value = score->get<long long>();
    if (value < 1 || value > 5)
        throw VerdictParseError(ParseErrorKind::ScoreOutOfRange, "score " + std::to_string(value) + " outside 1-5");
    return {static_cast<int>(value), rationale->get<std::string>()};
}

// ---------------------------------------------------------------------------
// Transport

/// Network, auth or timeout failure; retried under the transport policy.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Transport retries exhausted for one call.
class TransportExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A judge backend. Implementations must tolerate concurrent calls.
class JudgeTransport {
public:
    virtual ~JudgeTransport() = default;
    virtual std::string complete(const JudgeEndpoint& endpoint, std::string_view prompt) = 0;
};

/// Refuses to forward any prompt containing a blocklisted term.
class BlindGuard final : public JudgeTransport {
public:
    BlindGuard(JudgeTransport& inner, std::vector<std::string> blocklist)
        : inner_(inner), blocklist_(std::move(blocklist)) {}

    std::string complete(const JudgeEndpoint& endpoint, std::string_view prompt) override {
        if (auto v = check_blinding(prompt, blocklist_); !v.empty()) {
            throw BlindingError("blocked unblinded prompt at transport boundary: " + describe(v), std::move(v));
        }
        return inner_.complete(endpoint, prompt);
    }

private:
    JudgeTransport& inner_;
    std::vector<std::string> blocklist_;
};

struct TransportRetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };

    static TransportRetryPolicy no_wait(int attempts = 3) {
        TransportRetryPolicy p;
        p.max_attempts = attempts;
        p.sleep = [](std::chrono::milliseconds) {};
        return p;
    }
};

/// One transport call with bounded exponential backoff on TransportError.
inline std::string call_with_backoff(JudgeTransport& transport, const JudgeEndpoint& endpoint, std::string_view prompt,
                                     const TransportRetryPolicy& policy) {
    auto delay = policy.initial_backoff;
    std::string last;
    for (int attempt = 1; attempt <= std::max(1, policy.max_attempts); ++attempt) {
        try {
            return transport.complete(endpoint, prompt);
        } catch (const TransportError& e) {
            last = e.what();
        }
        if (attempt < policy.max_attempts) {
            policy.sleep(delay);
            delay *= 2;
        }
    }
    throw TransportExhausted("transport failed after " + std::to_string(policy.max_attempts) +
                             " attempts: " + last);
}

template <class T>
struct RetryOutcome {
    std::optional<T> value;  // empty when every parse attempt failed
    int attempts = 0;
    std::string last_error;
};

/// Asks, parses, and re-asks on parse failure: 1 initial attempt + up to
/// `max_parse_retries` re-asks. `parse` throws VerdictParseError on failure.
template <class Parse>
auto query_with_retries(JudgeTransport& transport, const JudgeEndpoint& endpoint, std::string_view prompt, Parse&& parse,
                        const TransportRetryPolicy& policy)
    -> RetryOutcome<std::invoke_result_t<Parse&, std::string_view>> {
    RetryOutcome<std::invoke_result_t<Parse&, std::string_view>> out;
    const int total = std::max(0, endpoint.max_parse_retries) + 1;
    for (int attempt = 1; attempt <= total; ++attempt) {
        out.attempts = attempt;
        auto raw = call_with_backoff(transport, endpoint, prompt, policy);
        try {
            out.value = parse(std::string_view(raw));
            return out;
        } catch (const VerdictParseError& e) {
            out.last_error = std::string(to_string(e.kind())) + ": " + e.what();
        }
    }
    return out;
}

inline std::string utc_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Scores one prompt. Parse exhaustion yields a Missing verdict; transport
/// exhaustion throws TransportExhausted.
inline JudgeVerdict evaluate_one(const ScoringPrompt& prompt, const JudgeEndpoint& endpoint, JudgeTransport& transport,
                                 const TransportRetryPolicy& policy = {}) {
    auto outcome = query_with_retries(transport, endpoint, prompt.rendered_text, parse_verdict, policy);
    JudgeVerdict v;
    v.sample_id = prompt.sample_id;
    v.dim_id = prompt.dim_id;
    v.model_label = endpoint.label;
    v.attempts = outcome.attempts;
    v.prompt_hash = prompt.content_hash;
    v.timestamp = utc_timestamp();
    v.error = outcome.last_error;
    if (outcome.value) {
        v.status = VerdictStatus::Scored;
        v.score = outcome.value->score;
        v.rationale = std::move(outcome.value->rationale);
    } else {
        v.status = VerdictStatus::Missing;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Verdict store

inline nlohmann::ordered_json verdict_to_json(const JudgeVerdict& v) {
    nlohmann::ordered_json j;
    j["sample_id"] = v.sample_id;
    j["dim_id"] = v.dim_id;
    j["model_label"] = v.model_label;
    j["status"] = to_string(v.status);
    j["score"] = v.scored() ? nlohmann::ordered_json(v.score) : nlohmann::ordered_json("MISSING");
    j["rationale"] = v.rationale;
    j["attempts"] = v.attempts;
    j["prompt_hash"] = v.prompt_hash;
    j["timestamp"] = v.timestamp;
    if (!v.error.empty()) j["error"] = v.error;
    return j;
}

inline JudgeVerdict verdict_from_json(const nlohmann::json& j) {
    JudgeVerdict v;
    v.sample_id = j.at("sample_id").get<std::string>();
    v.dim_id = j.at("dim_id").get<std::string>();
    v.model_label = j.at("model_label").get<std::string>();
    auto status = j.at("status").get<std::string>();
    if (status == "scored") v.status = VerdictStatus::Scored;
    else if (status == "missing") v.status = VerdictStatus::Missing;
    else if (status == "transport_failed") v.status = VerdictStatus::TransportFailed;
    else throw std::runtime_error("unknown verdict status '" + status + "'");
    if (v.scored()) {
        v.score = j.at("score").get<int>();
        if (v.score < 1 || v.score > 5) throw std::runtime_error("archived score outside 1-5");
    }
    v.rationale = j.value("rationale", std::string{});
    v.attempts = j.at("attempts").get<int>();
    v.prompt_hash = j.at("prompt_hash").get<std::string>();
    v.timestamp = j.value("timestamp", std::string{});
    v.error = j.value("error", std::string{});
    return v;
}

using CellKey = std::tuple<std::string, std::string, std::string>;  // sample_id, dim_id, model_label

/// Verdicts indexed by (sample, dimension, model). A later record for the same
/// key supersedes an earlier one. When backed by a directory, every append is
/// written as one complete line to verdicts/<model_label>__<dim_id>.jsonl.
class VerdictStore {
public:
    explicit VerdictStore(std::string run_id = {}) : run_id_(std::move(run_id)) {}

    /// Opens (creating if needed) the archive under `run_dir`/verdicts and
    /// replays it. A torn final line from an interrupted write is dropped.
    static VerdictStore open(const std::filesystem::path& run_dir, std::string run_id = {}) {
        VerdictStore store(std::move(run_id));
        store.dir_ = run_dir / "verdicts";
        std::filesystem::create_directories(*store.dir_);
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(*store.dir_)) {
            if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) store.replay(file);
        return store;
    }

    VerdictStore(const VerdictStore&) = delete;
    VerdictStore& operator=(const VerdictStore&) = delete;
    VerdictStore(VerdictStore&& other) noexcept
        : run_id_(std::move(other.run_id_)),
          dir_(std::move(other.dir_)),
          index_(std::move(other.index_)),
          history_(other.history_) {}

    const std::string& run_id() const { return run_id_; }
    const std::optional<std::filesystem::path>& directory() const { return dir_; }

    static std::string archive_name(std::string_view model_label, std::string_view dim_id) {
        return std::string(model_label) + "__" + std::string(dim_id) + ".jsonl";
    }

    void append(const JudgeVerdict& v) {
        std::lock_guard lock(mu_);
        if (dir_) {
            auto line = verdict_to_json(v).dump() + "\n";
            std::ofstream out(*dir_ / archive_name(v.model_label, v.dim_id), std::ios::binary | std::ios::app);
            out.write(line.data(), static_cast<std::streamsize>(line.size()));
            out.flush();
            if (!out) throw std::runtime_error("failed to append verdict to archive");
        }
        index_[{v.sample_id, v.dim_id, v.model_label}] = v;
        ++history_;
    }

    std::optional<JudgeVerdict> find(const std::string& sample_id, const std::string& dim_id,
                                     const std::string& model_label) const {
        std::lock_guard lock(mu_);
        auto it = index_.find({sample_id, dim_id, model_label});
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Current (non-superseded) records in key order.
    std::vector<JudgeVerdict> records() const {
        std::lock_guard lock(mu_);
        std::vector<JudgeVerdict> out;
        out.reserve(index_.size());
        for (const auto& [key, v] : index_) out.push_back(v);
        return out;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return index_.size();
    }

    /// Records ever appended or replayed, superseded ones included.
    std::size_t history_size() const {
        std::lock_guard lock(mu_);
        return history_;
    }

private:
    void replay(const std::filesystem::path& file) {
        std::ifstream in(file, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        auto complete = content.rfind('\n');
        std::size_t keep = complete == std::string::npos ? 0 : complete + 1;
        if (keep != content.size()) {
            std::filesystem::resize_file(file, keep);
            content.resize(keep);
        }
        std::size_t pos = 0;
        std::size_t line_no = 0;
        while (pos < content.size()) {
            auto eol = content.find('\n', pos);
            std::string_view line(content.data() + pos, eol - pos);
            pos = eol + 1;
            ++line_no;
            if (line.empty()) continue;
            try {
                auto v = verdict_from_json(nlohmann::json::parse(line));
                if (archive_name(v.model_label, v.dim_id) != file.filename().string()) {
                    throw std::runtime_error("record filed under the wrong (model, dimension) archive");
                }
                index_[{v.sample_id, v.dim_id, v.model_label}] = std::move(v);
                ++history_;
            } catch (const std::exception& e) {
                throw std::runtime_error(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    }

    std::string run_id_;
    std::optional<std::filesystem::path> dir_;
    std::map<CellKey, JudgeVerdict> index_;
    std::size_t history_ = 0;
    mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Batch runner

struct BatchOptions {
    std::size_t limit = 4;  // max in-flight calls
    TransportRetryPolicy retry;
    int endpoint_failure_threshold = 5;  // consecutive exhausted cells before an endpoint is skipped
    std::function<void(const JudgeVerdict&)> on_verdict;
};

struct BatchSummary {
    std::size_t planned = 0;
    std::size_t skipped = 0;  // already resolved at the same prompt_hash
    std::size_t issued = 0;
    std::size_t scored = 0;
    std::size_t missing = 0;
    std::size_t transport_failed = 0;
    std::size_t superseded = 0;  // re-issued because prompt_hash changed
};

struct PlannedCell {
    ScoringPrompt prompt;
    std::size_t endpoint = 0;
};

/// Renders every (sample, dimension) prompt and pairs it with each endpoint,
/// in sample, dimension, endpoint order. Throws BlindingError on a leak.
inline std::vector<PlannedCell> plan_cells(const Corpus& corpus, const Rubric& rubric,
                                           const std::vector<JudgeEndpoint>& endpoints) {
    std::vector<PlannedCell> cells;
    cells.reserve(corpus.size() * rubric.dimensions.size() * endpoints.size());
    for (const auto& sample : corpus.samples) {
        for (const auto& dim : rubric.dimensions) {
            auto prompt = render_scoring_prompt(dim, sample, rubric);
            for (std::size_t e = 0; e < endpoints.size(); ++e) cells.push_back({prompt, e});
        }
    }
    return cells;
}

inline void validate_endpoints(const std::vector<JudgeEndpoint>& endpoints) {
    std::vector<std::string> labels;
    for (const auto& e : endpoints) {
        if (e.label.empty()) throw std::invalid_argument("endpoint with empty label");
        if (e.max_parse_retries < 0) throw std::invalid_argument("endpoint '" + e.label + "': max_parse_retries < 0");
        if (std::find(labels.begin(), labels.end(), e.label) != labels.end())
            throw std::invalid_argument("duplicate endpoint label '" + e.label + "'");
        labels.push_back(e.label);
    }
}

/// Resolves every (sample, dimension, endpoint) cell not already resolved at
/// the current prompt hash. Any exception other than transport exhaustion
/// stops the batch; records already written stay complete.
inline BatchSummary run_batch(const Corpus& corpus, const Rubric& rubric, const std::vector<JudgeEndpoint>& endpoints,
                              JudgeTransport& transport, VerdictStore& store, const BatchOptions& options = {}) {
    validate_rubric(rubric);
    validate_endpoints(endpoints);
    auto cells = plan_cells(corpus, rubric, endpoints);

    BatchSummary summary;
    summary.planned = cells.size();
    std::vector<const PlannedCell*> todo;
    for (const auto& cell : cells) {
        auto existing = store.find(cell.prompt.sample_id, cell.prompt.dim_id, endpoints[cell.endpoint].label);
        if (existing && existing->resolved() && existing->prompt_hash == cell.prompt.content_hash) {
            ++summary.skipped;
            continue;
        }
        if (existing && existing->resolved()) ++summary.superseded;
        todo.push_back(&cell);
    }

    BlindGuard guard(transport, rubric.blinding ? rubric.blocklist : std::vector<std::string>{});
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::mutex mu;  // guards summary, failure streaks, first error
    std::exception_ptr first_error;
    std::vector<int> streak(endpoints.size(), 0);

    auto worker = [&] {
        while (!stop.load()) {
            auto i = next.fetch_add(1);
            if (i >= todo.size()) return;
            const auto& cell = *todo[i];
            const auto& endpoint = endpoints[cell.endpoint];
            try {
                JudgeVerdict v;
                bool tripped = false;
                {
                    std::lock_guard lock(mu);
                    tripped = options.endpoint_failure_threshold > 0 &&
                              streak[cell.endpoint] >= options.endpoint_failure_threshold;
                }
                if (tripped) {
                    v.sample_id = cell.prompt.sample_id;
                    v.dim_id = cell.prompt.dim_id;
                    v.model_label = endpoint.label;
                    v.status = VerdictStatus::TransportFailed;
                    v.prompt_hash = cell.prompt.content_hash;
                    v.timestamp = utc_timestamp();
                    v.error = "endpoint skipped after repeated transport failures";
                } else {
                    try {
                        v = evaluate_one(cell.prompt, endpoint, guard, options.retry);
                    } catch (const TransportExhausted& e) {
                        v.sample_id = cell.prompt.sample_id;
                        v.dim_id = cell.prompt.dim_id;
                        v.model_label = endpoint.label;
                        v.status = VerdictStatus::TransportFailed;
                        v.prompt_hash = cell.prompt.content_hash;
                        v.timestamp = utc_timestamp();
                        v.error = e.what();
                    }
                }
                store.append(v);
                std::lock_guard lock(mu);
                ++summary.issued;
                switch (v.status) {
                    case VerdictStatus::Scored: ++summary.scored; streak[cell.endpoint] = 0; break;
                    case VerdictStatus::Missing: ++summary.missing; streak[cell.endpoint] = 0; break;
                    case VerdictStatus::TransportFailed:
                        ++summary.transport_failed;
                        if (!tripped) ++streak[cell.endpoint];
                        break;
                }
                if (options.on_verdict) options.on_verdict(v);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!first_error) first_error = std::current_exception();
                stop.store(true);
                return;
            }
        }
    };

    const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.limit, todo.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    if (first_error) std::rethrow_exception(first_error);
    return summary;
}

}  // namespace coteval
