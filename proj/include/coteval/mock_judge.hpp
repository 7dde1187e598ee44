#pragma once
// Deterministic test doubles for JudgeTransport.
//
// MockJudge sees only the rendered prompt, so group-dependent behaviour has to
// come from marker text planted in fixture samples, never from labels.

#include "coteval/hashing.hpp"
#include "coteval/judge.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace coteval {

/// Score weights for levels 1..5 (need not sum to 1).
using ScoreDistribution = std::array<double, 5>;

/// Applies `distribution` when every string in `all_of` occurs in the prompt.
struct BiasRule {
    std::vector<std::string> all_of;
    ScoreDistribution distribution{};
};

inline constexpr std::string_view kReversalMarker = "[reversal-test]";

struct MockJudgeOptions {
    std::uint64_t seed = 0;
    std::vector<BiasRule> bias_table;  // first matching rule wins
    ScoreDistribution fallback{1, 1, 1, 1, 1};
    double parse_failure_rate = 0.0;
    double collapse_rate = 0.5;  // reversal-test prompts answered "collapses"
    std::set<std::string> unreachable;  // endpoint labels that always fail transport
};

class MockJudge final : public JudgeTransport {
public:
    explicit MockJudge(MockJudgeOptions options) : options_(std::move(options)) {}

    std::string complete(const JudgeEndpoint& endpoint, std::string_view prompt) override {
        if (options_.unreachable.contains(endpoint.label)) {
            throw TransportError("mock endpoint '" + endpoint.label + "' unreachable");
        }
        // Re-asks of the same prompt see a fresh draw; the sequence is fixed by
        // (seed, endpoint, prompt) so results do not depend on scheduling.
        const std::uint64_t base = seed_from(prompt, seed_from(endpoint.label, options_.seed));
        const int attempt = next_attempt(base);
        std::uint64_t state = mix64(base ^ mix64(static_cast<std::uint64_t>(attempt)));
        auto draw = [&state] {
            state = mix64(state);
            return unit_interval(state);
        };

        if (draw() < options_.parse_failure_rate) {
            return attempt % 2 == 0 ? "I am unable to provide a score for this record."
                                    : "{\"score\": 4, \"rationale\": \"unterminated";
        }
        if (prompt.find(kReversalMarker) != std::string_view::npos) {
            bool collapses = draw() < options_.collapse_rate;
            return std::string("{\"verdict\": \"") + (collapses ? "collapses" : "holds") +
                   "\", \"rationale\": \"mock adjudication\"}";
        }
        const auto& dist = pick(prompt);
        double total = 0;
        for (double w : dist) total += w;
        double u = draw() * total;
        int score = 5;
        for (int level = 1; level <= 5; ++level) {
            if (u < dist[level - 1]) {
                score = level;
                break;
            }
            u -= dist[level - 1];
        }
        return "{\"score\": " + std::to_string(score) + ", \"rationale\": \"mock verdict from " + endpoint.label + "\"}";
    }

private:
    const ScoreDistribution& pick(std::string_view prompt) const {
        for (const auto& rule : options_.bias_table) {
            bool all = std::all_of(rule.all_of.begin(), rule.all_of.end(),
                                   [&](const std::string& s) { return prompt.find(s) != std::string_view::npos; });
            if (all) return rule.distribution;
        }
        return options_.fallback;
    }

    int next_attempt(std::uint64_t key) {
        std::lock_guard lock(mu_);
        return ++attempts_[key];
    }

    MockJudgeOptions options_;
    std::mutex mu_;
    std::map<std::uint64_t, int> attempts_;
};

inline MockJudgeOptions mock_judge_options(std::uint64_t seed, std::vector<BiasRule> bias_table) {
    MockJudgeOptions o;
    o.seed = seed;
    o.bias_table = std::move(bias_table);
    return o;
}

/// Deterministic mock transport: same seed and prompt give the same text.
inline MockJudge mock_judge(std::uint64_t seed, std::vector<BiasRule> bias_table) {
    return MockJudge(mock_judge_options(seed, std::move(bias_table)));
}

/// Replays canned responses in order; an entry equal to kTransportFailure
/// throws TransportError instead. Exhausted scripts repeat the last entry.
class ScriptedTransport final : public JudgeTransport {
public:
    static constexpr std::string_view kTransportFailure = "<transport-failure>";

    explicit ScriptedTransport(std::vector<std::string> script) : script_(std::move(script)) {}

    std::string complete(const JudgeEndpoint&, std::string_view prompt) override {
        std::lock_guard lock(mu_);
        prompts_.emplace_back(prompt);
        if (script_.empty()) throw TransportError("empty script");
        const auto& next = script_[std::min(calls_, script_.size() - 1)];
        ++calls_;
        if (next == kTransportFailure) throw TransportError("scripted transport failure");
        return next;
    }

    std::size_t calls() const {
        std::lock_guard lock(mu_);
        return calls_;
    }

    std::vector<std::string> prompts() const {
        std::lock_guard lock(mu_);
        return prompts_;
    }

private:
    std::vector<std::string> script_;
    std::size_t calls_ = 0;
    std::vector<std::string> prompts_;
    mutable std::mutex mu_;
};

/// Counts calls and records every prompt it forwards.
class RecordingTransport final : public JudgeTransport {
public:
    explicit RecordingTransport(JudgeTransport& inner) : inner_(inner) {}

    std::string complete(const JudgeEndpoint& endpoint, std::string_view prompt) override {
        {
            std::lock_guard lock(mu_);
            prompts_.emplace_back(prompt);
        }
        return inner_.complete(endpoint, prompt);
    }

    std::vector<std::string> prompts() const {
        std::lock_guard lock(mu_);
        return prompts_;
    }

private:
    JudgeTransport& inner_;
    std::vector<std::string> prompts_;
    mutable std::mutex mu_;
};

}  // namespace coteval
