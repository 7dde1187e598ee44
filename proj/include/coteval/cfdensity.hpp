#pragma once
// Counterfactual density: causal-connective claims, the reversal test,
// counterfactual nodes, claim linking and the probed / load-bearing ratio.

#include "coteval/corpus.hpp"
#include "coteval/judge.hpp"
#include "coteval/mock_judge.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace coteval {

struct SentenceSpan {
    std::size_t start = 0;
    std::size_t end = 0;  // exclusive
    std::string text;
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }
inline bool is_lower(char c) { return std::islower(static_cast<unsigned char>(c)) != 0; }
inline char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

inline bool starts_with_at(std::string_view text, std::size_t i, std::string_view s) {
    return text.substr(i, s.size()) == s;
}

constexpr std::string_view kEllipsis = "\xE2\x80\xA6";     // U+2026
constexpr std::string_view kLeftDouble = "\xE2\x80\x9C";   // U+201C
constexpr std::string_view kRightDouble = "\xE2\x80\x9D";  // U+201D
constexpr std::string_view kLeftSingle = "\xE2\x80\x98";   // U+2018
constexpr std::string_view kRightSingle = "\xE2\x80\x99";  // U+2019

inline bool is_abbreviation(std::string_view word) {
    static const std::vector<std::string_view> kAbbrev = {"e.g", "i.e", "mr", "mrs", "ms", "dr", "st", "vs", "cf",
                                                          "prof", "jr", "sr", "no", "fig", "approx"};
    std::string w;
    for (char c : word) w += lower(c);
    return std::find(kAbbrev.begin(), kAbbrev.end(), w) != kAbbrev.end();
}

}  // namespace detail

/// Splits on runs of . ? ! (and the ellipsis character). A run is a boundary
/// only when followed by whitespace or end of text, outside quotes, not after
/// a known abbreviation, and not followed by a lowercase continuation (which
/// covers "... and then"). Closing quotes after the run stay with the
/// sentence. A blank line always ends a sentence. Spans exclude surrounding
/// whitespace.
inline std::vector<SentenceSpan> segment_sentences(std::string_view text) {
    using namespace detail;
    std::vector<SentenceSpan> spans;
    std::size_t start = 0;
    int double_depth = 0;
    bool in_single = false;

    auto emit = [&](std::size_t end) {
        std::size_t s = start;
        while (s < end && is_space(text[s])) ++s;
        std::size_t e = end;
        while (e > s && is_space(text[e - 1])) --e;
        if (e > s) spans.push_back({s, e, std::string(text.substr(s, e - s))});
        start = end;
        double_depth = 0;
        in_single = false;
    };

    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (c == '\n') {
            std::size_t j = i + 1;
            while (j < text.size() && text[j] != '\n' && is_space(text[j])) ++j;
            if (j < text.size() && text[j] == '\n') {
                emit(i);
                i = j + 1;
                continue;
            }
        }
        if (c == '"') {
            double_depth = double_depth > 0 ? 0 : 1;
            ++i;
            continue;
        }
        if (starts_with_at(text, i, kLeftDouble)) { double_depth = 1; i += 3; continue; }
        if (starts_with_at(text, i, kRightDouble)) { double_depth = 0; i += 3; continue; }
        if (starts_with_at(text, i, kLeftSingle)) { in_single = true; i += 3; continue; }
        if (starts_with_at(text, i, kRightSingle)) {
            // Closes a quote, or is an apostrophe.
            in_single = false;
            i += 3;
            continue;
        }
        if (c == '\'') {
            const bool after_boundary = i == 0 || is_space(text[i - 1]) || text[i - 1] == '(' || text[i - 1] == '[';
            const bool before_word = i + 1 < text.size() && !is_space(text[i + 1]);
            if (!in_single && after_boundary && before_word) in_single = true;
            else if (in_single && (i + 1 == text.size() || !is_word(text[i + 1]))) in_single = false;
            ++i;
            continue;
        }

        const bool ellipsis_char = starts_with_at(text, i, kEllipsis);
        if (c != '.' && c != '?' && c != '!' && !ellipsis_char) {
            ++i;
            continue;
        }

        // Terminal run.
        const std::size_t run_start = i;
        std::size_t periods = 0;
        bool ellipsis = false;
        while (i < text.size()) {
            if (text[i] == '.') { ++periods; ++i; }
            else if (text[i] == '?' || text[i] == '!') ++i;
            else if (starts_with_at(text, i, kEllipsis)) { ellipsis = true; i += 3; }
            else break;
        }
        ellipsis = ellipsis || periods >= 2;

        // Closing quotes and brackets attach to the sentence.
        while (i < text.size()) {
            if (text[i] == '"' && double_depth > 0) { double_depth = 0; ++i; }
            else if (text[i] == '\'' && in_single) { in_single = false; ++i; }
            else if (starts_with_at(text, i, kRightDouble)) { double_depth = 0; i += 3; }
            else if (starts_with_at(text, i, kRightSingle)) { in_single = false; i += 3; }
            else if (text[i] == ')' || text[i] == ']') ++i;
            else break;
        }

        if (double_depth > 0 || in_single) continue;
        if (i < text.size() && !is_space(text[i])) continue;  // 3.14, e.g.,

        std::size_t next = i;
        while (next < text.size() && is_space(text[next])) ++next;
        if (next < text.size() && is_lower(text[next])) continue;

        if (!ellipsis && periods == 1 && i == run_start + 1) {
            std::size_t w = run_start;
            while (w > start && !is_space(text[w - 1])) --w;
            if (is_abbreviation(text.substr(w, run_start - w))) continue;
        }
        emit(i);
    }
    emit(text.size());
    return spans;
}

// ---------------------------------------------------------------------------
// Lexicon

struct Connective {
    std::string word;      // matched case-insensitively on word boundaries
    std::string reversal;  // replacement used by the judge-mode reversal prompt
};

struct CounterfactualPattern {
    std::string name;
    std::string regex;  // ECMAScript, matched case-insensitively
};

struct Lexicon {
    std::vector<Connective> connectives;
    std::vector<CounterfactualPattern> patterns;
};

class LexiconError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline Lexicon default_lexicon() {
    Lexicon lx;
    lx.connectives = {{"because", "even though"},
                      {"therefore", "nevertheless"},
                      {"must", "need not"},
                      {"otherwise", "even so"}};
    lx.patterns = {
        {"if_had", R"(\bif\b[^.?!]*\bhad\b)"},
        {"had_been", R"(\bhad\s+(it|they|he|she|i|we|you|this|that)\s+(not\s+)?been\b)"},
        {"suppose_instead", R"(\bsuppose\b[,\s]+instead\b)"},
        {"what_if", R"(\bwhat\s+if\b)"},
        {"would_have", R"(\bwould\s+have\b)"},
    };
    return lx;
}

namespace detail {
inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && is_space(s[a])) ++a;
    while (b > a && is_space(s[b - 1])) --b;
    return std::string(s.substr(a, b - a));
}
}  // namespace detail

/// Plain data file:
///
///   # comment
///   [connectives]
///   because => even though
///   since
///   [patterns]
///   would_have: \bwould\s+have\b
///
/// A connective without "=>" gets the generic reversal "regardless of whether".
inline Lexicon parse_lexicon(std::string_view text) {
    Lexicon lx;
    enum class Section { None, Connectives, Patterns } section = Section::None;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = detail::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (line == "[connectives]") { section = Section::Connectives; continue; }
        if (line == "[patterns]") { section = Section::Patterns; continue; }
        if (line.front() == '[') throw LexiconError("line " + std::to_string(line_no) + ": unknown section " + line);
        if (section == Section::Connectives) {
            Connective c;
            if (auto arrow = line.find("=>"); arrow != std::string::npos) {
                c.word = detail::trim(std::string_view(line).substr(0, arrow));
                c.reversal = detail::trim(std::string_view(line).substr(arrow + 2));
            } else {
                c.word = line;
                c.reversal = "regardless of whether";
            }
            if (c.word.empty()) throw LexiconError("line " + std::to_string(line_no) + ": empty connective");
            lx.connectives.push_back(std::move(c));
        } else if (section == Section::Patterns) {
            auto colon = line.find(':');
            if (colon == std::string::npos)
                throw LexiconError("line " + std::to_string(line_no) + ": pattern needs 'name: regex'");
            CounterfactualPattern p{detail::trim(std::string_view(line).substr(0, colon)),
                                    detail::trim(std::string_view(line).substr(colon + 1))};
            try {
                std::regex probe(p.regex, std::regex::ECMAScript | std::regex::icase);
            } catch (const std::regex_error& e) {
                throw LexiconError("line " + std::to_string(line_no) + ": bad regex for '" + p.name + "': " + e.what());
            }
            lx.patterns.push_back(std::move(p));
        } else {
            throw LexiconError("line " + std::to_string(line_no) + ": entry outside a section");
        }
    }
    if (lx.connectives.empty()) throw LexiconError("lexicon has no connectives");
    if (lx.patterns.empty()) throw LexiconError("lexicon has no counterfactual patterns");
    return lx;
}

inline Lexicon load_lexicon(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LexiconError("cannot read lexicon file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_lexicon(ss.str());
}

// ---------------------------------------------------------------------------
// Claims and nodes

enum class LoadBearing { Yes, No, Candidate };
enum class AdjudicationMode { Heuristic, Judge };

inline std::string_view to_string(LoadBearing l) {
    switch (l) {
        case LoadBearing::Yes: return "yes";
        case LoadBearing::No: return "no";
        case LoadBearing::Candidate: return "candidate";
    }
    return "candidate";
}

inline std::string_view to_string(AdjudicationMode m) { return m == AdjudicationMode::Heuristic ? "heuristic" : "judge"; }

struct Claim {
    std::size_t sentence = 0;
    SentenceSpan span;
    std::string connective;           // lexicon entry as written in the lexicon
    std::size_t connective_offset = 0;  // within span.text
    LoadBearing load_bearing = LoadBearing::Candidate;
    AdjudicationMode adjudication_mode = AdjudicationMode::Heuristic;
    bool judge_fallback = false;  // judge mode gave no verdict; kept as candidate

    bool counts() const { return load_bearing != LoadBearing::No; }
};

struct CounterfactualNode {
    std::size_t sentence = 0;
    SentenceSpan span;
    std::string pattern;
    std::optional<std::size_t> linked_claim;  // index into the claim list
};

/// Case-insensitive whole-word search; returns the offset of the first hit.
inline std::optional<std::size_t> find_word(std::string_view text, std::string_view word) {
    if (word.empty() || word.size() > text.size()) return std::nullopt;
    for (std::size_t i = 0; i + word.size() <= text.size(); ++i) {
        bool eq = true;
        for (std::size_t k = 0; k < word.size() && eq; ++k) eq = detail::lower(text[i + k]) == detail::lower(word[k]);
        if (!eq) continue;
        const bool left_ok = i == 0 || !detail::is_word(text[i - 1]);
        const bool right_ok = i + word.size() == text.size() || !detail::is_word(text[i + word.size()]);
        if (left_ok && right_ok) return i;
    }
    return std::nullopt;
}

/// One candidate claim per span containing a connective; the earliest
/// occurrence in the span names the connective.
inline std::vector<Claim> detect_candidate_claims(const std::vector<SentenceSpan>& spans, const Lexicon& lexicon) {
    if (lexicon.connectives.empty()) throw LexiconError("detect_candidate_claims: empty lexicon");
    std::vector<Claim> claims;
    for (std::size_t s = 0; s < spans.size(); ++s) {
        std::optional<std::size_t> best;
        const Connective* hit = nullptr;
        for (const auto& c : lexicon.connectives) {
            auto pos = find_word(spans[s].text, c.word);
            if (pos && (!best || *pos < *best)) {
                best = pos;
                hit = &c;
            }
        }
        if (hit) {
            Claim claim;
            claim.sentence = s;
            claim.span = spans[s];
            claim.connective = hit->word;
            claim.connective_offset = *best;
            claims.push_back(std::move(claim));
        }
    }
    return claims;
}

inline std::vector<CounterfactualNode> detect_counterfactual_nodes(const std::vector<SentenceSpan>& spans,
                                                                   const std::vector<CounterfactualPattern>& patterns) {
    if (patterns.empty()) throw LexiconError("detect_counterfactual_nodes: empty pattern set");
    std::vector<std::regex> compiled;
    compiled.reserve(patterns.size());
    for (const auto& p : patterns) compiled.emplace_back(p.regex, std::regex::ECMAScript | std::regex::icase);

    std::vector<CounterfactualNode> nodes;
    for (std::size_t s = 0; s < spans.size(); ++s) {
        for (std::size_t p = 0; p < patterns.size(); ++p) {
            if (std::regex_search(spans[s].text, compiled[p])) {
                nodes.push_back({s, spans[s], patterns[p].name, std::nullopt});
                break;
            }
        }
    }
    return nodes;
}

// ---------------------------------------------------------------------------
// Reversal test

/// Replaces the claim's connective with its reversal, keeping leading case.
inline std::string reversed_sentence(const Claim& claim, const Lexicon& lexicon) {
    std::string reversal = "regardless of whether";
    for (const auto& c : lexicon.connectives)
        if (c.word == claim.connective) reversal = c.reversal;
    std::string out = claim.span.text;
    if (!reversal.empty() && std::isupper(static_cast<unsigned char>(out[claim.connective_offset]))) {
        reversal[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(reversal[0])));
    }
    out.replace(claim.connective_offset, claim.connective.size(), reversal);
    return out;
}

inline std::string render_reversal_prompt(const Claim& claim, const std::vector<SentenceSpan>& spans,
                                          const Lexicon& lexicon) {
    std::string context;
    const std::size_t from = claim.sentence > 0 ? claim.sentence - 1 : 0;
    const std::size_t to = std::min(spans.size(), claim.sentence + 2);
    for (std::size_t s = from; s < to; ++s) {
        if (!context.empty()) context += ' ';
        context += spans[s].text;
    }
    std::string t;
    t += std::string(kReversalMarker) + "\n";
    t += "You are checking whether a causal connective carries the reasoning in a short passage.\n\n";
    t += "<passage>\n" + context + "\n</passage>\n\n";
    t += "<original_sentence>\n" + claim.span.text + "\n</original_sentence>\n\n";
    t += "<reversed_sentence>\n" + reversed_sentence(claim, lexicon) + "\n</reversed_sentence>\n\n";
    t += "The connective \"" + claim.connective +
         "\" was reversed. Read the passage with the reversed sentence in place. "
         "Does the passage still hold, or does its reasoning collapse?\n";
    t += "Respond with a single JSON object and nothing else, in the form "
         "{\"verdict\": \"holds\" | \"collapses\", \"rationale\": \"<one sentence>\"}.\n";
    return t;
}

/// true = collapses (load-bearing), false = still holds.
inline bool parse_reversal_verdict(std::string_view text) {
    auto obj = first_json_object(text);
    if (!obj) throw VerdictParseError(ParseErrorKind::NoJsonObject, "no well-formed JSON object in output");
    auto it = obj->find("verdict");
    if (it == obj->end() || !it->is_string()) throw VerdictParseError(ParseErrorKind::MissingKey, "missing key 'verdict'");
    std::string v;
    for (char c : it->get<std::string>()) v += detail::lower(c);
    v = detail::trim(v);
    if (v == "collapses" || v == "collapse") return true;
    if (v == "holds" || v == "still holds" || v == "hold") return false;
    throw VerdictParseError(ParseErrorKind::MissingKey, "verdict must be 'holds' or 'collapses', got '" + v + "'");
}

struct JudgeContext {
    JudgeTransport* transport = nullptr;
    JudgeEndpoint endpoint;
    TransportRetryPolicy retry;
};

/// Heuristic mode marks every claim as a candidate. Judge mode asks for a
/// verdict; parse exhaustion falls back to candidate with a flag.
/// Transport exhaustion propagates as TransportExhausted.
inline void reversal_test(Claim& claim, const std::vector<SentenceSpan>& spans, const Lexicon& lexicon,
                          AdjudicationMode mode, const JudgeContext* judge = nullptr) {
    claim.adjudication_mode = mode;
    if (mode == AdjudicationMode::Heuristic) {
        claim.load_bearing = LoadBearing::Candidate;
        return;
    }
    if (judge == nullptr || judge->transport == nullptr) throw std::invalid_argument("judge mode needs a transport");
    auto prompt = render_reversal_prompt(claim, spans, lexicon);
    auto outcome = query_with_retries(*judge->transport, judge->endpoint, prompt, parse_reversal_verdict, judge->retry);
    if (outcome.value) {
        claim.load_bearing = *outcome.value ? LoadBearing::Yes : LoadBearing::No;
        claim.judge_fallback = false;
    } else {
        claim.load_bearing = LoadBearing::Candidate;
        claim.judge_fallback = true;
    }
}

/// Nodes in sentence order link to the nearest counting claim at most
/// `window` sentences before them (or in the same sentence). A claim takes
/// one link; a later node aimed at an already-linked claim stays unlinked.
inline void link_nodes_to_claims(const std::vector<Claim>& claims, std::vector<CounterfactualNode>& nodes,
                                 std::size_t window = 3) {
    std::vector<bool> taken(claims.size(), false);
    for (auto& node : nodes) {
        node.linked_claim.reset();
        std::optional<std::size_t> target;
        for (std::size_t c = 0; c < claims.size(); ++c) {
            const auto& cl = claims[c];
            if (!cl.counts() || cl.sentence > node.sentence || node.sentence - cl.sentence > window) continue;
            if (!target || cl.sentence > claims[*target].sentence) target = c;
        }
        if (target && !taken[*target]) {
            taken[*target] = true;
            node.linked_claim = target;
        }
    }
}

struct ClaimAnalysis {
    std::vector<SentenceSpan> sentences;
    std::vector<Claim> claims;
    std::vector<CounterfactualNode> nodes;
    std::size_t probed_load_bearing_count = 0;
    std::size_t load_bearing_count = 0;
    std::optional<double> density;  // empty = UNDEFINED
    AdjudicationMode mode = AdjudicationMode::Heuristic;
    std::size_t window = 3;
};

inline void counterfactual_density(ClaimAnalysis& a) {
    a.load_bearing_count = static_cast<std::size_t>(
        std::count_if(a.claims.begin(), a.claims.end(), [](const Claim& c) { return c.counts(); }));
    std::vector<bool> probed(a.claims.size(), false);
    for (const auto& n : a.nodes)
        if (n.linked_claim && a.claims[*n.linked_claim].counts()) probed[*n.linked_claim] = true;
    a.probed_load_bearing_count = static_cast<std::size_t>(std::count(probed.begin(), probed.end(), true));
    if (a.load_bearing_count > 0) {
        a.density = static_cast<double>(a.probed_load_bearing_count) / static_cast<double>(a.load_bearing_count);
    } else {
        a.density.reset();
    }
}

struct CfOptions {
    AdjudicationMode mode = AdjudicationMode::Heuristic;
    std::size_t window = 3;
    Lexicon lexicon = default_lexicon();
};

inline ClaimAnalysis analyze_text(std::string_view text, const CfOptions& options = {},
                                  const JudgeContext* judge = nullptr) {
    ClaimAnalysis a;
    a.mode = options.mode;
    a.window = options.window;
    a.sentences = segment_sentences(text);
    a.claims = detect_candidate_claims(a.sentences, options.lexicon);
    for (auto& c : a.claims) reversal_test(c, a.sentences, options.lexicon, options.mode, judge);
    a.nodes = detect_counterfactual_nodes(a.sentences, options.lexicon.patterns);
    link_nodes_to_claims(a.claims, a.nodes, options.window);
    counterfactual_density(a);
    return a;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::ordered_json span_to_json(const SentenceSpan& s) {
    return {{"start", s.start}, {"end", s.end}, {"text", s.text}};
}

inline nlohmann::ordered_json analysis_to_json(const CotSample& sample, const ClaimAnalysis& a) {
    using oj = nlohmann::ordered_json;
    oj claims = oj::array();
    for (const auto& c : a.claims) {
        oj j;
        j["sentence"] = c.sentence;
        j["span"] = span_to_json(c.span);
        j["connective"] = c.connective;
        j["load_bearing"] = to_string(c.load_bearing);
        j["adjudication_mode"] = to_string(c.adjudication_mode);
        if (c.judge_fallback) j["judge_fallback"] = true;
        claims.push_back(std::move(j));
    }
    oj nodes = oj::array();
    oj links = oj::array();
    for (std::size_t i = 0; i < a.nodes.size(); ++i) {
        const auto& n = a.nodes[i];
        oj j;
        j["sentence"] = n.sentence;
        j["span"] = span_to_json(n.span);
        j["pattern"] = n.pattern;
        j["linked_claim"] = n.linked_claim ? oj(*n.linked_claim) : oj(nullptr);
        nodes.push_back(std::move(j));
        if (n.linked_claim) links.push_back({{"node", i}, {"claim", *n.linked_claim}});
    }
    oj out;
    out["sample_id"] = sample.id;
    out["group"] = sample.group;
    out["mode"] = to_string(a.mode);
    out["window"] = a.window;
    out["sentence_count"] = a.sentences.size();
    out["claims"] = std::move(claims);
    out["nodes"] = std::move(nodes);
    out["links"] = std::move(links);
    out["load_bearing_count"] = a.load_bearing_count;
    out["probed_load_bearing_count"] = a.probed_load_bearing_count;
    out["density"] = a.density ? oj(*a.density) : oj("UNDEFINED");
    out["confirmatory_filter"] = "not_implemented";
    return out;
}

struct GroupDensity {
    std::string group;
    std::size_t samples = 0;
    std::size_t defined = 0;
    std::size_t undefined = 0;
    std::optional<double> mean;  // over defined densities only
};

inline std::vector<GroupDensity> summarize_density(const Corpus& corpus, const std::vector<ClaimAnalysis>& analyses) {
    std::vector<GroupDensity> out;
    for (const auto& g : corpus.groups) {
        GroupDensity gd;
        gd.group = g;
        double sum = 0;
        for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
            if (corpus.samples[i].group != g) continue;
            ++gd.samples;
            if (analyses[i].density) {
                ++gd.defined;
                sum += *analyses[i].density;
            } else {
                ++gd.undefined;
            }
        }
        if (gd.defined > 0) gd.mean = sum / static_cast<double>(gd.defined);
        out.push_back(std::move(gd));
    }
    return out;
}

inline nlohmann::ordered_json density_summary_to_json(const std::vector<GroupDensity>& groups, AdjudicationMode mode,
                                                      std::size_t window) {
    using oj = nlohmann::ordered_json;
    oj g = oj::array();
    for (const auto& gd : groups) {
        g.push_back({{"group", gd.group},
                     {"samples", gd.samples},
                     {"defined", gd.defined},
                     {"undefined", gd.undefined},
                     {"mean_density", gd.mean ? oj(*gd.mean) : oj(nullptr)}});
    }
    return {{"mode", to_string(mode)}, {"window", window}, {"confirmatory_filter", "not_implemented"}, {"groups", g}};
}

}  // namespace coteval
