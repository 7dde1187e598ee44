#pragma once
// Scoring dimensions, blinded prompt rendering, and the blinding check.

#include "coteval/corpus.hpp"
#include "coteval/hashing.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace coteval {

struct Dimension {
    std::string dim_id;
    std::string name;
    std::string definition;
    std::map<int, std::string> anchors;  // levels 1, 3, 5 required; 2, 4 optional

    friend bool operator==(const Dimension&, const Dimension&) = default;
};

struct Rubric {
    std::vector<Dimension> dimensions;
    std::vector<std::string> blocklist;
    bool blinding = true;

    const Dimension* find(std::string_view dim_id) const {
        for (const auto& d : dimensions)
            if (d.dim_id == dim_id) return &d;
        return nullptr;
    }

    friend bool operator==(const Rubric&, const Rubric&) = default;
};

class RubricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BlindingViolation {
    std::string term;
    std::size_t offset = 0;

    friend bool operator==(const BlindingViolation&, const BlindingViolation&) = default;
};

/// Thrown when a rendered prompt would leak provenance; carries every match.
class BlindingError : public std::runtime_error {
public:
    BlindingError(std::string message, std::vector<BlindingViolation> violations)
        : std::runtime_error(std::move(message)), violations_(std::move(violations)) {}

    const std::vector<BlindingViolation>& violations() const { return violations_; }

private:
    std::vector<BlindingViolation> violations_;
};

struct ScoringPrompt {
    std::string dim_id;
    std::string sample_id;  // out-of-band correlation key, never rendered
    std::string rendered_text;
    std::string content_hash;
};

inline const std::vector<std::string>& default_blocklist() {
    static const std::vector<std::string> list{"Group A", "Group B", "BC", "Expert Solo", "group A", "group B"};
    return list;
}

inline Rubric default_rubric() {
    Rubric r;
    r.blocklist = default_blocklist();
    r.dimensions = {
        {"D1", "Reasoning Chain Completeness",
         "Are there missing links in the derivation from premises to conclusion?",
         {{1, "many logical leaps"},
          {3, "backbone complete but some details missing"},
          {5, "every reasoning step is externalized, seamlessly connected"}}},
        {"D2", "Implicit Premise Externalization Rate",
         "Are reasoning premises \"typically taken as self-evident by experts\" made explicit?",
         {{1, "almost all implicit premises are assumed"},
          {3, "core implicit premises are externalized"},
          {5, "even micro-premises underlying deep aesthetic intuition are verbalized"}}},
        {"D3", "Naturalness of Reasoning Process",
         "Does the output preserve characteristic process features such as trial and error, hesitation, and "
         "self-correction from the expert's original reasoning?",
         {{1, "flat, polished conclusion stacking with no trace of trial and error"},
          {3, "occasional self-correction"},
          {5, "a live, breathing reasoning flow"}}},
        {"D4", "Information Density",
         "The amount of non-deletable independent reasoning information per unit length",
         {{1, "much filler/restatement"}, {3, "informative but with redundancy"}, {5, "every sentence is non-deletable"}}},
        {"D5", "Counterfactual Density",
         "The ratio of load-bearing claims that are explicitly probed by counterfactual perturbation",
         {{1, "zero counterfactual branches"},
          {3, "moderate coverage of load-bearing claims"},
          {5, "every load-bearing claim is perturbed and a new branch is traced"}}},
    };
    return r;
}

inline void validate_rubric(const Rubric& rubric) {
    if (rubric.dimensions.empty()) throw RubricError("rubric defines no dimensions");
    std::set<std::string> ids;
    for (const auto& d : rubric.dimensions) {
        if (d.dim_id.empty()) throw RubricError("dimension with empty dim_id");
        if (!ids.insert(d.dim_id).second) throw RubricError("duplicate dim_id '" + d.dim_id + "'");
        if (d.definition.empty()) throw RubricError("dimension '" + d.dim_id + "' has an empty definition");
        for (const auto& [level, text] : d.anchors) {
            if (level < 1 || level > 5) {
                throw RubricError("dimension '" + d.dim_id + "' has anchor level " + std::to_string(level) +
                                  " outside 1-5");
            }
        }
        for (int level : {1, 3, 5}) {
            if (!d.anchors.contains(level)) {
                throw RubricError("dimension '" + d.dim_id + "' is missing anchor level " + std::to_string(level));
            }
        }
    }
    if (rubric.blinding && rubric.blocklist.empty()) {
        throw RubricError("blinding is enabled but the blocklist is empty");
    }
}

inline Rubric rubric_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw RubricError("rubric document must be a JSON object");
    Rubric r;
    r.blinding = j.value("blinding", true);
    if (auto it = j.find("blocklist"); it != j.end()) {
        if (!it->is_array()) throw RubricError("'blocklist' must be an array of strings");
        for (const auto& term : *it) {
            if (!term.is_string() || term.get<std::string>().empty())
                throw RubricError("'blocklist' entries must be non-empty strings");
            r.blocklist.push_back(term.get<std::string>());
        }
    }
    auto dims = j.find("dimensions");
    if (dims == j.end() || !dims->is_array()) throw RubricError("'dimensions' must be an array");
    for (const auto& dj : *dims) {
        Dimension d;
        try {
            d.dim_id = dj.at("dim_id").get<std::string>();
            d.name = dj.value("name", d.dim_id);
            d.definition = dj.value("definition", std::string{});
            for (const auto& [level, text] : dj.at("anchors").items()) {
                int lv = 0;
                std::size_t used = 0;
                try {
                    lv = std::stoi(level, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used != level.size()) throw RubricError("anchor level '" + level + "' is not an integer");
                d.anchors[lv] = text.get<std::string>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw RubricError(std::string("invalid dimension entry: ") + e.what());
        }
        r.dimensions.push_back(std::move(d));
    }
    validate_rubric(r);
    return r;
}

inline nlohmann::ordered_json rubric_to_json(const Rubric& r) {
    nlohmann::ordered_json j;
    j["blinding"] = r.blinding;
    j["blocklist"] = r.blocklist;
    j["dimensions"] = nlohmann::ordered_json::array();
    for (const auto& d : r.dimensions) {
        nlohmann::ordered_json dj;
        dj["dim_id"] = d.dim_id;
        dj["name"] = d.name;
        dj["definition"] = d.definition;
        dj["anchors"] = nlohmann::ordered_json::object();
        for (const auto& [level, text] : d.anchors) dj["anchors"][std::to_string(level)] = text;
        j["dimensions"].push_back(std::move(dj));
    }
    return j;
}

inline Rubric load_rubric(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RubricError("cannot read rubric file '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw RubricError("rubric file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return rubric_from_json(j);
}

/// Every occurrence of every blocklist term, ordered by offset then term.
/// Matching is exact and case-sensitive; ship each casing you want caught.
inline std::vector<BlindingViolation> check_blinding(std::string_view text, const std::vector<std::string>& blocklist) {
    std::vector<BlindingViolation> out;
    for (const auto& term : blocklist) {
        if (term.empty()) continue;
        for (auto pos = text.find(term); pos != std::string_view::npos; pos = text.find(term, pos + 1)) {
            out.push_back({term, pos});
        }
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.offset != b.offset ? a.offset < b.offset : a.term < b.term;
    });
    return out;
}

inline std::string describe(const std::vector<BlindingViolation>& violations) {
    std::string s;
    for (const auto& v : violations) {
        if (!s.empty()) s += ", ";
        s += "'" + v.term + "'@" + std::to_string(v.offset);
    }
    return s;
}

/// Ids shorter than this are not checked for leakage (they collide with ordinary text).
inline constexpr std::size_t kMinCheckedIdLength = 3;

inline std::string render_prompt_text(const Dimension& dim, const CotSample& sample) {
    std::string t;
    t += "You are an expert reviewer. Score one chain-of-thought reasoning record on a single quality dimension.\n\n";
    t += "Dimension: " + dim.name + "\n";
    t += "Definition: " + dim.definition + "\n\n";
    t += "Scoring anchors (integer scale 1-5; unlisted levels fall between the neighbouring anchors):\n";
    for (const auto& [level, text] : dim.anchors) t += std::to_string(level) + " = " + text + "\n";
    t += "\nAny background context below is provided only to help you understand the reasoning. It is not scored. "
         "Score only the reasoning chain.\n\n";
    if (!sample.preamble.empty()) {
        t += "<background_context>\n" + sample.preamble + "\n</background_context>\n\n";
    }
    t += "<reasoning_chain>\n" + sample.cot_body + "\n</reasoning_chain>\n\n";
    t += "Respond with a single JSON object and nothing else, in the form "
         "{\"score\": <integer 1-5>, \"rationale\": \"<one or two sentences>\"}.\n";
    return t;
}

/// Renders the blinded prompt for one (dimension, sample) pair. Refuses with
/// BlindingError when the sample's own text would leak a blocklisted term or its id.
inline ScoringPrompt render_scoring_prompt(const Dimension& dim, const CotSample& sample, const Rubric& rubric) {
    ScoringPrompt p;
    p.dim_id = dim.dim_id;
    p.sample_id = sample.id;
    p.rendered_text = render_prompt_text(dim, sample);

    if (rubric.blinding) {
        auto terms = rubric.blocklist;
        if (sample.id.size() >= kMinCheckedIdLength) terms.push_back(sample.id);
        auto violations = check_blinding(p.rendered_text, terms);
        if (!violations.empty()) {
            throw BlindingError("prompt for sample '" + sample.id + "' dimension '" + dim.dim_id +
                                    "' leaks provenance: " + describe(violations),
                                std::move(violations));
        }
    }
    p.content_hash = sha256_hex(p.rendered_text);
    return p;
}

}  // namespace coteval
