#pragma once
// CoT corpus loading and validation.
//
// A corpus is JSONL: one record per line with required keys id, group and
// cot_body, optional preamble, summary and metadata. Keys outside that set
// are folded into metadata so nothing is lost on a round trip.

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstddef>
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

using ordered_json = nlohmann::ordered_json;

struct CotSample {
    std::string id;
    std::string group;
    std::string preamble;  // context only, never scored
    std::string cot_body;
    std::string summary;
    ordered_json metadata = ordered_json::object();
    std::size_t line = 0;  // 1-based source line; diagnostics only

    friend bool operator==(const CotSample& a, const CotSample& b) {
        return a.id == b.id && a.group == b.group && a.preamble == b.preamble &&
               a.cot_body == b.cot_body && a.summary == b.summary && a.metadata == b.metadata;
    }
};

struct Corpus {
    std::vector<CotSample> samples;
    std::vector<std::string> groups;
    std::string source_path;

    bool empty() const { return samples.empty(); }
    std::size_t size() const { return samples.size(); }

    friend bool operator==(const Corpus& a, const Corpus& b) {
        return a.samples == b.samples && a.groups == b.groups;
    }
};

class CorpusError : public std::runtime_error {
public:
    enum class Kind { Unreadable, Malformed, MissingField, WrongType, EmptyBody, DuplicateId, UnknownGroup };

    CorpusError(Kind kind, std::string message, std::size_t line = 0, std::string field = {},
                std::string id = {})
        : std::runtime_error(std::move(message)),
          kind_(kind),
          line_(line),
          field_(std::move(field)),
          id_(std::move(id)) {}

    Kind kind() const { return kind_; }
    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }
    const std::string& id() const { return id_; }

private:
    Kind kind_;
    std::size_t line_;
    std::string field_;
    std::string id_;
};

inline std::string_view corpus_error_name(CorpusError::Kind kind) {
    switch (kind) {
        case CorpusError::Kind::Unreadable: return "unreadable";
        case CorpusError::Kind::Malformed: return "malformed_line";
        case CorpusError::Kind::MissingField: return "missing_field";
        case CorpusError::Kind::WrongType: return "wrong_type";
        case CorpusError::Kind::EmptyBody: return "empty_cot_body";
        case CorpusError::Kind::DuplicateId: return "duplicate_id";
        case CorpusError::Kind::UnknownGroup: return "unknown_group";
    }
    return "unknown";
}

namespace detail {

inline bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

inline std::string at_line(std::size_t line) {
    return line == 0 ? std::string{} : " (line " + std::to_string(line) + ")";
}

inline std::string string_field(const ordered_json& record, const char* key, bool required,
                                std::size_t line) {
    auto it = record.find(key);
    if (it == record.end()) {
        if (required) {
            throw CorpusError(CorpusError::Kind::MissingField,
                              std::string("missing required field '") + key + "'" + at_line(line), line,
                              key);
        }
        return {};
    }
    if (!it->is_string()) {
        throw CorpusError(CorpusError::Kind::WrongType,
                          std::string("field '") + key + "' must be a string" + at_line(line), line, key);
    }
    return it->get<std::string>();
}

}  // namespace detail

inline const std::vector<std::string>& corpus_fields() {
    static const std::vector<std::string> fields{"id", "group", "preamble", "cot_body", "summary", "metadata"};
    return fields;
}

/// Validates one parsed JSONL record. `line` only decorates error messages.
inline CotSample validate_sample(const ordered_json& record, std::size_t line = 0) {
    if (!record.is_object()) {
        throw CorpusError(CorpusError::Kind::Malformed, "record is not a JSON object" + detail::at_line(line),
                          line);
    }
    CotSample s;
    s.line = line;
    s.id = detail::string_field(record, "id", true, line);
    if (s.id.empty()) {
        throw CorpusError(CorpusError::Kind::MissingField, "field 'id' is empty" + detail::at_line(line), line,
                          "id");
    }
    s.group = detail::string_field(record, "group", true, line);
    s.cot_body = detail::string_field(record, "cot_body", true, line);
    if (detail::is_blank(s.cot_body)) {
        throw CorpusError(CorpusError::Kind::EmptyBody,
                          "field 'cot_body' is empty after trimming" + detail::at_line(line), line, "cot_body",
                          s.id);
    }
    s.preamble = detail::string_field(record, "preamble", false, line);
    s.summary = detail::string_field(record, "summary", false, line);

    if (auto it = record.find("metadata"); it != record.end() && !it->is_null()) {
        s.metadata = *it;
    }
    for (const auto& [key, value] : record.items()) {
        const auto& known = corpus_fields();
        if (std::find(known.begin(), known.end(), key) != known.end()) continue;
        if (!s.metadata.is_object()) {
            throw CorpusError(CorpusError::Kind::WrongType,
                              "extra key '" + key + "' cannot be folded into non-object metadata" +
                                  detail::at_line(line),
                              line, "metadata", s.id);
        }
        if (!s.metadata.contains(key)) s.metadata[key] = value;
    }
    return s;
}

namespace detail {

inline void check_membership(const Corpus& corpus, const CotSample& s,
                             std::map<std::string, std::size_t>& seen) {
    if (std::find(corpus.groups.begin(), corpus.groups.end(), s.group) == corpus.groups.end()) {
        throw CorpusError(CorpusError::Kind::UnknownGroup,
                          "unknown group label '" + s.group + "' for id '" + s.id + "'" + at_line(s.line),
                          s.line, "group", s.id);
    }
    auto [it, inserted] = seen.emplace(s.id, s.line);
    if (!inserted) {
        throw CorpusError(CorpusError::Kind::DuplicateId,
                          "duplicate id '" + s.id + "' at lines " + std::to_string(it->second) + " and " +
                              std::to_string(s.line),
                          s.line, "id", s.id);
    }
}

}  // namespace detail

/// Parses JSONL text into a validated corpus.
inline Corpus parse_corpus(std::string_view text, std::vector<std::string> groups,
                           std::string source_path = {}) {
    Corpus corpus;
    corpus.groups = std::move(groups);
    corpus.source_path = std::move(source_path);
    std::map<std::string, std::size_t> seen;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() : eol + 1;
        ++line_no;
        if (line_no == 1 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (detail::is_blank(line)) continue;

        ordered_json record;
        try {
            record = ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw CorpusError(CorpusError::Kind::Malformed,
                              "malformed JSON" + detail::at_line(line_no) + ": " + e.what(), line_no);
        }
        auto sample = validate_sample(record, line_no);
        detail::check_membership(corpus, sample, seen);
        corpus.samples.push_back(std::move(sample));
    }
    return corpus;
}

inline Corpus load_corpus(const std::filesystem::path& path, std::vector<std::string> groups) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CorpusError(CorpusError::Kind::Unreadable, "cannot read corpus file '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_corpus(buf.str(), std::move(groups), path.string());
    } catch (const CorpusError& e) {
        throw CorpusError(e.kind(), path.string() + ": " + e.what(), e.line(), e.field(), e.id());
    }
}

/// Concatenates corpora (e.g. group_A.jsonl + group_B.jsonl), keeping ids unique.
inline Corpus merge_corpora(const std::vector<Corpus>& parts, std::vector<std::string> groups) {
    Corpus merged;
    merged.groups = std::move(groups);
    std::map<std::string, std::string> origin;
    for (const auto& part : parts) {
        if (!merged.source_path.empty()) merged.source_path += ";";
        merged.source_path += part.source_path;
        for (const auto& s : part.samples) {
            if (std::find(merged.groups.begin(), merged.groups.end(), s.group) == merged.groups.end()) {
                throw CorpusError(CorpusError::Kind::UnknownGroup,
                                  "unknown group label '" + s.group + "' in " + part.source_path, s.line,
                                  "group", s.id);
            }
            auto [it, inserted] = origin.emplace(s.id, part.source_path + ":" + std::to_string(s.line));
            if (!inserted) {
                throw CorpusError(CorpusError::Kind::DuplicateId,
                                  "duplicate id '" + s.id + "' at " + it->second + " and " + part.source_path +
                                      ":" + std::to_string(s.line),
                                  s.line, "id", s.id);
            }
            merged.samples.push_back(s);
        }
    }
    return merged;
}

inline ordered_json sample_to_json(const CotSample& s) {
    ordered_json j = ordered_json::object();
    j["id"] = s.id;
    j["group"] = s.group;
    j["preamble"] = s.preamble;
    j["cot_body"] = s.cot_body;
    j["summary"] = s.summary;
    j["metadata"] = s.metadata;
    return j;
}

/// Byte-stable JSONL serialization (key order id, group, preamble, cot_body, summary, metadata).
inline std::string to_jsonl(const Corpus& corpus) {
    std::string out;
    for (const auto& s : corpus.samples) {
        out += sample_to_json(s).dump();
        out += '\n';
    }
    return out;
}

/// Group label -> samples in corpus order. Labels with no samples are absent.
inline std::map<std::string, std::vector<CotSample>> partition_by_group(const Corpus& corpus) {
    std::map<std::string, std::vector<CotSample>> parts;
    for (const auto& s : corpus.samples) parts[s.group].push_back(s);
    return parts;
}

}  // namespace coteval
