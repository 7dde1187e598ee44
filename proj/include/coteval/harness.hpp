#pragma once
// Run configuration, run directories and the CLI commands
// (validate, evaluate, stats, cfdensity, report, all).

#include "coteval/aggregate.hpp"
#include "coteval/cfdensity.hpp"
#include "coteval/corpus.hpp"
#include "coteval/hashing.hpp"
#include "coteval/http_transport.hpp"
#include "coteval/judge.hpp"
#include "coteval/mock_judge.hpp"
#include "coteval/report.hpp"
#include "coteval/rubric.hpp"
#include "coteval/stats.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef COTEVAL_VERSION
#define COTEVAL_VERSION "0.0.0"
#endif

namespace coteval {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

inline constexpr std::string_view kVersion = COTEVAL_VERSION;
inline constexpr std::string_view kJudgeScope = "one_dimension_per_call";

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitValidation = 2, kExitConfig = 3 };

struct CorpusSource {
    std::string spec;  // path as written in the config
    fs::path path;     // resolved
    std::string group; // optional: every sample in the file must carry it
};

struct MockSettings {
    std::uint64_t seed = 0;
    std::vector<BiasRule> bias;
    double parse_failure_rate = 0.0;
    double collapse_rate = 0.5;
    std::set<std::string> unreachable;
};

struct RunConfig {
    fs::path config_dir = ".";
    std::vector<std::string> groups;  // exactly two: compared as A vs B
    std::vector<CorpusSource> corpora;
    std::string rubric_spec = "builtin";
    std::optional<fs::path> rubric_path;  // empty = built-in rubric
    std::vector<JudgeEndpoint> endpoints;
    std::size_t concurrency = 4;
    MissingPolicy missing = MissingPolicy::Strict;
    StatsOptions stats;
    AdjudicationMode cf_mode = AdjudicationMode::Heuristic;
    std::optional<fs::path> lexicon_path;
    std::size_t cf_window = 3;
    std::string cf_endpoint;  // label; empty = first endpoint
    fs::path out = "runs";
    std::string run_id;
    std::optional<MockSettings> mock;
    bool timestamps = true;
    std::uint64_t figure_seed = 0;

    fs::path run_dir() const { return out / run_id; }
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline MwMethod parse_method(std::string_view s) {
    if (s == "normal" || s == "normal_tie_corrected") return MwMethod::NormalTieCorrected;
    if (s == "exact" || s == "exact_enumeration") return MwMethod::ExactEnumeration;
    throw ConfigError("method must be 'normal' or 'exact', got '" + std::string(s) + "'");
}

inline AlphaMetric parse_alpha_metric(std::string_view s) {
    if (s == "interval") return AlphaMetric::Interval;
    if (s == "ordinal") return AlphaMetric::Ordinal;
    throw ConfigError("alpha metric must be 'interval' or 'ordinal', got '" + std::string(s) + "'");
}

inline MissingPolicy parse_missing(std::string_view s) {
    if (s == "strict") return MissingPolicy::Strict;
    if (s == "lenient") return MissingPolicy::Lenient;
    throw ConfigError("missing policy must be 'strict' or 'lenient', got '" + std::string(s) + "'");
}

inline AdjudicationMode parse_cf_mode(std::string_view s) {
    if (s == "heuristic") return AdjudicationMode::Heuristic;
    if (s == "judge") return AdjudicationMode::Judge;
    throw ConfigError("cfdensity mode must be 'heuristic' or 'judge', got '" + std::string(s) + "'");
}

inline std::uint64_t parse_u64(std::string_view s, std::string_view what) {
    std::uint64_t v = 0;
    std::size_t used = 0;
    if (s.empty() || !std::isdigit(static_cast<unsigned char>(s.front())))
        throw ConfigError(std::string(what) + " must be a non-negative integer");
    try {
        v = std::stoull(std::string(s), &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw ConfigError(std::string(what) + " must be a non-negative integer");
    return v;
}

inline void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

template <class T>
T get(const json& j, const char* key, std::string_view where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("'" + std::string(key) + "' in " + std::string(where) + " is missing or has the wrong type");
    }
}

inline ScoreDistribution parse_distribution(const json& j) {
    if (!j.is_array() || j.size() != 5) throw ConfigError("mock bias distribution must be an array of 5 weights");
    ScoreDistribution d{};
    double total = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        if (!j[i].is_number() || j[i].get<double>() < 0) throw ConfigError("mock bias weights must be >= 0");
        d[i] = j[i].get<double>();
        total += d[i];
    }
    if (total <= 0) throw ConfigError("mock bias weights must not all be zero");
    return d;
}

}  // namespace detail

inline std::vector<JudgeEndpoint> default_mock_endpoints() {
    std::vector<JudgeEndpoint> out;
    for (const char* label : {"gpt_4o", "claude_opus", "gemini_pro"}) {
        JudgeEndpoint e;
        e.label = label;
        e.model_id = label;
        out.push_back(e);
    }
    return out;
}

inline MockSettings parse_mock(const json& j) {
    detail::check_keys(j, "mock", {"seed", "bias", "parse_failure_rate", "collapse_rate", "unreachable"});
    MockSettings m;
    if (j.contains("seed")) m.seed = detail::get<std::uint64_t>(j, "seed", "mock");
    if (j.contains("parse_failure_rate")) m.parse_failure_rate = detail::get<double>(j, "parse_failure_rate", "mock");
    if (j.contains("collapse_rate")) m.collapse_rate = detail::get<double>(j, "collapse_rate", "mock");
    if (j.contains("unreachable")) {
        for (const auto& u : detail::get<std::vector<std::string>>(j, "unreachable", "mock")) m.unreachable.insert(u);
    }
    if (j.contains("bias")) {
        if (!j["bias"].is_array()) throw ConfigError("mock.bias must be an array");
        for (const auto& r : j["bias"]) {
            detail::check_keys(r, "mock.bias entry", {"all_of", "distribution"});
            BiasRule rule;
            rule.all_of = detail::get<std::vector<std::string>>(r, "all_of", "mock.bias entry");
            rule.distribution = detail::parse_distribution(r.at("distribution"));
            m.bias.push_back(std::move(rule));
        }
    }
    return m;
}

/// Parses a config document. Relative paths resolve against `base_dir`.
inline RunConfig parse_config(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    detail::check_keys(j, "config",
                       {"groups", "corpora", "rubric", "endpoints", "concurrency", "missing_policy", "stats",
                        "cfdensity", "output_dir", "run_id", "mock", "figure_seed"});
    RunConfig c;
    c.config_dir = base_dir;

    c.groups = detail::get<std::vector<std::string>>(j, "groups", "config");
    if (c.groups.size() != 2 || c.groups[0] == c.groups[1] || c.groups[0].empty() || c.groups[1].empty())
        throw ConfigError("'groups' must list exactly two distinct labels (A first, B second)");

    if (!j.contains("corpora") || !j["corpora"].is_array() || j["corpora"].empty())
        throw ConfigError("'corpora' must be a non-empty array");
    for (const auto& cj : j["corpora"]) {
        CorpusSource src;
        if (cj.is_string()) {
            src.spec = cj.get<std::string>();
        } else {
            detail::check_keys(cj, "corpora entry", {"path", "group"});
            src.spec = detail::get<std::string>(cj, "path", "corpora entry");
            if (cj.contains("group")) src.group = detail::get<std::string>(cj, "group", "corpora entry");
            if (!src.group.empty() && std::find(c.groups.begin(), c.groups.end(), src.group) == c.groups.end())
                throw ConfigError("corpus '" + src.spec + "' names unknown group '" + src.group + "'");
        }
        src.path = detail::resolve(base_dir, src.spec);
        c.corpora.push_back(std::move(src));
    }

    if (j.contains("rubric")) {
        c.rubric_spec = detail::get<std::string>(j, "rubric", "config");
        if (c.rubric_spec != "builtin") c.rubric_path = detail::resolve(base_dir, c.rubric_spec);
    }

    if (j.contains("endpoints")) {
        if (!j["endpoints"].is_array()) throw ConfigError("'endpoints' must be an array");
        for (const auto& ej : j["endpoints"]) {
            detail::check_keys(ej, "endpoint",
                               {"label", "model_id", "base_url", "auth_env", "timeout_seconds", "max_parse_retries",
                                "params"});
            JudgeEndpoint e;
            e.label = detail::get<std::string>(ej, "label", "endpoint");
            e.model_id = ej.contains("model_id") ? detail::get<std::string>(ej, "model_id", "endpoint") : e.label;
            if (ej.contains("base_url")) e.base_url = detail::get<std::string>(ej, "base_url", "endpoint");
            if (ej.contains("auth_env")) e.auth_env = detail::get<std::string>(ej, "auth_env", "endpoint");
            if (ej.contains("timeout_seconds")) e.timeout_seconds = detail::get<double>(ej, "timeout_seconds", "endpoint");
            if (ej.contains("max_parse_retries"))
                e.max_parse_retries = detail::get<int>(ej, "max_parse_retries", "endpoint");
            if (ej.contains("params")) {
                if (!ej["params"].is_object()) throw ConfigError("endpoint params must be an object");
                e.params = ej["params"];
            }
            c.endpoints.push_back(std::move(e));
        }
        try {
            validate_endpoints(c.endpoints);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }

    if (j.contains("concurrency")) c.concurrency = detail::get<std::size_t>(j, "concurrency", "config");
    if (j.contains("missing_policy")) c.missing = detail::parse_missing(detail::get<std::string>(j, "missing_policy", "config"));
    if (j.contains("stats")) {
        const auto& s = j["stats"];
        detail::check_keys(s, "stats", {"method", "alpha_metric"});
        if (s.contains("method")) c.stats.method = detail::parse_method(detail::get<std::string>(s, "method", "stats"));
        if (s.contains("alpha_metric"))
            c.stats.alpha_metric = detail::parse_alpha_metric(detail::get<std::string>(s, "alpha_metric", "stats"));
    }
    if (j.contains("cfdensity")) {
        const auto& s = j["cfdensity"];
        detail::check_keys(s, "cfdensity", {"mode", "lexicon", "window", "endpoint"});
        if (s.contains("mode")) c.cf_mode = detail::parse_cf_mode(detail::get<std::string>(s, "mode", "cfdensity"));
        if (s.contains("lexicon") && !s["lexicon"].is_null())
            c.lexicon_path = detail::resolve(base_dir, detail::get<std::string>(s, "lexicon", "cfdensity"));
        if (s.contains("window")) c.cf_window = detail::get<std::size_t>(s, "window", "cfdensity");
        if (s.contains("endpoint")) c.cf_endpoint = detail::get<std::string>(s, "endpoint", "cfdensity");
    }
    if (j.contains("output_dir")) c.out = detail::resolve(base_dir, detail::get<std::string>(j, "output_dir", "config"));
    if (j.contains("run_id")) c.run_id = detail::get<std::string>(j, "run_id", "config");
    if (j.contains("mock") && !j["mock"].is_null()) c.mock = parse_mock(j["mock"]);
    if (j.contains("figure_seed")) c.figure_seed = detail::get<std::uint64_t>(j, "figure_seed", "config");
    return c;
}

inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    auto dir = path.parent_path();
    return parse_config(j, dir.empty() ? fs::path(".") : dir);
}

/// Flag values layered over the config file; argv wins over environment.
struct Overrides {
    std::optional<std::string> run_id;
    std::optional<std::string> out;
    std::optional<std::string> mock_seed;
    std::optional<std::string> concurrency;
    std::optional<std::string> method;
    std::optional<std::string> alpha_metric;
    std::optional<std::string> missing;
    std::optional<std::string> cf_mode;
    bool no_timestamp = false;

    /// Fields set in `top` replace those here.
    void layer(const Overrides& top) {
        auto take = [](auto& dst, const auto& src) {
            if (src) dst = src;
        };
        take(run_id, top.run_id);
        take(out, top.out);
        take(mock_seed, top.mock_seed);
        take(concurrency, top.concurrency);
        take(method, top.method);
        take(alpha_metric, top.alpha_metric);
        take(missing, top.missing);
        take(cf_mode, top.cf_mode);
        no_timestamp = no_timestamp || top.no_timestamp;
    }
};

/// COTEVAL_RUN_ID, COTEVAL_OUT, COTEVAL_MOCK_JUDGE, COTEVAL_CONCURRENCY,
/// COTEVAL_METHOD, COTEVAL_ALPHA_METRIC, COTEVAL_MISSING, COTEVAL_CF_MODE,
/// COTEVAL_NO_TIMESTAMP.
inline Overrides env_overrides(const std::function<const char*(const char*)>& getenv_fn = [](const char* k) {
    return std::getenv(k);
}) {
    Overrides o;
    auto read = [&](const char* key, std::optional<std::string>& dst) {
        if (const char* v = getenv_fn(key); v != nullptr && *v != '\0') dst = v;
    };
    read("COTEVAL_RUN_ID", o.run_id);
    read("COTEVAL_OUT", o.out);
    read("COTEVAL_MOCK_JUDGE", o.mock_seed);
    read("COTEVAL_CONCURRENCY", o.concurrency);
    read("COTEVAL_METHOD", o.method);
    read("COTEVAL_ALPHA_METRIC", o.alpha_metric);
    read("COTEVAL_MISSING", o.missing);
    read("COTEVAL_CF_MODE", o.cf_mode);
    if (const char* v = getenv_fn("COTEVAL_NO_TIMESTAMP"); v != nullptr && *v != '\0' && std::string_view(v) != "0")
        o.no_timestamp = true;
    return o;
}

inline std::string config_hash(const RunConfig& c);

inline void apply_overrides(RunConfig& c, const Overrides& o) {
    if (o.run_id) c.run_id = *o.run_id;
    if (o.out) c.out = *o.out;
    if (o.mock_seed) {
        if (!c.mock) c.mock = MockSettings{};
        c.mock->seed = detail::parse_u64(*o.mock_seed, "--mock-judge seed");
    }
    if (o.concurrency) c.concurrency = detail::parse_u64(*o.concurrency, "--concurrency");
    if (o.method) c.stats.method = detail::parse_method(*o.method);
    if (o.alpha_metric) c.stats.alpha_metric = detail::parse_alpha_metric(*o.alpha_metric);
    if (o.missing) c.missing = detail::parse_missing(*o.missing);
    if (o.cf_mode) c.cf_mode = detail::parse_cf_mode(*o.cf_mode);
    if (o.no_timestamp) c.timestamps = false;
}

/// Fills defaults that depend on other settings and checks the result.
inline void finalize_config(RunConfig& c) {
    if (c.concurrency == 0) throw ConfigError("concurrency must be at least 1");
    if (c.cf_window == 0) throw ConfigError("cfdensity window must be at least 1");
    if (c.mock && c.endpoints.empty()) c.endpoints = default_mock_endpoints();
    if (c.run_id.empty()) c.run_id = "run-" + config_hash(c).substr(0, 12);
    if (c.run_id.find_first_of("/\\") != std::string::npos || c.run_id == "." || c.run_id == "..")
        throw ConfigError("run_id must be a plain directory name");
    if (!c.cf_endpoint.empty()) {
        bool found = std::any_of(c.endpoints.begin(), c.endpoints.end(),
                                 [&](const JudgeEndpoint& e) { return e.label == c.cf_endpoint; });
        if (!found) throw ConfigError("cfdensity endpoint '" + c.cf_endpoint + "' is not a configured endpoint");
    }
}

inline ojson endpoint_to_json(const JudgeEndpoint& e) {
    return {{"label", e.label},
            {"model_id", e.model_id},
            {"base_url", e.base_url},
            {"auth_env", e.auth_env},
            {"timeout_seconds", e.timeout_seconds},
            {"max_parse_retries", e.max_parse_retries},
            {"params", e.params}};
}

/// Hash of the settings that determine verdicts. Reusing a run_id with a
/// different hash is refused.
inline std::string config_hash(const RunConfig& c) {
    ojson j;
    j["groups"] = c.groups;
    j["corpora"] = ojson::array();
    for (const auto& s : c.corpora) j["corpora"].push_back({{"path", s.spec}, {"group", s.group}});
    j["rubric"] = c.rubric_spec;
    j["endpoints"] = ojson::array();
    for (const auto& e : c.endpoints) j["endpoints"].push_back(endpoint_to_json(e));
    if (c.mock) {
        ojson bias = ojson::array();
        for (const auto& r : c.mock->bias) bias.push_back({{"all_of", r.all_of}, {"distribution", r.distribution}});
        j["mock"] = {{"seed", c.mock->seed},
                     {"bias", bias},
                     {"parse_failure_rate", c.mock->parse_failure_rate},
                     {"collapse_rate", c.mock->collapse_rate},
                     {"unreachable", c.mock->unreachable}};
    } else {
        j["mock"] = nullptr;
    }
    return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Run context

struct Logger {
    std::ostream* err = &std::cerr;
    void info(const std::string& msg) const { *err << "coteval: " << msg << "\n"; }
    void warn(const std::string& msg) const { *err << "coteval: warning: " << msg << "\n"; }
    void error(const std::string& msg) const { *err << "coteval: error: " << msg << "\n"; }
};

struct Inputs {
    Corpus corpus;
    Rubric rubric;
};

inline Corpus load_configured_corpus(const RunConfig& c) {
    std::vector<Corpus> parts;
    for (const auto& src : c.corpora) {
        auto part = load_corpus(src.path, c.groups);
        part.source_path = src.spec;
        if (!src.group.empty()) {
            for (const auto& s : part.samples) {
                if (s.group != src.group) {
                    throw CorpusError(CorpusError::Kind::UnknownGroup,
                                      src.spec + ": sample '" + s.id + "' has group '" + s.group +
                                          "' but the file is configured as group '" + src.group + "'",
                                      s.line, "group", s.id);
                }
            }
        }
        parts.push_back(std::move(part));
    }
    return merge_corpora(parts, c.groups);
}

inline Rubric load_configured_rubric(const RunConfig& c) {
    return c.rubric_path ? load_rubric(*c.rubric_path) : default_rubric();
}

inline Inputs load_inputs(const RunConfig& c) {
    Inputs in;
    in.rubric = load_configured_rubric(c);
    in.corpus = load_configured_corpus(c);
    return in;
}

inline void write_file(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::optional<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Creates the run directory or confirms it belongs to the same config.
inline void prepare_run_dir(const RunConfig& c) {
    const auto dir = c.run_dir();
    fs::create_directories(dir);
    const auto meta_path = dir / "run_meta.json";
    const auto hash = config_hash(c);
    ojson meta;
    if (auto text = read_file(meta_path)) {
        meta = ojson::parse(*text, nullptr, false);
        if (meta.is_discarded() || !meta.is_object()) throw ConfigError("unreadable " + meta_path.string());
        if (meta.value("config_hash", std::string{}) != hash) {
            throw ConfigError("run '" + c.run_id + "' in " + c.out.string() +
                              " was created with a different configuration (config hash mismatch); "
                              "use a new --run-id");
        }
        meta["updated"] = utc_timestamp();
    } else {
        meta["run_id"] = c.run_id;
        meta["config_hash"] = hash;
        meta["version"] = std::string(kVersion);
        meta["created"] = utc_timestamp();
        meta["updated"] = meta["created"];
        meta["judge_scope"] = std::string(kJudgeScope);
        meta["endpoints"] = ojson::array();
        for (const auto& e : c.endpoints) meta["endpoints"].push_back(endpoint_to_json(e));
        meta["mock"] = c.mock.has_value();
    }
    write_file(meta_path, meta.dump(2) + "\n");
}

/// Mock judge when configured; otherwise HTTP with credentials checked up front.
inline std::unique_ptr<JudgeTransport> make_transport(const RunConfig& c, const std::vector<JudgeEndpoint>& used) {
    if (c.mock) {
        MockJudgeOptions o;
        o.seed = c.mock->seed;
        o.bias_table = c.mock->bias;
        o.parse_failure_rate = c.mock->parse_failure_rate;
        o.collapse_rate = c.mock->collapse_rate;
        o.unreachable = c.mock->unreachable;
        return std::make_unique<MockJudge>(std::move(o));
    }
    for (const auto& e : used) {
        if (e.base_url.empty()) throw ConfigError("endpoint '" + e.label + "' has no base_url");
        completion_url(e.base_url);
        read_credential(e);
    }
    return std::make_unique<HttpTransport>();
}

inline TransportRetryPolicy retry_policy(const RunConfig& c) {
    return c.mock ? TransportRetryPolicy::no_wait() : TransportRetryPolicy{};
}

inline std::string figure_name(std::string_view dim_id) {
    std::string out;
    for (char ch : dim_id) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' ? ch : '_';
    return out + ".svg";
}

// ---------------------------------------------------------------------------
// validate

struct Diagnostics {
    bool ok = true;
    ojson errors = ojson::array();
    ojson blinding = ojson::array();
    ojson warnings = ojson::array();
    ojson summary = ojson::object();
};

inline std::string corpus_error_json_kind(const CorpusError& e) { return std::string(corpus_error_name(e.kind())); }

inline ojson diagnostics_to_json(const RunConfig& c, const Diagnostics& d) {
    ojson j;
    j["command"] = "validate";
    j["ok"] = d.ok;
    j["run_id"] = c.run_id;
    j["summary"] = d.summary;
    j["errors"] = d.errors;
    j["blinding"] = d.blinding;
    j["warnings"] = d.warnings;
    return j;
}

/// Loads and checks everything, renders every prompt as a dry run, and writes
/// diagnostics.json. Returns the exit code.
inline int cmd_validate(const RunConfig& c, const Logger& log, std::ostream& out = std::cout) {
    Diagnostics d;
    std::optional<Rubric> rubric;
    std::optional<Corpus> corpus;
    try {
        rubric = load_configured_rubric(c);
    } catch (const RubricError& e) {
        d.ok = false;
        d.errors.push_back({{"kind", "rubric"}, {"message", e.what()}});
    }
    try {
        corpus = load_configured_corpus(c);
    } catch (const CorpusError& e) {
        d.ok = false;
        ojson err{{"kind", corpus_error_json_kind(e)}, {"message", e.what()}};
        if (e.line() > 0) err["line"] = e.line();
        if (!e.field().empty()) err["field"] = e.field();
        if (!e.id().empty()) err["id"] = e.id();
        d.errors.push_back(std::move(err));
    }
    if (c.lexicon_path) {
        try {
            load_lexicon(*c.lexicon_path);
        } catch (const LexiconError& e) {
            d.ok = false;
            d.errors.push_back({{"kind", "lexicon"}, {"message", e.what()}});
        }
    }

    if (corpus && rubric) {
        std::size_t rendered = 0;
        for (const auto& s : corpus->samples) {
            for (const auto& dim : rubric->dimensions) {
                try {
                    render_scoring_prompt(dim, s, *rubric);
                    ++rendered;
                } catch (const BlindingError& e) {
                    d.ok = false;
                    for (const auto& v : e.violations())
                        d.blinding.push_back(
                            {{"sample_id", s.id}, {"dim_id", dim.dim_id}, {"term", v.term}, {"offset", v.offset}});
                }
            }
        }
        std::map<std::string, std::size_t> per_group;
        for (const auto& g : c.groups) per_group[g] = 0;
        for (const auto& s : corpus->samples) ++per_group[s.group];
        for (const auto& g : c.groups)
            if (per_group[g] == 0) d.warnings.push_back("group '" + g + "' has no samples");
        if (!rubric->blinding) d.warnings.push_back("blinding is disabled in the rubric");
        if (c.endpoints.empty()) d.warnings.push_back("no judge endpoints configured");

        const std::size_t planned = corpus->size() * rubric->dimensions.size() * c.endpoints.size();
        d.summary["samples"] = corpus->size();
        d.summary["groups"] = per_group;
        d.summary["dimensions"] = rubric->dimensions.size();
        d.summary["endpoints"] = c.endpoints.size();
        d.summary["prompts_rendered"] = rendered;
        d.summary["planned_calls"] = planned;
        d.summary["message"] = fmt::format("{} calls planned ({} samples x {} dimensions x {} endpoints)", planned,
                                           corpus->size(), rubric->dimensions.size(), c.endpoints.size());
    }

    write_file(c.run_dir() / "diagnostics.json", diagnostics_to_json(c, d).dump(2) + "\n");
    for (const auto& w : d.warnings) log.warn(w.get<std::string>());
    for (const auto& e : d.errors) log.error(e["message"].get<std::string>());
    if (!d.blinding.empty()) log.error(fmt::format("{} blinding violation(s); see diagnostics.json", d.blinding.size()));
    if (d.summary.contains("message")) out << d.summary["message"].get<std::string>() << "\n";
    out << (d.ok ? "validation passed" : "validation failed") << "\n";
    return d.ok ? kExitOk : kExitValidation;
}

// ---------------------------------------------------------------------------
// evaluate

inline int cmd_evaluate(const RunConfig& c, const Logger& log, std::ostream& out = std::cout) {
    auto in = load_inputs(c);
    validate_rubric(in.rubric);
    if (c.endpoints.empty()) throw ConfigError("no judge endpoints configured (add endpoints or use --mock-judge)");
    auto cells = plan_cells(in.corpus, in.rubric, c.endpoints);  // dry-run render; throws on a blinding leak
    auto transport = make_transport(c, c.endpoints);
    prepare_run_dir(c);
    auto store = VerdictStore::open(c.run_dir(), c.run_id);

    BatchOptions opts;
    opts.limit = c.concurrency;
    opts.retry = retry_policy(c);
    std::map<std::string, std::size_t> done;  // archive -> records this run
    std::map<std::string, std::size_t> expected;
    for (const auto& e : c.endpoints)
        for (const auto& d : in.rubric.dimensions) expected[VerdictStore::archive_name(e.label, d.dim_id)] = 0;
    for (const auto& cell : cells) {
        auto name = VerdictStore::archive_name(c.endpoints[cell.endpoint].label, cell.prompt.dim_id);
        auto existing = store.find(cell.prompt.sample_id, cell.prompt.dim_id, c.endpoints[cell.endpoint].label);
        if (!(existing && existing->resolved() && existing->prompt_hash == cell.prompt.content_hash)) ++expected[name];
    }
    opts.on_verdict = [&](const JudgeVerdict& v) {
        auto name = VerdictStore::archive_name(v.model_label, v.dim_id);
        if (++done[name] == expected[name]) log.info(fmt::format("{}/{}: {} cell(s) done", v.model_label, v.dim_id, done[name]));
    };

    auto summary = run_batch(in.corpus, in.rubric, c.endpoints, *transport, store, opts);

    std::map<std::string, std::size_t> failed_by_endpoint;
    std::size_t unresolved = 0;
    for (const auto& cell : cells) {
        const auto& label = c.endpoints[cell.endpoint].label;
        auto v = store.find(cell.prompt.sample_id, cell.prompt.dim_id, label);
        if (!v || !v->resolved()) {
            ++unresolved;
            ++failed_by_endpoint[label];
        }
    }
    out << fmt::format("planned {}, skipped {}, issued {}, scored {}, missing {}, transport_failed {}, superseded {}\n",
                       summary.planned, summary.skipped, summary.issued, summary.scored, summary.missing,
                       summary.transport_failed, summary.superseded);
    if (unresolved > 0) {
        for (const auto& [label, n] : failed_by_endpoint)
            log.error(fmt::format("endpoint '{}': {} cell(s) unresolved after transport failures", label, n));
        log.error("rerun the same command to retry unresolved cells");
        return kExitRuntime;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// stats / report

struct Analysis {
    ScoreMatrix matrix;
    std::vector<TableRow> rows;
    std::vector<std::string> warnings;
};

inline Analysis analyze_run(const RunConfig& c, const Inputs& in) {
    if (!fs::exists(c.run_dir() / "verdicts")) {
        throw IncompleteStoreError("no verdict store at " + (c.run_dir() / "verdicts").string() + "; run evaluate first",
                                   {});
    }
    auto store = VerdictStore::open(c.run_dir(), c.run_id);
    Analysis a;
    a.matrix = aggregate_scores(store, make_plan(in.corpus, in.rubric, c.endpoints), c.missing);
    for (const auto& dim : in.rubric.dimensions) {
        TableRow row;
        row.dim_id = dim.dim_id;
        row.label = dim.dim_id + ": " + dim.name;
        row.n_a = a.matrix.values(dim.dim_id, c.groups[0]).size();
        row.n_b = a.matrix.values(dim.dim_id, c.groups[1]).size();
        try {
            row.stats = dimension_report(a.matrix, dim.dim_id, c.groups[0], c.groups[1], c.stats);
        } catch (const GroupExcludedError& e) {
            a.warnings.push_back(e.what());
        }
        a.rows.push_back(std::move(row));
    }
    return a;
}

inline ojson methods_json(const RunConfig& c) {
    ojson m;
    m["mann_whitney"] = to_string(c.stats.method);
    m["continuity_correction"] = false;
    m["alternative"] = "two_sided";
    m["effect_size"] = "cliffs_delta";
    m["alpha_metric"] = to_string(c.stats.alpha_metric);
    m["alpha_input"] = "per_model_integer_scores";
    m["aggregation"] = "mean_over_models";
    m["missing_policy"] = to_string(c.missing);
    m["judge_scope"] = std::string(kJudgeScope);
    m["adjudication_mode"] = to_string(c.cf_mode);
    m["judges"] = ojson::array();
    for (const auto& e : c.endpoints) m["judges"].push_back(e.label);
    return m;
}

inline ojson summary_json(const GroupSummary& s, std::size_t excluded) {
    return {{"n", s.n},           {"mean", s.mean}, {"median", s.median},
            {"sd", s.sd},         {"sd_defined", s.sd_defined}, {"excluded", excluded}};
}

inline ojson stats_to_json(const RunConfig& c, const Analysis& a) {
    ojson j;
    j["run_id"] = c.run_id;
    j["version"] = std::string(kVersion);
    j["groups"] = {{"a", c.groups[0]}, {"b", c.groups[1]}};
    j["methods"] = methods_json(c);
    j["dimensions"] = ojson::array();
    for (const auto& row : a.rows) {
        ojson d;
        d["dim_id"] = row.dim_id;
        d["label"] = row.label;
        if (!row.stats) {
            d["status"] = "EXCLUDED";
            d["n_a"] = row.n_a;
            d["n_b"] = row.n_b;
            d["excluded_a"] = a.matrix.excluded_count(row.dim_id, c.groups[0]);
            d["excluded_b"] = a.matrix.excluded_count(row.dim_id, c.groups[1]);
            j["dimensions"].push_back(std::move(d));
            continue;
        }
        const auto& s = *row.stats;
        d["status"] = "ok";
        d["group_a"] = summary_json(s.a, s.excluded_a);
        d["group_b"] = summary_json(s.b, s.excluded_b);
        d["test"] = {{"method", to_string(s.test.method)},
                     {"u_statistic", s.test.u_statistic},
                     {"p_two_sided", s.test.p_two_sided},
                     {"z", s.test.z},
                     {"n_a", s.test.n_a},
                     {"n_b", s.test.n_b}};
        d["cliffs_delta"] = s.cliffs_delta;
        ojson alpha;
        switch (s.alpha.kind) {
            case AlphaResult::Kind::Value: alpha["value"] = s.alpha.value; alpha["status"] = "ok"; break;
            case AlphaResult::Kind::Degenerate: alpha["value"] = "DEGENERATE"; alpha["status"] = "degenerate"; break;
            case AlphaResult::Kind::Unavailable: alpha["value"] = nullptr; alpha["status"] = "unavailable"; break;
        }
        alpha["metric"] = to_string(c.stats.alpha_metric);
        alpha["observed_disagreement"] = s.alpha.observed_disagreement;
        alpha["expected_disagreement"] = s.alpha.expected_disagreement;
        alpha["pairable_values"] = s.alpha.pairable_values;
        d["alpha"] = std::move(alpha);
        j["dimensions"].push_back(std::move(d));
    }
    j["warnings"] = a.warnings;
    return j;
}

inline int cmd_stats(const RunConfig& c, const Logger& log, std::ostream& out = std::cout) {
    auto in = load_inputs(c);
    auto a = analyze_run(c, in);
    write_file(c.run_dir() / "matrix.csv", matrix_to_csv(a.matrix));
    write_file(c.run_dir() / "stats.json", stats_to_json(c, a).dump(2) + "\n");
    for (const auto& w : a.warnings) log.warn(w + " (row marked EXCLUDED)");
    out << render_table(a.rows, TableFormat::Markdown);
    return kExitOk;
}

inline std::string report_markdown(const RunConfig& c, const Inputs& in, const Analysis& a,
                                   const std::vector<std::string>& figures) {
    std::string md;
    md += "# Evaluation report: " + c.run_id + "\n\n";
    md += fmt::format("Groups compared: {} (A) vs {} (B). Judges: ", c.groups[0], c.groups[1]);
    for (std::size_t i = 0; i < c.endpoints.size(); ++i) md += (i ? ", " : "") + c.endpoints[i].label;
    md += ".\n\n## Methods\n\n";
    md += fmt::format("- Between-group test: Mann-Whitney U, {}, two-sided, no continuity correction\n",
                      to_string(c.stats.method));
    md += "- Effect size: Cliff's delta over model-averaged cell scores\n";
    md += fmt::format("- Agreement: Krippendorff's alpha ({} metric) over per-model integer scores\n",
                      to_string(c.stats.alpha_metric));
    md += fmt::format("- Missing-cell policy: {}\n", to_string(c.missing));
    md += fmt::format("- Judge scope: {}\n", kJudgeScope);
    md += fmt::format("- Counterfactual density adjudication: {}\n\n", to_string(c.cf_mode));
    md += "## Results\n\n";
    md += render_table(a.rows, TableFormat::Markdown);
    md += "\n";
    for (const auto& row : a.rows) {
        const auto ea = a.matrix.excluded_count(row.dim_id, c.groups[0]);
        const auto eb = a.matrix.excluded_count(row.dim_id, c.groups[1]);
        if (ea + eb > 0)
            md += fmt::format("- {}: {} {} and {} {} cell(s) excluded (n_A = {}, n_B = {}).\n", row.dim_id, ea,
                              c.groups[0], eb, c.groups[1], row.n_a, row.n_b);
    }
    for (const auto& w : a.warnings) md += "- Warning: " + w + "\n";

    if (auto text = read_file(c.run_dir() / "cfdensity_summary.json")) {
        auto j = ojson::parse(*text, nullptr, false);
        if (!j.is_discarded() && j.contains("groups")) {
            md += "\n## Counterfactual density\n\n";
            md += fmt::format("Mode: {}; linking window: {}. Reported alongside the judged D5 scores, not merged.\n\n",
                              j.value("mode", std::string("?")), j.value("window", 0));
            md += "| Group | Samples | Defined | Undefined | Mean density |\n| --- | :---: | :---: | :---: | :---: |\n";
            for (const auto& g : j["groups"]) {
                const auto& mean = g["mean_density"];
                md += fmt::format("| {} | {} | {} | {} | {} |\n", g.value("group", std::string()),
                                  g.value("samples", 0), g.value("defined", 0), g.value("undefined", 0),
                                  mean.is_number() ? fmt::format("{:.2f}", mean.get<double>()) : std::string("n/a"));
            }
        }
    }

    md += "\n## Figures\n\n";
    for (const auto& f : figures) md += "![" + f + "](figures/" + f + ")\n";
    (void)in;
    return md;
}

inline int cmd_report(const RunConfig& c, const Logger& log, std::ostream& out = std::cout) {
    auto in = load_inputs(c);
    auto a = analyze_run(c, in);
    std::vector<std::string> figures;
    const std::optional<std::string> stamp = c.timestamps ? std::optional(utc_timestamp()) : std::nullopt;
    for (const auto& dim : in.rubric.dimensions) {
        BoxplotOptions o;
        o.group_a = c.groups[0];
        o.group_b = c.groups[1];
        o.title = dim.dim_id + ": " + dim.name;
        o.method = c.stats.method;
        o.jitter_seed = c.figure_seed;
        o.timestamp = stamp;
        try {
            auto svg = render_boxplot(a.matrix, dim.dim_id, o);
            auto name = figure_name(dim.dim_id);
            write_file(c.run_dir() / "figures" / name, svg);
            figures.push_back(name);
        } catch (const GroupExcludedError& e) {
            log.warn(std::string(e.what()) + "; figure omitted");
        }
    }
    write_file(c.run_dir() / "table.csv", render_table(a.rows, TableFormat::Csv));
    write_file(c.run_dir() / "report.md", report_markdown(c, in, a, figures));
    out << "report written to " << (c.run_dir() / "report.md").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// cfdensity

inline int cmd_cfdensity(const RunConfig& c, const Logger& log, std::ostream& out = std::cout) {
    CfOptions opts;
    opts.mode = c.cf_mode;
    opts.window = c.cf_window;
    if (c.lexicon_path) opts.lexicon = load_lexicon(*c.lexicon_path);

    std::optional<JudgeContext> judge;
    std::unique_ptr<JudgeTransport> transport;
    std::unique_ptr<BlindGuard> guard;
    auto in = load_inputs(c);
    if (c.cf_mode == AdjudicationMode::Judge) {
        if (c.endpoints.empty()) throw ConfigError("cfdensity judge mode needs a judge endpoint");
        const JudgeEndpoint* ep = &c.endpoints.front();
        for (const auto& e : c.endpoints)
            if (e.label == c.cf_endpoint) ep = &e;
        transport = make_transport(c, {*ep});
        guard = std::make_unique<BlindGuard>(*transport, in.rubric.blinding ? in.rubric.blocklist
                                                                            : std::vector<std::string>{});
        judge = JudgeContext{guard.get(), *ep, retry_policy(c)};
    }
    prepare_run_dir(c);

    std::vector<ClaimAnalysis> analyses;
    std::string jsonl;
    std::size_t fallbacks = 0;
    for (const auto& s : in.corpus.samples) {
        auto a = analyze_text(s.cot_body, opts, judge ? &*judge : nullptr);
        for (const auto& cl : a.claims) fallbacks += cl.judge_fallback ? 1 : 0;
        jsonl += analysis_to_json(s, a).dump() + "\n";
        analyses.push_back(std::move(a));
    }
    auto groups = summarize_density(in.corpus, analyses);
    write_file(c.run_dir() / "cfdensity.jsonl", jsonl);
    write_file(c.run_dir() / "cfdensity_summary.json",
               density_summary_to_json(groups, c.cf_mode, c.cf_window).dump(2) + "\n");
    if (fallbacks > 0) log.warn(fmt::format("{} claim(s) fell back to candidate after judge parse failures", fallbacks));
    for (const auto& g : groups) {
        out << fmt::format("{}: {} sample(s), {} defined, {} undefined, mean density {}\n", g.group, g.samples,
                           g.defined, g.undefined, g.mean ? fmt::format("{:.3f}", *g.mean) : std::string("n/a"));
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Dispatch

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> k{"validate", "evaluate", "stats", "cfdensity", "report", "all"};
    return k;
}

/// Runs one command and maps failures to exit codes.
inline int run_command(const std::string& command, const RunConfig& c, const Logger& log,
                       std::ostream& out = std::cout) {
    try {
        if (command == "validate") return cmd_validate(c, log, out);
        if (command == "evaluate") return cmd_evaluate(c, log, out);
        if (command == "stats") return cmd_stats(c, log, out);
        if (command == "cfdensity") return cmd_cfdensity(c, log, out);
        if (command == "report") return cmd_report(c, log, out);
        if (command == "all") {
            if (int rc = cmd_validate(c, log, out); rc != kExitOk) return rc;
            if (int rc = cmd_evaluate(c, log, out); rc != kExitOk) return rc;
            if (int rc = cmd_stats(c, log, out); rc != kExitOk) return rc;
            if (int rc = cmd_cfdensity(c, log, out); rc != kExitOk) return rc;
            return cmd_report(c, log, out);
        }
        log.error("unknown command '" + command + "'");
        return kExitConfig;
    } catch (const ConfigError& e) {
        log.error(e.what());
        return kExitConfig;
    } catch (const LexiconError& e) {
        log.error(e.what());
        return kExitConfig;
    } catch (const CorpusError& e) {
        log.error(e.what());
        return kExitValidation;
    } catch (const RubricError& e) {
        log.error(e.what());
        return kExitValidation;
    } catch (const BlindingError& e) {
        log.error(e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        log.error(e.what());
        return kExitRuntime;
    }
}

}  // namespace coteval
