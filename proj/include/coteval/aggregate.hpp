#pragma once
// Verdicts -> (sample x dimension) score matrix -> per-dimension statistics.

#include "coteval/corpus.hpp"
#include "coteval/judge.hpp"
#include "coteval/rubric.hpp"
#include "coteval/stats.hpp"

#include <fmt/format.h>

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace coteval {

enum class MissingPolicy { Strict, Lenient };

inline std::string_view to_string(MissingPolicy p) { return p == MissingPolicy::Strict ? "strict" : "lenient"; }

/// The cells a run is expected to resolve.
struct CellPlan {
    std::vector<std::pair<std::string, std::string>> samples;  // (id, group)
    std::vector<std::string> dim_ids;
    std::vector<std::string> model_labels;
};

inline CellPlan make_plan(const Corpus& corpus, const Rubric& rubric, const std::vector<JudgeEndpoint>& endpoints) {
    CellPlan plan;
    for (const auto& s : corpus.samples) plan.samples.emplace_back(s.id, s.group);
    for (const auto& d : rubric.dimensions) plan.dim_ids.push_back(d.dim_id);
    for (const auto& e : endpoints) plan.model_labels.push_back(e.label);
    return plan;
}

struct MatrixCell {
    std::optional<double> value;                   // empty = EXCLUDED
    std::vector<std::optional<int>> model_scores;  // per model, in plan order
    int contributing = 0;

    bool excluded() const { return !value.has_value(); }
};

struct ScoreMatrix {
    std::vector<std::string> sample_ids;
    std::vector<std::string> groups;
    std::vector<std::string> dim_ids;
    std::vector<std::string> model_labels;
    std::vector<MatrixCell> cells;  // row-major: sample, then dimension
    MissingPolicy policy = MissingPolicy::Strict;

    const MatrixCell& at(std::size_t sample, std::size_t dim) const { return cells[sample * dim_ids.size() + dim]; }

    std::optional<std::size_t> dim_index(std::string_view dim_id) const {
        for (std::size_t d = 0; d < dim_ids.size(); ++d)
            if (dim_ids[d] == dim_id) return d;
        return std::nullopt;
    }

    /// Non-excluded cell values of one group in one dimension, in sample order.
    std::vector<double> values(std::string_view dim_id, std::string_view group) const {
        std::vector<double> out;
        auto d = dim_index(dim_id);
        if (!d) return out;
        for (std::size_t s = 0; s < sample_ids.size(); ++s)
            if (groups[s] == group && !at(s, *d).excluded()) out.push_back(*at(s, *d).value);
        return out;
    }

    std::size_t excluded_count(std::string_view dim_id, std::string_view group) const {
        std::size_t n = 0;
        auto d = dim_index(dim_id);
        if (!d) return 0;
        for (std::size_t s = 0; s < sample_ids.size(); ++s)
            if (groups[s] == group && at(s, *d).excluded()) ++n;
        return n;
    }
};

class IncompleteStoreError : public std::runtime_error {
public:
    IncompleteStoreError(std::string message, std::vector<CellKey> missing)
        : std::runtime_error(std::move(message)), missing_(std::move(missing)) {}
    const std::vector<CellKey>& missing() const { return missing_; }

private:
    std::vector<CellKey> missing_;
};

/// Averages the per-model scores of each (sample, dimension) cell. Under the
/// strict policy any Missing verdict excludes the cell; lenient averages what
/// is available. Every planned triple must have a resolved verdict.
inline ScoreMatrix aggregate_scores(const VerdictStore& store, const CellPlan& plan,
                                    MissingPolicy policy = MissingPolicy::Strict) {
    if (plan.samples.empty() || plan.dim_ids.empty() || plan.model_labels.empty()) {
        throw IncompleteStoreError("nothing to aggregate: empty sample, dimension or model set", {});
    }
    if (store.size() == 0) throw IncompleteStoreError("verdict store is empty", {});

    ScoreMatrix m;
    m.dim_ids = plan.dim_ids;
    m.model_labels = plan.model_labels;
    m.policy = policy;
    for (const auto& [id, group] : plan.samples) {
        m.sample_ids.push_back(id);
        m.groups.push_back(group);
    }

    std::vector<CellKey> missing;
    m.cells.reserve(plan.samples.size() * plan.dim_ids.size());
    for (const auto& [id, group] : plan.samples) {
        for (const auto& dim : plan.dim_ids) {
            MatrixCell cell;
            bool any_missing = false;
            int sum = 0;
            for (const auto& model : plan.model_labels) {
                auto v = store.find(id, dim, model);
                if (!v || !v->resolved()) {
                    missing.emplace_back(id, dim, model);
                    cell.model_scores.emplace_back();
                    continue;
                }
                if (v->scored()) {
                    cell.model_scores.emplace_back(v->score);
                    sum += v->score;
                    ++cell.contributing;
                } else {
                    cell.model_scores.emplace_back();
                    any_missing = true;
                }
            }
            const bool keep = cell.contributing > 0 && (policy == MissingPolicy::Lenient || !any_missing);
            if (keep) cell.value = static_cast<double>(sum) / cell.contributing;
            m.cells.push_back(std::move(cell));
        }
    }
    if (!missing.empty()) {
        std::string msg = fmt::format("verdict store is incomplete: {} unresolved cell(s)", missing.size());
        for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 10); ++i) {
            const auto& [s, d, mdl] = missing[i];
            msg += fmt::format("{} ({}, {}, {})", i == 0 ? ": " : ", ", s, d, mdl);
        }
        if (missing.size() > 10) msg += ", ...";
        throw IncompleteStoreError(msg, std::move(missing));
    }
    return m;
}

/// CSV: sample_id, group, one column per dimension; EXCLUDED cells are empty.
inline std::string matrix_to_csv(const ScoreMatrix& m) {
    std::string out = "sample_id,group";
    for (const auto& d : m.dim_ids) out += "," + d;
    out += "\n";
    for (std::size_t s = 0; s < m.sample_ids.size(); ++s) {
        out += m.sample_ids[s] + "," + m.groups[s];
        for (std::size_t d = 0; d < m.dim_ids.size(); ++d) {
            out += ",";
            if (!m.at(s, d).excluded()) out += fmt::format("{:.4f}", *m.at(s, d).value);
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------

struct StatsOptions {
    MwMethod method = MwMethod::NormalTieCorrected;
    AlphaMetric alpha_metric = AlphaMetric::Interval;
};

struct DimensionStats {
    std::string dim_id;
    std::string group_a;
    std::string group_b;
    GroupSummary a;
    GroupSummary b;
    TestResult test;
    double cliffs_delta = 0;
    AlphaResult alpha;
    std::size_t excluded_a = 0;
    std::size_t excluded_b = 0;
};

class GroupExcludedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Alpha input: one rater row per model, one item per non-excluded cell.
inline RatingGrid rating_grid(const ScoreMatrix& m, std::size_t dim) {
    RatingGrid grid(m.model_labels.size());
    for (std::size_t s = 0; s < m.sample_ids.size(); ++s) {
        const auto& cell = m.at(s, dim);
        if (cell.excluded()) continue;
        for (std::size_t r = 0; r < m.model_labels.size(); ++r) {
            const auto& score = cell.model_scores[r];
            grid[r].push_back(score ? std::optional<double>(*score) : std::nullopt);
        }
    }
    return grid;
}

inline DimensionStats dimension_report(const ScoreMatrix& m, std::string_view dim_id, std::string_view group_a,
                                       std::string_view group_b, const StatsOptions& options = {}) {
    auto d = m.dim_index(dim_id);
    if (!d) throw std::invalid_argument("unknown dimension '" + std::string(dim_id) + "'");
    DimensionStats st;
    st.dim_id = std::string(dim_id);
    st.group_a = std::string(group_a);
    st.group_b = std::string(group_b);
    st.excluded_a = m.excluded_count(dim_id, group_a);
    st.excluded_b = m.excluded_count(dim_id, group_b);

    const auto xs = m.values(dim_id, group_a);
    const auto ys = m.values(dim_id, group_b);
    if (xs.empty() || ys.empty()) {
        throw GroupExcludedError(fmt::format("dimension {}: group '{}' has no non-excluded cells", dim_id,
                                             xs.empty() ? group_a : group_b));
    }
    st.a = group_summary(xs);
    st.b = group_summary(ys);
    st.test = mann_whitney_u(xs, ys, options.method);
    st.cliffs_delta = cliffs_delta(xs, ys);

    auto grid = rating_grid(m, *d);
    if (grid.size() < 2) {
        st.alpha.kind = AlphaResult::Kind::Unavailable;
    } else {
        try {
            st.alpha = krippendorff_alpha(grid, options.alpha_metric);
        } catch (const StatsError&) {
            st.alpha.kind = AlphaResult::Kind::Unavailable;
        }
    }
    return st;
}

}  // namespace coteval
