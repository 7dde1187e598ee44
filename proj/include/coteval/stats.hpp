#pragma once
// Nonparametric statistics: group summaries, Mann-Whitney U (tie-corrected
// normal approximation or exact enumeration), Cliff's delta, and
// Krippendorff's alpha (interval or ordinal metric).
//
// Every routine sums in a fixed order so results are reproducible bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace coteval {

class StatsError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------

struct GroupSummary {
    std::size_t n = 0;
    double mean = 0;
    double median = 0;
    double sd = 0;  // sample sd (n-1); 0 when n == 1
    bool sd_defined = false;
};

inline GroupSummary group_summary(std::span<const double> values) {
    if (values.empty()) throw StatsError("group_summary: empty sample");
    GroupSummary s;
    s.n = values.size();
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.n);

    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = s.n / 2;
    s.median = s.n % 2 == 1 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2.0;

    if (s.n > 1) {
        double ss = 0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
        s.sd_defined = true;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

enum class MwMethod { NormalTieCorrected, ExactEnumeration };

inline std::string_view to_string(MwMethod m) {
    return m == MwMethod::NormalTieCorrected ? "normal_tie_corrected" : "exact_enumeration";
}

struct TestResult {
    double u_statistic = 0;  // U for the first sample: #(x > y) + 0.5 #(x == y)
    double p_two_sided = 1;
    MwMethod method = MwMethod::NormalTieCorrected;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    double z = 0;  // normal method only
};

inline constexpr std::uint64_t kExactEnumerationLimit = 2'000'000;

/// C(n, k), saturating at UINT64_MAX.
inline std::uint64_t binomial(std::size_t n, std::size_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    std::uint64_t r = 1;
    for (std::size_t i = 1; i <= k; ++i) {
        // r * (n - k + i) / i stays integral at every step
        const std::uint64_t num = n - k + i;
        if (r > UINT64_MAX / num) return UINT64_MAX;
        r = r * num / i;
    }
    return r;
}

namespace detail {

/// Midranks (1-based) of the pooled sample, in input order.
inline std::vector<double> midranks(std::span<const double> pooled) {
    std::vector<std::size_t> order(pooled.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
    std::vector<double> ranks(pooled.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Sum over tie groups of (t^3 - t).
inline double tie_term(std::span<const double> pooled) {
    std::vector<double> sorted(pooled.begin(), pooled.end());
    std::sort(sorted.begin(), sorted.end());
    double term = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i);
        term += t * t * t - t;
        i = j;
    }
    return term;
}

}  // namespace detail

inline TestResult mann_whitney_u(std::span<const double> xs, std::span<const double> ys,
                                 MwMethod method = MwMethod::NormalTieCorrected) {
    if (xs.empty() || ys.empty()) throw StatsError("mann_whitney_u: empty sample");
    const std::size_t na = xs.size();
    const std::size_t nb = ys.size();
    const std::size_t n = na + nb;

    std::vector<double> pooled(xs.begin(), xs.end());
    pooled.insert(pooled.end(), ys.begin(), ys.end());
    const auto ranks = detail::midranks(pooled);

    double rank_sum = 0;
    for (std::size_t i = 0; i < na; ++i) rank_sum += ranks[i];
    const double base = static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;

    TestResult r;
    r.method = method;
    r.n_a = na;
    r.n_b = nb;
    r.u_statistic = rank_sum - base;
    const double mu = static_cast<double>(na) * static_cast<double>(nb) / 2.0;

    if (method == MwMethod::NormalTieCorrected) {
        const double nn = static_cast<double>(n);
        const double var = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                           ((nn + 1.0) - (n > 1 ? detail::tie_term(pooled) / (nn * (nn - 1.0)) : 0.0));
        if (var <= 0) {
            r.z = 0;
            r.p_two_sided = 1.0;
        } else {
            r.z = (r.u_statistic - mu) / std::sqrt(var);
            r.p_two_sided = std::min(1.0, std::erfc(std::fabs(r.z) / std::sqrt(2.0)));
        }
        return r;
    }

    const auto total = binomial(n, na);
    if (total > kExactEnumerationLimit) {
        throw StatsError("mann_whitney_u: exact enumeration needs " + std::to_string(total) +
                         " assignments, above the limit of " + std::to_string(kExactEnumerationLimit));
    }
    // Enumerate rank-sum over every size-na subset of the pooled midranks.
    // Midranks are multiples of 0.5, so work in doubled integer units.
    std::vector<long long> twice(n);
    for (std::size_t i = 0; i < n; ++i) twice[i] = std::llround(ranks[i] * 2.0);
    const long long observed_dev = std::llabs(std::llround(rank_sum * 2.0) - std::llround((base + mu) * 2.0));
    const long long center = std::llround((base + mu) * 2.0);

    std::uint64_t extreme = 0;
    std::uint64_t count = 0;
    std::vector<std::size_t> idx(na);
    for (std::size_t i = 0; i < na; ++i) idx[i] = i;
    while (true) {
        long long s = 0;
        for (std::size_t i : idx) s += twice[i];
        ++count;
        if (std::llabs(s - center) >= observed_dev) ++extreme;
        // next combination in lexicographic order
        std::size_t k = na;
        while (k > 0 && idx[k - 1] == n - na + (k - 1)) --k;
        if (k == 0) break;
        ++idx[k - 1];
        for (std::size_t j = k; j < na; ++j) idx[j] = idx[j - 1] + 1;
    }
    r.p_two_sided = static_cast<double>(extreme) / static_cast<double>(count);
    return r;
}

// ---------------------------------------------------------------------------
// Cliff's delta

/// (#{x > y} - #{x < y}) / (n_a n_b), counted exactly with sorted lookups.
inline double cliffs_delta(std::span<const double> xs, std::span<const double> ys) {
    if (xs.empty() || ys.empty()) throw StatsError("cliffs_delta: empty sample");
    std::vector<double> sorted(ys.begin(), ys.end());
    std::sort(sorted.begin(), sorted.end());
    long long greater = 0;
    long long less = 0;
    for (double x : xs) {
        greater += std::lower_bound(sorted.begin(), sorted.end(), x) - sorted.begin();
        less += sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), x);
    }
    return static_cast<double>(greater - less) /
           (static_cast<double>(xs.size()) * static_cast<double>(ys.size()));
}

// ---------------------------------------------------------------------------
// Krippendorff's alpha

enum class AlphaMetric { Interval, Ordinal };

inline std::string_view to_string(AlphaMetric m) { return m == AlphaMetric::Interval ? "interval" : "ordinal"; }

struct AlphaResult {
    enum class Kind { Value, Degenerate, Unavailable };
    Kind kind = Kind::Value;
    double value = 0;
    double observed_disagreement = 0;
    double expected_disagreement = 0;
    std::size_t pairable_values = 0;

    bool degenerate() const { return kind == Kind::Degenerate; }
    bool has_value() const { return kind == Kind::Value; }
};

/// ratings[rater][item]; std::nullopt marks a missing rating.
using RatingGrid = std::vector<std::vector<std::optional<double>>>;

/// Alpha = 1 - D_o / D_e from the coincidence matrix. Items with fewer than
/// two ratings are not pairable and drop out. D_e == 0 gives Degenerate.
inline AlphaResult krippendorff_alpha(const RatingGrid& ratings, AlphaMetric metric = AlphaMetric::Interval) {
    if (ratings.size() < 2) throw StatsError("krippendorff_alpha: need at least 2 raters");
    const std::size_t items = ratings.front().size();
    for (const auto& row : ratings)
        if (row.size() != items) throw StatsError("krippendorff_alpha: ragged rating grid");

    // Distinct values and the coincidence matrix over them.
    std::map<double, std::size_t> value_index;
    for (const auto& row : ratings)
        for (const auto& r : row)
            if (r) value_index.emplace(*r, 0);
    std::vector<double> values;
    for (auto& [v, idx] : value_index) {
        idx = values.size();
        values.push_back(v);
    }
    const std::size_t k = values.size();
    std::vector<double> coincidence(k * k, 0.0);

    bool any_pairable = false;
    std::vector<std::size_t> present;
    for (std::size_t u = 0; u < items; ++u) {
        present.clear();
        for (const auto& row : ratings)
            if (row[u]) present.push_back(value_index.at(*row[u]));
        const std::size_t m = present.size();
        if (m < 2) continue;
        any_pairable = true;
        const double w = 1.0 / static_cast<double>(m - 1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                if (i != j) coincidence[present[i] * k + present[j]] += w;
    }
    if (!any_pairable) throw StatsError("krippendorff_alpha: no item has two or more ratings");

    std::vector<double> marginal(k, 0.0);
    double n = 0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < k; ++j) marginal[c] += coincidence[c * k + j];
        n += marginal[c];
    }

    auto delta2 = [&](std::size_t c, std::size_t j) {
        if (metric == AlphaMetric::Interval) {
            const double d = values[c] - values[j];
            return d * d;
        }
        const std::size_t lo = std::min(c, j);
        const std::size_t hi = std::max(c, j);
        double s = 0;
        for (std::size_t g = lo; g <= hi; ++g) s += marginal[g];
        s -= (marginal[c] + marginal[j]) / 2.0;
        return s * s;
    };

    double observed = 0;
    double expected = 0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
            const double d = delta2(c, j);
            observed += coincidence[c * k + j] * d;
            expected += marginal[c] * marginal[j] * d;
        }
    }

    AlphaResult res;
    res.pairable_values = static_cast<std::size_t>(std::llround(n));
    res.observed_disagreement = observed / n;
    res.expected_disagreement = n > 1 ? expected / (n * (n - 1.0)) : 0.0;
    if (res.expected_disagreement <= 0.0) {
        res.kind = AlphaResult::Kind::Degenerate;
        return res;
    }
    res.value = 1.0 - res.observed_disagreement / res.expected_disagreement;
    return res;
}

}  // namespace coteval
