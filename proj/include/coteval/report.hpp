#pragma once
// Results table (markdown / CSV) and per-dimension box plots (standalone SVG).

#include "coteval/aggregate.hpp"
#include "coteval/hashing.hpp"
#include "coteval/stats.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace coteval {

enum class TableFormat { Markdown, Csv };

struct TableRow {
    std::string dim_id;
    std::string label;                     // e.g. "D3: Naturalness of Reasoning Process"
    std::optional<DimensionStats> stats;   // empty when a group is fully excluded
    std::size_t n_a = 0;
    std::size_t n_b = 0;
};

namespace detail {

inline std::string superscript(int value) {
    static const char* kDigits[] = {"⁰", "¹", "²", "³", "⁴",
                                    "⁵", "⁶", "⁷", "⁸", "⁹"};
    std::string out = value < 0 ? "⁻" : "";
    for (char c : std::to_string(std::abs(value))) out += kDigits[c - '0'];
    return out;
}

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string md_cell(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += '\\';
        out += c;
    }
    return out;
}

}  // namespace detail

/// p < 0.001 in scientific form with one decimal ("2.4×10⁻⁸" / "2.4e-8"),
/// otherwise three decimals ("0.256").
inline std::string format_p(double p, TableFormat format) {
    if (!(p > 0)) return "0";
    if (p >= 0.001) return fmt::format("{:.3f}", p);
    int exponent = static_cast<int>(std::floor(std::log10(p)));
    double mantissa = std::round(p / std::pow(10.0, exponent) * 10.0) / 10.0;
    if (mantissa >= 10.0) {
        mantissa /= 10.0;
        ++exponent;
    }
    if (format == TableFormat::Csv) return fmt::format("{:.1f}e{}", mantissa, exponent);
    return fmt::format("{:.1f}×10{}", mantissa, detail::superscript(exponent));
}

inline std::string format_alpha(const AlphaResult& a) {
    switch (a.kind) {
        case AlphaResult::Kind::Value: return fmt::format("{:+.2f}", a.value);
        case AlphaResult::Kind::Degenerate: return "DEGENERATE";
        case AlphaResult::Kind::Unavailable: return "n/a";
    }
    return "n/a";
}

inline std::string render_table(const std::vector<TableRow>& rows, TableFormat format) {
    const bool md = format == TableFormat::Markdown;
    std::vector<std::string> header =
        md ? std::vector<std::string>{"Dimension", "A Mean", "A Median", "A SD", "B Mean", "B Median", "B SD", "p",
                                      "Cliff's δ", "Krippendorff α", "n_A", "n_B"}
           : std::vector<std::string>{"dimension", "a_mean", "a_median", "a_sd", "b_mean", "b_median", "b_sd", "p",
                                      "cliffs_delta", "krippendorff_alpha", "n_a", "n_b"};

    auto join = [&](const std::vector<std::string>& cells) {
        std::string line;
        if (md) {
            line = "|";
            for (const auto& c : cells) line += " " + detail::md_cell(c) + " |";
        } else {
            for (std::size_t i = 0; i < cells.size(); ++i) line += (i ? "," : "") + detail::csv_field(cells[i]);
        }
        return line + "\n";
    };

    std::string out = join(header);
    if (md) {
        out += "|";
        for (std::size_t i = 0; i < header.size(); ++i) out += i == 0 ? " --- |" : " :---: |";
        out += "\n";
    }
    for (const auto& row : rows) {
        std::vector<std::string> cells{row.label.empty() ? row.dim_id : row.label};
        if (row.stats) {
            const auto& s = *row.stats;
            auto f2 = [](double v) { return fmt::format("{:.2f}", v); };
            cells.insert(cells.end(), {f2(s.a.mean), f2(s.a.median), f2(s.a.sd), f2(s.b.mean), f2(s.b.median),
                                       f2(s.b.sd), format_p(s.test.p_two_sided, format),
                                       fmt::format("{:+.2f}", s.cliffs_delta), format_alpha(s.alpha),
                                       std::to_string(s.test.n_a), std::to_string(s.test.n_b)});
        } else {
            for (int i = 0; i < 9; ++i) cells.emplace_back("EXCLUDED");
            cells.push_back(std::to_string(row.n_a));
            cells.push_back(std::to_string(row.n_b));
        }
        out += join(cells);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Box plots

struct BoxStats {
    double q1 = 0, median = 0, q3 = 0;
    double whisker_low = 0, whisker_high = 0;
    std::vector<double> outliers;
};

/// Linear-interpolation quantile on sorted data (h = (n - 1) q).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Quartiles, whiskers at the most extreme points within 1.5 IQR, outliers beyond.
inline BoxStats box_stats(std::vector<double> values) {
    if (values.empty()) throw StatsError("box_stats: empty sample");
    std::sort(values.begin(), values.end());
    BoxStats b;
    b.q1 = quantile_sorted(values, 0.25);
    b.median = quantile_sorted(values, 0.5);
    b.q3 = quantile_sorted(values, 0.75);
    const double iqr = b.q3 - b.q1;
    const double lo_fence = b.q1 - 1.5 * iqr;
    const double hi_fence = b.q3 + 1.5 * iqr;
    b.whisker_low = b.q1;
    b.whisker_high = b.q3;
    for (double v : values) {
        if (v < lo_fence || v > hi_fence) {
            b.outliers.push_back(v);
            continue;
        }
        b.whisker_low = std::min(b.whisker_low, v);
        b.whisker_high = std::max(b.whisker_high, v);
    }
    return b;
}

inline std::string significance_stars(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

struct BoxplotOptions {
    std::string group_a;
    std::string group_b;
    std::string title;  // defaults to the dimension id
    MwMethod method = MwMethod::NormalTieCorrected;
    std::uint64_t jitter_seed = 0;
    std::optional<std::string> timestamp;  // embedded as a comment when set
    double width = 360;
    double height = 420;
};

namespace detail {

inline std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string comment_safe(std::string_view s) {
    std::string out(s);
    for (std::size_t i; (i = out.find("--")) != std::string::npos;) out.replace(i, 2, "- ");
    return out;
}

}  // namespace detail

/// Standalone SVG: two box groups with jittered points on a 1-5 axis and a
/// significance bracket when p < 0.05. Throws GroupExcludedError when a
/// group has no cells in the dimension.
inline std::string render_boxplot(const ScoreMatrix& m, std::string_view dim_id, const BoxplotOptions& o) {
    const auto xs = m.values(dim_id, o.group_a);
    const auto ys = m.values(dim_id, o.group_b);
    if (xs.empty() || ys.empty()) {
        throw GroupExcludedError(fmt::format("dimension {}: group '{}' has no cells to plot", dim_id,
                                             xs.empty() ? o.group_a : o.group_b));
    }
    const double p = mann_whitney_u(xs, ys, o.method).p_two_sided;
    const auto stars = significance_stars(p);

    const double left = 56, right = o.width - 20, top = 64, bottom = o.height - 48;
    auto y_of = [&](double score) { return bottom - (score - 1.0) / 4.0 * (bottom - top); };
    const double slot = (right - left) / 2.0;
    const double box_w = slot * 0.45;

    std::string svg;
    svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" height=\"{1:.0f}\" viewBox=\"0 0 {0:.0f} {1:.0f}\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n",
        o.width, o.height);
    if (o.timestamp) svg += "<!-- generated " + detail::comment_safe(*o.timestamp) + " -->\n";
    const std::string title = o.title.empty() ? std::string(dim_id) : o.title;
    svg += "<title>" + detail::xml_escape(title) + "</title>\n";
    svg += fmt::format("<rect x=\"0\" y=\"0\" width=\"{:.0f}\" height=\"{:.0f}\" fill=\"#ffffff\"/>\n", o.width,
                       o.height);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"20\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>\n",
                       o.width / 2, detail::xml_escape(title));

    svg += "<g class=\"axis\" stroke=\"#444444\">\n";
    svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\"/>\n", left, top, bottom);
    for (int t = 1; t <= 5; ++t) {
        svg += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n", left - 4, y_of(t), left,
                           y_of(t));
        svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\" stroke=\"none\">{}</text>\n", left - 8,
                           y_of(t) + 4, t);
    }
    svg += fmt::format("<text x=\"16\" y=\"{:.2f}\" text-anchor=\"middle\" stroke=\"none\" "
                       "transform=\"rotate(-90 16 {:.2f})\">Score</text>\n",
                       (top + bottom) / 2, (top + bottom) / 2);
    svg += "</g>\n";

    struct Series {
        const std::vector<double>* values;
        std::string name;
        std::string colour;
    };
    const Series series[2] = {{&xs, o.group_a, "#1f77b4"}, {&ys, o.group_b, "#ff7f0e"}};
    for (int g = 0; g < 2; ++g) {
        const auto& s = series[g];
        const auto b = box_stats(*s.values);
        const double cx = left + slot * (g + 0.5);
        const double x0 = cx - box_w / 2, x1 = cx + box_w / 2;

        svg += fmt::format("<g class=\"box-group\" data-group=\"{}\" data-n=\"{}\">\n", detail::xml_escape(s.name),
                           s.values->size());
        svg += fmt::format("<line class=\"whisker\" x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" "
                           "stroke=\"#333333\"/>\n",
                           cx, y_of(b.whisker_low), y_of(b.q1));
        svg += fmt::format("<line class=\"whisker\" x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" "
                           "stroke=\"#333333\"/>\n",
                           cx, y_of(b.q3), y_of(b.whisker_high));
        for (double w : {b.whisker_low, b.whisker_high}) {
            svg += fmt::format("<line class=\"cap\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" "
                               "stroke=\"#333333\"/>\n",
                               cx - box_w / 4, y_of(w), cx + box_w / 4, y_of(w));
        }
        if (s.values->size() == 1 || b.q3 == b.q1) {
            svg += fmt::format("<line class=\"degenerate-box\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" "
                               "stroke=\"{}\" stroke-width=\"3\"/>\n",
                               x0, y_of(b.median), x1, y_of(b.median), s.colour);
        } else {
            svg += fmt::format("<rect class=\"box\" x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" "
                               "fill=\"{}\" fill-opacity=\"0.35\" stroke=\"{}\"/>\n",
                               x0, y_of(b.q3), box_w, y_of(b.q1) - y_of(b.q3), s.colour, s.colour);
            svg += fmt::format("<line class=\"median\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" "
                               "stroke=\"#000000\" stroke-width=\"2\"/>\n",
                               x0, y_of(b.median), x1, y_of(b.median));
        }
        for (double v : b.outliers) {
            svg += fmt::format("<circle class=\"outlier\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"4\" fill=\"none\" "
                               "stroke=\"#333333\"/>\n",
                               cx, y_of(v));
        }
        for (std::size_t i = 0; i < s.values->size(); ++i) {
            auto bits = mix64(seed_from(fmt::format("{}/{}/{}", dim_id, g, i), o.jitter_seed));
            const double dx = (unit_interval(bits) - 0.5) * box_w * 0.8;
            svg += fmt::format("<circle class=\"point\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\" "
                               "fill-opacity=\"0.8\"/>\n",
                               cx + dx, y_of((*s.values)[i]), s.colour);
        }
        svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{} (n={})</text>\n", cx, bottom + 24,
                           detail::xml_escape(s.name), s.values->size());
        svg += "</g>\n";
    }

    if (!stars.empty()) {
        const double ya = top - 18;
        const double xa = left + slot * 0.5, xb = left + slot * 1.5;
        svg += fmt::format("<g class=\"significance\" data-p=\"{}\">\n", format_p(p, TableFormat::Csv));
        svg += fmt::format("<path d=\"M {0:.2f} {1:.2f} L {0:.2f} {2:.2f} L {3:.2f} {2:.2f} L {3:.2f} {1:.2f}\" "
                           "fill=\"none\" stroke=\"#000000\"/>\n",
                           xa, ya + 8, ya, xb);
        svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", (xa + xb) / 2, ya - 4,
                           stars);
        svg += "</g>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace coteval
