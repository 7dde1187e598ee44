#include "coteval/report.hpp"
#include "synthetic.hpp"

#include <gtest/gtest.h>

using namespace coteval;

namespace {

DimensionStats stats_with(double p, AlphaResult alpha) {
    DimensionStats s;
    s.dim_id = "D3";
    s.a = group_summary(std::vector<double>{4.5, 5.0, 5.0, 4.5});
    s.b = group_summary(std::vector<double>{1.0, 1.0, 2.0, 2.0});
    s.test.p_two_sided = p;
    s.test.n_a = 20;
    s.test.n_b = 20;
    s.cliffs_delta = 1.0;
    s.alpha = alpha;
    return s;
}

AlphaResult alpha_value(double v) {
    AlphaResult a;
    a.value = v;
    return a;
}

AlphaResult alpha_degenerate() {
    AlphaResult a;
    a.kind = AlphaResult::Kind::Degenerate;
    return a;
}

BoxplotOptions options() {
    BoxplotOptions o;
    o.group_a = "A";
    o.group_b = "B";
    o.jitter_seed = 1;
    return o;
}

}  // namespace

TEST(FormatP, ThreeDecimalsOrScientific) {
    EXPECT_EQ(format_p(0.2561, TableFormat::Csv), "0.256");
    EXPECT_EQ(format_p(0.001, TableFormat::Csv), "0.001");
    EXPECT_EQ(format_p(2.4e-8, TableFormat::Csv), "2.4e-8");
    EXPECT_EQ(format_p(2.4e-8, TableFormat::Markdown), "2.4×10⁻⁸");
    EXPECT_EQ(format_p(9.96e-5, TableFormat::Csv), "1.0e-4");
    EXPECT_EQ(format_p(1.2e-12, TableFormat::Markdown), "1.2×10⁻¹²");
    EXPECT_EQ(format_p(0.0, TableFormat::Csv), "0");
}

TEST(FormatAlpha, ValueDegenerateUnavailable) {
    EXPECT_EQ(format_alpha(alpha_value(0.412)), "+0.41");
    EXPECT_EQ(format_alpha(alpha_value(-0.05)), "-0.05");
    EXPECT_EQ(format_alpha(alpha_degenerate()), "DEGENERATE");
    AlphaResult na;
    na.kind = AlphaResult::Kind::Unavailable;
    EXPECT_EQ(format_alpha(na), "n/a");
}

TEST(Table, CsvRowLayout) {
    std::vector<TableRow> rows{{"D3", "D3", stats_with(2.4e-8, alpha_degenerate()), 20, 20},
                               {"D1", "D1", stats_with(0.256, alpha_value(0.5)), 20, 20}};
    auto csv = render_table(rows, TableFormat::Csv);
    EXPECT_EQ(csv,
              "dimension,a_mean,a_median,a_sd,b_mean,b_median,b_sd,p,cliffs_delta,krippendorff_alpha,n_a,n_b\n"
              "D3,4.75,4.75,0.29,1.50,1.50,0.58,2.4e-8,+1.00,DEGENERATE,20,20\n"
              "D1,4.75,4.75,0.29,1.50,1.50,0.58,0.256,+1.00,+0.50,20,20\n");
}

TEST(Table, MarkdownHeaderAndExcludedRow) {
    std::vector<TableRow> rows{{"D5", "D5: Counterfactual Density", std::nullopt, 0, 20}};
    auto md = render_table(rows, TableFormat::Markdown);
    EXPECT_EQ(md.substr(0, md.find('\n')),
              "| Dimension | A Mean | A Median | A SD | B Mean | B Median | B SD | p | Cliff's δ | Krippendorff α | "
              "n_A | n_B |");
    EXPECT_NE(md.find("| D5: Counterfactual Density | EXCLUDED |"), std::string::npos);
    EXPECT_NE(md.find("| EXCLUDED | 0 | 20 |"), std::string::npos);
}

TEST(BoxStats, QuantilesAndOutliers) {
    auto b = box_stats({1, 2, 3, 4, 100});
    EXPECT_DOUBLE_EQ(b.q1, 2);
    EXPECT_DOUBLE_EQ(b.median, 3);
    EXPECT_DOUBLE_EQ(b.q3, 4);
    EXPECT_DOUBLE_EQ(b.whisker_high, 4);
    EXPECT_DOUBLE_EQ(b.whisker_low, 1);
    ASSERT_EQ(b.outliers.size(), 1u);
    EXPECT_DOUBLE_EQ(b.outliers[0], 100);
}

TEST(Stars, Thresholds) {
    EXPECT_EQ(significance_stars(0.0009), "***");
    EXPECT_EQ(significance_stars(0.001), "**");
    EXPECT_EQ(significance_stars(0.049), "*");
    EXPECT_EQ(significance_stars(0.05), "");
}

TEST(Boxplot, SeparatedGroupsGetTripleStar) {
    auto [a, b] = synthetic::separated_d3(3);
    auto svg = render_boxplot(synthetic::matrix(a, b, "D3"), "D3", options());
    auto s = synthetic::inspect_svg(svg);
    EXPECT_TRUE(s.well_formed) << s.error;
    EXPECT_EQ(s.box_groups, 2);
    EXPECT_TRUE(s.triple_star);
    EXPECT_NE(svg.find("#1f77b4"), std::string::npos);
    EXPECT_NE(svg.find("#ff7f0e"), std::string::npos);
}

TEST(Boxplot, OverlappingGroupsHaveNoBracket) {
    auto svg = render_boxplot(synthetic::matrix({1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}), "D1", options());
    auto s = synthetic::inspect_svg(svg);
    EXPECT_TRUE(s.well_formed);
    EXPECT_FALSE(s.triple_star);
    EXPECT_EQ(svg.find("significance"), std::string::npos);
}

TEST(Boxplot, SingleCellGroupDrawsDegenerateBox) {
    auto svg = render_boxplot(synthetic::matrix({3}, {1, 2, 2}), "D1", options());
    EXPECT_TRUE(synthetic::inspect_svg(svg).well_formed);
    EXPECT_NE(svg.find("degenerate-box"), std::string::npos);
    EXPECT_NE(svg.find("data-n=\"1\""), std::string::npos);
}

TEST(Boxplot, TimestampCommentAndDeterminism) {
    auto m = synthetic::matrix({1, 2, 3}, {3, 4, 5});
    auto o = options();
    EXPECT_EQ(render_boxplot(m, "D1", o), render_boxplot(m, "D1", o));
    EXPECT_EQ(render_boxplot(m, "D1", o).find("<!--"), std::string::npos);
    o.timestamp = "2026-01-01T00:00:00Z";
    auto svg = render_boxplot(m, "D1", o);
    EXPECT_NE(svg.find("<!-- generated 2026-01-01T00:00:00Z -->"), std::string::npos);
    EXPECT_TRUE(synthetic::inspect_svg(svg).well_formed);
    o.jitter_seed = 2;
    o.timestamp.reset();
    EXPECT_NE(render_boxplot(m, "D1", o), render_boxplot(m, "D1", options()));
}

TEST(Boxplot, EscapesTitleAndRejectsEmptyGroup) {
    auto o = options();
    o.title = "D1 <A & B>";
    EXPECT_TRUE(synthetic::inspect_svg(render_boxplot(synthetic::matrix({1, 2}, {2, 3}), "D1", o)).well_formed);
    EXPECT_THROW(render_boxplot(synthetic::matrix({}, {2, 3}), "D1", o), GroupExcludedError);
}

TEST(BoxplotProperty, StarsIffPBelowThousandth) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 60; ++trial) {
        std::vector<double> a(4 + rng() % 17), b(4 + rng() % 17);
        const int shift = static_cast<int>(rng() % 4);
        for (auto& v : a) v = std::min(5.0, 1.0 + static_cast<double>(rng() % 3 + shift));
        for (auto& v : b) v = 1.0 + static_cast<double>(rng() % 3);
        auto s = synthetic::inspect_svg(render_boxplot(synthetic::matrix(a, b), "D1", options()));
        const double p = mann_whitney_u(a, b).p_two_sided;
        ASSERT_TRUE(s.well_formed);
        ASSERT_EQ(s.box_groups, 2);
        ASSERT_EQ(s.triple_star, p < 0.001) << p;
    }
}
