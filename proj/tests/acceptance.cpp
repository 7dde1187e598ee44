// Acceptance checks: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include "coteval/coteval.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

#include <fmt/format.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <atomic>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace coteval;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and limits.
constexpr double kMwPTolerance = 0.05;
constexpr double kMwPFloor = 0.05;
constexpr double kAlphaTolerance = 1e-9;
constexpr double kSeparationPBound = 1e-6;
constexpr double kSignificanceStars = 0.001;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double limit_seconds;
    std::function<Outcome()> check;
};

// ---------------------------------------------------------------------------

Outcome mann_whitney_oracle() {
    std::mt19937_64 rng(20240601);
    int instances = 0, u_mismatch = 0, p_checked = 0, p_violations = 0;
    double worst = 0;
    for (; instances < 400; ++instances) {
        auto xs = oracle::random_scores(rng, 1 + rng() % 8);
        auto ys = oracle::random_scores(rng, 1 + rng() % 8);
        auto normal = mann_whitney_u(xs, ys, MwMethod::NormalTieCorrected);
        auto exact = mann_whitney_u(xs, ys, MwMethod::ExactEnumeration);
        const double u = oracle::mw_u_pairs(xs, ys);
        if (normal.u_statistic != exact.u_statistic || normal.u_statistic != u) ++u_mismatch;
        const double pe = oracle::mw_exact_p(xs, ys);
        if (std::fabs(pe - exact.p_two_sided) > 1e-12) ++u_mismatch;
        if (pe >= kMwPFloor) {
            ++p_checked;
            const double gap = std::fabs(normal.p_two_sided - pe);
            worst = std::max(worst, gap);
            if (gap > kMwPTolerance) ++p_violations;
        }
    }
    return {u_mismatch == 0 && p_violations == 0,
            fmt::format("{} instances; U/exact-p mismatches {}; normal-vs-exact p gap > {} in {}/{} eligible "
                        "(worst {:.3f})",
                        instances, u_mismatch, kMwPTolerance, p_violations, p_checked, worst)};
}

Outcome cliffs_oracle() {
    std::mt19937_64 rng(20240602);
    int instances = 0, mismatch = 0, asym = 0;
    for (; instances < 600; ++instances) {
        auto xs = oracle::random_scores(rng, 1 + rng() % 15);
        auto ys = oracle::random_scores(rng, 1 + rng() % 15);
        const double d = cliffs_delta(xs, ys);
        if (d != oracle::cliffs_delta_pairs(xs, ys)) ++mismatch;
        if (d != -cliffs_delta(ys, xs)) ++asym;
    }
    return {mismatch == 0 && asym == 0,
            fmt::format("{} instances; mismatches {}; antisymmetry failures {}", instances, mismatch, asym)};
}

Outcome alpha_oracle() {
    std::mt19937_64 rng(20240603);
    std::bernoulli_distribution missing(0.10);
    int grids = 0, compared = 0, bad = 0;
    double worst = 0;
    while (grids < 250) {
        const std::size_t raters = 2 + rng() % 3;
        const std::size_t items = 5 + rng() % 36;
        RatingGrid g(raters, std::vector<std::optional<double>>(items));
        for (auto& row : g)
            for (auto& cell : row)
                if (!missing(rng)) cell = static_cast<double>(1 + rng() % 5);
        ++grids;
        for (auto metric : {AlphaMetric::Interval, AlphaMetric::Ordinal}) {
            auto want = oracle::krippendorff(
                g, metric == AlphaMetric::Interval ? oracle::Metric::Interval : oracle::Metric::Ordinal);
            AlphaResult got;
            try {
                got = krippendorff_alpha(g, metric);
            } catch (const StatsError&) {
                ++bad;
                continue;
            }
            if (got.degenerate() != !want.has_value()) {
                ++bad;
                continue;
            }
            if (want) {
                ++compared;
                worst = std::max(worst, std::fabs(got.value - *want));
                if (std::fabs(got.value - *want) > kAlphaTolerance) ++bad;
            }
        }
    }
    int perfect_bad = 0, constant_bad = 0;
    for (int t = 0; t < 50; ++t) {
        const std::size_t raters = 2 + rng() % 3, items = 5 + rng() % 36;
        std::vector<std::optional<double>> row(items);
        for (std::size_t i = 0; i < items; ++i) row[i] = static_cast<double>(1 + i % 5);
        RatingGrid perfect(raters, row);
        for (auto m : {AlphaMetric::Interval, AlphaMetric::Ordinal}) {
            auto a = krippendorff_alpha(perfect, m);
            if (!a.has_value() || a.value != 1.0) ++perfect_bad;
        }
        RatingGrid constant(raters, std::vector<std::optional<double>>(items, static_cast<double>(1 + t % 5)));
        if (!krippendorff_alpha(constant).degenerate()) ++constant_bad;
    }
    return {bad == 0 && perfect_bad == 0 && constant_bad == 0,
            fmt::format("{} grids, {} values compared (worst diff {:.1e}); mismatches {}; perfect != 1.0: {}; "
                        "constant not DEGENERATE: {}",
                        grids, compared, worst, bad, perfect_bad, constant_bad)};
}

Outcome separation() {
    auto [a, b] = synthetic::separated_d3(20240604);
    auto m = synthetic::matrix(a, b, "D3");
    auto st = dimension_report(m, "D3", "A", "B");
    const bool ok = st.cliffs_delta == 1.0 && st.test.p_two_sided < kSeparationPBound &&
                    st.test.method == MwMethod::NormalTieCorrected;
    return {ok, fmt::format("delta {:+.2f}, p {} (bound {:.0e})", st.cliffs_delta,
                            format_p(st.test.p_two_sided, TableFormat::Csv), kSeparationPBound)};
}

Outcome exclusion() {
    VerdictStore store;
    CellPlan plan;
    for (int i = 0; i < 20; ++i) plan.samples.emplace_back(fmt::format("a{:02}", i), "A");
    for (int i = 0; i < 20; ++i) plan.samples.emplace_back(fmt::format("b{:02}", i), "B");
    plan.dim_ids = {"D1", "D2", "D3", "D4", "D5"};
    plan.model_labels = {"m1", "m2", "m3"};
    std::mt19937_64 rng(20240605);
    for (const auto& [id, group] : plan.samples)
        for (const auto& d : plan.dim_ids)
            for (const auto& mdl : plan.model_labels) {
                JudgeVerdict v{id, d, mdl, VerdictStatus::Scored, 1 + static_cast<int>(rng() % 5), "", 1, "h", "", ""};
                if (d == "D4" && mdl == "m2" && (id == "a03" || id == "a17")) {
                    v.status = VerdictStatus::Missing;
                    v.score = 0;
                    v.attempts = 4;
                }
                store.append(v);
            }
    auto m = aggregate_scores(store, plan, MissingPolicy::Strict);
    auto d4 = dimension_report(m, "D4", "A", "B");
    auto d1 = dimension_report(m, "D1", "A", "B");
    const bool ok = d4.a.n == 18 && d4.b.n == 20 && d4.excluded_a == 2 && d1.a.n == 20 && d4.test.n_a == 18;
    return {ok, fmt::format("D4 n_a {} (excluded {}), n_b {}; D1 n_a {}", d4.a.n, d4.excluded_a, d4.b.n, d1.a.n)};
}

// ---------------------------------------------------------------------------
// End-to-end mock run

Corpus synthetic_corpus() {
    Corpus c;
    c.groups = {"A", "B"};
    const std::vector<std::string> topics{"the lighthouse scene", "the ending", "the villain's motive",
                                          "the second act", "the opening image"};
    for (int i = 0; i < 40; ++i) {
        CotSample s;
        const bool a = i < 20;
        s.id = fmt::format("{}{:03}", a ? "x" : "y", i + 1);
        s.group = a ? "A" : "B";
        const auto& topic = topics[static_cast<std::size_t>(i) % topics.size()];
        if (a) {
            s.cot_body = fmt::format(
                "Start with {}. It must carry the theme because it repeats the storm. Hold on, that is too quick. "
                "What if the storm were absent? Then the scene would have no pressure. Draft {}.",
                topic, i);
        } else {
            s.cot_body = fmt::format(
                "Consider {}. The scene works because the storm echoes the conflict. In summary, the choice is "
                "sound. Version {}.",
                topic, i);
        }
        s.preamble = "Short story critique.";
        c.samples.push_back(std::move(s));
    }
    return c;
}

MockJudgeOptions mock_options() {
    MockJudgeOptions o;
    o.seed = 424242;
    o.parse_failure_rate = 0.05;
    o.bias_table = {{{"Naturalness of Reasoning Process", "Hold on"}, {0, 0, 0, 1, 5}},
                    {{"Naturalness of Reasoning Process", "In summary"}, {5, 2, 0, 0, 0}}};
    return o;
}

/// Forwards calls until the budget runs out, then aborts the batch with a
/// non-transport error, like a process kill between appends.
class KillSwitch final : public JudgeTransport {
public:
    KillSwitch(JudgeTransport& inner, std::size_t budget) : inner_(inner), budget_(budget) {}
    std::string complete(const JudgeEndpoint& e, std::string_view prompt) override {
        if (calls_.fetch_add(1) >= budget_) throw std::runtime_error("killed");
        return inner_.complete(e, prompt);
    }

private:
    JudgeTransport& inner_;
    std::size_t budget_;
    std::atomic<std::size_t> calls_{0};
};

std::vector<JudgeEndpoint> three_endpoints() {
    std::vector<JudgeEndpoint> eps;
    for (auto label : {"judge_one", "judge_two", "judge_three"}) {
        JudgeEndpoint e;
        e.label = label;
        e.model_id = label;
        eps.push_back(e);
    }
    return eps;
}

Outcome end_to_end() {
    const auto root = fs::temp_directory_path() / "coteval_acceptance_e2e";
    fs::remove_all(root);
    const auto corpus = synthetic_corpus();
    const auto rubric = default_rubric();
    const auto endpoints = three_endpoints();
    const auto plan = make_plan(corpus, rubric, endpoints);
    BatchOptions opts;
    opts.limit = 4;
    opts.retry = TransportRetryPolicy::no_wait();

    // uninterrupted reference run
    MockJudge mock(mock_options());
    RecordingTransport recorder(mock);
    auto store = VerdictStore::open(root / "full");
    auto summary = run_batch(corpus, rubric, endpoints, recorder, store, opts);
    std::size_t files = 0, lines = 0;
    for (const auto& e : fs::directory_iterator(root / "full" / "verdicts")) {
        if (e.path().extension() != ".jsonl") continue;
        ++files;
        std::ifstream in(e.path());
        for (std::string l; std::getline(in, l);) ++lines;
    }
    std::set<std::pair<std::string, std::string>> distinct_prompts;
    std::size_t leaks = 0;
    auto blocklist = rubric.blocklist;
    for (const auto& p : recorder.prompts()) {
        leaks += check_blinding(p, blocklist).size();
        for (const auto& s : corpus.samples)
            if (p.find(s.id) != std::string::npos) ++leaks;
    }
    for (const auto& v : store.records()) distinct_prompts.emplace(v.sample_id, v.dim_id);
    const auto reference_csv = matrix_to_csv(aggregate_scores(store, plan));

    // interrupted run, then resume with a fresh judge
    std::mt19937_64 rng(std::random_device{}());
    const std::size_t kill_at = 1 + rng() % 598;
    {
        MockJudge first(mock_options());
        KillSwitch kill(first, kill_at);
        auto partial = VerdictStore::open(root / "resumed");
        try {
            run_batch(corpus, rubric, endpoints, kill, partial, opts);
        } catch (const std::runtime_error&) {
        }
    }
    {
        // simulate a write torn by the kill
        std::ofstream torn(root / "resumed" / "verdicts" / VerdictStore::archive_name("judge_two", "D3"),
                           std::ios::app);
        torn << R"({"sample_id":"y040","dim_id":"D3","model_lab)";
    }
    MockJudge second(mock_options());
    auto resumed = VerdictStore::open(root / "resumed");
    const auto before = resumed.size();
    auto resume_summary = run_batch(corpus, rubric, endpoints, second, resumed, opts);
    const auto resumed_csv = matrix_to_csv(aggregate_scores(resumed, plan));
    fs::remove_all(root);

    const bool ok = summary.planned == 600 && store.size() == 600 && files == 15 && lines == 600 &&
                    distinct_prompts.size() == 200 && recorder.prompts().size() >= 600 && leaks == 0 &&
                    resume_summary.skipped == before && before + resume_summary.issued == 600 &&
                    resumed_csv == reference_csv;
    return {ok, fmt::format("{} verdicts in {} archives ({} lines); {} prompts swept, {} leaks; killed after {} "
                            "calls, {} kept, {} re-issued; matrix CSV {}",
                            store.size(), files, lines, recorder.prompts().size(), leaks, kill_at, before,
                            resume_summary.issued, resumed_csv == reference_csv ? "identical" : "DIFFERS")};
}

// ---------------------------------------------------------------------------

Outcome retry_semantics() {
    const std::string ok = R"({"score": 4, "rationale": "clear"})";
    const std::vector<std::string> junk{"no json here", R"({"score": 7, "rationale": "r"})",
                                        R"({"score": 2.5, "rationale": "r"})", R"({"rationale": "r"})"};
    ScoringPrompt prompt{"D1", "s1", "prompt", "h"};
    JudgeEndpoint e;
    e.label = "scripted";
    int bad = 0;
    std::string detail;
    for (int k = 1; k <= 4; ++k) {
        std::vector<std::string> script(junk.begin(), junk.begin() + (k - 1));
        script.push_back(ok);
        ScriptedTransport t(script);
        auto v = evaluate_one(prompt, e, t, TransportRetryPolicy::no_wait());
        if (!v.scored() || v.score != 4 || v.attempts != k) ++bad;
        detail += fmt::format("k={}:{}/{} ", k, to_string(v.status), v.attempts);
    }
    ScriptedTransport fail(junk);
    auto v = evaluate_one(prompt, e, fail, TransportRetryPolicy::no_wait());
    if (v.status != VerdictStatus::Missing || v.attempts != 4 || fail.calls() != 4) ++bad;
    detail += fmt::format("4 failures:{}/{}", to_string(v.status), v.attempts);

    const std::string F(ScriptedTransport::kTransportFailure);
    ScriptedTransport flaky({F, junk[0], F, F, ok});
    auto w = evaluate_one(prompt, e, flaky, TransportRetryPolicy::no_wait());
    if (!w.scored() || w.attempts != 2) ++bad;
    return {bad == 0, detail};
}

Outcome density_fixtures() {
    std::ifstream in(fs::path(COTEVAL_FIXTURES) / "cfdensity_oracle.json");
    auto fx = nlohmann::json::parse(in);
    int cases = 0, bad = 0, undefined = 0, at_most_once = 0;
    std::string failed;
    for (const auto& c : fx["cases"]) {
        ++cases;
        auto a = analyze_text(c["text"].get<std::string>());
        const auto lb = c["load_bearing"].get<std::size_t>();
        const auto probed = c["probed"].get<std::size_t>();
        bool ok = a.load_bearing_count == lb && a.probed_load_bearing_count == probed &&
                  a.sentences.size() == c["sentences"].get<std::size_t>();
        if (lb == 0) {
            ok = ok && !a.density;
            ++undefined;
        } else {
            ok = ok && a.density && *a.density == static_cast<double>(probed) / static_cast<double>(lb);
        }
        if (c["nodes"].size() > c["links"].size() && !c["links"].empty()) ++at_most_once;
        if (!ok) {
            ++bad;
            failed += " " + c["id"].get<std::string>();
        }
    }
    return {bad == 0 && cases >= 10 && undefined >= 1 && at_most_once >= 1,
            fmt::format("{} fixtures, {} UNDEFINED, {} with an unlinked second probe; mismatches {}{}", cases,
                        undefined, at_most_once, bad, failed)};
}

Outcome report_fidelity() {
    DimensionStats st;
    st.dim_id = "D3";
    st.a = group_summary(std::vector<double>{4.5, 5.0, 5.0, 4.5});
    st.b = group_summary(std::vector<double>{1.0, 1.0, 2.0, 2.0});
    st.test.p_two_sided = 2.4e-8;
    st.test.n_a = 20;
    st.test.n_b = 20;
    st.cliffs_delta = 1.0;
    st.alpha.kind = AlphaResult::Kind::Degenerate;
    auto csv = render_table({{"D3", "D3", st, 20, 20}}, TableFormat::Csv);
    const std::string want_row = "D3,4.75,4.75,0.29,1.50,1.50,0.58,2.4e-8,+1.00,DEGENERATE,20,20";
    const bool table_ok =
        csv == "dimension,a_mean,a_median,a_sd,b_mean,b_median,b_sd,p,cliffs_delta,krippendorff_alpha,n_a,n_b\n" +
                   want_row + "\n";

    std::mt19937_64 rng(20240609);
    int svgs = 0, bad = 0, starred = 0;
    BoxplotOptions o;
    o.group_a = "A";
    o.group_b = "B";
    o.timestamp = "2026-01-01T00:00:00Z";
    auto check = [&](const std::vector<double>& a, const std::vector<double>& b) {
        auto svg = render_boxplot(synthetic::matrix(a, b), "D1", o);
        auto s = synthetic::inspect_svg(svg);
        const bool want_stars = mann_whitney_u(a, b).p_two_sided < kSignificanceStars;
        ++svgs;
        starred += want_stars;
        if (!s.well_formed || s.box_groups != 2 || s.triple_star != want_stars) ++bad;
    };
    auto [sa, sb] = synthetic::separated_d3(1);
    check(sa, sb);
    check({3}, {3});
    for (int t = 0; t < 80; ++t) {
        std::vector<double> a(1 + rng() % 20), b(1 + rng() % 20);
        const int shift = static_cast<int>(rng() % 4);
        for (auto& v : a) v = std::min(5.0, 1.0 + static_cast<double>(rng() % 3 + shift)) - (rng() % 3) / 3.0;
        for (auto& v : b) v = 1.0 + static_cast<double>(rng() % 3) + (rng() % 3) / 3.0;
        check(a, b);
    }
    return {table_ok && bad == 0 && starred > 0,
            fmt::format("table row {}; {} SVGs ({} with p < 0.001), failures {}", table_ok ? "matches" : "DIFFERS",
                        svgs, starred, bad)};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "Mann-Whitney oracle equivalence", 10, mann_whitney_oracle},
        {2, "Cliff's delta oracle", 5, cliffs_oracle},
        {3, "Krippendorff alpha oracle", 10, alpha_oracle},
        {4, "Separated-groups property", 1, separation},
        {5, "Exclusion accounting", 1, exclusion},
        {6, "End-to-end mock run", 60, end_to_end},
        {7, "Retry semantics", 5, retry_semantics},
        {8, "Counterfactual density fixtures", 2, density_fixtures},
        {9, "Report fidelity", 5, report_fidelity},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < c.limit_seconds;
        const bool pass = o.pass && in_time;
        failures += pass ? 0 : 1;
        std::cout << fmt::format("{} criterion {}: {} | {} | {:.3f}s (limit {:.0f}s{})\n", pass ? "PASS" : "FAIL", c.id,
                                 c.name, o.detail, secs, c.limit_seconds, in_time ? "" : ", EXCEEDED");
    }
    std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
    return failures;
}
