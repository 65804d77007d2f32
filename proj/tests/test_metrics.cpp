#include <doctest.h>

#include <cmath>
#include <random>

#include "boubakiki/metrics.hpp"

using namespace bk;
using namespace bk::metrics;

namespace {

// Beta(a, b) CDF by composite Simpson integration of the density, quantiles by bisection.
double beta_cdf(double x, double a, double b) {
    if (x <= 0) return 0;
    if (x >= 1) return 1;
    const double log_norm = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
    auto pdf = [&](double t) {
        if (t <= 0 || t >= 1) return 0.0;
        return std::exp(log_norm + (a - 1) * std::log(t) + (b - 1) * std::log1p(-t));
    };
    const int n = 20000;
    const double h = x / n;
    double s = pdf(0) + pdf(x);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * pdf(i * h);
    return s * h / 3;
}

double beta_quantile(double p, double a, double b) {
    double lo = 0, hi = 1;
    for (int i = 0; i < 60; ++i) {
        const double mid = (lo + hi) / 2;
        (beta_cdf(mid, a, b) < p ? lo : hi) = mid;
    }
    return (lo + hi) / 2;
}

prob::ProbTrial trial(const std::string& image, const std::string& prompt, const std::string& winner) {
    prob::ProbTrial t;
    t.model_id = "resnet50";
    t.word_type = lexicon::WordType::nielsen;
    t.image_id = image;
    t.prompt_id = prompt;
    t.winner = winner;
    return t;
}

}  // namespace

TEST_CASE("beta posterior against a numerical oracle") {
    for (auto [s, n] : std::vector<std::pair<long, long>>{{80, 100}, {25, 100}, {3, 7}}) {
        CAPTURE(s);
        const auto e = proportion_estimate(s, n, 0.25, "k");
        const double a = 1.0 + s, b = 1.0 + n - s;
        CHECK(e.posterior_mean == doctest::Approx(a / (a + b)).epsilon(1e-12));
        CHECK(e.ci_low == doctest::Approx(beta_quantile(0.025, a, b)).epsilon(1e-6));
        CHECK(e.ci_high == doctest::Approx(beta_quantile(0.975, a, b)).epsilon(1e-6));
        CHECK(e.group_key == "k");
        CHECK(e.observed() == doctest::Approx(static_cast<double>(s) / n));
    }
    CHECK(proportion_estimate(80, 100, 0.25).significant);
    CHECK(!proportion_estimate(25, 100, 0.25).significant);

    const auto empty = proportion_estimate(0, 0, 0.25);
    CHECK(empty.posterior_mean == doctest::Approx(0.5));
    CHECK(empty.ci_low == doctest::Approx(0.025));
    CHECK(empty.ci_high == doctest::Approx(0.975));
    CHECK(!empty.significant);
    CHECK_THROWS(proportion_estimate(5, 4, 0.25));
}

TEST_CASE("posterior mean is monotone in successes") {
    double prev = -1;
    for (long s = 0; s <= 50; ++s) {
        const auto e = proportion_estimate(s, 50, 0.5);
        CHECK(e.posterior_mean > prev);
        CHECK(e.ci_low <= e.posterior_mean);
        CHECK(e.posterior_mean <= e.ci_high);
        prev = e.posterior_mean;
    }
}

TEST_CASE("stratified bootstrap") {
    std::map<std::string, std::vector<bool>> by_prompt;
    std::mt19937_64 rng(3);
    for (int p = 0; p < 10; ++p)
        for (int i = 0; i < 17; ++i) by_prompt["p" + std::to_string(p)].push_back(rng() % 3 == 0);
    const auto a = stratified_bootstrap(by_prompt, 11, 2000);
    const auto b = stratified_bootstrap(by_prompt, 11, 2000);
    CHECK(a.mean == b.mean);
    CHECK(a.ci_low == b.ci_low);
    CHECK(a.ci_high == b.ci_high);
    CHECK(a.resamples == 2000);
    long s = 0, n = 0;
    for (const auto& [k, v] : by_prompt) {
        s += std::count(v.begin(), v.end(), true);
        n += static_cast<long>(v.size());
    }
    CHECK(a.mean == doctest::Approx(static_cast<double>(s) / n));
    CHECK(a.ci_low <= a.mean);
    CHECK(a.mean <= a.ci_high);
    CHECK(a.ci_high - a.ci_low < 0.2);

    // All-true strata have no resampling variability.
    const auto all = stratified_bootstrap({{"p", std::vector<bool>(5, true)}}, 1, 100);
    CHECK(all.ci_low == 1.0);
    CHECK(all.ci_high == 1.0);
}

TEST_CASE("uniqueness ratio") {
    std::vector<prob::ProbTrial> ts;
    for (int i = 0; i < 4; ++i)
        for (int p = 0; p < 2; ++p) ts.push_back(trial("img" + std::to_string(i), "p" + std::to_string(p), "loonah"));
    // Complete collapse onto one label.
    CHECK(uniqueness_ratio(ts, 10, 8) == doctest::Approx(0.1));
    // Every cell a different winner: bounded by cells / label set size.
    for (std::size_t k = 0; k < ts.size(); ++k) ts[k].winner = "w" + std::to_string(k);
    CHECK(uniqueness_ratio(ts, 10, 8) == doctest::Approx(0.8));
    // Winners must come from the label set, so more winners than labels is malformed input.
    CHECK_THROWS_AS(uniqueness_ratio(ts, 4, 8), InputError);
    // Incomplete or duplicated sweeps are rejected.
    auto missing = ts;
    missing.pop_back();
    CHECK_THROWS_AS(uniqueness_ratio(missing, 10, 8), InputError);
    auto mixed = ts;
    mixed[0].model_id = "vit";
    CHECK_THROWS_AS(uniqueness_ratio(mixed, 10, 8), InputError);
}

TEST_CASE("consistency ratio") {
    std::vector<saliency::ConsistencyPair> ps(6);
    for (auto& p : ps) p.consistent = true;
    CHECK(consistency_ratio(ps).ratio() == 1.0);
    ps[0].consistent = false;
    ps[1].has_tie = true;
    const auto r = consistency_ratio(ps);
    CHECK(r.ties == 1);
    CHECK(r.total == 5);
    CHECK(r.consistent == 4);
    CHECK(r.ratio() == doctest::Approx(0.8));
}

TEST_CASE("separability") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0, 1);
    const int d = 16, m = 40;

    // Two well separated clusters.
    Eigen::MatrixXd x(m, d);
    std::vector<int> y(m);
    for (int i = 0; i < m; ++i) {
        y[i] = i % 2;
        for (int j = 0; j < d; ++j) x(i, j) = 0.05 * n(rng);
        x(i, 0) += y[i] ? 1 : -1;
    }
    CHECK(separability_score(x, y) == doctest::Approx(1.0));

    // Rotations do not change the score.
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::NullaryExpr(d, d, [&] { return n(rng); }))
                            .householderQ();
    CHECK(separability_score(x * q, y) == doctest::Approx(separability_score(x, y)));

    // Labels independent of the points give chance-level accuracy on average.
    double total = 0;
    const int reps = 20;
    for (int r = 0; r < reps; ++r) {
        Eigen::MatrixXd z(60, d);
        std::vector<int> yz(60);
        for (int i = 0; i < 60; ++i) {
            yz[i] = i % 2;
            for (int j = 0; j < d; ++j) z(i, j) = n(rng);
        }
        total += separability_score(z, yz);
    }
    CHECK(std::abs(total / reps - 0.5) < 0.1);

    CHECK_THROWS_AS(separability_score(x, std::vector<int>(m, 0)), InputError);
    std::vector<int> lonely = y;
    lonely.assign(m, 0);
    lonely[0] = 1;
    CHECK_THROWS_AS(separability_score(x, lonely), InputError);
}

TEST_CASE("published values") {
    using lexicon::WordType;
    CHECK(*published_uniqueness("resnet50", WordType::original) == doctest::Approx(0.667));
    CHECK(*published_uniqueness("vit", WordType::alper) == doctest::Approx(0.466));
    CHECK(*published_consistency("resnet50", WordType::adjective) == doctest::Approx(0.761));
    CHECK(*published_consistency("vit", WordType::nielsen) == doctest::Approx(0.722));
    CHECK(*published_overall_consistency("resnet50") == doctest::Approx(0.770));
    CHECK(*published_overall_consistency("vit") == doctest::Approx(0.735));
    CHECK(!published_uniqueness("tiny_x", WordType::original).has_value());
}

TEST_CASE("group keys") {
    CHECK(group_key("prob", "vit", "original") == "prob|vit|original|*|*");
    CHECK(group_key("gradcam_label", "resnet50", "alper", "*", "round") == "gradcam_label|resnet50|alper|*|round");
}

TEST_CASE("analysis over a synthetic store") {
    const auto root = std::filesystem::temp_directory_path() / "bk_metrics_store";
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root / "results");
    {
        store::JsonlStore outcomes(root / "results" / "pair_outcomes.jsonl");
        int k = 0;
        for (int p = 0; p < 2; ++p)
            for (int i = 0; i < 4; ++i) {
                prob::PairOutcome o;
                o.key = "k" + std::to_string(k++);
                o.model_id = "resnet50";
                o.prompt_id = "p0" + std::to_string(p + 1);
                o.word_type = lexicon::WordType::original;
                o.pair_id = "gen_0" + std::to_string(i);
                o.match = i < 3;
                outcomes.append(prob::to_json(o));
            }
    }
    AnalysisInputs in;
    in.results_dir = root / "results";
    in.analysis_dir = root / "analysis";
    in.resamples = 200;
    const auto r = analyze(in);
    const ProportionEstimate* pooled = nullptr;
    for (const auto& e : r.estimates)
        if (e.group_key == "prob|resnet50|original|*|*") pooled = &e;
    REQUIRE(pooled);
    CHECK(pooled->successes == 6);
    CHECK(pooled->trials == 8);
    CHECK(pooled->chance == 0.25);
    write_analysis(r, in.analysis_dir, false);
    const auto back = read_estimates_csv(in.analysis_dir / "estimates.csv");
    CHECK(back.size() == r.estimates.size());
    CHECK(std::filesystem::exists(in.analysis_dir / "pooled_bootstrap.csv"));
}
