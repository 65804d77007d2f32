#include <doctest.h>

#include <random>

#include <opencv2/imgproc.hpp>

#include "boubakiki/saliency_probe.hpp"

using namespace bk;
using namespace bk::saliency;
using lexicon::Label;

namespace {

const std::filesystem::path kFixtures = BOUBAKIKI_FIXTURES;
const std::filesystem::path kData = BOUBAKIKI_DATA_DIR;

// White composite with a dark square in each pane.
shapes::CompositeImage synthetic(int pane, int gutter, ShapeClass left = ShapeClass::round) {
    shapes::CompositeImage c;
    c.composite_id = "syn";
    c.pair_id = "syn";
    c.pane_width = pane;
    c.gutter = gutter;
    c.left_class = left;
    c.right_class = opposite(left);
    c.arrangement = left == ShapeClass::round ? shapes::Arrangement::curved_left : shapes::Arrangement::curved_right;
    c.image = cv::Mat(pane, 2 * pane + gutter, CV_8UC3, cv::Scalar(255, 255, 255));
    cv::rectangle(c.image, cv::Rect(pane / 4, pane / 4, pane / 2, pane / 3), cv::Scalar(0, 0, 0), cv::FILLED);
    cv::rectangle(c.image, cv::Rect(pane + gutter + pane / 5, pane / 3, pane / 3, pane / 2), cv::Scalar(0, 0, 0),
                  cv::FILLED);
    return c;
}

MatD random_grid(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    MatD g(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) g(i, j) = u(rng);
    return g;
}

SaliencyMap map_of(const MatD& m) {
    SaliencyMap s;
    s.grid = m;
    s.model_id = "m";
    s.prompt_id = "p01";
    s.label_id = "bouba";
    return s;
}

// Bilinear sample with half-pixel centres and edge clamping, written out directly.
double bilinear(const MatD& g, double sy, double sx) {
    auto clampd = [](double v, double hi) { return std::min(std::max(v, 0.0), hi); };
    sy = clampd(sy, static_cast<double>(g.rows() - 1));
    sx = clampd(sx, static_cast<double>(g.cols() - 1));
    const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
    const int y1 = std::min<int>(y0 + 1, static_cast<int>(g.rows()) - 1);
    const int x1 = std::min<int>(x0 + 1, static_cast<int>(g.cols()) - 1);
    const double fy = sy - y0, fx = sx - x0;
    return (1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x1)) + fy * ((1 - fx) * g(y1, x0) + fx * g(y1, x1));
}

MatD direct_upsample(const MatD& grid, int width, int height) {
    const int side = std::max(width, height);
    const int ox = (side - width) / 2, oy = (side - height) / 2;
    MatD out(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            out(y, x) = bilinear(grid, (oy + y + 0.5) * grid.rows() / side - 0.5,
                                 (ox + x + 0.5) * grid.cols() / side - 0.5);
    return out;
}

// Second oracle: OpenCV bilinear resize over the letterbox square, then the image rectangle.
// OpenCV computes its interpolation weights in single precision.
MatD oracle_upsample(const MatD& grid, int width, int height) {
    cv::Mat g(static_cast<int>(grid.rows()), static_cast<int>(grid.cols()), CV_64F);
    for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) g.at<double>(i, j) = grid(i, j);
    const int side = std::max(width, height);
    cv::Mat big;
    cv::resize(g, big, cv::Size(side, side), 0, 0, cv::INTER_LINEAR);
    const int ox = (side - width) / 2, oy = (side - height) / 2;
    MatD out(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) out(y, x) = big.at<double>(oy + y, ox + x);
    return out;
}

RegionDecision decision(const std::string& composite, bool primary, bool correct, const std::string& label = "bouba",
                        ShapeClass cls = ShapeClass::round) {
    RegionDecision d;
    d.model_id = "m";
    d.prompt_id = "p01";
    d.composite_id = composite;
    d.pair_id = "gen_01";
    d.primary = primary;
    d.label_id = label;
    d.label_class = cls;
    d.arrangement = primary ? shapes::Arrangement::curved_left : shapes::Arrangement::curved_right;
    d.correct = correct;
    d.chosen_class = correct ? cls : opposite(cls);
    return d;
}

}  // namespace

TEST_CASE("uniform and zero maps tie and choose left") {
    const auto c = synthetic(20, 2);
    const auto d = decide_region(map_of(MatD::Constant(20, 42, 0.3)), c);
    CHECK(d.tie);
    CHECK(d.chosen_side == Side::left);
    CHECK(d.chosen_class == c.left_class);
    const auto z = decide_region(map_of(MatD::Zero(20, 42)), c);
    CHECK(z.tie);
    CHECK(z.all_zero);
    CHECK(z.chosen_side == Side::left);
}

TEST_CASE("decision rule properties") {
    const auto c = synthetic(24, 3);
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        CAPTURE(seed);
        const MatD m = random_grid(24, 51, seed);
        const auto d = decide_region(map_of(m), c);

        // Left + right equals the total minus the gutter columns.
        const double gutter = m.middleCols(24, 3).sum();
        CHECK(d.left_sum + d.right_sum == doctest::Approx(m.sum() - gutter).epsilon(1e-12));

        // Positive scaling does not change the choice.
        const auto scaled = decide_region(map_of(m * 7.5), c);
        CHECK(scaled.chosen_side == d.chosen_side);

        // Mirroring the map and the composite keeps the chosen class.
        const MatD flipped = m.rowwise().reverse();
        const auto md = decide_region(map_of(flipped), shapes::mirror(c));
        CHECK(md.chosen_class == d.chosen_class);
        CHECK(md.left_sum == d.right_sum);
        CHECK(md.right_sum == d.left_sum);

        // A mirror-symmetric map ties exactly.
        const MatD sym = m + flipped;
        CHECK(decide_region(map_of(sym), c).tie);
    }
    CHECK_THROWS_AS(decide_region(map_of(MatD::Constant(24, 51, -1.0)), c), InputError);
    CHECK_THROWS_AS(decide_region(map_of(MatD::Zero(24, 50)), c), InputError);
}

TEST_CASE("upsampling matches a bilinear oracle") {
    for (auto [gh, gw, w, h] : std::vector<std::array<int, 4>>{{7, 7, 70, 70}, {7, 7, 147, 66}, {2, 2, 21, 10}, {4, 4, 33, 15}}) {
        CAPTURE(w);
        CAPTURE(h);
        const MatD g = random_grid(gh, gw, w * 31 + h);
        const MatD got = upsample_to_image(g, w, h);
        const MatD want = oracle_upsample(g, w, h);
        REQUIRE(got.rows() == h);
        REQUIRE(got.cols() == w);
        CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-6);
        CHECK((got - direct_upsample(g, w, h)).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(got.minCoeff() >= 0);
    }
}

TEST_CASE("region projector equals explicit sums of the upsampled map") {
    for (auto [pane, gutter, g] : std::vector<std::array<int, 3>>{{40, 4, 7}, {30, 3, 4}, {64, 6, 2}}) {
        const auto c = synthetic(pane, gutter);
        const RegionProjector proj(g, g, c);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const MatD grid = random_grid(g, g, seed + 100 * pane);
            const auto s = proj.project(grid);
            const MatD up = upsample_to_image(grid, c.image.cols, c.image.rows);
            const auto d = decide_region(map_of(up), c);
            CHECK(s.left == doctest::Approx(d.left_sum).epsilon(1e-10));
            CHECK(s.right == doctest::Approx(d.right_sum).epsilon(1e-10));
            CHECK(s.left_mask == doctest::Approx(d.left_mask_mean).epsilon(1e-10));
            CHECK(s.right_mask == doctest::Approx(d.right_mask_mean).epsilon(1e-10));
            // Peaks are cell values and cannot exceed the grid maximum.
            CHECK(s.left_peak <= grid.maxCoeff());
            // Symmetric grids tie bit-exactly in the projector.
            const MatD sym = grid + grid.rowwise().reverse();
            const auto t = proj.project(sym);
            CHECK(t.left == t.right);
        }
        CHECK_THROWS_AS(proj.project(MatD::Zero(g + 1, g)), InputError);
    }
}

TEST_CASE("grad-cam on a two-layer toy matches the closed form") {
    // Score s(A) = sum_p u . relu(M a_p) over positions p; dS/da_p = M^T (u * step(M a_p)).
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    const int C = 6, H = 3, W = 4, K = 5;
    MatD A(C, H * W), M(K, C);
    VecD u(K);
    for (int i = 0; i < A.size(); ++i) A.data()[i] = std::abs(n(rng));
    for (int i = 0; i < M.size(); ++i) M.data()[i] = n(rng);
    for (int i = 0; i < K; ++i) u(i) = n(rng);
    auto score = [&](const MatD& a) {
        double s = 0;
        for (int p = 0; p < a.cols(); ++p) s += u.dot((M * a.col(p)).cwiseMax(0.0));
        return s;
    };
    MatD G(C, H * W);
    for (int p = 0; p < H * W; ++p) {
        VecD z = M * A.col(p);
        VecD gate = u;
        for (int k = 0; k < K; ++k) gate(k) = z(k) > 0 ? u(k) : 0;
        G.col(p) = M.transpose() * gate;
    }
    // The closed form agrees with finite differences.
    for (int c = 0; c < C; ++c) {
        MatD ap = A, am = A;
        ap(c, 5) += 1e-6;
        am(c, 5) -= 1e-6;
        CHECK(G(c, 5) == doctest::Approx((score(ap) - score(am)) / 2e-6).epsilon(1e-5));
    }

    adapter::GradientResult r;
    r.activations = {A, H, W, 0};
    r.gradients = {G, H, W, 0};
    const MatD grid = grid_from_gradients(SaliencyKind::grad_cam, r);
    REQUIRE(grid.rows() == H);
    REQUIRE(grid.cols() == W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double cam = 0;
            for (int c = 0; c < C; ++c) cam += G.row(c).mean() * A(c, y * W + x);
            CHECK(grid(y, x) == doctest::Approx(std::max(0.0, cam)).epsilon(1e-6).scale(1e-6));
            CHECK(grid(y, x) >= 0);
        }
}

TEST_CASE("attention relevance grid") {
    const int heads = 2, gh = 2, gw = 2, T = 1 + gh * gw;
    MatD P(heads, T), G(heads, T);
    P << 0.2, 0.1, 0.3, 0.3, 0.1,  //
        0.4, 0.2, 0.1, 0.2, 0.1;
    G << 5, 1, -1, 2, 0.5,  //
        -3, 3, 2, -2, 1;
    adapter::LayerMap act{P, gh, gw, 1};
    const MatD grid = grid_from_reduced(SaliencyKind::attention_relevance, act, G);
    // Position (0,0) is token 1: heads give relu(0.1) and relu(0.6), mean 0.35.
    CHECK(grid(0, 0) == doctest::Approx(0.35));
    CHECK(grid(0, 1) == doctest::Approx((0.0 + 0.2) / 2));
    CHECK(grid(1, 0) == doctest::Approx((0.6 + 0.0) / 2));
    CHECK(grid(1, 1) == doctest::Approx((0.05 + 0.1) / 2));
    CHECK_THROWS_AS(grid_from_reduced(SaliencyKind::attention_relevance, act, MatD::Zero(heads, T - 1)), InputError);
}

TEST_CASE("label pair scoring and consistency") {
    auto r = decision("gen_01__curved_left", true, true);
    auto s = decision("gen_01__curved_left", true, true, "kiki", ShapeClass::sharp);
    CHECK(score_label_pair(r, s));
    s.correct = false;
    CHECK(!score_label_pair(r, s));
    auto wrong = decision("gen_01__curved_left", true, true, "maluma", ShapeClass::round);
    CHECK_THROWS_AS(score_label_pair(r, wrong), InputError);
    auto other = s;
    other.composite_id = "gen_02__curved_left";
    CHECK_THROWS_AS(score_label_pair(r, other), InputError);

    std::vector<RegionDecision> ds = {decision("gen_01__curved_left", true, true),
                                      decision("gen_01__curved_right", false, true)};
    auto pairs = consistency_pairs(ds);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].consistent);
    ds[1].correct = false;
    ds[1].chosen_class = ShapeClass::sharp;
    CHECK(!consistency_pairs(ds)[0].consistent);
    ds[1].tie = true;
    CHECK(consistency_pairs(ds)[0].has_tie);
    ds.pop_back();
    CHECK_THROWS_AS(consistency_pairs(ds), InputError);
}

TEST_CASE("decision json round trip") {
    auto d = decision("c", false, true);
    d.key = "k";
    d.left_sum = 1.25;
    d.right_sum = 0.5;
    d.tie = true;
    d.chosen_side = Side::right;
    const auto back = decision_from_json(to_json(d));
    CHECK(back.key == "k");
    CHECK(back.left_sum == 1.25);
    CHECK(back.chosen_side == Side::right);
    CHECK(back.tie);
    CHECK(!back.primary);
    CHECK(parse_save_maps("full") == SaveMaps::full);
    CHECK_THROWS(parse_save_maps("some"));
}

TEST_CASE("experiment 2 end to end on tiny models") {
    adapter::register_checkpoint({"tiny_rn", "tiny_rn.safetensors"});
    adapter::register_checkpoint({"tiny_vit", "tiny_vit.safetensors"});
    std::vector<shapes::ShapePair> pairs;
    for (int i = 0; i < 2; ++i)
        pairs.push_back(shapes::render_pair(shapes::sample_points(60 + i, 10), 64, "gen_0" + std::to_string(i + 1)));
    const auto composites = shapes::compose_pairs(pairs);
    REQUIRE(composites.size() == 4);
    const auto prompts = lexicon::load_prompts(kData / "prompts.default.json");

    for (const std::string id : {"tiny_rn", "tiny_vit"}) {
        CAPTURE(id);
        auto h = adapter::load_model(id, kFixtures);
        const auto root = std::filesystem::temp_directory_path() / ("bk_sal_" + id);
        std::filesystem::remove_all(root);
        Experiment2Config cfg;
        cfg.prompts = {prompts[0], prompts[5]};
        cfg.label_sets = {{WordType::original, lexicon::original_labels()}};
        cfg.composites = composites;
        cfg.results_dir = root / "results";
        cfg.saliency_dir = root / "saliency";
        cfg.save_maps = SaveMaps::full;
        std::filesystem::create_directories(cfg.results_dir);
        const auto s = run_experiment2(*h, cfg);
        CHECK(s.failed == 0);
        CHECK(s.computed == 4 * 4 * 2);
        std::vector<RegionDecision> ds;
        for (const auto& j : store::JsonlStore::read_all(cfg.results_dir / "region_decisions.jsonl"))
            ds.push_back(decision_from_json(j));
        REQUIRE(ds.size() == 32);
        for (const auto& d : ds) {
            CHECK(d.left_sum >= 0);
            CHECK(d.right_sum >= 0);
            CHECK(d.correct == (d.chosen_class == d.label_class));
        }
        CHECK(consistency_pairs(ds).size() == 16);
        CHECK(label_pair_congruence(ds, lexicon::gen_original_pairs()).size() == 2 * 2 * 2);

        // The projected decision matches the explicit pixel-level one.
        const auto& c0 = composites[0];
        const auto map = compute_saliency(*h, c0, lexicon::render_prompt(prompts[0], "bouba"), prompts[0].id, "bouba");
        const auto explicit_d = decide_region(map, c0);
        bool found = false;
        for (const auto& d : ds)
            if (d.composite_id == c0.composite_id && d.prompt_id == prompts[0].id && d.label_id == "bouba") {
                found = true;
                CHECK(d.left_sum == doctest::Approx(explicit_d.left_sum).epsilon(1e-6));
                CHECK(d.right_sum == doctest::Approx(explicit_d.right_sum).epsilon(1e-6));
                CHECK(d.chosen_side == explicit_d.chosen_side);
            }
        CHECK(found);

        const auto png = cfg.saliency_dir / id / c0.composite_id / prompts[0].id / "bouba.png";
        CHECK(std::filesystem::exists(png));
        CHECK(std::filesystem::exists(png.parent_path() / "bouba.npz"));

        const auto again = run_experiment2(*h, cfg);
        CHECK(again.computed == 0);
        CHECK(again.skipped == 32);
    }
}
