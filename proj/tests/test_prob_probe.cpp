#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "boubakiki/prob_probe.hpp"

using namespace bk;
using namespace bk::prob;
using lexicon::Label;

namespace {

const std::filesystem::path kFixtures = BOUBAKIKI_FIXTURES;
const std::filesystem::path kData = BOUBAKIKI_DATA_DIR;

Label label(const std::string& text, ShapeClass c, WordType wt = WordType::original) {
    return Label{text, wt, c, {}, {}};
}

std::vector<Label> four() {
    return {label("bouba", ShapeClass::round), label("kiki", ShapeClass::sharp), label("maluma", ShapeClass::round),
            label("takete", ShapeClass::sharp)};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::filesystem::path fresh_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("bk_prob_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

ProbTrial trial(const std::string& image_id, ShapeClass image_class, ShapeClass winner_class) {
    ProbTrial t;
    t.model_id = "m";
    t.prompt_id = "p01";
    t.label_set_version = "v";
    t.pair_id = "gen_01";
    t.image_id = image_id;
    t.image_class = image_class;
    t.winner_class = winner_class;
    t.winner = winner_class == ShapeClass::round ? "bouba" : "kiki";
    return t;
}

}  // namespace

TEST_CASE("decide_trial") {
    const auto labels = four();
    const auto t = decide_trial({0.1, 0.6, 0.2, 0.1}, labels);
    CHECK(t.winner == "kiki");
    CHECK(t.winner_class == ShapeClass::sharp);
    CHECK(t.winner_prob == 0.6);
    CHECK(!t.tie);

    // Exact tie goes to the lexicographically smallest text.
    const auto tie = decide_trial({0.1, 0.4, 0.1, 0.4}, labels);
    CHECK(tie.tie);
    CHECK(tie.winner == "kiki");
    const auto tie2 = decide_trial({0.25, 0.25, 0.25, 0.25}, labels);
    CHECK(tie2.winner == "bouba");

    CHECK_THROWS_AS(decide_trial({0.5, 0.5}, labels), InputError);
    CHECK_THROWS_AS(decide_trial({}, {}), InputError);
}

TEST_CASE("score_pair") {
    const auto c = trial("gen_01__curved", ShapeClass::round, ShapeClass::round);
    const auto j = trial("gen_01__jagged", ShapeClass::sharp, ShapeClass::sharp);
    CHECK(score_pair(c, j).match);
    CHECK(!score_pair(c, trial("gen_01__jagged", ShapeClass::sharp, ShapeClass::round)).match);
    CHECK(!score_pair(trial("gen_01__curved", ShapeClass::round, ShapeClass::sharp), j).match);
    CHECK_THROWS_AS(score_pair(j, c), InputError);
    auto other = j;
    other.prompt_id = "p02";
    CHECK_THROWS_AS(score_pair(c, other), InputError);
    other = j;
    other.pair_id = "gen_02";
    CHECK_THROWS_AS(score_pair(c, other), InputError);
}

TEST_CASE("random probabilities match at chance") {
    // A balanced label set with uniform-random scores: each image picks its own class with
    // probability 1/2, so a pair matches with probability 1/4.
    const auto labels = four();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0, 1);
    int matches = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        std::vector<double> pc(4), pj(4);
        for (auto& v : pc) v = u(rng);
        for (auto& v : pj) v = u(rng);
        auto c = decide_trial(pc, labels);
        auto j = decide_trial(pj, labels);
        for (auto* t : {&c, &j}) {
            t->model_id = "m";
            t->prompt_id = "p";
            t->pair_id = "x";
        }
        c.image_class = ShapeClass::round;
        j.image_class = ShapeClass::sharp;
        matches += score_pair(c, j).match;
    }
    CHECK(std::abs(static_cast<double>(matches) / n - 0.25) <= 0.02);
}

TEST_CASE("label set version") {
    const auto a = four();
    auto b = a;
    std::swap(b[0], b[1]);
    CHECK(label_set_version(a) == label_set_version(a));
    CHECK(label_set_version(a) != label_set_version(b));
    auto c = a;
    c[0].shape_class = ShapeClass::sharp;
    CHECK(label_set_version(a) != label_set_version(c));
}

TEST_CASE("json round trip") {
    auto t = trial("gen_01__curved", ShapeClass::round, ShapeClass::sharp);
    t.key = "k";
    t.tie = true;
    t.all_probs = std::vector<double>{0.5, 0.5};
    const auto back = trial_from_json(to_json(t));
    CHECK(back.key == "k");
    CHECK(back.winner == t.winner);
    CHECK(back.winner_class == ShapeClass::sharp);
    CHECK(back.tie);
    REQUIRE(back.all_probs.has_value());
    CHECK(back.all_probs->size() == 2);
}

TEST_CASE("experiment 1 end to end on a tiny model") {
    adapter::register_checkpoint({"tiny_rn", "tiny_rn.safetensors"});
    const auto h = adapter::load_model("tiny_rn", kFixtures);
    std::vector<shapes::ShapePair> pairs;
    for (int i = 0; i < 2; ++i)
        pairs.push_back(shapes::render_pair(shapes::sample_points(40 + i, 9), 96, "gen_0" + std::to_string(i + 1)));
    const auto images = probe_images(pairs);
    REQUIRE(images.size() == 4);
    CHECK(images[0].image_id == "gen_01__curved");

    const auto prompts = lexicon::load_prompts(kData / "prompts.default.json");
    Experiment1Config cfg;
    cfg.prompts = prompts;
    cfg.label_sets = {{WordType::original, lexicon::original_labels()}};
    cfg.images = images;
    cfg.keep_probs = true;

    cfg.results_dir = fresh_dir("full");
    const auto full = run_experiment1(*h, cfg);
    CHECK(full.computed == 4 * prompts.size());
    CHECK(full.failed == 0);
    const auto rows = store::JsonlStore::read_all(cfg.results_dir / "prob_trials.jsonl");
    CHECK(rows.size() == 4 * prompts.size());
    CHECK(store::JsonlStore::read_all(cfg.results_dir / "pair_outcomes.jsonl").size() == 2 * prompts.size());
    // 4 text embeddings for the designated prompt and one per image.
    CHECK(store::JsonlStore::read_all(cfg.results_dir / "embeddings.jsonl").size() == 4 + 4);
    for (const auto& r : rows) {
        const auto t = trial_from_json(r);
        REQUIRE(t.all_probs.has_value());
        double s = 0;
        for (double p : *t.all_probs) s += p;
        CHECK(s == doctest::Approx(1.0));
    }

    SUBCASE("rerun skips everything") {
        const auto before = slurp(cfg.results_dir / "prob_trials.jsonl");
        const auto again = run_experiment1(*h, cfg);
        CHECK(again.computed == 0);
        CHECK(again.skipped == 4 * prompts.size());
        CHECK(slurp(cfg.results_dir / "prob_trials.jsonl") == before);
    }

    SUBCASE("interrupted run resumes to identical bytes") {
        auto part = cfg;
        part.results_dir = fresh_dir("resume");
        part.prompts = {prompts[0], prompts[3]};
        run_experiment1(*h, part);
        // Simulate a crash mid-write.
        std::ofstream(part.results_dir / "prob_trials.jsonl", std::ios::app) << "{\"key\":\"tor";
        part.prompts = prompts;
        part.workers = 2;
        const auto resumed = run_experiment1(*h, part);
        CHECK(resumed.skipped == 4 * 2);
        for (const char* f : {"prob_trials.jsonl", "pair_outcomes.jsonl", "embeddings.jsonl"}) {
            CAPTURE(f);
            CHECK(slurp(part.results_dir / f) == slurp(cfg.results_dir / f));
        }
    }

    SUBCASE("over-long prompts are recorded as failures") {
        auto bad = cfg;
        bad.results_dir = fresh_dir("fail");
        std::string long_text;
        for (int i = 0; i < 90; ++i) long_text += "word ";
        bad.prompts = {{"px", long_text + "<label>", lexicon::WordRole::noun, lexicon::PromptOrigin::alper}};
        const auto s = run_experiment1(*h, bad);
        CHECK(s.failed == 1);
        CHECK(s.computed == 0);
        CHECK(store::JsonlStore::read_all(bad.results_dir / "failures.jsonl").size() == 1);
    }
}
