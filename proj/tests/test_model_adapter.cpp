#include <doctest.h>

#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "boubakiki/model_adapter.hpp"

using namespace bk;
using namespace bk::adapter;

namespace {

const std::filesystem::path kFixtures = BOUBAKIKI_FIXTURES;

void register_tiny() {
    register_checkpoint({"tiny_rn", "tiny_rn.safetensors"});
    register_checkpoint({"tiny_vit", "tiny_vit.safetensors"});
}

cv::Mat fixture_image(const std::string& name) {
    cv::Mat m = cv::imread((kFixtures / (name + "_image.png")).string(), cv::IMREAD_COLOR);
    REQUIRE(!m.empty());
    return m;
}

}  // namespace

TEST_CASE("missing weights raise WeightsUnavailable") {
    const auto empty = std::filesystem::temp_directory_path() / "bk_no_weights";
    std::filesystem::create_directories(empty);
    CHECK(!weights_available("resnet50", empty));
    CHECK_THROWS_AS(load_model("resnet50", empty), WeightsUnavailable);
    CHECK_THROWS_AS(load_model("vit", empty), WeightsUnavailable);
    CHECK_THROWS(load_model("no-such-model", empty));
    CHECK(checkpoint_path("resnet50", empty).filename() == "RN50.safetensors");
    CHECK(checkpoint_path("vit", empty).filename() == "ViT-B-32.safetensors");
}

TEST_CASE("letterbox geometry") {
    const auto g = letterbox_geometry(210, 100);
    CHECK(g.side == 210);
    CHECK(g.offset_x == 0);
    CHECK(g.offset_y == 55);
    const auto sq = letterbox_geometry(64, 64);
    CHECK(sq.side == 64);
    CHECK(sq.offset_x == 0);
    CHECK(sq.offset_y == 0);
    CHECK(letterbox_geometry(50, 80).offset_x == 15);
}

TEST_CASE("preprocess") {
    cv::Mat white(30, 70, CV_8UC3, cv::Scalar(255, 255, 255));
    const auto fm = preprocess_image(white, 32, Framing::letterbox);
    CHECK(fm.height == 32);
    CHECK(fm.width == 32);
    REQUIRE(fm.channels() == 3);
    // Letterbox padding is white, so the whole input is the normalized white value.
    const double mean_r = 0.48145466, std_r = 0.26862954;
    for (int i = 0; i < 32 * 32; ++i) CHECK(fm.data(0, i) == doctest::Approx((1.0 - mean_r) / std_r).epsilon(1e-5));

    // BGR input: a pure blue pixel lands in the third (blue) channel.
    cv::Mat blue(8, 8, CV_8UC3, cv::Scalar(255, 0, 0));
    const auto b = preprocess_image(blue, 8, Framing::center_crop);
    CHECK(b.data(2, 0) > 0);
    CHECK(b.data(0, 0) < 0);

    cv::Mat gray(8, 8, CV_8UC1, cv::Scalar(255));
    CHECK(preprocess_image(gray, 8, Framing::center_crop).channels() == 3);
}

TEST_CASE("embeddings and probabilities") {
    register_tiny();
    for (const std::string id : {"tiny_rn", "tiny_vit"}) {
        CAPTURE(id);
        auto h = load_model(id, kFixtures);
        CHECK(h->model_id() == id);
        CHECK(!h->weights_hash().empty());
        CHECK(h->saliency_kind() == (id == "tiny_rn" ? SaliencyKind::grad_cam : SaliencyKind::attention_relevance));
        const std::vector<std::string> prompts = {"bouba", "kiki", "a round shape", "a sharp shape"};
        const MatD t = h->embed_text(prompts);
        REQUIRE(t.rows() == 4);
        for (int r = 0; r < 4; ++r) CHECK(t.row(r).norm() == doctest::Approx(1.0).epsilon(1e-9));
        // Cached rows are identical on repeat.
        CHECK((h->embed_text(prompts) - t).norm() == 0.0);

        const auto img = fixture_image(id);
        const MatD i1 = h->embed_image({img}), i2 = h->embed_image({img});
        CHECK((i1 - i2).norm() == 0.0);
        CHECK(i1.row(0).norm() == doctest::Approx(1.0).epsilon(1e-9));

        const auto p = h->label_probabilities(img, prompts);
        double total = 0;
        for (double v : p.probabilities) {
            CHECK(v >= 0);
            total += v;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

        // Permuting the labels permutes the probabilities.
        const std::vector<std::string> rev(prompts.rbegin(), prompts.rend());
        const auto q = h->label_probabilities(img, rev);
        for (int k = 0; k < 4; ++k) CHECK(q.probabilities[3 - k] == doctest::Approx(p.probabilities[k]).epsilon(1e-9));

        // A replicated handle shares weights and gives identical outputs.
        const auto r = h->replicate();
        CHECK((r->embed_image({img}) - i1).norm() == 0.0);
    }
}

TEST_CASE("probabilities_from_embeddings") {
    VecD img = VecD::Zero(3);
    img(0) = 1;
    MatD text = MatD::Identity(3, 3);
    const auto s = probabilities_from_embeddings(img, text, 100.0, {"a", "b", "c"});
    const double denom = std::exp(100.0) + 2.0;
    CHECK(s.probabilities[0] == doctest::Approx(std::exp(100.0) / denom));
    CHECK(s.probabilities[1] == doctest::Approx(1.0 / denom));
    CHECK(s.label_ids[2] == "c");
    // Equal cosines give a uniform distribution.
    MatD same(2, 3);
    same.row(0) = img.transpose();
    same.row(1) = img.transpose();
    const auto u = probabilities_from_embeddings(img, same, 100.0);
    CHECK(u.probabilities[0] == doctest::Approx(0.5));
}

TEST_CASE("reduced gradients equal reductions of full gradients") {
    register_tiny();
    for (const std::string id : {"tiny_rn", "tiny_vit"}) {
        CAPTURE(id);
        auto h = load_model(id, kFixtures);
        const auto img = fixture_image(id);
        const auto trace = h->trace_image(img, Framing::letterbox);
        const MatD units = h->embed_text({"bouba", "kiki", "maluma"}).transpose();
        const auto red = h->reduced_gradients(*trace, units);
        REQUIRE(red.reduced.size() == 3);
        for (int t = 0; t < 3; ++t) {
            const auto full = h->gradients(*trace, units.col(t));
            CHECK(full.score == doctest::Approx(red.scores(t)).epsilon(1e-12));
            MatD expect;
            if (h->saliency_kind() == SaliencyKind::grad_cam)
                expect = full.gradients.data.rowwise().mean();
            else
                expect = full.gradients.data;
            REQUIRE(expect.rows() == red.reduced[t].rows());
            REQUIRE(expect.cols() == red.reduced[t].cols());
            CHECK((expect - red.reduced[t]).cwiseAbs().maxCoeff() <= 1e-10 * (1 + expect.cwiseAbs().maxCoeff()));
        }
        const auto one = h->score_with_gradients(img, "bouba", Framing::letterbox);
        CHECK(one.score == doctest::Approx(red.scores(0)).epsilon(1e-9));
        CHECK(one.activations.grid_height == h->grid_size());
    }
}
