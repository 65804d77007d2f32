#include <cmath>

#include "boubakiki/clip/clip_model.hpp"
#include "boubakiki/types.hpp"

namespace bk::clip {

namespace {

Bottleneck load_bottleneck(const WeightReader& r, int inplanes, int planes, int stride) {
    Bottleneck b;
    b.conv1 = nn::Conv2d::load(r, "conv1", inplanes, planes, 1, 1, 0);
    b.bn1 = nn::BatchNorm2d::load(r, "bn1", planes);
    b.conv2 = nn::Conv2d::load(r, "conv2", planes, planes, 3, 1, 1);
    b.bn2 = nn::BatchNorm2d::load(r, "bn2", planes);
    b.conv3 = nn::Conv2d::load(r, "conv3", planes, planes * 4, 1, 1, 0);
    b.bn3 = nn::BatchNorm2d::load(r, "bn3", planes * 4);
    b.stride = stride;
    if (stride > 1 || inplanes != planes * 4)
        b.downsample.emplace(nn::Conv2d::load(r, "downsample.0", inplanes, planes * 4, 1, 1, 0),
                             nn::BatchNorm2d::load(r, "downsample.1", planes * 4));
    return b;
}

}  // namespace

nn::FeatureMap Bottleneck::forward(const nn::FeatureMap& x) const {
    nn::FeatureMap out = conv1.forward(x);
    bn1.apply(out, true);
    out = conv2.forward(out);
    bn2.apply(out, true);
    out = nn::avg_pool(out, stride);
    out = conv3.forward(out);
    bn3.apply(out, false);
    if (downsample) {
        nn::FeatureMap id = downsample->first.forward(nn::avg_pool(x, stride));
        downsample->second.apply(id, false);
        out.data += id.data;
    } else {
        out.data += x.data;
    }
    out.data = out.data.cwiseMax(0.0f);
    return out;
}

ModifiedResNetTower::ModifiedResNetTower(const SafeTensors& st, const ClipConfig& cfg) : cfg_(cfg) {
    const WeightReader r(st, "visual.");
    const int w = cfg.vision_width;
    conv1_ = nn::Conv2d::load(r, "conv1", 3, w / 2, 3, 2, 1);
    bn1_ = nn::BatchNorm2d::load(r, "bn1", w / 2);
    conv2_ = nn::Conv2d::load(r, "conv2", w / 2, w / 2, 3, 1, 1);
    bn2_ = nn::BatchNorm2d::load(r, "bn2", w / 2);
    conv3_ = nn::Conv2d::load(r, "conv3", w / 2, w, 3, 1, 1);
    bn3_ = nn::BatchNorm2d::load(r, "bn3", w);
    int inplanes = w;
    for (int stage = 0; stage < 4; ++stage) {
        const int planes = w << stage;
        for (int i = 0; i < cfg.resnet_layers[stage]; ++i) {
            const int stride = (stage > 0 && i == 0) ? 2 : 1;
            layers_[stage].push_back(load_bottleneck(
                r.sub("layer" + std::to_string(stage + 1) + "." + std::to_string(i)), inplanes, planes, stride));
            inplanes = planes * 4;
        }
    }
    const int embed = w * 32;
    const int grid = cfg.grid_size();
    const WeightReader a = r.sub("attnpool");
    attnpool_.positional_embedding = a.matrix("positional_embedding", grid * grid + 1, embed);
    attnpool_.q = nn::Linear::load(a, "q_proj", embed, embed);
    attnpool_.k = nn::Linear::load(a, "k_proj", embed, embed);
    attnpool_.v = nn::Linear::load(a, "v_proj", embed, embed);
    attnpool_.c = nn::Linear::load(a, "c_proj", embed, cfg.embed_dim);
    attnpool_.heads = cfg.vision_heads;
    if (embed % attnpool_.heads != 0) throw InputError("attention pool width not divisible by head count");
}

nn::FeatureMap ModifiedResNetTower::stem_and_stages(const nn::FeatureMap& pixels) const {
    if (pixels.channels() != 3 || pixels.height != cfg_.image_size || pixels.width != cfg_.image_size)
        throw InputError("ResNet expects a 3x" + std::to_string(cfg_.image_size) + "x" +
                         std::to_string(cfg_.image_size) + " input");
    nn::FeatureMap x = conv1_.forward(pixels);
    bn1_.apply(x, true);
    x = conv2_.forward(x);
    bn2_.apply(x, true);
    x = conv3_.forward(x);
    bn3_.apply(x, true);
    x = nn::avg_pool(x, 2);
    for (const auto& stage : layers_)
        for (const auto& b : stage) x = b.forward(x);
    return x;
}

Eigen::VectorXf ModifiedResNetTower::attention_pool(const nn::FeatureMap& layer4) const {
    const auto& ap = attnpool_;
    const auto hw = layer4.data.cols();
    nn::Matrix x(hw + 1, layer4.data.rows());
    x.row(0) = layer4.data.rowwise().mean().transpose();
    x.bottomRows(hw) = layer4.data.transpose();
    x += ap.positional_embedding;
    const nn::Matrix q = ap.q.forward(x.topRows(1));
    const nn::Matrix k = ap.k.forward(x);
    const nn::Matrix v = ap.v.forward(x);
    const int width = static_cast<int>(q.cols());
    const int d = width / ap.heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    nn::Matrix o(1, width);
    for (int h = 0; h < ap.heads; ++h) {
        const nn::Matrix scores = (q.middleCols(h * d, d) * scale) * k.middleCols(h * d, d).transpose();
        o.middleCols(h * d, d) = nn::softmax_rows(scores) * v.middleCols(h * d, d);
    }
    return ap.c.forward(o).transpose();
}

Eigen::VectorXf ModifiedResNetTower::encode(const nn::FeatureMap& pixels, ResNetTrace* trace) const {
    nn::FeatureMap x = stem_and_stages(pixels);
    Eigen::VectorXf f = attention_pool(x);
    if (trace) trace->layer4 = std::move(x);
    return f;
}

AttentionPoolTail::AttentionPoolTail(const AttentionPoolWeights& w) : heads_(w.heads) {
    pos_ = w.positional_embedding.cast<double>();
    wq_ = w.q.weight_t.cast<double>().transpose();
    wk_ = w.k.weight_t.cast<double>().transpose();
    wv_ = w.v.weight_t.cast<double>().transpose();
    wc_ = w.c.weight_t.cast<double>().transpose();
    bq_ = w.q.bias.transpose().cast<double>();
    bk_ = w.k.bias.transpose().cast<double>();
    bv_ = w.v.bias.transpose().cast<double>();
    bc_ = w.c.bias.transpose().cast<double>();
    wcv_t_ = (wc_ * wv_).transpose();
}

AttentionPoolTail::State AttentionPoolTail::forward(MatD activations) const {
    State s;
    s.A = std::move(activations);
    const auto hw = s.A.cols();
    const auto c = s.A.rows();
    if (hw + 1 != pos_.rows() || c != pos_.cols()) throw InputError("attention pool input has the wrong shape");
    s.X.resize(hw + 1, c);
    s.X.row(0) = s.A.rowwise().mean().transpose();
    s.X.bottomRows(hw) = s.A.transpose();
    s.X += pos_;
    s.q0 = wq_ * s.X.row(0).transpose() + bq_;
    s.K = s.X * wk_.transpose();
    s.K.rowwise() += bk_.transpose();
    s.V = s.X * wv_.transpose();
    s.V.rowwise() += bv_.transpose();
    const auto d = c / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    s.P.resize(heads_, hw + 1);
    s.o.resize(c);
    for (int h = 0; h < heads_; ++h) {
        VecD scores = s.K.middleCols(h * d, d) * s.q0.segment(h * d, d) * scale;
        scores = (scores.array() - scores.maxCoeff()).exp();
        scores /= scores.sum();
        s.P.row(h) = scores.transpose();
        s.o.segment(h * d, d) = s.V.middleCols(h * d, d).transpose() * scores;
    }
    s.f = wc_ * s.o + bc_;
    return s;
}

MatD AttentionPoolTail::backward(const State& s, const VecD& text_unit) const {
    const VecD g_o = wc_.transpose() * cosine_gradients(s.f, text_unit);
    const auto c = s.A.rows();
    const auto L = s.X.rows();
    const auto d = c / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    MatD g_K(L, c), g_V(L, c);
    VecD g_q0(c);
    for (int h = 0; h < heads_; ++h) {
        const VecD p = s.P.row(h).transpose();
        const VecD g_p = s.V.middleCols(h * d, d) * g_o.segment(h * d, d);
        const VecD g_s = p.cwiseProduct((g_p.array() - p.dot(g_p)).matrix());
        g_q0.segment(h * d, d) = s.K.middleCols(h * d, d).transpose() * g_s * scale;
        g_K.middleCols(h * d, d) = g_s * s.q0.segment(h * d, d).transpose() * scale;
        g_V.middleCols(h * d, d) = p * g_o.segment(h * d, d).transpose();
    }
    MatD g_X = g_K * wk_ + g_V * wv_;
    g_X.row(0) += (wq_.transpose() * g_q0).transpose();
    const auto hw = s.A.cols();
    MatD g_A = g_X.bottomRows(hw).transpose();
    g_A.colwise() += g_X.row(0).transpose() / static_cast<double>(hw);
    return g_A;
}

MatD AttentionPoolTail::mean_gradients(const State& s, const MatD& text_units) const {
    // Per head, summing over positions gives sum_l dK_l = (sum_l g_s) q0 and
    // sum_l dV_l = (sum_l p) g_o = g_o, so only the query path needs the full product.
    const MatD g_f = cosine_gradients(s.f, text_units);
    const MatD g_o = wc_.transpose() * g_f;
    const auto c = s.A.rows();
    const auto B = text_units.cols();
    const auto d = c / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    MatD g_q0(c, B);
    MatD total = wcv_t_ * g_f;
    for (int h = 0; h < heads_; ++h) {
        const VecD p = s.P.row(h).transpose();
        const MatD g_p = s.V.middleCols(h * d, d) * g_o.middleRows(h * d, d);  // [L x B]
        const Eigen::RowVectorXd pg = p.transpose() * g_p;
        const MatD g_s = (g_p.rowwise() - pg).array().colwise() * p.array();
        g_q0.middleRows(h * d, d) = s.K.middleCols(h * d, d).transpose() * g_s * scale;
        const VecD u = wk_.middleRows(h * d, d).transpose() * s.q0.segment(h * d, d) * scale;
        total.noalias() += u * g_s.colwise().sum();
    }
    total.noalias() += wq_.transpose() * g_q0;
    return total / static_cast<double>(s.A.cols());
}

VecD AttentionPoolTail::mean_gradient(const State& s, const VecD& text_unit) const {
    return mean_gradients(s, text_unit).col(0);
}

}  // namespace bk::clip
