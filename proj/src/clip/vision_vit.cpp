#include <cmath>

#include "boubakiki/clip/clip_model.hpp"
#include "boubakiki/types.hpp"

namespace bk::clip {

namespace {

MatD to_double(const nn::Matrix& m) { return m.cast<double>(); }
VecD to_double(const nn::RowVector& v) { return v.transpose().cast<double>(); }

// Backward of x_hat = (x - mean) / sigma, one column of dL/dx_hat per text direction.
MatD layer_norm_backward(const MatD& g_hat, const VecD& x_hat, double sigma) {
    const double n = static_cast<double>(g_hat.rows());
    const Eigen::RowVectorXd mg = g_hat.colwise().sum() / n;
    const Eigen::RowVectorXd mgx = (x_hat.transpose() * g_hat) / n;
    MatD out = g_hat.rowwise() - mg;
    out -= x_hat * mgx;
    return out / sigma;
}

VecD layer_norm_hat(const VecD& x, double& sigma) {
    const double mean = x.mean();
    const VecD c = x.array() - mean;
    sigma = std::sqrt(c.squaredNorm() / static_cast<double>(x.size()) + 1e-5);
    return c / sigma;
}

double act_value(double v, nn::Activation a) {
    if (a == nn::Activation::quick_gelu) return v / (1.0 + std::exp(-1.702 * v));
    return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
}

double act_derivative(double v, nn::Activation a) {
    if (a == nn::Activation::quick_gelu) {
        const double s = 1.0 / (1.0 + std::exp(-1.702 * v));
        return s + 1.702 * v * s * (1.0 - s);
    }
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
}

}  // namespace

VisionTransformerTower::VisionTransformerTower(const SafeTensors& st, const ClipConfig& cfg) : cfg_(cfg) {
    const WeightReader r(st, "visual.");
    const int w = cfg.vision_width;
    const int grid = cfg.image_size / cfg.patch_size;
    patch_embed_ = nn::Conv2d::load(r, "conv1", 3, w, cfg.patch_size, cfg.patch_size, 0);
    class_embedding_ = r.row("class_embedding", w);
    positional_embedding_ = r.matrix("positional_embedding", grid * grid + 1, w);
    ln_pre_ = nn::LayerNorm::load(r, "ln_pre", w);
    for (int i = 0; i < cfg.vision_layers; ++i)
        blocks_.push_back(nn::ResidualAttentionBlock::load(r.sub("transformer.resblocks." + std::to_string(i)), w,
                                                           cfg.vision_heads, cfg.activation));
    ln_post_ = nn::LayerNorm::load(r, "ln_post", w);
    proj_ = r.matrix("proj", w, cfg.embed_dim);
}

Eigen::VectorXf VisionTransformerTower::encode(const nn::FeatureMap& pixels, VitTrace* trace) const {
    if (pixels.channels() != 3 || pixels.height != cfg_.image_size || pixels.width != cfg_.image_size)
        throw InputError("vision transformer expects a 3x" + std::to_string(cfg_.image_size) + "x" +
                         std::to_string(cfg_.image_size) + " input");
    const nn::FeatureMap patches = patch_embed_.forward(pixels);
    const auto tokens = patches.data.cols() + 1;
    nn::Matrix x(tokens, patches.data.rows());
    x.row(0) = class_embedding_;
    x.bottomRows(tokens - 1) = patches.data.transpose();
    x += positional_embedding_;
    x = ln_pre_.forward(x);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const bool last = i + 1 == blocks_.size();
        if (last && trace) {
            trace->last_block_input = x;
            x = blocks_[i].forward(x, false, &trace->last_attention_probs);
        } else {
            x = blocks_[i].forward(x, false);
        }
    }
    const nn::Matrix cls = ln_post_.forward(x.topRows(1));
    return (cls * proj_).transpose();
}

AttentionBlockTail::AttentionBlockTail(const VisionTransformerTower& tower) {
    const auto& b = tower.last_block();
    heads_ = b.attn.heads;
    act_ = b.act;
    ln1_g_ = to_double(b.ln_1.gamma);
    ln1_b_ = to_double(b.ln_1.beta);
    wv_ = to_double(b.attn.v.weight_t).transpose();
    bv_ = to_double(b.attn.v.bias);
    wo_ = to_double(b.attn.out.weight_t).transpose();
    bo_ = to_double(b.attn.out.bias);
    ln2_g_ = to_double(b.ln_2.gamma);
    ln2_b_ = to_double(b.ln_2.beta);
    wfc_ = to_double(b.c_fc.weight_t).transpose();
    bfc_ = to_double(b.c_fc.bias);
    wproj_ = to_double(b.c_proj.weight_t).transpose();
    bproj_ = to_double(b.c_proj.bias);
    lnp_g_ = to_double(tower.ln_post().gamma);
    lnp_b_ = to_double(tower.ln_post().beta);
    out_proj_ = to_double(tower.projection()).transpose();
}

AttentionBlockTail::State AttentionBlockTail::prepare(const nn::Matrix& block_input,
                                                      const std::vector<nn::Matrix>& probs) const {
    if (static_cast<int>(probs.size()) != heads_) throw InputError("attention trace has the wrong head count");
    State s;
    const MatD x = to_double(block_input);
    MatD n1(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double sigma = 1;
        const VecD hat = layer_norm_hat(x.row(i).transpose(), sigma);
        n1.row(i) = (hat.array() * ln1_g_.array() + ln1_b_.array()).matrix().transpose();
    }
    s.V = n1 * wv_.transpose();
    s.V.rowwise() += bv_.transpose();
    s.x0 = x.row(0).transpose();
    for (const auto& p : probs) s.P.push_back(to_double(p));
    forward(s);
    return s;
}

void AttentionBlockTail::forward(State& s) const {
    const auto width = s.V.cols();
    const auto d = width / heads_;
    s.o.resize(width);
    for (int h = 0; h < heads_; ++h)
        s.o.segment(h * d, d) = s.V.middleCols(h * d, d).transpose() * s.P[h].row(0).transpose();
    s.y0 = s.x0 + wo_ * s.o + bo_;
    s.n2_hat = layer_norm_hat(s.y0, s.n2_sigma);
    const VecD n2 = s.n2_hat.cwiseProduct(ln2_g_) + ln2_b_;
    s.h = wfc_ * n2 + bfc_;
    const VecD g = s.h.unaryExpr([this](double v) { return act_value(v, act_); });
    s.z = s.y0 + wproj_ * g + bproj_;
    s.u_hat = layer_norm_hat(s.z, s.u_sigma);
    const VecD u = s.u_hat.cwiseProduct(lnp_g_) + lnp_b_;
    s.f = out_proj_ * u;
}

std::vector<MatD> AttentionBlockTail::class_row_gradients(const State& s, const MatD& text_units) const {
    const MatD g_f = cosine_gradients(s.f, text_units);
    const MatD g_u = out_proj_.transpose() * g_f;
    const MatD g_z = layer_norm_backward(g_u.array().colwise() * lnp_g_.array(), s.u_hat, s.u_sigma);
    MatD g_h = wproj_.transpose() * g_z;
    const VecD dact = s.h.unaryExpr([this](double v) { return act_derivative(v, act_); });
    g_h.array().colwise() *= dact.array();
    const MatD g_n2 = wfc_.transpose() * g_h;
    const MatD g_y0 = g_z + layer_norm_backward(g_n2.array().colwise() * ln2_g_.array(), s.n2_hat, s.n2_sigma);
    const MatD g_o = wo_.transpose() * g_y0;
    const auto d = s.V.cols() / heads_;
    std::vector<MatD> out;
    for (int h = 0; h < heads_; ++h) out.push_back(s.V.middleCols(h * d, d) * g_o.middleRows(h * d, d));
    return out;
}

MatD AttentionBlockTail::class_row_gradient(const State& s, const VecD& text_unit) const {
    const auto per_head = class_row_gradients(s, text_unit);
    MatD out(heads_, s.V.rows());
    for (int h = 0; h < heads_; ++h) out.row(h) = per_head[h].col(0).transpose();
    return out;
}

std::vector<MatD> AttentionBlockTail::backward(const State& s, const VecD& text_unit) const {
    const MatD row = class_row_gradient(s, text_unit);
    std::vector<MatD> g;
    for (int h = 0; h < heads_; ++h) {
        MatD m = MatD::Zero(s.P[h].rows(), s.P[h].cols());
        m.row(0) = row.row(h);
        g.push_back(std::move(m));
    }
    return g;
}

}  // namespace bk::clip
