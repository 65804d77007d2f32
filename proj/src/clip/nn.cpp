#include "boubakiki/clip/nn.hpp"

#include <cmath>
#include <limits>

#include "boubakiki/types.hpp"

namespace bk::clip::nn {

namespace {

std::string shape_str(const std::vector<std::int64_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
    return out + "]";
}

}  // namespace

const HostTensor& WeightReader::tensor(const std::string& name, const std::vector<std::int64_t>& shape) const {
    const auto& t = st_.at(prefix_ + name);
    if (t.shape != shape)
        throw InputError("tensor " + prefix_ + name + " has shape " + shape_str(t.shape) + ", expected " +
                         shape_str(shape));
    return t;
}

const std::vector<std::int64_t>& WeightReader::shape(const std::string& name) const {
    return st_.at(prefix_ + name).shape;
}

Matrix WeightReader::matrix(const std::string& name, int rows, int cols) const {
    const auto& t = tensor(name, {rows, cols});
    return Eigen::Map<const Matrix>(t.data.data(), rows, cols);
}

RowVector WeightReader::row(const std::string& name, int n) const {
    const auto& t = tensor(name, {n});
    return Eigen::Map<const RowVector>(t.data.data(), n);
}

void activate(Matrix& x, Activation act) {
    if (act == Activation::quick_gelu) {
        x = x.array() * (1.0f / (1.0f + (-1.702f * x.array()).exp()));
    } else {
        x = x.unaryExpr([](float v) { return 0.5f * v * (1.0f + std::erf(v * 0.70710678118654752f)); });
    }
}

Linear Linear::load(const WeightReader& r, const std::string& name, int in, int out, bool bias) {
    Linear l;
    l.weight_t = r.matrix(name + ".weight", out, in).transpose();
    if (bias) l.bias = r.row(name + ".bias", out);
    return l;
}

Matrix Linear::forward(const Matrix& x) const {
    Matrix y = x * weight_t;
    if (bias.size()) y.rowwise() += bias;
    return y;
}

LayerNorm LayerNorm::load(const WeightReader& r, const std::string& name, int width) {
    return {r.row(name + ".weight", width), r.row(name + ".bias", width)};
}

Matrix LayerNorm::forward(const Matrix& x) const {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const float mean = x.row(i).mean();
        const RowVector centered = x.row(i).array() - mean;
        const float var = centered.squaredNorm() / static_cast<float>(x.cols());
        y.row(i) = (centered.array() / std::sqrt(var + eps)) * gamma.array() + beta.array();
    }
    return y;
}

MultiheadAttention MultiheadAttention::load(const WeightReader& r, int width, int heads) {
    if (heads <= 0 || width % heads != 0)
        throw InputError("attention width " + std::to_string(width) + " not divisible by " + std::to_string(heads));
    const Matrix w = r.matrix("in_proj_weight", 3 * width, width);
    const RowVector b = r.row("in_proj_bias", 3 * width);
    MultiheadAttention m;
    m.heads = heads;
    m.q = {w.topRows(width).transpose(), b.head(width)};
    m.k = {w.middleRows(width, width).transpose(), b.segment(width, width)};
    m.v = {w.bottomRows(width).transpose(), b.tail(width)};
    m.out = Linear::load(r, "out_proj", width, width);
    return m;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const float mx = x.row(i).maxCoeff();
        RowVector e = (x.row(i).array() - mx).exp();
        y.row(i) = e / e.sum();
    }
    return y;
}

Matrix MultiheadAttention::forward(const Matrix& x, bool causal, std::vector<Matrix>* probs) const {
    const Matrix Q = q.forward(x);
    const Matrix K = k.forward(x);
    const Matrix V = v.forward(x);
    const int width = static_cast<int>(Q.cols());
    const int d = width / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    const auto n = x.rows();
    Matrix merged(n, width);
    if (probs) probs->clear();
    for (int h = 0; h < heads; ++h) {
        Matrix scores = (Q.middleCols(h * d, d) * scale) * K.middleCols(h * d, d).transpose();
        if (causal) {
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = i + 1; j < n; ++j) scores(i, j) = -std::numeric_limits<float>::infinity();
        }
        Matrix p = softmax_rows(scores);
        merged.middleCols(h * d, d) = p * V.middleCols(h * d, d);
        if (probs) probs->push_back(std::move(p));
    }
    return out.forward(merged);
}

ResidualAttentionBlock ResidualAttentionBlock::load(const WeightReader& r, int width, int heads, Activation act) {
    ResidualAttentionBlock b;
    b.ln_1 = LayerNorm::load(r, "ln_1", width);
    b.ln_2 = LayerNorm::load(r, "ln_2", width);
    b.attn = MultiheadAttention::load(r.sub("attn"), width, heads);
    const auto hidden = static_cast<int>(r.shape("mlp.c_fc.bias").at(0));
    b.c_fc = Linear::load(r, "mlp.c_fc", width, hidden);
    b.c_proj = Linear::load(r, "mlp.c_proj", hidden, width);
    b.act = act;
    return b;
}

Matrix ResidualAttentionBlock::forward(const Matrix& x, bool causal, std::vector<Matrix>* probs) const {
    Matrix y = x + attn.forward(ln_1.forward(x), causal, probs);
    Matrix h = c_fc.forward(ln_2.forward(y));
    activate(h, act);
    y += c_proj.forward(h);
    return y;
}

Conv2d Conv2d::load(const WeightReader& r, const std::string& name, int in, int out, int kernel, int stride,
                    int padding) {
    Conv2d c;
    const auto& t = r.tensor(name + ".weight", {out, in, kernel, kernel});
    c.weight = Eigen::Map<const Matrix>(t.data.data(), out, static_cast<Eigen::Index>(in) * kernel * kernel);
    c.in = in;
    c.out = out;
    c.kernel = kernel;
    c.stride = stride;
    c.padding = padding;
    return c;
}

FeatureMap Conv2d::forward(const FeatureMap& x) const {
    if (x.channels() != in)
        throw InputError("conv expects " + std::to_string(in) + " channels, got " + std::to_string(x.channels()));
    const int oh = (x.height + 2 * padding - kernel) / stride + 1;
    const int ow = (x.width + 2 * padding - kernel) / stride + 1;
    FeatureMap y;
    y.height = oh;
    y.width = ow;
    if (kernel == 1 && stride == 1 && padding == 0) {
        y.data = weight * x.data;
        return y;
    }
    Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(in) * kernel * kernel, static_cast<Eigen::Index>(oh) * ow);
    for (int c = 0; c < in; ++c) {
        const float* src = x.data.row(c).data();
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                float* dst = cols.row((static_cast<Eigen::Index>(c) * kernel + ky) * kernel + kx).data();
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= x.height) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - padding + kx;
                        if (ix < 0 || ix >= x.width) continue;
                        dst[oy * ow + ox] = src[iy * x.width + ix];
                    }
                }
            }
        }
    }
    y.data = weight * cols;
    return y;
}

BatchNorm2d BatchNorm2d::load(const WeightReader& r, const std::string& name, int channels, float eps) {
    const RowVector gamma = r.row(name + ".weight", channels);
    const RowVector beta = r.row(name + ".bias", channels);
    const RowVector mean = r.row(name + ".running_mean", channels);
    const RowVector var = r.row(name + ".running_var", channels);
    BatchNorm2d bn;
    bn.scale = (gamma.array() / (var.array() + eps).sqrt()).transpose();
    bn.shift = (beta.array() - mean.array() * bn.scale.transpose().array()).transpose();
    return bn;
}

void BatchNorm2d::apply(FeatureMap& x, bool relu) const {
    x.data = (x.data.array().colwise() * scale.array()).colwise() + shift.array();
    if (relu) x.data = x.data.cwiseMax(0.0f);
}

FeatureMap avg_pool(const FeatureMap& x, int kernel) {
    if (kernel == 1) return x;
    const int oh = x.height / kernel;
    const int ow = x.width / kernel;
    FeatureMap y;
    y.height = oh;
    y.width = ow;
    y.data = Matrix::Zero(x.channels(), static_cast<Eigen::Index>(oh) * ow);
    const float inv = 1.0f / static_cast<float>(kernel * kernel);
    for (int c = 0; c < x.channels(); ++c) {
        const float* src = x.data.row(c).data();
        float* dst = y.data.row(c).data();
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                float s = 0;
                for (int ky = 0; ky < kernel; ++ky)
                    for (int kx = 0; kx < kernel; ++kx) s += src[(oy * kernel + ky) * x.width + ox * kernel + kx];
                dst[oy * ow + ox] = s * inv;
            }
    }
    return y;
}

}  // namespace bk::clip::nn
