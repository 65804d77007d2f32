#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boubakiki/clip/safetensors.hpp"

// Inference-only building blocks for the CLIP towers. Token sequences are
// row-major [tokens x width]; feature maps are [channels x (height*width)].
namespace bk::clip::nn {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXf;

class WeightReader {
public:
    WeightReader(const SafeTensors& st, std::string prefix) : st_(st), prefix_(std::move(prefix)) {}

    WeightReader sub(const std::string& name) const { return {st_, prefix_ + name + "."}; }
    bool contains(const std::string& name) const { return st_.contains(prefix_ + name); }
    const std::vector<std::int64_t>& shape(const std::string& name) const;
    const HostTensor& tensor(const std::string& name, const std::vector<std::int64_t>& shape) const;
    Matrix matrix(const std::string& name, int rows, int cols) const;
    RowVector row(const std::string& name, int n) const;

private:
    const SafeTensors& st_;
    std::string prefix_;
};

enum class Activation { quick_gelu, gelu };

void activate(Matrix& x, Activation act);

struct Linear {
    Matrix weight_t;  // [in x out]
    RowVector bias;   // empty when the layer has no bias

    static Linear load(const WeightReader& r, const std::string& name, int in, int out, bool bias = true);
    Matrix forward(const Matrix& x) const;
    int in() const { return static_cast<int>(weight_t.rows()); }
    int out() const { return static_cast<int>(weight_t.cols()); }
};

struct LayerNorm {
    RowVector gamma;
    RowVector beta;
    float eps = 1e-5f;

    static LayerNorm load(const WeightReader& r, const std::string& name, int width);
    Matrix forward(const Matrix& x) const;
};

struct MultiheadAttention {
    Linear q, k, v, out;
    int heads = 1;

    // Loads a fused in_proj_weight/in_proj_bias layout.
    static MultiheadAttention load(const WeightReader& r, int width, int heads);
    // probs, when given, receives one [tokens x tokens] matrix per head.
    Matrix forward(const Matrix& x, bool causal, std::vector<Matrix>* probs = nullptr) const;
};

struct ResidualAttentionBlock {
    LayerNorm ln_1, ln_2;
    MultiheadAttention attn;
    Linear c_fc, c_proj;
    Activation act = Activation::quick_gelu;

    static ResidualAttentionBlock load(const WeightReader& r, int width, int heads, Activation act);
    Matrix forward(const Matrix& x, bool causal, std::vector<Matrix>* probs = nullptr) const;
};

struct FeatureMap {
    Matrix data;  // [channels x (height*width)]
    int height = 0;
    int width = 0;

    int channels() const { return static_cast<int>(data.rows()); }
};

struct Conv2d {
    Matrix weight;  // [out x in*k*k]
    int in = 0, out = 0, kernel = 1, stride = 1, padding = 0;

    static Conv2d load(const WeightReader& r, const std::string& name, int in, int out, int kernel, int stride,
                       int padding);
    FeatureMap forward(const FeatureMap& x) const;
};

// Eval-mode batch norm folded into a per-channel affine map.
struct BatchNorm2d {
    Eigen::VectorXf scale;
    Eigen::VectorXf shift;

    static BatchNorm2d load(const WeightReader& r, const std::string& name, int channels, float eps = 1e-5f);
    void apply(FeatureMap& x, bool relu) const;
};

FeatureMap avg_pool(const FeatureMap& x, int kernel);

Matrix softmax_rows(const Matrix& x);

}  // namespace bk::clip::nn
