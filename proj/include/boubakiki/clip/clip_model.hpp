#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "boubakiki/clip/nn.hpp"
#include "boubakiki/clip/safetensors.hpp"

namespace bk::clip {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecD = Eigen::VectorXd;
using nn::WeightReader;

enum class VisionArch { vit, modified_resnet };

// Architecture hyper-parameters, inferred from a checkpoint's tensor shapes.
// Head counts default to width/64 unless the file's metadata overrides them.
struct ClipConfig {
    int embed_dim = 0;
    VisionArch arch = VisionArch::vit;
    int image_size = 0;

    int vision_width = 0;
    int vision_layers = 0;  // ViT blocks
    std::array<int, 4> resnet_layers{};
    int patch_size = 0;
    int vision_heads = 0;

    int context_length = 0;
    int vocab_size = 0;
    int text_width = 0;
    int text_heads = 0;
    int text_layers = 0;

    nn::Activation activation = nn::Activation::quick_gelu;

    static ClipConfig infer(const SafeTensors& st);
    // Spatial side of the saliency grid (patch grid or final conv stage).
    int grid_size() const;
};

class TextTower {
public:
    TextTower(const SafeTensors& st, const ClipConfig& cfg);
    // Unnormalized joint-space embedding; tokens include start/end markers.
    Eigen::VectorXf encode(const std::vector<int>& tokens) const;

private:
    nn::Matrix token_embedding_;
    nn::Matrix positional_embedding_;
    std::vector<nn::ResidualAttentionBlock> blocks_;
    nn::LayerNorm ln_final_;
    nn::Matrix text_projection_;  // [width x embed]
    int end_token_;
};

// Intermediate values captured for saliency.
struct VitTrace {
    nn::Matrix last_block_input;                   // [tokens x width]
    std::vector<nn::Matrix> last_attention_probs;  // per head [tokens x tokens]
};

class VisionTransformerTower {
public:
    VisionTransformerTower(const SafeTensors& st, const ClipConfig& cfg);
    Eigen::VectorXf encode(const nn::FeatureMap& pixels, VitTrace* trace = nullptr) const;

    const ClipConfig& config() const { return cfg_; }
    const nn::ResidualAttentionBlock& last_block() const { return blocks_.back(); }
    const nn::LayerNorm& ln_post() const { return ln_post_; }
    const nn::Matrix& projection() const { return proj_; }

private:
    ClipConfig cfg_;
    nn::Conv2d patch_embed_;
    nn::RowVector class_embedding_;
    nn::Matrix positional_embedding_;
    nn::LayerNorm ln_pre_;
    std::vector<nn::ResidualAttentionBlock> blocks_;
    nn::LayerNorm ln_post_;
    nn::Matrix proj_;  // [width x embed]
};

struct ResNetTrace {
    nn::FeatureMap layer4;
};

struct Bottleneck {
    nn::Conv2d conv1, conv2, conv3;
    nn::BatchNorm2d bn1, bn2, bn3;
    int stride = 1;
    std::optional<std::pair<nn::Conv2d, nn::BatchNorm2d>> downsample;

    nn::FeatureMap forward(const nn::FeatureMap& x) const;
};

struct AttentionPoolWeights {
    nn::Matrix positional_embedding;  // [hw+1 x width]
    nn::Linear q, k, v, c;
    int heads = 1;
};

class ModifiedResNetTower {
public:
    ModifiedResNetTower(const SafeTensors& st, const ClipConfig& cfg);
    Eigen::VectorXf encode(const nn::FeatureMap& pixels, ResNetTrace* trace = nullptr) const;
    nn::FeatureMap stem_and_stages(const nn::FeatureMap& pixels) const;
    Eigen::VectorXf attention_pool(const nn::FeatureMap& layer4) const;

    const AttentionPoolWeights& attnpool() const { return attnpool_; }

private:
    ClipConfig cfg_;
    nn::Conv2d conv1_, conv2_, conv3_;
    nn::BatchNorm2d bn1_, bn2_, bn3_;
    std::array<std::vector<Bottleneck>, 4> layers_;
    AttentionPoolWeights attnpool_;
};

// Double-precision re-evaluation of the attention pool from the final conv stage,
// with exact reverse-mode derivatives of cosine(image, text).
class AttentionPoolTail {
public:
    explicit AttentionPoolTail(const AttentionPoolWeights& w);

    struct State {
        MatD A;   // [channels x hw]
        MatD X;   // [hw+1 x channels]
        VecD q0;  // query of the pooled token
        MatD K, V;
        MatD P;  // [heads x hw+1]
        VecD o;
        VecD f;  // image embedding (unnormalized)
    };

    State forward(MatD activations) const;
    // Gradient of the cosine score with respect to every activation.
    MatD backward(const State& s, const VecD& text_unit) const;
    // Spatial mean of backward(), one column per text direction (columns of text_units).
    // Summing the reverse pass over positions collapses it to a few matrix products.
    MatD mean_gradients(const State& s, const MatD& text_units) const;
    VecD mean_gradient(const State& s, const VecD& text_unit) const;

private:
    MatD pos_;
    MatD wq_, wk_, wv_, wc_;  // [out x in]
    MatD wcv_t_;              // (wc * wv)^T
    VecD bq_, bk_, bv_, bc_;
    int heads_;
};

// Double-precision re-evaluation of the final ViT block from its attention
// probabilities. Only the class-token row reaches the embedding.
class AttentionBlockTail {
public:
    explicit AttentionBlockTail(const VisionTransformerTower& tower);

    struct State {
        std::vector<MatD> P;  // per head [tokens x tokens]
        MatD V;               // value projections of all tokens
        VecD x0;              // class-token row of the block input
        VecD o, y0, n2_hat, h, z, u_hat, f;
        double n2_sigma = 1, u_sigma = 1;
    };

    State prepare(const nn::Matrix& block_input, const std::vector<nn::Matrix>& probs) const;
    // Recomputes everything downstream of P (class-token row only).
    void forward(State& s) const;
    // Gradient with respect to P; rows other than the class-token row are zero.
    std::vector<MatD> backward(const State& s, const VecD& text_unit) const;
    // Class-token row of backward() as [heads x tokens].
    MatD class_row_gradient(const State& s, const VecD& text_unit) const;
    // Batched form: entry h is [tokens x texts] for head h.
    std::vector<MatD> class_row_gradients(const State& s, const MatD& text_units) const;

private:

    MatD wv_, wo_, wfc_, wproj_, out_proj_;  // weights as [out x in]
    VecD ln1_g_, ln1_b_, bv_, bo_, ln2_g_, ln2_b_, bfc_, bproj_, lnp_g_, lnp_b_;
    nn::Activation act_;
    int heads_;
};

double cosine(const VecD& a, const VecD& b);

// d cos(f, t) / d f for unit-norm columns t.
MatD cosine_gradients(const VecD& f, const MatD& text_units);

class ClipModel {
public:
    static std::shared_ptr<const ClipModel> load(const std::filesystem::path& path);
    explicit ClipModel(const SafeTensors& st);

    const ClipConfig& config() const { return cfg_; }
    double logit_scale() const { return logit_scale_; }

    Eigen::VectorXf encode_text(const std::vector<int>& tokens) const;
    Eigen::VectorXf encode_image(const nn::FeatureMap& pixels) const;

    const VisionTransformerTower* vit() const { return vit_.get(); }
    const ModifiedResNetTower* resnet() const { return resnet_.get(); }
    const AttentionPoolTail* pool_tail() const { return pool_tail_.get(); }
    const AttentionBlockTail* block_tail() const { return block_tail_.get(); }

private:
    ClipConfig cfg_;
    double logit_scale_ = 100.0;
    std::unique_ptr<TextTower> text_;
    std::unique_ptr<VisionTransformerTower> vit_;
    std::unique_ptr<ModifiedResNetTower> resnet_;
    std::unique_ptr<AttentionPoolTail> pool_tail_;
    std::unique_ptr<AttentionBlockTail> block_tail_;
};

}  // namespace bk::clip
