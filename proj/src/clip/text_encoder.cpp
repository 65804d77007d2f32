#include "boubakiki/clip/clip_model.hpp"
#include "boubakiki/types.hpp"

namespace bk::clip {

TextTower::TextTower(const SafeTensors& st, const ClipConfig& cfg) {
    const WeightReader r(st, "");
    token_embedding_ = r.matrix("token_embedding.weight", cfg.vocab_size, cfg.text_width);
    positional_embedding_ = r.matrix("positional_embedding", cfg.context_length, cfg.text_width);
    for (int i = 0; i < cfg.text_layers; ++i)
        blocks_.push_back(nn::ResidualAttentionBlock::load(r.sub("transformer.resblocks." + std::to_string(i)),
                                                           cfg.text_width, cfg.text_heads, cfg.activation));
    ln_final_ = nn::LayerNorm::load(r, "ln_final", cfg.text_width);
    text_projection_ = r.matrix("text_projection", cfg.text_width, cfg.embed_dim);
    end_token_ = cfg.vocab_size - 1;
}

Eigen::VectorXf TextTower::encode(const std::vector<int>& tokens) const {
    if (tokens.empty()) throw InputError("empty token sequence");
    if (static_cast<Eigen::Index>(tokens.size()) > positional_embedding_.rows())
        throw InputError("token sequence longer than the text context");
    // Pooling happens at the highest token id (the end marker). With a causal
    // mask nothing after it can influence that row, so the sequence is cut there.
    std::size_t eot = 0;
    for (std::size_t i = 1; i < tokens.size(); ++i)
        if (tokens[i] > tokens[eot]) eot = i;
    const auto n = static_cast<Eigen::Index>(eot + 1);
    nn::Matrix x(n, token_embedding_.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const int id = tokens[static_cast<std::size_t>(i)];
        if (id < 0 || id >= token_embedding_.rows()) throw InputError("token id out of range: " + std::to_string(id));
        x.row(i) = token_embedding_.row(id) + positional_embedding_.row(i);
    }
    for (const auto& b : blocks_) x = b.forward(x, true);
    const nn::Matrix last = ln_final_.forward(x.bottomRows(1));
    return (last * text_projection_).transpose();
}

}  // namespace bk::clip
