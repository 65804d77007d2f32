#include "boubakiki/clip/clip_model.hpp"

#include <cmath>
#include <set>

#include "boubakiki/types.hpp"

namespace bk::clip {

namespace {

int dim(const SafeTensors& st, const std::string& name, int i) {
    if (!st.contains(name)) throw InputError("checkpoint is missing " + name);
    return static_cast<int>(st.at(name).dim(i));
}

// Number of distinct indices matching prefix + "<n>." among tensor names.
int count_indexed(const SafeTensors& st, const std::string& prefix) {
    std::set<int> seen;
    for (const auto& n : st.names()) {
        if (n.rfind(prefix, 0) != 0) continue;
        const auto rest = n.substr(prefix.size());
        const auto dot = rest.find('.');
        if (dot == std::string::npos || dot == 0) continue;
        try {
            seen.insert(std::stoi(rest.substr(0, dot)));
        } catch (const std::exception&) {
        }
    }
    return static_cast<int>(seen.size());
}

int metadata_int(const SafeTensors& st, const std::string& key, int fallback) {
    const auto it = st.metadata().find(key);
    if (it == st.metadata().end()) return fallback;
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        throw InputError("checkpoint metadata " + key + " is not an integer: " + it->second);
    }
}

int isqrt_exact(int n, const std::string& what) {
    const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (r * r != n) throw InputError(what + " is not a square grid");
    return r;
}

}  // namespace

ClipConfig ClipConfig::infer(const SafeTensors& st) {
    ClipConfig c;
    c.embed_dim = dim(st, "text_projection", 1);
    c.context_length = dim(st, "positional_embedding", 0);
    c.vocab_size = dim(st, "token_embedding.weight", 0);
    c.text_width = dim(st, "ln_final.weight", 0);
    c.text_layers = count_indexed(st, "transformer.resblocks.");
    c.text_heads = metadata_int(st, "text_heads", c.text_width / 64);

    if (st.contains("visual.proj")) {
        c.arch = VisionArch::vit;
        c.vision_width = dim(st, "visual.conv1.weight", 0);
        c.patch_size = dim(st, "visual.conv1.weight", 3);
        c.vision_layers = count_indexed(st, "visual.transformer.resblocks.");
        const int grid = isqrt_exact(dim(st, "visual.positional_embedding", 0) - 1, "ViT positional embedding");
        c.image_size = grid * c.patch_size;
        c.vision_heads = metadata_int(st, "vision_heads", c.vision_width / 64);
    } else if (st.contains("visual.attnpool.positional_embedding")) {
        c.arch = VisionArch::modified_resnet;
        for (int s = 0; s < 4; ++s) c.resnet_layers[s] = count_indexed(st, "visual.layer" + std::to_string(s + 1) + ".");
        c.vision_width = dim(st, "visual.layer1.0.conv1.weight", 0);
        const int grid =
            isqrt_exact(dim(st, "visual.attnpool.positional_embedding", 0) - 1, "attention pool positional embedding");
        c.image_size = grid * 32;
        c.vision_heads = metadata_int(st, "vision_heads", c.vision_width * 32 / 64);
    } else {
        throw InputError("checkpoint has no recognizable vision tower");
    }
    if (c.text_heads <= 0 || c.vision_heads <= 0) throw InputError("checkpoint head counts must be positive");
    const auto act = st.metadata().find("activation");
    if (act != st.metadata().end()) {
        if (act->second == "gelu")
            c.activation = nn::Activation::gelu;
        else if (act->second != "quick_gelu")
            throw InputError("unknown activation in checkpoint metadata: " + act->second);
    }
    return c;
}

int ClipConfig::grid_size() const { return arch == VisionArch::vit ? image_size / patch_size : image_size / 32; }

double cosine(const VecD& a, const VecD& b) { return a.dot(b) / (a.norm() * b.norm()); }

MatD cosine_gradients(const VecD& f, const MatD& text_units) {
    const double norm = f.norm();
    const Eigen::RowVectorXd dots = f.transpose() * text_units;
    MatD g = text_units / norm;
    g.noalias() -= f * (dots / (norm * norm * norm));
    return g;
}

ClipModel::ClipModel(const SafeTensors& st) : cfg_(ClipConfig::infer(st)) {
    if (st.contains("logit_scale")) logit_scale_ = std::exp(static_cast<double>(st.at("logit_scale").data.at(0)));
    text_ = std::make_unique<TextTower>(st, cfg_);
    if (cfg_.arch == VisionArch::vit) {
        vit_ = std::make_unique<VisionTransformerTower>(st, cfg_);
        block_tail_ = std::make_unique<AttentionBlockTail>(*vit_);
    } else {
        resnet_ = std::make_unique<ModifiedResNetTower>(st, cfg_);
        pool_tail_ = std::make_unique<AttentionPoolTail>(resnet_->attnpool());
    }
}

std::shared_ptr<const ClipModel> ClipModel::load(const std::filesystem::path& path) {
    const SafeTensors st = SafeTensors::load(path);
    return std::make_shared<const ClipModel>(st);
}

Eigen::VectorXf ClipModel::encode_text(const std::vector<int>& tokens) const { return text_->encode(tokens); }

Eigen::VectorXf ClipModel::encode_image(const nn::FeatureMap& pixels) const {
    return vit_ ? vit_->encode(pixels) : resnet_->encode(pixels);
}

}  // namespace bk::clip
