#include "boubakiki/model_adapter.hpp"

#include <cmath>
#include <cstdlib>

#include <opencv2/imgproc.hpp>

#include "boubakiki/clip/tokenizer.hpp"
#include "boubakiki/types.hpp"
#include "boubakiki/util.hpp"

namespace bk::adapter {

namespace {

constexpr float kMean[3] = {0.48145466f, 0.4578275f, 0.40821073f};
constexpr float kStd[3] = {0.26862954f, 0.26130258f, 0.27577711f};
constexpr Eigen::Index kTextChunk = 512;

std::vector<Checkpoint>& registry() {
    static std::vector<Checkpoint> r{{"resnet50", "RN50.safetensors"}, {"vit", "ViT-B-32.safetensors"}};
    return r;
}

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

cv::Mat to_bgr(const cv::Mat& image) {
    if (image.empty()) throw InputError("empty image");
    if (image.depth() != CV_8U) throw InputError("images must be 8-bit");
    cv::Mat bgr;
    switch (image.channels()) {
        case 1: cv::cvtColor(image, bgr, cv::COLOR_GRAY2BGR); break;
        case 3: bgr = image; break;
        case 4: cv::cvtColor(image, bgr, cv::COLOR_BGRA2BGR); break;
        default: throw InputError("unsupported channel count " + std::to_string(image.channels()));
    }
    return bgr;
}

cv::Mat resize_to(const cv::Mat& src, int width, int height) {
    if (src.cols == width && src.rows == height) return src;
    const bool shrinking = width < src.cols || height < src.rows;
    cv::Mat out;
    cv::resize(src, out, cv::Size(width, height), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_CUBIC);
    return out;
}

class ResNetImageTrace final : public ImageTrace {
public:
    clip::AttentionPoolTail::State state;
    LayerMap map;
    const LayerMap& activations() const override { return map; }
    const VecD& image_embedding() const override { return state.f; }
};

class VitImageTrace final : public ImageTrace {
public:
    clip::AttentionBlockTail::State state;
    LayerMap map;
    const LayerMap& activations() const override { return map; }
    const VecD& image_embedding() const override { return state.f; }
};

}  // namespace

const std::vector<Checkpoint>& registered_checkpoints() { return registry(); }

void register_checkpoint(Checkpoint c) {
    std::lock_guard lock(registry_mutex());
    for (auto& e : registry())
        if (e.model_id == c.model_id) {
            e = std::move(c);
            return;
        }
    registry().push_back(std::move(c));
}

std::vector<std::string> registered_model_ids() {
    std::lock_guard lock(registry_mutex());
    std::vector<std::string> ids;
    for (const auto& e : registry()) ids.push_back(e.model_id);
    return ids;
}

std::filesystem::path default_weights_dir() {
    for (const char* var : {"BOUBAKIKI_WEIGHTS_DIR", "BOUBA_WEIGHTS_DIR"})
        if (const char* v = std::getenv(var); v && *v) return v;
    return "weights";
}

std::filesystem::path checkpoint_path(const std::string& model_id, const std::filesystem::path& weights_dir) {
    std::lock_guard lock(registry_mutex());
    for (const auto& e : registry())
        if (e.model_id == model_id) return weights_dir / e.file_name;
    throw InputError("unknown model id: " + model_id);
}

bool weights_available(const std::string& model_id, const std::filesystem::path& weights_dir) {
    return std::filesystem::is_regular_file(checkpoint_path(model_id, weights_dir));
}

LetterboxGeometry letterbox_geometry(int width, int height) {
    const int side = std::max(width, height);
    return {side, (side - width) / 2, (side - height) / 2};
}

clip::nn::FeatureMap preprocess_image(const cv::Mat& image, int resolution, Framing framing) {
    cv::Mat bgr = to_bgr(image);
    cv::Mat square;
    if (framing == Framing::letterbox) {
        const auto g = letterbox_geometry(bgr.cols, bgr.rows);
        cv::copyMakeBorder(bgr, square, g.offset_y, g.side - bgr.rows - g.offset_y, g.offset_x,
                           g.side - bgr.cols - g.offset_x, cv::BORDER_CONSTANT, cv::Scalar(255, 255, 255));
        square = resize_to(square, resolution, resolution);
    } else {
        const double scale = static_cast<double>(resolution) / std::min(bgr.cols, bgr.rows);
        const int w = bgr.cols <= bgr.rows ? resolution : static_cast<int>(bgr.cols * scale);
        const int h = bgr.rows <= bgr.cols ? resolution : static_cast<int>(bgr.rows * scale);
        const cv::Mat resized = resize_to(bgr, w, h);
        const int top = static_cast<int>(std::lround((h - resolution) / 2.0));
        const int left = static_cast<int>(std::lround((w - resolution) / 2.0));
        square = resized(cv::Rect(left, top, resolution, resolution));
    }
    clip::nn::FeatureMap fm;
    fm.height = resolution;
    fm.width = resolution;
    fm.data.resize(3, static_cast<Eigen::Index>(resolution) * resolution);
    for (int y = 0; y < resolution; ++y) {
        const auto* row = square.ptr<cv::Vec3b>(y);
        for (int x = 0; x < resolution; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = row[x][2 - c] / 255.0f;  // BGR -> RGB
                fm.data(c, static_cast<Eigen::Index>(y) * resolution + x) = (v - kMean[c]) / kStd[c];
            }
    }
    return fm;
}

ScoredLabels probabilities_from_embeddings(const VecD& image_unit, const MatD& text_units, double logit_scale,
                                           std::vector<std::string> label_ids) {
    if (text_units.rows() == 0) throw InputError("no prompts to score");
    const VecD logits = logit_scale * (text_units * image_unit);
    const VecD e = (logits.array() - logits.maxCoeff()).exp();
    const VecD p = e / e.sum();
    ScoredLabels out;
    out.probabilities.assign(p.data(), p.data() + p.size());
    if (label_ids.empty())
        for (Eigen::Index i = 0; i < p.size(); ++i) label_ids.push_back(std::to_string(i));
    if (static_cast<Eigen::Index>(label_ids.size()) != p.size()) throw InputError("label id count mismatch");
    out.label_ids = std::move(label_ids);
    return out;
}

ModelHandle::ModelHandle(std::string model_id, std::shared_ptr<const clip::ClipModel> model, std::string weights_hash)
    : model_id_(std::move(model_id)), model_(std::move(model)), weights_hash_(std::move(weights_hash)) {
    if (!model_) throw InputError("model handle needs a model");
    const auto& cfg = model_->config();
    if (cfg.arch == clip::VisionArch::modified_resnet)
        target_layer_ = "visual.layer4";
    else
        target_layer_ = "visual.transformer.resblocks." + std::to_string(cfg.vision_layers - 1) + ".attn";
}

SaliencyKind ModelHandle::saliency_kind() const {
    return model_->config().arch == clip::VisionArch::modified_resnet ? SaliencyKind::grad_cam
                                                                      : SaliencyKind::attention_relevance;
}

MatD ModelHandle::embed_text(const std::vector<std::string>& prompts) const {
    if (prompts.empty()) throw InputError("embed_text needs at least one prompt");
    const auto& tok = clip::BpeTokenizer::shared();
    MatD out(static_cast<Eigen::Index>(prompts.size()), embed_dim());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        {
            std::lock_guard lock(cache_mutex_);
            if (auto it = text_cache_.find(prompts[i]); it != text_cache_.end()) {
                out.row(static_cast<Eigen::Index>(i)) = it->second.transpose();
                continue;
            }
        }
        const auto ids = tok.tokenize(prompts[i], model_->config().context_length);
        VecD e = model_->encode_text(ids).cast<double>();
        e.normalize();
        out.row(static_cast<Eigen::Index>(i)) = e.transpose();
        std::lock_guard lock(cache_mutex_);
        text_cache_.emplace(prompts[i], std::move(e));
    }
    return out;
}

clip::nn::FeatureMap ModelHandle::preprocess(const cv::Mat& image, Framing framing) const {
    return preprocess_image(image, input_resolution(), framing);
}

MatD ModelHandle::embed_image(const std::vector<cv::Mat>& images, Framing framing) const {
    MatD out(static_cast<Eigen::Index>(images.size()), embed_dim());
    for (std::size_t i = 0; i < images.size(); ++i) {
        VecD e = model_->encode_image(preprocess(images[i], framing)).cast<double>();
        e.normalize();
        out.row(static_cast<Eigen::Index>(i)) = e.transpose();
    }
    return out;
}

ScoredLabels ModelHandle::label_probabilities(const cv::Mat& image, const std::vector<std::string>& prompts,
                                              Framing framing) const {
    if (prompts.empty()) throw InputError("label_probabilities needs prompts");
    const MatD img = embed_image({image}, framing);
    return probabilities_from_embeddings(img.row(0).transpose(), embed_text(prompts), logit_scale(), prompts);
}

std::unique_ptr<ImageTrace> ModelHandle::trace_image(const cv::Mat& image, Framing framing) const {
    const auto pixels = preprocess(image, framing);
    if (const auto* rn = model_->resnet()) {
        auto t = std::make_unique<ResNetImageTrace>();
        const clip::nn::FeatureMap a = rn->stem_and_stages(pixels);
        t->state = model_->pool_tail()->forward(a.data.cast<double>());
        t->map.data = t->state.A;
        t->map.grid_height = a.height;
        t->map.grid_width = a.width;
        return t;
    }
    clip::VitTrace vt;
    model_->vit()->encode(pixels, &vt);
    auto t = std::make_unique<VitImageTrace>();
    t->state = model_->block_tail()->prepare(vt.last_block_input, vt.last_attention_probs);
    const auto heads = static_cast<Eigen::Index>(t->state.P.size());
    const auto tokens = t->state.P.front().cols();
    t->map.data.resize(heads, tokens);
    for (Eigen::Index h = 0; h < heads; ++h) t->map.data.row(h) = t->state.P[h].row(0);
    t->map.grid_height = t->map.grid_width = grid_size();
    t->map.leading_tokens = 1;
    return t;
}

ReducedGradients ModelHandle::reduced_gradients(const ImageTrace& trace, const MatD& text_units) const {
    if (text_units.rows() != embed_dim()) throw InputError("text directions have the wrong dimension");
    ReducedGradients out;
    const VecD& f = trace.image_embedding();
    out.scores = (text_units.transpose() * f) / f.norm();
    for (Eigen::Index start = 0; start < text_units.cols(); start += kTextChunk) {
        const auto n = std::min(kTextChunk, text_units.cols() - start);
        const MatD chunk = text_units.middleCols(start, n);
        if (const auto* rt = dynamic_cast<const ResNetImageTrace*>(&trace)) {
            const MatD m = model_->pool_tail()->mean_gradients(rt->state, chunk);
            for (Eigen::Index b = 0; b < n; ++b) out.reduced.push_back(m.col(b));
        } else {
            const auto& vt = dynamic_cast<const VitImageTrace&>(trace);
            const auto per_head = model_->block_tail()->class_row_gradients(vt.state, chunk);
            const auto heads = static_cast<Eigen::Index>(per_head.size());
            for (Eigen::Index b = 0; b < n; ++b) {
                MatD r(heads, per_head.front().rows());
                for (Eigen::Index h = 0; h < heads; ++h) r.row(h) = per_head[h].col(b).transpose();
                out.reduced.push_back(std::move(r));
            }
        }
    }
    return out;
}

GradientResult ModelHandle::gradients(const ImageTrace& trace, const VecD& text_unit) const {
    GradientResult r;
    r.activations = trace.activations();
    r.gradients = r.activations;
    const VecD& f = trace.image_embedding();
    r.score = f.dot(text_unit) / (f.norm() * text_unit.norm());
    const VecD t = text_unit.normalized();
    if (const auto* rt = dynamic_cast<const ResNetImageTrace*>(&trace)) {
        r.gradients.data = model_->pool_tail()->backward(rt->state, t);
    } else {
        const auto& vt = dynamic_cast<const VitImageTrace&>(trace);
        r.gradients.data = model_->block_tail()->class_row_gradient(vt.state, t);
    }
    return r;
}

GradientResult ModelHandle::score_with_gradients(const cv::Mat& image, const std::string& prompt, Framing framing) {
    const VecD t = embed_text({prompt}).row(0).transpose();
    last_trace_ = trace_image(image, framing);
    return gradients(*last_trace_, t);
}

std::unique_ptr<ModelHandle> ModelHandle::replicate() const {
    return std::make_unique<ModelHandle>(model_id_, model_, weights_hash_);
}

std::unique_ptr<ModelHandle> load_model(const std::string& model_id, const std::filesystem::path& weights_dir) {
    const auto path = checkpoint_path(model_id, weights_dir);
    if (!std::filesystem::is_regular_file(path))
        throw WeightsUnavailable("weights for '" + model_id + "' not found at " + path.string() +
                                 " (set BOUBAKIKI_WEIGHTS_DIR or --weights-dir; convert checkpoints with "
                                 "tools/convert_checkpoint.py)");
    auto model = clip::ClipModel::load(path);
    return std::make_unique<ModelHandle>(model_id, std::move(model), util::hash_file(path));
}

}  // namespace bk::adapter
