#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/core.hpp>

#include "boubakiki/clip/clip_model.hpp"

namespace bk::adapter {

// Raised when checkpoint files cannot be found; maps to exit code 2.
class WeightsUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using MatD = clip::MatD;
using VecD = clip::VecD;

// How a non-square image reaches the square model input.
// center_crop is the checkpoints' published pipeline (shortest side resize, center crop);
// letterbox pads with white to a square first so nothing is cut off (used for composites).
enum class Framing { center_crop, letterbox };

enum class SaliencyKind {
    grad_cam,            // final convolutional stage
    attention_relevance  // final attention block
};

struct ScoredLabels {
    std::vector<std::string> label_ids;
    std::vector<double> probabilities;
};

// Values at the target layer laid out as [channels x positions]. For grad_cam the
// channels are feature channels and positions the height*width grid. For
// attention_relevance the channels are heads and positions are the class-token
// attention row (one leading class position followed by the patch grid).
struct LayerMap {
    MatD data;
    int grid_height = 0;
    int grid_width = 0;
    int leading_tokens = 0;
};

struct GradientResult {
    double score = 0;  // cosine(text, image)
    LayerMap activations;
    LayerMap gradients;
};

// Target-layer state from one image forward pass, reusable across many texts.
class ImageTrace {
public:
    virtual ~ImageTrace() = default;
    virtual const LayerMap& activations() const = 0;
    virtual const VecD& image_embedding() const = 0;  // unnormalized, double precision
};

// Gradients reduced to what saliency needs: per-channel spatial means (grad_cam)
// or the class-token attention-row gradient (attention_relevance), one column per text.
struct ReducedGradients {
    VecD scores;                 // cosine per text
    std::vector<MatD> reduced;   // per text: [channels x 1] or [heads x positions]
};

struct Checkpoint {
    std::string model_id;
    std::string file_name;
};

// Known model ids and their weight files inside the weights directory.
const std::vector<Checkpoint>& registered_checkpoints();
void register_checkpoint(Checkpoint c);
std::vector<std::string> registered_model_ids();

// $BOUBAKIKI_WEIGHTS_DIR, then $BOUBA_WEIGHTS_DIR, then ./weights.
std::filesystem::path default_weights_dir();
std::filesystem::path checkpoint_path(const std::string& model_id, const std::filesystem::path& weights_dir);
bool weights_available(const std::string& model_id, const std::filesystem::path& weights_dir);

class ModelHandle {
public:
    ModelHandle(std::string model_id, std::shared_ptr<const clip::ClipModel> model, std::string weights_hash = {});

    const std::string& model_id() const { return model_id_; }
    int embed_dim() const { return model_->config().embed_dim; }
    const std::string& target_layer_id() const { return target_layer_; }
    double logit_scale() const { return model_->logit_scale(); }
    SaliencyKind saliency_kind() const;
    int input_resolution() const { return model_->config().image_size; }
    int grid_size() const { return model_->config().grid_size(); }
    const std::string& weights_hash() const { return weights_hash_; }
    const clip::ClipModel& model() const { return *model_; }

    // Unit-normalized rows. Throws clip::TokenLimitError for over-long prompts.
    MatD embed_text(const std::vector<std::string>& prompts) const;
    MatD embed_image(const std::vector<cv::Mat>& images, Framing framing = Framing::center_crop) const;

    ScoredLabels label_probabilities(const cv::Mat& image, const std::vector<std::string>& prompts,
                                     Framing framing = Framing::center_crop) const;

    GradientResult score_with_gradients(const cv::Mat& image, const std::string& prompt,
                                        Framing framing = Framing::center_crop);

    std::unique_ptr<ImageTrace> trace_image(const cv::Mat& image, Framing framing) const;
    // text_units: [embed_dim x n] unit columns.
    ReducedGradients reduced_gradients(const ImageTrace& trace, const MatD& text_units) const;
    // Full-resolution gradients at the target layer for one text direction.
    GradientResult gradients(const ImageTrace& trace, const VecD& text_unit) const;

    clip::nn::FeatureMap preprocess(const cv::Mat& image, Framing framing) const;

    // New handle sharing the immutable weights; text cache is per handle.
    std::unique_ptr<ModelHandle> replicate() const;

private:
    std::string model_id_;
    std::shared_ptr<const clip::ClipModel> model_;
    std::string weights_hash_;
    std::string target_layer_;
    mutable std::mutex cache_mutex_;
    mutable std::map<std::string, VecD> text_cache_;
    // Hook state for score_with_gradients; exclusive per handle.
    std::unique_ptr<ImageTrace> last_trace_;
};

// Softmax over logit_scale * cosine; rows of text_units and image_unit must be unit norm.
ScoredLabels probabilities_from_embeddings(const VecD& image_unit, const MatD& text_units, double logit_scale,
                                           std::vector<std::string> label_ids = {});

// Converts an 8-bit image (gray, BGR or BGRA) to the normalized 3-channel model input.
clip::nn::FeatureMap preprocess_image(const cv::Mat& image, int resolution, Framing framing);

// Pixel-space placement of an image inside the letterboxed square.
struct LetterboxGeometry {
    int side = 0;
    int offset_x = 0;
    int offset_y = 0;
};
LetterboxGeometry letterbox_geometry(int width, int height);

std::unique_ptr<ModelHandle> load_model(const std::string& model_id, const std::filesystem::path& weights_dir);

}  // namespace bk::adapter
