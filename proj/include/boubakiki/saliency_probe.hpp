#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "boubakiki/lexicon.hpp"
#include "boubakiki/model_adapter.hpp"
#include "boubakiki/result_store.hpp"
#include "boubakiki/shapes.hpp"

namespace bk::saliency {

using adapter::MatD;
using adapter::SaliencyKind;
using adapter::VecD;
using lexicon::Label;
using lexicon::PromptTemplate;
using lexicon::WordType;

// Non-negative relevance at composite resolution (rows = image height).
struct SaliencyMap {
    MatD grid;
    std::string model_id;
    std::string composite_id;
    std::string prompt_id;
    std::string label_id;
    bool all_zero = false;
};

enum class Side { left, right };
std::string_view to_string(Side s);

struct RegionDecision {
    std::string key;
    std::string model_id;
    std::string prompt_id;
    std::string composite_id;
    std::string pair_id;
    shapes::Arrangement arrangement = shapes::Arrangement::curved_left;
    bool primary = true;
    std::string label_id;
    WordType word_type = WordType::original;
    ShapeClass label_class = ShapeClass::round;
    double score = 0;  // cosine(text, composite)
    double left_sum = 0;
    double right_sum = 0;
    Side chosen_side = Side::left;
    ShapeClass chosen_class = ShapeClass::round;
    bool correct = false;
    bool tie = false;
    bool all_zero = false;
    // Logged only: mean relevance over each half's silhouette pixels and each half's peak cell.
    double left_mask_mean = 0;
    double right_mask_mean = 0;
    double left_peak = 0;
    double right_peak = 0;
};

// Reduces full target-layer gradients to what the map needs (channel means or the class-row gradient).
MatD reduce_gradients(SaliencyKind kind, const adapter::LayerMap& gradients);

// Rectified grid [grid_height x grid_width]:
//   grad_cam: relu(sum_c w_c A_c) with w = spatially averaged gradients;
//   attention_relevance: mean over heads of relu(grad * attention) on the class-token row, patch positions only.
MatD grid_from_reduced(SaliencyKind kind, const adapter::LayerMap& activations, const MatD& reduced);
MatD grid_from_gradients(SaliencyKind kind, const adapter::GradientResult& g);

// Bilinear (half-pixel centres) upsampling of the grid over the letterboxed square,
// cropped back to the image rectangle.
MatD upsample_to_image(const MatD& grid, int width, int height);

SaliencyMap compute_saliency(adapter::ModelHandle& h, const shapes::CompositeImage& composite,
                             const std::string& prompt, std::string prompt_id = {}, std::string label_id = {});

// Halves split at the gutter: left = [0, pane), right = [pane + gutter, width); gutter mass is discarded.
// Exact ties choose left and set tie.
RegionDecision decide_region(const SaliencyMap& map, const shapes::CompositeImage& composite);
// Same rule from precomputed sums.
void apply_decision_rule(RegionDecision& d, const shapes::CompositeImage& composite);

// Left/right sums of the upsampled map as linear functionals of the low-resolution grid.
// Weights for the right half are the mirror of the left, so a mirror-symmetric grid ties exactly.
class RegionProjector {
public:
    RegionProjector(int grid_height, int grid_width, const shapes::CompositeImage& composite);

    struct Sums {
        double left = 0, right = 0;
        double left_mask = 0, right_mask = 0;  // means over silhouette pixels
        double left_peak = 0, right_peak = 0;
    };
    Sums project(const MatD& grid) const;

private:
    int gh_, gw_;
    MatD left_weights_;
    MatD left_mask_weights_, right_mask_weights_;
    double left_mask_pixels_ = 0, right_mask_pixels_ = 0;
    std::vector<std::pair<int, int>> left_cells_, right_cells_;
};

// True iff both decisions are correct. Throws InputError on mismatched metadata
// or when the labels are not one round and one sharp.
bool score_label_pair(const RegionDecision& round_decision, const RegionDecision& sharp_decision);

struct ConsistencyPair {
    std::string model_id;
    std::string prompt_id;
    WordType word_type = WordType::original;
    std::string label_id;
    std::string pair_id;
    bool consistent = false;
    bool has_tie = false;  // excluded from ratios
};

// Pairs each primary decision with its mirror; throws InputError when a mirror is missing.
std::vector<ConsistencyPair> consistency_pairs(const std::vector<RegionDecision>& decisions);

struct PairCongruence {
    std::string model_id;
    std::string prompt_id;
    std::string pair_id;
    std::string label_pair;  // e.g. bouba-kiki
    bool congruent = false;
};

// Original label pairs scored on primary arrangements only.
std::vector<PairCongruence> label_pair_congruence(const std::vector<RegionDecision>& decisions,
                                                  const std::vector<lexicon::LabelPair>& pairs);

store::Json to_json(const RegionDecision& d);
RegionDecision decision_from_json(const store::Json& j);

enum class SaveMaps { none, overlays, full };
SaveMaps parse_save_maps(std::string_view s);

struct Experiment2Config {
    std::vector<PromptTemplate> prompts;
    std::vector<std::pair<WordType, std::vector<Label>>> label_sets;
    std::vector<shapes::CompositeImage> composites;
    std::filesystem::path results_dir;
    std::filesystem::path saliency_dir;
    SaveMaps save_maps = SaveMaps::none;
    int workers = 1;
};

struct RunSummary {
    std::size_t computed = 0;
    std::size_t skipped = 0;
    std::size_t failed = 0;
};

RunSummary run_experiment2(const adapter::ModelHandle& h, const Experiment2Config& cfg,
                           const std::function<void(const std::string&)>& progress = {});

// Heatmap blended over the composite (BGR, 8-bit).
cv::Mat render_overlay(const shapes::CompositeImage& composite, const MatD& map);

}  // namespace bk::saliency
