#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "boubakiki/lexicon.hpp"
#include "boubakiki/model_adapter.hpp"
#include "boubakiki/result_store.hpp"
#include "boubakiki/shapes.hpp"

namespace bk::prob {

using lexicon::Label;
using lexicon::PromptTemplate;
using lexicon::WordType;

// One image of a shape pair, as seen by the probability probe.
struct ProbeImage {
    std::string image_id;  // <pair_id>__curved or <pair_id>__jagged
    std::string pair_id;
    ShapeClass image_class = ShapeClass::round;
    cv::Mat image;
};

std::vector<ProbeImage> probe_images(const std::vector<shapes::ShapePair>& pairs);

struct ProbTrial {
    std::string key;
    std::string model_id;
    std::string prompt_id;
    WordType word_type = WordType::original;
    std::string label_set_version;
    std::string image_id;
    std::string pair_id;
    ShapeClass image_class = ShapeClass::round;
    std::string winner;
    ShapeClass winner_class = ShapeClass::round;
    double winner_prob = 0;
    bool tie = false;
    std::optional<std::vector<double>> all_probs;  // in label-set order when kept
};

struct PairOutcome {
    std::string key;
    std::string model_id;
    std::string prompt_id;
    WordType word_type = WordType::original;
    std::string pair_id;
    bool match = false;
    std::string curved_winner;
    std::string jagged_winner;
};

// Hash of the ordered (text, class) list plus word type.
std::string label_set_version(const std::vector<Label>& labels);

std::string trial_key(const std::string& model_id, const std::string& prompt_id, const std::string& label_set_version,
                      const std::string& image_id);

// Argmax over probabilities; exact ties go to the lexicographically smallest label text and are flagged.
ProbTrial decide_trial(const std::vector<double>& probabilities, const std::vector<Label>& labels);

ProbTrial run_prob_trial(const adapter::ModelHandle& h, const ProbeImage& image, const std::vector<Label>& label_set,
                         const PromptTemplate& tmpl, bool keep_probs = false);

// Throws InputError when the trials disagree on model, prompt, word type or pair,
// or are not one curved and one jagged image.
PairOutcome score_pair(const ProbTrial& curved_trial, const ProbTrial& jagged_trial);

store::Json to_json(const ProbTrial& t);
ProbTrial trial_from_json(const store::Json& j);
store::Json to_json(const PairOutcome& p);
PairOutcome outcome_from_json(const store::Json& j);

struct Experiment1Config {
    std::vector<PromptTemplate> prompts;
    std::vector<std::pair<WordType, std::vector<Label>>> label_sets;
    std::vector<ProbeImage> images;
    std::filesystem::path results_dir;
    int workers = 1;
    bool keep_probs = false;
    // Prompt whose label embeddings are persisted for separability analysis.
    std::string embedding_prompt_id = "p01";
};

struct RunSummary {
    std::size_t computed = 0;
    std::size_t skipped = 0;
    std::size_t failed = 0;
};

// Full factorial sweep for one model. Writes prob_trials.jsonl, pair_outcomes.jsonl,
// embeddings.jsonl and failures.jsonl under results_dir; already-recorded keys are skipped.
RunSummary run_experiment1(const adapter::ModelHandle& h, const Experiment1Config& cfg,
                           const std::function<void(const std::string&)>& progress = {});

// Pair outcomes for every (model, prompt, word type, pair) with both trials present.
std::vector<PairOutcome> pair_outcomes(const std::vector<ProbTrial>& trials);

}  // namespace bk::prob
