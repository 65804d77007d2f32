#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boubakiki/lexicon.hpp"
#include "boubakiki/prob_probe.hpp"
#include "boubakiki/saliency_probe.hpp"

namespace bk::metrics {

using lexicon::WordType;

struct ProportionEstimate {
    std::string group_key;
    long successes = 0;
    long trials = 0;
    double posterior_mean = 0;
    double ci_low = 0;
    double ci_high = 0;
    double chance = 0;
    bool significant = false;  // ci_low > chance

    double observed() const { return trials > 0 ? static_cast<double>(successes) / trials : 0.0; }
};

// Uniform-prior beta-binomial posterior Beta(1+s, 1+n-s) with a 95% equal-tailed interval.
ProportionEstimate proportion_estimate(long successes, long trials, double chance, std::string group_key = {});

// Pooled proportion with prompt-stratified bootstrap: outcomes are resampled with
// replacement within each prompt, then pooled.
struct BootstrapEstimate {
    double mean = 0;  // pooled observed proportion
    double ci_low = 0;
    double ci_high = 0;
    int resamples = 0;
};
inline constexpr int kBootstrapResamples = 10000;
BootstrapEstimate stratified_bootstrap(const std::map<std::string, std::vector<bool>>& outcomes_by_prompt,
                                       std::uint64_t seed, int resamples = kBootstrapResamples);

// |distinct winners| / label_set_size over a complete sweep. The trials must share one model and
// word type and cover exactly expected_cells distinct (image, prompt) combinations.
double uniqueness_ratio(const std::vector<prob::ProbTrial>& trials, std::size_t label_set_size,
                        std::size_t expected_cells);

struct ConsistencyRatio {
    long consistent = 0;
    long total = 0;  // ties excluded
    long ties = 0;
    double ratio() const { return total > 0 ? static_cast<double>(consistent) / total : 0.0; }
};
ConsistencyRatio consistency_ratio(const std::vector<saliency::ConsistencyPair>& pairs);

// Stratified k-fold (k = min(5, smallest class)) accuracy of one-vs-rest ridge classifiers
// on unit-normalized rows. Throws InputError for fewer than two classes or a class with < 2 points.
inline constexpr double kRidgeLambda = 1e-2;
double separability_score(const Eigen::MatrixXd& embeddings, const std::vector<int>& classes,
                          double lambda = kRidgeLambda);

// Published reference values for the same measures.
std::optional<double> published_uniqueness(const std::string& model_id, WordType wt);
std::optional<double> published_consistency(const std::string& model_id, WordType wt);
std::optional<double> published_overall_consistency(const std::string& model_id);

// Aggregation of persisted stores into analysis CSVs.
struct AnalysisInputs {
    std::filesystem::path results_dir;
    std::filesystem::path analysis_dir;
    std::map<WordType, std::size_t> label_set_sizes;
    std::size_t images = 34;
    std::size_t prompts = 10;
    bool has_legacy = false;
    std::vector<lexicon::LabelPair> original_pairs;
    std::uint64_t seed = 1;
    int resamples = kBootstrapResamples;
    std::string embedding_prompt_id = "p01";
};

struct UniquenessRow {
    std::string model_id;
    WordType word_type;
    std::size_t unique_winners = 0;
    std::size_t label_set_size = 0;
    double ratio = 0;
    std::optional<double> published;
    std::string status;  // complete, incomplete
};

struct ConsistencyRow {
    std::string model_id;
    std::string word_type;  // word type or "all"
    ConsistencyRatio value;
    std::optional<double> published;
};

struct SeparabilityRow {
    std::string model_id;
    std::string modality;   // text or image
    std::string subset;     // word type for text, "curved_vs_jagged" for images
    std::size_t points = 0;
    double accuracy = 0;
};

struct PooledRow {
    std::string experiment;
    std::string model_id;
    std::string word_type;
    BootstrapEstimate estimate;
};

struct AnalysisResult {
    std::vector<ProportionEstimate> estimates;
    std::vector<PooledRow> pooled;
    std::vector<UniquenessRow> uniqueness;
    std::vector<ConsistencyRow> consistency;
    std::vector<SeparabilityRow> separability;
    std::vector<std::string> warnings;
};

// Group keys are "experiment|model|word_type|prompt|category" with "*" for pooled dimensions.
std::string group_key(const std::string& experiment, const std::string& model, const std::string& word_type,
                      const std::string& prompt = "*", const std::string& category = "*");

AnalysisResult analyze(const AnalysisInputs& in);
void write_analysis(const AnalysisResult& r, const std::filesystem::path& analysis_dir, bool has_legacy);

// Reads analysis/estimates.csv back (used by the report).
std::vector<ProportionEstimate> read_estimates_csv(const std::filesystem::path& path);

// Header-keyed rows of a CSV file written by write_analysis.
using CsvRow = std::map<std::string, std::string>;
std::vector<CsvRow> read_csv(const std::filesystem::path& path);

}  // namespace bk::metrics
