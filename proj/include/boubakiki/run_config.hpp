#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "boubakiki/lexicon.hpp"

namespace bk::config {

// Everything a run depends on. Serialized next to the results; its hash tags every figure.
struct RunConfig {
    std::vector<std::string> models{"resnet50", "vit"};
    std::vector<lexicon::WordType> word_types{std::begin(lexicon::kAllWordTypes), std::end(lexicon::kAllWordTypes)};
    std::filesystem::path prompt_file;
    std::filesystem::path adjectives_file;
    std::optional<std::filesystem::path> alper_classes_file;
    std::filesystem::path stimulus_dir = "stimuli";
    std::optional<std::filesystem::path> legacy_manifest;
    std::uint64_t seed_base = 1;
    int pairs = 8;
    int resolution = 336;
    std::filesystem::path out_dir = "out";
    std::filesystem::path weights_dir;
    bool offline = true;
    std::optional<double> human_baseline;
    int workers = 1;
    bool keep_probs = false;
    std::string save_maps = "none";

    std::filesystem::path results_dir() const { return out_dir / "results"; }
    std::filesystem::path analysis_dir() const { return out_dir / "analysis"; }
    std::filesystem::path figures_dir() const { return out_dir / "figures"; }
    std::filesystem::path saliency_dir() const { return out_dir / "saliency"; }
};

// Defaults with packaged data files and the environment's weights directory filled in.
RunConfig defaults();

nlohmann::json to_json(const RunConfig& c);
// Unknown keys are rejected; missing keys keep their current value.
void merge_json(RunConfig& c, const nlohmann::json& j);
RunConfig load(const std::filesystem::path& path);

// Stable hash of the canonical JSON form.
std::string hash(const RunConfig& c);

// Writes out_dir/run_config.json.
void save(const RunConfig& c);

}  // namespace bk::config
