#include "boubakiki/run_config.hpp"

#include <set>

#include "boubakiki/model_adapter.hpp"
#include "boubakiki/types.hpp"
#include "boubakiki/util.hpp"

namespace bk::config {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig defaults() {
    RunConfig c;
    const fs::path data(BOUBAKIKI_DATA_DIR);
    c.prompt_file = data / "prompts.default.json";
    c.adjectives_file = data / "adjectives.default.json";
    c.weights_dir = adapter::default_weights_dir();
    return c;
}

json to_json(const RunConfig& c) {
    json wt = json::array();
    for (auto t : c.word_types) wt.push_back(lexicon::to_string(t));
    return {{"models", c.models},
            {"word_types", wt},
            {"prompt_file", c.prompt_file.string()},
            {"adjectives_file", c.adjectives_file.string()},
            {"alper_classes_file", c.alper_classes_file ? json(c.alper_classes_file->string()) : json(nullptr)},
            {"stimulus_dir", c.stimulus_dir.string()},
            {"legacy_manifest", c.legacy_manifest ? json(c.legacy_manifest->string()) : json(nullptr)},
            {"seed_base", c.seed_base},
            {"pairs", c.pairs},
            {"resolution", c.resolution},
            {"out_dir", c.out_dir.string()},
            {"weights_dir", c.weights_dir.string()},
            {"offline", c.offline},
            {"human_baseline", c.human_baseline ? json(*c.human_baseline) : json(nullptr)},
            {"workers", c.workers},
            {"keep_probs", c.keep_probs},
            {"save_maps", c.save_maps}};
}

void merge_json(RunConfig& c, const json& j) {
    if (!j.is_object()) throw InputError("config must be a JSON object");
    static const std::set<std::string> known = {
        "models", "word_types", "prompt_file", "adjectives_file", "alper_classes_file", "stimulus_dir",
        "legacy_manifest", "seed_base", "pairs", "resolution", "out_dir", "weights_dir", "offline",
        "human_baseline", "workers", "keep_probs", "save_maps"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k) && k.rfind('_', 0) != 0) throw InputError("unknown config key '" + k + "'");
    auto opt_path = [](const json& v) -> std::optional<fs::path> {
        if (v.is_null()) return std::nullopt;
        return fs::path(v.get<std::string>());
    };
    try {
        if (j.contains("models")) c.models = j["models"].get<std::vector<std::string>>();
        if (j.contains("word_types")) {
            c.word_types.clear();
            for (const auto& s : j["word_types"]) c.word_types.push_back(lexicon::parse_word_type(s.get<std::string>()));
        }
        if (j.contains("prompt_file")) c.prompt_file = j["prompt_file"].get<std::string>();
        if (j.contains("adjectives_file")) c.adjectives_file = j["adjectives_file"].get<std::string>();
        if (j.contains("alper_classes_file")) c.alper_classes_file = opt_path(j["alper_classes_file"]);
        if (j.contains("stimulus_dir")) c.stimulus_dir = j["stimulus_dir"].get<std::string>();
        if (j.contains("legacy_manifest")) c.legacy_manifest = opt_path(j["legacy_manifest"]);
        if (j.contains("seed_base")) c.seed_base = j["seed_base"].get<std::uint64_t>();
        if (j.contains("pairs")) c.pairs = j["pairs"].get<int>();
        if (j.contains("resolution")) c.resolution = j["resolution"].get<int>();
        if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
        if (j.contains("weights_dir")) c.weights_dir = j["weights_dir"].get<std::string>();
        if (j.contains("offline")) c.offline = j["offline"].get<bool>();
        if (j.contains("human_baseline"))
            c.human_baseline = j["human_baseline"].is_null() ? std::nullopt : std::optional(j["human_baseline"].get<double>());
        if (j.contains("workers")) c.workers = j["workers"].get<int>();
        if (j.contains("keep_probs")) c.keep_probs = j["keep_probs"].get<bool>();
        if (j.contains("save_maps")) c.save_maps = j["save_maps"].get<std::string>();
    } catch (const json::exception& e) {
        throw InputError(std::string("bad config value: ") + e.what());
    }
    if (c.workers < 1) throw InputError("workers must be at least 1");
    if (c.pairs < 1) throw InputError("pairs must be at least 1");
    if (c.human_baseline && (*c.human_baseline < 0 || *c.human_baseline > 1))
        throw InputError("human_baseline must lie in [0, 1]");
}

RunConfig load(const fs::path& path) {
    RunConfig c = defaults();
    json j;
    try {
        j = json::parse(util::read_file(path));
    } catch (const json::parse_error& e) {
        throw InputError("config " + path.string() + ": " + e.what());
    }
    merge_json(c, j);
    return c;
}

std::string hash(const RunConfig& c) {
    // Machine-local settings do not change results.
    json j = to_json(c);
    j.erase("workers");
    j.erase("weights_dir");
    j.erase("out_dir");
    return util::hex64(util::fnv1a64(j.dump()));
}

void save(const RunConfig& c) {
    fs::create_directories(c.out_dir);
    util::atomic_write(c.out_dir / "run_config.json", to_json(c).dump(2) + "\n");
}

}  // namespace bk::config
