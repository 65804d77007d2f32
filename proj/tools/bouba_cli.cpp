// Command-line driver: stimuli, both probes, analysis and report.
#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "boubakiki/lexicon.hpp"
#include "boubakiki/metrics.hpp"
#include "boubakiki/model_adapter.hpp"
#include "boubakiki/prob_probe.hpp"
#include "boubakiki/report.hpp"
#include "boubakiki/run_config.hpp"
#include "boubakiki/saliency_probe.hpp"
#include "boubakiki/shapes.hpp"
#include "boubakiki/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bk;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitEnvironment = 2;

struct Overrides {
    std::string config_path;
    std::optional<std::string> out_dir, weights_dir, stimulus_dir, legacy_manifest, prompt_file, adjectives_file,
        alper_classes_file, save_maps;
    std::optional<std::uint64_t> seed_base;
    std::optional<int> workers, pairs, resolution;
    std::optional<double> human_baseline;
    std::vector<std::string> models, word_types;
    bool keep_probs = false;
    bool json_output = false;
};

config::RunConfig resolve(const Overrides& o) {
    config::RunConfig c = o.config_path.empty() ? config::defaults() : config::load(o.config_path);
    if (o.out_dir) c.out_dir = *o.out_dir;
    if (o.weights_dir) c.weights_dir = *o.weights_dir;
    if (o.stimulus_dir) c.stimulus_dir = *o.stimulus_dir;
    if (o.legacy_manifest) c.legacy_manifest = fs::path(*o.legacy_manifest);
    if (o.prompt_file) c.prompt_file = *o.prompt_file;
    if (o.adjectives_file) c.adjectives_file = *o.adjectives_file;
    if (o.alper_classes_file) c.alper_classes_file = fs::path(*o.alper_classes_file);
    if (o.save_maps) c.save_maps = *o.save_maps;
    if (o.seed_base) c.seed_base = *o.seed_base;
    if (o.workers) c.workers = *o.workers;
    if (o.pairs) c.pairs = *o.pairs;
    if (o.resolution) c.resolution = *o.resolution;
    if (o.human_baseline) c.human_baseline = *o.human_baseline;
    if (!o.models.empty()) c.models = o.models;
    if (!o.word_types.empty()) {
        c.word_types.clear();
        for (const auto& w : o.word_types) c.word_types.push_back(lexicon::parse_word_type(w));
    }
    if (o.keep_probs) c.keep_probs = true;
    if (c.workers < 1) throw InputError("--workers must be at least 1");
    return c;
}

lexicon::LexiconSources sources(const config::RunConfig& c) { return {c.adjectives_file, c.alper_classes_file}; }

shapes::GenerateOptions generate_options(const config::RunConfig& c, bool require_legacy) {
    shapes::GenerateOptions g;
    g.seed_base = c.seed_base;
    g.pairs = c.pairs;
    g.resolution = c.resolution;
    g.legacy_manifest = c.legacy_manifest;
    g.require_legacy = require_legacy;
    return g;
}

// Loads the stimulus bank, generating it first when the directory has no manifest.
shapes::StimulusBank ensure_bank(const config::RunConfig& c) {
    if (fs::exists(c.stimulus_dir / "stimuli.manifest.json")) return shapes::load_bank(c.stimulus_dir);
    auto bank = shapes::generate_bank(generate_options(c, false));
    shapes::write_bank(bank, c.stimulus_dir);
    return bank;
}

std::vector<std::pair<lexicon::WordType, std::vector<lexicon::Label>>> label_sets(const config::RunConfig& c) {
    std::vector<std::pair<lexicon::WordType, std::vector<lexicon::Label>>> out;
    for (auto wt : c.word_types) out.emplace_back(wt, lexicon::labels_for(wt, sources(c)));
    return out;
}

void progress_line(const std::string& s) { std::cerr << s << "\n"; }

int run_prob(const config::RunConfig& c, json& status) {
    const auto bank = ensure_bank(c);
    prob::Experiment1Config cfg;
    cfg.prompts = lexicon::load_prompts(c.prompt_file);
    cfg.label_sets = label_sets(c);
    cfg.images = prob::probe_images(bank.pairs);
    cfg.results_dir = c.results_dir();
    cfg.workers = c.workers;
    cfg.keep_probs = c.keep_probs;
    config::save(c);
    int code = kExitOk;
    for (const auto& m : c.models) {
        const auto handle = adapter::load_model(m, c.weights_dir);
        const auto t0 = std::chrono::steady_clock::now();
        const auto s = prob::run_experiment1(*handle, cfg, progress_line);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        status["models"][m] = {{"computed", s.computed}, {"skipped", s.skipped}, {"failed", s.failed}, {"seconds", secs}};
        if (s.failed) code = kExitPartial;
    }
    return code;
}

int run_gradcam(const config::RunConfig& c, json& status) {
    const auto bank = ensure_bank(c);
    saliency::Experiment2Config cfg;
    cfg.prompts = lexicon::load_prompts(c.prompt_file);
    cfg.label_sets = label_sets(c);
    cfg.composites = shapes::compose_pairs(bank.pairs);
    cfg.results_dir = c.results_dir();
    cfg.saliency_dir = c.saliency_dir();
    cfg.save_maps = saliency::parse_save_maps(c.save_maps);
    cfg.workers = c.workers;
    config::save(c);
    int code = kExitOk;
    for (const auto& m : c.models) {
        const auto handle = adapter::load_model(m, c.weights_dir);
        const auto t0 = std::chrono::steady_clock::now();
        const auto s = saliency::run_experiment2(*handle, cfg, progress_line);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        status["models"][m] = {{"computed", s.computed}, {"skipped", s.skipped}, {"failed", s.failed}, {"seconds", secs}};
        if (s.failed) code = kExitPartial;
    }
    return code;
}

int run_analyze(const config::RunConfig& c, json& status) {
    metrics::AnalysisInputs in;
    in.results_dir = c.results_dir();
    in.analysis_dir = c.analysis_dir();
    for (auto wt : lexicon::kAllWordTypes) in.label_set_sizes[wt] = lexicon::labels_for(wt, sources(c)).size();
    in.prompts = lexicon::load_prompts(c.prompt_file).size();
    bool has_legacy = false;
    if (fs::exists(c.stimulus_dir / "stimuli.manifest.json")) {
        const auto bank = shapes::load_bank(c.stimulus_dir);
        in.images = 2 * bank.pairs.size();
        has_legacy = bank.has_legacy;
    } else {
        in.images = 2 * static_cast<std::size_t>(c.pairs);
    }
    in.has_legacy = has_legacy;
    in.original_pairs = lexicon::gen_original_pairs();
    in.seed = c.seed_base;
    const auto r = metrics::analyze(in);
    metrics::write_analysis(r, in.analysis_dir, has_legacy);
    status["analysis_dir"] = in.analysis_dir.string();
    status["estimates"] = r.estimates.size();
    status["warnings"] = r.warnings;
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    return kExitOk;
}

int run_report(const config::RunConfig& c, json& status) {
    report::ReportInputs in;
    in.analysis_dir = c.analysis_dir();
    in.figures_dir = c.figures_dir();
    in.config_hash = config::hash(c);
    in.store_hash = report::results_hash(c.results_dir());
    in.human_baseline = c.human_baseline;
    in.models = c.models;
    if (fs::exists(c.stimulus_dir / "stimuli.manifest.json"))
        in.has_legacy = shapes::load_bank(c.stimulus_dir).has_legacy;
    const auto out = report::write_report(in);
    json files = json::array();
    for (const auto& f : out.files) files.push_back(f.string());
    status["files"] = files;
    status["notes"] = out.notes;
    status["config_hash"] = in.config_hash;
    status["store_hash"] = in.store_hash;
    return kExitOk;
}

json label_json(const lexicon::Label& l) {
    json syl = json::array();
    for (const auto& s : l.syllables) syl.push_back(s.text);
    return {{"text", l.text},
            {"word_type", lexicon::to_string(l.word_type)},
            {"class", bk::to_string(l.shape_class)},
            {"syllables", syl},
            {"source_id", l.source_id}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sound-symbolism probes for contrastive image-text models"};
    app.require_subcommand(1);
    app.fallthrough();
    Overrides o;
    app.add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--out-dir", o.out_dir, "Output root (results/, analysis/, figures/, saliency/)");
    app.add_option("--weights-dir", o.weights_dir, "Directory with converted checkpoints");
    app.add_option("--stimulus-dir", o.stimulus_dir, "Stimulus bank directory");
    app.add_option("--seed-base", o.seed_base, "Base seed for generated shapes and resampling");
    app.add_option("--workers", o.workers, "Worker threads");
    app.add_option("--human-baseline", o.human_baseline, "Human congruence rate drawn on figures");
    app.add_option("--prompts", o.prompt_file, "Prompt template file");
    app.add_option("--adjectives", o.adjectives_file, "Adjective list file");
    app.add_option("--alper-classes", o.alper_classes_file, "Grapheme class file for Alper-style words");
    app.add_flag("--json", o.json_output, "Print a machine-readable status object");

    auto* gen = app.add_subcommand("generate-stimuli", "Generate the shape-pair bank");
    gen->add_option("--pairs", o.pairs, "Generated pairs");
    gen->add_option("--resolution", o.resolution, "Pane resolution in pixels");
    gen->add_option("--legacy-manifest", o.legacy_manifest, "Manifest of externally sourced pairs");
    bool require_legacy = false, svg = false;
    gen->add_flag("--require-legacy", require_legacy, "Fail when legacy pairs are unavailable");
    gen->add_flag("--svg", svg, "Also write SVG outlines for generated pairs");

    auto* labels = app.add_subcommand("labels", "Label set utilities");
    labels->require_subcommand(1);
    auto* lexport = labels->add_subcommand("export", "Write label sets as JSON");
    std::string labels_out;
    lexport->add_option("--word-type", o.word_types, "Word types (default: all)");
    lexport->add_option("--out", labels_out, "Output file (default: stdout)");

    auto* prob_cmd = app.add_subcommand("run-prob-probe", "Label probabilities for single shapes");
    prob_cmd->add_option("--model", o.models, "Model ids");
    prob_cmd->add_option("--word-type", o.word_types, "Word types");
    prob_cmd->add_flag("--keep-probs", o.keep_probs, "Store the full probability vector per trial");

    auto* cam_cmd = app.add_subcommand("run-gradcam-probe", "Saliency-based left/right choices on composites");
    cam_cmd->add_option("--model", o.models, "Model ids");
    cam_cmd->add_option("--word-type", o.word_types, "Word types");
    cam_cmd->add_option("--save-maps", o.save_maps, "none, overlays or full")
        ->check(CLI::IsMember({"none", "overlays", "full"}));

    auto* analyze_cmd = app.add_subcommand("analyze", "Aggregate stores into analysis CSVs");
    auto* report_cmd = app.add_subcommand("report", "Figures and markdown summary");

    CLI11_PARSE(app, argc, argv);

    json status = {{"command", app.get_subcommands().front()->get_name()}};
    int code = kExitOk;
    try {
        const auto cfg = resolve(o);
        if (gen->parsed()) {
            auto bank = shapes::generate_bank(generate_options(cfg, require_legacy));
            const auto manifest = shapes::write_bank(bank, cfg.stimulus_dir, svg);
            status["manifest"] = manifest.string();
            status["pairs"] = bank.pairs.size();
            status["has_legacy"] = bank.has_legacy;
            status["manifest_hash"] = store::file_hash(manifest);
        } else if (lexport->parsed()) {
            json out = json::object();
            for (auto wt : cfg.word_types) {
                json arr = json::array();
                for (const auto& l : lexicon::labels_for(wt, sources(cfg))) arr.push_back(label_json(l));
                out[std::string(lexicon::to_string(wt))] = arr;
            }
            if (labels_out.empty()) {
                if (!o.json_output) std::cout << out.dump(2) << "\n";
                status["labels"] = out;
            } else {
                std::ofstream f(labels_out);
                if (!f) throw InputError("cannot write " + labels_out);
                f << out.dump(2) << "\n";
                status["out"] = labels_out;
            }
        } else if (prob_cmd->parsed()) {
            code = run_prob(cfg, status);
        } else if (cam_cmd->parsed()) {
            code = run_gradcam(cfg, status);
        } else if (analyze_cmd->parsed()) {
            code = run_analyze(cfg, status);
        } else if (report_cmd->parsed()) {
            code = run_report(cfg, status);
        }
    } catch (const adapter::WeightsUnavailable& e) {
        code = kExitEnvironment;
        status["error"] = e.what();
    } catch (const InputError& e) {
        code = kExitEnvironment;
        status["error"] = e.what();
    } catch (const std::exception& e) {
        code = kExitEnvironment;
        status["error"] = std::string("unexpected failure: ") + e.what();
    }
    status["exit_code"] = code;
    status["status"] = code == kExitOk ? "ok" : code == kExitPartial ? "partial" : "error";
    if (o.json_output)
        std::cout << status.dump() << "\n";
    else if (status.contains("error"))
        std::cerr << "error: " << status["error"].get<std::string>() << "\n";
    else if (!lexport->parsed() || !labels_out.empty())
        std::cout << status.dump(2) << "\n";
    return code;
}
