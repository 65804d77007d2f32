#include "boubakiki/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "boubakiki/lexicon.hpp"
#include "boubakiki/metrics.hpp"
#include "boubakiki/result_store.hpp"
#include "boubakiki/types.hpp"
#include "boubakiki/util.hpp"

namespace bk::report {

namespace fs = std::filesystem;

namespace {

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v, int digits = 3) {
    if (!std::isfinite(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string signed_num(double v) {
    if (!std::isfinite(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.3f", v);
    return buf;
}

struct Key {
    std::string experiment, model, word_type, prompt, category;
};

Key split_key(const std::string& k) {
    std::vector<std::string> p;
    std::stringstream ss(k);
    for (std::string part; std::getline(ss, part, '|');) p.push_back(part);
    p.resize(5);
    return {p[0], p[1], p[2], p[3], p[4]};
}

double parse_or_nan(const std::string& s) {
    if (s.empty()) return std::nan("");
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        return std::nan("");
    }
}

int word_type_rank(const std::string& wt) {
    for (std::size_t i = 0; i < std::size(lexicon::kAllWordTypes); ++i)
        if (lexicon::to_string(lexicon::kAllWordTypes[i]) == wt) return static_cast<int>(i);
    return 99;
}

}  // namespace

std::string render_svg(const Figure& f) {
    constexpr int kPlotH = 240, kTop = 56, kLeft = 56, kBarW = 34, kGap = 14, kPanelPad = 28, kBottom = 96;
    std::vector<int> widths;
    for (const auto& p : f.panels)
        widths.push_back(std::max(180, static_cast<int>(p.bars.size()) * (kBarW + kGap) + 2 * kPanelPad));
    if (widths.empty()) widths.push_back(220);
    int total_w = kLeft + 20;
    for (int w : widths) total_w += w + 16;
    const int total_h = kTop + kPlotH + kBottom;
    auto y_of = [&](double v) { return kTop + kPlotH * (1.0 - std::clamp(v, 0.0, 1.0)); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total_w << "\" height=\"" << total_h
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<metadata>config_hash=" << esc(f.config_hash) << " store_hash=" << esc(f.store_hash) << "</metadata>\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << kLeft << "\" y=\"22\" font-size=\"14\" font-weight=\"bold\">" << esc(f.title) << "</text>\n";
    s << "<text transform=\"translate(16," << kTop + kPlotH / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << esc(f.y_label) << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0;
        s << "<text x=\"" << kLeft - 6 << "\" y=\"" << y_of(v) + 4 << "\" text-anchor=\"end\">" << num(v, 2) << "</text>\n";
    }

    int x0 = kLeft;
    const std::vector<Panel> panels = f.panels.empty() ? std::vector<Panel>{Panel{"", {}}} : f.panels;
    for (std::size_t pi = 0; pi < panels.size(); ++pi) {
        const auto& p = panels[pi];
        const int w = widths[pi];
        s << "<g class=\"panel\">\n";
        s << "<rect x=\"" << x0 << "\" y=\"" << kTop << "\" width=\"" << w << "\" height=\"" << kPlotH
          << "\" fill=\"none\" stroke=\"#444\"/>\n";
        s << "<text x=\"" << x0 + w / 2 << "\" y=\"" << kTop - 8 << "\" text-anchor=\"middle\" font-weight=\"bold\">"
          << esc(p.title) << "</text>\n";
        if (p.bars.empty()) {
            s << "<text x=\"" << x0 + w / 2 << "\" y=\"" << kTop + kPlotH / 2
              << "\" text-anchor=\"middle\" fill=\"#888\" font-size=\"14\">no data</text>\n";
        }
        for (std::size_t b = 0; b < p.bars.size(); ++b) {
            const auto& bar = p.bars[b];
            const int bx = x0 + kPanelPad + static_cast<int>(b) * (kBarW + kGap);
            const double top = y_of(bar.value);
            s << "<rect x=\"" << bx << "\" y=\"" << top << "\" width=\"" << kBarW << "\" height=\""
              << kTop + kPlotH - top << "\" fill=\"#6a8caf\"><title>" << esc(bar.label) << ": " << num(bar.value)
              << " [" << num(bar.ci_low) << ", " << num(bar.ci_high) << "] n=" << bar.trials << "</title></rect>\n";
            const double cx = bx + kBarW / 2.0;
            s << "<line class=\"ci\" x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << y_of(bar.ci_low) << "\" y2=\""
              << y_of(bar.ci_high) << "\" stroke=\"black\"/>\n";
            for (double v : {bar.ci_low, bar.ci_high})
                s << "<line x1=\"" << cx - 6 << "\" x2=\"" << cx + 6 << "\" y1=\"" << y_of(v) << "\" y2=\"" << y_of(v)
                  << "\" stroke=\"black\"/>\n";
            s << "<text transform=\"translate(" << cx + 4 << "," << kTop + kPlotH + 8
              << ") rotate(45)\" font-size=\"10\">" << esc(bar.label) << "</text>\n";
        }
        s << "<line class=\"chance\" x1=\"" << x0 << "\" x2=\"" << x0 + w << "\" y1=\"" << y_of(f.chance) << "\" y2=\""
          << y_of(f.chance) << "\" stroke=\"#c0392b\" stroke-dasharray=\"6,4\"/>\n";
        if (f.human_baseline)
            s << "<line class=\"human-baseline\" x1=\"" << x0 << "\" x2=\"" << x0 + w << "\" y1=\""
              << y_of(*f.human_baseline) << "\" y2=\"" << y_of(*f.human_baseline)
              << "\" stroke=\"#27ae60\" stroke-width=\"2\"/>\n";
        s << "</g>\n";
        x0 += w + 16;
    }
    const int ly = total_h - 18;
    s << "<text x=\"" << kLeft << "\" y=\"" << ly << "\" fill=\"#c0392b\">- - chance (" << num(f.chance, 2) << ")</text>\n";
    if (f.human_baseline)
        s << "<text x=\"" << kLeft + 120 << "\" y=\"" << ly << "\" fill=\"#27ae60\">human baseline ("
          << num(*f.human_baseline, 2) << ")</text>\n";
    s << "<text x=\"" << kLeft << "\" y=\"" << total_h - 4 << "\" fill=\"#666\" font-size=\"9\">config "
      << esc(f.config_hash) << " | store " << esc(f.store_hash) << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

std::string results_hash(const fs::path& results_dir) {
    std::vector<fs::path> files;
    if (fs::is_directory(results_dir))
        for (const auto& e : fs::directory_iterator(results_dir))
            if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string joined;
    for (const auto& f : files) joined += f.filename().string() + "=" + store::file_hash(f) + ";";
    return util::hex64(util::fnv1a64(joined));
}

ReportOutput write_report(const ReportInputs& in) {
    const std::vector<std::string> needed = {"estimates.csv", "pooled_bootstrap.csv", "uniqueness.csv",
                                             "consistency.csv", "separability.csv"};
    std::vector<std::string> missing;
    for (const auto& n : needed)
        if (!fs::exists(in.analysis_dir / n)) missing.push_back((in.analysis_dir / n).string());
    if (!missing.empty()) {
        std::string msg = "missing analysis inputs (run `analyze` first):";
        for (const auto& m : missing) msg += "\n  " + m;
        throw InputError(msg);
    }
    const auto estimates = metrics::read_estimates_csv(in.analysis_dir / "estimates.csv");
    const auto pooled = metrics::read_csv(in.analysis_dir / "pooled_bootstrap.csv");
    const auto uniqueness = metrics::read_csv(in.analysis_dir / "uniqueness.csv");
    const auto consistency = metrics::read_csv(in.analysis_dir / "consistency.csv");
    const auto separability = metrics::read_csv(in.analysis_dir / "separability.csv");

    std::vector<std::string> models = in.models;
    auto add_model = [&](const std::string& m) {
        if (!m.empty() && std::find(models.begin(), models.end(), m) == models.end()) models.push_back(m);
    };
    for (const auto& e : estimates) add_model(split_key(e.group_key).model);

    auto bar_of = [](const metrics::ProportionEstimate& e, std::string label) {
        return Bar{std::move(label), e.posterior_mean, e.ci_low, e.ci_high, e.trials};
    };
    auto panels_for = [&](const std::string& experiment, auto&& select) {
        std::vector<Panel> panels;
        for (const auto& m : models) {
            Panel p{m, {}};
            std::vector<std::pair<std::string, const metrics::ProportionEstimate*>> chosen;
            for (const auto& e : estimates) {
                const auto k = split_key(e.group_key);
                if (k.experiment != experiment || k.model != m) continue;
                if (auto label = select(k)) chosen.emplace_back(*label, &e);
            }
            std::stable_sort(chosen.begin(), chosen.end(), [](const auto& a, const auto& b) {
                const auto ka = split_key(a.second->group_key), kb = split_key(b.second->group_key);
                return std::tuple(word_type_rank(ka.word_type), ka.category) <
                       std::tuple(word_type_rank(kb.word_type), kb.category);
            });
            for (const auto& [label, e] : chosen) p.bars.push_back(bar_of(*e, label));
            panels.push_back(std::move(p));
        }
        return panels;
    };

    ReportOutput out;
    fs::create_directories(in.figures_dir);
    auto emit = [&](const std::string& name, Figure f) {
        f.config_hash = in.config_hash;
        f.store_hash = in.store_hash;
        f.human_baseline = in.human_baseline;
        const auto path = in.figures_dir / name;
        util::atomic_write(path, render_svg(f));
        out.files.push_back(path);
    };

    emit("fig2_prob_congruence.svg",
         Figure{"Probability probe: congruent pair responses by word type", "proportion congruent", 0.25, {},
                panels_for("prob",
                           [](const Key& k) -> std::optional<std::string> {
                               if (k.prompt != "*" || k.category != "*") return std::nullopt;
                               return k.word_type;
                           }),
                {}, {}});
    emit("fig3_gradcam_pair_congruence.svg",
         Figure{"Grad-CAM probe: label-pair congruence (original words)", "proportion congruent", 0.25, {},
                panels_for("gradcam_pair",
                           [](const Key& k) -> std::optional<std::string> {
                               if (k.prompt != "*") return std::nullopt;
                               return k.category == "*" ? std::string("all") : k.category;
                           }),
                {}, {}});
    emit("fig4_gradcam_label_correct.svg",
         Figure{"Grad-CAM probe: correctly attended shape by word type and category", "proportion correct", 0.5, {},
                panels_for("gradcam_label",
                           [](const Key& k) -> std::optional<std::string> {
                               return k.word_type + "/" + k.category;
                           }),
                {}, {}});

    std::ostringstream md;
    md << "# Bouba-kiki probe report\n\n";
    md << "- config hash: `" << in.config_hash << "`\n";
    md << "- result-store hash: `" << in.store_hash << "`\n";
    md << "- stimuli: " << (in.has_legacy ? "generated plus legacy pairs" : "generated pairs only (legacy images absent; tables are recomputed on generated stimuli)") << "\n";
    if (in.human_baseline) md << "- human baseline line: " << num(*in.human_baseline) << "\n";
    md << "\nFigures: `fig2_prob_congruence.svg`, `fig3_gradcam_pair_congruence.svg`, `fig4_gradcam_label_correct.svg`.\n";

    md << "\n## Probability probe: pooled congruence (chance 0.25)\n\n";
    md << "| model | word type | congruent / pairs | posterior mean | 95% CrI | significant | bootstrap 95% CI |\n";
    md << "|---|---|---|---|---|---|---|\n";
    bool any = false;
    auto bootstrap_for = [&](const std::string& exp, const std::string& model, const std::string& wt) -> std::string {
        for (const auto& r : pooled)
            if (r.at("experiment") == exp && r.at("model") == model && r.at("word_type") == wt)
                return "[" + num(parse_or_nan(r.at("ci_low"))) + ", " + num(parse_or_nan(r.at("ci_high"))) + "]";
        return "n/a";
    };
    for (const auto& e : estimates) {
        const auto k = split_key(e.group_key);
        if (k.experiment != "prob" || k.prompt != "*" || k.category != "*") continue;
        any = true;
        md << "| " << k.model << " | " << k.word_type << " | " << e.successes << " / " << e.trials << " | "
           << num(e.posterior_mean) << " | [" << num(e.ci_low) << ", " << num(e.ci_high) << "] | "
           << (e.significant ? "yes" : "no") << " | " << bootstrap_for("prob", k.model, k.word_type) << " |\n";
    }
    if (!any) md << "| no data | | | | | | |\n";

    md << "\n## Grad-CAM probe: original label-pair congruence (chance 0.25)\n\n";
    md << "| model | label pair | congruent / trials | posterior mean | 95% CrI | significant |\n|---|---|---|---|---|---|\n";
    any = false;
    for (const auto& e : estimates) {
        const auto k = split_key(e.group_key);
        if (k.experiment != "gradcam_pair" || k.prompt != "*") continue;
        any = true;
        md << "| " << k.model << " | " << (k.category == "*" ? "all" : k.category) << " | " << e.successes << " / "
           << e.trials << " | " << num(e.posterior_mean) << " | [" << num(e.ci_low) << ", " << num(e.ci_high) << "] | "
           << (e.significant ? "yes" : "no") << " |\n";
    }
    if (!any) md << "| no data | | | | | |\n";

    auto published_models = models;
    if (published_models.empty()) published_models = {"resnet50", "vit"};

    md << "\n## Unique-label ratios against published values\n\n";
    md << "| model | word type | computed | published | delta | status | stimuli |\n|---|---|---|---|---|---|---|\n";
    for (const auto& m : published_models)
        for (auto wt : lexicon::kAllWordTypes) {
            const std::string w(lexicon::to_string(wt));
            const auto pub = metrics::published_uniqueness(m, wt);
            const metrics::CsvRow* row = nullptr;
            for (const auto& r : uniqueness)
                if (r.at("model") == m && r.at("word_type") == w) row = &r;
            const double val = row ? parse_or_nan(row->at("ratio")) : std::nan("");
            md << "| " << m << " | " << w << " | " << (row ? num(val) : "no data") << " | "
               << (pub ? num(*pub) : "n/a") << " | " << (row && pub ? signed_num(val - *pub) : "n/a") << " | "
               << (row ? row->at("status") : "-") << " | " << (row ? row->at("stimuli") : "-") << " |\n";
        }

    md << "\n## Positional consistency against published values\n\n";
    md << "| model | word type | consistent / pairs | ties | computed | published | delta |\n|---|---|---|---|---|---|---|\n";
    for (const auto& m : published_models) {
        std::vector<std::string> rows_wt = {"all"};
        for (auto wt : lexicon::kAllWordTypes) rows_wt.emplace_back(lexicon::to_string(wt));
        for (const auto& w : rows_wt) {
            const auto pub = w == "all" ? metrics::published_overall_consistency(m)
                                        : metrics::published_consistency(m, lexicon::parse_word_type(w));
            const metrics::CsvRow* row = nullptr;
            for (const auto& r : consistency)
                if (r.at("model") == m && r.at("word_type") == w) row = &r;
            const double val = row ? parse_or_nan(row->at("ratio")) : std::nan("");
            md << "| " << m << " | " << w << " | "
               << (row ? row->at("consistent") + " / " + row->at("total") : "no data") << " | "
               << (row ? row->at("ties") : "-") << " | " << (row ? num(val) : "no data") << " | "
               << (pub ? num(*pub) : "n/a") << " | " << (row && pub ? signed_num(val - *pub) : "n/a") << " |\n";
        }
    }

    md << "\n## Embedding separability (cross-validated linear accuracy)\n\n";
    md << "| model | modality | subset | points | accuracy |\n|---|---|---|---|---|\n";
    if (separability.empty()) md << "| no data | | | | |\n";
    for (const auto& r : separability)
        md << "| " << r.at("model") << " | " << r.at("modality") << " | " << r.at("subset") << " | " << r.at("points")
           << " | " << num(parse_or_nan(r.at("accuracy"))) << " |\n";

    const auto md_path = in.figures_dir / "report.md";
    util::atomic_write(md_path, md.str());
    out.files.push_back(md_path);
    if (estimates.empty()) out.notes.push_back("no estimates found; figures contain empty panels");
    return out;
}

}  // namespace bk::report
