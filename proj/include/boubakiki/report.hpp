#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bk::report {

struct Bar {
    std::string label;
    double value = 0;
    double ci_low = 0;
    double ci_high = 0;
    long trials = 0;
};

struct Panel {
    std::string title;
    std::vector<Bar> bars;  // empty renders a "no data" panel
};

struct Figure {
    std::string title;
    std::string y_label;
    double chance = 0.25;
    std::optional<double> human_baseline;
    std::vector<Panel> panels;
    std::string config_hash;
    std::string store_hash;
};

std::string render_svg(const Figure& f);

// Combined content hash of the JSONL stores in a results directory.
std::string results_hash(const std::filesystem::path& results_dir);

struct ReportInputs {
    std::filesystem::path analysis_dir;
    std::filesystem::path figures_dir;
    std::string config_hash;
    std::string store_hash;
    std::optional<double> human_baseline;
    std::vector<std::string> models;
    bool has_legacy = false;
};

struct ReportOutput {
    std::vector<std::filesystem::path> files;
    std::vector<std::string> notes;
};

// Figures mirroring the three experiment plots plus report.md. Throws InputError listing every
// missing analysis file.
ReportOutput write_report(const ReportInputs& in);

}  // namespace bk::report
