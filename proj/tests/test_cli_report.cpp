#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "boubakiki/report.hpp"
#include "boubakiki/run_config.hpp"

using namespace bk;

namespace {

const std::filesystem::path kCli = BOUBAKIKI_CLI;

std::filesystem::path fresh_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("bk_cli_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run(const std::string& args, const std::filesystem::path& log) {
    const std::string cmd = "env -u BOUBAKIKI_WEIGHTS_DIR -u BOUBA_WEIGHTS_DIR " + kCli.string() + " " + args + " > " +
                            log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("run config round trip and hash") {
    auto c = config::defaults();
    c.pairs = 5;
    c.human_baseline = 0.9;
    const auto j = config::to_json(c);
    auto back = config::defaults();
    config::merge_json(back, j);
    CHECK(config::to_json(back) == j);
    CHECK(config::hash(back) == config::hash(c));

    // Execution-only settings leave the hash alone; experimental settings change it.
    auto w = c;
    w.workers = 8;
    w.out_dir = "elsewhere";
    CHECK(config::hash(w) == config::hash(c));
    auto s = c;
    s.seed_base = 2;
    CHECK(config::hash(s) != config::hash(c));

    CHECK_THROWS(config::merge_json(back, {{"pairz", 3}}));
    config::merge_json(back, {{"_comment", "ignored"}});

    const auto dir = fresh_dir("cfg");
    c.out_dir = dir;
    config::save(c);
    const auto loaded = config::load(dir / "run_config.json");
    CHECK(config::hash(loaded) == config::hash(c));
}

TEST_CASE("svg figure content") {
    report::Figure f;
    f.title = "Pair congruence";
    f.y_label = "proportion";
    f.chance = 0.25;
    f.human_baseline = 0.9;
    f.config_hash = "cfg123";
    f.store_hash = "store456";
    f.panels = {{"resnet50", {{"original", 0.6, 0.4, 0.8, 20}}}, {"vit", {}}};
    const auto svg = report::render_svg(f);
    CHECK(svg.find("class=\"chance\"") != std::string::npos);
    CHECK(svg.find("class=\"human-baseline\"") != std::string::npos);
    CHECK(svg.find("cfg123") != std::string::npos);
    CHECK(svg.find("store456") != std::string::npos);
    CHECK(svg.find("no data") != std::string::npos);
    CHECK(svg.find("original") != std::string::npos);

    f.human_baseline.reset();
    CHECK(report::render_svg(f).find("human-baseline") == std::string::npos);
}

TEST_CASE("report requires analysis files") {
    const auto dir = fresh_dir("noanalysis");
    report::ReportInputs in;
    in.analysis_dir = dir / "analysis";
    in.figures_dir = dir / "figures";
    try {
        report::write_report(in);
        FAIL("expected an error");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("estimates.csv") != std::string::npos);
        CHECK(std::string(e.what()).find("separability.csv") != std::string::npos);
    }
}

TEST_CASE("cli exit codes") {
    const auto dir = fresh_dir("exit");
    const auto weights = dir / "no_weights";
    std::filesystem::create_directories(weights);
    const std::string common = "--out-dir " + (dir / "out").string() + " --stimulus-dir " + (dir / "stim").string() +
                               " --weights-dir " + weights.string() + " --json ";

    SUBCASE("missing weights exit 2") {
        CHECK(run(common + "run-prob-probe --model resnet50 --word-type original", dir / "prob.log") == 2);
        CHECK(slurp(dir / "prob.log").find("RN50.safetensors") != std::string::npos);
        CHECK(run(common + "run-gradcam-probe --model vit --word-type original", dir / "cam.log") == 2);
    }
    SUBCASE("report before analyze exits 2") {
        CHECK(run(common + "report", dir / "report.log") == 2);
    }
    SUBCASE("empty store analyzes and reports with no-data figures") {
        CHECK(run(common + "analyze", dir / "analyze.log") == 0);
        CHECK(run(common + "report", dir / "report.log") == 0);
        const auto fig = dir / "out" / "figures" / "fig2_prob_congruence.svg";
        REQUIRE(std::filesystem::exists(fig));
        CHECK(slurp(fig).find("no data") != std::string::npos);
        CHECK(std::filesystem::exists(dir / "out" / "figures" / "report.md"));
    }
    SUBCASE("stimulus generation is deterministic") {
        const std::string a = "--stimulus-dir " + (dir / "s1").string() + " --json generate-stimuli --pairs 2 --resolution 64";
        const std::string b = "--stimulus-dir " + (dir / "s2").string() + " --json generate-stimuli --pairs 2 --resolution 64";
        CHECK(run(a, dir / "g1.log") == 0);
        CHECK(run(b, dir / "g2.log") == 0);
        const auto j1 = nlohmann::json::parse(slurp(dir / "g1.log"));
        const auto j2 = nlohmann::json::parse(slurp(dir / "g2.log"));
        CHECK(j1["manifest_hash"] == j2["manifest_hash"]);
        CHECK(j1["pairs"] == 2);
    }
    SUBCASE("unknown options are usage errors") {
        CHECK(run("--json run-prob-probe --bogus", dir / "bad.log") != 0);
    }
}
