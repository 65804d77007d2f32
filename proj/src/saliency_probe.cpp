#include "boubakiki/saliency_probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include <opencv2/imgproc.hpp>

#include "boubakiki/clip/tokenizer.hpp"
#include "boubakiki/npz.hpp"
#include "boubakiki/prob_probe.hpp"
#include "boubakiki/types.hpp"
#include "boubakiki/util.hpp"

namespace bk::saliency {

namespace {

// Interpolation weights [n_out x cells] for output pixels offset..offset+n_out-1 of a
// `side`-pixel axis covered by `cells` grid cells (half-pixel centres, edges clamped).
MatD interp_weights(int n_out, int offset, int side, int cells) {
    MatD w = MatD::Zero(n_out, cells);
    const double scale = static_cast<double>(cells) / side;
    for (int q = 0; q < n_out; ++q) {
        double s = (q + offset + 0.5) * scale - 0.5;
        if (s < 0) s = 0;
        int i0 = static_cast<int>(std::floor(s));
        if (i0 > cells - 1) i0 = cells - 1;
        const int i1 = std::min(i0 + 1, cells - 1);
        const double lambda = s - i0;
        w(q, i0) += 1.0 - lambda;
        w(q, i1) += lambda;
    }
    return w;
}

struct Axes {
    MatD wy;  // [height x grid_height]
    MatD wx;  // [width x grid_width]
    adapter::LetterboxGeometry geometry;
};

Axes axes_for(int grid_height, int grid_width, int width, int height) {
    const auto g = adapter::letterbox_geometry(width, height);
    return {interp_weights(height, g.offset_y, g.side, grid_height), interp_weights(width, g.offset_x, g.side, grid_width),
            g};
}

void check_layout(const shapes::CompositeImage& c, int width) {
    if (c.pane_width <= 0 || 2 * c.pane_width + c.gutter != width)
        throw InputError("composite " + c.composite_id + " has an inconsistent pane layout");
}

cv::Mat silhouette_mask(const shapes::CompositeImage& c) {
    cv::Mat gray;
    if (c.image.channels() == 3)
        cv::cvtColor(c.image, gray, cv::COLOR_BGR2GRAY);
    else if (c.image.channels() == 4)
        cv::cvtColor(c.image, gray, cv::COLOR_BGRA2GRAY);
    else
        gray = c.image;
    return gray < 128;
}

std::string file_stem(const std::string& label) {
    std::string out;
    for (char ch : label) out.push_back(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' ? ch : '_');
    return out.empty() ? "_" : out;
}

store::Json failure(const std::string& key, const std::string& model_id, const std::string& stage,
                    const std::string& what) {
    return {{"key", key}, {"model_id", model_id}, {"stage", stage}, {"error", what}};
}

std::string decision_key(const std::string& model_id, const std::string& prompt_id, WordType wt,
                         const std::string& composite_id, const std::string& label_id) {
    return store::make_key({"region", model_id, prompt_id, std::string(lexicon::to_string(wt)), composite_id, label_id});
}

npz::Array to_array(const MatD& m) {
    npz::Array a;
    a.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    a.data.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) a.data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    return a;
}

}  // namespace

std::string_view to_string(Side s) { return s == Side::left ? "left" : "right"; }

MatD reduce_gradients(SaliencyKind kind, const adapter::LayerMap& gradients) {
    if (kind == SaliencyKind::grad_cam) return gradients.data.rowwise().mean();
    return gradients.data;
}

MatD grid_from_reduced(SaliencyKind kind, const adapter::LayerMap& activations, const MatD& reduced) {
    const int gh = activations.grid_height;
    const int gw = activations.grid_width;
    const auto positions = static_cast<Eigen::Index>(gh) * gw;
    MatD grid(gh, gw);
    if (kind == SaliencyKind::grad_cam) {
        if (reduced.rows() != activations.data.rows() || reduced.cols() != 1 || activations.data.cols() != positions)
            throw InputError("grad_cam: channel weights do not match the activations");
        const Eigen::RowVectorXd cam = reduced.transpose() * activations.data;
        for (int i = 0; i < gh; ++i)
            for (int j = 0; j < gw; ++j) grid(i, j) = std::max(0.0, cam[i * gw + j]);
        return grid;
    }
    const int lead = activations.leading_tokens;
    if (reduced.rows() != activations.data.rows() || reduced.cols() != activations.data.cols() ||
        activations.data.cols() != positions + lead)
        throw InputError("attention_relevance: gradient does not match the attention row");
    const MatD rel = reduced.cwiseProduct(activations.data).cwiseMax(0.0);
    const Eigen::RowVectorXd mean = rel.colwise().mean();
    for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j) grid(i, j) = mean[lead + i * gw + j];
    return grid;
}

MatD grid_from_gradients(SaliencyKind kind, const adapter::GradientResult& g) {
    return grid_from_reduced(kind, g.activations, reduce_gradients(kind, g.gradients));
}

MatD upsample_to_image(const MatD& grid, int width, int height) {
    const auto ax = axes_for(static_cast<int>(grid.rows()), static_cast<int>(grid.cols()), width, height);
    return ax.wy * grid * ax.wx.transpose();
}

SaliencyMap compute_saliency(adapter::ModelHandle& h, const shapes::CompositeImage& composite,
                             const std::string& prompt, std::string prompt_id, std::string label_id) {
    const auto g = h.score_with_gradients(composite.image, prompt, adapter::Framing::letterbox);
    SaliencyMap m;
    const MatD grid = grid_from_gradients(h.saliency_kind(), g);
    m.grid = upsample_to_image(grid, composite.image.cols, composite.image.rows);
    m.model_id = h.model_id();
    m.composite_id = composite.composite_id;
    m.prompt_id = std::move(prompt_id);
    m.label_id = std::move(label_id);
    m.all_zero = !(grid.maxCoeff() > 0);
    return m;
}

void apply_decision_rule(RegionDecision& d, const shapes::CompositeImage& composite) {
    d.tie = d.left_sum == d.right_sum;
    d.chosen_side = d.right_sum > d.left_sum ? Side::right : Side::left;
    d.chosen_class = d.chosen_side == Side::left ? composite.left_class : composite.right_class;
    d.correct = d.chosen_class == d.label_class;
}

RegionDecision decide_region(const SaliencyMap& map, const shapes::CompositeImage& composite) {
    const int width = static_cast<int>(map.grid.cols());
    const int height = static_cast<int>(map.grid.rows());
    if (!composite.image.empty() && (composite.image.cols != width || composite.image.rows != height))
        throw InputError("saliency map does not match composite " + composite.composite_id);
    check_layout(composite, width);
    if ((map.grid.array() < 0).any()) throw InputError("saliency map has negative values");

    RegionDecision d;
    d.model_id = map.model_id;
    d.prompt_id = map.prompt_id;
    d.composite_id = composite.composite_id;
    d.pair_id = composite.pair_id;
    d.arrangement = composite.arrangement;
    d.primary = composite.primary;
    d.label_id = map.label_id;
    const int pane = composite.pane_width;
    cv::Mat mask;
    if (!composite.image.empty()) mask = silhouette_mask(composite);
    double lm = 0, rm = 0;
    int ln = 0, rn = 0;
    for (int y = 0; y < height; ++y) {
        // Right half traversed from the outer edge inwards so mirrored maps give bit-identical sums.
        for (int k = 0; k < pane; ++k) {
            const int xr = width - 1 - k;
            const double l = map.grid(y, k);
            const double r = map.grid(y, xr);
            d.left_sum += l;
            d.right_sum += r;
            d.left_peak = std::max(d.left_peak, l);
            d.right_peak = std::max(d.right_peak, r);
            if (!mask.empty()) {
                if (mask.at<std::uint8_t>(y, k)) lm += l, ++ln;
                if (mask.at<std::uint8_t>(y, xr)) rm += r, ++rn;
            }
        }
    }
    d.left_mask_mean = ln ? lm / ln : 0.0;
    d.right_mask_mean = rn ? rm / rn : 0.0;
    d.all_zero = map.all_zero || !(map.grid.maxCoeff() > 0);
    apply_decision_rule(d, composite);
    return d;
}

RegionProjector::RegionProjector(int grid_height, int grid_width, const shapes::CompositeImage& composite)
    : gh_(grid_height), gw_(grid_width) {
    const int width = composite.image.cols;
    const int height = composite.image.rows;
    check_layout(composite, width);
    const auto ax = axes_for(gh_, gw_, width, height);
    const int pane = composite.pane_width;
    const int right_start = pane + composite.gutter;

    const VecD col_y = ax.wy.colwise().sum().transpose();
    const VecD col_left = ax.wx.topRows(pane).colwise().sum().transpose();
    left_weights_ = col_y * col_left.transpose();
    // The mirrored traversal is only exact when the composite spans the letterbox square horizontally.
    if (ax.geometry.offset_x != 0) throw InputError("composite " + composite.composite_id + " is taller than wide");

    const cv::Mat mask = silhouette_mask(composite);
    MatD ml = MatD::Zero(height, pane), mr = MatD::Zero(height, pane);
    for (int y = 0; y < height; ++y)
        for (int k = 0; k < pane; ++k) {
            if (mask.at<std::uint8_t>(y, k)) ml(y, k) = 1, left_mask_pixels_ += 1;
            if (mask.at<std::uint8_t>(y, right_start + k)) mr(y, k) = 1, right_mask_pixels_ += 1;
        }
    left_mask_weights_ = ax.wy.transpose() * ml * ax.wx.topRows(pane);
    right_mask_weights_ = ax.wy.transpose() * mr * ax.wx.middleRows(right_start, pane);

    const double cell_w = static_cast<double>(ax.geometry.side) / gw_;
    const double cell_h = static_cast<double>(ax.geometry.side) / gh_;
    std::vector<int> rows;
    for (int i = 0; i < gh_; ++i) {
        const double cy = (i + 0.5) * cell_h - ax.geometry.offset_y;
        if (cy >= 0 && cy < height) rows.push_back(i);
    }
    if (rows.empty())
        for (int i = 0; i < gh_; ++i) rows.push_back(i);
    for (int j = 0; j < gw_; ++j) {
        const double cx = (j + 0.5) * cell_w - ax.geometry.offset_x;
        for (int i : rows) {
            if (cx < pane) left_cells_.emplace_back(i, j);
            if (cx >= right_start && cx < width) right_cells_.emplace_back(i, j);
        }
    }
}

RegionProjector::Sums RegionProjector::project(const MatD& grid) const {
    if (grid.rows() != gh_ || grid.cols() != gw_) throw InputError("grid shape does not match the projector");
    Sums s;
    for (int i = 0; i < gh_; ++i)
        for (int j = 0; j < gw_; ++j) {
            const double w = left_weights_(i, j);
            s.left += w * grid(i, j);
            s.right += w * grid(i, gw_ - 1 - j);
        }
    s.left_mask = left_mask_pixels_ > 0 ? (left_mask_weights_.cwiseProduct(grid)).sum() / left_mask_pixels_ : 0.0;
    s.right_mask = right_mask_pixels_ > 0 ? (right_mask_weights_.cwiseProduct(grid)).sum() / right_mask_pixels_ : 0.0;
    for (auto [i, j] : left_cells_) s.left_peak = std::max(s.left_peak, grid(i, j));
    for (auto [i, j] : right_cells_) s.right_peak = std::max(s.right_peak, grid(i, j));
    return s;
}

bool score_label_pair(const RegionDecision& round_decision, const RegionDecision& sharp_decision) {
    const auto& a = round_decision;
    const auto& b = sharp_decision;
    if (a.model_id != b.model_id || a.prompt_id != b.prompt_id || a.composite_id != b.composite_id)
        throw InputError("label pair decisions come from different trials");
    if (a.label_class != ShapeClass::round || b.label_class != ShapeClass::sharp)
        throw InputError("label pair must be one round and one sharp label");
    return a.correct && b.correct;
}

std::vector<ConsistencyPair> consistency_pairs(const std::vector<RegionDecision>& decisions) {
    using Key = std::tuple<std::string, std::string, WordType, std::string, std::string, shapes::Arrangement>;
    std::map<Key, const RegionDecision*> index;
    for (const auto& d : decisions)
        index[{d.model_id, d.prompt_id, d.word_type, d.label_id, d.pair_id, d.arrangement}] = &d;
    std::vector<ConsistencyPair> out;
    for (const auto& [k, d] : index) {
        if (!d->primary) continue;
        const auto other = d->arrangement == shapes::Arrangement::curved_left ? shapes::Arrangement::curved_right
                                                                              : shapes::Arrangement::curved_left;
        const auto it = index.find({d->model_id, d->prompt_id, d->word_type, d->label_id, d->pair_id, other});
        if (it == index.end())
            throw InputError("missing mirror arrangement for " + d->composite_id + " / " + d->label_id + " (" +
                             d->model_id + ", " + d->prompt_id + ")");
        const RegionDecision& m = *it->second;
        out.push_back({d->model_id, d->prompt_id, d->word_type, d->label_id, d->pair_id,
                       d->chosen_class == m.chosen_class, d->tie || m.tie});
    }
    return out;
}

std::vector<PairCongruence> label_pair_congruence(const std::vector<RegionDecision>& decisions,
                                                  const std::vector<lexicon::LabelPair>& pairs) {
    using Key = std::tuple<std::string, std::string, std::string, std::string>;  // model, prompt, composite, label
    std::map<Key, const RegionDecision*> index;
    std::map<std::tuple<std::string, std::string, std::string>, const RegionDecision*> trials;
    for (const auto& d : decisions) {
        if (!d.primary || d.word_type != WordType::original) continue;
        index[{d.model_id, d.prompt_id, d.composite_id, d.label_id}] = &d;
        trials.emplace(std::tuple{d.model_id, d.prompt_id, d.composite_id}, &d);
    }
    std::vector<PairCongruence> out;
    for (const auto& [t, d] : trials) {
        const auto& [model, prompt, composite] = t;
        for (const auto& lp : pairs) {
            const auto r = index.find({model, prompt, composite, lp.round_label.text});
            const auto s = index.find({model, prompt, composite, lp.sharp_label.text});
            if (r == index.end() || s == index.end()) continue;
            out.push_back({model, prompt, d->pair_id, lp.pair_name, score_label_pair(*r->second, *s->second)});
        }
    }
    return out;
}

store::Json to_json(const RegionDecision& d) {
    return {{"key", d.key},
            {"model_id", d.model_id},
            {"prompt_id", d.prompt_id},
            {"composite_id", d.composite_id},
            {"pair_id", d.pair_id},
            {"arrangement", shapes::to_string(d.arrangement)},
            {"primary", d.primary},
            {"label_id", d.label_id},
            {"word_type", lexicon::to_string(d.word_type)},
            {"label_class", bk::to_string(d.label_class)},
            {"score", d.score},
            {"left_sum", d.left_sum},
            {"right_sum", d.right_sum},
            {"chosen_side", to_string(d.chosen_side)},
            {"chosen_class", bk::to_string(d.chosen_class)},
            {"correct", d.correct},
            {"tie", d.tie},
            {"all_zero", d.all_zero},
            {"left_mask_mean", d.left_mask_mean},
            {"right_mask_mean", d.right_mask_mean},
            {"left_peak", d.left_peak},
            {"right_peak", d.right_peak}};
}

RegionDecision decision_from_json(const store::Json& j) {
    RegionDecision d;
    try {
        d.key = j.at("key").get<std::string>();
        d.model_id = j.at("model_id").get<std::string>();
        d.prompt_id = j.at("prompt_id").get<std::string>();
        d.composite_id = j.at("composite_id").get<std::string>();
        d.pair_id = j.at("pair_id").get<std::string>();
        const auto arr = j.at("arrangement").get<std::string>();
        if (arr == "curved_left")
            d.arrangement = shapes::Arrangement::curved_left;
        else if (arr == "curved_right")
            d.arrangement = shapes::Arrangement::curved_right;
        else
            throw InputError("unknown arrangement '" + arr + "'");
        d.primary = j.at("primary").get<bool>();
        d.label_id = j.at("label_id").get<std::string>();
        d.word_type = lexicon::parse_word_type(j.at("word_type").get<std::string>());
        d.label_class = parse_shape_class(j.at("label_class").get<std::string>());
        d.score = j.at("score").get<double>();
        d.left_sum = j.at("left_sum").get<double>();
        d.right_sum = j.at("right_sum").get<double>();
        d.chosen_side = j.at("chosen_side").get<std::string>() == "right" ? Side::right : Side::left;
        d.chosen_class = parse_shape_class(j.at("chosen_class").get<std::string>());
        d.correct = j.at("correct").get<bool>();
        d.tie = j.at("tie").get<bool>();
        d.all_zero = j.value("all_zero", false);
        d.left_mask_mean = j.value("left_mask_mean", 0.0);
        d.right_mask_mean = j.value("right_mask_mean", 0.0);
        d.left_peak = j.value("left_peak", 0.0);
        d.right_peak = j.value("right_peak", 0.0);
    } catch (const store::Json::exception& e) {
        throw InputError(std::string("malformed region decision: ") + e.what());
    }
    return d;
}

SaveMaps parse_save_maps(std::string_view s) {
    if (s == "none") return SaveMaps::none;
    if (s == "overlays") return SaveMaps::overlays;
    if (s == "full") return SaveMaps::full;
    throw InputError("--save-maps must be none, overlays or full (got '" + std::string(s) + "')");
}

cv::Mat render_overlay(const shapes::CompositeImage& composite, const MatD& map) {
    const int h = composite.image.rows, w = composite.image.cols;
    if (map.rows() != h || map.cols() != w) throw InputError("overlay map does not match the composite");
    const double peak = map.maxCoeff();
    cv::Mat gray(h, w, CV_8UC1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            gray.at<std::uint8_t>(y, x) =
                peak > 0 ? cv::saturate_cast<std::uint8_t>(255.0 * map(y, x) / peak) : std::uint8_t{0};
    cv::Mat heat, base, out;
    cv::applyColorMap(gray, heat, cv::COLORMAP_JET);
    if (composite.image.channels() == 3)
        base = composite.image;
    else
        cv::cvtColor(composite.image, base, composite.image.channels() == 4 ? cv::COLOR_BGRA2BGR : cv::COLOR_GRAY2BGR);
    cv::addWeighted(base, 0.5, heat, 0.5, 0.0, out);
    return out;
}

RunSummary run_experiment2(const adapter::ModelHandle& h, const Experiment2Config& cfg,
                           const std::function<void(const std::string&)>& progress) {
    store::JsonlStore decisions(cfg.results_dir / "region_decisions.jsonl");
    store::JsonlStore failures(cfg.results_dir / "failures.jsonl");
    RunSummary summary;
    std::mutex summary_mutex;
    auto note_failure = [&](const store::Json& rec) {
        failures.append(rec);
        std::lock_guard lock(summary_mutex);
        ++summary.failed;
    };

    struct Cell {
        WordType word_type;
        const std::vector<Label>* labels;
        const PromptTemplate* prompt;
        MatD text;  // unit rows
        bool ok = false;
    };
    std::vector<Cell> cells;
    for (const auto& [wt, labels] : cfg.label_sets)
        for (const auto& p : cfg.prompts) cells.push_back({wt, &labels, &p, {}, false});

    const int workers = std::max(1, cfg.workers);
    std::vector<std::unique_ptr<adapter::ModelHandle>> replicas;
    for (int w = 0; w < workers; ++w) replicas.push_back(h.replicate());

    if (progress) progress(h.model_id() + ": embedding " + std::to_string(cells.size()) + " prompt/label-set cells");
    util::parallel_for(cells.size(), workers, [&](std::size_t i, int w) {
        auto& c = cells[i];
        std::vector<std::string> prompts;
        for (const auto& l : *c.labels) prompts.push_back(lexicon::render_prompt(*c.prompt, l));
        try {
            c.text = replicas[w]->embed_text(prompts);
            c.ok = true;
        } catch (const clip::TokenLimitError& e) {
            note_failure(failure(store::make_key({"region-text", h.model_id(), c.prompt->id,
                                                  prob::label_set_version(*c.labels)}),
                                 h.model_id(), "embed_text", e.what()));
        }
    });

    const SaliencyKind kind = h.saliency_kind();
    util::parallel_for(cfg.composites.size(), workers, [&](std::size_t ci, int w) {
        const auto& comp = cfg.composites[ci];
        struct Job {
            const Cell* cell;
            std::size_t label;
            std::string key;
        };
        std::vector<Job> jobs;
        std::size_t done = 0;
        for (const auto& c : cells) {
            if (!c.ok) continue;
            for (std::size_t k = 0; k < c.labels->size(); ++k) {
                auto key = decision_key(h.model_id(), c.prompt->id, c.word_type, comp.composite_id,
                                        (*c.labels)[k].text);
                if (decisions.contains(key))
                    ++done;
                else
                    jobs.push_back({&c, k, std::move(key)});
            }
        }
        {
            std::lock_guard lock(summary_mutex);
            summary.skipped += done;
        }
        if (jobs.empty()) return;
        try {
            const auto trace = replicas[w]->trace_image(comp.image, adapter::Framing::letterbox);
            const auto& act = trace->activations();
            const RegionProjector projector(act.grid_height, act.grid_width, comp);
            MatD units(h.embed_dim(), static_cast<Eigen::Index>(jobs.size()));
            for (std::size_t b = 0; b < jobs.size(); ++b)
                units.col(static_cast<Eigen::Index>(b)) =
                    jobs[b].cell->text.row(static_cast<Eigen::Index>(jobs[b].label)).transpose();
            const auto red = replicas[w]->reduced_gradients(*trace, units);
            for (std::size_t b = 0; b < jobs.size(); ++b) {
                const auto& job = jobs[b];
                const Label& label = (*job.cell->labels)[job.label];
                const MatD grid = grid_from_reduced(kind, act, red.reduced[b]);
                const auto sums = projector.project(grid);
                RegionDecision d;
                d.key = job.key;
                d.model_id = h.model_id();
                d.prompt_id = job.cell->prompt->id;
                d.composite_id = comp.composite_id;
                d.pair_id = comp.pair_id;
                d.arrangement = comp.arrangement;
                d.primary = comp.primary;
                d.label_id = label.text;
                d.word_type = job.cell->word_type;
                d.label_class = label.shape_class;
                d.score = red.scores[static_cast<Eigen::Index>(b)];
                d.left_sum = sums.left;
                d.right_sum = sums.right;
                d.left_mask_mean = sums.left_mask;
                d.right_mask_mean = sums.right_mask;
                d.left_peak = sums.left_peak;
                d.right_peak = sums.right_peak;
                d.all_zero = !(grid.maxCoeff() > 0);
                apply_decision_rule(d, comp);
                if (cfg.save_maps != SaveMaps::none) {
                    const MatD map = upsample_to_image(grid, comp.image.cols, comp.image.rows);
                    const auto dir = cfg.saliency_dir / h.model_id() / comp.composite_id / d.prompt_id;
                    std::filesystem::create_directories(dir);
                    const auto stem = file_stem(label.text);
                    const auto png = shapes::encode_png(render_overlay(comp, map));
                    util::atomic_write(dir / (stem + ".png"),
                                       std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
                    if (cfg.save_maps == SaveMaps::full) {
                        npz::Array score;
                        score.shape = {1};
                        score.data = {d.score};
                        npz::write(dir / (stem + ".npz"), {{"map", to_array(map)}, {"grid", to_array(grid)}, {"score", score}});
                    }
                }
                if (decisions.append(to_json(d))) {
                    std::lock_guard lock(summary_mutex);
                    ++summary.computed;
                }
            }
        } catch (const std::exception& e) {
            note_failure(failure(store::make_key({"region-composite", h.model_id(), comp.composite_id}), h.model_id(),
                                 "saliency", e.what()));
            return;
        }
        if (progress) progress(h.model_id() + ": " + comp.composite_id + " done (" + std::to_string(jobs.size()) + " maps)");
    });

    decisions.canonicalize();
    failures.canonicalize();
    return summary;
}

}  // namespace bk::saliency
