#include "boubakiki/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/math/distributions/beta.hpp>

#include "boubakiki/result_store.hpp"
#include "boubakiki/types.hpp"
#include "boubakiki/util.hpp"

namespace bk::metrics {

namespace {

std::string fmt(double v) {
    if (!std::isfinite(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_line(const std::vector<std::string>& fields) {
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) line += ',';
        line += csv_field(fields[i]);
    }
    return line + "\n";
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"')
                cur += '"', ++i;
            else if (c == '"')
                quoted = false;
            else
                cur += c;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

// Type-7 sample quantile of sorted data.
double quantile_sorted(const std::vector<double>& v, double p) {
    if (v.empty()) return std::nan("");
    const double h = (static_cast<double>(v.size()) - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string model_family(const std::string& model_id) {
    std::string m = model_id;
    std::transform(m.begin(), m.end(), m.begin(), [](unsigned char c) { return std::tolower(c); });
    if (m.find("resnet") != std::string::npos || m.rfind("rn", 0) == 0) return "resnet";
    if (m.find("vit") != std::string::npos) return "vit";
    return {};
}

std::size_t word_type_index(WordType wt) {
    switch (wt) {
        case WordType::original: return 0;
        case WordType::adjective: return 1;
        case WordType::nielsen: return 2;
        case WordType::alper: return 3;
    }
    return 0;
}

}  // namespace

ProportionEstimate proportion_estimate(long successes, long trials, double chance, std::string group_key) {
    if (trials < 0) throw InputError("proportion_estimate: negative trial count");
    if (successes < 0 || successes > trials) throw InputError("proportion_estimate: successes outside [0, trials]");
    ProportionEstimate e;
    e.group_key = std::move(group_key);
    e.successes = successes;
    e.trials = trials;
    e.chance = chance;
    const double a = 1.0 + static_cast<double>(successes);
    const double b = 1.0 + static_cast<double>(trials - successes);
    const boost::math::beta_distribution<double> post(a, b);
    e.posterior_mean = a / (a + b);
    e.ci_low = boost::math::quantile(post, 0.025);
    e.ci_high = boost::math::quantile(post, 0.975);
    e.significant = e.ci_low > chance;
    return e;
}

BootstrapEstimate stratified_bootstrap(const std::map<std::string, std::vector<bool>>& outcomes_by_prompt,
                                       std::uint64_t seed, int resamples) {
    BootstrapEstimate out;
    out.resamples = resamples;
    long s = 0, n = 0;
    for (const auto& [p, v] : outcomes_by_prompt) {
        n += static_cast<long>(v.size());
        s += std::count(v.begin(), v.end(), true);
    }
    if (n == 0) {
        out.mean = out.ci_low = out.ci_high = std::nan("");
        return out;
    }
    out.mean = static_cast<double>(s) / n;
    util::SplitMix64 rng(seed);
    std::vector<double> draws;
    draws.reserve(static_cast<std::size_t>(std::max(resamples, 0)));
    for (int r = 0; r < resamples; ++r) {
        long hits = 0;
        for (const auto& [p, v] : outcomes_by_prompt)
            for (std::size_t i = 0; i < v.size(); ++i) hits += v[rng.below(v.size())] ? 1 : 0;
        draws.push_back(static_cast<double>(hits) / n);
    }
    std::sort(draws.begin(), draws.end());
    out.ci_low = quantile_sorted(draws, 0.025);
    out.ci_high = quantile_sorted(draws, 0.975);
    return out;
}

double uniqueness_ratio(const std::vector<prob::ProbTrial>& trials, std::size_t label_set_size,
                        std::size_t expected_cells) {
    if (label_set_size == 0) throw InputError("uniqueness_ratio: empty label set");
    if (trials.empty()) throw InputError("uniqueness_ratio: no trials");
    std::set<std::pair<std::string, std::string>> cells;
    std::set<std::string> winners;
    for (const auto& t : trials) {
        if (t.model_id != trials.front().model_id || t.word_type != trials.front().word_type)
            throw InputError("uniqueness_ratio: trials mix models or word types");
        cells.emplace(t.image_id, t.prompt_id);
        winners.insert(t.winner);
    }
    if (cells.size() != expected_cells)
        throw InputError("uniqueness_ratio: incomplete sweep (" + std::to_string(cells.size()) + " of " +
                         std::to_string(expected_cells) + " image/prompt cells)");
    if (winners.size() > label_set_size) throw InputError("uniqueness_ratio: more winners than labels");
    return static_cast<double>(winners.size()) / static_cast<double>(label_set_size);
}

ConsistencyRatio consistency_ratio(const std::vector<saliency::ConsistencyPair>& pairs) {
    ConsistencyRatio r;
    for (const auto& p : pairs) {
        if (p.has_tie) {
            ++r.ties;
            continue;
        }
        ++r.total;
        if (p.consistent) ++r.consistent;
    }
    return r;
}

double separability_score(const Eigen::MatrixXd& embeddings, const std::vector<int>& classes, double lambda) {
    const auto n = embeddings.rows();
    if (static_cast<std::size_t>(n) != classes.size()) throw InputError("separability: one class per row required");
    std::map<int, std::vector<Eigen::Index>> members;
    for (Eigen::Index i = 0; i < n; ++i) members[classes[static_cast<std::size_t>(i)]].push_back(i);
    if (members.size() < 2) throw InputError("separability: at least two classes required");
    std::size_t smallest = SIZE_MAX;
    for (const auto& [c, idx] : members) smallest = std::min(smallest, idx.size());
    if (smallest < 2) throw InputError("separability: every class needs at least two points");
    const auto k = static_cast<int>(std::min<std::size_t>(5, smallest));

    Eigen::MatrixXd x = embeddings;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = x.row(i).norm();
        if (norm > 0) x.row(i) /= norm;
    }
    std::vector<int> fold(static_cast<std::size_t>(n));
    for (const auto& [c, idx] : members)
        for (std::size_t j = 0; j < idx.size(); ++j) fold[static_cast<std::size_t>(idx[j])] = static_cast<int>(j % k);

    std::vector<int> class_ids;
    for (const auto& [c, idx] : members) class_ids.push_back(c);
    const auto nc = static_cast<Eigen::Index>(class_ids.size());

    long correct = 0;
    for (int f = 0; f < k; ++f) {
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < n; ++i) (fold[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
        const auto m = static_cast<Eigen::Index>(train.size());
        Eigen::MatrixXd xt(m, x.cols());
        Eigen::MatrixXd y(m, nc);
        for (Eigen::Index r = 0; r < m; ++r) {
            xt.row(r) = x.row(train[static_cast<std::size_t>(r)]);
            for (Eigen::Index c = 0; c < nc; ++c)
                y(r, c) = classes[static_cast<std::size_t>(train[static_cast<std::size_t>(r)])] ==
                                  class_ids[static_cast<std::size_t>(c)]
                              ? 1.0
                              : -1.0;
        }
        const Eigen::RowVectorXd mu = xt.colwise().mean();
        const Eigen::RowVectorXd ybar = y.colwise().mean();
        const Eigen::MatrixXd xc = xt.rowwise() - mu;
        const Eigen::MatrixXd yc = y.rowwise() - ybar;
        // Intercept is left unpenalized by centring; the dual form keeps the solve at m x m.
        Eigen::MatrixXd w;
        if (m <= x.cols()) {
            Eigen::MatrixXd gram = xc * xc.transpose();
            gram.diagonal().array() += lambda;
            w = xc.transpose() * gram.ldlt().solve(yc);
        } else {
            Eigen::MatrixXd cov = xc.transpose() * xc;
            cov.diagonal().array() += lambda;
            w = cov.ldlt().solve(xc.transpose() * yc);
        }
        const Eigen::RowVectorXd b = ybar - mu * w;
        for (Eigen::Index i : test) {
            const Eigen::RowVectorXd s = x.row(i) * w + b;
            Eigen::Index best = 0;
            for (Eigen::Index c = 1; c < nc; ++c)
                if (s[c] > s[best]) best = c;
            if (class_ids[static_cast<std::size_t>(best)] == classes[static_cast<std::size_t>(i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

std::optional<double> published_uniqueness(const std::string& model_id, WordType wt) {
    static constexpr double resnet[] = {0.667, 0.283, 0.328, 0.436};
    static constexpr double vit[] = {0.792, 0.325, 0.333, 0.466};
    const auto fam = model_family(model_id);
    if (fam == "resnet") return resnet[word_type_index(wt)];
    if (fam == "vit") return vit[word_type_index(wt)];
    return std::nullopt;
}

std::optional<double> published_consistency(const std::string& model_id, WordType wt) {
    static constexpr double resnet[] = {0.799, 0.761, 0.758, 0.765};
    static constexpr double vit[] = {0.723, 0.749, 0.722, 0.739};
    const auto fam = model_family(model_id);
    if (fam == "resnet") return resnet[word_type_index(wt)];
    if (fam == "vit") return vit[word_type_index(wt)];
    return std::nullopt;
}

std::optional<double> published_overall_consistency(const std::string& model_id) {
    const auto fam = model_family(model_id);
    if (fam == "resnet") return 0.770;
    if (fam == "vit") return 0.735;
    return std::nullopt;
}

std::string group_key(const std::string& experiment, const std::string& model, const std::string& word_type,
                      const std::string& prompt, const std::string& category) {
    return experiment + "|" + model + "|" + word_type + "|" + prompt + "|" + category;
}

AnalysisResult analyze(const AnalysisInputs& in) {
    AnalysisResult res;
    const auto& dir = in.results_dir;
    std::uint64_t seed_step = 0;
    auto next_seed = [&] { return in.seed + 0x9e3779b97f4a7c15ULL * ++seed_step; };

    // Experiment 1: pair congruence per word type.
    std::vector<prob::PairOutcome> outcomes;
    for (const auto& j : store::JsonlStore::read_all(dir / "pair_outcomes.jsonl")) outcomes.push_back(prob::outcome_from_json(j));
    {
        std::map<std::tuple<std::string, std::string>, std::map<std::string, std::vector<bool>>> grouped;
        for (const auto& o : outcomes)
            grouped[{o.model_id, std::string(lexicon::to_string(o.word_type))}][o.prompt_id].push_back(o.match);
        for (const auto& [k, by_prompt] : grouped) {
            const auto& [model, wt] = k;
            long s = 0, n = 0;
            for (const auto& [prompt, v] : by_prompt) {
                const long ps = std::count(v.begin(), v.end(), true);
                res.estimates.push_back(
                    proportion_estimate(ps, static_cast<long>(v.size()), 0.25, group_key("prob", model, wt, prompt)));
                s += ps;
                n += static_cast<long>(v.size());
            }
            res.estimates.push_back(proportion_estimate(s, n, 0.25, group_key("prob", model, wt)));
            res.pooled.push_back({"prob", model, wt, stratified_bootstrap(by_prompt, next_seed(), in.resamples)});
        }
    }

    // Uniqueness per model and word type.
    {
        std::vector<prob::ProbTrial> trials;
        for (const auto& j : store::JsonlStore::read_all(dir / "prob_trials.jsonl")) trials.push_back(prob::trial_from_json(j));
        std::map<std::pair<std::string, WordType>, std::vector<prob::ProbTrial>> grouped;
        for (auto& t : trials) grouped[{t.model_id, t.word_type}].push_back(std::move(t));
        for (const auto& [k, ts] : grouped) {
            UniquenessRow row;
            row.model_id = k.first;
            row.word_type = k.second;
            const auto size_it = in.label_set_sizes.find(k.second);
            row.label_set_size = size_it != in.label_set_sizes.end() ? size_it->second : 0;
            std::set<std::string> winners;
            for (const auto& t : ts) winners.insert(t.winner);
            row.unique_winners = winners.size();
            row.published = published_uniqueness(k.first, k.second);
            try {
                row.ratio = uniqueness_ratio(ts, row.label_set_size, in.images * in.prompts);
                row.status = "complete";
            } catch (const InputError& e) {
                row.ratio = row.label_set_size ? static_cast<double>(winners.size()) / row.label_set_size : std::nan("");
                row.status = "incomplete";
                res.warnings.push_back(k.first + "/" + std::string(lexicon::to_string(k.second)) + ": " + e.what());
            }
            res.uniqueness.push_back(std::move(row));
        }
    }

    // Experiment 2: label correctness, original pair congruence, consistency.
    std::vector<saliency::RegionDecision> decisions;
    for (const auto& j : store::JsonlStore::read_all(dir / "region_decisions.jsonl"))
        decisions.push_back(saliency::decision_from_json(j));
    {
        std::map<std::tuple<std::string, std::string, std::string>, std::pair<long, long>> correct;
        for (const auto& d : decisions) {
            auto& c = correct[{d.model_id, std::string(lexicon::to_string(d.word_type)), std::string(bk::to_string(d.label_class))}];
            c.first += d.correct ? 1 : 0;
            c.second += 1;
        }
        for (const auto& [k, c] : correct) {
            const auto& [model, wt, cat] = k;
            res.estimates.push_back(proportion_estimate(c.first, c.second, 0.5, group_key("gradcam_label", model, wt, "*", cat)));
        }

        const auto congruence = saliency::label_pair_congruence(decisions, in.original_pairs);
        std::map<std::string, std::map<std::string, std::vector<bool>>> by_model;
        std::map<std::pair<std::string, std::string>, std::pair<long, long>> by_label_pair;
        for (const auto& c : congruence) {
            by_model[c.model_id][c.prompt_id].push_back(c.congruent);
            auto& lp = by_label_pair[{c.model_id, c.label_pair}];
            lp.first += c.congruent ? 1 : 0;
            lp.second += 1;
        }
        for (const auto& [model, by_prompt] : by_model) {
            long s = 0, n = 0;
            for (const auto& [prompt, v] : by_prompt) {
                const long ps = std::count(v.begin(), v.end(), true);
                res.estimates.push_back(
                    proportion_estimate(ps, static_cast<long>(v.size()), 0.25, group_key("gradcam_pair", model, "original", prompt)));
                s += ps;
                n += static_cast<long>(v.size());
            }
            res.estimates.push_back(proportion_estimate(s, n, 0.25, group_key("gradcam_pair", model, "original")));
            res.pooled.push_back({"gradcam_pair", model, "original", stratified_bootstrap(by_prompt, next_seed(), in.resamples)});
        }
        for (const auto& [k, c] : by_label_pair)
            res.estimates.push_back(
                proportion_estimate(c.first, c.second, 0.25, group_key("gradcam_pair", k.first, "original", "*", k.second)));

        std::map<std::string, std::vector<saliency::RegionDecision>> per_model;
        for (const auto& d : decisions) per_model[d.model_id].push_back(d);
        for (const auto& [model, ds] : per_model) {
            std::vector<saliency::ConsistencyPair> pairs;
            try {
                pairs = saliency::consistency_pairs(ds);
            } catch (const InputError& e) {
                res.warnings.push_back(model + ": consistency skipped: " + e.what());
                continue;
            }
            res.consistency.push_back({model, "all", consistency_ratio(pairs), published_overall_consistency(model)});
            std::map<WordType, std::vector<saliency::ConsistencyPair>> by_wt;
            for (const auto& p : pairs) by_wt[p.word_type].push_back(p);
            for (const auto& [wt, ps] : by_wt)
                res.consistency.push_back(
                    {model, std::string(lexicon::to_string(wt)), consistency_ratio(ps), published_consistency(model, wt)});
        }
    }

    // Separability of persisted embeddings.
    {
        struct Points {
            std::vector<std::vector<float>> rows;
            std::vector<int> classes;
        };
        std::map<std::tuple<std::string, std::string, std::string>, Points> groups;
        for (const auto& j : store::JsonlStore::read_all(dir / "embeddings.jsonl")) {
            const auto kind = j.at("kind").get<std::string>();
            const auto model = j.at("model_id").get<std::string>();
            const int cls = parse_shape_class(j.at("class").get<std::string>()) == ShapeClass::round ? 0 : 1;
            std::string subset;
            if (kind == "text") {
                if (j.value("prompt_id", in.embedding_prompt_id) != in.embedding_prompt_id) continue;
                subset = j.at("word_type").get<std::string>();
            } else {
                subset = "curved_vs_jagged";
            }
            auto& g = groups[{model, kind, subset}];
            g.rows.push_back(j.at("vector").get<std::vector<float>>());
            g.classes.push_back(cls);
        }
        for (const auto& [k, g] : groups) {
            const auto& [model, kind, subset] = k;
            Eigen::MatrixXd x(static_cast<Eigen::Index>(g.rows.size()), static_cast<Eigen::Index>(g.rows.front().size()));
            for (std::size_t r = 0; r < g.rows.size(); ++r)
                for (std::size_t c = 0; c < g.rows[r].size(); ++c)
                    x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = g.rows[r][c];
            try {
                res.separability.push_back({model, kind, subset, g.rows.size(), separability_score(x, g.classes)});
            } catch (const InputError& e) {
                res.warnings.push_back(model + "/" + kind + "/" + subset + ": " + e.what());
            }
        }
    }
    return res;
}

void write_analysis(const AnalysisResult& r, const std::filesystem::path& analysis_dir, bool has_legacy) {
    std::filesystem::create_directories(analysis_dir);
    std::string est = csv_line({"group_key", "experiment", "model", "word_type", "prompt", "category", "successes",
                                "trials", "observed", "posterior_mean", "ci_low", "ci_high", "chance", "significant"});
    for (const auto& e : r.estimates) {
        std::vector<std::string> parts;
        std::stringstream ss(e.group_key);
        for (std::string p; std::getline(ss, p, '|');) parts.push_back(p);
        parts.resize(5);
        est += csv_line({e.group_key, parts[0], parts[1], parts[2], parts[3], parts[4], std::to_string(e.successes),
                         std::to_string(e.trials), fmt(e.observed()), fmt(e.posterior_mean), fmt(e.ci_low), fmt(e.ci_high),
                         fmt(e.chance), e.significant ? "true" : "false"});
    }
    util::atomic_write(analysis_dir / "estimates.csv", est);

    std::string pooled = csv_line({"experiment", "model", "word_type", "mean", "ci_low", "ci_high", "resamples"});
    for (const auto& p : r.pooled)
        pooled += csv_line({p.experiment, p.model_id, p.word_type, fmt(p.estimate.mean), fmt(p.estimate.ci_low),
                            fmt(p.estimate.ci_high), std::to_string(p.estimate.resamples)});
    util::atomic_write(analysis_dir / "pooled_bootstrap.csv", pooled);

    std::string uniq = csv_line({"model", "word_type", "unique_winners", "label_set_size", "ratio", "published", "delta",
                                 "status", "stimuli"});
    for (const auto& u : r.uniqueness)
        uniq += csv_line({u.model_id, std::string(lexicon::to_string(u.word_type)), std::to_string(u.unique_winners),
                          std::to_string(u.label_set_size), fmt(u.ratio), fmt(u.published),
                          u.published ? fmt(u.ratio - *u.published) : "", u.status,
                          has_legacy ? "with-legacy" : "generated-only"});
    util::atomic_write(analysis_dir / "uniqueness.csv", uniq);

    std::string cons = csv_line({"model", "word_type", "consistent", "total", "ties", "ratio", "published", "delta"});
    for (const auto& c : r.consistency)
        cons += csv_line({c.model_id, c.word_type, std::to_string(c.value.consistent), std::to_string(c.value.total),
                          std::to_string(c.value.ties), c.value.total ? fmt(c.value.ratio()) : "", fmt(c.published),
                          c.published && c.value.total ? fmt(c.value.ratio() - *c.published) : ""});
    util::atomic_write(analysis_dir / "consistency.csv", cons);

    std::string sep = csv_line({"model", "modality", "subset", "points", "accuracy"});
    for (const auto& s : r.separability)
        sep += csv_line({s.model_id, s.modality, s.subset, std::to_string(s.points), fmt(s.accuracy)});
    util::atomic_write(analysis_dir / "separability.csv", sep);
}

std::vector<ProportionEstimate> read_estimates_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw InputError("missing " + path.string());
    std::string line;
    if (!std::getline(f, line)) return {};
    const auto header = split_csv(line);
    auto col = [&](const char* name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw InputError(path.string() + ": missing column " + name);
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto gk = col("group_key"), s = col("successes"), n = col("trials"), pm = col("posterior_mean"),
               lo = col("ci_low"), hi = col("ci_high"), ch = col("chance"), sig = col("significant");
    std::vector<ProportionEstimate> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto v = split_csv(line);
        if (v.size() < header.size()) throw InputError(path.string() + ": short row");
        ProportionEstimate e;
        e.group_key = v[gk];
        e.successes = std::stol(v[s]);
        e.trials = std::stol(v[n]);
        e.posterior_mean = std::stod(v[pm]);
        e.ci_low = std::stod(v[lo]);
        e.ci_high = std::stod(v[hi]);
        e.chance = std::stod(v[ch]);
        e.significant = v[sig] == "true";
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw InputError("missing " + path.string());
    std::string line;
    if (!std::getline(f, line)) return {};
    const auto header = split_csv(line);
    std::vector<CsvRow> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto v = split_csv(line);
        if (v.size() != header.size()) throw InputError(path.string() + ": row has " + std::to_string(v.size()) + " fields");
        CsvRow row;
        for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = v[i];
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace bk::metrics
