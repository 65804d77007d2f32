#include "boubakiki/prob_probe.hpp"

#include <algorithm>
#include <set>

#include "boubakiki/clip/tokenizer.hpp"
#include "boubakiki/types.hpp"
#include "boubakiki/util.hpp"

namespace bk::prob {

using adapter::MatD;
using adapter::VecD;

namespace {

std::vector<float> as_floats(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
    std::vector<float> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    return out;
}

store::Json failure(const std::string& key, const std::string& model_id, const std::string& stage,
                    const std::string& what) {
    return {{"key", key}, {"model_id", model_id}, {"stage", stage}, {"error", what}};
}

}  // namespace

std::vector<ProbeImage> probe_images(const std::vector<shapes::ShapePair>& pairs) {
    std::vector<ProbeImage> out;
    for (const auto& p : pairs) {
        out.push_back({p.pair_id + "__curved", p.pair_id, ShapeClass::round, p.curved_image});
        out.push_back({p.pair_id + "__jagged", p.pair_id, ShapeClass::sharp, p.jagged_image});
    }
    return out;
}

std::string label_set_version(const std::vector<Label>& labels) {
    std::string s;
    for (const auto& l : labels) {
        s += lexicon::to_string(l.word_type);
        s += ':';
        s += l.text;
        s += ':';
        s += bk::to_string(l.shape_class);
        s += '\n';
    }
    return util::hex64(util::fnv1a64(s));
}

std::string trial_key(const std::string& model_id, const std::string& prompt_id, const std::string& version,
                      const std::string& image_id) {
    return store::make_key({"prob", model_id, prompt_id, version, image_id});
}

ProbTrial decide_trial(const std::vector<double>& probabilities, const std::vector<Label>& labels) {
    if (labels.empty()) throw InputError("label set is empty");
    if (probabilities.size() != labels.size()) throw InputError("probability count does not match label count");
    const double best = *std::max_element(probabilities.begin(), probabilities.end());
    std::size_t winner = labels.size();
    int at_max = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (probabilities[i] != best) continue;
        ++at_max;
        if (winner == labels.size() || labels[i].text < labels[winner].text) winner = i;
    }
    ProbTrial t;
    t.word_type = labels.front().word_type;
    t.winner = labels[winner].text;
    t.winner_class = labels[winner].shape_class;
    t.winner_prob = best;
    t.tie = at_max > 1;
    return t;
}

ProbTrial run_prob_trial(const adapter::ModelHandle& h, const ProbeImage& image, const std::vector<Label>& label_set,
                         const PromptTemplate& tmpl, bool keep_probs) {
    if (label_set.empty()) throw InputError("label set is empty");
    for (const auto& l : label_set)
        if (l.word_type != label_set.front().word_type) throw InputError("label set mixes word types");
    std::vector<std::string> prompts;
    for (const auto& l : label_set) prompts.push_back(lexicon::render_prompt(tmpl, l));
    const auto scored = h.label_probabilities(image.image, prompts);
    ProbTrial t = decide_trial(scored.probabilities, label_set);
    t.model_id = h.model_id();
    t.prompt_id = tmpl.id;
    t.label_set_version = label_set_version(label_set);
    t.image_id = image.image_id;
    t.pair_id = image.pair_id;
    t.image_class = image.image_class;
    t.key = trial_key(t.model_id, t.prompt_id, t.label_set_version, t.image_id);
    if (keep_probs) t.all_probs = scored.probabilities;
    return t;
}

PairOutcome score_pair(const ProbTrial& c, const ProbTrial& j) {
    if (c.model_id != j.model_id || c.prompt_id != j.prompt_id || c.word_type != j.word_type ||
        c.pair_id != j.pair_id || c.label_set_version != j.label_set_version)
        throw InputError("trials " + c.image_id + " and " + j.image_id + " do not belong to one pair outcome");
    if (c.image_class != ShapeClass::round || j.image_class != ShapeClass::sharp)
        throw InputError("score_pair expects the curved trial first and the jagged trial second");
    PairOutcome p;
    p.model_id = c.model_id;
    p.prompt_id = c.prompt_id;
    p.word_type = c.word_type;
    p.pair_id = c.pair_id;
    p.match = c.winner_class == ShapeClass::round && j.winner_class == ShapeClass::sharp;
    p.curved_winner = c.winner;
    p.jagged_winner = j.winner;
    p.key = store::make_key({"pair", c.model_id, c.prompt_id, c.label_set_version, c.pair_id});
    return p;
}

store::Json to_json(const ProbTrial& t) {
    store::Json j{{"key", t.key},
                  {"model_id", t.model_id},
                  {"prompt_id", t.prompt_id},
                  {"word_type", lexicon::to_string(t.word_type)},
                  {"label_set_version", t.label_set_version},
                  {"image_id", t.image_id},
                  {"pair_id", t.pair_id},
                  {"image_class", bk::to_string(t.image_class)},
                  {"winner", t.winner},
                  {"winner_class", bk::to_string(t.winner_class)},
                  {"winner_prob", t.winner_prob},
                  {"tie", t.tie}};
    if (t.all_probs) j["all_probs"] = *t.all_probs;
    return j;
}

ProbTrial trial_from_json(const store::Json& j) {
    ProbTrial t;
    t.key = j.at("key");
    t.model_id = j.at("model_id");
    t.prompt_id = j.at("prompt_id");
    t.word_type = lexicon::parse_word_type(j.at("word_type").get<std::string>());
    t.label_set_version = j.at("label_set_version");
    t.image_id = j.at("image_id");
    t.pair_id = j.at("pair_id");
    t.image_class = parse_shape_class(j.at("image_class").get<std::string>());
    t.winner = j.at("winner");
    t.winner_class = parse_shape_class(j.at("winner_class").get<std::string>());
    t.winner_prob = j.at("winner_prob");
    t.tie = j.at("tie");
    if (j.contains("all_probs")) t.all_probs = j.at("all_probs").get<std::vector<double>>();
    return t;
}

store::Json to_json(const PairOutcome& p) {
    return {{"key", p.key},
            {"model_id", p.model_id},
            {"prompt_id", p.prompt_id},
            {"word_type", lexicon::to_string(p.word_type)},
            {"pair_id", p.pair_id},
            {"match", p.match},
            {"curved_winner", p.curved_winner},
            {"jagged_winner", p.jagged_winner}};
}

PairOutcome outcome_from_json(const store::Json& j) {
    PairOutcome p;
    p.key = j.at("key");
    p.model_id = j.at("model_id");
    p.prompt_id = j.at("prompt_id");
    p.word_type = lexicon::parse_word_type(j.at("word_type").get<std::string>());
    p.pair_id = j.at("pair_id");
    p.match = j.at("match");
    p.curved_winner = j.at("curved_winner");
    p.jagged_winner = j.at("jagged_winner");
    return p;
}

std::vector<PairOutcome> pair_outcomes(const std::vector<ProbTrial>& trials) {
    std::map<std::tuple<std::string, std::string, std::string, std::string>, std::pair<const ProbTrial*, const ProbTrial*>>
        halves;
    for (const auto& t : trials) {
        auto& slot = halves[{t.model_id, t.prompt_id, t.label_set_version, t.pair_id}];
        (t.image_class == ShapeClass::round ? slot.first : slot.second) = &t;
    }
    std::vector<PairOutcome> out;
    for (const auto& [k, v] : halves)
        if (v.first && v.second) out.push_back(score_pair(*v.first, *v.second));
    return out;
}

RunSummary run_experiment1(const adapter::ModelHandle& h, const Experiment1Config& cfg,
                           const std::function<void(const std::string&)>& progress) {
    const auto& dir = cfg.results_dir;
    store::JsonlStore trials(dir / "prob_trials.jsonl");
    store::JsonlStore outcomes(dir / "pair_outcomes.jsonl");
    store::JsonlStore embeddings(dir / "embeddings.jsonl");
    store::JsonlStore failures(dir / "failures.jsonl");
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
        std::string version;
        MatD text;  // unit rows
        bool ok = false;
    };
    std::vector<Cell> cells;
    for (const auto& [wt, labels] : cfg.label_sets)
        for (const auto& p : cfg.prompts) cells.push_back({wt, &labels, &p, label_set_version(labels), {}, false});

    std::vector<std::unique_ptr<adapter::ModelHandle>> replicas;
    const int workers = std::max(1, cfg.workers);
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
            note_failure(failure(store::make_key({"prob-text", h.model_id(), c.prompt->id, c.version}), h.model_id(),
                                 "embed_text", e.what()));
            return;
        }
        if (c.prompt->id != cfg.embedding_prompt_id) return;
        for (std::size_t k = 0; k < c.labels->size(); ++k) {
            const auto& l = (*c.labels)[k];
            embeddings.append({{"key", store::make_key({"emb", h.model_id(), "text", c.version, l.text})},
                               {"model_id", h.model_id()},
                               {"kind", "text"},
                               {"prompt_id", c.prompt->id},
                               {"word_type", lexicon::to_string(l.word_type)},
                               {"id", l.text},
                               {"class", bk::to_string(l.shape_class)},
                               {"vector", as_floats(c.text.row(static_cast<Eigen::Index>(k)))}});
        }
    });

    util::parallel_for(cfg.images.size(), workers, [&](std::size_t i, int w) {
        const auto& img = cfg.images[i];
        const std::string emb_key = store::make_key({"emb", h.model_id(), "image", img.image_id});
        std::vector<const Cell*> todo;
        std::size_t done = 0;
        for (const auto& c : cells) {
            if (!c.ok) continue;
            if (trials.contains(trial_key(h.model_id(), c.prompt->id, c.version, img.image_id)))
                ++done;
            else
                todo.push_back(&c);
        }
        {
            std::lock_guard lock(summary_mutex);
            summary.skipped += done;
        }
        if (todo.empty() && embeddings.contains(emb_key)) return;
        VecD image_unit;
        try {
            image_unit = replicas[w]->embed_image({img.image}).row(0).transpose();
        } catch (const std::exception& e) {
            note_failure(failure(store::make_key({"prob-image", h.model_id(), img.image_id}), h.model_id(),
                                 "embed_image", e.what()));
            return;
        }
        embeddings.append({{"key", emb_key},
                           {"model_id", h.model_id()},
                           {"kind", "image"},
                           {"id", img.image_id},
                           {"pair_id", img.pair_id},
                           {"class", bk::to_string(img.image_class)},
                           {"vector", as_floats(image_unit.transpose())}});
        for (const Cell* c : todo) {
            const auto scored = adapter::probabilities_from_embeddings(image_unit, c->text, h.logit_scale());
            ProbTrial t = decide_trial(scored.probabilities, *c->labels);
            t.model_id = h.model_id();
            t.prompt_id = c->prompt->id;
            t.label_set_version = c->version;
            t.image_id = img.image_id;
            t.pair_id = img.pair_id;
            t.image_class = img.image_class;
            t.key = trial_key(t.model_id, t.prompt_id, t.label_set_version, t.image_id);
            if (cfg.keep_probs) t.all_probs = scored.probabilities;
            if (trials.append(to_json(t))) {
                std::lock_guard lock(summary_mutex);
                ++summary.computed;
            }
        }
        if (progress) progress(h.model_id() + ": " + img.image_id + " done");
    });

    std::vector<ProbTrial> mine;
    for (const auto& j : store::JsonlStore::read_all(trials.path()))
        if (j.at("model_id") == h.model_id()) mine.push_back(trial_from_json(j));
    for (const auto& p : pair_outcomes(mine)) outcomes.append(to_json(p));
    trials.canonicalize();
    outcomes.canonicalize();
    embeddings.canonicalize();
    return summary;
}

}  // namespace bk::prob
