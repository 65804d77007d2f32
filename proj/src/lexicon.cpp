#include "boubakiki/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <json.hpp>

namespace bk {

ShapeClass parse_shape_class(std::string_view s) {
    if (s == "round" || s == "curved") return ShapeClass::round;
    if (s == "sharp" || s == "jagged") return ShapeClass::sharp;
    throw InputError("unknown shape class '" + std::string(s) + "'");
}

}  // namespace bk

namespace bk::lexicon {

using nlohmann::json;

std::string_view to_string(WordType t) {
    switch (t) {
        case WordType::original: return "original";
        case WordType::adjective: return "adjective";
        case WordType::nielsen: return "nielsen";
        case WordType::alper: return "alper";
    }
    return "?";
}

WordType parse_word_type(std::string_view s) {
    for (auto t : kAllWordTypes)
        if (to_string(t) == s) return t;
    throw InputError("unknown word type '" + std::string(s) + "'");
}

std::string_view to_string(SyllableCategory c) {
    switch (c) {
        case SyllableCategory::SR: return "S-R";
        case SyllableCategory::PR: return "P-R";
        case SyllableCategory::SNR: return "S-NR";
        case SyllableCategory::PNR: return "P-NR";
    }
    return "?";
}

std::string_view to_string(PhoneClass c) {
    switch (c) {
        case PhoneClass::sonorant: return "sonorant";
        case PhoneClass::plosive: return "plosive";
        case PhoneClass::rounded: return "rounded";
        case PhoneClass::non_rounded: return "non_rounded";
        case PhoneClass::sharp: return "sharp";
        case PhoneClass::round: return "round";
        case PhoneClass::neutral: return "neutral";
    }
    return "?";
}

std::string_view to_string(WordRole r) { return r == WordRole::noun ? "noun" : "adjective"; }

std::string_view to_string(PromptOrigin o) {
    switch (o) {
        case PromptOrigin::verhoef: return "verhoef";
        case PromptOrigin::alper: return "alper";
        case PromptOrigin::new_prompt: return "new";
    }
    return "?";
}

namespace {

Label make_plain(std::string text, WordType type, ShapeClass cls, std::string source) {
    return Label{std::move(text), type, cls, {}, std::move(source)};
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

struct NielsenConsonant {
    const char* text;
    PhoneClass cls;
};
struct NielsenVowel {
    const char* text;
    PhoneClass cls;
};

constexpr NielsenConsonant kNielsenConsonants[] = {
    {"m", PhoneClass::sonorant}, {"n", PhoneClass::sonorant}, {"l", PhoneClass::sonorant},
    {"t", PhoneClass::plosive},  {"k", PhoneClass::plosive},  {"p", PhoneClass::plosive},
};
constexpr NielsenVowel kNielsenVowels[] = {
    {"oo", PhoneClass::rounded},     {"oh", PhoneClass::rounded},     {"ah", PhoneClass::rounded},
    {"ee", PhoneClass::non_rounded}, {"ay", PhoneClass::non_rounded}, {"uh", PhoneClass::non_rounded},
};

SyllableCategory categorize(PhoneClass consonant, PhoneClass vowel) {
    const bool sonorant = consonant == PhoneClass::sonorant;
    const bool rounded = vowel == PhoneClass::rounded;
    if (sonorant) return rounded ? SyllableCategory::SR : SyllableCategory::SNR;
    return rounded ? SyllableCategory::PR : SyllableCategory::PNR;
}

PhoneClass to_phone(std::optional<ShapeClass> c) {
    if (!c) return PhoneClass::neutral;
    return *c == ShapeClass::round ? PhoneClass::round : PhoneClass::sharp;
}

}  // namespace

std::vector<LabelPair> gen_original_pairs() {
    return {
        {make_plain("bouba", WordType::original, ShapeClass::round, "original"),
         make_plain("kiki", WordType::original, ShapeClass::sharp, "original"), "bouba-kiki"},
        {make_plain("maluma", WordType::original, ShapeClass::round, "original"),
         make_plain("takete", WordType::original, ShapeClass::sharp, "original"), "maluma-takete"},
    };
}

std::vector<Label> original_labels() {
    std::vector<Label> out;
    for (auto& p : gen_original_pairs()) {
        out.push_back(p.round_label);
        out.push_back(p.sharp_label);
    }
    return out;
}

std::vector<Label> load_adjectives(const std::filesystem::path& config_path) {
    const json doc = read_json(config_path);
    if (!doc.is_object()) throw InputError(config_path.string() + ": expected an object of word groups");

    std::vector<Label> out;
    std::set<std::string> seen;
    for (const char* key : {"round", "sharp"}) {
        if (!doc.contains(key)) throw InputError(config_path.string() + ": missing group '" + key + "'");
        const auto& words = doc.at(key);
        if (!words.is_array() || words.empty())
            throw InputError(config_path.string() + ": group '" + key + "' has no entries");
        for (const auto& w : words) {
            std::string text = w.get<std::string>();
            std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
            if (!seen.insert(text).second)
                throw InputError(config_path.string() + ": duplicate word '" + text + "'");
            out.push_back(make_plain(text, WordType::adjective, parse_shape_class(key), "adjective"));
        }
    }
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const auto& k = it.key();
        if (k != "round" && k != "sharp" && !k.starts_with("_"))
            throw InputError(config_path.string() + ": unexpected group '" + k + "'");
    }
    return out;
}

std::vector<Syllable> gen_nielsen_syllables() {
    std::vector<Syllable> out;
    out.reserve(36);
    for (const auto& c : kNielsenConsonants) {
        for (const auto& v : kNielsenVowels) {
            out.push_back(Syllable{std::string(c.text) + v.text, c.text, v.text, c.cls, v.cls,
                                   categorize(c.cls, v.cls)});
        }
    }
    return out;
}

std::vector<Label> gen_nielsen_labels() {
    const auto syllables = gen_nielsen_syllables();
    std::vector<Label> out;
    for (const auto& first : syllables) {
        for (const auto& second : syllables) {
            if (first.category != second.category) continue;
            std::optional<ShapeClass> cls;
            if (first.category == SyllableCategory::SR) cls = ShapeClass::round;
            if (first.category == SyllableCategory::PNR) cls = ShapeClass::sharp;
            if (!cls) continue;
            out.push_back(Label{first.text + second.text, WordType::nielsen, *cls, {first, second}, "nielsen"});
        }
    }
    return out;
}

AlperClassConfig AlperClassConfig::defaults() {
    AlperClassConfig c;
    for (const char* g : {"p", "t", "k", "s", "h", "x"}) c.consonants[g] = ShapeClass::sharp;
    for (const char* g : {"b", "d", "g", "m", "n", "l"}) c.consonants[g] = ShapeClass::round;
    c.vowels["e"] = ShapeClass::sharp;
    c.vowels["i"] = ShapeClass::sharp;
    c.vowels["o"] = ShapeClass::round;
    c.vowels["u"] = ShapeClass::round;
    c.vowels["a"] = std::nullopt;
    return c;
}

AlperClassConfig AlperClassConfig::load(const std::filesystem::path& path) {
    const json doc = read_json(path);
    AlperClassConfig c;
    auto grapheme_class = [&](const json& group, const char* g) -> std::optional<ShapeClass> {
        if (!group.contains(g)) throw InputError(path.string() + ": no class assigned to grapheme '" + g + "'");
        const auto v = group.at(g).get<std::string>();
        if (v == "neutral") return std::nullopt;
        return parse_shape_class(v);
    };
    if (!doc.contains("consonants") || !doc.contains("vowels"))
        throw InputError(path.string() + ": expected 'consonants' and 'vowels' maps");
    for (const char* g : kAlperConsonants) {
        auto cls = grapheme_class(doc.at("consonants"), g);
        if (!cls) throw InputError(path.string() + ": consonant '" + g + "' cannot be neutral");
        c.consonants[g] = *cls;
    }
    for (const char* g : kAlperVowels) c.vowels[g] = grapheme_class(doc.at("vowels"), g);
    return c;
}

AlperClassConfig AlperClassConfig::swapped() const {
    AlperClassConfig s = *this;
    for (auto& [g, cls] : s.consonants) cls = opposite(cls);
    for (auto& [g, cls] : s.vowels)
        if (cls) cls = opposite(*cls);
    return s;
}

std::vector<Label> gen_alper_labels(const AlperClassConfig& config) {
    // A syllable belongs to its consonant's class unless the vowel carries the other class.
    // Neutral vowels (A by default) do not break purity, so "kitaki" is sharp.
    std::vector<std::pair<Syllable, ShapeClass>> pure;
    for (const char* c : kAlperConsonants) {
        auto cit = config.consonants.find(c);
        if (cit == config.consonants.end()) throw InputError(std::string("no class assigned to consonant '") + c + "'");
        for (const char* v : kAlperVowels) {
            auto vit = config.vowels.find(v);
            if (vit == config.vowels.end()) throw InputError(std::string("no class assigned to vowel '") + v + "'");
            if (vit->second && *vit->second != cit->second) continue;
            pure.emplace_back(Syllable{std::string(c) + v, c, v, to_phone(cit->second), to_phone(vit->second), {}},
                              cit->second);
        }
    }
    std::vector<Label> out;
    for (const auto& [first, cls1] : pure) {
        for (const auto& [second, cls2] : pure) {
            if (cls1 != cls2) continue;
            out.push_back(Label{first.text + second.text + first.text, WordType::alper, cls1, {first, second, first},
                                "alper"});
        }
    }
    return out;
}

std::vector<PromptTemplate> load_prompts(const std::filesystem::path& path) {
    const json doc = read_json(path);
    if (!doc.is_array()) throw InputError(path.string() + ": expected an array of prompt rows");
    std::vector<PromptTemplate> out;
    std::set<std::string> ids;
    for (const auto& row : doc) {
        PromptTemplate t;
        t.id = row.at("id").get<std::string>();
        t.template_text = row.at("template").get<std::string>();
        const auto role = row.at("word_role").get<std::string>();
        if (role == "noun") t.word_role = WordRole::noun;
        else if (role == "adjective") t.word_role = WordRole::adjective;
        else throw InputError(path.string() + ": bad word_role '" + role + "'");
        const auto origin = row.at("origin").get<std::string>();
        if (origin == "verhoef") t.origin = PromptOrigin::verhoef;
        else if (origin == "alper") t.origin = PromptOrigin::alper;
        else if (origin == "new") t.origin = PromptOrigin::new_prompt;
        else throw InputError(path.string() + ": bad origin '" + origin + "'");

        const auto first = t.template_text.find(kLabelSlot);
        if (first == std::string::npos || t.template_text.find(kLabelSlot, first + 1) != std::string::npos)
            throw InputError(path.string() + ": template '" + t.id + "' must contain exactly one <label> slot");
        if (!ids.insert(t.id).second) throw InputError(path.string() + ": duplicate prompt id '" + t.id + "'");
        out.push_back(std::move(t));
    }
    return out;
}

std::string render_prompt(const PromptTemplate& tmpl, std::string_view label_text) {
    std::string out = tmpl.template_text;
    const auto pos = out.find(kLabelSlot);
    if (pos != std::string::npos) out.replace(pos, kLabelSlot.size(), label_text);
    return out;
}

std::string render_prompt(const PromptTemplate& tmpl, const Label& label) { return render_prompt(tmpl, label.text); }

std::vector<Label> labels_for(WordType type, const LexiconSources& sources) {
    switch (type) {
        case WordType::original: return original_labels();
        case WordType::adjective: return load_adjectives(sources.adjectives_path);
        case WordType::nielsen: return gen_nielsen_labels();
        case WordType::alper:
            return gen_alper_labels(sources.alper_classes_path ? AlperClassConfig::load(*sources.alper_classes_path)
                                                               : AlperClassConfig::defaults());
    }
    return {};
}

}  // namespace bk::lexicon
