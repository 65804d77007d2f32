#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "boubakiki/lexicon.hpp"

using namespace bk;
using namespace bk::lexicon;

namespace {

const std::filesystem::path kData = BOUBAKIKI_DATA_DIR;

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
    const auto p = std::filesystem::temp_directory_path() / ("bk_lexicon_" + name);
    std::ofstream(p) << body;
    return p;
}

const Label* find(const std::vector<Label>& labels, const std::string& text) {
    for (const auto& l : labels)
        if (l.text == text) return &l;
    return nullptr;
}

}  // namespace

TEST_CASE("original pairs") {
    const auto pairs = gen_original_pairs();
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].round_label.text == "bouba");
    CHECK(pairs[0].sharp_label.text == "kiki");
    CHECK(pairs[1].round_label.text == "maluma");
    CHECK(pairs[1].sharp_label.text == "takete");
    for (const auto& p : pairs) {
        CHECK(p.round_label.shape_class == ShapeClass::round);
        CHECK(p.sharp_label.shape_class == ShapeClass::sharp);
        CHECK(p.round_label.word_type == WordType::original);
        CHECK(p.sharp_label.word_type == WordType::original);
    }
    const auto flat = original_labels();
    REQUIRE(flat.size() == 4);
    CHECK(flat[0].text == "bouba");
    CHECK(flat[3].text == "takete");
}

TEST_CASE("adjectives from config") {
    const auto labels = load_adjectives(kData / "adjectives.default.json");
    CHECK(labels.size() == 20);
    CHECK(std::count_if(labels.begin(), labels.end(), [](auto& l) { return l.shape_class == ShapeClass::round; }) == 10);
    for (const auto& l : labels) CHECK(l.word_type == WordType::adjective);

    const auto minimal = load_adjectives(write_temp("min.json", R"({"round": ["curved"], "sharp": ["sharp"]})"));
    REQUIRE(minimal.size() == 2);

    CHECK_THROWS_AS(load_adjectives(write_temp("dup.json", R"({"round": ["curvy"], "sharp": ["curvy"]})")), InputError);
    CHECK_THROWS_AS(load_adjectives(write_temp("empty.json", R"({"round": [], "sharp": ["sharp"]})")), InputError);
    CHECK_THROWS(load_adjectives(kData / "does_not_exist.json"));
}

TEST_CASE("nielsen syllables") {
    const auto syl = gen_nielsen_syllables();
    CHECK(syl.size() == 36);
    std::map<SyllableCategory, int> count;
    for (const auto& s : syl) {
        REQUIRE(s.category.has_value());
        ++count[*s.category];
        CHECK(s.text == s.consonant + s.vowel);
    }
    for (auto c : {SyllableCategory::SR, SyllableCategory::PR, SyllableCategory::SNR, SyllableCategory::PNR})
        CHECK(count[c] == 9);
    auto cat_of = [&](const std::string& t) {
        for (const auto& s : syl)
            if (s.text == t) return *s.category;
        FAIL("missing syllable " << t);
        return SyllableCategory::SR;
    };
    CHECK(cat_of("loo") == SyllableCategory::SR);
    CHECK(cat_of("kee") == SyllableCategory::PNR);
    CHECK(cat_of("nah") == SyllableCategory::SR);
    CHECK(cat_of("puh") == SyllableCategory::PNR);
}

TEST_CASE("nielsen labels match an enumeration oracle") {
    // Independent enumeration: sonorant x rounded syllables pair with each other, plosive x non-rounded likewise.
    const std::vector<std::string> son = {"m", "n", "l"}, plo = {"t", "k", "p"};
    const std::vector<std::string> rnd = {"oo", "oh", "ah"}, nrnd = {"ee", "ay", "uh"};
    std::set<std::string> round_words, sharp_words;
    auto syllables = [](const auto& cs, const auto& vs) {
        std::vector<std::string> out;
        for (const auto& c : cs)
            for (const auto& v : vs) out.push_back(c + v);
        return out;
    };
    for (const auto& a : syllables(son, rnd))
        for (const auto& b : syllables(son, rnd)) round_words.insert(a + b);
    for (const auto& a : syllables(plo, nrnd))
        for (const auto& b : syllables(plo, nrnd)) sharp_words.insert(a + b);

    const auto labels = gen_nielsen_labels();
    CHECK(labels.size() == 162);
    std::set<std::string> got_round, got_sharp;
    for (const auto& l : labels) {
        CHECK(l.syllables.size() == 2);
        CHECK(l.word_type == WordType::nielsen);
        const auto want = l.shape_class == ShapeClass::round ? SyllableCategory::SR : SyllableCategory::PNR;
        for (const auto& s : l.syllables) CHECK(s.category == want);
        (l.shape_class == ShapeClass::round ? got_round : got_sharp).insert(l.text);
    }
    CHECK(got_round == round_words);
    CHECK(got_sharp == sharp_words);
    REQUIRE(find(labels, "loonah"));
    CHECK(find(labels, "loonah")->shape_class == ShapeClass::round);
    REQUIRE(find(labels, "keepuh"));
    CHECK(find(labels, "keepuh")->shape_class == ShapeClass::sharp);
}

TEST_CASE("alper labels") {
    const auto cfg = AlperClassConfig::defaults();
    const auto labels = gen_alper_labels(cfg);
    REQUIRE(!labels.empty());
    for (const auto& l : labels) {
        REQUIRE(l.syllables.size() == 3);
        CHECK(l.syllables[0].text == l.syllables[2].text);
        CHECK(l.text == l.syllables[0].text + l.syllables[1].text + l.syllables[2].text);
        for (const auto& s : l.syllables) {
            CHECK(cfg.consonants.at(s.consonant) == l.shape_class);
            const auto v = cfg.vowels.at(s.vowel);
            CHECK((!v || *v == l.shape_class));
        }
    }
    REQUIRE(find(labels, "kitaki"));
    CHECK(find(labels, "kitaki")->shape_class == ShapeClass::sharp);
    REQUIRE(find(labels, "bodubo"));
    CHECK(find(labels, "bodubo")->shape_class == ShapeClass::round);
    CHECK(find(labels, "kiduki") == nullptr);

    SUBCASE("vowel A assigned a class leaves 12 sharp syllables") {
        auto c = cfg;
        c.vowels["a"] = ShapeClass::round;
        const auto ls = gen_alper_labels(c);
        CHECK(std::count_if(ls.begin(), ls.end(), [](auto& l) { return l.shape_class == ShapeClass::sharp; }) == 144);
    }

    SUBCASE("swapping classes swaps every label and nothing else") {
        const auto swapped = gen_alper_labels(cfg.swapped());
        REQUIRE(swapped.size() == labels.size());
        std::map<std::string, ShapeClass> a, b;
        for (const auto& l : labels) a[l.text] = l.shape_class;
        for (const auto& l : swapped) b[l.text] = l.shape_class;
        for (const auto& [t, c] : a) {
            REQUIRE(b.count(t));
            CHECK(b[t] == opposite(c));
        }
    }

    SUBCASE("missing grapheme") {
        auto c = cfg;
        c.consonants.erase("x");
        CHECK_THROWS_AS(gen_alper_labels(c), InputError);
    }

    SUBCASE("shipped class file equals the defaults") {
        const auto from_file = gen_alper_labels(AlperClassConfig::load(kData / "alper_classes.default.json"));
        REQUIRE(from_file.size() == labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) CHECK(from_file[i].text == labels[i].text);
    }
}

TEST_CASE("generators are deterministic") {
    const auto a = gen_nielsen_labels(), b = gen_nielsen_labels();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].text == b[i].text);
    const auto c = gen_alper_labels(AlperClassConfig::defaults()), d = gen_alper_labels(AlperClassConfig::defaults());
    REQUIRE(c.size() == d.size());
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i].text == d[i].text);
}

TEST_CASE("prompts") {
    const auto prompts = load_prompts(kData / "prompts.default.json");
    REQUIRE(prompts.size() == 10);
    CHECK(std::count_if(prompts.begin(), prompts.end(), [](auto& p) { return p.word_role == WordRole::noun; }) == 5);
    CHECK(prompts[0].template_text == "The label for this image is <label>");

    const auto bouba = original_labels()[0];
    CHECK(render_prompt(prompts[0], bouba) == "The label for this image is bouba");
    const PromptTemplate bare{"x", "<label>", WordRole::noun, PromptOrigin::alper};
    CHECK(render_prompt(bare, "kiki") == "kiki");
    CHECK(render_prompt(bare, "KiKi") == "KiKi");
    for (const auto& p : prompts)
        for (const auto& l : gen_nielsen_labels())
            CHECK(render_prompt(p, l).find(kLabelSlot) == std::string::npos);

    CHECK_THROWS_AS(load_prompts(write_temp("two_slots.json",
                                            R"([{"id":"a","template":"<label> <label>","word_role":"noun","origin":"new"}])")),
                    InputError);
}

TEST_CASE("labels_for dispatch") {
    const LexiconSources src{kData / "adjectives.default.json", std::nullopt};
    CHECK(labels_for(WordType::original, src).size() == 4);
    CHECK(labels_for(WordType::adjective, src).size() == 20);
    CHECK(labels_for(WordType::nielsen, src).size() == 162);
    CHECK(labels_for(WordType::alper, src).size() == gen_alper_labels(AlperClassConfig::defaults()).size());
    CHECK(parse_word_type("alper") == WordType::alper);
    CHECK_THROWS(parse_word_type("klingon"));
}
