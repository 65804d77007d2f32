#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "boubakiki/types.hpp"

namespace bk::lexicon {

enum class WordType { original, adjective, nielsen, alper };

std::string_view to_string(WordType t);
WordType parse_word_type(std::string_view s);
inline constexpr WordType kAllWordTypes[] = {WordType::original, WordType::adjective, WordType::nielsen,
                                             WordType::alper};

// Nielsen-style syllable categories: sonorant/plosive consonant x rounded/non-rounded vowel.
enum class SyllableCategory { SR, PR, SNR, PNR };

std::string_view to_string(SyllableCategory c);

// Phonetic class of a grapheme. Nielsen inventories use {sonorant, plosive} and
// {rounded, non_rounded}; Alper inventories use {sharp, round, neutral}.
enum class PhoneClass { sonorant, plosive, rounded, non_rounded, sharp, round, neutral };

std::string_view to_string(PhoneClass c);

struct Syllable {
    std::string text;
    std::string consonant;
    std::string vowel;
    PhoneClass consonant_class;
    PhoneClass vowel_class;
    std::optional<SyllableCategory> category;  // Nielsen syllables only

    bool operator==(const Syllable& o) const { return text == o.text; }
};

struct Label {
    std::string text;
    WordType word_type;
    ShapeClass shape_class;
    std::vector<Syllable> syllables;
    std::string source_id;
};

struct LabelPair {
    Label round_label;
    Label sharp_label;
    std::string pair_name;
};

enum class WordRole { noun, adjective };
enum class PromptOrigin { verhoef, alper, new_prompt };

std::string_view to_string(WordRole r);
std::string_view to_string(PromptOrigin o);

struct PromptTemplate {
    std::string id;
    std::string template_text;
    WordRole word_role;
    PromptOrigin origin;
};

inline constexpr std::string_view kLabelSlot = "<label>";

std::vector<LabelPair> gen_original_pairs();

// Flattened original labels in pair order: bouba, kiki, maluma, takete.
std::vector<Label> original_labels();

// Reads {round: [...], sharp: [...]}; keys starting with '_' are ignored.
std::vector<Label> load_adjectives(const std::filesystem::path& config_path);

std::vector<Syllable> gen_nielsen_syllables();
std::vector<Label> gen_nielsen_labels();

// Grapheme -> class assignment for Alper-style pseudowords.
struct AlperClassConfig {
    std::map<std::string, ShapeClass> consonants;
    std::map<std::string, std::optional<ShapeClass>> vowels;  // nullopt = neutral

    static AlperClassConfig defaults();
    static AlperClassConfig load(const std::filesystem::path& path);

    // Sharp and round assignments exchanged; neutral stays neutral.
    AlperClassConfig swapped() const;
};

inline constexpr const char* kAlperConsonants[] = {"p", "t", "k", "s", "h", "x", "b", "d", "g", "m", "n", "l"};
inline constexpr const char* kAlperVowels[] = {"e", "i", "o", "u", "a"};

// Words syl1 + syl2 + syl1 with both syllables in one class. A syllable takes its consonant's
// class; a vowel of the other class makes it mixed, a neutral vowel does not.
std::vector<Label> gen_alper_labels(const AlperClassConfig& config);

std::vector<PromptTemplate> load_prompts(const std::filesystem::path& path);
std::string render_prompt(const PromptTemplate& tmpl, const Label& label);
std::string render_prompt(const PromptTemplate& tmpl, std::string_view label_text);

// Labels for one word type; adjectives and Alper words come from config files.
struct LexiconSources {
    std::filesystem::path adjectives_path;
    std::optional<std::filesystem::path> alper_classes_path;
};
std::vector<Label> labels_for(WordType type, const LexiconSources& sources);

}  // namespace bk::lexicon
