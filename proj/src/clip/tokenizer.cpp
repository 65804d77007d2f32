#include "boubakiki/clip/tokenizer.hpp"

#include <cctype>
#include <climits>
#include <cstdlib>
#include <sstream>

#include <zlib.h>

#include "boubakiki/types.hpp"

namespace bk::clip {

namespace {

std::string utf8(unsigned cp) {
    std::string s;
    if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        s.push_back(static_cast<char>(0xc0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
        s.push_back(static_cast<char>(0xe0 | (cp >> 12)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
    return s;
}

std::string gunzip(const std::filesystem::path& path) {
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw InputError("cannot open BPE vocabulary " + path.string());
    std::string out;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
    gzclose(f);
    if (n < 0) throw InputError("corrupt BPE vocabulary " + path.string());
    return out;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_letter(unsigned char c) { return std::isalpha(c) || c >= 0x80; }

std::string clean(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (unsigned char c : text) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

}  // namespace

BpeTokenizer::BpeTokenizer(const std::filesystem::path& merges_gz) {
    // Printable latin-1 bytes map to themselves; the rest shift above U+0100.
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xa1; b <= 0xac; ++b) direct[b] = true;
    for (int b = 0xae; b <= 0xff; ++b) direct[b] = true;
    std::vector<std::string> ordered_chars;
    unsigned shift = 0;
    std::array<unsigned, 256> cps{};
    for (int b = 0; b < 256; ++b) cps[b] = direct[b] ? b : 256 + shift++;
    for (int b = 0; b < 256; ++b) byte_encoder_[b] = utf8(cps[b]);
    // Vocabulary order follows the direct bytes first, then the shifted ones.
    for (int b = 0; b < 256; ++b)
        if (direct[b]) ordered_chars.push_back(byte_encoder_[b]);
    for (int b = 0; b < 256; ++b)
        if (!direct[b]) ordered_chars.push_back(byte_encoder_[b]);

    const std::string text = gunzip(merges_gz);
    std::istringstream lines(text);
    std::string line;
    std::getline(lines, line);  // version header
    constexpr int kMerges = 49152 - 256 - 2;
    std::vector<std::string> merges;
    merges.reserve(kMerges);
    while (static_cast<int>(merges.size()) < kMerges && std::getline(lines, line)) merges.push_back(line);
    if (static_cast<int>(merges.size()) != kMerges) throw InputError("BPE vocabulary has too few merges");

    int id = 0;
    for (const auto& c : ordered_chars) encoder_[c] = id++;
    for (const auto& c : ordered_chars) encoder_[c + "</w>"] = id++;
    for (int r = 0; r < kMerges; ++r) {
        const auto& m = merges[r];
        const auto sp = m.find(' ');
        if (sp == std::string::npos) throw InputError("malformed BPE merge: " + m);
        bpe_ranks_[m] = r;
        encoder_[m.substr(0, sp) + m.substr(sp + 1)] = id++;
    }
    sot_ = id++;
    eot_ = id++;
    encoder_["<|startoftext|>"] = sot_;
    encoder_["<|endoftext|>"] = eot_;
}

const BpeTokenizer& BpeTokenizer::shared() {
    static const BpeTokenizer instance([] {
        if (const char* env = std::getenv("BOUBAKIKI_BPE_VOCAB")) return std::filesystem::path(env);
        return std::filesystem::path(BOUBAKIKI_DATA_DIR) / "bpe_simple_vocab_16e6.txt.gz";
    }());
    return instance;
}

std::vector<std::string> BpeTokenizer::pre_tokenize(const std::string& s) const {
    std::vector<std::string> out;
    std::size_t i = 0;
    const std::size_t n = s.size();
    static constexpr std::string_view kSpecial[] = {"<|startoftext|>", "<|endoftext|>"};
    static constexpr std::string_view kContractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
    auto at = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
    while (i < n) {
        if (is_space(at(i))) {
            ++i;
            continue;
        }
        std::size_t len = 0;
        for (auto sp : kSpecial)
            if (s.compare(i, sp.size(), sp) == 0) len = sp.size();
        if (len == 0)
            for (auto c : kContractions)
                if (s.compare(i, c.size(), c) == 0) {
                    len = c.size();
                    break;
                }
        if (len == 0 && is_letter(at(i))) {
            std::size_t j = i;
            while (j < n && is_letter(at(j))) ++j;
            len = j - i;
        }
        if (len == 0 && is_digit(at(i))) len = 1;
        if (len == 0) {
            std::size_t j = i;
            while (j < n && !is_space(at(j)) && !is_letter(at(j)) && !is_digit(at(j))) ++j;
            len = j - i;
        }
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& token) const {
    // Split into symbols: one per source byte (each mapped to a UTF-8 char).
    std::vector<std::string> word;
    for (unsigned char b : token) word.push_back(byte_encoder_[b]);
    if (word.empty()) return word;
    word.back() += "</w>";

    while (word.size() > 1) {
        int best_rank = INT_MAX;
        std::size_t best = 0;
        for (std::size_t k = 0; k + 1 < word.size(); ++k) {
            auto it = bpe_ranks_.find(word[k] + " " + word[k + 1]);
            if (it != bpe_ranks_.end() && it->second < best_rank) {
                best_rank = it->second;
                best = k;
            }
        }
        if (best_rank == INT_MAX) break;
        const std::string first = word[best];
        const std::string second = word[best + 1];
        std::vector<std::string> merged;
        merged.reserve(word.size());
        for (std::size_t k = 0; k < word.size();) {
            if (k + 1 < word.size() && word[k] == first && word[k + 1] == second) {
                merged.push_back(first + second);
                k += 2;
            } else {
                merged.push_back(word[k]);
                ++k;
            }
        }
        word = std::move(merged);
    }
    return word;
}

std::vector<int> BpeTokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& piece : pre_tokenize(clean(text))) {
        if (piece == "<|startoftext|>" || piece == "<|endoftext|>") {
            ids.push_back(encoder_.at(piece));
            continue;
        }
        for (const auto& sym : bpe(piece)) {
            auto it = encoder_.find(sym);
            if (it == encoder_.end()) throw InputError("BPE symbol missing from vocabulary: " + sym);
            ids.push_back(it->second);
        }
    }
    return ids;
}

std::vector<int> BpeTokenizer::tokenize(std::string_view text, int context_length) const {
    std::vector<int> ids{sot_};
    const auto body = encode(text);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(eot_);
    if (static_cast<int>(ids.size()) > context_length)
        throw TokenLimitError("prompt needs " + std::to_string(ids.size()) + " tokens; the text encoder accepts " +
                              std::to_string(context_length) + ": \"" + std::string(text) + "\"");
    return ids;
}

}  // namespace bk::clip
