#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bk::clip {

class TokenLimitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Byte-level BPE tokenizer compatible with the CLIP text towers (49408-entry vocabulary).
//
// Text is lower-cased and whitespace-collapsed before splitting. The Unicode-aware
// pre-tokenizer treats every non-ASCII code point as a letter; prompts in this
// project are ASCII, where the behaviour is exact.
class BpeTokenizer {
public:
    explicit BpeTokenizer(const std::filesystem::path& merges_gz);

    // Shared instance backed by the bundled vocabulary (or $BOUBAKIKI_BPE_VOCAB).
    static const BpeTokenizer& shared();

    std::vector<int> encode(std::string_view text) const;

    // Start/end markers added; throws TokenLimitError when the result exceeds context_length.
    std::vector<int> tokenize(std::string_view text, int context_length = 77) const;

    int start_token() const { return sot_; }
    int end_token() const { return eot_; }
    std::size_t vocab_size() const { return encoder_.size(); }

private:
    std::vector<std::string> pre_tokenize(const std::string& cleaned) const;
    std::vector<std::string> bpe(const std::string& token) const;

    std::array<std::string, 256> byte_encoder_;
    std::unordered_map<std::string, int> encoder_;
    std::unordered_map<std::string, int> bpe_ranks_;
    int sot_ = 0;
    int eot_ = 0;
};

}  // namespace bk::clip
