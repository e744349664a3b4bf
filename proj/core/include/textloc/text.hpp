#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace textloc {

// Token index table with two reserved slots. Immutable after build_vocab, so
// concurrent reads are safe.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr const char* kPadToken = "<pad>";
    static constexpr const char* kUnkToken = "<unk>";

    std::unordered_map<std::string, int> index;  // includes <pad> and <unk>
    std::size_t min_count = 1;

    std::size_t size() const { return index.size(); }

    int lookup(const std::string& token) const {
        auto it = index.find(token);
        return it == index.end() ? kUnk : it->second;
    }
};

// Fixed-length index sequence. Positions at and beyond true_length hold PAD.
struct EncodedTweet {
    std::vector<int> ids;
    std::size_t true_length = 0;
};

// Lowercased whitespace-split tokens; runs of whitespace collapse.
std::vector<std::string> tokenize(std::string_view text);

// Frequency-ordered vocabulary (ties by lexicographic order) over tokens
// occurring at least min_count times. Index assignment starts after the
// reserved slots and is deterministic for a given corpus.
Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count);

// Total over any token sequence: unknown tokens map to UNK, sequences longer
// than length keep the prefix, shorter ones are padded.
EncodedTweet encode(const std::vector<std::string>& tokens, const Vocab& vocab,
                    std::size_t length);

// One "token<TAB>index" per line after a header line carrying the encoding
// length and min_count.
void save_vocab(const std::string& path, const Vocab& vocab, std::size_t length);
Vocab load_vocab(const std::string& path, std::size_t& length_out);

}  // namespace textloc
