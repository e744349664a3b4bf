#include "textloc/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "textloc/errors.hpp"
#include "textloc/util.hpp"

namespace textloc {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count) {
    if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
    std::map<std::string, std::size_t> counts;  // ordered map fixes tie order
    for (const auto& tweet : corpus)
        for (const auto& token : tweet) ++counts[token];

    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [token, count] : counts)
        if (count >= min_count) kept.emplace_back(token, count);
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab vocab;
    vocab.min_count = min_count;
    vocab.index[Vocab::kPadToken] = Vocab::kPad;
    vocab.index[Vocab::kUnkToken] = Vocab::kUnk;
    int next = 2;
    for (const auto& [token, count] : kept) vocab.index[token] = next++;
    return vocab;
}

EncodedTweet encode(const std::vector<std::string>& tokens, const Vocab& vocab,
                    std::size_t length) {
    EncodedTweet out;
    out.ids.assign(length, Vocab::kPad);
    out.true_length = std::min(tokens.size(), length);
    for (std::size_t i = 0; i < out.true_length; ++i) out.ids[i] = vocab.lookup(tokens[i]);
    return out;
}

void save_vocab(const std::string& path, const Vocab& vocab, std::size_t length) {
    // token -> index entries sorted by index so the file is deterministic
    std::vector<std::pair<int, std::string>> rows;
    rows.reserve(vocab.index.size());
    for (const auto& [token, idx] : vocab.index) rows.emplace_back(idx, token);
    std::sort(rows.begin(), rows.end());

    std::ostringstream out;
    out << "L=" << length << "\tmin_count=" << vocab.min_count << "\n";
    for (const auto& [idx, token] : rows) out << token << "\t" << idx << "\n";
    write_file(path, out.str());
}

Vocab load_vocab(const std::string& path, std::size_t& length_out) {
    const std::string content = read_file(path);
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line)) throw DataError("vocab file empty: " + path);

    long long length = -1, min_count = -1;
    for (const std::string& field : split(line, '\t')) {
        const auto kv = split(field, '=');
        if (kv.size() != 2) throw DataError("vocab header malformed: " + path);
        long long value;
        if (!parse_long(kv[1], value)) throw DataError("vocab header malformed: " + path);
        if (kv[0] == "L") length = value;
        if (kv[0] == "min_count") min_count = value;
    }
    if (length < 1 || min_count < 1) throw DataError("vocab header missing L or min_count: " + path);

    Vocab vocab;
    vocab.min_count = static_cast<std::size_t>(min_count);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cols = split(line, '\t');
        long long idx;
        if (cols.size() != 2 || !parse_long(cols[1], idx) || idx < 0)
            throw DataError("vocab line " + std::to_string(line_no) + " malformed: " + path);
        if (!vocab.index.emplace(cols[0], static_cast<int>(idx)).second)
            throw DataError("vocab line " + std::to_string(line_no) + " duplicates token: " + path);
    }
    if (vocab.lookup(Vocab::kPadToken) != Vocab::kPad ||
        vocab.index.find(Vocab::kUnkToken) == vocab.index.end())
        throw DataError("vocab file missing reserved tokens: " + path);
    length_out = static_cast<std::size_t>(length);
    return vocab;
}

}  // namespace textloc
