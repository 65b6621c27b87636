#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcan/rng.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

// Token ids 0 and 1 are reserved; corpus tokens start at 2.
class Vocabulary {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kUnk = 1;

    Vocabulary();

    std::size_t add(const std::string& token);
    std::size_t id_of(const std::string& token) const;  // kUnk when absent
    const std::string& token_of(std::size_t id) const;
    bool contains(const std::string& token) const { return to_id_.count(token) > 0; }
    std::size_t size() const { return to_token_.size(); }

private:
    std::unordered_map<std::string, std::size_t> to_id_;
    std::vector<std::string> to_token_;
};

struct TokenSequence {
    std::vector<std::size_t> ids;  // length == padded length, tail is PAD
    std::size_t true_length = 0;

    std::size_t padded_length() const { return ids.size(); }
    std::vector<std::uint8_t> mask() const;
};

// |V| x d matrix of word vectors. Frozen by default; when trainable the
// matrix participates in gradient updates like any other parameter.
struct EmbeddingTable {
    TensorPtr matrix;
    std::size_t dim = 0;
    bool trainable = false;
};

// Lowercases and splits on whitespace; punctuation becomes standalone tokens.
std::vector<std::string> tokenize(const std::string& text);

// Ids in descending-frequency then lexicographic order, starting at 2.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                       std::size_t min_count = 1);

// Reads a "token v1 .. vd" per line text file. Vocab tokens missing from the
// file (and UNK) are drawn uniform in [-0.01, 0.01]; the PAD row is zero.
// dim == 0 infers the width from the first line.
EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                               Rng& rng, bool trainable = false);

// Truncates each sequence to hard_cap, pads to the batch-wise maximum.
std::vector<TokenSequence> encode_batch(const std::vector<std::vector<std::string>>& sequences,
                                        const Vocabulary& vocab, std::size_t hard_cap);

std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab);

// One labeled candidate row of the TSV dataset format
// ("query_id<TAB>query<TAB>doc<TAB>label").
struct RankPair {
    std::string query_id;
    std::string query_text;
    std::string doc_text;
    int label = 0;
    std::size_t line = 0;
};

std::vector<RankPair> load_pairs(const std::string& path);

}  // namespace mcan
