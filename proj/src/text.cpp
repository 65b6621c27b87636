#include "mcan/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "mcan/errors.hpp"

namespace mcan {

Vocabulary::Vocabulary() {
    to_token_ = {"<pad>", "<unk>"};
    to_id_ = {{"<pad>", kPad}, {"<unk>", kUnk}};
}

std::size_t Vocabulary::add(const std::string& token) {
    auto it = to_id_.find(token);
    if (it != to_id_.end()) return it->second;
    const std::size_t id = to_token_.size();
    to_id_.emplace(token, id);
    to_token_.push_back(token);
    return id;
}

std::size_t Vocabulary::id_of(const std::string& token) const {
    auto it = to_id_.find(token);
    return it == to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(std::size_t id) const {
    if (id >= to_token_.size()) {
        throw std::invalid_argument("vocabulary: id " + std::to_string(id) + " out of range");
    }
    return to_token_[id];
}

std::vector<std::uint8_t> TokenSequence::mask() const {
    std::vector<std::uint8_t> m(ids.size(), 0);
    std::fill_n(m.begin(), true_length, 1);
    return m;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else if (c < 0x80 && std::ispunct(c)) {
            flush();
            tokens.emplace_back(1, static_cast<char>(c));
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return tokens;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                       std::size_t min_count) {
    std::map<std::string, std::size_t> freq;
    for (const auto& seq : corpus) {
        for (const auto& tok : seq) ++freq[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> admitted;
    for (const auto& [tok, n] : freq) {
        if (n >= min_count) admitted.emplace_back(tok, n);
    }
    std::stable_sort(admitted.begin(), admitted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [tok, n] : admitted) {
        (void)n;
        vocab.add(tok);
    }
    return vocab;
}

EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                               Rng& rng, bool trainable) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file: " + path);

    std::vector<std::vector<double>> rows;
    std::vector<std::uint8_t> filled(vocab.size(), 0);
    std::string line;
    std::size_t line_no = 0;
    std::vector<double> parsed;
    std::vector<std::pair<std::size_t, std::vector<double>>> matched;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string token;
        ls >> token;
        parsed.clear();
        std::string field;
        while (ls >> field) {
            try {
                std::size_t used = 0;
                parsed.push_back(std::stod(field, &used));
                if (used != field.size()) throw std::invalid_argument(field);
            } catch (const std::exception&) {
                throw DataError(path + " line " + std::to_string(line_no) +
                                ": non-numeric value '" + field + "'");
            }
        }
        if (dim == 0) dim = parsed.size();
        if (parsed.size() != dim) {
            throw DataError(path + " line " + std::to_string(line_no) + ": expected " +
                            std::to_string(dim) + " values, got " + std::to_string(parsed.size()));
        }
        if (!vocab.contains(token)) continue;
        const std::size_t id = vocab.id_of(token);
        if (id == Vocabulary::kUnk) continue;
        matched.emplace_back(id, parsed);
        filled[id] = 1;
    }
    if (dim == 0) throw DataError(path + ": no embedding rows found");

    std::vector<double> table(vocab.size() * dim, 0.0);
    for (const auto& [id, vals] : matched) {
        std::copy(vals.begin(), vals.end(), table.begin() + static_cast<std::ptrdiff_t>(id * dim));
    }
    // PAD stays zero; UNK and unmatched tokens get a small uniform init,
    // drawn in ascending id order so the stream does not depend on file order
    for (std::size_t id = Vocabulary::kUnk; id < vocab.size(); ++id) {
        if (filled[id]) continue;
        for (std::size_t j = 0; j < dim; ++j) {
            table[id * dim + j] = rng.uniform(-0.01, 0.01);
        }
    }
    EmbeddingTable emb;
    emb.dim = dim;
    emb.trainable = trainable;
    emb.matrix = Tensor::make({vocab.size(), dim}, std::move(table), trainable);
    return emb;
}

std::vector<TokenSequence> encode_batch(const std::vector<std::vector<std::string>>& sequences,
                                        const Vocabulary& vocab, std::size_t hard_cap) {
    if (hard_cap < 1) throw std::invalid_argument("encode_batch: hard_cap must be >= 1");
    std::size_t longest = 0;
    for (const auto& seq : sequences) longest = std::max(longest, std::min(seq.size(), hard_cap));
    if (longest == 0) throw DataError("encode_batch: batch contains only empty sequences");

    std::vector<TokenSequence> out;
    out.reserve(sequences.size());
    for (const auto& seq : sequences) {
        TokenSequence ts;
        ts.true_length = std::min(seq.size(), hard_cap);
        ts.ids.assign(longest, Vocabulary::kPad);
        for (std::size_t i = 0; i < ts.true_length; ++i) ts.ids[i] = vocab.id_of(seq[i]);
        out.push_back(std::move(ts));
    }
    return out;
}

std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
    std::vector<std::string> tokens;
    tokens.reserve(seq.true_length);
    for (std::size_t i = 0; i < seq.true_length; ++i) tokens.push_back(vocab.token_of(seq.ids[i]));
    return tokens;
}

std::vector<RankPair> load_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);
    std::vector<RankPair> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 4) {
            throw DataError(path + " line " + std::to_string(line_no) + ": expected 4 fields, got " +
                            std::to_string(fields.size()));
        }
        if (fields[3] != "0" && fields[3] != "1") {
            throw DataError(path + " line " + std::to_string(line_no) + ": label must be 0 or 1, got '" +
                            fields[3] + "'");
        }
        if (tokenize(fields[1]).empty() || tokenize(fields[2]).empty()) {
            throw DataError(path + " line " + std::to_string(line_no) + ": empty query or document text");
        }
        pairs.push_back(RankPair{fields[0], fields[1], fields[2], fields[3] == "1" ? 1 : 0, line_no});
    }
    if (pairs.empty()) throw DataError(path + ": no rows");
    return pairs;
}

}  // namespace mcan
