#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mcan/errors.hpp"
#include "mcan/text.hpp"

using namespace mcan;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    auto path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream out(path);
    out << content;
    return path;
}

}  // namespace

TEST_CASE("tokenize") {
    CHECK(tokenize("Hello World") == std::vector<std::string>{"hello", "world"});
    CHECK(tokenize("1923.") == std::vector<std::string>{"1923", "."});
    CHECK(tokenize("").empty());
    CHECK(tokenize("don't stop") == std::vector<std::string>{"don", "'", "t", "stop"});
}

TEST_CASE("build_vocab ordering and min_count") {
    std::vector<std::vector<std::string>> corpus{{"a", "a", "b"}};
    auto vocab = build_vocab(corpus, 1);
    CHECK(vocab.id_of("a") == 2);
    CHECK(vocab.id_of("b") == 3);

    auto pruned = build_vocab(corpus, 2);
    CHECK(pruned.id_of("a") == 2);
    CHECK(pruned.id_of("b") == Vocabulary::kUnk);

    // ties resolve lexicographically
    auto tied = build_vocab({{"zeta", "alpha"}}, 1);
    CHECK(tied.id_of("alpha") == 2);
    CHECK(tied.id_of("zeta") == 3);

    auto again = build_vocab(corpus, 1);
    for (const auto& tok : {"a", "b"}) CHECK(vocab.id_of(tok) == again.id_of(tok));
}

TEST_CASE("load_embeddings") {
    auto vocab = build_vocab({{"cat", "dog", "bird"}}, 1);
    auto path = write_temp("mcan_emb_ok.txt", "cat 0.1 0.2\ndog -1 2\n");

    Rng rng(1);
    auto emb = load_embeddings(path, vocab, 2, rng);
    CHECK(emb.dim == 2);
    const auto& m = emb.matrix->values;
    const std::size_t cat = vocab.id_of("cat");
    CHECK(m[cat * 2] == 0.1);
    CHECK(m[cat * 2 + 1] == 0.2);

    // PAD row is zero, missing tokens land in [-0.01, 0.01]
    CHECK(m[Vocabulary::kPad * 2] == 0.0);
    CHECK(m[Vocabulary::kPad * 2 + 1] == 0.0);
    const std::size_t bird = vocab.id_of("bird");
    for (std::size_t j = 0; j < 2; ++j) {
        CHECK(std::abs(m[bird * 2 + j]) <= 0.01);
        CHECK(m[bird * 2 + j] != 0.0);
    }

    auto bad_arity = write_temp("mcan_emb_arity.txt", "cat 0.1 0.2\ndog 3\n");
    Rng r2(1);
    CHECK_THROWS_WITH_AS(load_embeddings(bad_arity, vocab, 2, r2),
                         doctest::Contains("line 2"), DataError);

    auto bad_num = write_temp("mcan_emb_num.txt", "cat 0.1 oops\n");
    Rng r3(1);
    CHECK_THROWS_WITH_AS(load_embeddings(bad_num, vocab, 2, r3), doctest::Contains("line 1"),
                         DataError);

    Rng r4(1);
    CHECK_THROWS_AS(load_embeddings(path, vocab, 5, r4), DataError);
    Rng r5(1);
    CHECK_THROWS_AS(load_embeddings("/nonexistent/emb.txt", vocab, 2, r5), DataError);
}

TEST_CASE("encode_batch pads to the batch maximum under the hard cap") {
    auto vocab = build_vocab({{"a", "b", "c"}}, 1);
    auto batch = encode_batch({{"a", "b"}, {"a", "b", "c"}}, vocab, 50);
    CHECK(batch[0].true_length == 2);
    CHECK(batch[1].true_length == 3);
    CHECK(batch[0].padded_length() == 3);
    CHECK(batch[1].padded_length() == 3);
    CHECK(batch[0].mask() == std::vector<std::uint8_t>{1, 1, 0});
    CHECK(batch[0].ids[2] == Vocabulary::kPad);

    std::vector<std::string> long_seq(60, "a");
    auto capped = encode_batch({long_seq}, vocab, 50);
    CHECK(capped[0].true_length == 50);
    CHECK(capped[0].padded_length() == 50);

    CHECK_THROWS_AS(encode_batch({{}, {}}, vocab, 50), DataError);
}

TEST_CASE("encode then decode round trips in-vocab tokens") {
    auto vocab = build_vocab({tokenize("the cat sat on the mat")}, 1);
    auto toks = tokenize("The cat sat ON the mat");
    auto batch = encode_batch({toks, {"the"}}, vocab, 50);
    CHECK(decode(batch[0], vocab) == toks);

    // padded length == min(cap, longest true length) for any batch
    for (std::size_t cap : {1u, 3u, 10u}) {
        auto b = encode_batch({toks, {"the"}}, vocab, cap);
        for (const auto& s : b) CHECK(s.padded_length() == std::min<std::size_t>(cap, toks.size()));
    }
}

TEST_CASE("load_pairs parses the TSV group format") {
    auto path = write_temp("mcan_pairs.tsv",
                           "q1\twho wrote it\tthe author wrote it\t1\n"
                           "q1\twho wrote it\tunrelated text\t0\n"
                           "q2\twhere is it\tover there\t1\n");
    auto pairs = load_pairs(path);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].query_id == "q1");
    CHECK(pairs[0].label == 1);
    CHECK(pairs[1].label == 0);
    CHECK(pairs[2].query_id == "q2");
    CHECK(pairs[2].line == 3);

    auto bad_fields = write_temp("mcan_pairs_bad1.tsv", "q1\tonly three\tfields\n");
    CHECK_THROWS_WITH_AS(load_pairs(bad_fields), doctest::Contains("line 1"), DataError);

    auto bad_label = write_temp("mcan_pairs_bad2.tsv", "q1\ta\tb\t2\n");
    CHECK_THROWS_WITH_AS(load_pairs(bad_label), doctest::Contains("label"), DataError);

    auto empty_text = write_temp("mcan_pairs_bad3.tsv", "q1\ta\t \t1\n");
    CHECK_THROWS_AS(load_pairs(empty_text), DataError);

    CHECK_THROWS_AS(load_pairs("/nonexistent/pairs.tsv"), DataError);
}
