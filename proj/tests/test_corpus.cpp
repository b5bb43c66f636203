#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "oaag/corpus.hpp"

using namespace oaag;

namespace {

std::vector<std::string> toks(std::initializer_list<const char*> ts) {
    return std::vector<std::string>(ts.begin(), ts.end());
}

ReviewSnippet snippet(std::initializer_list<const char*> ts, int rating = 0) {
    ReviewSnippet s;
    s.tokens.assign(ts.begin(), ts.end());
    s.rating = rating;
    return s;
}

// Straight-line Okapi evaluation, one snippet at a time, used as the oracle
// against the batched production scorer.
std::vector<double> naive_bm25(const std::vector<std::string>& query,
                               const std::vector<ReviewSnippet>& snippets, double k1 = 1.2,
                               double b = 0.75) {
    const double n = static_cast<double>(snippets.size());
    double avgdl = 0.0;
    for (const auto& s : snippets) avgdl += static_cast<double>(s.tokens.size());
    avgdl /= n;
    std::vector<double> scores(snippets.size(), 0.0);
    for (std::size_t i = 0; i < snippets.size(); ++i) {
        for (const std::string& term : query) {
            double f = 0.0;
            for (const std::string& t : snippets[i].tokens)
                if (t == term) f += 1.0;
            if (f == 0.0) continue;
            double df = 0.0;
            for (const auto& s : snippets)
                for (const std::string& t : s.tokens)
                    if (t == term) {
                        df += 1.0;
                        break;
                    }
            const double idf = std::max(0.0, std::log((n - df + 0.5) / (df + 0.5)));
            const double dl = static_cast<double>(snippets[i].tokens.size());
            scores[i] += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl));
        }
    }
    return scores;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name, const std::string& content)
        : path("/tmp/oaag_corpus_" + name) {
        std::ofstream out(path);
        out << content;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("tokenize lowercases, splits punctuation, keeps internal hyphens") {
    CHECK(tokenize("").empty());
    CHECK(tokenize("Is it good?") == toks({"is", "it", "good", "?"}));
    CHECK(tokenize("Blu-ray PC.") == toks({"blu-ray", "pc", "."}));
    CHECK(tokenize("  spaced\t\nout  ") == toks({"spaced", "out"}));
    CHECK(tokenize("wow!!") == toks({"wow", "!", "!"}));
    CHECK(tokenize("e-mail, re-send") == toks({"e-mail", ",", "re-send"}));
    CHECK(tokenize("- leading, trailing-") == toks({"-", "leading", ",", "trailing", "-"}));
    CHECK(tokenize("it's") == toks({"it", "'", "s"}));
    CHECK(tokenize("3.5mm jack") == toks({"3", ".", "5mm", "jack"}));
}

TEST_CASE("chunk_review closes at the last sentence boundary in the window") {
    CHECK(chunk_review({}).empty());

    std::vector<std::string> short_review(30, "w");
    auto one = chunk_review(short_review, 50);
    REQUIRE(one.size() == 1);
    CHECK(one[0].tokens.size() == 30);

    // 120 tokens with sentence ends at positions 40 and 80 → three chunks of 40
    std::vector<std::string> long_review(120, "w");
    long_review[39] = ".";
    long_review[79] = ".";
    auto three = chunk_review(long_review, 50);
    REQUIRE(three.size() == 3);
    CHECK(three[0].tokens.size() == 40);
    CHECK(three[1].tokens.size() == 40);
    CHECK(three[2].tokens.size() == 40);
    CHECK(three[0].tokens[39] == ".");

    // no boundary anywhere → hard cuts at max_len
    std::vector<std::string> unbroken(120, "w");
    auto cuts = chunk_review(unbroken, 50);
    REQUIRE(cuts.size() == 3);
    CHECK(cuts[0].tokens.size() == 50);
    CHECK(cuts[1].tokens.size() == 50);
    CHECK(cuts[2].tokens.size() == 20);

    auto tiny = chunk_review({"a", ".", "b"}, 1);
    REQUIRE(tiny.size() == 3);
}

TEST_CASE("chunk_review concatenation reproduces the input for random reviews") {
    std::mt19937_64 rng(17);
    const std::vector<std::string> pool = {"good", "bad", "battery", ".", "!", "?", "the", "it"};
    for (int trial = 0; trial < 200; ++trial) {
        const int len = static_cast<int>(rng() % 130);
        std::vector<std::string> review;
        for (int i = 0; i < len; ++i) review.push_back(pool[rng() % pool.size()]);
        const int max_len = 1 + static_cast<int>(rng() % 60);
        auto chunks = chunk_review(review, max_len, 3, "r1");
        std::vector<std::string> glued;
        for (const auto& c : chunks) {
            CHECK(!c.tokens.empty());
            CHECK(c.tokens.size() <= static_cast<std::size_t>(max_len));
            CHECK(c.rating == 3);
            CHECK(c.source_review_id == "r1");
            glued.insert(glued.end(), c.tokens.begin(), c.tokens.end());
        }
        CHECK(glued == review);
    }
}

TEST_CASE("bm25 ranks an exact match first and preserves order on zero overlap") {
    std::vector<ReviewSnippet> snippets = {
        snippet({"screen", "brightness", "is", "fine"}),
        snippet({"battery", "lasts", "ten", "hours"}),
        snippet({"shipping", "was", "slow"}),
    };
    auto ranked = bm25_rank(toks({"battery", "lasts", "ten", "hours"}), snippets);
    REQUIRE(!ranked.empty());
    CHECK(ranked[0].tokens == snippets[1].tokens);

    auto untouched = bm25_rank(toks({"warranty"}), snippets, 1.2, 0.75, 10);
    REQUIRE(untouched.size() == 3);
    CHECK(untouched[0].tokens == snippets[0].tokens);
    CHECK(untouched[1].tokens == snippets[1].tokens);
    CHECK(untouched[2].tokens == snippets[2].tokens);
    for (double s : bm25_scores(toks({"warranty"}), snippets)) CHECK(s == 0.0);

    CHECK_THROWS_WITH_AS(bm25_rank({}, snippets), doctest::Contains("empty query"),
                         std::runtime_error);
}

TEST_CASE("bm25 toy corpus matches a hand evaluation of the Okapi formula") {
    std::vector<ReviewSnippet> snippets = {
        snippet({"great", "sound", "quality"}),
        snippet({"poor", "battery", "life"}),
        snippet({"screen", "size", "fine", "really"}),
    };
    auto scores = bm25_scores(toks({"battery", "life"}), snippets);
    // by hand: N=3, both terms only in snippet 2, df=1 → idf = ln(2.5/1.5);
    // |d|=3, avgdl=10/3 → length factor 1.2·(0.25 + 0.75·9/10) = 1.11;
    // per term: idf·2.2/(1 + 1.11), two terms total
    const double expected = 2.0 * std::log(2.5 / 1.5) * 2.2 / 2.11;
    CHECK(scores[0] == 0.0);
    CHECK(scores[1] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(scores[2] == 0.0);
}

TEST_CASE("bm25 agrees with a naive scorer on random corpora") {
    std::mt19937_64 rng(29);
    const std::vector<std::string> pool = {"a", "b", "c", "d", "e", "f", "g", "h"};
    for (int trial = 0; trial < 80; ++trial) {
        const std::size_t n = 1 + rng() % 20;
        std::vector<ReviewSnippet> snippets(n);
        for (auto& s : snippets) {
            const std::size_t len = 1 + rng() % 6;
            for (std::size_t i = 0; i < len; ++i) s.tokens.push_back(pool[rng() % pool.size()]);
        }
        std::vector<std::string> query;
        const std::size_t qlen = 1 + rng() % 3;
        for (std::size_t i = 0; i < qlen; ++i) query.push_back(pool[rng() % pool.size()]);

        const auto got = bm25_scores(query, snippets);
        const auto want = naive_bm25(query, snippets);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < n; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));

        // ranking equals brute-force stable sort of the oracle scores
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return want[x] > want[y]; });
        const auto ranked = bm25_rank(query, snippets, 1.2, 0.75, static_cast<int>(n));
        for (std::size_t i = 0; i < n; ++i) CHECK(ranked[i].tokens == snippets[order[i]].tokens);
    }
}

TEST_CASE("build_vocab ranks by frequency with lexicographic ties") {
    Vocabulary under_cap = build_vocab({{"a", "a", "a", "b"}}, 2);
    CHECK(under_cap.size() == 6);
    CHECK(under_cap.id_of("a") == 4);
    CHECK(under_cap.id_of("b") == 5);
    CHECK(under_cap.token_of(kPadId) == "<pad>");
    CHECK(under_cap.token_of(kEosId) == "<eos>");

    Vocabulary tie = build_vocab({{"b", "a"}}, 1);
    CHECK(tie.size() == 5);
    CHECK(tie.id_of("a") == 4);
    CHECK(tie.id_of("b") == kUnkId);

    Vocabulary none = build_vocab({{"a", "b"}}, 0);
    CHECK(none.size() == 4);
    CHECK(none.id_of("a") == kUnkId);

    CHECK_THROWS_WITH_AS(build_vocab({{}}, 5), doctest::Contains("empty corpus"),
                         std::runtime_error);

    // deterministic: same corpus, same ids, regardless of stream grouping
    Vocabulary v1 = build_vocab({{"x", "y"}, {"z", "y"}}, 10);
    Vocabulary v2 = build_vocab({{"y", "z", "x", "y"}}, 10);
    for (const char* t : {"x", "y", "z"}) CHECK(v1.id_of(t) == v2.id_of(t));
    CHECK(v1.id_of("y") == 4);  // most frequent first
}

TEST_CASE("encode_sample assigns temporary ids in first-occurrence order") {
    Vocabulary vocab = build_vocab({{"does", "the", "battery", "last", "yes", "it", "fine",
                                     "works", "well", "screen", "is"}},
                                   100);
    RawRecord rec;
    rec.question_text = "does the zephyr battery last";  // zephyr is OOV
    rec.answer_text = "yes the zephyr works";
    rec.opinion_label = Opinion::positive;
    rec.product_id = "p1";
    std::vector<ReviewSnippet> ranked = {
        snippet({"the", "screen", "is", "fine"}, 4),
        snippet({"zephyr", "battery", "works", "well", "quux"}, 2),
    };
    QASample s = encode_sample(rec, ranked, vocab, 3);

    // zephyr first appears in the question → first temporary id
    const int zephyr_id = vocab.size();
    const int quux_id = vocab.size() + 1;
    REQUIRE(s.oov_tokens == std::vector<std::string>{"zephyr", "quux"});
    CHECK(s.question_ids[2] == zephyr_id);
    CHECK(s.reviews[1].ids[0] == zephyr_id);  // same token, same id
    CHECK(s.reviews[1].ids[4] == quux_id);

    // answer carries the copy id for OOV tokens present in the sources
    CHECK(s.answer_ids[2] == zephyr_id);
    CHECK(s.answer_ids.back() == kEosId);

    // padding to K=3 adds a flagged pad snippet
    REQUIRE(s.reviews.size() == 3);
    CHECK(s.reviews[2].is_pad);
    CHECK(s.reviews[2].ids == std::vector<int>{kPadId});
    CHECK(!s.reviews[0].is_pad);
    CHECK(s.reviews[0].rating == 4);

    // decoding reproduces the source tokens
    CHECK(decode_id(s.question_ids[2], vocab, s.oov_tokens) == "zephyr");
    std::vector<std::string> q_back;
    for (int id : s.question_ids) q_back.push_back(decode_id(id, vocab, s.oov_tokens));
    CHECK(q_back == tokenize(rec.question_text));
    for (std::size_t k = 0; k < 2; ++k) {
        std::vector<std::string> r_back;
        for (int id : s.reviews[k].ids) r_back.push_back(decode_id(id, vocab, s.oov_tokens));
        CHECK(r_back == ranked[k].tokens);
    }
}

TEST_CASE("encode_sample maps unseen answer tokens to UNK and truncates long answers") {
    Vocabulary vocab = build_vocab({{"q", "a"}}, 10);
    RawRecord rec;
    rec.question_text = "q";
    std::string long_answer;
    for (int i = 0; i < 130; ++i) long_answer += "a ";
    long_answer += "novelword";
    rec.answer_text = long_answer;
    rec.product_id = "p";
    QASample s = encode_sample(rec, {snippet({"q"})}, vocab, 1, 100);
    CHECK(s.answer_ids.size() == 101);  // 100 tokens + EOS
    CHECK(s.answer_ids.back() == kEosId);

    rec.answer_text = "novelword";  // OOV and absent from all sources
    QASample s2 = encode_sample(rec, {snippet({"q"})}, vocab, 1, 100);
    CHECK(s2.answer_ids == std::vector<int>{kUnkId, kEosId});
    CHECK(s2.oov_tokens.empty());

    // every id stays inside vocab + extended vocab
    for (int id : s.question_ids) CHECK(id < vocab.size() + static_cast<int>(s.oov_tokens.size()));
}

TEST_CASE("vocabulary save and load round-trip") {
    Vocabulary v = build_vocab({{"beta", "alpha", "beta"}}, 10);
    v.save("/tmp/oaag_corpus_vocab.txt");
    Vocabulary loaded = Vocabulary::load("/tmp/oaag_corpus_vocab.txt");
    CHECK(loaded.size() == v.size());
    for (int id = 0; id < v.size(); ++id) CHECK(loaded.token_of(id) == v.token_of(id));
    std::remove("/tmp/oaag_corpus_vocab.txt");
}

TEST_CASE("qa and review files load with line-numbered errors") {
    TempFile qa("qa.jsonl",
                R"({"question":"Is it loud?","answer":"Not very.","label":"negative","product_id":"p1"})"
                "\n"
                R"({"question":"Any good?","answer":"Yes.","label":"positive","product_id":"p2"})"
                "\n");
    auto records = load_qa_records(qa.path);
    REQUIRE(records.size() == 2);
    CHECK(records[0].opinion_label == Opinion::negative);
    CHECK(records[1].product_id == "p2");

    TempFile bad("bad_qa.jsonl",
                 R"({"question":"ok","answer":"ok","label":"positive","product_id":"p"})"
                 "\n"
                 R"({"question":"ok","answer":"ok","label":"meh","product_id":"p"})"
                 "\n");
    CHECK_THROWS_WITH_AS(load_qa_records(bad.path), doctest::Contains(":2"), std::runtime_error);

    TempFile reviews("reviews.jsonl",
                     R"({"product_id":"p1","review_id":"r1","text":"Quiet fan.","rating":5})"
                     "\n"
                     R"({"product_id":"p1","review_id":"r2","text":"Loud.","rating":null})"
                     "\n");
    auto revs = load_review_records(reviews.path);
    REQUIRE(revs.size() == 2);
    CHECK(revs[0].rating == 5);
    CHECK(revs[1].rating == 0);

    TempFile bad_rating("bad_rating.jsonl",
                        R"({"product_id":"p","review_id":"r","text":"x","rating":9})"
                        "\n");
    CHECK_THROWS_WITH_AS(load_review_records(bad_rating.path), doctest::Contains("outside 1..5"),
                         std::runtime_error);

    TempFile not_json("not_json.jsonl", "{oops\n");
    CHECK_THROWS_WITH_AS(load_review_records(not_json.path), doctest::Contains("bad JSON"),
                         std::runtime_error);
}

TEST_CASE("prepare_corpus builds samples end to end and samples round-trip through disk") {
    std::vector<RawRecord> qa = {
        {"Does the battery last long?", "The battery lasts two days.", Opinion::positive, "p1"},
        {"Is the screen bright?", "Screen is dim indoors.", Opinion::negative, "p1"},
        {"How is the keyboard?", "It is mushy.", Opinion::neutral, "p2"},
    };
    std::vector<ReviewRecord> reviews = {
        {"p1", "r1", "Battery life is superb. Lasts me two days easily.", 5},
        {"p1", "r2", "The screen is too dim to use outside.", 2},
        {"p2", "r3", "Keyboard feels mushy but works.", 0},
    };
    PrepareOptions opt;
    opt.num_reviews = 3;
    opt.vocab_cap = 100;
    PreparedCorpus prepared = prepare_corpus(qa, reviews, opt);
    REQUIRE(prepared.samples.size() == 3);
    for (const QASample& s : prepared.samples) REQUIRE(s.reviews.size() == 3);
    CHECK(prepared.vocab.contains("battery"));
    CHECK(prepared.vocab.contains("mushy"));
    // p2 has a single short review → sample 3 gets pad snippets
    CHECK(prepared.samples[2].reviews[1].is_pad);
    // p1's battery question should rank the battery review's snippet first
    const auto& first = prepared.samples[0].reviews[0];
    CHECK(decode_id(first.ids[0], prepared.vocab, prepared.samples[0].oov_tokens) == "battery");

    save_samples("/tmp/oaag_corpus_samples.jsonl", prepared.samples);
    auto loaded = load_samples("/tmp/oaag_corpus_samples.jsonl");
    REQUIRE(loaded.size() == prepared.samples.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].question_ids == prepared.samples[i].question_ids);
        CHECK(loaded[i].answer_ids == prepared.samples[i].answer_ids);
        CHECK(loaded[i].label == prepared.samples[i].label);
        CHECK(loaded[i].oov_tokens == prepared.samples[i].oov_tokens);
        REQUIRE(loaded[i].reviews.size() == prepared.samples[i].reviews.size());
        for (std::size_t k = 0; k < loaded[i].reviews.size(); ++k) {
            CHECK(loaded[i].reviews[k].ids == prepared.samples[i].reviews[k].ids);
            CHECK(loaded[i].reviews[k].rating == prepared.samples[i].reviews[k].rating);
            CHECK(loaded[i].reviews[k].is_pad == prepared.samples[i].reviews[k].is_pad);
        }
    }
    std::remove("/tmp/oaag_corpus_samples.jsonl");

    std::vector<RawRecord> orphan = {{"Any?", "None.", Opinion::neutral, "missing"}};
    CHECK_THROWS_WITH_AS(prepare_corpus(orphan, reviews, opt),
                         doctest::Contains("no review snippets"), std::runtime_error);
}
