#include "oaag/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace oaag {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

const std::string kSpecials[4] = {"<pad>", "<unk>", "<sos>", "<eos>"};

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

char lower(unsigned char c) {
    return c >= 0x80 ? static_cast<char>(c) : static_cast<char>(std::tolower(c));
}

bool is_sentence_end(const std::string& tok) {
    return tok == "." || tok == "!" || tok == "?";
}

}  // namespace

Opinion opinion_from_string(const std::string& s) {
    if (s == "positive") return Opinion::positive;
    if (s == "negative") return Opinion::negative;
    if (s == "neutral") return Opinion::neutral;
    fail("unknown opinion label \"" + s + "\"");
}

const std::string& opinion_to_string(Opinion o) {
    static const std::string names[3] = {"positive", "negative", "neutral"};
    return names[static_cast<int>(o)];
}

Vocabulary::Vocabulary() {
    for (const std::string& s : kSpecials) append(s);
}

void Vocabulary::append(const std::string& token) {
    if (token_to_id_.count(token)) fail("vocabulary: duplicate token \"" + token + "\"");
    token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(token);
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || id >= size())
        fail("vocabulary: id " + std::to_string(id) + " outside [0, " + std::to_string(size()) +
             ")");
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path);
    for (int id = 4; id < size(); ++id) out << id_to_token_[static_cast<std::size_t>(id)] << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot read " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        v.append(line);
    }
    return v;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            flush();
            continue;
        }
        if (is_word_char(c)) {
            cur.push_back(lower(c));
            continue;
        }
        // a hyphen joining two word characters stays inside the token
        if (c == '-' && !cur.empty() && i + 1 < text.size() &&
            is_word_char(static_cast<unsigned char>(text[i + 1]))) {
            cur.push_back('-');
            continue;
        }
        flush();
        out.emplace_back(1, lower(c));
    }
    flush();
    return out;
}

std::vector<ReviewSnippet> chunk_review(const std::vector<std::string>& tokens, int max_len,
                                        int rating, const std::string& review_id) {
    if (max_len < 1) fail("chunk_review: max_len must be ≥ 1");
    std::vector<ReviewSnippet> out;
    std::size_t pos = 0;
    while (pos < tokens.size()) {
        std::size_t take = std::min<std::size_t>(max_len, tokens.size() - pos);
        if (pos + take < tokens.size()) {
            // close at the last sentence boundary inside the window, if any
            for (std::size_t j = take; j > 0; --j) {
                if (is_sentence_end(tokens[pos + j - 1])) {
                    take = j;
                    break;
                }
            }
        }
        ReviewSnippet s;
        s.tokens.assign(tokens.begin() + static_cast<std::ptrdiff_t>(pos),
                        tokens.begin() + static_cast<std::ptrdiff_t>(pos + take));
        s.rating = rating;
        s.source_review_id = review_id;
        out.push_back(std::move(s));
        pos += take;
    }
    return out;
}

std::vector<double> bm25_scores(const std::vector<std::string>& question,
                                const std::vector<ReviewSnippet>& snippets, double k1, double b) {
    if (question.empty()) fail("bm25: empty query");
    const std::size_t n = snippets.size();
    std::vector<double> scores(n, 0.0);
    if (n == 0) return scores;

    double avgdl = 0.0;
    std::vector<std::unordered_map<std::string, int>> counts(n);
    for (std::size_t i = 0; i < n; ++i) {
        avgdl += static_cast<double>(snippets[i].tokens.size());
        for (const std::string& t : snippets[i].tokens) ++counts[i][t];
    }
    avgdl /= static_cast<double>(n);

    std::unordered_map<std::string, int> df;
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& [tok, cnt] : counts[i]) ++df[tok];

    for (const std::string& term : question) {
        auto dit = df.find(term);
        if (dit == df.end()) continue;
        const double idf = std::max(
            0.0, std::log((static_cast<double>(n) - dit->second + 0.5) / (dit->second + 0.5)));
        if (idf == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) {
            auto cit = counts[i].find(term);
            if (cit == counts[i].end()) continue;
            const double f = cit->second;
            const double len_norm =
                1.0 - b + b * static_cast<double>(snippets[i].tokens.size()) / avgdl;
            scores[i] += idf * f * (k1 + 1.0) / (f + k1 * len_norm);
        }
    }
    return scores;
}

std::vector<ReviewSnippet> bm25_rank(const std::vector<std::string>& question,
                                     const std::vector<ReviewSnippet>& snippets, double k1,
                                     double b, int top_k) {
    if (top_k < 1) fail("bm25: top_k must be ≥ 1");
    const std::vector<double> scores = bm25_scores(question, snippets, k1, b);
    std::vector<std::size_t> order(snippets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t c) { return scores[a] > scores[c]; });
    const std::size_t keep = std::min<std::size_t>(top_k, snippets.size());
    std::vector<ReviewSnippet> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) out.push_back(snippets[order[i]]);
    return out;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& token_streams, int cap) {
    std::unordered_map<std::string, long> freq;
    for (const auto& stream : token_streams)
        for (const std::string& t : stream) ++freq[t];
    if (freq.empty()) fail("build_vocab: empty corpus");

    std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    const std::size_t keep = std::min<std::size_t>(std::max(cap, 0), ranked.size());
    for (std::size_t i = 0; i < keep; ++i) v.append(ranked[i].first);
    return v;
}

namespace {

// Maps one source token to an id, assigning the next temporary id on a first
// out-of-vocabulary occurrence.
int source_token_id(const std::string& tok, const Vocabulary& vocab,
                    std::vector<std::string>& oov_tokens,
                    std::unordered_map<std::string, int>& oov_ids) {
    if (vocab.contains(tok)) return vocab.id_of(tok);
    auto it = oov_ids.find(tok);
    if (it != oov_ids.end()) return it->second;
    const int id = vocab.size() + static_cast<int>(oov_tokens.size());
    oov_ids.emplace(tok, id);
    oov_tokens.push_back(tok);
    return id;
}

}  // namespace

QASample encode_sample(const RawRecord& record, const std::vector<ReviewSnippet>& ranked,
                       const Vocabulary& vocab, int num_reviews, int max_answer_len) {
    if (ranked.empty()) fail("encode_sample: no snippets for product " + record.product_id);
    QASample s;
    s.label = record.opinion_label;
    std::unordered_map<std::string, int> oov_ids;

    const std::vector<std::string> q_tokens = tokenize(record.question_text);
    if (q_tokens.empty()) fail("encode_sample: empty question for product " + record.product_id);
    for (const std::string& t : q_tokens)
        s.question_ids.push_back(source_token_id(t, vocab, s.oov_tokens, oov_ids));

    const std::size_t keep = std::min<std::size_t>(num_reviews, ranked.size());
    for (std::size_t k = 0; k < keep; ++k) {
        EncodedReview r;
        r.rating = ranked[k].rating;
        for (const std::string& t : ranked[k].tokens)
            r.ids.push_back(source_token_id(t, vocab, s.oov_tokens, oov_ids));
        s.reviews.push_back(std::move(r));
    }
    while (static_cast<int>(s.reviews.size()) < num_reviews) {
        EncodedReview pad;
        pad.ids = {kPadId};
        pad.is_pad = true;
        s.reviews.push_back(std::move(pad));
    }

    std::vector<std::string> a_tokens = tokenize(record.answer_text);
    if (a_tokens.empty()) fail("encode_sample: empty answer for product " + record.product_id);
    if (static_cast<int>(a_tokens.size()) > max_answer_len)
        a_tokens.resize(static_cast<std::size_t>(max_answer_len));
    for (const std::string& t : a_tokens) {
        if (vocab.contains(t)) {
            s.answer_ids.push_back(vocab.id_of(t));
        } else {
            // copies are only expressible for tokens present in the sources
            auto it = oov_ids.find(t);
            s.answer_ids.push_back(it == oov_ids.end() ? kUnkId : it->second);
        }
    }
    s.answer_ids.push_back(kEosId);
    return s;
}

const std::string& decode_id(int id, const Vocabulary& vocab,
                             const std::vector<std::string>& oov_tokens) {
    if (id < vocab.size()) return vocab.token_of(id);
    const int rel = id - vocab.size();
    if (rel >= static_cast<int>(oov_tokens.size()))
        fail("decode_id: id " + std::to_string(id) + " outside extended vocabulary of size " +
             std::to_string(vocab.size() + static_cast<int>(oov_tokens.size())));
    return oov_tokens[static_cast<std::size_t>(rel)];
}

PreparedCorpus prepare_corpus(const std::vector<RawRecord>& qa,
                              const std::vector<ReviewRecord>& reviews,
                              const PrepareOptions& opt) {
    // snippets grouped per product, in review-file order
    std::unordered_map<std::string, std::vector<ReviewSnippet>> by_product;
    for (const ReviewRecord& r : reviews) {
        std::vector<ReviewSnippet> chunks =
            chunk_review(tokenize(r.text), opt.snippet_len, r.rating, r.review_id);
        auto& dst = by_product[r.product_id];
        std::move(chunks.begin(), chunks.end(), std::back_inserter(dst));
    }

    std::vector<std::vector<ReviewSnippet>> ranked_per_record;
    ranked_per_record.reserve(qa.size());
    std::vector<std::vector<std::string>> vocab_streams;
    for (const RawRecord& rec : qa) {
        auto it = by_product.find(rec.product_id);
        if (it == by_product.end() || it->second.empty())
            fail("prepare: no review snippets for product " + rec.product_id);
        std::vector<std::string> q_tokens = tokenize(rec.question_text);
        if (q_tokens.empty()) fail("prepare: empty question for product " + rec.product_id);
        if (tokenize(rec.answer_text).empty())
            fail("prepare: empty answer for product " + rec.product_id);
        std::vector<ReviewSnippet> ranked =
            bm25_rank(q_tokens, it->second, opt.bm25_k1, opt.bm25_b, opt.num_reviews);
        vocab_streams.push_back(std::move(q_tokens));
        vocab_streams.push_back(tokenize(rec.answer_text));
        for (const ReviewSnippet& snip : ranked) vocab_streams.push_back(snip.tokens);
        ranked_per_record.push_back(std::move(ranked));
    }

    PreparedCorpus out;
    out.vocab = build_vocab(vocab_streams, opt.vocab_cap);
    for (std::size_t i = 0; i < qa.size(); ++i)
        out.samples.push_back(encode_sample(qa[i], ranked_per_record[i], out.vocab,
                                            opt.num_reviews, opt.max_answer_len));
    return out;
}

namespace {

json parse_line(const std::string& line, const std::string& path, long lineno) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        fail(path + ":" + std::to_string(lineno) + ": bad JSON (" + e.what() + ")");
    }
}

template <class T>
T field(const json& j, const char* name, const std::string& path, long lineno) {
    if (!j.contains(name))
        fail(path + ":" + std::to_string(lineno) + ": missing field \"" + name + "\"");
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        fail(path + ":" + std::to_string(lineno) + ": field \"" + name + "\" has the wrong type");
    }
}

}  // namespace

std::vector<RawRecord> load_qa_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot read " + path);
    std::vector<RawRecord> out;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const json j = parse_line(line, path, lineno);
        RawRecord r;
        r.question_text = field<std::string>(j, "question", path, lineno);
        r.answer_text = field<std::string>(j, "answer", path, lineno);
        r.product_id = field<std::string>(j, "product_id", path, lineno);
        try {
            r.opinion_label = opinion_from_string(field<std::string>(j, "label", path, lineno));
        } catch (const std::runtime_error& e) {
            fail(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ReviewRecord> load_review_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot read " + path);
    std::vector<ReviewRecord> out;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const json j = parse_line(line, path, lineno);
        ReviewRecord r;
        r.product_id = field<std::string>(j, "product_id", path, lineno);
        r.review_id = field<std::string>(j, "review_id", path, lineno);
        r.text = field<std::string>(j, "text", path, lineno);
        if (j.contains("rating") && !j.at("rating").is_null()) {
            r.rating = field<int>(j, "rating", path, lineno);
            if (r.rating < 1 || r.rating > 5)
                fail(path + ":" + std::to_string(lineno) + ": rating " +
                     std::to_string(r.rating) + " outside 1..5");
        }
        out.push_back(std::move(r));
    }
    return out;
}

void save_samples(const std::string& path, const std::vector<QASample>& samples) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path);
    for (const QASample& s : samples) {
        json reviews = json::array();
        for (const EncodedReview& r : s.reviews)
            reviews.push_back({{"ids", r.ids}, {"rating", r.rating}, {"is_pad", r.is_pad}});
        const json j = {{"question_ids", s.question_ids},
                        {"answer_ids", s.answer_ids},
                        {"reviews", reviews},
                        {"label", opinion_to_string(s.label)},
                        {"oov_tokens", s.oov_tokens}};
        out << j.dump() << "\n";
    }
}

std::vector<QASample> load_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot read " + path);
    std::vector<QASample> out;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const json j = parse_line(line, path, lineno);
        QASample s;
        s.question_ids = field<std::vector<int>>(j, "question_ids", path, lineno);
        s.answer_ids = field<std::vector<int>>(j, "answer_ids", path, lineno);
        s.label = opinion_from_string(field<std::string>(j, "label", path, lineno));
        s.oov_tokens = field<std::vector<std::string>>(j, "oov_tokens", path, lineno);
        if (!j.contains("reviews") || !j.at("reviews").is_array())
            fail(path + ":" + std::to_string(lineno) + ": missing field \"reviews\"");
        for (const json& rj : j.at("reviews")) {
            EncodedReview r;
            r.ids = field<std::vector<int>>(rj, "ids", path, lineno);
            r.rating = field<int>(rj, "rating", path, lineno);
            r.is_pad = field<bool>(rj, "is_pad", path, lineno);
            s.reviews.push_back(std::move(r));
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace oaag
