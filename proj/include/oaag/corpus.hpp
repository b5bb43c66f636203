#ifndef OAAG_CORPUS_HPP
#define OAAG_CORPUS_HPP

#include <string>
#include <unordered_map>
#include <vector>

namespace oaag {

// Special token ids occupy the four lowest slots of every vocabulary.
constexpr int kPadId = 0;
constexpr int kUnkId = 1;
constexpr int kSosId = 2;
constexpr int kEosId = 3;

enum class Opinion { positive = 0, negative = 1, neutral = 2 };

Opinion opinion_from_string(const std::string& s);
const std::string& opinion_to_string(Opinion o);

struct RawRecord {
    std::string question_text;
    std::string answer_text;
    Opinion opinion_label = Opinion::neutral;
    std::string product_id;
};

struct ReviewRecord {
    std::string product_id;
    std::string review_id;
    std::string text;
    int rating = 0;  // 1..5, 0 when the source has none
};

struct ReviewSnippet {
    std::vector<std::string> tokens;  // 1..max_len per snippet
    int rating = 0;                   // inherited from the review, 0 = absent
    std::string source_review_id;
};

class Vocabulary {
public:
    Vocabulary();  // specials only

    int id_of(const std::string& token) const;  // UNK when absent
    const std::string& token_of(int id) const;
    bool contains(const std::string& token) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }

    void append(const std::string& token);  // build_vocab / load only

    void save(const std::string& path) const;  // one token per line, specials implicit
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

struct EncodedReview {
    std::vector<int> ids;
    int rating = 0;
    bool is_pad = false;
};

struct QASample {
    std::vector<int> question_ids;
    std::vector<int> answer_ids;  // ends with EOS, length ≤ max_answer_len + 1
    std::vector<EncodedReview> reviews;  // exactly K entries
    Opinion label = Opinion::neutral;
    // Source tokens outside the vocabulary, in first-occurrence order; the
    // token at position i carries temporary id vocab.size() + i.
    std::vector<std::string> oov_tokens;
};

std::vector<std::string> tokenize(const std::string& text);

std::vector<ReviewSnippet> chunk_review(const std::vector<std::string>& tokens, int max_len = 50,
                                        int rating = 0, const std::string& review_id = "");

// Okapi scores for one product's snippet collection, in snippet order.
std::vector<double> bm25_scores(const std::vector<std::string>& question,
                                const std::vector<ReviewSnippet>& snippets, double k1 = 1.2,
                                double b = 0.75);

// Top-ranked snippets in descending score; ties keep earlier snippet order.
std::vector<ReviewSnippet> bm25_rank(const std::vector<std::string>& question,
                                     const std::vector<ReviewSnippet>& snippets, double k1 = 1.2,
                                     double b = 0.75, int top_k = 10);

// Frequency-ranked vocabulary (ties lexicographic) over flat token streams.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& token_streams,
                       int cap = 50000);

QASample encode_sample(const RawRecord& record, const std::vector<ReviewSnippet>& ranked,
                       const Vocabulary& vocab, int num_reviews = 10, int max_answer_len = 100);

// Maps an id back to text through the vocabulary plus a sample's OOV list.
const std::string& decode_id(int id, const Vocabulary& vocab,
                             const std::vector<std::string>& oov_tokens);

struct PrepareOptions {
    int num_reviews = 10;          // K
    int vocab_cap = 50000;
    int snippet_len = 50;
    int max_answer_len = 100;
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;
};

struct PreparedCorpus {
    std::vector<QASample> samples;
    Vocabulary vocab;
};

PreparedCorpus prepare_corpus(const std::vector<RawRecord>& qa,
                              const std::vector<ReviewRecord>& reviews,
                              const PrepareOptions& opt = {});

std::vector<RawRecord> load_qa_records(const std::string& path);
std::vector<ReviewRecord> load_review_records(const std::string& path);
void save_samples(const std::string& path, const std::vector<QASample>& samples);
std::vector<QASample> load_samples(const std::string& path);

}  // namespace oaag

#endif
