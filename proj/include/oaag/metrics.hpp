#ifndef OAAG_METRICS_HPP
#define OAAG_METRICS_HPP

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "oaag/corpus.hpp"
#include "oaag/tensor.hpp"

namespace oaag {

struct GenEvalReport {
    double r1_f1 = 0.0;
    double rl_f1 = 0.0;
    double bleu1 = 0.0;
    double emb_sim = 0.0;
    double distinct1 = 0.0;
    double distinct2 = 0.0;
    double repetition1 = 0.0;  // 1 − distinct1
    double repetition2 = 0.0;  // 1 − distinct2
    int sample_count = 0;
};

struct ClsEvalReport {
    double macro_f1 = 0.0;
    double accuracy = 0.0;
    // rows are gold classes, columns predictions, in label order
    std::array<std::array<long, 3>, 3> confusion{};
};

// Unigram-overlap F1 with clipped counts. The reference must be non-empty;
// an empty hypothesis scores 0.
double rouge1_f1(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Longest-common-subsequence F1 over tokens.
double rougeL_f1(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Clipped unigram precision times the brevity penalty exp(min(0, 1 − |ref|/|hyp|)).
double bleu1(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Cosine between the mean word vectors of the two sides, mapped onto [0,1] via
// (cos+1)/2. Tokens outside the vocabulary use the UNK row. Empty input scores
// 0 and is counted in empty_warnings (or reported on stderr when absent).
double embedding_similarity(const std::vector<std::string>& hyp,
                            const std::vector<std::string>& ref, const Vocabulary& vocab,
                            const Tensor& embedding, long* empty_warnings = nullptr);

// Share of distinct n-grams pooled across the whole corpus; 0 when no answer
// is long enough to produce any.
double distinct_n(const std::vector<std::vector<std::string>>& corpus, int n);

GenEvalReport generation_report(const std::vector<std::vector<std::string>>& hyps,
                                const std::vector<std::vector<std::string>>& refs,
                                const Vocabulary& vocab, const Tensor& embedding,
                                long* empty_warnings = nullptr);

ClsEvalReport classification_metrics(const std::vector<Opinion>& pred,
                                     const std::vector<Opinion>& gold);

// Target-opinion accuracy: how often an external labeler reads the intended
// opinion out of a generated answer. Any answer → label function works; the
// caller decides what the labeler is and flags its provenance in reports.
using AnswerLabeler = std::function<Opinion(const std::vector<std::string>&)>;
double toa(const std::vector<std::vector<std::string>>& hyps,
           const std::vector<Opinion>& targets, const AnswerLabeler& labeler);

}  // namespace oaag

#endif
