#include "oaag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace oaag {

namespace {

std::unordered_map<std::string, int> counts(const std::vector<std::string>& tokens) {
    std::unordered_map<std::string, int> c;
    for (const std::string& t : tokens) ++c[t];
    return c;
}

int clipped_overlap(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    const auto ref_counts = counts(ref);
    auto hyp_counts = counts(hyp);
    int overlap = 0;
    for (const auto& [token, n] : hyp_counts) {
        auto it = ref_counts.find(token);
        if (it != ref_counts.end()) overlap += std::min(n, it->second);
    }
    return overlap;
}

double f1_of(double p, double r) {
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                          : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

std::vector<double> mean_vector(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                                const Tensor& embedding) {
    const int dim = embedding.dim(1);
    std::vector<double> mean(static_cast<std::size_t>(dim), 0.0);
    for (const std::string& t : tokens) {
        const int id = vocab.id_of(t);  // UNK fallback for unknown words
        for (int d = 0; d < dim; ++d)
            mean[static_cast<std::size_t>(d)] += embedding.at({id, d});
    }
    for (double& v : mean) v /= static_cast<double>(tokens.size());
    return mean;
}

}  // namespace

double rouge1_f1(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    if (ref.empty()) throw std::runtime_error("rouge1_f1: empty reference");
    if (hyp.empty()) return 0.0;
    const int overlap = clipped_overlap(hyp, ref);
    const double p = static_cast<double>(overlap) / static_cast<double>(hyp.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return f1_of(p, r);
}

double rougeL_f1(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    if (ref.empty()) throw std::runtime_error("rougeL_f1: empty reference");
    if (hyp.empty()) return 0.0;
    const int lcs = lcs_length(hyp, ref);
    const double p = static_cast<double>(lcs) / static_cast<double>(hyp.size());
    const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
    return f1_of(p, r);
}

double bleu1(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    if (hyp.empty()) return 0.0;
    const double precision =
        static_cast<double>(clipped_overlap(hyp, ref)) / static_cast<double>(hyp.size());
    const double ratio = static_cast<double>(ref.size()) / static_cast<double>(hyp.size());
    const double bp = std::exp(std::min(0.0, 1.0 - ratio));
    return precision * bp;
}

double embedding_similarity(const std::vector<std::string>& hyp,
                            const std::vector<std::string>& ref, const Vocabulary& vocab,
                            const Tensor& embedding, long* empty_warnings) {
    if (hyp.empty() || ref.empty()) {
        if (empty_warnings)
            ++*empty_warnings;
        else
            std::cerr << "embedding_similarity: empty side scored 0\n";
        return 0.0;
    }
    const std::vector<double> a = mean_vector(hyp, vocab, embedding);
    const std::vector<double> b = mean_vector(ref, vocab, embedding);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    // a zero mean vector has no direction; treat it as orthogonal
    const double cos =
        na == 0.0 || nb == 0.0 ? 0.0 : dot / (std::sqrt(na) * std::sqrt(nb));
    return (std::clamp(cos, -1.0, 1.0) + 1.0) / 2.0;
}

double distinct_n(const std::vector<std::vector<std::string>>& corpus, int n) {
    if (n < 1) throw std::runtime_error("distinct_n: n must be at least 1");
    std::unordered_set<std::string> unique;
    long total = 0;
    for (const std::vector<std::string>& answer : corpus) {
        if (static_cast<int>(answer.size()) < n) continue;
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= answer.size(); ++i) {
            std::string gram;
            for (int k = 0; k < n; ++k) {
                gram += answer[i + static_cast<std::size_t>(k)];
                gram += '\x1f';  // unit separator keeps "ab c" apart from "a bc"
            }
            unique.insert(std::move(gram));
            ++total;
        }
    }
    if (total == 0) return 0.0;
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

GenEvalReport generation_report(const std::vector<std::vector<std::string>>& hyps,
                                const std::vector<std::vector<std::string>>& refs,
                                const Vocabulary& vocab, const Tensor& embedding,
                                long* empty_warnings) {
    if (hyps.empty()) throw std::runtime_error("generation_report: empty corpus");
    if (hyps.size() != refs.size())
        throw std::runtime_error("generation_report: hypothesis/reference count mismatch");

    GenEvalReport rep;
    rep.sample_count = static_cast<int>(hyps.size());
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        rep.r1_f1 += rouge1_f1(hyps[i], refs[i]);
        rep.rl_f1 += rougeL_f1(hyps[i], refs[i]);
        rep.bleu1 += bleu1(hyps[i], refs[i]);
        rep.emb_sim += embedding_similarity(hyps[i], refs[i], vocab, embedding, empty_warnings);
    }
    const double n = static_cast<double>(rep.sample_count);
    rep.r1_f1 /= n;
    rep.rl_f1 /= n;
    rep.bleu1 /= n;
    rep.emb_sim /= n;
    rep.distinct1 = distinct_n(hyps, 1);
    rep.distinct2 = distinct_n(hyps, 2);
    rep.repetition1 = 1.0 - rep.distinct1;
    rep.repetition2 = 1.0 - rep.distinct2;
    return rep;
}

ClsEvalReport classification_metrics(const std::vector<Opinion>& pred,
                                     const std::vector<Opinion>& gold) {
    if (pred.empty()) throw std::runtime_error("classification_metrics: empty input");
    if (pred.size() != gold.size())
        throw std::runtime_error("classification_metrics: length mismatch");

    ClsEvalReport rep;
    long correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto g = static_cast<std::size_t>(gold[i]);
        const auto p = static_cast<std::size_t>(pred[i]);
        ++rep.confusion[g][p];
        if (g == p) ++correct;
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());

    double f1_sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
        long gold_count = 0, pred_count = 0;
        for (std::size_t j = 0; j < 3; ++j) {
            gold_count += rep.confusion[k][j];
            pred_count += rep.confusion[j][k];
        }
        const long hit = rep.confusion[k][k];
        const double precision =
            pred_count == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred_count);
        const double recall =
            gold_count == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(gold_count);
        f1_sum += f1_of(precision, recall);
    }
    rep.macro_f1 = f1_sum / 3.0;
    return rep;
}

double toa(const std::vector<std::vector<std::string>>& hyps,
           const std::vector<Opinion>& targets, const AnswerLabeler& labeler) {
    if (hyps.empty()) throw std::runtime_error("toa: empty input");
    if (hyps.size() != targets.size()) throw std::runtime_error("toa: length mismatch");
    if (!labeler) throw std::runtime_error("toa: missing labeler");
    long hit = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i)
        if (labeler(hyps[i]) == targets[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(hyps.size());
}

}  // namespace oaag
