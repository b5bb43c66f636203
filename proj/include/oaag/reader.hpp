#ifndef OAAG_READER_HPP
#define OAAG_READER_HPP

#include <random>
#include <utility>
#include <vector>

#include "oaag/model.hpp"
#include "oaag/tensor.hpp"

namespace oaag {

struct EncoderOutput {
    Tensor h;     // L × d_h, forward and backward halves concatenated per row
    Tensor mask;  // length L of 0/1; zero marks a padded snippet's rows
};

// Bidirectional recurrent encoding of one id sequence. Extended-vocabulary
// ids embed as UNK inside embedding_lookup.
EncoderOutput encode_sequence(const std::vector<int>& ids, const ModelParams& params,
                              double dropout_p = 0.0, bool train = false,
                              std::mt19937_64* rng = nullptr);

// Dual attention from one bilinear affinity: scores are row-wise maxima of
// tanh(H_q · U · H_rᵀ), softmaxed per side. Returns (α over question
// positions, α over review positions).
std::pair<Tensor, Tensor> coattend(const Tensor& h_q, const Tensor& h_r, const Tensor& u);

// Attentive representations: Π_q averages the α-scaled question over real
// (non-padded) reviews; Π_r stacks each review's α-scaled rows in rank order,
// padded snippets contributing zero rows.
std::pair<Tensor, Tensor> fuse_representations(const Tensor& h_q,
                                               const std::vector<Tensor>& h_reviews,
                                               const std::vector<Tensor>& alpha_q,
                                               const std::vector<Tensor>& alpha_r,
                                               const std::vector<bool>& is_pad);

// m_k = concat(H_qᵀ·α_q, H_rᵀ·α_r), length 2·d_h.
Tensor matching_vector(const Tensor& h_q, const Tensor& h_r, const Tensor& alpha_q,
                       const Tensor& alpha_r);

}  // namespace oaag

#endif
