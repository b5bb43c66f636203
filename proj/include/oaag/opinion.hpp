#ifndef OAAG_OPINION_HPP
#define OAAG_OPINION_HPP

#include <utility>
#include <vector>

#include "oaag/model.hpp"
#include "oaag/tensor.hpp"

namespace oaag {

// Length-5 indicator of a 1..5 star rating; a missing rating (0) maps to the
// zero vector.
Tensor rating_one_hot(int rating);

// m̂_k: matching vector with the review's rating indicator appended.
Tensor augment(const Tensor& m_k, int rating);

// Review-level attention over the augmented matching vectors. Returns
// (β, Ô): β is a simplex over reviews with padded entries exactly zero, and
// Ô = Mᵀ·β is the β-weighted blend of the m̂_k.
std::pair<Tensor, Tensor> self_match(const std::vector<Tensor>& m_hats,
                                     const std::vector<bool>& pad_flags,
                                     const ModelParams& params);

// 3-way opinion distribution from the blended memory.
Tensor classify(const Tensor& o_hat, const ModelParams& params);

struct OpinionState {
    std::vector<Tensor> m_hat;  // per review, length d_m
    Tensor m;                   // K × d_m stack of the above
    Tensor beta;                // simplex over reviews, pads exactly 0
    Tensor o_hat;               // length d_m
    Tensor p_o;                 // simplex over the three classes
};

// augment → self_match → classify in one call.
OpinionState run_opinion(const std::vector<Tensor>& m_ks, const std::vector<int>& ratings,
                         const std::vector<bool>& pad_flags, const ModelParams& params);

}  // namespace oaag

#endif
