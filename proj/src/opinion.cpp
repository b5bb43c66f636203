#include "oaag/opinion.hpp"

#include <stdexcept>
#include <string>

namespace oaag {

Tensor rating_one_hot(int rating) {
    if (rating < 0 || rating > 5)
        throw std::runtime_error("rating_one_hot: rating " + std::to_string(rating) +
                                 " outside 1..5 and not absent");
    Tensor e({5}, 0.0);
    if (rating > 0) e.values()[static_cast<std::size_t>(rating - 1)] = 1.0;
    return e;
}

Tensor augment(const Tensor& m_k, int rating) {
    return concat({m_k, rating_one_hot(rating)}, 0);
}

std::pair<Tensor, Tensor> self_match(const std::vector<Tensor>& m_hats,
                                     const std::vector<bool>& pad_flags,
                                     const ModelParams& params) {
    if (m_hats.empty()) throw std::runtime_error("self_match: no reviews");
    if (pad_flags.size() != m_hats.size())
        throw std::runtime_error("self_match: pad flags do not match review count");

    const int k = static_cast<int>(m_hats.size());
    Tensor mask({k}, 0.0);
    bool any_real = false;
    for (int i = 0; i < k; ++i) {
        if (!pad_flags[static_cast<std::size_t>(i)]) {
            mask.values()[static_cast<std::size_t>(i)] = 1.0;
            any_real = true;
        }
    }
    if (!any_real) throw std::runtime_error("self_match: all reviews padded");

    Tensor m = stack_rows(m_hats);                                     // K × d_m
    Tensor u_m = tanh(matmul(params.opinion_attn_w, transpose(m)));    // d_a × K
    Tensor scores = matmul(transpose(u_m), params.opinion_attn_vec);   // K
    Tensor beta = softmax(scores, 0, mask);
    Tensor o_hat = matmul(transpose(m), beta);                         // d_m
    return {beta, o_hat};
}

Tensor classify(const Tensor& o_hat, const ModelParams& params) {
    return softmax(add(matmul(params.cls_w, o_hat), params.cls_b), 0);
}

OpinionState run_opinion(const std::vector<Tensor>& m_ks, const std::vector<int>& ratings,
                         const std::vector<bool>& pad_flags, const ModelParams& params) {
    if (m_ks.size() != ratings.size())
        throw std::runtime_error("run_opinion: ratings do not match review count");
    OpinionState state;
    state.m_hat.reserve(m_ks.size());
    for (std::size_t i = 0; i < m_ks.size(); ++i)
        state.m_hat.push_back(augment(m_ks[i], ratings[i]));
    state.m = stack_rows(state.m_hat);
    auto [beta, o_hat] = self_match(state.m_hat, pad_flags, params);
    state.beta = beta;
    state.o_hat = o_hat;
    state.p_o = classify(o_hat, params);
    return state;
}

}  // namespace oaag
