#include "oaag/reader.hpp"

#include <stdexcept>

namespace oaag {

EncoderOutput encode_sequence(const std::vector<int>& ids, const ModelParams& params,
                              double dropout_p, bool train, std::mt19937_64* rng) {
    if (ids.empty()) throw std::runtime_error("encode_sequence: empty sequence");
    const int L = static_cast<int>(ids.size());
    const int half = params.enc_fwd.w_hidden.dim(1);

    Tensor emb = embedding_lookup(params.embedding, ids);
    emb = dropout(emb, dropout_p, train, rng);

    std::vector<Tensor> fwd(static_cast<std::size_t>(L)), bwd(static_cast<std::size_t>(L));
    Tensor h = Tensor::zeros({half});
    Tensor c = Tensor::zeros({half});
    for (int t = 0; t < L; ++t) {
        auto [hn, cn] = lstm_cell(row(emb, t), h, c, params.enc_fwd.w_input,
                                  params.enc_fwd.w_hidden, params.enc_fwd.bias);
        h = hn;
        c = cn;
        fwd[static_cast<std::size_t>(t)] = h;
    }
    h = Tensor::zeros({half});
    c = Tensor::zeros({half});
    for (int t = L - 1; t >= 0; --t) {
        auto [hn, cn] = lstm_cell(row(emb, t), h, c, params.enc_bwd.w_input,
                                  params.enc_bwd.w_hidden, params.enc_bwd.bias);
        h = hn;
        c = cn;
        bwd[static_cast<std::size_t>(t)] = h;
    }

    std::vector<Tensor> rows(static_cast<std::size_t>(L));
    for (int t = 0; t < L; ++t)
        rows[static_cast<std::size_t>(t)] =
            concat({fwd[static_cast<std::size_t>(t)], bwd[static_cast<std::size_t>(t)]}, 0);

    EncoderOutput out;
    out.h = stack_rows(rows);
    out.mask = Tensor({L}, 1.0);
    return out;
}

std::pair<Tensor, Tensor> coattend(const Tensor& h_q, const Tensor& h_r, const Tensor& u) {
    if (h_q.dim(1) != u.dim(0) || h_r.dim(1) != u.dim(1))
        throw std::runtime_error("coattend: width mismatch between encodings and bilinear map");
    Tensor omega = tanh(matmul(matmul(h_q, u), transpose(h_r)));  // L_q × L_r
    Tensor alpha_q = softmax(max(omega, 1), 0);
    Tensor alpha_r = softmax(max(omega, 0), 0);
    return {alpha_q, alpha_r};
}

std::pair<Tensor, Tensor> fuse_representations(const Tensor& h_q,
                                               const std::vector<Tensor>& h_reviews,
                                               const std::vector<Tensor>& alpha_q,
                                               const std::vector<Tensor>& alpha_r,
                                               const std::vector<bool>& is_pad) {
    const std::size_t K = h_reviews.size();
    if (K == 0 || alpha_q.size() != K || alpha_r.size() != K || is_pad.size() != K)
        throw std::runtime_error("fuse_representations: inconsistent review counts");

    Tensor pi_q_sum;
    int real = 0;
    for (std::size_t k = 0; k < K; ++k) {
        if (is_pad[k]) continue;
        Tensor scaled = scale_rows(h_q, alpha_q[k]);
        pi_q_sum = real == 0 ? scaled : add(pi_q_sum, scaled);
        ++real;
    }
    if (real == 0) throw std::runtime_error("fuse_representations: all reviews padded");
    Tensor pi_q = scale(pi_q_sum, 1.0 / static_cast<double>(real));

    std::vector<Tensor> blocks;
    blocks.reserve(K);
    for (std::size_t k = 0; k < K; ++k) blocks.push_back(scale_rows(h_reviews[k], alpha_r[k]));
    Tensor pi_r = concat(blocks, 0);
    return {pi_q, pi_r};
}

Tensor matching_vector(const Tensor& h_q, const Tensor& h_r, const Tensor& alpha_q,
                       const Tensor& alpha_r) {
    return concat({matmul(transpose(h_q), alpha_q), matmul(transpose(h_r), alpha_r)}, 0);
}

}  // namespace oaag
