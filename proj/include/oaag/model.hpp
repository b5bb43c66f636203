#ifndef OAAG_MODEL_HPP
#define OAAG_MODEL_HPP

#include <string>
#include <utility>
#include <vector>

#include "oaag/corpus.hpp"
#include "oaag/tensor.hpp"

namespace oaag {

// Review-level opinion fusion strategy for the decoder.
enum class FusionMode { None, Static, Dynamic };

FusionMode fusion_mode_from_string(const std::string& s);
const std::string& fusion_mode_to_string(FusionMode m);

struct ModelConfig {
    int vocab_size = 0;   // includes the four specials
    int emb_dim = 300;
    int d_h = 256;        // encoder output width: two directions of d_h/2
    int d_a = 256;        // attention hidden width
    int num_reviews = 10;  // K

    int d_m() const { return 2 * d_h + 5; }  // rating-augmented matching width
    void validate() const;                   // throws on inconsistent dims
};

struct LstmParams {
    Tensor w_input;   // 4H × input
    Tensor w_hidden;  // 4H × H
    Tensor bias;      // 4H
};

struct AttentionParams {
    Tensor w_key;    // d_a × key width
    Tensor w_state;  // d_a × d_h
    Tensor bias;     // d_a
    Tensor vec;      // d_a
};

struct ModelParams {
    Tensor embedding;  // vocab_size × emb_dim

    LstmParams enc_fwd;  // hidden d_h/2 each direction
    LstmParams enc_bwd;
    LstmParams decoder;  // hidden d_h

    Tensor coattn_bilinear;  // d_h × d_h

    // review-level opinion attention and the classifier head
    Tensor opinion_attn_w;    // d_a × d_m
    Tensor opinion_attn_vec;  // d_a
    Tensor cls_w;             // 3 × d_m
    Tensor cls_b;             // 3

    // opinion memory → initial decoder hidden/cell
    Tensor init_hidden_w;  // d_h × d_m
    Tensor init_hidden_b;  // d_h
    Tensor init_cell_w;    // d_h × d_m
    Tensor init_cell_b;    // d_h

    AttentionParams attn_question;  // keys are question representations
    AttentionParams attn_review;    // keys are review representations
    AttentionParams fusion;         // keys are o_k vectors (d_m)

    Tensor out_w1;  // d_h × 3·d_h, maps [s_t : c_q : c_r]
    Tensor out_b1;  // d_h
    Tensor vocab_w2;  // vocab_size × d_h
    Tensor vocab_b2;  // vocab_size
    Tensor view_w;    // 3 × 3·d_h
    Tensor view_b;    // 3

    // Stable name→tensor listing used by the optimizer and checkpoints.
    std::vector<std::pair<std::string, Tensor>> named() const;
};

// Weights drawn from U(−0.05, 0.05), biases zero, in named() order.
ModelParams init_params(const ModelConfig& cfg, std::mt19937_64& rng);

// Replaces embedding rows for tokens found in a text file of
// "token v1 … v_emb_dim" lines; returns the number of rows loaded.
int load_pretrained_embeddings(ModelParams& params, const ModelConfig& cfg,
                               const Vocabulary& vocab, const std::string& path);

}  // namespace oaag

#endif
