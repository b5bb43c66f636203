#ifndef OAAG_GENERATOR_HPP
#define OAAG_GENERATOR_HPP

#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "oaag/model.hpp"
#include "oaag/opinion.hpp"
#include "oaag/reader.hpp"
#include "oaag/tensor.hpp"

namespace oaag {

// Everything the decoder needs about one encoded sample: attentive question
// and review representations, the flattened copy sources with their extended
// ids, and the classifier's review weights and memory.
struct SampleContext {
    Tensor pi_q;                      // L_q × d_h
    Tensor pi_r;                      // R × d_h, review blocks in rank order
    Tensor pi_r_mask;                 // length R; 0 marks words of padded snippets
    std::vector<int> question_ids;    // extended ids, length L_q
    std::vector<int> review_ids;      // extended ids, length R
    std::vector<int> word_to_review;  // owning review index per flattened word
    std::vector<bool> review_is_pad;  // K flags
    Tensor beta;                      // review-level attention (pads exactly 0)
    Tensor o_weighted;                // K × d_m rows β_k·m̂_k
    Tensor o_hat;                     // classifier memory, length d_m
    Tensor p_o;                       // 3-way opinion distribution
    int vocab_size = 0;
    int extended_size = 0;            // vocab_size + per-sample copy ids
};

SampleContext build_sample_context(const QASample& sample, const ModelParams& params,
                                   double dropout_p = 0.0, bool train = false,
                                   std::mt19937_64* rng = nullptr);

struct DecoderState {
    Tensor h;  // length d_h
    Tensor c;  // length d_h
    int t = 0;
};

// Two learned affine+tanh maps take the classifier memory to the initial
// hidden and cell states.
DecoderState init_state(const Tensor& o_hat, const ModelParams& params);

// Additive attention over the rows of pi: e_i = vᵀ·tanh(W_key·π_i +
// W_state·s + b), α = masked softmax(e), c = Σ α_i·π_i. Returns (α, c).
std::pair<Tensor, Tensor> attend(const Tensor& s, const Tensor& pi,
                                 const AttentionParams& params, const Tensor& mask = Tensor());

// Re-weight word-level review attention by its review's weight:
// α̂_i = α_i·β_{k(i)} / Σ_j α_j·β_{k(j)}. A zero denominator falls back to
// the unfused α and bumps *fallbacks when given.
Tensor static_fusion(const Tensor& alpha_r, const Tensor& beta,
                     const std::vector<int>& word_to_review, long* fallbacks = nullptr);

// Step-dependent review weights β̂_t from the weighted opinion vectors, then
// the same re-weighting as static fusion. Returns (β̂_t, α̂_r_t).
std::pair<Tensor, Tensor> dynamic_fusion(const Tensor& o_weighted, const Tensor& s,
                                         const Tensor& alpha_r,
                                         const std::vector<int>& word_to_review,
                                         const std::vector<bool>& review_is_pad,
                                         const ModelParams& params, long* fallbacks = nullptr);

// Mix the vocabulary view with the two copy views:
// P = γ_1·P^v + γ_2·scatter(α_q) + γ_3·scatter(α̂_r). Returns (γ, P).
std::pair<Tensor, Tensor> output_distribution(const Tensor& h_s, const Tensor& alpha_q,
                                              const Tensor& alpha_r_hat, const Tensor& s,
                                              const Tensor& c_q, const Tensor& c_r,
                                              const SampleContext& ctx,
                                              const ModelParams& params);

struct StepOutput {
    Tensor alpha_q;      // over question positions
    Tensor alpha_r;      // over flattened review positions, pre-fusion
    Tensor alpha_r_hat;  // post-fusion (equals alpha_r in mode none)
    Tensor beta_hat;     // defined in dynamic mode only
    Tensor c_q, c_r;     // context vectors, length d_h
    Tensor h_s;          // length d_h
    Tensor gamma;        // length 3
    Tensor p;            // extended-vocabulary distribution
};

std::pair<StepOutput, DecoderState> decode_step(const DecoderState& state, int prev_token_id,
                                                const SampleContext& ctx, FusionMode mode,
                                                const ModelParams& params,
                                                double dropout_p = 0.0, bool train = false,
                                                std::mt19937_64* rng = nullptr,
                                                long* fusion_fallbacks = nullptr);

// Search cores over an abstract next-token distribution: step(prefix) returns
// probabilities over all symbols given the ids so far (prefix[0] is SOS).
// Both return the emitted ids without SOS/EOS.
using StepFn = std::function<std::vector<double>(const std::vector<int>&)>;
std::vector<int> decode_greedy_core(const StepFn& step, int sos_id, int eos_id, int max_len);
// Length-normalized beam search (logprob sum ÷ emitted length, EOS step
// included); ties prefer the lexicographically smaller id sequence.
std::vector<int> decode_beam_core(const StepFn& step, int sos_id, int eos_id, int beam,
                                  int max_len);

std::vector<int> decode_greedy(const QASample& sample, const ModelParams& params,
                               FusionMode mode, int max_len = 100,
                               long* fusion_fallbacks = nullptr);
std::vector<int> decode_beam(const QASample& sample, const ModelParams& params,
                             FusionMode mode, int beam = 4, int max_len = 100,
                             long* fusion_fallbacks = nullptr);

// Per-step inspection data for a fixed emitted sequence (used by the
// generation dump): γ_t and the five most probable tokens at each step.
struct StepTrace {
    std::vector<double> gamma;                  // 3 entries
    std::vector<std::pair<int, double>> top5;   // (extended id, probability)
};
std::vector<StepTrace> trace_sequence(const QASample& sample, const ModelParams& params,
                                      FusionMode mode, const std::vector<int>& ids);

}  // namespace oaag

#endif
