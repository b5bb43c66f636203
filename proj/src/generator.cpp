#include "oaag/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace oaag {
namespace {

// e = tanh(keys·W_keyᵀ + (W_state·s + b)) · v, one score per key row
Tensor attention_scores(const Tensor& keys, const Tensor& s, const AttentionParams& ap) {
    Tensor projected = matmul(keys, transpose(ap.w_key));
    Tensor state_part = add(matmul(ap.w_state, s), ap.bias);
    return matmul(tanh(add(projected, state_part)), ap.vec);
}

}  // namespace

SampleContext build_sample_context(const QASample& sample, const ModelParams& params,
                                   double dropout_p, bool train, std::mt19937_64* rng) {
    const int d_h = params.init_hidden_w.dim(0);

    SampleContext ctx;
    ctx.question_ids = sample.question_ids;
    ctx.vocab_size = params.embedding.dim(0);
    ctx.extended_size = ctx.vocab_size + static_cast<int>(sample.oov_tokens.size());

    EncoderOutput q = encode_sequence(sample.question_ids, params, dropout_p, train, rng);
    const int l_q = q.h.dim(0);

    std::vector<Tensor> h_reviews, alpha_qs, alpha_rs, m_ks;
    std::vector<int> ratings;
    for (std::size_t k = 0; k < sample.reviews.size(); ++k) {
        const EncodedReview& rev = sample.reviews[k];
        ctx.review_is_pad.push_back(rev.is_pad);
        ratings.push_back(rev.rating);
        for (int id : rev.ids) {
            ctx.review_ids.push_back(id);
            ctx.word_to_review.push_back(static_cast<int>(k));
        }
        const int len = static_cast<int>(rev.ids.size());
        if (rev.is_pad) {
            // padded snippets contribute zero rows and a zero matching vector;
            // their attention never fires, so the zeros are exact
            h_reviews.push_back(Tensor::zeros({len, d_h}));
            alpha_qs.push_back(Tensor::zeros({l_q}));
            alpha_rs.push_back(Tensor::zeros({len}));
            m_ks.push_back(Tensor::zeros({2 * d_h}));
        } else {
            EncoderOutput r = encode_sequence(rev.ids, params, dropout_p, train, rng);
            auto [aq, ar] = coattend(q.h, r.h, params.coattn_bilinear);
            h_reviews.push_back(r.h);
            alpha_qs.push_back(aq);
            alpha_rs.push_back(ar);
            m_ks.push_back(matching_vector(q.h, r.h, aq, ar));
        }
    }

    auto [pi_q, pi_r] = fuse_representations(q.h, h_reviews, alpha_qs, alpha_rs,
                                             ctx.review_is_pad);
    ctx.pi_q = pi_q;
    ctx.pi_r = pi_r;

    const int total_words = static_cast<int>(ctx.review_ids.size());
    ctx.pi_r_mask = Tensor({total_words}, 0.0);
    for (int i = 0; i < total_words; ++i)
        if (!ctx.review_is_pad[static_cast<std::size_t>(ctx.word_to_review[static_cast<std::size_t>(i)])])
            ctx.pi_r_mask.values()[static_cast<std::size_t>(i)] = 1.0;

    OpinionState op = run_opinion(m_ks, ratings, ctx.review_is_pad, params);
    ctx.beta = op.beta;
    ctx.o_weighted = scale_rows(op.m, op.beta);
    ctx.o_hat = op.o_hat;
    ctx.p_o = op.p_o;
    return ctx;
}

DecoderState init_state(const Tensor& o_hat, const ModelParams& params) {
    DecoderState st;
    st.h = tanh(add(matmul(params.init_hidden_w, o_hat), params.init_hidden_b));
    st.c = tanh(add(matmul(params.init_cell_w, o_hat), params.init_cell_b));
    st.t = 0;
    return st;
}

std::pair<Tensor, Tensor> attend(const Tensor& s, const Tensor& pi,
                                 const AttentionParams& params, const Tensor& mask) {
    Tensor alpha = softmax(attention_scores(pi, s, params), 0, mask);
    Tensor context = matmul(transpose(pi), alpha);
    return {alpha, context};
}

Tensor static_fusion(const Tensor& alpha_r, const Tensor& beta,
                     const std::vector<int>& word_to_review, long* fallbacks) {
    if (static_cast<int>(word_to_review.size()) != alpha_r.dim(0))
        throw std::runtime_error("static_fusion: word map does not cover the attention vector");
    Tensor weighted = mul(alpha_r, gather(beta, word_to_review));
    Tensor denom = sum_all(weighted);
    if (denom.item() == 0.0) {
        if (fallbacks) ++*fallbacks;
        return alpha_r;
    }
    return mul(weighted, recip(denom));
}

std::pair<Tensor, Tensor> dynamic_fusion(const Tensor& o_weighted, const Tensor& s,
                                         const Tensor& alpha_r,
                                         const std::vector<int>& word_to_review,
                                         const std::vector<bool>& review_is_pad,
                                         const ModelParams& params, long* fallbacks) {
    const int k = o_weighted.dim(0);
    if (static_cast<int>(review_is_pad.size()) != k)
        throw std::runtime_error("dynamic_fusion: pad flags do not match review count");
    Tensor mask({k}, 0.0);
    for (int i = 0; i < k; ++i)
        if (!review_is_pad[static_cast<std::size_t>(i)])
            mask.values()[static_cast<std::size_t>(i)] = 1.0;
    Tensor beta_hat = softmax(attention_scores(o_weighted, s, params.fusion), 0, mask);
    Tensor alpha_hat = static_fusion(alpha_r, beta_hat, word_to_review, fallbacks);
    return {beta_hat, alpha_hat};
}

std::pair<Tensor, Tensor> output_distribution(const Tensor& h_s, const Tensor& alpha_q,
                                              const Tensor& alpha_r_hat, const Tensor& s,
                                              const Tensor& c_q, const Tensor& c_r,
                                              const SampleContext& ctx,
                                              const ModelParams& params) {
    Tensor features = concat({s, c_q, c_r}, 0);
    Tensor gamma = softmax(add(matmul(params.view_w, features), params.view_b), 0);

    Tensor p_vocab = softmax(add(matmul(params.vocab_w2, h_s), params.vocab_b2), 0);
    if (ctx.extended_size > ctx.vocab_size) p_vocab = pad_to(p_vocab, ctx.extended_size);
    Tensor p_question = scatter_add(alpha_q, ctx.question_ids, ctx.extended_size);
    Tensor p_review = scatter_add(alpha_r_hat, ctx.review_ids, ctx.extended_size);

    Tensor p = add(add(mul(p_vocab, select(gamma, 0)), mul(p_question, select(gamma, 1))),
                   mul(p_review, select(gamma, 2)));
    return {gamma, p};
}

std::pair<StepOutput, DecoderState> decode_step(const DecoderState& state, int prev_token_id,
                                                const SampleContext& ctx, FusionMode mode,
                                                const ModelParams& params, double dropout_p,
                                                bool train, std::mt19937_64* rng,
                                                long* fusion_fallbacks) {
    Tensor x = row(embedding_lookup(params.embedding, {prev_token_id}), 0);
    x = dropout(x, dropout_p, train, rng);
    auto [h, c] = lstm_cell(x, state.h, state.c, params.decoder.w_input,
                            params.decoder.w_hidden, params.decoder.bias);

    StepOutput out;
    auto [alpha_q, c_q] = attend(h, ctx.pi_q, params.attn_question);
    auto [alpha_r, c_r] = attend(h, ctx.pi_r, params.attn_review, ctx.pi_r_mask);
    out.alpha_q = alpha_q;
    out.alpha_r = alpha_r;
    out.c_q = c_q;
    out.c_r = c_r;

    switch (mode) {
        case FusionMode::None:
            out.alpha_r_hat = alpha_r;
            break;
        case FusionMode::Static:
            out.alpha_r_hat =
                static_fusion(alpha_r, ctx.beta, ctx.word_to_review, fusion_fallbacks);
            break;
        case FusionMode::Dynamic: {
            auto [beta_hat, alpha_hat] =
                dynamic_fusion(ctx.o_weighted, h, alpha_r, ctx.word_to_review,
                               ctx.review_is_pad, params, fusion_fallbacks);
            out.beta_hat = beta_hat;
            out.alpha_r_hat = alpha_hat;
            break;
        }
    }

    out.h_s = add(matmul(params.out_w1, concat({h, c_q, c_r}, 0)), params.out_b1);
    out.h_s = dropout(out.h_s, dropout_p, train, rng);
    auto [gamma, p] = output_distribution(out.h_s, alpha_q, out.alpha_r_hat, h, c_q, c_r,
                                          ctx, params);
    out.gamma = gamma;
    out.p = p;
    return {out, DecoderState{h, c, state.t + 1}};
}

std::vector<int> decode_greedy_core(const StepFn& step, int sos_id, int eos_id, int max_len) {
    std::vector<int> prefix = {sos_id};
    std::vector<int> out;
    for (int t = 0; t < max_len; ++t) {
        std::vector<double> p = step(prefix);
        int best = 0;
        for (int i = 1; i < static_cast<int>(p.size()); ++i)
            if (p[static_cast<std::size_t>(i)] > p[static_cast<std::size_t>(best)]) best = i;
        if (best == eos_id) break;
        out.push_back(best);
        prefix.push_back(best);
    }
    return out;
}

namespace {

struct Hypothesis {
    std::vector<int> ids;  // emitted tokens, SOS/EOS excluded
    double logp = 0.0;
    int scored_steps = 0;  // distributions consumed, EOS step included

    double score() const {
        return scored_steps > 0 ? logp / scored_steps
                                : -std::numeric_limits<double>::infinity();
    }
};

bool better(const Hypothesis& a, const Hypothesis& b) {
    if (a.score() != b.score()) return a.score() > b.score();
    return std::lexicographical_compare(a.ids.begin(), a.ids.end(), b.ids.begin(), b.ids.end());
}

}  // namespace

std::vector<int> decode_beam_core(const StepFn& step, int sos_id, int eos_id, int beam,
                                  int max_len) {
    if (beam < 1) throw std::runtime_error("decode_beam: beam must be at least 1");
    std::vector<Hypothesis> live = {Hypothesis{}};
    std::vector<Hypothesis> finished;

    for (int t = 0; t < max_len && !live.empty(); ++t) {
        std::vector<Hypothesis> candidates;
        for (const Hypothesis& hyp : live) {
            std::vector<int> prefix;
            prefix.reserve(hyp.ids.size() + 1);
            prefix.push_back(sos_id);
            prefix.insert(prefix.end(), hyp.ids.begin(), hyp.ids.end());
            std::vector<double> p = step(prefix);

            std::vector<int> order(p.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)];
            });
            const int take = std::min<int>(beam, static_cast<int>(order.size()));
            for (int i = 0; i < take; ++i) {
                const int id = order[static_cast<std::size_t>(i)];
                const double prob = p[static_cast<std::size_t>(id)];
                if (prob <= 0.0) break;  // sorted, so the rest are zero too
                Hypothesis next = hyp;
                next.logp += std::log(prob);
                next.scored_steps += 1;
                if (id == eos_id) {
                    finished.push_back(std::move(next));
                } else {
                    next.ids.push_back(id);
                    candidates.push_back(std::move(next));
                }
            }
        }
        // within one step every candidate has the same length, so raw log
        // probability orders them the same way the normalized score does
        std::sort(candidates.begin(), candidates.end(),
                  [](const Hypothesis& a, const Hypothesis& b) {
                      if (a.logp != b.logp) return a.logp > b.logp;
                      return std::lexicographical_compare(a.ids.begin(), a.ids.end(),
                                                          b.ids.begin(), b.ids.end());
                  });
        if (static_cast<int>(candidates.size()) > beam)
            candidates.resize(static_cast<std::size_t>(beam));
        live = std::move(candidates);
    }

    for (Hypothesis& hyp : live) finished.push_back(std::move(hyp));
    if (finished.empty()) return {};
    const Hypothesis* best = &finished.front();
    for (const Hypothesis& hyp : finished)
        if (better(hyp, *best)) best = &hyp;
    return best->ids;
}

namespace {

// Caches decoder states by consumed prefix so beam search re-scores each
// prefix exactly once.
struct ModelStepper {
    const SampleContext& ctx;
    const ModelParams& params;
    FusionMode mode;
    long* fallbacks;
    std::map<std::vector<int>, DecoderState> states;

    explicit ModelStepper(const SampleContext& c, const ModelParams& p, FusionMode m, long* f)
        : ctx(c), params(p), mode(m), fallbacks(f) {
        states.emplace(std::vector<int>{}, init_state(ctx.o_hat, params));
    }

    DecoderState state_for(const std::vector<int>& consumed) {
        auto it = states.find(consumed);
        if (it != states.end()) return it->second;
        DecoderState st = states.at({});
        std::vector<int> key;
        for (int id : consumed) {
            auto [out, next] = decode_step(st, id, ctx, mode, params, 0.0, false, nullptr,
                                           fallbacks);
            st = next;
            key.push_back(id);
            states.emplace(key, st);
        }
        return st;
    }

    std::vector<double> operator()(const std::vector<int>& prefix) {
        std::vector<int> consumed(prefix.begin(), prefix.end() - 1);
        DecoderState st = state_for(consumed);
        auto [out, next] = decode_step(st, prefix.back(), ctx, mode, params, 0.0, false,
                                       nullptr, fallbacks);
        states.emplace(prefix, next);
        return out.p.values();
    }
};

}  // namespace

std::vector<int> decode_greedy(const QASample& sample, const ModelParams& params,
                               FusionMode mode, int max_len, long* fusion_fallbacks) {
    SampleContext ctx = build_sample_context(sample, params);
    ModelStepper stepper(ctx, params, mode, fusion_fallbacks);
    return decode_greedy_core([&](const std::vector<int>& prefix) { return stepper(prefix); },
                              kSosId, kEosId, max_len);
}

std::vector<int> decode_beam(const QASample& sample, const ModelParams& params,
                             FusionMode mode, int beam, int max_len, long* fusion_fallbacks) {
    if (beam < 1) throw std::runtime_error("decode_beam: beam must be at least 1");
    SampleContext ctx = build_sample_context(sample, params);
    ModelStepper stepper(ctx, params, mode, fusion_fallbacks);
    return decode_beam_core([&](const std::vector<int>& prefix) { return stepper(prefix); },
                            kSosId, kEosId, beam, max_len);
}

std::vector<StepTrace> trace_sequence(const QASample& sample, const ModelParams& params,
                                      FusionMode mode, const std::vector<int>& ids) {
    SampleContext ctx = build_sample_context(sample, params);
    DecoderState st = init_state(ctx.o_hat, params);
    std::vector<StepTrace> traces;
    int prev = kSosId;
    for (int id : ids) {
        auto [out, next] = decode_step(st, prev, ctx, mode, params);
        StepTrace trace;
        trace.gamma = out.gamma.values();
        const std::vector<double>& p = out.p.values();
        std::vector<int> order(p.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)];
        });
        const int take = static_cast<int>(std::min<std::size_t>(5, order.size()));
        for (int i = 0; i < take; ++i)
            trace.top5.emplace_back(order[static_cast<std::size_t>(i)],
                                    p[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
        traces.push_back(std::move(trace));
        st = next;
        prev = id;
    }
    return traces;
}

}  // namespace oaag
