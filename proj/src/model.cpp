#include "oaag/model.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace oaag {

namespace {
[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }
}

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "none") return FusionMode::None;
    if (s == "static") return FusionMode::Static;
    if (s == "dynamic") return FusionMode::Dynamic;
    fail("unknown fusion mode \"" + s + "\" (expected none|static|dynamic)");
}

const std::string& fusion_mode_to_string(FusionMode m) {
    static const std::string names[3] = {"none", "static", "dynamic"};
    return names[static_cast<int>(m)];
}

void ModelConfig::validate() const {
    if (vocab_size < 4) fail("model config: vocab_size must include the four specials");
    if (emb_dim < 1 || d_a < 1) fail("model config: emb_dim and d_a must be positive");
    if (d_h < 2 || d_h % 2 != 0)
        fail("model config: d_h must be even (two directions of d_h/2), got " +
             std::to_string(d_h));
    if (num_reviews < 1) fail("model config: num_reviews must be ≥ 1");
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
    return {
        {"embedding", embedding},
        {"enc_fwd.w_input", enc_fwd.w_input},
        {"enc_fwd.w_hidden", enc_fwd.w_hidden},
        {"enc_fwd.bias", enc_fwd.bias},
        {"enc_bwd.w_input", enc_bwd.w_input},
        {"enc_bwd.w_hidden", enc_bwd.w_hidden},
        {"enc_bwd.bias", enc_bwd.bias},
        {"decoder.w_input", decoder.w_input},
        {"decoder.w_hidden", decoder.w_hidden},
        {"decoder.bias", decoder.bias},
        {"coattn_bilinear", coattn_bilinear},
        {"opinion_attn_w", opinion_attn_w},
        {"opinion_attn_vec", opinion_attn_vec},
        {"cls_w", cls_w},
        {"cls_b", cls_b},
        {"init_hidden_w", init_hidden_w},
        {"init_hidden_b", init_hidden_b},
        {"init_cell_w", init_cell_w},
        {"init_cell_b", init_cell_b},
        {"attn_question.w_key", attn_question.w_key},
        {"attn_question.w_state", attn_question.w_state},
        {"attn_question.bias", attn_question.bias},
        {"attn_question.vec", attn_question.vec},
        {"attn_review.w_key", attn_review.w_key},
        {"attn_review.w_state", attn_review.w_state},
        {"attn_review.bias", attn_review.bias},
        {"attn_review.vec", attn_review.vec},
        {"fusion.w_key", fusion.w_key},
        {"fusion.w_state", fusion.w_state},
        {"fusion.bias", fusion.bias},
        {"fusion.vec", fusion.vec},
        {"out_w1", out_w1},
        {"out_b1", out_b1},
        {"vocab_w2", vocab_w2},
        {"vocab_b2", vocab_b2},
        {"view_w", view_w},
        {"view_b", view_b},
    };
}

namespace {

Tensor uniform_init(std::vector<int> shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape), 0.0, true);
    for (double& v : t.values()) v = uniform_in(rng, -0.05, 0.05);
    return t;
}

Tensor zero_init(std::vector<int> shape) { return Tensor(std::move(shape), 0.0, true); }

LstmParams lstm_init(int input, int hidden, std::mt19937_64& rng) {
    LstmParams p;
    p.w_input = uniform_init({4 * hidden, input}, rng);
    p.w_hidden = uniform_init({4 * hidden, hidden}, rng);
    p.bias = zero_init({4 * hidden});
    return p;
}

AttentionParams attention_init(int key_width, int d_a, int d_h, std::mt19937_64& rng) {
    AttentionParams p;
    p.w_key = uniform_init({d_a, key_width}, rng);
    p.w_state = uniform_init({d_a, d_h}, rng);
    p.bias = zero_init({d_a});
    p.vec = uniform_init({d_a}, rng);
    return p;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const int half = cfg.d_h / 2;
    const int d_m = cfg.d_m();
    ModelParams p;
    p.embedding = uniform_init({cfg.vocab_size, cfg.emb_dim}, rng);
    p.enc_fwd = lstm_init(cfg.emb_dim, half, rng);
    p.enc_bwd = lstm_init(cfg.emb_dim, half, rng);
    p.decoder = lstm_init(cfg.emb_dim, cfg.d_h, rng);
    p.coattn_bilinear = uniform_init({cfg.d_h, cfg.d_h}, rng);
    p.opinion_attn_w = uniform_init({cfg.d_a, d_m}, rng);
    p.opinion_attn_vec = uniform_init({cfg.d_a}, rng);
    p.cls_w = uniform_init({3, d_m}, rng);
    p.cls_b = zero_init({3});
    p.init_hidden_w = uniform_init({cfg.d_h, d_m}, rng);
    p.init_hidden_b = zero_init({cfg.d_h});
    p.init_cell_w = uniform_init({cfg.d_h, d_m}, rng);
    p.init_cell_b = zero_init({cfg.d_h});
    p.attn_question = attention_init(cfg.d_h, cfg.d_a, cfg.d_h, rng);
    p.attn_review = attention_init(cfg.d_h, cfg.d_a, cfg.d_h, rng);
    p.fusion = attention_init(d_m, cfg.d_a, cfg.d_h, rng);
    p.out_w1 = uniform_init({cfg.d_h, 3 * cfg.d_h}, rng);
    p.out_b1 = zero_init({cfg.d_h});
    p.vocab_w2 = uniform_init({cfg.vocab_size, cfg.d_h}, rng);
    p.vocab_b2 = zero_init({cfg.vocab_size});
    p.view_w = uniform_init({3, 3 * cfg.d_h}, rng);
    p.view_b = zero_init({3});
    return p;
}

int load_pretrained_embeddings(ModelParams& params, const ModelConfig& cfg,
                               const Vocabulary& vocab, const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot read " + path);
    std::string line;
    long lineno = 0;
    int loaded = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string token;
        row >> token;
        std::vector<double> vals;
        double x;
        while (row >> x) vals.push_back(x);
        if (static_cast<int>(vals.size()) != cfg.emb_dim)
            fail(path + ":" + std::to_string(lineno) + ": expected " +
                 std::to_string(cfg.emb_dim) + " values, got " + std::to_string(vals.size()));
        if (!vocab.contains(token)) continue;
        const int id = vocab.id_of(token);
        std::copy(vals.begin(), vals.end(),
                  params.embedding.values().begin() +
                      static_cast<std::size_t>(id) * static_cast<std::size_t>(cfg.emb_dim));
        ++loaded;
    }
    return loaded;
}

}  // namespace oaag
