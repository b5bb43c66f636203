#include "oaag/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace oaag {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
    return std::mt19937_64(seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
}

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0) fail("train config: learning_rate must be positive");
    if (accumulator_init <= 0) fail("train config: accumulator_init must be positive");
    if (dropout < 0 || dropout >= 1) fail("train config: dropout must lie in [0, 1)");
    if (batch_size < 1) fail("train config: batch_size must be positive");
    if (epochs < 0) fail("train config: epochs must be non-negative");
    if (lambda < 0) fail("train config: lambda must be non-negative");
    if (grad_clip_norm <= 0) fail("train config: grad_clip_norm must be positive");
    if (vocab_cap < 4) fail("train config: vocab_cap must cover the specials");
    if (max_answer_len < 1) fail("train config: max_answer_len must be positive");
    precision_from_string(precision);
    model_config(4).validate();
}

ModelConfig TrainConfig::model_config(int vocab_size) const {
    ModelConfig mc;
    mc.vocab_size = vocab_size;
    mc.emb_dim = emb_dim;
    mc.d_h = d_h;
    mc.d_a = d_a;
    mc.num_reviews = num_reviews;
    return mc;
}

Precision precision_from_string(const std::string& s) {
    if (s == "f64") return Precision::f64;
    if (s == "f32") return Precision::f32;
    fail("unknown precision \"" + s + "\" (expected f64|f32)");
}

Tensor opinion_loss(const std::vector<Tensor>& p_os, const std::vector<Opinion>& labels,
                    long* clamp_events) {
    if (p_os.empty()) fail("opinion_loss: empty batch");
    if (p_os.size() != labels.size()) fail("opinion_loss: labels do not match batch");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < p_os.size(); ++i) {
        Tensor picked = select(p_os[i], static_cast<int>(labels[i]));
        total = add(total, log(clamp_min(picked, 1e-12, clamp_events)));
    }
    return scale(total, -1.0);
}

Tensor generation_loss(const std::vector<std::vector<Tensor>>& step_ps,
                       const std::vector<std::vector<int>>& targets, long* clamp_events) {
    if (step_ps.empty()) fail("generation_loss: empty batch");
    if (step_ps.size() != targets.size()) fail("generation_loss: targets do not match batch");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < step_ps.size(); ++i) {
        const std::vector<Tensor>& ps = step_ps[i];
        const std::vector<int>& ids = targets[i];
        if (ps.empty()) fail("generation_loss: sample without steps");
        if (ps.size() != ids.size()) fail("generation_loss: step count does not match targets");
        Tensor sample_sum = Tensor::scalar(0.0);
        for (std::size_t t = 0; t < ps.size(); ++t) {
            Tensor picked = select(ps[t], ids[t]);
            sample_sum = add(sample_sum, log(clamp_min(picked, 1e-12, clamp_events)));
        }
        total = add(total, scale(sample_sum, -1.0 / static_cast<double>(ps.size())));
    }
    return scale(total, 1.0 / static_cast<double>(step_ps.size()));
}

Tensor joint_loss(const Tensor& l_om, const Tensor& l_ag, double lambda) {
    return add(l_om, scale(l_ag, lambda));
}

double global_grad_norm(const ModelParams& params) {
    double sq = 0.0;
    for (const auto& [name, t] : params.named()) {
        if (!t.grad_allocated()) continue;
        for (double g : t.grad()) sq += g * g;
    }
    return std::sqrt(sq);
}

double clip_gradients(ModelParams& params, double max_norm) {
    if (max_norm <= 0) fail("clip_gradients: max_norm must be positive");
    const double norm = global_grad_norm(params);
    if (std::isfinite(norm) && norm > max_norm) {
        const double factor = max_norm / norm;
        for (auto& [name, t] : params.named()) {
            if (!t.grad_allocated()) continue;
            for (double& g : t.grad()) g *= factor;
        }
    }
    return norm;
}

AdagradState make_adagrad_state(const ModelParams& params, double accumulator_init) {
    AdagradState state;
    for (const auto& [name, t] : params.named())
        state.acc[name].assign(static_cast<std::size_t>(t.size()), accumulator_init);
    return state;
}

bool adagrad_step(ModelParams& params, AdagradState& state, double lr, double eps,
                  long* skipped) {
    for (const auto& [name, t] : params.named()) {
        if (!t.grad_allocated()) continue;
        for (double g : t.grad())
            if (!std::isfinite(g)) {
                if (skipped) ++*skipped;
                return false;
            }
    }
    const bool round_f32 = precision() == Precision::f32;
    for (auto& [name, t] : params.named()) {
        if (!t.grad_allocated()) continue;
        std::vector<double>& acc = state.acc.at(name);
        std::vector<double>& vals = t.values();
        const std::vector<double>& grads = t.grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double g = grads[i];
            if (g == 0.0) continue;
            acc[i] += g * g;
            double v = vals[i] - lr * g / (std::sqrt(acc[i]) + eps);
            if (round_f32) v = static_cast<double>(static_cast<float>(v));
            vals[i] = v;
        }
    }
    return true;
}

namespace {

json config_to_json(const TrainConfig& cfg) {
    return json{{"learning_rate", cfg.learning_rate},
                {"accumulator_init", cfg.accumulator_init},
                {"dropout", cfg.dropout},
                {"batch_size", cfg.batch_size},
                {"epochs", cfg.epochs},
                {"lambda", cfg.lambda},
                {"grad_clip_norm", cfg.grad_clip_norm},
                {"vocab_cap", cfg.vocab_cap},
                {"emb_dim", cfg.emb_dim},
                {"d_h", cfg.d_h},
                {"d_a", cfg.d_a},
                {"num_reviews", cfg.num_reviews},
                {"max_answer_len", cfg.max_answer_len},
                {"seed", cfg.seed},
                {"mode", fusion_mode_to_string(cfg.mode)},
                {"precision", cfg.precision},
                {"deterministic_log", cfg.deterministic_log}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.accumulator_init = j.at("accumulator_init").get<double>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.lambda = j.at("lambda").get<double>();
    cfg.grad_clip_norm = j.at("grad_clip_norm").get<double>();
    cfg.vocab_cap = j.at("vocab_cap").get<int>();
    cfg.emb_dim = j.at("emb_dim").get<int>();
    cfg.d_h = j.at("d_h").get<int>();
    cfg.d_a = j.at("d_a").get<int>();
    cfg.num_reviews = j.at("num_reviews").get<int>();
    cfg.max_answer_len = j.at("max_answer_len").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.mode = fusion_mode_from_string(j.at("mode").get<std::string>());
    cfg.precision = j.at("precision").get<std::string>();
    cfg.deterministic_log = j.at("deterministic_log").get<bool>();
    return cfg;
}

json stats_to_json(const EpochStats& s) {
    return json{{"epoch", s.epoch},
                {"l_om", s.l_om},
                {"l_ag", s.l_ag},
                {"l", s.l},
                {"clamp_events", s.clamp_events},
                {"skipped_batches", s.skipped_batches},
                {"fusion_fallbacks", s.fusion_fallbacks},
                {"wall_time_s", s.wall_time_s}};
}

EpochStats stats_from_json(const json& j) {
    EpochStats s;
    s.epoch = j.at("epoch").get<int>();
    s.l_om = j.at("l_om").get<double>();
    s.l_ag = j.at("l_ag").get<double>();
    s.l = j.at("l").get<double>();
    s.clamp_events = j.at("clamp_events").get<long>();
    s.skipped_batches = j.at("skipped_batches").get<long>();
    s.fusion_fallbacks = j.at("fusion_fallbacks").get<long>();
    s.wall_time_s = j.at("wall_time_s").get<double>();
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json doc;
    doc["config"] = config_to_json(ckpt.config);
    doc["model"] = {{"vocab_size", ckpt.model.vocab_size},
                    {"emb_dim", ckpt.model.emb_dim},
                    {"d_h", ckpt.model.d_h},
                    {"d_a", ckpt.model.d_a},
                    {"num_reviews", ckpt.model.num_reviews}};
    doc["epoch"] = ckpt.epoch;
    json history = json::array();
    for (const EpochStats& s : ckpt.history) history.push_back(stats_to_json(s));
    doc["history"] = std::move(history);
    json params;
    for (const auto& [name, t] : ckpt.params.named())
        params[name] = {{"shape", t.shape()}, {"values", t.values()}};
    doc["params"] = std::move(params);
    json opt;
    for (const auto& [name, acc] : ckpt.opt.acc) opt[name] = acc;
    doc["adagrad"] = std::move(opt);

    std::ofstream out(path, std::ios::binary);
    if (!out) fail("checkpoint: cannot write " + path);
    out << doc.dump();
    out << '\n';
    if (!out) fail("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("checkpoint: cannot read " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        fail("checkpoint: bad JSON in " + path + ": " + e.what());
    }

    Checkpoint ckpt;
    ckpt.config = config_from_json(doc.at("config"));
    const json& m = doc.at("model");
    ckpt.model.vocab_size = m.at("vocab_size").get<int>();
    ckpt.model.emb_dim = m.at("emb_dim").get<int>();
    ckpt.model.d_h = m.at("d_h").get<int>();
    ckpt.model.d_a = m.at("d_a").get<int>();
    ckpt.model.num_reviews = m.at("num_reviews").get<int>();
    ckpt.epoch = doc.at("epoch").get<int>();
    for (const json& s : doc.at("history")) ckpt.history.push_back(stats_from_json(s));

    std::mt19937_64 throwaway(0);
    ckpt.params = init_params(ckpt.model, throwaway);
    const json& params = doc.at("params");
    for (auto& [name, t] : ckpt.params.named()) {
        const json& entry = params.at(name);
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        if (shape != t.shape()) fail("checkpoint: shape mismatch for " + name);
        std::vector<double> values = entry.at("values").get<std::vector<double>>();
        if (values.size() != t.values().size()) fail("checkpoint: size mismatch for " + name);
        t.values() = std::move(values);
    }
    const json& opt = doc.at("adagrad");
    for (const auto& [name, t] : ckpt.params.named()) {
        std::vector<double> acc = opt.at(name).get<std::vector<double>>();
        if (acc.size() != t.values().size())
            fail("checkpoint: accumulator size mismatch for " + name);
        ckpt.opt.acc[name] = std::move(acc);
    }
    return ckpt;
}

void append_train_log(const std::string& path, const EpochStats& stats) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) fail("train log: cannot write " + path);
    out << stats_to_json(stats).dump() << '\n';
}

Checkpoint train(const std::vector<QASample>& dataset, int vocab_size, const TrainConfig& cfg,
                 const EpochCallback& on_epoch, const Checkpoint* resume) {
    cfg.validate();
    if (dataset.empty()) fail("train: empty dataset");
    set_precision(precision_from_string(cfg.precision));

    Checkpoint ckpt;
    if (resume) {
        ckpt = *resume;
        ckpt.config = cfg;  // the caller's config governs the continued run
    } else {
        std::mt19937_64 rng(cfg.seed);
        ckpt.config = cfg;
        ckpt.model = cfg.model_config(vocab_size);
        ckpt.params = init_params(ckpt.model, rng);
        ckpt.opt = make_adagrad_state(ckpt.params, cfg.accumulator_init);
        ckpt.epoch = 0;
    }

    const std::size_t n = dataset.size();
    for (int epoch = ckpt.epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::mt19937_64 rng = epoch_rng(cfg.seed, epoch);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        EpochStats stats;
        stats.epoch = epoch;
        double sum_om = 0.0, sum_ag = 0.0;

        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            const int bsz = static_cast<int>(stop - start);

            Tape tape;
            Tensor l_om_mean, l_ag_mean;
            {
                TapeScope scope(tape);
                std::vector<Tensor> p_os;
                std::vector<Opinion> labels;
                std::vector<std::vector<Tensor>> steps;
                std::vector<std::vector<int>> targets;
                for (std::size_t i = start; i < stop; ++i) {
                    const QASample& sample = dataset[order[i]];
                    SampleContext ctx =
                        build_sample_context(sample, ckpt.params, cfg.dropout, true, &rng);
                    p_os.push_back(ctx.p_o);
                    labels.push_back(sample.label);
                    DecoderState st = init_state(ctx.o_hat, ckpt.params);
                    std::vector<Tensor> ps;
                    int prev = kSosId;
                    for (int id : sample.answer_ids) {
                        auto [out, next] =
                            decode_step(st, prev, ctx, cfg.mode, ckpt.params, cfg.dropout,
                                        true, &rng, &stats.fusion_fallbacks);
                        ps.push_back(out.p);
                        st = next;
                        prev = id;
                    }
                    steps.push_back(std::move(ps));
                    targets.push_back(sample.answer_ids);
                }
                l_om_mean = scale(opinion_loss(p_os, labels, &stats.clamp_events),
                                  1.0 / static_cast<double>(bsz));
                l_ag_mean = generation_loss(steps, targets, &stats.clamp_events);
                tape.backward(joint_loss(l_om_mean, l_ag_mean, cfg.lambda));
            }

            const double norm = global_grad_norm(ckpt.params);
            if (std::isfinite(norm)) {
                clip_gradients(ckpt.params, cfg.grad_clip_norm);
                adagrad_step(ckpt.params, ckpt.opt, cfg.learning_rate, 1e-10,
                             &stats.skipped_batches);
            } else {
                ++stats.skipped_batches;
            }
            for (auto& [name, t] : ckpt.params.named())
                if (t.grad_allocated()) t.zero_grad();

            sum_om += l_om_mean.item() * bsz;
            sum_ag += l_ag_mean.item() * bsz;
        }

        stats.l_om = sum_om / static_cast<double>(n);
        stats.l_ag = sum_ag / static_cast<double>(n);
        stats.l = stats.l_om + cfg.lambda * stats.l_ag;
        if (!cfg.deterministic_log) {
            const auto elapsed = std::chrono::steady_clock::now() - started;
            stats.wall_time_s =
                std::chrono::duration_cast<std::chrono::duration<double>>(elapsed).count();
        }
        ckpt.epoch = epoch;
        ckpt.history.push_back(stats);
        if (on_epoch) on_epoch(ckpt, stats);
    }
    return ckpt;
}

DatasetLosses evaluate_losses(const std::vector<QASample>& dataset, const ModelParams& params,
                              FusionMode mode) {
    if (dataset.empty()) fail("evaluate_losses: empty dataset");
    DatasetLosses out;
    long correct = 0;
    for (const QASample& sample : dataset) {
        SampleContext ctx = build_sample_context(sample, params);
        const std::vector<double>& p_o = ctx.p_o.values();
        int pred = 0;
        for (int c = 1; c < 3; ++c)
            if (p_o[static_cast<std::size_t>(c)] > p_o[static_cast<std::size_t>(pred)]) pred = c;
        if (pred == static_cast<int>(sample.label)) ++correct;
        out.l_om += -std::log(std::max(p_o[static_cast<std::size_t>(sample.label)], 1e-12));

        DecoderState st = init_state(ctx.o_hat, params);
        double nll = 0.0;
        int prev = kSosId;
        for (int id : sample.answer_ids) {
            auto [step, next] = decode_step(st, prev, ctx, mode, params);
            nll += -std::log(std::max(step.p.values()[static_cast<std::size_t>(id)], 1e-12));
            st = next;
            prev = id;
        }
        out.l_ag += nll / static_cast<double>(sample.answer_ids.size());
    }
    const double n = static_cast<double>(dataset.size());
    out.l_om /= n;
    out.l_ag /= n;
    out.opinion_accuracy = static_cast<double>(correct) / n;
    return out;
}

}  // namespace oaag
