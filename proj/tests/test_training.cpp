#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "oaag/training.hpp"

using namespace oaag;

namespace {

constexpr int kTinyVocab = 12;

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.epochs = 2;
    cfg.emb_dim = 4;
    cfg.d_h = 4;
    cfg.d_a = 3;
    cfg.num_reviews = 2;
    cfg.max_answer_len = 8;
    cfg.precision = "f64";
    cfg.deterministic_log = true;
    return cfg;
}

// four question/answer pairs over a twelve-word vocabulary, one padded slot
std::vector<QASample> tiny_dataset() {
    std::vector<QASample> data;
    QASample a;
    a.question_ids = {4, 5, 6};
    a.reviews = {{{6, 9}, 5, false}, {{7, 4}, 2, false}};
    a.answer_ids = {7, 8, kEosId};
    a.label = Opinion::positive;
    data.push_back(a);

    QASample b;
    b.question_ids = {5, 10};
    b.reviews = {{{8, 11, 4}, 1, false}, {{kPadId}, 0, true}};
    b.answer_ids = {9, kEosId};
    b.label = Opinion::negative;
    data.push_back(b);

    QASample c;
    c.question_ids = {6, 7, 11};
    c.reviews = {{{10, 5}, 0, false}, {{4, 6, 9}, 4, false}};
    c.answer_ids = {5, 4, kEosId};
    c.label = Opinion::neutral;
    data.push_back(c);

    QASample d;
    d.question_ids = {9, 8};
    d.reviews = {{{11, 7}, 3, false}, {{5, 5}, 5, false}};
    d.answer_ids = {10, kEosId};
    d.label = Opinion::positive;
    data.push_back(d);
    return data;
}

std::map<std::string, std::vector<double>> values_of(const ModelParams& p) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, t] : p.named()) out[name] = t.values();
    return out;
}

std::map<std::string, std::vector<double>> grads_of(const ModelParams& p) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, t] : p.named())
        out[name] = t.grad_allocated() ? t.grad()
                                       : std::vector<double>(t.values().size(), 0.0);
    return out;
}

void zero_grads(const ModelParams& p) {
    for (const auto& [name, t] : p.named())
        if (t.grad_allocated()) t.zero_grad();
}

void fill_grad(const Tensor& t, double g) {
    std::vector<double>& buf = t.grad();
    std::fill(buf.begin(), buf.end(), g);
}

// teacher-forced losses for one sample, recorded on whatever tape is active
std::pair<Tensor, Tensor> forward_losses(const QASample& s, const ModelParams& p) {
    SampleContext ctx = build_sample_context(s, p);
    Tensor l_om = opinion_loss({ctx.p_o}, {s.label});
    DecoderState st = init_state(ctx.o_hat, p);
    std::vector<Tensor> ps;
    int prev = kSosId;
    for (int id : s.answer_ids) {
        auto [out, next] = decode_step(st, prev, ctx, FusionMode::Static, p);
        ps.push_back(out.p);
        st = next;
        prev = id;
    }
    Tensor l_ag = generation_loss({ps}, {s.answer_ids});
    return {l_om, l_ag};
}

struct PrecisionGuard {
    Precision saved = precision();
    ~PrecisionGuard() { set_precision(saved); }
};

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("opinion loss matches hand-computed cross entropies") {
    Tensor onehot({3}, std::vector<double>{1.0, 0.0, 0.0});
    Tensor uniform({3}, std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3});

    CHECK(opinion_loss({onehot}, {Opinion::positive}).item() == 0.0);
    CHECK(opinion_loss({uniform}, {Opinion::neutral}).item() ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // the batch form sums, so the confident sample adds nothing
    CHECK(opinion_loss({onehot, uniform}, {Opinion::positive, Opinion::negative}).item() ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));

    SUBCASE("a zero probability at the label is clamped and counted") {
        Tensor wrong({3}, std::vector<double>{0.0, 1.0, 0.0});
        long clamps = 0;
        Tensor l = opinion_loss({wrong}, {Opinion::positive}, &clamps);
        CHECK(l.item() == doctest::Approx(12.0 * std::log(10.0)).epsilon(1e-12));
        CHECK(clamps == 1);
    }

    SUBCASE("shape mistakes throw") {
        CHECK_THROWS(opinion_loss({}, {}));
        CHECK_THROWS(opinion_loss({onehot}, {Opinion::positive, Opinion::negative}));
    }
}

TEST_CASE("generation loss averages per-step surprisal") {
    // p(target) = 1/2 then 1/4 over a four-word vocabulary
    Tensor s1({4}, std::vector<double>{0.25, 0.5, 0.125, 0.125});
    Tensor s2({4}, std::vector<double>{0.25, 0.25, 0.25, 0.25});
    std::vector<std::vector<Tensor>> steps = {{s1, s2}};
    std::vector<std::vector<int>> targets = {{1, 2}};
    CHECK(generation_loss(steps, targets).item() ==
          doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-12));

    SUBCASE("a perfect sample contributes zero and the batch averages") {
        Tensor sure({4}, std::vector<double>{0.0, 1.0, 0.0, 0.0});
        std::vector<std::vector<Tensor>> batch = {{s1, s2}, {sure}};
        std::vector<std::vector<int>> ids = {{1, 2}, {1}};
        long clamps = 0;
        CHECK(generation_loss(batch, ids, &clamps).item() ==
              doctest::Approx(0.75 * std::log(2.0)).epsilon(1e-12));
        CHECK(clamps == 0);  // zeros off the target are never selected
    }

    SUBCASE("a zero probability at the target is clamped and counted") {
        Tensor dead({4}, std::vector<double>{1.0, 0.0, 0.0, 0.0});
        long clamps = 0;
        Tensor l = generation_loss({{dead}}, {{2}}, &clamps);
        CHECK(l.item() == doctest::Approx(12.0 * std::log(10.0)).epsilon(1e-12));
        CHECK(clamps == 1);
    }

    SUBCASE("shape mistakes throw") {
        CHECK_THROWS(generation_loss({}, {}));
        CHECK_THROWS(generation_loss({{s1}}, {{1, 2}}));
        CHECK_THROWS(generation_loss({{}}, {{}}));
    }
}

TEST_CASE("joint loss weighs the generator term by lambda") {
    Tensor om = Tensor::scalar(1.0);
    Tensor ag = Tensor::scalar(2.0);
    CHECK(joint_loss(om, ag, 5.0).item() == 11.0);
    CHECK(joint_loss(om, ag, 0.0).item() == 1.0);
    CHECK(joint_loss(om, Tensor::scalar(0.0), 5.0).item() == 1.0);
}

TEST_CASE("joint gradient is the sum of per-task gradients") {
    TrainConfig cfg = tiny_config();
    std::mt19937_64 rng(303);
    ModelParams p = init_params(cfg.model_config(kTinyVocab), rng);
    QASample sample = tiny_dataset()[0];
    const double lambda = 5.0;

    auto run = [&](int which) {
        Tape tape;
        {
            TapeScope scope(tape);
            auto [l_om, l_ag] = forward_losses(sample, p);
            Tensor loss = which == 0   ? l_om
                          : which == 1 ? l_ag
                                       : joint_loss(l_om, l_ag, lambda);
            tape.backward(loss);
        }
        auto g = grads_of(p);
        zero_grads(p);
        return g;
    };

    auto g_om = run(0);
    auto g_ag = run(1);
    auto g_joint = run(2);

    double largest = 0.0;
    for (const auto& [name, gj] : g_joint) {
        const std::vector<double>& go = g_om.at(name);
        const std::vector<double>& ga = g_ag.at(name);
        for (std::size_t i = 0; i < gj.size(); ++i) {
            const double want = go[i] + lambda * ga[i];
            INFO("param " << name << " [" << i << "]");
            CHECK(std::abs(gj[i] - want) <= 1e-9 * std::max(1.0, std::abs(want)));
            largest = std::max(largest, std::abs(gj[i]));
        }
    }
    CHECK(largest > 0.0);  // the comparison actually saw gradient flow
}

TEST_CASE("adagrad follows the accumulator recipe") {
    TrainConfig cfg = tiny_config();
    std::mt19937_64 rng(17);
    ModelParams p = init_params(cfg.model_config(kTinyVocab), rng);
    AdagradState st = make_adagrad_state(p, 0.1);
    auto before = values_of(p);

    SUBCASE("first unit-gradient step moves by lr over root accumulator") {
        fill_grad(p.cls_b, 1.0);
        long skipped = 0;
        CHECK(adagrad_step(p, st, 0.15, 1e-10, &skipped));
        CHECK(skipped == 0);

        const double delta = 0.15 / (std::sqrt(1.1) + 1e-10);
        const std::vector<double>& after = p.cls_b.values();
        for (std::size_t i = 0; i < after.size(); ++i) {
            CHECK(before.at("cls_b")[i] - after[i] == doctest::Approx(delta).epsilon(1e-12));
            CHECK(after[i] - before.at("cls_b")[i] == doctest::Approx(-0.14302).epsilon(1e-4));
        }
        for (double acc : st.acc.at("cls_b")) CHECK(acc == doctest::Approx(1.1).epsilon(1e-15));

        // nothing without a gradient moved
        auto now = values_of(p);
        for (const auto& [name, vals] : now)
            if (name != "cls_b") CHECK(vals == before.at(name));

        SUBCASE("an equal second step is strictly smaller") {
            auto mid = values_of(p);
            CHECK(adagrad_step(p, st, 0.15));
            const double delta2 = 0.15 / (std::sqrt(2.1) + 1e-10);
            const std::vector<double>& last = p.cls_b.values();
            for (std::size_t i = 0; i < last.size(); ++i) {
                CHECK(mid.at("cls_b")[i] - last[i] == doctest::Approx(delta2).epsilon(1e-12));
                CHECK(delta2 < delta);
            }
        }
    }

    SUBCASE("zero gradients leave values and accumulators alone") {
        fill_grad(p.cls_w, 0.0);
        CHECK(adagrad_step(p, st, 0.15));
        CHECK(values_of(p) == before);
        for (double acc : st.acc.at("cls_w")) CHECK(acc == 0.1);
    }

    SUBCASE("a non-finite gradient anywhere skips the whole update") {
        fill_grad(p.cls_b, 1.0);
        fill_grad(p.cls_w, 0.0);
        p.cls_w.grad()[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK(!std::isfinite(global_grad_norm(p)));

        long skipped = 0;
        CHECK(!adagrad_step(p, st, 0.15, 1e-10, &skipped));
        CHECK(skipped == 1);
        CHECK(values_of(p) == before);  // even the healthy tensor stayed put
        for (double acc : st.acc.at("cls_b")) CHECK(acc == 0.1);

        p.cls_w.grad()[0] = std::numeric_limits<double>::infinity();
        CHECK(!adagrad_step(p, st, 0.15, 1e-10, &skipped));
        CHECK(skipped == 2);
        CHECK(values_of(p) == before);
    }
}

TEST_CASE("clipping rescales oversized gradients without turning them") {
    TrainConfig cfg = tiny_config();
    std::mt19937_64 rng(23);
    ModelParams p = init_params(cfg.model_config(kTinyVocab), rng);

    fill_grad(p.cls_b, 0.0);
    p.cls_b.grad() = {3.0, 4.0, 0.0};
    CHECK(global_grad_norm(p) == doctest::Approx(5.0).epsilon(1e-15));

    SUBCASE("above the threshold") {
        CHECK(clip_gradients(p, 2.0) == doctest::Approx(5.0).epsilon(1e-15));
        const std::vector<double>& g = p.cls_b.grad();
        CHECK(g[0] == doctest::Approx(1.2).epsilon(1e-12));
        CHECK(g[1] == doctest::Approx(1.6).epsilon(1e-12));
        CHECK(g[2] == 0.0);
        CHECK(g[0] / 3.0 == doctest::Approx(g[1] / 4.0).epsilon(1e-12));  // same direction
        CHECK(global_grad_norm(p) == doctest::Approx(2.0).epsilon(1e-12));
    }

    SUBCASE("below the threshold nothing changes") {
        p.cls_b.grad() = {0.3, 0.4, 0.0};
        CHECK(clip_gradients(p, 2.0) == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(p.cls_b.grad() == std::vector<double>{0.3, 0.4, 0.0});
    }

    SUBCASE("the norm spans every tensor") {
        fill_grad(p.cls_w, 0.0);
        p.cls_w.grad()[0] = 12.0;
        CHECK(global_grad_norm(p) == doctest::Approx(13.0).epsilon(1e-12));
    }

    CHECK_THROWS(clip_gradients(p, 0.0));
}

TEST_CASE("f32 mode rounds updated parameters through float storage") {
    PrecisionGuard guard;
    set_precision(Precision::f32);

    TrainConfig cfg = tiny_config();
    std::mt19937_64 rng(29);
    ModelParams p = init_params(cfg.model_config(kTinyVocab), rng);
    AdagradState st = make_adagrad_state(p, 0.1);
    auto before = values_of(p);

    fill_grad(p.cls_b, 1.0);
    CHECK(adagrad_step(p, st, 0.15));
    const std::vector<double>& after = p.cls_b.values();
    for (std::size_t i = 0; i < after.size(); ++i) {
        CHECK(after[i] == static_cast<double>(static_cast<float>(after[i])));
        const double unrounded = before.at("cls_b")[i] - 0.15 / (std::sqrt(1.1) + 1e-10);
        CHECK(after[i] == static_cast<double>(static_cast<float>(unrounded)));
    }
}

TEST_CASE("train config validation rejects bad settings") {
    TrainConfig good = tiny_config();
    CHECK_NOTHROW(good.validate());

    TrainConfig bad = good;
    bad.dropout = 1.0;
    CHECK_THROWS(bad.validate());
    bad = good;
    bad.learning_rate = 0.0;
    CHECK_THROWS(bad.validate());
    bad = good;
    bad.batch_size = 0;
    CHECK_THROWS(bad.validate());
    bad = good;
    bad.epochs = -1;
    CHECK_THROWS(bad.validate());
    bad = good;
    bad.epochs = 0;  // legal: train() returns the untouched starting point
    CHECK_NOTHROW(bad.validate());
    bad = good;
    bad.lambda = -1.0;
    CHECK_THROWS(bad.validate());
    bad = good;
    bad.grad_clip_norm = 0.0;
    CHECK_THROWS(bad.validate());
    bad = good;
    bad.precision = "f16";
    CHECK_THROWS(bad.validate());

    CHECK(precision_from_string("f64") == Precision::f64);
    CHECK(precision_from_string("f32") == Precision::f32);
    CHECK_THROWS(precision_from_string("double"));
}

TEST_CASE("a fixed seed reproduces the run bit for bit") {
    TrainConfig cfg = tiny_config();
    cfg.dropout = 0.5;
    cfg.seed = 11;
    std::vector<QASample> data = tiny_dataset();

    Checkpoint a = train(data, kTinyVocab, cfg);
    Checkpoint b = train(data, kTinyVocab, cfg);

    REQUIRE(a.history.size() == 2);
    REQUIRE(b.history.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a.history[i].l_om == b.history[i].l_om);
        CHECK(a.history[i].l_ag == b.history[i].l_ag);
        CHECK(a.history[i].l == b.history[i].l);
        CHECK(std::isfinite(a.history[i].l));
        CHECK(a.history[i].skipped_batches == 0);
        CHECK(a.history[i].wall_time_s == 0.0);  // deterministic_log
    }
    CHECK(values_of(a.params) == values_of(b.params));
    CHECK(a.opt.acc == b.opt.acc);

    cfg.seed = 12;
    Checkpoint c = train(data, kTinyVocab, cfg);
    CHECK(values_of(c.params) != values_of(a.params));
}

TEST_CASE("lambda zero trains only the opinion path") {
    TrainConfig cfg = tiny_config();
    cfg.lambda = 0.0;
    cfg.dropout = 0.0;
    cfg.seed = 5;
    std::vector<QASample> data = tiny_dataset();

    Checkpoint ck = train(data, kTinyVocab, cfg);
    std::mt19937_64 rng(cfg.seed);
    ModelParams fresh = init_params(cfg.model_config(kTinyVocab), rng);
    auto init_vals = values_of(fresh);
    auto out_vals = values_of(ck.params);

    // everything reachable only through the answer head must sit at its
    // initialization, down to the last bit
    const char* frozen[] = {
        "decoder.w_input", "decoder.w_hidden", "decoder.bias",
        "init_hidden_w", "init_hidden_b", "init_cell_w", "init_cell_b",
        "attn_question.w_key", "attn_question.w_state", "attn_question.bias",
        "attn_question.vec", "attn_review.w_key", "attn_review.w_state",
        "attn_review.bias", "attn_review.vec", "fusion.w_key", "fusion.w_state",
        "fusion.bias", "fusion.vec", "out_w1", "out_b1", "vocab_w2", "vocab_b2",
        "view_w", "view_b"};
    for (const char* name : frozen) {
        INFO("param " << name);
        CHECK(out_vals.at(name) == init_vals.at(name));
        for (double acc : ck.opt.acc.at(name)) CHECK(acc == cfg.accumulator_init);
    }

    CHECK(out_vals.at("cls_w") != init_vals.at("cls_w"));
    CHECK(out_vals.at("embedding") != init_vals.at("embedding"));
}

TEST_CASE("checkpoints round trip through disk") {
    TrainConfig cfg = tiny_config();
    cfg.dropout = 0.5;
    cfg.seed = 11;
    std::vector<QASample> data = tiny_dataset();
    Checkpoint ck = train(data, kTinyVocab, cfg);

    const std::string path = temp_path("oaag_test_ckpt.json");
    save_checkpoint(path, ck);
    Checkpoint back = load_checkpoint(path);
    std::filesystem::remove(path);

    CHECK(values_of(back.params) == values_of(ck.params));
    CHECK(back.opt.acc == ck.opt.acc);
    CHECK(back.epoch == ck.epoch);
    REQUIRE(back.history.size() == ck.history.size());
    for (std::size_t i = 0; i < ck.history.size(); ++i) {
        CHECK(back.history[i].epoch == ck.history[i].epoch);
        CHECK(back.history[i].l_om == ck.history[i].l_om);
        CHECK(back.history[i].l_ag == ck.history[i].l_ag);
        CHECK(back.history[i].l == ck.history[i].l);
        CHECK(back.history[i].clamp_events == ck.history[i].clamp_events);
    }
    CHECK(back.config.learning_rate == cfg.learning_rate);
    CHECK(back.config.seed == cfg.seed);
    CHECK(back.config.mode == cfg.mode);
    CHECK(back.config.precision == cfg.precision);
    CHECK(back.model.vocab_size == kTinyVocab);
    CHECK(back.model.d_h == cfg.d_h);

    // the reloaded model behaves identically
    DatasetLosses fresh = evaluate_losses(data, ck.params, cfg.mode);
    DatasetLosses loaded = evaluate_losses(data, back.params, cfg.mode);
    CHECK(fresh.l_om == loaded.l_om);
    CHECK(fresh.l_ag == loaded.l_ag);
    CHECK(fresh.opinion_accuracy == loaded.opinion_accuracy);

    SUBCASE("unreadable checkpoints throw") {
        CHECK_THROWS(load_checkpoint(temp_path("oaag_no_such_ckpt.json")));
        const std::string junk = temp_path("oaag_junk_ckpt.json");
        std::ofstream(junk) << "not a checkpoint";
        CHECK_THROWS(load_checkpoint(junk));
        std::filesystem::remove(junk);
    }
}

TEST_CASE("resuming from a checkpoint matches the uninterrupted run") {
    TrainConfig cfg = tiny_config();
    cfg.dropout = 0.5;
    cfg.seed = 11;
    cfg.epochs = 4;
    std::vector<QASample> data = tiny_dataset();

    Checkpoint straight = train(data, kTinyVocab, cfg);

    TrainConfig half = cfg;
    half.epochs = 2;
    Checkpoint part = train(data, kTinyVocab, half);
    const std::string path = temp_path("oaag_test_resume.json");
    save_checkpoint(path, part);
    Checkpoint loaded = load_checkpoint(path);
    std::filesystem::remove(path);

    Checkpoint resumed = train(data, kTinyVocab, cfg, nullptr, &loaded);
    CHECK(resumed.epoch == 4);
    REQUIRE(resumed.history.size() == 4);
    CHECK(values_of(resumed.params) == values_of(straight.params));
    CHECK(resumed.opt.acc == straight.opt.acc);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(resumed.history[i].l_om == straight.history[i].l_om);
        CHECK(resumed.history[i].l_ag == straight.history[i].l_ag);
    }
}

TEST_CASE("epoch callback and train log record every epoch") {
    TrainConfig cfg = tiny_config();
    cfg.dropout = 0.0;
    cfg.seed = 2;
    cfg.epochs = 3;
    std::vector<QASample> data = tiny_dataset();

    const std::string path = temp_path("oaag_test_train_log.jsonl");
    std::filesystem::remove(path);

    std::vector<EpochStats> seen;
    train(data, kTinyVocab, cfg, [&](const Checkpoint& ck, const EpochStats& s) {
        CHECK(ck.epoch == s.epoch);
        seen.push_back(s);
        append_train_log(path, s);
    });

    REQUIRE(seen.size() == 3);
    for (std::size_t i = 0; i < seen.size(); ++i) {
        CHECK(seen[i].epoch == static_cast<int>(i) + 1);
        CHECK(seen[i].l == seen[i].l_om + cfg.lambda * seen[i].l_ag);
    }

    std::ifstream log(path);
    REQUIRE(log.good());
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        const nlohmann::json j = nlohmann::json::parse(line);
        ++lines;
        CHECK(j.at("epoch").get<int>() == lines);
        CHECK(j.contains("l_om"));
        CHECK(j.contains("l_ag"));
        CHECK(j.contains("l"));
        CHECK(j.contains("clamp_events"));
        CHECK(j.contains("skipped_batches"));
        CHECK(j.contains("fusion_fallbacks"));
        CHECK(j.contains("wall_time_s"));
    }
    CHECK(lines == 3);
    std::filesystem::remove(path);
}

TEST_CASE("evaluate_losses reports dropout-free dataset metrics") {
    TrainConfig cfg = tiny_config();
    std::mt19937_64 rng(41);
    ModelParams p = init_params(cfg.model_config(kTinyVocab), rng);
    std::vector<QASample> data = tiny_dataset();

    DatasetLosses once = evaluate_losses(data, p, FusionMode::Static);
    DatasetLosses twice = evaluate_losses(data, p, FusionMode::Static);
    CHECK(once.l_om == twice.l_om);  // no hidden randomness
    CHECK(once.l_ag == twice.l_ag);
    CHECK(once.opinion_accuracy == twice.opinion_accuracy);

    CHECK(once.l_om > 0.0);
    CHECK(once.l_ag > 0.0);
    CHECK(once.opinion_accuracy >= 0.0);
    CHECK(once.opinion_accuracy <= 1.0);
    CHECK_THROWS(evaluate_losses({}, p, FusionMode::Static));
}
