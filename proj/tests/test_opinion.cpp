#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oaag/opinion.hpp"

using namespace oaag;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 8;
    cfg.emb_dim = 4;
    cfg.d_h = 4;
    cfg.d_a = 4;
    cfg.num_reviews = 3;
    return cfg;
}

ModelParams tiny_params(unsigned seed = 17) {
    std::mt19937_64 rng(seed);
    return init_params(tiny_config(), rng);
}

Tensor random_vec(int n, std::mt19937_64& rng, bool rg = false) {
    Tensor t({n}, 0.0, rg);
    for (double& v : t.values()) v = uniform_in(rng, -1.0, 1.0);
    return t;
}

std::vector<double> softmax_plain(std::vector<double> s) {
    double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double& x : s) {
        x = std::exp(x - mx);
        z += x;
    }
    for (double& x : s) x /= z;
    return s;
}

}  // namespace

TEST_CASE("rating indicators and augmentation") {
    Tensor five = rating_one_hot(5);
    CHECK(five.values() == std::vector<double>{0, 0, 0, 0, 1});
    Tensor absent = rating_one_hot(0);
    CHECK(absent.values() == std::vector<double>{0, 0, 0, 0, 0});

    Tensor m_zero = Tensor::zeros({8});
    Tensor a = augment(m_zero, 1);
    REQUIRE(a.shape() == std::vector<int>{13});
    std::vector<double> want(13, 0.0);
    want[8] = 1.0;
    CHECK(a.values() == want);

    Tensor a_absent = augment(m_zero, 0);
    CHECK(a_absent.values() == std::vector<double>(13, 0.0));

    CHECK_THROWS_WITH_AS(rating_one_hot(6), doctest::Contains("outside 1..5"),
                         std::runtime_error);
    CHECK_THROWS_AS(augment(m_zero, -1), std::runtime_error);
}

TEST_CASE("self_match degenerate cases") {
    ModelParams p = tiny_params();
    std::mt19937_64 rng(23);

    SUBCASE("a single review takes all the weight") {
        Tensor m1 = random_vec(13, rng);
        auto [beta, o_hat] = self_match({m1}, {false}, p);
        CHECK(beta.values() == std::vector<double>{1.0});
        for (int i = 0; i < 13; ++i)
            CHECK(o_hat.values()[i] == doctest::Approx(m1.values()[i]).epsilon(1e-12));
    }

    SUBCASE("identical reviews split the weight evenly") {
        Tensor m1 = random_vec(13, rng);
        Tensor m2(m1.shape(), m1.values());
        Tensor m3(m1.shape(), m1.values());
        auto [beta, o_hat] = self_match({m1, m2, m3}, {false, false, false}, p);
        for (double b : beta.values()) CHECK(b == doctest::Approx(1.0 / 3).epsilon(1e-12));

        // identical scores still split evenly when one copy is masked out
        auto [beta_pad, o_pad] = self_match({m1, m2, m3}, {false, true, false}, p);
        CHECK(beta_pad.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(beta_pad.values()[1] == 0.0);
        CHECK(beta_pad.values()[2] == doctest::Approx(0.5).epsilon(1e-12));
    }

    SUBCASE("all reviews padded is an error") {
        Tensor m1 = random_vec(13, rng);
        CHECK_THROWS_WITH_AS(self_match({m1}, {true}, p),
                             doctest::Contains("all reviews padded"), std::runtime_error);
    }
}

TEST_CASE("self_match agrees with a plain-loop evaluation") {
    ModelParams p = tiny_params(31);
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Tensor> m_hats = {random_vec(13, rng), random_vec(13, rng),
                                      random_vec(13, rng)};
        auto [beta, o_hat] = self_match(m_hats, {false, false, false}, p);

        const Tensor& w = p.opinion_attn_w;    // 4 × 13
        const Tensor& omega = p.opinion_attn_vec;
        std::vector<double> scores(3, 0.0);
        for (int k = 0; k < 3; ++k) {
            for (int a = 0; a < 4; ++a) {
                double dot = 0.0;
                for (int d = 0; d < 13; ++d) dot += w.at({a, d}) * m_hats[k].values()[d];
                scores[static_cast<std::size_t>(k)] += omega.values()[a] * std::tanh(dot);
            }
        }
        std::vector<double> want_beta = softmax_plain(scores);
        for (int k = 0; k < 3; ++k)
            CHECK(beta.values()[k] == doctest::Approx(want_beta[k]).epsilon(1e-12));
        for (int d = 0; d < 13; ++d) {
            double want = 0.0;
            for (int k = 0; k < 3; ++k) want += want_beta[k] * m_hats[k].values()[d];
            CHECK(o_hat.values()[d] == doctest::Approx(want).epsilon(1e-10));
        }
    }
}

TEST_CASE("classify matches direct softmax of the affine logits") {
    ModelParams p = tiny_params(41);

    for (auto& v : p.cls_w.values()) v = 0.0;
    for (auto& v : p.cls_b.values()) v = 0.0;
    Tensor o_hat = Tensor::zeros({13});
    Tensor flat = classify(o_hat, p);
    for (double v : flat.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    p.cls_b.values() = {10.0, 0.0, -10.0};
    Tensor skew = classify(o_hat, p);
    CHECK(skew.values()[0] > skew.values()[1]);
    CHECK(skew.values()[1] > skew.values()[2]);
    CHECK(static_cast<Opinion>(0) == Opinion::positive);

    std::mt19937_64 rng(43);
    ModelParams q = tiny_params(47);
    Tensor o2 = random_vec(13, rng);
    Tensor got = classify(o2, q);
    std::vector<double> logits(3, 0.0);
    for (int c = 0; c < 3; ++c) {
        logits[static_cast<std::size_t>(c)] = q.cls_b.values()[c];
        for (int d = 0; d < 13; ++d)
            logits[static_cast<std::size_t>(c)] += q.cls_w.at({c, d}) * o2.values()[d];
    }
    std::vector<double> want = softmax_plain(logits);
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        CHECK(got.values()[c] == doctest::Approx(want[c]).epsilon(1e-12));
        total += got.values()[c];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("blended memory stays inside the review hull") {
    ModelParams p = tiny_params(53);
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Tensor> m_hats;
        for (int k = 0; k < 4; ++k) m_hats.push_back(random_vec(13, rng));
        std::vector<bool> pads = {false, false, true, false};
        auto [beta, o_hat] = self_match(m_hats, pads, p);
        CHECK(beta.values()[2] == 0.0);
        for (int d = 0; d < 13; ++d) {
            double lo = 1e300, hi = -1e300;
            for (int k = 0; k < 4; ++k) {
                if (pads[static_cast<std::size_t>(k)]) continue;
                lo = std::min(lo, m_hats[static_cast<std::size_t>(k)].values()[d]);
                hi = std::max(hi, m_hats[static_cast<std::size_t>(k)].values()[d]);
            }
            CHECK(o_hat.values()[d] >= lo - 1e-12);
            CHECK(o_hat.values()[d] <= hi + 1e-12);
        }
    }
}

TEST_CASE("review order permutes beta and leaves the memory alone") {
    ModelParams p = tiny_params(61);
    std::mt19937_64 rng(67);
    std::vector<Tensor> m_ks = {random_vec(8, rng), random_vec(8, rng), random_vec(8, rng)};
    std::vector<int> ratings = {5, 0, 2};
    std::vector<bool> pads = {false, false, false};

    OpinionState base = run_opinion(m_ks, ratings, pads, p);
    OpinionState perm = run_opinion({m_ks[2], m_ks[0], m_ks[1]}, {2, 5, 0}, pads, p);

    CHECK(perm.beta.values()[0] == doctest::Approx(base.beta.values()[2]).epsilon(1e-12));
    CHECK(perm.beta.values()[1] == doctest::Approx(base.beta.values()[0]).epsilon(1e-12));
    CHECK(perm.beta.values()[2] == doctest::Approx(base.beta.values()[1]).epsilon(1e-12));
    for (int d = 0; d < 13; ++d)
        CHECK(perm.o_hat.values()[d] == doctest::Approx(base.o_hat.values()[d]).epsilon(1e-10));
    for (int c = 0; c < 3; ++c)
        CHECK(perm.p_o.values()[c] == doctest::Approx(base.p_o.values()[c]).epsilon(1e-10));
}

TEST_CASE("attention-through-classifier gradient survives finite differences") {
    ModelParams p = tiny_params(71);
    std::mt19937_64 rng(73);
    std::vector<Tensor> m_ks = {random_vec(8, rng, true), random_vec(8, rng, true),
                                random_vec(8, rng, true)};
    Tensor probe_o = random_vec(13, rng);
    Tensor probe_p = random_vec(3, rng);

    auto f = [&]() {
        OpinionState st = run_opinion(m_ks, {4, 0, 1}, {false, false, false}, p);
        return add(sum_all(mul(st.o_hat, probe_o)), sum_all(mul(st.p_o, probe_p)));
    };
    std::vector<Tensor> inputs = {m_ks[0], m_ks[1], m_ks[2], p.opinion_attn_w,
                                  p.opinion_attn_vec, p.cls_w, p.cls_b};
    CHECK(grad_check(f, inputs) < 1e-5);
}
