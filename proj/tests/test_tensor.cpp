#include <doctest.h>

#include <cmath>

#include "fdwm/gradcheck.hpp"
#include "fdwm/nn.hpp"
#include "fdwm/optim.hpp"
#include "fdwm/rng.hpp"
#include "fdwm/tape.hpp"

using namespace fdwm;

namespace {
Tensor<double> randn_d(std::vector<int> shape, uint64_t seed) {
    Rng rng(seed);
    return Tensor<double>::randn(std::move(shape), rng);
}
}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel") {
    Tape<double> g;
    auto x = g.leaf(randn_d({2, 1, 4, 5}, 1));
    auto w = g.leaf(Tensor<double>::full({1, 1, 1, 1}, 1.0));
    auto b = g.leaf(Tensor<double>::zeros({1}));
    auto y = g.conv2d(x, w, b, 1, 0);
    REQUIRE(g.value(y).shape == g.value(x).shape);
    for (int64_t i = 0; i < g.value(x).numel(); ++i)
        CHECK(g.value(y).data[i] == doctest::Approx(g.value(x).data[i]).epsilon(1e-14));
}

TEST_CASE("conv2d: 3x3 ones kernel on constant input, direct summation oracle") {
    const int h = 6, w = 7;
    Tape<double> g;
    auto x = g.leaf(Tensor<double>::full({1, 1, h, w}, 2.0));
    auto k = g.leaf(Tensor<double>::full({1, 1, 3, 3}, 1.0));
    auto b = g.leaf(Tensor<double>::zeros({1}));
    auto y = g.conv2d(x, k, b, 1, 1);
    const auto& out = g.value(y);
    // interior: 9 taps * 2.0 = 18, corner: 4 taps * 2.0 = 8
    CHECK(out.at4(0, 0, 2, 3) == doctest::Approx(18.0));
    CHECK(out.at4(0, 0, 0, 0) == doctest::Approx(8.0));
    CHECK(out.at4(0, 0, h - 1, w - 1) == doctest::Approx(8.0));

    // independent direct-summation oracle over every output pixel
    for (int oy = 0; oy < h; ++oy)
        for (int ox = 0; ox < w; ++ox) {
            double want = 0.0;
            for (int ky = -1; ky <= 1; ++ky)
                for (int kx = -1; kx <= 1; ++kx) {
                    int iy = oy + ky, ix = ox + kx;
                    if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                    want += 2.0;
                }
            CHECK(out.at4(0, 0, oy, ox) == doctest::Approx(want));
        }
}

TEST_CASE("conv2d: strided shape arithmetic") {
    Tape<double> g;
    auto x = g.leaf(randn_d({1, 3, 32, 32}, 2));
    auto w = g.leaf(randn_d({8, 3, 3, 3}, 3));
    auto b = g.leaf(Tensor<double>::zeros({8}));
    auto y = g.conv2d(x, w, b, 2, 1);
    CHECK(g.value(y).shape == std::vector<int>{1, 8, 16, 16});
}

TEST_CASE("conv2d: channel mismatch is a contract violation") {
    Tape<double> g;
    auto x = g.leaf(randn_d({1, 3, 8, 8}, 4));
    auto w = g.leaf(randn_d({4, 2, 3, 3}, 5));
    auto b = g.leaf(Tensor<double>::zeros({4}));
    CHECK_THROWS_AS(g.conv2d(x, w, b, 1, 1), std::invalid_argument);
}

TEST_CASE("conv2d: same-padding preserves extents for odd kernels") {
    for (int k : {1, 3, 5}) {
        Tape<double> g;
        auto x = g.leaf(randn_d({2, 2, 11, 9}, 100 + static_cast<uint64_t>(k)));
        auto w = g.leaf(randn_d({3, 2, k, k}, 200 + static_cast<uint64_t>(k)));
        auto b = g.leaf(Tensor<double>::zeros({3}));
        auto y = g.conv2d(x, w, b, 1, (k - 1) / 2);
        CHECK(g.value(y).dim(2) == 11);
        CHECK(g.value(y).dim(3) == 9);
    }
}

TEST_CASE("cross_attention: single context token gets weight exactly 1") {
    // softmax over one element is 1, so out = tokens + (ctx Wv) Wo per row
    const int n = 3, c = 4, dc = 5;
    Tape<double> g;
    Tensor<double> tok_t = randn_d({1, n, c}, 11);
    Tensor<double> ctx_t = randn_d({1, 1, dc}, 12);
    Tensor<double> wq_t = randn_d({c, c}, 13), wk_t = randn_d({dc, c}, 14);
    Tensor<double> wv_t = randn_d({dc, c}, 15), wo_t = randn_d({c, c}, 16);
    auto out = cross_attention(g, g.leaf(tok_t), g.leaf(ctx_t), g.leaf(wq_t), g.leaf(wk_t),
                               g.leaf(wv_t), g.leaf(wo_t));
    // straight-line recomputation
    std::vector<double> v(static_cast<size_t>(c), 0.0);
    for (int j = 0; j < c; ++j)
        for (int e = 0; e < dc; ++e) v[static_cast<size_t>(j)] += ctx_t.data[static_cast<size_t>(e)] * wv_t.data[static_cast<size_t>(e) * c + j];
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            double mixed = 0.0;
            for (int e = 0; e < c; ++e) mixed += v[static_cast<size_t>(e)] * wo_t.data[static_cast<size_t>(e) * c + j];
            double want = tok_t.data[static_cast<size_t>(i) * c + j] + mixed;
            CHECK(g.value(out).data[static_cast<size_t>(i) * c + j] ==
                  doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("cross_attention: identical context tokens behave as one") {
    const int n = 2, c = 4, dc = 3;
    Tensor<double> tok = randn_d({1, n, c}, 21);
    Tensor<double> one = randn_d({1, 1, dc}, 22);
    Tensor<double> two({1, 2, dc});
    for (int r = 0; r < 2; ++r)
        for (int e = 0; e < dc; ++e) two.data[static_cast<size_t>(r) * dc + e] = one.data[static_cast<size_t>(e)];
    Tensor<double> wq = randn_d({c, c}, 23), wk = randn_d({dc, c}, 24);
    Tensor<double> wv = randn_d({dc, c}, 25), wo = randn_d({c, c}, 26);

    Tape<double> g1, g2;
    auto o1 = cross_attention(g1, g1.leaf(tok), g1.leaf(one), g1.leaf(wq), g1.leaf(wk), g1.leaf(wv),
                              g1.leaf(wo));
    auto o2 = cross_attention(g2, g2.leaf(tok), g2.leaf(two), g2.leaf(wq), g2.leaf(wk), g2.leaf(wv),
                              g2.leaf(wo));
    for (int64_t i = 0; i < g1.value(o1).numel(); ++i)
        CHECK(g1.value(o1).data[i] == doctest::Approx(g2.value(o2).data[i]).epsilon(1e-12));
}

TEST_CASE("cross_attention: hand-sized independent matrix oracle") {
    // N=2, M=2, d=2 straight-line recomputation
    const int n = 2, m = 2, c = 2, dc = 2;
    Tensor<double> tok = randn_d({1, n, c}, 31);
    Tensor<double> ctx = randn_d({1, m, dc}, 32);
    Tensor<double> wq = randn_d({c, c}, 33), wk = randn_d({dc, c}, 34);
    Tensor<double> wv = randn_d({dc, c}, 35), wo = randn_d({c, c}, 36);

    auto matmul_rm = [](const std::vector<double>& a, const std::vector<double>& b, int ra, int ca,
                        int cb) {
        std::vector<double> o(static_cast<size_t>(ra) * cb, 0.0);
        for (int i = 0; i < ra; ++i)
            for (int j = 0; j < cb; ++j)
                for (int k = 0; k < ca; ++k)
                    o[static_cast<size_t>(i) * cb + j] +=
                        a[static_cast<size_t>(i) * ca + k] * b[static_cast<size_t>(k) * cb + j];
        return o;
    };
    auto q = matmul_rm(tok.data, wq.data, n, c, c);
    auto kk = matmul_rm(ctx.data, wk.data, m, dc, c);
    auto vv = matmul_rm(ctx.data, wv.data, m, dc, c);
    std::vector<double> att(static_cast<size_t>(n) * m);
    for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int j = 0; j < m; ++j) {
            double s = 0.0;
            for (int e = 0; e < c; ++e)
                s += q[static_cast<size_t>(i) * c + e] * kk[static_cast<size_t>(j) * c + e];
            att[static_cast<size_t>(i) * m + j] = s / std::sqrt(static_cast<double>(c));
            mx = std::max(mx, att[static_cast<size_t>(i) * m + j]);
        }
        double sum = 0.0;
        for (int j = 0; j < m; ++j) {
            att[static_cast<size_t>(i) * m + j] = std::exp(att[static_cast<size_t>(i) * m + j] - mx);
            sum += att[static_cast<size_t>(i) * m + j];
        }
        for (int j = 0; j < m; ++j) att[static_cast<size_t>(i) * m + j] /= sum;
    }
    auto av = matmul_rm(att, vv, n, m, c);
    auto mixed = matmul_rm(av, wo.data, n, c, c);

    Tape<double> g;
    auto out = cross_attention(g, g.leaf(tok), g.leaf(ctx), g.leaf(wq), g.leaf(wk), g.leaf(wv),
                               g.leaf(wo));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            CHECK(g.value(out).data[static_cast<size_t>(i) * c + j] ==
                  doctest::Approx(tok.data[static_cast<size_t>(i) * c + j] +
                                  mixed[static_cast<size_t>(i) * c + j])
                      .epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    Tape<double> g;
    auto y = g.softmax_last(g.leaf(randn_d({4, 6, 9}, 41)));
    const auto& v = g.value(y);
    for (int64_t r = 0; r < v.numel() / 9; ++r) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) s += v.data[r * 9 + j];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("film: identity, constant, and hand arithmetic") {
    Tape<double> g;
    Tensor<double> xt = randn_d({2, 3, 4, 4}, 51);
    auto x = g.leaf(xt);

    auto id = g.film(x, g.leaf(Tensor<double>::full({3}, 1.0)), g.leaf(Tensor<double>::zeros({3})));
    for (int64_t i = 0; i < xt.numel(); ++i) CHECK(g.value(id).data[i] == xt.data[i]);

    auto con = g.film(x, g.leaf(Tensor<double>::zeros({3})), g.leaf(Tensor<double>::full({3}, 7.5)));
    for (int64_t i = 0; i < xt.numel(); ++i) CHECK(g.value(con).data[i] == 7.5);

    Tape<double> g2;
    auto x2 = g2.leaf(Tensor<double>::full({1, 1, 1, 1}, 0.75));
    auto y2 = g2.film(x2, g2.leaf(Tensor<double>::full({1}, 2.0)),
                      g2.leaf(Tensor<double>::full({1}, -1.0)));
    CHECK(g2.value(y2).data[0] == doctest::Approx(0.5));
}

TEST_CASE("backward: linear and quadratic closed forms") {
    Tape<double> g;
    Tensor<double> xt = randn_d({3, 4}, 61);
    xt.requires_grad = true;
    auto x = g.leaf(xt);
    auto loss = g.sum_all(x);
    g.backward(loss);
    for (int64_t i = 0; i < xt.numel(); ++i) CHECK(g.grad(x).data[i] == 1.0);

    Tape<double> g2;
    Tensor<double> x2t = Tensor<double>::full({2, 2}, 3.0);
    x2t.requires_grad = true;
    auto x2 = g2.leaf(x2t);
    auto loss2 = g2.sum_all(g2.mul(x2, x2));
    g2.backward(loss2);
    for (int64_t i = 0; i < 4; ++i) CHECK(g2.grad(x2).data[i] == doctest::Approx(6.0));
}

TEST_CASE("backward: disconnected leaf gets exactly zero gradient") {
    Tape<double> g;
    Tensor<double> xt = randn_d({2, 2}, 71);
    xt.requires_grad = true;
    Tensor<double> yt = randn_d({2, 2}, 72);
    yt.requires_grad = true;
    auto x = g.leaf(xt);
    auto y = g.leaf(yt);
    auto loss = g.sum_all(g.mul(x, x));
    g.backward(loss);
    for (int64_t i = 0; i < 4; ++i) CHECK(g.grad(y).data[i] == 0.0);
}

TEST_CASE("backward: non-scalar loss rejected") {
    Tape<double> g;
    auto x = g.leaf(randn_d({2, 2}, 81), true);
    CHECK_THROWS_AS(g.backward(x), std::invalid_argument);
}

TEST_CASE("grad_check: closed-form sum of squares") {
    auto fn = [](Tape<double>& g, Tape<double>::Id x) { return g.sum_all(g.mul(x, x)); };
    Tensor<double> p({2}, {1.0, 2.0});
    CHECK(grad_check(fn, p, 1e-5) < 1e-9);
}

TEST_CASE("grad_check: constant function and bad eps") {
    auto fn = [](Tape<double>& g, Tape<double>::Id x) {
        return g.mean_all(g.scale(x, 0.0));
    };
    Tensor<double> p = randn_d({3}, 91);
    CHECK(grad_check(fn, p, 1e-5) == 0.0);
    CHECK_THROWS_AS(grad_check(fn, p, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(grad_check(fn, p, 1.0), std::invalid_argument);
}

// gradient checks for every differentiable primitive, 5 random points each
TEST_CASE("grad_check: primitives at random double points") {
    const double tol = 1e-4, eps = 1e-5;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        // conv2d w.r.t. input, kernel, bias
        Tensor<double> cw = randn_d({3, 2, 3, 3}, seed * 1000 + 1);
        Tensor<double> cb = randn_d({3}, seed * 1000 + 2);
        Tensor<double> cx = randn_d({2, 2, 6, 5}, seed * 1000 + 3);
        Tensor<double> probe = randn_d({3, 2, 6, 4}, seed * 1000 + 4);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id x) {
                      return g.mean_all(g.conv2d(x, g.leaf(cw), g.leaf(cb), 1, 1));
                  },
                  cx, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id w) {
                      return g.mean_all(g.conv2d(g.leaf(cx), w, g.leaf(cb), 2, 1));
                  },
                  cw, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id b) {
                      return g.mean_all(g.conv2d(g.leaf(cx), g.leaf(cw), b, 1, 1));
                  },
                  cb, eps) < tol);

        // matmul both sides
        Tensor<double> ma = randn_d({4, 3}, seed * 1000 + 5);
        Tensor<double> mb = randn_d({3, 5}, seed * 1000 + 6);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id a) {
                      return g.mean_all(g.matmul(a, g.leaf(mb)));
                  },
                  ma, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id b) {
                      return g.mean_all(g.matmul(g.leaf(ma), b));
                  },
                  mb, eps) < tol);

        // group norm w.r.t. x, gamma, beta
        Tensor<double> gx = randn_d({2, 4, 3, 3}, seed * 1000 + 7);
        Tensor<double> gg = randn_d({4}, seed * 1000 + 8);
        Tensor<double> gb = randn_d({4}, seed * 1000 + 9);
        Tensor<double> weight = randn_d({2, 4, 3, 3}, seed * 1000 + 10);
        auto weighted = [&](Tape<double>& g, Tape<double>::Id y) {
            return g.mean_all(g.mul(y, g.leaf(weight)));
        };
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id x) {
                      return weighted(g, g.group_norm(x, g.leaf(gg), g.leaf(gb), 2));
                  },
                  gx, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id gamma) {
                      return weighted(g, g.group_norm(g.leaf(gx), gamma, g.leaf(gb), 2));
                  },
                  gg, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id beta) {
                      return weighted(g, g.group_norm(g.leaf(gx), g.leaf(gg), beta, 2));
                  },
                  gb, eps) < tol);

        // silu
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id x) { return g.mean_all(g.silu(x)); },
                  randn_d({3, 7}, seed * 1000 + 11), eps) < tol);

        // softmax against a fixed random weighting
        Tensor<double> sw = randn_d({4, 6}, seed * 1000 + 12);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id x) {
                      return g.mean_all(g.mul(g.softmax_last(x), g.leaf(sw)));
                  },
                  randn_d({4, 6}, seed * 1000 + 13), eps) < tol);

        // film w.r.t. every argument
        Tensor<double> fx = randn_d({2, 3, 2, 2}, seed * 1000 + 14);
        Tensor<double> fg = randn_d({3}, seed * 1000 + 15);
        Tensor<double> fb = randn_d({3}, seed * 1000 + 16);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id x) {
                      return g.mean_all(g.film(x, g.leaf(fg), g.leaf(fb)));
                  },
                  fx, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id gamma) {
                      return g.mean_all(g.film(g.leaf(fx), gamma, g.leaf(fb)));
                  },
                  fg, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id beta) {
                      return g.mean_all(g.film(g.leaf(fx), g.leaf(fg), beta));
                  },
                  fb, eps) < tol);

        // cross-attention w.r.t. tokens and all projections
        Tensor<double> tok = randn_d({2, 3, 4}, seed * 1000 + 17);
        Tensor<double> ctxt = randn_d({2, 2, 3}, seed * 1000 + 18);
        Tensor<double> wq = randn_d({4, 4}, seed * 1000 + 19);
        Tensor<double> wk = randn_d({3, 4}, seed * 1000 + 20);
        Tensor<double> wv = randn_d({3, 4}, seed * 1000 + 21);
        Tensor<double> wo = randn_d({4, 4}, seed * 1000 + 22);
        auto attn_loss = [&](Tape<double>& g, Tape<double>::Id t, Tape<double>::Id q,
                             Tape<double>::Id k, Tape<double>::Id v, Tape<double>::Id o) {
            return g.mean_all(cross_attention(g, t, g.leaf(ctxt), q, k, v, o));
        };
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id t) {
                      return attn_loss(g, t, g.leaf(wq), g.leaf(wk), g.leaf(wv), g.leaf(wo));
                  },
                  tok, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id q) {
                      return attn_loss(g, g.leaf(tok), q, g.leaf(wk), g.leaf(wv), g.leaf(wo));
                  },
                  wq, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id k) {
                      return attn_loss(g, g.leaf(tok), g.leaf(wq), k, g.leaf(wv), g.leaf(wo));
                  },
                  wk, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id v) {
                      return attn_loss(g, g.leaf(tok), g.leaf(wq), g.leaf(wk), v, g.leaf(wo));
                  },
                  wv, eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id o) {
                      return attn_loss(g, g.leaf(tok), g.leaf(wq), g.leaf(wk), g.leaf(wv), o);
                  },
                  wo, eps) < tol);

        // structural ops
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id x) {
                      return g.mean_all(g.mul(g.upsample2x(x), g.leaf(randn_d({1, 2, 6, 4}, 7))));
                  },
                  randn_d({1, 2, 3, 2}, seed * 1000 + 23), eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id x) {
                      auto t = g.to_tokens(x);
                      return g.mean_all(g.mul(g.from_tokens(t, 2, 3), x));
                  },
                  randn_d({2, 3, 2, 3}, seed * 1000 + 24), eps) < tol);
        Tensor<double> other = randn_d({2, 2, 3, 3}, seed * 1000 + 25);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id x) {
                      return g.mean_all(g.mul(g.concat_ch(x, g.leaf(other)),
                                              g.leaf(randn_d({2, 5, 3, 3}, 8))));
                  },
                  randn_d({2, 3, 3, 3}, seed * 1000 + 26), eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id e) {
                      return g.mean_all(
                          g.mul(g.add_channel_bias(g.leaf(randn_d({2, 3, 2, 2}, 9)), e),
                                g.leaf(randn_d({2, 3, 2, 2}, 10))));
                  },
                  randn_d({2, 3}, seed * 1000 + 27), eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id a) {
                      return g.mse(a, g.leaf(randn_d({3, 4}, 11)));
                  },
                  randn_d({3, 4}, seed * 1000 + 28), eps) < tol);
        CHECK(grad_check(
                  [&](Tape<double>& g, Tape<double>::Id a) {
                      return g.mean_all(g.bmm(a, g.leaf(randn_d({2, 4, 3}, 12))));
                  },
                  randn_d({2, 3, 4}, seed * 1000 + 29), eps) < tol);
    }
}

TEST_CASE("adam_step: zero gradient leaves parameters unchanged") {
    Tensor<double> p = randn_d({4}, 101);
    Tensor<double> before = p;
    auto st = AdamState<double>::like(p, 0.1, 0.0);
    adam_step(p, Tensor<double>::zeros({4}), st);
    for (int i = 0; i < 4; ++i) CHECK(p.data[static_cast<size_t>(i)] == before.data[static_cast<size_t>(i)]);
    CHECK(st.step_count == 1);
}

TEST_CASE("adam_step: first-step update is -lr with unit gradient") {
    Tensor<double> p = Tensor<double>::full({3}, 1.0);
    auto st = AdamState<double>::like(p, 0.1, 0.0);
    st.epsilon = 1e-12;
    adam_step(p, Tensor<double>::full({3}, 1.0), st);
    for (int i = 0; i < 3; ++i)
        CHECK(p.data[static_cast<size_t>(i)] == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("adam_step: decoupled weight decay scales before the moment update") {
    Tensor<double> p = Tensor<double>::full({2}, 2.0);
    auto st = AdamState<double>::like(p, 0.1, 0.01);
    adam_step(p, Tensor<double>::zeros({2}), st);
    for (int i = 0; i < 2; ++i)
        CHECK(p.data[static_cast<size_t>(i)] == doctest::Approx(2.0 * 0.999).epsilon(1e-12));
}

TEST_CASE("adam_step: shape mismatch rejected") {
    Tensor<double> p = randn_d({4}, 111);
    auto st = AdamState<double>::like(p, 0.1, 0.0);
    CHECK_THROWS_AS(adam_step(p, Tensor<double>::zeros({3}), st), std::invalid_argument);
}

TEST_CASE("tensor invariant: finite outputs from finite inputs through a mixed graph") {
    Tape<double> g;
    auto x = g.leaf(randn_d({2, 8, 8, 8}, 121));
    auto w = g.leaf(randn_d({8, 8, 3, 3}, 122));
    auto b = g.leaf(randn_d({8}, 123));
    auto gamma = g.leaf(Tensor<double>::full({8}, 1.0));
    auto beta = g.leaf(Tensor<double>::zeros({8}));
    auto y = g.silu(g.group_norm(g.conv2d(x, w, b, 1, 1), gamma, beta, 8));
    CHECK(g.value(y).all_finite());
}
