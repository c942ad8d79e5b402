#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cmota/diag.hpp"
#include "cmota/grad_check.hpp"
#include "cmota/ops.hpp"
#include "cmota/rng.hpp"
#include "oracles.hpp"

using namespace cmota;
using namespace cmota::nn;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, bool rg = false, double scale = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(s), rg);
  for (auto& v : *t.data) v = rng.next_normal() * scale;
  return t;
}

GruParams<double> random_gru(int d, Rng& rng, bool rg = false) {
  GruParams<double> p;
  p.w_update = random_tensor({d, d}, rng, rg, 0.5);
  p.u_update = random_tensor({d, d}, rng, rg, 0.5);
  p.b_update = random_tensor({d}, rng, rg, 0.5);
  p.w_reset = random_tensor({d, d}, rng, rg, 0.5);
  p.u_reset = random_tensor({d, d}, rng, rg, 0.5);
  p.b_reset = random_tensor({d}, rng, rg, 0.5);
  p.w_cand = random_tensor({d, d}, rng, rg, 0.5);
  p.u_cand = random_tensor({d, d}, rng, rg, 0.5);
  p.b_cand = random_tensor({d}, rng, rg, 0.5);
  return p;
}

GruParams<double> zero_gru(int d) {
  GruParams<double> p;
  p.w_update = Tensor<double>::zeros({d, d});
  p.u_update = Tensor<double>::zeros({d, d});
  p.b_update = Tensor<double>::zeros({d});
  p.w_reset = Tensor<double>::zeros({d, d});
  p.u_reset = Tensor<double>::zeros({d, d});
  p.b_reset = Tensor<double>::zeros({d});
  p.w_cand = Tensor<double>::zeros({d, d});
  p.u_cand = Tensor<double>::zeros({d, d});
  p.b_cand = Tensor<double>::zeros({d});
  return p;
}

}  // namespace

TEST_CASE("matmul identity and hand-computed cases") {
  auto eye = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(1);
  auto b = random_tensor({3, 4}, rng);
  auto out = matmul(eye, b);
  for (size_t i = 0; i < b.numel(); ++i) CHECK(out.at(static_cast<int>(i)) == (*b.data)[i]);

  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto ones = Tensor<double>::from({2, 1}, {1, 1});
  auto c = matmul(a, ones);
  CHECK(c.at(0, 0) == 3.0);
  CHECK(c.at(1, 0) == 7.0);

  CHECK_THROWS_AS(matmul(a, Tensor<double>::from({3, 1}, {1, 1, 1})), DimensionError);
}

TEST_CASE("matmul matches triple-loop oracle on random instances") {
  Rng rng(42);
  for (int trial = 0; trial < 120; ++trial) {
    const int m = rng.next_int(1, 6), k = rng.next_int(1, 6), n = rng.next_int(1, 6);
    auto a = random_tensor({m, k}, rng);
    auto b = random_tensor({k, n}, rng);
    auto c = matmul(a, b);
    auto ref = oracle::matmul(*a.data, *b.data, m, k, n);
    for (size_t i = 0; i < ref.size(); ++i) CHECK(std::abs((*c.data)[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("masked_softmax basics") {
  auto x = Tensor<double>::from({1, 3}, {2.5, 2.5, 2.5});
  auto s = masked_softmax(x);
  for (int j = 0; j < 3; ++j) CHECK(s.at(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  auto y = Tensor<double>::from({1, 2}, {0.0, std::log(2.0)});
  auto sy = masked_softmax(y);
  CHECK(sy.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(sy.at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  auto z = Tensor<double>::from({1, 3}, {5.0, 1.0, 9.0});
  Mask m = Mask::row_vector({1, 1, 0});
  auto sz = masked_softmax(z, 1, &m);
  CHECK(sz.at(0, 2) == 0.0);
  CHECK(sz.at(0, 0) + sz.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("masked_softmax fully masked row falls back to uniform and is flagged") {
  Diagnostics::reset();
  auto x = Tensor<double>::from({2, 4}, {1, 2, 3, 4, 4, 3, 2, 1});
  Mask m = Mask::all(2, 4, true);
  for (int j = 0; j < 4; ++j) m.at(1, j) = 0;
  auto s = masked_softmax(x, 1, &m);
  for (int j = 0; j < 4; ++j) CHECK(s.at(1, j) == doctest::Approx(0.25));
  CHECK(Diagnostics::degenerate_softmax_rows() == 1);
  double row0 = 0;
  for (int j = 0; j < 4; ++j) row0 += s.at(0, j);
  CHECK(row0 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("masked_softmax along axis 0") {
  auto x = Tensor<double>::from({2, 2}, {0.0, 1.0, std::log(2.0), 1.0});
  auto s = masked_softmax(x, 0);
  CHECK(s.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(s.at(1, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(s.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("masked_softmax unmasked slices sum to one; masked entries exactly zero") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = rng.next_int(1, 5), n = rng.next_int(2, 7);
    auto x = random_tensor({m, n}, rng, false, 3.0);
    Mask mask = Mask::all(m, n, true);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        if (rng.next_bool(0.3)) mask.at(i, j) = 0;
    auto s = masked_softmax(x, 1, &mask);
    for (int i = 0; i < m; ++i) {
      int kept = 0;
      for (int j = 0; j < n; ++j)
        if (mask.get(i, j)) ++kept;
      if (kept == 0) {
        // degenerate row: documented uniform fallback
        for (int j = 0; j < n; ++j) CHECK(s.at(i, j) == doctest::Approx(1.0 / n));
        continue;
      }
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        if (!mask.get(i, j))
          CHECK(s.at(i, j) == 0.0);
        else
          sum += s.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("attention trivial cases") {
  // single key/value row: output equals the value row for any query
  Rng rng(3);
  auto q = random_tensor({3, 4}, rng);
  auto k = random_tensor({1, 4}, rng);
  auto v = random_tensor({1, 4}, rng);
  auto out = attention(q, k, v);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 4; ++c) CHECK(out.at(i, c) == doctest::Approx(v.at(0, c)).epsilon(1e-12));

  // two identical key rows: output is the average of the two values
  auto k2 = Tensor<double>::from({2, 2}, {1.0, -0.5, 1.0, -0.5});
  auto v2 = Tensor<double>::from({2, 2}, {2.0, 0.0, 0.0, 4.0});
  auto q2 = random_tensor({2, 2}, rng);
  auto out2 = attention(q2, k2, v2);
  for (int i = 0; i < 2; ++i) {
    CHECK(out2.at(i, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out2.at(i, 1) == doctest::Approx(2.0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(attention(q, Tensor<double>::zeros({1, 3}), v), DimensionError);
}

TEST_CASE("attention matches explicit softmax-then-weighted-sum oracle") {
  Rng rng(11);
  auto q = random_tensor({3, 2}, rng);
  auto k = random_tensor({4, 2}, rng);
  auto v = random_tensor({4, 2}, rng);
  auto out = attention(q, k, v);
  auto ref = oracle::attention(*q.data, *k.data, *v.data, 3, 4, 2);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(std::abs((*out.data)[i] - ref[i]) < 1e-12);
}

TEST_CASE("attention ignores masked values bit-exactly") {
  Rng rng(13);
  auto q = random_tensor({2, 4}, rng);
  auto k = random_tensor({5, 4}, rng);
  auto v = random_tensor({5, 4}, rng);
  Mask mask = Mask::row_vector({1, 0, 1, 0, 1});
  auto out1 = attention(q, k, v, &mask);
  // Perturb values at masked rows.
  auto v2 = Tensor<double>::from(v.shape, *v.data);
  for (int c = 0; c < 4; ++c) {
    v2.at(1, c) += 100.0;
    v2.at(3, c) -= 42.0;
  }
  auto out2 = attention(q, k, v2, &mask);
  for (size_t i = 0; i < out1.numel(); ++i) CHECK((*out1.data)[i] == (*out2.data)[i]);
}

TEST_CASE("multi_head_attention matches per-head oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int heads = rng.next_int(1, 3) * 2 - 1;  // 1 or 3
    const int dh = rng.next_int(1, 3);
    const int d = heads * dh;
    const int t_q = rng.next_int(1, 4), t_k = rng.next_int(1, 5);
    auto q = random_tensor({t_q, d}, rng);
    auto k = random_tensor({t_k, d}, rng);
    auto v = random_tensor({t_k, d}, rng);
    auto out = multi_head_attention(q, k, v, heads);
    auto ref = oracle::mha(*q.data, *k.data, *v.data, t_q, t_k, d, heads);
    for (size_t i = 0; i < ref.size(); ++i) CHECK(std::abs((*out.data)[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("gru_cell analytic special cases") {
  const int d = 3;
  Rng rng(19);
  auto x = random_tensor({2, d}, rng);
  auto h = random_tensor({2, d}, rng);

  // all params zero: z = 0.5, candidate = 0 so h' = 0.5 h
  auto out = gru_cell(x, h, zero_gru(d));
  for (size_t i = 0; i < out.numel(); ++i) CHECK((*out.data)[i] == doctest::Approx(0.5 * (*h.data)[i]).epsilon(1e-12));

  // saturated update bias (z -> 0) carries h through unchanged
  auto p = zero_gru(d);
  for (auto& b : *p.b_update.data) b = -1e6;
  auto out2 = gru_cell(x, h, p);
  for (size_t i = 0; i < out2.numel(); ++i) CHECK((*out2.data)[i] == doctest::Approx((*h.data)[i]).epsilon(1e-12));
}

TEST_CASE("gru_cell matches scalar oracle on random instances") {
  Rng rng(23);
  for (int trial = 0; trial < 120; ++trial) {
    const int d = rng.next_int(1, 4);
    const int m = rng.next_int(1, 3);
    auto x = random_tensor({m, d}, rng);
    auto h = random_tensor({m, d}, rng);
    auto p = random_gru(d, rng);
    auto out = gru_cell(x, h, p);
    oracle::GruWeights w{*p.w_update.data, *p.u_update.data, *p.b_update.data,
                         *p.w_reset.data,  *p.u_reset.data,  *p.b_reset.data,
                         *p.w_cand.data,   *p.u_cand.data,   *p.b_cand.data};
    auto ref = oracle::gru(*x.data, *h.data, w, m, d);
    for (size_t i = 0; i < ref.size(); ++i) CHECK(std::abs((*out.data)[i] - ref[i]) < 1e-10);
  }
  // shape mismatch is an error
  auto x = Tensor<double>::zeros({2, 3});
  auto h = Tensor<double>::zeros({2, 4});
  CHECK_THROWS_AS(gru_cell(x, h, zero_gru(3)), DimensionError);
}

TEST_CASE("cross_entropy analytic and oracle cases") {
  // uniform logits over V=8: loss is ln 8 per token
  auto logits = Tensor<double>::zeros({3, 8});
  auto sum_loss = cross_entropy(logits, {0, 5, 7}, Reduction::Sum);
  CHECK(sum_loss.item() == doctest::Approx(3.0 * std::log(8.0)).epsilon(1e-12));
  auto mean_loss = cross_entropy(logits, {0, 5, 7}, Reduction::Mean);
  CHECK(mean_loss.item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  // near-one-hot logit at the target: loss ~ 0
  auto hot = Tensor<double>::zeros({1, 4});
  hot.at(0, 2) = 1e6;
  CHECK(cross_entropy(hot, {2}).item() == doctest::Approx(0.0).epsilon(1e-9));

  CHECK_THROWS_AS(cross_entropy(hot, {4}), DimensionError);
  CHECK_THROWS_AS(cross_entropy(hot, {-1}), DimensionError);

  Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = rng.next_int(1, 5), v = rng.next_int(2, 7);
    auto l = random_tensor({m, v}, rng, false, 2.0);
    std::vector<int> targets(m);
    for (auto& t : targets) t = rng.next_int(0, v - 1);
    auto loss = cross_entropy(l, targets, Reduction::Sum);
    CHECK(std::abs(loss.item() - oracle::cross_entropy(*l.data, targets, m, v, false)) < 1e-10);
  }
}

TEST_CASE("grad_check: closed-form quadratic") {
  auto x = Tensor<double>::from({3}, {1.0, 2.0, 3.0}, true);
  auto f = [&]() { return sum_all(mul(x, x)); };
  auto res = grad_check<double>(f, {{"x", x}});
  CHECK(res.max_rel_err < 1e-8);
  x.zero_grad();
  auto loss = f();
  backward(loss);
  CHECK((*x.grad)[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK((*x.grad)[1] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK((*x.grad)[2] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("grad_check: attention block with mask") {
  Rng rng(31);
  auto q = random_tensor({3, 4}, rng, true);
  auto k = random_tensor({4, 4}, rng, true);
  auto v = random_tensor({4, 4}, rng, true);
  Mask mask = Mask::row_vector({1, 1, 0, 1});
  auto f = [&]() {
    auto out = multi_head_attention(q, k, v, 2, &mask);
    return sum_all(mul(out, out));
  };
  auto res = grad_check<double>(f, {{"q", q}, {"k", k}, {"v", v}});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("grad_check: gru cell end to end") {
  Rng rng(37);
  const int d = 3;
  auto x = random_tensor({2, d}, rng, true);
  auto h = random_tensor({2, d}, rng, true);
  auto p = random_gru(d, rng, true);
  auto f = [&]() {
    auto out = gru_cell(x, h, p);
    return sum_all(mul(out, out));
  };
  std::vector<std::pair<std::string, Tensor<double>>> params = {
      {"x", x},   {"h", h},   {"wz", p.w_update}, {"uz", p.u_update}, {"bz", p.b_update}, {"wr", p.w_reset},
      {"ur", p.u_reset}, {"br", p.b_reset}, {"wc", p.w_cand},   {"uc", p.u_cand},   {"bc", p.b_cand}};
  auto res = grad_check<double>(f, params);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("grad_check: layer_norm, gelu, linear, embedding, cross_entropy composite") {
  Rng rng(41);
  auto table = random_tensor({7, 6}, rng, true);
  auto w1 = random_tensor({6, 6}, rng, true, 0.4);
  auto b1 = random_tensor({6}, rng, true, 0.1);
  auto g = random_tensor({6}, rng, true, 0.3);
  auto gb = random_tensor({6}, rng, true, 0.3);
  for (auto& v : *g.data) v += 1.0;
  std::vector<int> ix = {0, 3, 6, 3};
  auto f = [&]() {
    auto e = embedding(table, ix);
    auto n = layer_norm(e, g, gb);
    auto a = silu(gelu(linear(n, w1, b1)));
    return cross_entropy(a, {1, 2, 0, 5}, Reduction::Mean);
  };
  auto res = grad_check<double>(
      f, {{"table", table}, {"w1", w1}, {"b1", b1}, {"gain", g}, {"bias", gb}});
  CHECK(res.max_rel_err < 1e-6);

  // only rows of used indices receive gradient
  table.zero_grad();
  auto loss = f();
  backward(loss);
  for (int r = 0; r < 7; ++r) {
    double norm = 0;
    for (int c = 0; c < 6; ++c) norm += std::abs((*table.grad)[static_cast<size_t>(r) * 6 + c]);
    const bool used = r == 0 || r == 3 || r == 6;
    if (used)
      CHECK(norm > 0.0);
    else
      CHECK(norm == 0.0);
  }
}

TEST_CASE("non-finite inputs are diagnosed with the op name") {
  auto a = Tensor<double>::from({1, 2}, {1e308, 1e308});
  auto b = Tensor<double>::from({1, 2}, {1e308, 1e308});
  CHECK_THROWS_AS(add(a, b), NumericalError);
  try {
    add(a, b);
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("dropout scales kept entries and zeroes dropped ones") {
  Rng rng(43);
  auto x = Tensor<double>::from({50, 4}, std::vector<double>(200, 1.0), true);
  auto out = dropout(x, 0.25, rng);
  size_t zeros = 0, kept = 0;
  for (size_t i = 0; i < out.numel(); ++i) {
    if ((*out.data)[i] == 0.0)
      ++zeros;
    else {
      CHECK((*out.data)[i] == doctest::Approx(1.0 / 0.75));
      ++kept;
    }
  }
  CHECK(zeros + kept == 200);
  CHECK(zeros > 20);
  CHECK(zeros < 90);
  // rate 0 is the identity (same buffer)
  auto same = dropout(x, 0.0, rng);
  CHECK(same.data.get() == x.data.get());
}
