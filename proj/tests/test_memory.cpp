#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cmota/memory.hpp"
#include "cmota/model.hpp"
#include "oracles.hpp"

using namespace cmota;
using namespace cmota::nn;
using cmota::mem::MemoryPathParams;

namespace {

Tensor<double> randn(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(s));
  for (auto& v : *t.data) v = rng.next_normal() * scale;
  return t;
}

Tensor<double> identity(int d) {
  Tensor<double> t = Tensor<double>::zeros({d, d});
  for (int i = 0; i < d; ++i) t.at(i, i) = 1.0;
  return t;
}

MemoryPathParams<double> random_path(int d, Rng& rng, bool awm = true) {
  MemoryPathParams<double> p;
  p.m0 = randn({1, d}, rng);
  p.sum_q_w = randn({d, d}, rng, 0.3);
  p.sum_q_b = randn({d}, rng, 0.1);
  p.sum_k_w = randn({d, d}, rng, 0.3);
  p.sum_k_b = randn({d}, rng, 0.1);
  p.sum_v_w = randn({d, d}, rng, 0.3);
  p.sum_v_b = randn({d}, rng, 0.1);
  p.sum_o_w = randn({d, d}, rng, 0.3);
  p.sum_o_b = randn({d}, rng, 0.1);
  p.gru.w_update = randn({d, d}, rng, 0.3);
  p.gru.u_update = randn({d, d}, rng, 0.3);
  p.gru.b_update = randn({d}, rng, 0.1);
  p.gru.w_reset = randn({d, d}, rng, 0.3);
  p.gru.u_reset = randn({d, d}, rng, 0.3);
  p.gru.b_reset = randn({d}, rng, 0.1);
  p.gru.w_cand = randn({d, d}, rng, 0.3);
  p.gru.u_cand = randn({d, d}, rng, 0.3);
  p.gru.b_cand = randn({d}, rng, 0.1);
  p.fuse_ln_g = Tensor<double>::from({d}, std::vector<double>(static_cast<size_t>(d), 1.0));
  p.fuse_ln_b = Tensor<double>::zeros({d});
  p.fuse_q_w = randn({d, d}, rng, 0.3);
  p.fuse_q_b = randn({d}, rng, 0.1);
  p.fuse_k_w = randn({d, d}, rng, 0.3);
  p.fuse_k_b = randn({d}, rng, 0.1);
  p.fuse_v_w = randn({d, d}, rng, 0.3);
  p.fuse_v_b = randn({d}, rng, 0.1);
  p.fuse_o_w = randn({d, d}, rng, 0.3);
  p.fuse_o_b = randn({d}, rng, 0.1);
  p.has_awm = awm;
  if (awm) {
    p.awm_q_w = randn({d, d}, rng, 0.3);
    p.awm_q_b = randn({d}, rng, 0.1);
    p.awm_k_w = randn({d, d}, rng, 0.3);
    p.awm_k_b = randn({d}, rng, 0.1);
    p.awm_v_w = randn({d, d}, rng, 0.3);
    p.awm_v_b = randn({d}, rng, 0.1);
    p.awm_o_w = randn({d, d}, rng, 0.3);
    p.awm_o_b = randn({d}, rng, 0.1);
  }
  return p;
}

std::vector<double> apply_linear(const std::vector<double>& x, int m, int d, const Tensor<double>& w,
                                 const Tensor<double>& b) {
  std::vector<double> out = oracle::matmul(x, *w.data, m, d, w.cols());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w.cols(); ++j) out[static_cast<size_t>(i) * w.cols() + j] += (*b.data)[static_cast<size_t>(j)];
  return out;
}

}  // namespace

TEST_CASE("build_memory_mask selects exactly the text positions") {
  Mask m = mem::build_memory_mask({1, 1, 1, 0, 0});
  CHECK(m.cols == 5);
  CHECK(m.get(0, 0));
  CHECK(m.get(0, 2));
  CHECK(!m.get(0, 3));
  CHECK(!m.get(0, 4));

  Mask all_text = mem::build_memory_mask({1, 1});
  CHECK((all_text.get(0, 0) && all_text.get(0, 1)));

  // all-image input: degenerate; summarize falls back to uniform and flags it
  Diagnostics::reset();
  Rng rng(3);
  auto p = random_path(4, rng);
  auto m_prev = randn({1, 4}, rng);
  auto h = randn({3, 4}, rng);
  Mask none = mem::build_memory_mask({0, 0, 0});
  auto s = mem::summarize(p, m_prev, h, none, 2);
  CHECK(Diagnostics::degenerate_softmax_rows() > 0);
  CHECK(s.rows() == 1);
}

TEST_CASE("summarize is bit-identical under image-position perturbation") {
  Rng rng(7);
  const int d = 8;
  auto p = random_path(d, rng);
  auto m_prev = randn({1, d}, rng);
  auto h = randn({6, d}, rng);
  Mask mask = mem::build_memory_mask({1, 1, 0, 0, 1, 0});
  auto s1 = mem::summarize(p, m_prev, h, mask, 4);

  auto h2 = Tensor<double>::from(h.shape, *h.data);
  for (int c = 0; c < d; ++c) {
    h2.at(2, c) = rng.next_normal() * 10.0;
    h2.at(3, c) += 5.0;
    h2.at(5, c) = -h2.at(5, c);
  }
  auto s2 = mem::summarize(p, m_prev, h2, mask, 4);
  for (size_t i = 0; i < s1.numel(); ++i) CHECK((*s1.data)[i] == (*s2.data)[i]);
}

TEST_CASE("summarize of a single text token is that token's value projection") {
  Rng rng(11);
  const int d = 6;
  auto p = random_path(d, rng);
  auto m_prev = randn({1, d}, rng);
  auto h = randn({4, d}, rng);
  Mask mask = mem::build_memory_mask({0, 0, 1, 0});
  auto s = mem::summarize(p, m_prev, h, mask, 2);
  // attention weight collapses onto position 2: output = (h2 Wv + bv) Wo + bo
  std::vector<double> h2(h.data->begin() + 2 * d, h.data->begin() + 3 * d);
  std::vector<double> v = apply_linear(h2, 1, d, p.sum_v_w, p.sum_v_b);
  std::vector<double> expect = apply_linear(v, 1, d, p.sum_o_w, p.sum_o_b);
  for (int c = 0; c < d; ++c) CHECK((*s.data)[static_cast<size_t>(c)] == doctest::Approx(expect[static_cast<size_t>(c)]).epsilon(1e-12));
}

TEST_CASE("summarize matches the explicit masked-attention oracle") {
  Rng rng(13);
  const int d = 8, t_c = 5, heads = 2;
  auto p = random_path(d, rng);
  auto m_prev = randn({1, d}, rng);
  auto h = randn({t_c, d}, rng);
  std::vector<uint8_t> tags = {1, 0, 1, 1, 0};
  Mask mask = mem::build_memory_mask(tags);
  auto s = mem::summarize(p, m_prev, h, mask, heads);

  std::vector<double> q = apply_linear(*m_prev.data, 1, d, p.sum_q_w, p.sum_q_b);
  std::vector<double> k = apply_linear(*h.data, t_c, d, p.sum_k_w, p.sum_k_b);
  std::vector<double> v = apply_linear(*h.data, t_c, d, p.sum_v_w, p.sum_v_b);
  std::vector<double> att = oracle::mha(q, k, v, 1, t_c, d, heads, &tags);
  std::vector<double> expect = apply_linear(att, 1, d, p.sum_o_w, p.sum_o_b);
  for (int c = 0; c < d; ++c) CHECK(std::abs((*s.data)[static_cast<size_t>(c)] - expect[static_cast<size_t>(c)]) < 1e-12);
}

TEST_CASE("update: zero params halve the memory, saturated gate freezes it, random matches oracle") {
  Rng rng(17);
  const int d = 5;
  auto m_prev = randn({1, d}, rng);
  auto s_t = randn({1, d}, rng);

  MemoryPathParams<double> zero;
  zero.gru.w_update = Tensor<double>::zeros({d, d});
  zero.gru.u_update = Tensor<double>::zeros({d, d});
  zero.gru.b_update = Tensor<double>::zeros({d});
  zero.gru.w_reset = Tensor<double>::zeros({d, d});
  zero.gru.u_reset = Tensor<double>::zeros({d, d});
  zero.gru.b_reset = Tensor<double>::zeros({d});
  zero.gru.w_cand = Tensor<double>::zeros({d, d});
  zero.gru.u_cand = Tensor<double>::zeros({d, d});
  zero.gru.b_cand = Tensor<double>::zeros({d});
  auto m1 = mem::update(zero, s_t, m_prev);
  for (int c = 0; c < d; ++c) CHECK((*m1.data)[static_cast<size_t>(c)] == doctest::Approx(0.5 * (*m_prev.data)[static_cast<size_t>(c)]));

  for (auto& b : *zero.gru.b_update.data) b = -1e6;  // z -> 0: memory freeze
  auto m2 = mem::update(zero, s_t, m_prev);
  for (int c = 0; c < d; ++c) CHECK((*m2.data)[static_cast<size_t>(c)] == doctest::Approx((*m_prev.data)[static_cast<size_t>(c)]));

  auto p = random_path(d, rng);
  auto m3 = mem::update(p, s_t, m_prev);
  oracle::GruWeights w{*p.gru.w_update.data, *p.gru.u_update.data, *p.gru.b_update.data,
                       *p.gru.w_reset.data,  *p.gru.u_reset.data,  *p.gru.b_reset.data,
                       *p.gru.w_cand.data,   *p.gru.u_cand.data,   *p.gru.b_cand.data};
  auto ref = oracle::gru(*s_t.data, *m_prev.data, w, 1, d);
  for (int c = 0; c < d; ++c) CHECK(std::abs((*m3.data)[static_cast<size_t>(c)] - ref[static_cast<size_t>(c)]) < 1e-12);
}

TEST_CASE("attentive_weight: t=2 passthrough is exact, t<2 is an error") {
  Rng rng(19);
  const int d = 6;
  auto p = random_path(d, rng);
  std::vector<Tensor<double>> bank = {randn({1, d}, rng)};
  auto out = mem::attentive_weight(p, bank, 2, 2);
  CHECK(out.data.get() == bank[0].data.get());  // exactly M_1, not a copy

  CHECK_THROWS_AS(mem::attentive_weight(p, {}, 1, 2), std::invalid_argument);
  CHECK_THROWS_AS(mem::attentive_weight(p, bank, 3, 2), std::invalid_argument);  // bank size mismatch
}

TEST_CASE("attentive_weight with identity projections and an identical bank") {
  Rng rng(23);
  const int d = 4;
  auto p = random_path(d, rng);
  p.awm_q_w = identity(d);
  p.awm_q_b = Tensor<double>::zeros({d});
  p.awm_k_w = identity(d);
  p.awm_k_b = Tensor<double>::zeros({d});
  p.awm_v_w = identity(d);
  p.awm_v_b = Tensor<double>::zeros({d});
  p.awm_o_w = identity(d);
  p.awm_o_b = Tensor<double>::zeros({d});
  auto m_star = randn({1, d}, rng);
  std::vector<Tensor<double>> bank = {m_star, m_star, m_star};  // M_1 = M_2 = M_3 = M*
  auto out = mem::attentive_weight(p, bank, 4, 2);
  REQUIRE(out.rows() == 2);
  for (int c = 0; c < d; ++c) {
    CHECK(out.at(0, c) == doctest::Approx((*m_star.data)[static_cast<size_t>(c)]).epsilon(1e-12));
    CHECK(out.at(1, c) == doctest::Approx((*m_star.data)[static_cast<size_t>(c)]).epsilon(1e-12));
  }
}

TEST_CASE("attentive_weight matches the explicit two-step oracle at t=4") {
  Rng rng(29);
  const int d = 8, heads = 2;
  auto p = random_path(d, rng);
  std::vector<Tensor<double>> bank = {randn({1, d}, rng), randn({1, d}, rng), randn({1, d}, rng)};
  auto out = mem::attentive_weight(p, bank, 4, heads);
  REQUIRE(out.rows() == 2);

  std::vector<double> past;
  past.insert(past.end(), bank[0].data->begin(), bank[0].data->end());
  past.insert(past.end(), bank[1].data->begin(), bank[1].data->end());
  std::vector<double> q = apply_linear(*bank[2].data, 1, d, p.awm_q_w, p.awm_q_b);
  std::vector<double> k = apply_linear(past, 2, d, p.awm_k_w, p.awm_k_b);
  std::vector<double> v = apply_linear(past, 2, d, p.awm_v_w, p.awm_v_b);
  std::vector<double> att = oracle::mha(q, k, v, 1, 2, d, heads);
  std::vector<double> mbar = apply_linear(att, 1, d, p.awm_o_w, p.awm_o_b);
  for (int c = 0; c < d; ++c) {
    CHECK(std::abs(out.at(0, c) - (*bank[2].data)[static_cast<size_t>(c)]) < 1e-12);
    CHECK(std::abs(out.at(1, c) - mbar[static_cast<size_t>(c)]) < 1e-12);
  }
}

TEST_CASE("fuse with no memory equals plain self-attention bitwise") {
  Rng rng(31);
  const int d = 8, t_c = 5;
  auto p = random_path(d, rng);
  auto h = randn({t_c, d}, rng);
  Mask causal = Mask::all(t_c, t_c, false);
  for (int i = 0; i < t_c; ++i)
    for (int j = 0; j <= i; ++j) causal.at(i, j) = 1;

  auto fused = mem::fuse(p, h, Tensor<double>(), causal, 2);
  // plain self-attention with the same projections
  auto q = nn::linear(h, p.fuse_q_w, p.fuse_q_b);
  auto k = nn::linear(h, p.fuse_k_w, p.fuse_k_b);
  auto v = nn::linear(h, p.fuse_v_w, p.fuse_v_b);
  auto plain = nn::linear(nn::multi_head_attention(q, k, v, 2, &causal), p.fuse_o_w, p.fuse_o_b);
  for (size_t i = 0; i < fused.numel(); ++i) CHECK((*fused.data)[i] == (*plain.data)[i]);
}

TEST_CASE("fuse preserves causality over H positions; memory visible to all") {
  Rng rng(37);
  const int d = 6, t_c = 4;
  auto p = random_path(d, rng);
  auto h = randn({t_c, d}, rng);
  auto m_tilde = randn({2, d}, rng);
  Mask causal = Mask::all(t_c, t_c, false);
  for (int i = 0; i < t_c; ++i)
    for (int j = 0; j <= i; ++j) causal.at(i, j) = 1;

  auto out1 = mem::fuse(p, h, m_tilde, causal, 2);
  auto h2 = Tensor<double>::from(h.shape, *h.data);
  for (int c = 0; c < d; ++c) h2.at(3, c) += 7.0;  // future-token perturbation
  auto out2 = mem::fuse(p, h2, m_tilde, causal, 2);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < d; ++c) CHECK(out1.at(i, c) == out2.at(i, c));

  // memory rows influence even the first position
  auto m2 = Tensor<double>::from(m_tilde.shape, *m_tilde.data);
  for (int c = 0; c < d; ++c) m2.at(0, c) += 3.0;
  auto out3 = mem::fuse(p, h, m2, causal, 2);
  bool changed = false;
  for (int c = 0; c < d; ++c) changed = changed || out3.at(0, c) != out1.at(0, c);
  CHECK(changed);
}

TEST_CASE("fuse matches the concat-then-attend oracle") {
  Rng rng(41);
  const int d = 8, t_c = 3, t_m = 2, heads = 2;
  auto p = random_path(d, rng);
  auto h = randn({t_c, d}, rng);
  auto m_tilde = randn({t_m, d}, rng);
  Mask causal = Mask::all(t_c, t_c, false);
  for (int i = 0; i < t_c; ++i)
    for (int j = 0; j <= i; ++j) causal.at(i, j) = 1;
  auto out = mem::fuse(p, h, m_tilde, causal, heads);

  std::vector<double> hm = *h.data;
  hm.insert(hm.end(), m_tilde.data->begin(), m_tilde.data->end());
  std::vector<double> q = apply_linear(*h.data, t_c, d, p.fuse_q_w, p.fuse_q_b);
  std::vector<double> k = apply_linear(hm, t_c + t_m, d, p.fuse_k_w, p.fuse_k_b);
  std::vector<double> v = apply_linear(hm, t_c + t_m, d, p.fuse_v_w, p.fuse_v_b);
  // per-query keep vector: causal over H, always-on over memory
  std::vector<double> att(static_cast<size_t>(t_c) * d);
  for (int i = 0; i < t_c; ++i) {
    std::vector<uint8_t> keep(static_cast<size_t>(t_c + t_m), 0);
    for (int j = 0; j <= i; ++j) keep[static_cast<size_t>(j)] = 1;
    for (int j = t_c; j < t_c + t_m; ++j) keep[static_cast<size_t>(j)] = 1;
    std::vector<double> qi(q.begin() + static_cast<size_t>(i) * d, q.begin() + static_cast<size_t>(i + 1) * d);
    std::vector<double> oi = oracle::mha(qi, k, v, 1, t_c + t_m, d, heads, &keep);
    std::copy(oi.begin(), oi.end(), att.begin() + static_cast<size_t>(i) * d);
  }
  std::vector<double> expect = apply_linear(att, t_c, d, p.fuse_o_w, p.fuse_o_b);
  for (size_t i = 0; i < expect.size(); ++i) CHECK(std::abs((*out.data)[i] - expect[i]) < 1e-12);
}

TEST_CASE("apply_topology: fusion layer sets per scheme") {
  model::ModelConfig cfg;
  cfg.vocab_text = 20;
  cfg.layers = 6;
  cfg.topology = model::Topology::PartialLevel;
  CHECK(cfg.fusion_layers() == std::vector<int>{5});
  cfg.topology = model::Topology::AllLevel;
  CHECK(cfg.fusion_layers() == std::vector<int>({0, 1, 2, 3, 4, 5}));
  cfg.topology = model::Topology::None;
  CHECK(cfg.fusion_layers().empty());
}

TEST_CASE("parameter monotonicity: partial < all_level with the exact formula gap") {
  model::ModelConfig cfg;
  cfg.vocab_text = 30;
  cfg.layers = 3;
  cfg.topology = model::Topology::PartialLevel;
  model::Transformer<float> partial(cfg, 1);
  model::ModelConfig cfg_all = cfg;
  cfg_all.topology = model::Topology::AllLevel;
  model::Transformer<float> all_level(cfg_all, 1);

  const int64_t p_count = partial.params().count();
  const int64_t a_count = all_level.params().count();
  CHECK(p_count < a_count);
  CHECK(p_count == cfg.param_count_formula());
  CHECK(a_count == cfg_all.param_count_formula());

  const int64_t d = cfg.d_model;
  const int64_t mem_per_layer =
      cfg.t_mem * d + 4 * d * d + 4 * d + 6 * d * d + 3 * d + 2 * d + 4 * d * d + 4 * d + 4 * d * d + 4 * d;
  CHECK(a_count - p_count == (cfg.layers - 1) * mem_per_layer);
}
