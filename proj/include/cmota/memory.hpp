#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cmota/ops.hpp"

namespace cmota::mem {

using nn::AttnRecord;
using nn::Mask;
using nn::Tensor;

// Learned parameters of one memory path (one fused layer). Projections of the
// three attention blocks are distinct parameter sets.
template <typename T>
struct MemoryPathParams {
  Tensor<T> m0;  // learned initial memory, t_mem x d

  // summarize: queries from the previous memory, keys/values from the hidden
  // state restricted to text positions
  Tensor<T> sum_q_w, sum_q_b, sum_k_w, sum_k_b, sum_v_w, sum_v_b, sum_o_w, sum_o_b;

  nn::GruParams<T> gru;

  // fuse: hidden state attends over itself concatenated with the bundle
  Tensor<T> fuse_ln_g, fuse_ln_b;
  Tensor<T> fuse_q_w, fuse_q_b, fuse_k_w, fuse_k_b, fuse_v_w, fuse_v_b, fuse_o_w, fuse_o_b;

  // attentive weighting over the memory history
  bool has_awm = false;
  Tensor<T> awm_q_w, awm_q_b, awm_k_w, awm_k_b, awm_v_w, awm_v_b, awm_o_w, awm_o_b;
};

// Per-position modality tags -> boolean mask selecting text positions.
inline Mask build_memory_mask(const std::vector<uint8_t>& is_text) {
  return Mask::row_vector(is_text);
}

// S_t: attention with M_{t-1} as queries and H as keys/values, image
// positions masked out. The output cannot depend on image-position content.
template <typename T>
Tensor<T> summarize(const MemoryPathParams<T>& p, const Tensor<T>& m_prev, const Tensor<T>& h,
                    const Mask& text_mask, int heads, AttnRecord* record = nullptr) {
  if (h.rows() != text_mask.cols) throw nn::DimensionError("summarize: mask length must match positions");
  Tensor<T> q = nn::linear(m_prev, p.sum_q_w, p.sum_q_b);
  Tensor<T> k = nn::linear(h, p.sum_k_w, p.sum_k_b);
  Tensor<T> v = nn::linear(h, p.sum_v_w, p.sum_v_b);
  Tensor<T> att = nn::multi_head_attention(q, k, v, heads, &text_mask, record);
  return nn::linear(att, p.sum_o_w, p.sum_o_b);
}

// M_t = GRU(S_t, M_{t-1})
template <typename T>
Tensor<T> update(const MemoryPathParams<T>& p, const Tensor<T>& s_t, const Tensor<T>& m_prev) {
  return nn::gru_cell(s_t, m_prev, p.gru);
}

// Attentively weighted memory over the bank [M_1 .. M_{t-1}]:
//   t == 2          -> M_1 (the only available memory)
//   3 <= t <= T     -> concat(M_{t-1}, Attn(M_{t-1}, M_{1:t-2}, M_{1:t-2}))
// The bank must hold exactly t-1 states.
template <typename T>
Tensor<T> attentive_weight(const MemoryPathParams<T>& p, const std::vector<Tensor<T>>& bank, int t,
                           int heads, AttnRecord* record = nullptr) {
  if (t < 2) throw std::invalid_argument("attentive_weight: no memory exists before t=2");
  if (static_cast<int>(bank.size()) != t - 1)
    throw std::invalid_argument("attentive_weight: bank must hold M_1..M_{t-1} (" + std::to_string(t - 1) +
                                " states, got " + std::to_string(bank.size()) + ")");
  if (t == 2) return bank[0];
  const Tensor<T>& latest = bank[static_cast<size_t>(t - 2)];
  std::vector<Tensor<T>> past(bank.begin(), bank.begin() + (t - 2));
  Tensor<T> keys_in = past.size() == 1 ? past[0] : nn::concat_rows(past);
  Tensor<T> q = nn::linear(latest, p.awm_q_w, p.awm_q_b);
  Tensor<T> k = nn::linear(keys_in, p.awm_k_w, p.awm_k_b);
  Tensor<T> v = nn::linear(keys_in, p.awm_v_w, p.awm_v_b);
  Tensor<T> weighted = nn::linear(nn::multi_head_attention(q, k, v, heads, nullptr, record), p.awm_o_w, p.awm_o_b);
  return nn::concat_rows(std::vector<Tensor<T>>{latest, weighted});
}

// Self-attention of H over [H; M_tilde]: the causal mask over H positions is
// preserved and bundle positions are visible to every query. Passing an
// undefined bundle degenerates to plain self-attention of H.
template <typename T>
Tensor<T> fuse(const MemoryPathParams<T>& p, const Tensor<T>& h, const Tensor<T>& m_tilde,
               const Mask& h_mask, int heads, AttnRecord* record = nullptr) {
  const int t_c = h.rows();
  if (h_mask.rows != t_c || h_mask.cols != t_c) throw nn::DimensionError("fuse: mask must be t_c x t_c");
  const int t_m = m_tilde.defined() ? m_tilde.rows() : 0;
  Tensor<T> kv_in = t_m == 0 ? h : nn::concat_rows(std::vector<Tensor<T>>{h, m_tilde});
  Tensor<T> q = nn::linear(h, p.fuse_q_w, p.fuse_q_b);
  Tensor<T> k = nn::linear(kv_in, p.fuse_k_w, p.fuse_k_b);
  Tensor<T> v = nn::linear(kv_in, p.fuse_v_w, p.fuse_v_b);
  Mask mask = Mask::all(t_c, t_c + t_m, true);
  for (int i = 0; i < t_c; ++i)
    for (int j = 0; j < t_c; ++j) mask.at(i, j) = h_mask.get(i, j) ? 1 : 0;
  Tensor<T> att = nn::multi_head_attention(q, k, v, heads, &mask, record);
  return nn::linear(att, p.fuse_o_w, p.fuse_o_b);
}

}  // namespace cmota::mem
