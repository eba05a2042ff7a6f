// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "phead/catalog.hpp"
#include "phead/params.hpp"
#include "phead/rng.hpp"

namespace phead {

struct EncoderConfig {
  std::uint32_t num_layers = 4;
  std::uint32_t num_heads = 4;
  std::uint32_t d_model = 128;
  /// Feed-forward width; 0 means 4 * d_model.
  std::uint32_t ffn_dim = 0;
  double dropout = 0.1;
  std::uint32_t max_context = 50;
  std::uint32_t vocab_size = 0;
  std::uint32_t num_events = 1;

  std::uint32_t ffn_width() const noexcept { return ffn_dim ? ffn_dim : 4 * d_model; }
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Score of one item against a query vector. Every scoring path (baseline,
/// masked head scores, losses) goes through this function so that equal
/// queries give bit-identical scores.
template <class S>
inline S item_score(const ConstMatMap<S>& table, ItemId item, const Vec<S>& query) {
  return table.row(static_cast<Eigen::Index>(item)).dot(query.transpose());
}

/// Unmasked dot-product scores of `items` against the user state.
template <class S>
std::vector<S> baseline_score(const Vec<S>& state, const ConstMatMap<S>& table,
                              std::span<const ItemId> items) {
  std::vector<S> out;
  out.reserve(items.size());
  for (ItemId i : items) out.push_back(item_score(table, i, state));
  return out;
}

/// Pre-norm causal transformer over item + event + position embeddings.
/// Row t of the output is the user state after observing positions 0..t.
template <class S>
class Encoder {
 public:
  struct LayerCache {
    std::size_t first_row = 0;
    Mat<S> x_in;
    Mat<S> a, a_hat;
    Vec<S> a_rstd;
    Mat<S> q, k, v;
    std::vector<Mat<S>> probs;
    Mat<S> o;
    Mat<S> drop1;
    Mat<S> b, b_hat;
    Vec<S> b_rstd;
    Mat<S> u, f;
    Mat<S> drop2;
  };

  struct Cache {
    std::vector<ItemId> items;
    std::vector<std::uint8_t> events;
    Mat<S> drop0;
    std::vector<LayerCache> layers;
    Mat<S> out_hat;
    Vec<S> out_rstd;
  };

  Encoder() = default;
  /// Registers the encoder tensors in `layout`.
  Encoder(const EncoderConfig& config, ParamLayout& layout);

  const EncoderConfig& config() const noexcept { return config_; }
  std::size_t item_embedding_id() const noexcept { return item_emb_; }

  void init(std::vector<S>& params, Rng& rng) const;

  /// Runs the stack. The last layer only computes rows [first_row, n), so the
  /// result has n - first_row rows. With a cache the intermediate values are
  /// kept for backward(); with a dropout rng dropout is applied (train mode).
  Mat<S> forward(const std::vector<S>& params, std::span<const Interaction> context,
                 std::size_t first_row, Cache* cache, Rng* dropout_rng) const;

  /// Accumulates into `grads` the gradient of a loss whose derivative with
  /// respect to forward()'s output is `d_out`.
  void backward(const std::vector<S>& params, const Cache& cache, const Mat<S>& d_out,
                std::vector<S>& grads) const;

  /// All per-position states in eval mode.
  Mat<S> encode(const std::vector<S>& params, std::span<const Interaction> context) const {
    return forward(params, context, 0, nullptr, nullptr);
  }

 private:
  struct LayerIds {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  Mat<S> layer_forward(const std::vector<S>& params, const LayerIds& ids, const Mat<S>& x,
                       std::size_t first_row, LayerCache* cache, Rng* dropout_rng) const;
  Mat<S> layer_backward(const std::vector<S>& params, const LayerIds& ids, const LayerCache& c,
                        const Mat<S>& d_out, std::vector<S>& grads) const;

  EncoderConfig config_;
  // Snapshot of the layout holding the encoder tensors; ids stay valid when
  // more tensors are appended to the shared layout later.
  ParamLayout layout_;
  std::size_t item_emb_ = 0, event_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0;
  std::vector<LayerIds> layers_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace phead
