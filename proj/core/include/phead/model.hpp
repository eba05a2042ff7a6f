// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "phead/encoder.hpp"
#include "phead/heads.hpp"
#include "phead/params.hpp"

namespace phead {

/// Encoder plus adapter heads over one flat parameter buffer.
template <class S>
class Model {
 public:
  Model(const EncoderConfig& config, std::shared_ptr<const HeadLayout> heads);

  const EncoderConfig& config() const noexcept { return encoder_.config(); }
  const HeadLayout& heads() const noexcept { return *heads_; }
  const std::shared_ptr<const HeadLayout>& heads_ptr() const noexcept { return heads_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  const Encoder<S>& encoder() const noexcept { return encoder_; }
  const AdapterBank<S>& adapters() const noexcept { return adapters_; }

  std::vector<S>& params() noexcept { return params_; }
  const std::vector<S>& params() const noexcept { return params_; }

  /// Random encoder weights; all adapter weights and group embeddings zero.
  void init(std::uint64_t seed);

  ConstMatMap<S> item_table() const { return layout_.map(params_, encoder_.item_embedding_id()); }

  /// h_T for a context in eval mode.
  Vec<S> user_state(std::span<const Interaction> context) const;
  /// One query per head for a user state.
  std::vector<Vec<S>> queries(const Vec<S>& state) const;
  /// Heads that may score for this user: nonempty and serving the user's groups.
  std::vector<bool> active_heads(std::uint64_t user) const;

  /// Same weights at another precision.
  template <class T>
  Model<T> cast() const {
    Model<T> out(config(), heads_);
    auto& dst = out.params();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<T>(params_[i]);
    return out;
  }

 private:
  std::shared_ptr<const HeadLayout> heads_;
  ParamLayout layout_;
  Encoder<S> encoder_;
  AdapterBank<S> adapters_;
  std::vector<S> params_;
};

extern template class Model<float>;
extern template class Model<double>;

/// Fused top-K with explanations for one user context.
template <class S>
TopK recommend(const Model<S>& model, std::span<const Interaction> context, std::uint64_t user,
               std::size_t k, Fusion fusion, FusionDiagnostics* diagnostics = nullptr);

extern template TopK recommend<float>(const Model<float>&, std::span<const Interaction>,
                                      std::uint64_t, std::size_t, Fusion, FusionDiagnostics*);
extern template TopK recommend<double>(const Model<double>&, std::span<const Interaction>,
                                       std::uint64_t, std::size_t, Fusion, FusionDiagnostics*);

}  // namespace phead
