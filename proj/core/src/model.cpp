// SPDX-License-Identifier: Apache-2.0
#include "phead/model.hpp"

#include "phead/error.hpp"

namespace phead {

template <class S>
Model<S>::Model(const EncoderConfig& config, std::shared_ptr<const HeadLayout> heads)
    : heads_(std::move(heads)) {
  if (!heads_) throw ConfigError("model needs a head layout");
  if (config.vocab_size != heads_->catalog_size())
    throw ConfigError("encoder vocabulary (" + std::to_string(config.vocab_size) +
                      ") differs from catalog size (" + std::to_string(heads_->catalog_size()) + ")");
  encoder_ = Encoder<S>(config, layout_);
  adapters_ = AdapterBank<S>(heads_, config.d_model, layout_);
  params_.assign(layout_.total(), S(0));
}

template <class S>
void Model<S>::init(std::uint64_t seed) {
  Rng rng(seed);
  encoder_.init(params_, rng);
  adapters_.init(params_);
}

template <class S>
Vec<S> Model<S>::user_state(std::span<const Interaction> context) const {
  if (context.empty()) throw ConfigError("empty context");
  Mat<S> out = encoder_.forward(params_, context, context.size() - 1, nullptr, nullptr);
  return out.row(out.rows() - 1).transpose();
}

template <class S>
std::vector<Vec<S>> Model<S>::queries(const Vec<S>& state) const {
  typename AdapterBank<S>::Cache cache;
  adapters_.forward(params_, state, cache);
  std::vector<Vec<S>> out;
  out.reserve(heads_->head_count());
  for (std::size_t k = 0; k < heads_->head_count(); ++k) out.push_back(adapters_.query(cache, k));
  return out;
}

template <class S>
std::vector<bool> Model<S>::active_heads(std::uint64_t user) const {
  std::vector<bool> out(heads_->head_count());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = !heads_->heads()[k].omega.empty() && heads_->head_serves_user(k, user);
  return out;
}

template class Model<float>;
template class Model<double>;

template <class S>
TopK recommend(const Model<S>& model, std::span<const Interaction> context, std::uint64_t user,
               std::size_t k, Fusion fusion, FusionDiagnostics* diagnostics) {
  const auto q = model.queries(model.user_state(context));
  const auto fused = fuse_catalog(model.heads(), q, model.active_heads(user), model.item_table(),
                                  fusion, diagnostics);
  return retrieve_topk(fused, k);
}

template TopK recommend<float>(const Model<float>&, std::span<const Interaction>, std::uint64_t,
                               std::size_t, Fusion, FusionDiagnostics*);
template TopK recommend<double>(const Model<double>&, std::span<const Interaction>, std::uint64_t,
                                std::size_t, Fusion, FusionDiagnostics*);

}  // namespace phead
