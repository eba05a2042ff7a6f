// SPDX-License-Identifier: Apache-2.0
#include "phead/encoder.hpp"

#include <cmath>
#include <string>

#include "phead/error.hpp"

namespace phead {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class S>
void layer_norm(const Mat<S>& x, const ConstMatMap<S>& gain, const ConstMatMap<S>& bias,
                Mat<S>& y, Mat<S>& hat, Vec<S>& rstd) {
  const auto rows = x.rows();
  const auto d = x.cols();
  y.resize(rows, d);
  hat.resize(rows, d);
  rstd.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().mean();
    rstd(r) = S(1) / std::sqrt(var + S(kLayerNormEps));
    hat.row(r) = (x.row(r).array() - mean) * rstd(r);
    y.row(r) = hat.row(r).cwiseProduct(gain.row(0)) + bias.row(0);
  }
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& hat, const Vec<S>& rstd,
                           const ConstMatMap<S>& gain, MatMap<S> d_gain, MatMap<S> d_bias) {
  const auto d = static_cast<S>(dy.cols());
  Mat<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    d_gain.row(0) += dy.row(r).cwiseProduct(hat.row(r));
    d_bias.row(0) += dy.row(r);
    const auto dhat = dy.row(r).cwiseProduct(gain.row(0)).eval();
    const S mean_dhat = dhat.sum() / d;
    const S mean_dhat_hat = dhat.cwiseProduct(hat.row(r)).sum() / d;
    dx.row(r) = rstd(r) * (dhat.array() - mean_dhat - hat.row(r).array() * mean_dhat_hat);
  }
  return dx;
}

template <class S>
S gelu(S x) {
  constexpr S c = S(0.7978845608028654);
  const S inner = c * (x + S(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(inner));
}

template <class S>
S gelu_grad(S x) {
  constexpr S c = S(0.7978845608028654);
  const S inner = c * (x + S(0.044715) * x * x * x);
  const S t = std::tanh(inner);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * c * (S(1) + S(3 * 0.044715) * x * x);
}

template <class S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat<S> mask(rows, cols);
  const S keep = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = rng.uniform() < rate ? S(0) : keep;
  return mask;
}

template <class S>
void init_normal(MatMap<S> m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal() * stddev);
}

}  // namespace

void EncoderConfig::validate() const {
  if (num_layers == 0) throw ConfigError("encoder needs at least one layer");
  if (num_heads == 0 || d_model == 0 || d_model % num_heads != 0)
    throw ConfigError("d_model must be a positive multiple of num_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (max_context == 0) throw ConfigError("max_context must be >= 1");
  if (vocab_size == 0) throw ConfigError("vocab_size must be >= 1");
  if (num_events == 0) throw ConfigError("num_events must be >= 1");
}

template <class S>
Encoder<S>::Encoder(const EncoderConfig& config, ParamLayout& layout) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t f = config_.ffn_width();
  item_emb_ = layout.add("encoder.item_emb", config_.vocab_size, d);
  event_emb_ = layout.add("encoder.event_emb", config_.num_events, d);
  pos_emb_ = layout.add("encoder.pos_emb", config_.max_context, d);
  for (std::uint32_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = "encoder.l" + std::to_string(l) + ".";
    LayerIds ids{};
    ids.ln1_g = layout.add(p + "ln1.g", 1, d);
    ids.ln1_b = layout.add(p + "ln1.b", 1, d);
    ids.wq = layout.add(p + "attn.wq", d, d);
    ids.wk = layout.add(p + "attn.wk", d, d);
    ids.wv = layout.add(p + "attn.wv", d, d);
    ids.wo = layout.add(p + "attn.wo", d, d);
    ids.ln2_g = layout.add(p + "ln2.g", 1, d);
    ids.ln2_b = layout.add(p + "ln2.b", 1, d);
    ids.w1 = layout.add(p + "ffn.w1", d, f);
    ids.b1 = layout.add(p + "ffn.b1", 1, f);
    ids.w2 = layout.add(p + "ffn.w2", f, d);
    ids.b2 = layout.add(p + "ffn.b2", 1, d);
    layers_.push_back(ids);
  }
  lnf_g_ = layout.add("encoder.ln_f.g", 1, d);
  lnf_b_ = layout.add("encoder.ln_f.b", 1, d);
  layout_ = layout;
}

template <class S>
void Encoder<S>::init(std::vector<S>& params, Rng& rng) const {
  const double d = config_.d_model;
  const double f = config_.ffn_width();
  init_normal<S>(layout_.map(params, item_emb_), 1.0 / std::sqrt(d), rng);
  init_normal<S>(layout_.map(params, event_emb_), 0.1 / std::sqrt(d), rng);
  init_normal<S>(layout_.map(params, pos_emb_), 0.1 / std::sqrt(d), rng);
  for (const auto& ids : layers_) {
    layout_.map(params, ids.ln1_g).setOnes();
    layout_.map(params, ids.ln1_b).setZero();
    layout_.map(params, ids.ln2_g).setOnes();
    layout_.map(params, ids.ln2_b).setZero();
    for (auto w : {ids.wq, ids.wk, ids.wv, ids.wo})
      init_normal<S>(layout_.map(params, w), std::sqrt(1.0 / d), rng);
    init_normal<S>(layout_.map(params, ids.w1), std::sqrt(2.0 / (d + f)), rng);
    init_normal<S>(layout_.map(params, ids.w2), std::sqrt(2.0 / (d + f)), rng);
    layout_.map(params, ids.b1).setZero();
    layout_.map(params, ids.b2).setZero();
  }
  layout_.map(params, lnf_g_).setOnes();
  layout_.map(params, lnf_b_).setZero();
}

template <class S>
Mat<S> Encoder<S>::forward(const std::vector<S>& params, std::span<const Interaction> context,
                           std::size_t first_row, Cache* cache, Rng* dropout_rng) const {
  const std::size_t n = context.size();
  if (n == 0) throw DataError("cannot encode an empty context");
  if (n > config_.max_context)
    throw DataError("context of length " + std::to_string(n) + " exceeds max_context " +
                    std::to_string(config_.max_context));
  if (first_row >= n) throw DataError("first_row outside the context");
  const Eigen::Index d = config_.d_model;
  const auto items = layout_.map(params, item_emb_);
  const auto events = layout_.map(params, event_emb_);
  const auto pos = layout_.map(params, pos_emb_);

  Mat<S> x(static_cast<Eigen::Index>(n), d);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& it = context[t];
    if (it.item >= config_.vocab_size)
      throw DataError("item " + std::to_string(it.item) + " outside vocabulary");
    if (it.event >= config_.num_events)
      throw DataError("event " + std::to_string(it.event) + " outside event vocabulary");
    const auto r = static_cast<Eigen::Index>(t);
    x.row(r) = items.row(it.item) + events.row(it.event) + pos.row(r);
  }
  const bool train = dropout_rng != nullptr && config_.dropout > 0.0;
  if (cache) {
    cache->items.resize(n);
    cache->events.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      cache->items[t] = context[t].item;
      cache->events[t] = context[t].event;
    }
    cache->layers.assign(layers_.size(), LayerCache{});
    cache->drop0.resize(0, 0);
  }
  if (train) {
    Mat<S> mask = dropout_mask<S>(x.rows(), x.cols(), config_.dropout, *dropout_rng);
    x = x.cwiseProduct(mask);
    if (cache) cache->drop0 = std::move(mask);
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::size_t first = l + 1 == layers_.size() ? first_row : 0;
    x = layer_forward(params, layers_[l], x, first, cache ? &cache->layers[l] : nullptr,
                      train ? dropout_rng : nullptr);
  }
  Mat<S> y, hat;
  Vec<S> rstd;
  layer_norm<S>(x, layout_.map(params, lnf_g_), layout_.map(params, lnf_b_), y, hat, rstd);
  if (cache) {
    cache->out_hat = std::move(hat);
    cache->out_rstd = std::move(rstd);
  }
  return y;
}

template <class S>
Mat<S> Encoder<S>::layer_forward(const std::vector<S>& params, const LayerIds& ids,
                                 const Mat<S>& x, std::size_t first_row, LayerCache* cache,
                                 Rng* dropout_rng) const {
  const Eigen::Index n = x.rows();
  const Eigen::Index first = static_cast<Eigen::Index>(first_row);
  const Eigen::Index m = n - first;
  const Eigen::Index heads = config_.num_heads;
  const Eigen::Index dh = config_.d_model / config_.num_heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  Mat<S> a, a_hat;
  Vec<S> a_rstd;
  layer_norm<S>(x, layout_.map(params, ids.ln1_g), layout_.map(params, ids.ln1_b), a, a_hat,
                a_rstd);
  Mat<S> q = a.bottomRows(m) * layout_.map(params, ids.wq);
  Mat<S> k = a * layout_.map(params, ids.wk);
  Mat<S> v = a * layout_.map(params, ids.wv);

  Mat<S> o(m, config_.d_model);
  std::vector<Mat<S>> probs;
  if (cache) probs.reserve(static_cast<std::size_t>(heads));
  for (Eigen::Index h = 0; h < heads; ++h) {
    Mat<S> p = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Index visible = first + i + 1;
      const S mx = p.row(i).head(visible).maxCoeff();
      S total = 0;
      for (Eigen::Index j = 0; j < visible; ++j) {
        const S e = std::exp(p(i, j) - mx);
        p(i, j) = e;
        total += e;
      }
      p.row(i).head(visible) /= total;
      p.row(i).tail(n - visible).setZero();
    }
    o.middleCols(h * dh, dh) = p * v.middleCols(h * dh, dh);
    if (cache) probs.push_back(std::move(p));
  }

  Mat<S> z = o * layout_.map(params, ids.wo);
  Mat<S> drop1;
  if (dropout_rng) {
    drop1 = dropout_mask<S>(z.rows(), z.cols(), config_.dropout, *dropout_rng);
    z = z.cwiseProduct(drop1);
  }
  Mat<S> x1 = x.bottomRows(m) + z;

  Mat<S> b, b_hat;
  Vec<S> b_rstd;
  layer_norm<S>(x1, layout_.map(params, ids.ln2_g), layout_.map(params, ids.ln2_b), b, b_hat,
                b_rstd);
  Mat<S> u = b * layout_.map(params, ids.w1);
  u.rowwise() += layout_.map(params, ids.b1).row(0);
  Mat<S> f = u.unaryExpr([](S value) { return gelu(value); });
  Mat<S> g = f * layout_.map(params, ids.w2);
  g.rowwise() += layout_.map(params, ids.b2).row(0);
  Mat<S> drop2;
  if (dropout_rng) {
    drop2 = dropout_mask<S>(g.rows(), g.cols(), config_.dropout, *dropout_rng);
    g = g.cwiseProduct(drop2);
  }
  Mat<S> out = x1 + g;

  if (cache) {
    cache->first_row = first_row;
    cache->x_in = x;
    cache->a = std::move(a);
    cache->a_hat = std::move(a_hat);
    cache->a_rstd = std::move(a_rstd);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->o = std::move(o);
    cache->drop1 = std::move(drop1);
    cache->b = std::move(b);
    cache->b_hat = std::move(b_hat);
    cache->b_rstd = std::move(b_rstd);
    cache->u = std::move(u);
    cache->f = std::move(f);
    cache->drop2 = std::move(drop2);
  }
  return out;
}

template <class S>
void Encoder<S>::backward(const std::vector<S>& params, const Cache& cache, const Mat<S>& d_out,
                          std::vector<S>& grads) const {
  Mat<S> dx = layer_norm_backward<S>(d_out, cache.out_hat, cache.out_rstd,
                                     layout_.map(params, lnf_g_), layout_.map(grads, lnf_g_),
                                     layout_.map(grads, lnf_b_));
  for (std::size_t l = layers_.size(); l > 0; --l)
    dx = layer_backward(params, layers_[l - 1], cache.layers[l - 1], dx, grads);
  if (cache.drop0.size() > 0) dx = dx.cwiseProduct(cache.drop0);
  auto d_items = layout_.map(grads, item_emb_);
  auto d_events = layout_.map(grads, event_emb_);
  auto d_pos = layout_.map(grads, pos_emb_);
  for (Eigen::Index t = 0; t < dx.rows(); ++t) {
    const auto st = static_cast<std::size_t>(t);
    d_items.row(cache.items[st]) += dx.row(t);
    d_events.row(cache.events[st]) += dx.row(t);
    d_pos.row(t) += dx.row(t);
  }
}

template <class S>
Mat<S> Encoder<S>::layer_backward(const std::vector<S>& params, const LayerIds& ids,
                                  const LayerCache& c, const Mat<S>& d_out,
                                  std::vector<S>& grads) const {
  const Eigen::Index n = c.x_in.rows();
  const Eigen::Index first = static_cast<Eigen::Index>(c.first_row);
  const Eigen::Index m = n - first;
  const Eigen::Index heads = config_.num_heads;
  const Eigen::Index dh = config_.d_model / config_.num_heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  // Feed-forward block.
  Mat<S> dg = c.drop2.size() > 0 ? Mat<S>(d_out.cwiseProduct(c.drop2)) : d_out;
  layout_.map(grads, ids.w2) += c.f.transpose() * dg;
  layout_.map(grads, ids.b2).row(0) += dg.colwise().sum();
  Mat<S> du = dg * layout_.map(params, ids.w2).transpose();
  for (Eigen::Index i = 0; i < du.size(); ++i) du.data()[i] *= gelu_grad(c.u.data()[i]);
  layout_.map(grads, ids.w1) += c.b.transpose() * du;
  layout_.map(grads, ids.b1).row(0) += du.colwise().sum();
  Mat<S> db = du * layout_.map(params, ids.w1).transpose();
  Mat<S> dx1 = d_out + layer_norm_backward<S>(db, c.b_hat, c.b_rstd,
                                              layout_.map(params, ids.ln2_g),
                                              layout_.map(grads, ids.ln2_g),
                                              layout_.map(grads, ids.ln2_b));

  // Attention block.
  Mat<S> dx = Mat<S>::Zero(n, config_.d_model);
  dx.bottomRows(m) = dx1;
  Mat<S> dz = c.drop1.size() > 0 ? Mat<S>(dx1.cwiseProduct(c.drop1)) : dx1;
  layout_.map(grads, ids.wo) += c.o.transpose() * dz;
  Mat<S> d_o = dz * layout_.map(params, ids.wo).transpose();

  Mat<S> dq = Mat<S>::Zero(m, config_.d_model);
  Mat<S> dk = Mat<S>::Zero(n, config_.d_model);
  Mat<S> dv = Mat<S>::Zero(n, config_.d_model);
  for (Eigen::Index h = 0; h < heads; ++h) {
    const Mat<S>& p = c.probs[static_cast<std::size_t>(h)];
    const auto d_oh = d_o.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh) += p.transpose() * d_oh;
    Mat<S> dp = d_oh * c.v.middleCols(h * dh, dh).transpose();
    Vec<S> row_dot = dp.cwiseProduct(p).rowwise().sum();
    Mat<S> ds = p.cwiseProduct(dp.colwise() - row_dot) * scale;
    dq.middleCols(h * dh, dh) += ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) += ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  layout_.map(grads, ids.wq) += c.a.bottomRows(m).transpose() * dq;
  layout_.map(grads, ids.wk) += c.a.transpose() * dk;
  layout_.map(grads, ids.wv) += c.a.transpose() * dv;
  Mat<S> da = dk * layout_.map(params, ids.wk).transpose() +
              dv * layout_.map(params, ids.wv).transpose();
  da.bottomRows(m) += dq * layout_.map(params, ids.wq).transpose();
  dx += layer_norm_backward<S>(da, c.a_hat, c.a_rstd, layout_.map(params, ids.ln1_g),
                               layout_.map(grads, ids.ln1_g), layout_.map(grads, ids.ln1_b));
  return dx;
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace phead
