#pragma once

// The three cell variants (baseline transformer, continuous-role tpt-c,
// discrete-role tpt-d) and the encoder/decoder stacks built from them.
//
// Cell layout per layer, pre-norm style:
//   F = xhat + concat_h(attn_h) * W_o          (xhat = layer_norm(x); F is the filler)
//   R = role vectors computed from F           (variant dependent, skipped for baseline)
//   T = R (.) F + F                            (Hadamard binding plus unbound filler)
//   y = T + ffn_branch(T)                      (ReLU feed-forward, own residual)
//
// tpt-d draws R per head by attending over a per-site dictionary of
// normalized role embeddings; tpt-c projects F linearly. Every binding
// site (encoder-self, decoder-self, decoder-cross, per layer) owns an
// independent role parameter set.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tpt/config.hpp"
#include "tpt/tensor.hpp"

namespace tpt {

// ---- parameter inventory ----

enum class Init { kZero, kOne, kTruncNormal };

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
  std::string group;  // embeddings | attention | ff | role | norms
  Init init;
};

namespace detail {

inline void attention_specs(std::vector<ParamSpec>& out, const std::string& prefix,
                            const ModelConfig& cfg) {
  const int dm = cfg.d_model, dk = cfg.d_k, h = cfg.heads;
  out.push_back({prefix + ".ln_gain", {dm}, "norms", Init::kOne});
  out.push_back({prefix + ".ln_bias", {dm}, "norms", Init::kZero});
  out.push_back({prefix + ".w_q", {dm, h * dk}, "attention", Init::kTruncNormal});
  out.push_back({prefix + ".b_q", {h * dk}, "attention", Init::kZero});
  out.push_back({prefix + ".w_k", {dm, h * dk}, "attention", Init::kTruncNormal});
  out.push_back({prefix + ".b_k", {h * dk}, "attention", Init::kZero});
  out.push_back({prefix + ".w_v", {dm, h * dk}, "attention", Init::kTruncNormal});
  out.push_back({prefix + ".b_v", {h * dk}, "attention", Init::kZero});
  out.push_back({prefix + ".w_o", {dm, dm}, "attention", Init::kTruncNormal});
}

inline void role_specs(std::vector<ParamSpec>& out, const std::string& prefix,
                       const ModelConfig& cfg) {
  const int dm = cfg.d_model;
  if (cfg.variant == Variant::kTptD) {
    out.push_back({prefix + ".dict", {cfg.n_roles, cfg.d_role}, "role", Init::kTruncNormal});
    out.push_back({prefix + ".w_r", {dm, cfg.heads * cfg.n_roles}, "role", Init::kTruncNormal});
    out.push_back({prefix + ".b_r", {cfg.heads * cfg.n_roles}, "role", Init::kZero});
  } else if (cfg.variant == Variant::kTptC) {
    out.push_back({prefix + ".w_lin", {dm, dm}, "role", Init::kTruncNormal});
    out.push_back({prefix + ".b_lin", {dm}, "role", Init::kZero});
  }
}

inline void ff_specs(std::vector<ParamSpec>& out, const std::string& prefix,
                     const ModelConfig& cfg) {
  out.push_back({prefix + ".w_g", {cfg.d_model, cfg.d_ff}, "ff", Init::kTruncNormal});
  out.push_back({prefix + ".b_g", {cfg.d_ff}, "ff", Init::kZero});
  out.push_back({prefix + ".w_f", {cfg.d_ff, cfg.d_model}, "ff", Init::kTruncNormal});
  out.push_back({prefix + ".b_f", {cfg.d_model}, "ff", Init::kZero});
}

}  // namespace detail

/// Full inventory of learnable tensors for a configuration, in the fixed
/// order used for initialization, checkpoints and optimizer state.
inline std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  out.push_back({"embedding", {cfg.vocab_size, cfg.d_model}, "embeddings", Init::kTruncNormal});
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    detail::attention_specs(out, p + ".self_attn", cfg);
    detail::role_specs(out, p + ".self_role", cfg);
    detail::ff_specs(out, p + ".ff", cfg);
  }
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    detail::attention_specs(out, p + ".self_attn", cfg);
    detail::role_specs(out, p + ".self_role", cfg);
    detail::attention_specs(out, p + ".cross_attn", cfg);
    detail::role_specs(out, p + ".cross_role", cfg);
    detail::ff_specs(out, p + ".ff", cfg);
  }
  if (cfg.final_norm) {
    out.push_back({"encoder.final_norm.gain", {cfg.d_model}, "norms", Init::kOne});
    out.push_back({"encoder.final_norm.bias", {cfg.d_model}, "norms", Init::kZero});
    out.push_back({"decoder.final_norm.gain", {cfg.d_model}, "norms", Init::kOne});
    out.push_back({"decoder.final_norm.bias", {cfg.d_model}, "norms", Init::kZero});
  }
  return out;
}

struct ParamCount {
  long long total = 0;
  std::map<std::string, long long> groups;
};

/// Exhaustive count of learnable scalars, by group. Pure bookkeeping over
/// parameter_specs, so it never allocates model-sized buffers.
inline ParamCount count_parameters(const ModelConfig& cfg) {
  ParamCount pc;
  for (const auto& spec : parameter_specs(cfg)) {
    long long n = 1;
    for (int e : spec.shape) n *= e;
    pc.total += n;
    pc.groups[spec.group] += n;
  }
  return pc;
}

template <class T>
class ParameterStore {
 public:
  TensorT<T>& add(const std::string& name, TensorT<T> tensor) {
    if (index_.count(name)) throw std::runtime_error("parameter registered twice: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(tensor));
    return items_.back().second;
  }
  TensorT<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
    return items_[it->second].second;
  }
  const TensorT<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
    return items_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::vector<std::pair<std::string, TensorT<T>>>& items() { return items_; }
  const std::vector<std::pair<std::string, TensorT<T>>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<std::pair<std::string, TensorT<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---- parameter views per sublayer ----

template <class T>
struct AttentionParams {
  TensorT<T> ln_gain, ln_bias;
  TensorT<T> w_q, b_q, w_k, b_k, w_v, b_v;  // fused over heads: [d_m, H*d_k]
  TensorT<T> w_o;
};

template <class T>
struct RoleParams {
  TensorT<T> dict, w_r, b_r;    // tpt-d
  TensorT<T> w_lin, b_lin;      // tpt-c
};

template <class T>
struct FeedForwardParams {
  TensorT<T> w_g, b_g, w_f, b_f;
};

template <class T>
struct LayerParams {
  AttentionParams<T> self_attn;
  RoleParams<T> self_role;
  AttentionParams<T> cross_attn;  // decoder layers only
  RoleParams<T> cross_role;
  FeedForwardParams<T> ff;
};

// ---- recording for probing / analysis ----

enum class BindingSite { kEncoderSelf, kDecoderSelf, kDecoderCross };

inline std::string to_string(BindingSite s) {
  switch (s) {
    case BindingSite::kEncoderSelf: return "enc-self";
    case BindingSite::kDecoderSelf: return "dec-self";
    case BindingSite::kDecoderCross: return "dec-cross";
  }
  return "?";
}

inline BindingSite binding_site_from_string(const std::string& s) {
  if (s == "enc-self") return BindingSite::kEncoderSelf;
  if (s == "dec-self") return BindingSite::kDecoderSelf;
  if (s == "dec-cross") return BindingSite::kDecoderCross;
  throw ConfigError("binding site: expected enc-self, dec-self or dec-cross, got '" + s + "'");
}

/// Detached per-site snapshots captured during a forward pass.
template <class T>
struct SiteRecord {
  TensorT<T> filler;          // [k, d_m], post attention residual
  TensorT<T> roles;           // [k, d_m], undefined for baseline
  TensorT<T> tpr;             // [k, d_m], == filler for baseline
  TensorT<T> role_attention;  // [H, k, N_r], tpt-d only
};

template <class T>
struct StackRecorder {
  std::vector<SiteRecord<T>> encoder_self, decoder_self, decoder_cross;  // [layer]
  std::vector<TensorT<T>> encoder_final, decoder_final;                  // [layer], post-FF

  const std::vector<SiteRecord<T>>& site(BindingSite s) const {
    switch (s) {
      case BindingSite::kEncoderSelf: return encoder_self;
      case BindingSite::kDecoderSelf: return decoder_self;
      default: return decoder_cross;
    }
  }
};

// ---- cell operations ----

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kRoleNormEps = 1e-12;

namespace detail {

template <class T>
TensorT<T> maybe_dropout(const TensorT<T>& x, double p, Rng* rng, bool training) {
  if (!training || p == 0.0) return x;
  if (!rng) throw std::runtime_error("dropout in training mode needs an rng");
  return dropout(x, p, *rng, training);
}

}  // namespace detail

/// Multi-head attention sublayer. Queries come from the normalized input;
/// in self-attention (cross == nullptr) keys and values share that
/// normalized input, in cross-attention they come from `cross` as given.
/// Output is the normalized input plus the projected attention mix, i.e.
/// the residual adds xhat, not x.
template <class T>
TensorT<T> mh_attention(const TensorT<T>& x, const TensorT<T>* cross,
                        const AttentionParams<T>& p, const ModelConfig& cfg,
                        const TensorT<T>* mask, bool training = false, Rng* rng = nullptr) {
  if (x.ndim() != 2 || x.dim(1) != cfg.d_model)
    throw std::invalid_argument("mh_attention: input must be [k, d_model]");
  if (cross && (cross->ndim() != 2 || cross->dim(1) != cfg.d_model))
    throw std::invalid_argument("mh_attention: cross target must be [k, d_model]");
  const int dk = cfg.d_k;
  auto xhat = layer_norm(x, p.ln_gain, p.ln_bias, static_cast<T>(kLayerNormEps));
  const TensorT<T> tgt = cross ? *cross : xhat;
  auto q = add_bias(matmul(xhat, p.w_q), p.b_q);
  auto k = add_bias(matmul(tgt, p.w_k), p.b_k);
  auto v = add_bias(matmul(tgt, p.w_v), p.b_v);
  if (mask && (mask->dim(0) != x.dim(0) || mask->dim(1) != tgt.dim(0)))
    throw std::invalid_argument("mh_attention: mask shape mismatch");
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  std::vector<TensorT<T>> heads;
  heads.reserve(cfg.heads);
  for (int h = 0; h < cfg.heads; ++h) {
    auto qh = slice_lastdim(q, h * dk, dk);
    auto kh = slice_lastdim(k, h * dk, dk);
    auto vh = slice_lastdim(v, h * dk, dk);
    auto scores = scale(matmul_nt(qh, kh), inv_sqrt_dk);
    auto probs = masked_softmax_lastdim(scores, mask);
    probs = detail::maybe_dropout(probs, cfg.dropout, rng, training);
    heads.push_back(matmul(probs, vh));
  }
  auto mixed = matmul(concat_lastdim(heads), p.w_o);
  return add(xhat, detail::maybe_dropout(mixed, cfg.dropout, rng, training));
}

/// Dictionary rows scaled to unit norm before use.
template <class T>
TensorT<T> normalize_roles(const TensorT<T>& dict) {
  return l2_normalize_rows(dict, static_cast<T>(kRoleNormEps));
}

template <class T>
struct DiscreteRoles {
  TensorT<T> roles;                        // [k, d_m]
  std::vector<TensorT<T>> head_attention;  // per head [k, N_r], graph tensors
};

/// Per head, softmax attention over the normalized dictionary rows; the
/// multi-head role vector is the concatenation across heads.
template <class T>
DiscreteRoles<T> compute_roles_discrete(const TensorT<T>& filler, const RoleParams<T>& p,
                                        const ModelConfig& cfg) {
  if (cfg.d_role * cfg.heads != cfg.d_model)
    throw std::invalid_argument("compute_roles_discrete: d_role * heads must equal d_model");
  const int nr = cfg.n_roles;
  auto rhat = normalize_roles(p.dict);
  auto logits = add_bias(matmul(filler, p.w_r), p.b_r);  // [k, H*N_r]
  DiscreteRoles<T> out;
  std::vector<TensorT<T>> heads;
  heads.reserve(cfg.heads);
  for (int h = 0; h < cfg.heads; ++h) {
    auto attn = softmax_lastdim(slice_lastdim(logits, h * nr, nr));
    out.head_attention.push_back(attn);
    heads.push_back(matmul(attn, rhat));
  }
  out.roles = concat_lastdim(heads);
  return out;
}

/// Continuous roles: a plain affine map of the filler, no dictionary.
template <class T>
TensorT<T> compute_roles_continuous(const TensorT<T>& filler, const TensorT<T>& w,
                                    const TensorT<T>& b) {
  return add_bias(matmul(filler, w), b);
}

/// Hadamard binding with the unbound filler added back.
template <class T>
TensorT<T> tpr_bind(const TensorT<T>& roles, const TensorT<T>& filler) {
  detail::check_same_shape(roles, filler, "tpr_bind");
  return add(hadamard(roles, filler), filler);
}

template <class T>
TensorT<T> feed_forward(const TensorT<T>& x, const FeedForwardParams<T>& p,
                        double dropout_p = 0.0, bool training = false, Rng* rng = nullptr) {
  auto branch = add_bias(matmul(relu(add_bias(matmul(x, p.w_g), p.b_g)), p.w_f), p.b_f);
  return add(x, detail::maybe_dropout(branch, dropout_p, rng, training));
}

// ---- the model ----

template <class T>
class ModelT {
 public:
  explicit ModelT(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (const auto& spec : parameter_specs(cfg_)) {
      auto t = TensorT<T>::zeros(spec.shape, /*requires_grad=*/true);
      switch (spec.init) {
        case Init::kZero:
          break;
        case Init::kOne:
          for (auto& v : t.data()) v = T(1);
          break;
        case Init::kTruncNormal:
          for (auto& v : t.data()) v = static_cast<T>(rng.trunc_normal(0.02));
          break;
      }
      params_.add(spec.name, t);
    }
    bind_views();
    build_positional();
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }
  const TensorT<T>& embedding() const { return embedding_; }
  const LayerParams<T>& encoder_layer(int l) const { return encoder_[l]; }
  const LayerParams<T>& decoder_layer(int l) const { return decoder_[l]; }

  void zero_grads() {
    for (auto& [name, t] : params_.items()) t.zero_grad();
  }

  /// FNV-1a over all parameter bytes; used to assert a frozen backbone.
  std::uint64_t parameter_checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, t] : params_.items()) {
      for (const T& v : t.data()) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(&v);
        for (std::size_t b = 0; b < sizeof(T); ++b) {
          h ^= bytes[b];
          h *= 1099511628211ULL;
        }
      }
    }
    return h;
  }

  /// Token embedding (scaled by sqrt(d_model)) plus positional encoding,
  /// then embedding dropout.
  TensorT<T> embed(const std::vector<int>& ids, bool training, Rng* rng) const {
    if (ids.empty()) throw std::invalid_argument("embed: empty sequence");
    if (static_cast<int>(ids.size()) > cfg_.max_positions)
      throw std::invalid_argument("embed: sequence of " + std::to_string(ids.size()) +
                                  " exceeds max_positions " + std::to_string(cfg_.max_positions));
    auto x = scale(embedding_lookup(embedding_, ids),
                   static_cast<T>(std::sqrt(static_cast<double>(cfg_.d_model))));
    if (cfg_.positional == PositionalEncoding::kSinusoidal) {
      const int k = static_cast<int>(ids.size()), d = cfg_.d_model;
      auto pe = TensorT<T>::zeros({k, d});
      for (int i = 0; i < k; ++i)
        std::copy_n(positional_.data() + static_cast<std::size_t>(i) * d, d,
                    pe.data().data() + static_cast<std::size_t>(i) * d);
      x = add(x, pe);
    }
    return detail::maybe_dropout(x, cfg_.dropout, rng, training);
  }

  TensorT<T> encode(const std::vector<int>& src_ids, bool training = false, Rng* rng = nullptr,
                    StackRecorder<T>* rec = nullptr) const {
    auto x = embed(src_ids, training, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      auto f = mh_attention<T>(x, nullptr, encoder_[l].self_attn, cfg_, nullptr, training, rng);
      auto t = bind_site(f, encoder_[l].self_role, rec ? &rec->encoder_self : nullptr);
      x = feed_forward(t, encoder_[l].ff, cfg_.dropout, training, rng);
      if (rec) rec->encoder_final.push_back(x.detach());
    }
    if (cfg_.final_norm)
      x = layer_norm(x, params_.get("encoder.final_norm.gain"),
                     params_.get("encoder.final_norm.bias"), static_cast<T>(kLayerNormEps));
    return x;
  }

  /// Teacher-forced decoder pass over the full target prefix; causal
  /// self-attention, then cross-attention onto the encoder output, each
  /// with its own binding site.
  TensorT<T> decode(const TensorT<T>& enc_out, const std::vector<int>& tgt_ids,
                    bool training = false, Rng* rng = nullptr,
                    StackRecorder<T>* rec = nullptr) const {
    auto y = embed(tgt_ids, training, rng);
    const int ky = static_cast<int>(tgt_ids.size());
    auto causal = TensorT<T>::zeros({ky, ky});
    for (int i = 0; i < ky; ++i)
      for (int j = 0; j <= i; ++j) causal.data()[i * ky + j] = T(1);
    for (int l = 0; l < cfg_.layers; ++l) {
      auto f = mh_attention<T>(y, nullptr, decoder_[l].self_attn, cfg_, &causal, training, rng);
      auto t = bind_site(f, decoder_[l].self_role, rec ? &rec->decoder_self : nullptr);
      auto fc = mh_attention<T>(t, &enc_out, decoder_[l].cross_attn, cfg_, nullptr, training, rng);
      auto tc = bind_site(fc, decoder_[l].cross_role, rec ? &rec->decoder_cross : nullptr);
      y = feed_forward(tc, decoder_[l].ff, cfg_.dropout, training, rng);
      if (rec) rec->decoder_final.push_back(y.detach());
    }
    if (cfg_.final_norm)
      y = layer_norm(y, params_.get("decoder.final_norm.gain"),
                     params_.get("decoder.final_norm.bias"), static_cast<T>(kLayerNormEps));
    return y;
  }

  /// Output distribution through the tied embedding table: logits = Y E^T.
  TensorT<T> output_logits(const TensorT<T>& dec_out) const {
    return matmul_nt(dec_out, embedding_);
  }

  /// Convenience: full teacher-forced forward to logits.
  TensorT<T> forward_logits(const std::vector<int>& src_ids, const std::vector<int>& tgt_ids,
                            bool training = false, Rng* rng = nullptr,
                            StackRecorder<T>* rec = nullptr) const {
    auto h = encode(src_ids, training, rng, rec);
    auto y = decode(h, tgt_ids, training, rng, rec);
    return output_logits(y);
  }

 private:
  TensorT<T> bind_site(const TensorT<T>& filler, const RoleParams<T>& role,
                       std::vector<SiteRecord<T>>* rec) const {
    TensorT<T> out, roles;
    std::vector<TensorT<T>> head_attn;
    switch (cfg_.variant) {
      case Variant::kBaseline:
        out = filler;
        break;
      case Variant::kTptC:
        roles = compute_roles_continuous(filler, role.w_lin, role.b_lin);
        out = tpr_bind(roles, filler);
        break;
      case Variant::kTptD: {
        auto dr = compute_roles_discrete(filler, role, cfg_);
        roles = dr.roles;
        head_attn = std::move(dr.head_attention);
        out = tpr_bind(roles, filler);
        break;
      }
    }
    if (rec) {
      SiteRecord<T> r;
      r.filler = filler.detach();
      if (roles.defined()) r.roles = roles.detach();
      r.tpr = out.detach();
      if (!head_attn.empty()) {
        const int k = filler.dim(0), nr = cfg_.n_roles;
        auto attn = TensorT<T>::zeros({cfg_.heads, k, nr});
        for (int h = 0; h < cfg_.heads; ++h)
          std::copy_n(head_attn[h].data().data(), static_cast<std::size_t>(k) * nr,
                      attn.data().data() + static_cast<std::size_t>(h) * k * nr);
        r.role_attention = attn;
      }
      rec->push_back(std::move(r));
    }
    return out;
  }

  void bind_attention(AttentionParams<T>& a, const std::string& prefix) {
    a.ln_gain = params_.get(prefix + ".ln_gain");
    a.ln_bias = params_.get(prefix + ".ln_bias");
    a.w_q = params_.get(prefix + ".w_q");
    a.b_q = params_.get(prefix + ".b_q");
    a.w_k = params_.get(prefix + ".w_k");
    a.b_k = params_.get(prefix + ".b_k");
    a.w_v = params_.get(prefix + ".w_v");
    a.b_v = params_.get(prefix + ".b_v");
    a.w_o = params_.get(prefix + ".w_o");
  }

  void bind_role(RoleParams<T>& r, const std::string& prefix) {
    if (cfg_.variant == Variant::kTptD) {
      r.dict = params_.get(prefix + ".dict");
      r.w_r = params_.get(prefix + ".w_r");
      r.b_r = params_.get(prefix + ".b_r");
    } else if (cfg_.variant == Variant::kTptC) {
      r.w_lin = params_.get(prefix + ".w_lin");
      r.b_lin = params_.get(prefix + ".b_lin");
    }
  }

  void bind_views() {
    embedding_ = params_.get("embedding");
    encoder_.resize(cfg_.layers);
    decoder_.resize(cfg_.layers);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string e = "encoder." + std::to_string(l);
      bind_attention(encoder_[l].self_attn, e + ".self_attn");
      bind_role(encoder_[l].self_role, e + ".self_role");
      auto& eff = encoder_[l].ff;
      eff.w_g = params_.get(e + ".ff.w_g");
      eff.b_g = params_.get(e + ".ff.b_g");
      eff.w_f = params_.get(e + ".ff.w_f");
      eff.b_f = params_.get(e + ".ff.b_f");
      const std::string d = "decoder." + std::to_string(l);
      bind_attention(decoder_[l].self_attn, d + ".self_attn");
      bind_role(decoder_[l].self_role, d + ".self_role");
      bind_attention(decoder_[l].cross_attn, d + ".cross_attn");
      bind_role(decoder_[l].cross_role, d + ".cross_role");
      auto& dff = decoder_[l].ff;
      dff.w_g = params_.get(d + ".ff.w_g");
      dff.b_g = params_.get(d + ".ff.b_g");
      dff.w_f = params_.get(d + ".ff.w_f");
      dff.b_f = params_.get(d + ".ff.b_f");
    }
  }

  void build_positional() {
    const int n = cfg_.max_positions, d = cfg_.d_model;
    positional_.assign(static_cast<std::size_t>(n) * d, T(0));
    for (int pos = 0; pos < n; ++pos)
      for (int i = 0; i < d; i += 2) {
        const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
        positional_[static_cast<std::size_t>(pos) * d + i] = static_cast<T>(std::sin(angle));
        if (i + 1 < d)
          positional_[static_cast<std::size_t>(pos) * d + i + 1] = static_cast<T>(std::cos(angle));
      }
  }

  ModelConfig cfg_;
  ParameterStore<T> params_;
  TensorT<T> embedding_;
  std::vector<LayerParams<T>> encoder_, decoder_;
  std::vector<T> positional_;

  template <class U>
  friend class GenSession;
};

using Model = ModelT<float>;

// ---- incremental decoding ----

/// Frozen-model generation session for one source sequence: the encoder
/// runs once, cross-attention keys/values are precomputed per layer, and
/// each hypothesis carries value-semantics caches of its decoder
/// self-attention keys/values so beams can fork cheaply.
template <class T>
class GenSession {
 public:
  struct State {
    std::vector<std::vector<T>> k_cache, v_cache;  // per layer, rows of [H*d_k]
    int length = 0;
  };

  GenSession(const ModelT<T>& model, const std::vector<int>& src_ids)
      : model_(model), cfg_(model.config()) {
    NoGradGuard ng;
    enc_out_ = model.encode(src_ids);
    cross_k_.reserve(cfg_.layers);
    cross_v_.reserve(cfg_.layers);
    for (int l = 0; l < cfg_.layers; ++l) {
      const auto& a = model.decoder_layer(l).cross_attn;
      cross_k_.push_back(add_bias(matmul(enc_out_, a.w_k), a.b_k));
      cross_v_.push_back(add_bias(matmul(enc_out_, a.w_v), a.b_v));
    }
  }

  const TensorT<T>& encoder_output() const { return enc_out_; }

  State initial() const {
    State s;
    s.k_cache.resize(cfg_.layers);
    s.v_cache.resize(cfg_.layers);
    return s;
  }

  /// Feeds one token, advances the state, returns the next-token
  /// log-probability row.
  std::vector<T> step(State& st, int token) const {
    NoGradGuard ng;
    if (st.length + 1 > cfg_.max_positions)
      throw std::invalid_argument("generation exceeded max_positions");
    auto x = model_.embed({token}, false, nullptr);
    // embed() adds the positional row for position 0; replace with the
    // row for the true position.
    if (cfg_.positional == PositionalEncoding::kSinusoidal && st.length > 0) {
      const int d = cfg_.d_model;
      const T* pe = model_.positional_.data();
      for (int j = 0; j < d; ++j)
        x.data()[j] += pe[static_cast<std::size_t>(st.length) * d + j] - pe[j];
    }
    const int dk = cfg_.d_k;
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    for (int l = 0; l < cfg_.layers; ++l) {
      const auto& lp = model_.decoder_layer(l);
      // self attention over the cached prefix plus this position
      auto xhat = layer_norm(x, lp.self_attn.ln_gain, lp.self_attn.ln_bias,
                             static_cast<T>(kLayerNormEps));
      auto q = add_bias(matmul(xhat, lp.self_attn.w_q), lp.self_attn.b_q);
      auto k_new = add_bias(matmul(xhat, lp.self_attn.w_k), lp.self_attn.b_k);
      auto v_new = add_bias(matmul(xhat, lp.self_attn.w_v), lp.self_attn.b_v);
      auto& kc = st.k_cache[l];
      auto& vc = st.v_cache[l];
      kc.insert(kc.end(), k_new.data().begin(), k_new.data().end());
      vc.insert(vc.end(), v_new.data().begin(), v_new.data().end());
      const int rows = st.length + 1;
      auto k_all = TensorT<T>::from({rows, cfg_.heads * dk}, kc);
      auto v_all = TensorT<T>::from({rows, cfg_.heads * dk}, vc);
      std::vector<TensorT<T>> heads;
      heads.reserve(cfg_.heads);
      for (int h = 0; h < cfg_.heads; ++h) {
        auto scores = scale(matmul_nt(slice_lastdim(q, h * dk, dk), slice_lastdim(k_all, h * dk, dk)),
                            inv_sqrt_dk);
        heads.push_back(matmul(softmax_lastdim(scores), slice_lastdim(v_all, h * dk, dk)));
      }
      auto f = add(xhat, matmul(concat_lastdim(heads), lp.self_attn.w_o));
      auto t = bind_eval(f, lp.self_role);
      // cross attention onto the precomputed encoder projections
      auto that = layer_norm(t, lp.cross_attn.ln_gain, lp.cross_attn.ln_bias,
                             static_cast<T>(kLayerNormEps));
      auto qc = add_bias(matmul(that, lp.cross_attn.w_q), lp.cross_attn.b_q);
      std::vector<TensorT<T>> cheads;
      cheads.reserve(cfg_.heads);
      for (int h = 0; h < cfg_.heads; ++h) {
        auto scores = scale(
            matmul_nt(slice_lastdim(qc, h * dk, dk), slice_lastdim(cross_k_[l], h * dk, dk)),
            inv_sqrt_dk);
        cheads.push_back(
            matmul(softmax_lastdim(scores), slice_lastdim(cross_v_[l], h * dk, dk)));
      }
      auto fc = add(that, matmul(concat_lastdim(cheads), lp.cross_attn.w_o));
      auto tc = bind_eval(fc, lp.cross_role);
      x = feed_forward(tc, lp.ff);
    }
    if (cfg_.final_norm)
      x = layer_norm(x, model_.parameters().get("decoder.final_norm.gain"),
                     model_.parameters().get("decoder.final_norm.bias"),
                     static_cast<T>(kLayerNormEps));
    st.length += 1;
    auto logits = model_.output_logits(x);
    return log_softmax_lastdim(logits).data();
  }

 private:
  TensorT<T> bind_eval(const TensorT<T>& filler, const RoleParams<T>& role) const {
    switch (cfg_.variant) {
      case Variant::kBaseline:
        return filler;
      case Variant::kTptC:
        return tpr_bind(compute_roles_continuous(filler, role.w_lin, role.b_lin), filler);
      case Variant::kTptD:
        return tpr_bind(compute_roles_discrete(filler, role, cfg_).roles, filler);
    }
    return filler;
  }

  const ModelT<T>& model_;
  const ModelConfig& cfg_;
  TensorT<T> enc_out_;
  std::vector<TensorT<T>> cross_k_, cross_v_;
};

}  // namespace tpt
