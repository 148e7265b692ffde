#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "tpt/errors.hpp"

namespace tpt {

// Reserved vocabulary ids, fixed across every corpus and checkpoint.
inline constexpr int kPadId = 0;
inline constexpr int kEosId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kBosId = 3;
inline constexpr int kReservedIds = 4;

enum class Variant { kBaseline, kTptC, kTptD };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kTptC: return "tpt-c";
    case Variant::kTptD: return "tpt-d";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::kBaseline;
  if (s == "tpt-c") return Variant::kTptC;
  if (s == "tpt-d") return Variant::kTptD;
  throw ConfigError("variant: expected baseline, tpt-c or tpt-d, got '" + s + "'");
}

enum class PositionalEncoding { kSinusoidal, kNone };

/// Architecture hyperparameters plus the choices the reference
/// description leaves open (positional encoding, final stack norm).
struct ModelConfig {
  Variant variant = Variant::kTptD;
  int layers = 6;           // per stack
  int heads = 8;
  int d_model = 512;
  int d_k = 64;             // per-head key/query/value width
  int d_ff = 2048;
  int n_roles = 50;
  int d_role = 64;          // per-head role width
  int vocab_size = 8000;
  int max_positions = 512;
  double dropout = 0.1;
  PositionalEncoding positional = PositionalEncoding::kSinusoidal;
  bool final_norm = false;

  void validate() const {
    if (layers < 1) throw ConfigError("model.layers must be >= 1");
    if (heads < 1) throw ConfigError("model.heads must be >= 1");
    if (d_k * heads != d_model)
      throw ConfigError("model.d_k * model.heads must equal model.d_model");
    if (variant == Variant::kTptD) {
      if (n_roles < 1) throw ConfigError("model.n_roles must be >= 1");
      if (d_role * heads != d_model)
        throw ConfigError("model.d_role * model.heads must equal model.d_model");
    }
    if (d_ff < 1) throw ConfigError("model.d_ff must be >= 1");
    if (vocab_size <= kReservedIds)
      throw ConfigError("model.vocab_size must exceed the 4 reserved ids");
    if (max_positions < 1) throw ConfigError("model.max_positions must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout must be in [0, 1)");
  }
};

struct TrainConfig {
  int batch_size = 8;
  int max_steps = 1000;
  int warmup_steps = 1000;
  double lr_scale = 1.0;
  int grad_accum = 1;
  std::uint64_t seed = 1;
  int checkpoint_every = 1000;
  double label_smoothing = 0.0;
  int max_source_len = 256;
  int max_target_len = 64;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
    if (warmup_steps < 1) throw ConfigError("train.warmup_steps must be >= 1");
    if (lr_scale <= 0.0) throw ConfigError("train.lr_scale must be positive");
    if (grad_accum < 1) throw ConfigError("train.grad_accum must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
    if (label_smoothing < 0.0 || label_smoothing > 0.3)
      throw ConfigError("train.label_smoothing must be in [0, 0.3]");
    if (max_source_len < 2 || max_target_len < 2)
      throw ConfigError("train.max_source_len/max_target_len must be >= 2");
  }
};

// ---- JSON round-trip (canonical form: sorted keys, no whitespace) ----

namespace detail {

template <class V>
V json_get(const nlohmann::json& j, const std::string& key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& m) {
  return nlohmann::json{
      {"variant", to_string(m.variant)},
      {"layers", m.layers},
      {"heads", m.heads},
      {"d_model", m.d_model},
      {"d_k", m.d_k},
      {"d_ff", m.d_ff},
      {"n_roles", m.n_roles},
      {"d_role", m.d_role},
      {"vocab_size", m.vocab_size},
      {"max_positions", m.max_positions},
      {"dropout", m.dropout},
      {"positional", m.positional == PositionalEncoding::kSinusoidal ? "sinusoidal" : "none"},
      {"final_norm", m.final_norm},
  };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.variant = variant_from_string(detail::json_get<std::string>(j, "variant", to_string(m.variant)));
  m.layers = detail::json_get(j, "layers", m.layers);
  m.heads = detail::json_get(j, "heads", m.heads);
  m.d_model = detail::json_get(j, "d_model", m.d_model);
  m.d_k = detail::json_get(j, "d_k", m.d_k);
  m.d_ff = detail::json_get(j, "d_ff", m.d_ff);
  m.n_roles = detail::json_get(j, "n_roles", m.n_roles);
  m.d_role = detail::json_get(j, "d_role", m.d_role);
  m.vocab_size = detail::json_get(j, "vocab_size", m.vocab_size);
  m.max_positions = detail::json_get(j, "max_positions", m.max_positions);
  m.dropout = detail::json_get(j, "dropout", m.dropout);
  const std::string pos = detail::json_get<std::string>(j, "positional", "sinusoidal");
  if (pos == "sinusoidal") {
    m.positional = PositionalEncoding::kSinusoidal;
  } else if (pos == "none") {
    m.positional = PositionalEncoding::kNone;
  } else {
    throw ConfigError("model.positional: expected sinusoidal or none, got '" + pos + "'");
  }
  m.final_norm = detail::json_get(j, "final_norm", m.final_norm);
  m.validate();
  return m;
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return nlohmann::json{
      {"batch_size", t.batch_size},
      {"max_steps", t.max_steps},
      {"warmup_steps", t.warmup_steps},
      {"lr_scale", t.lr_scale},
      {"grad_accum", t.grad_accum},
      {"seed", t.seed},
      {"checkpoint_every", t.checkpoint_every},
      {"label_smoothing", t.label_smoothing},
      {"max_source_len", t.max_source_len},
      {"max_target_len", t.max_target_len},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.batch_size = detail::json_get(j, "batch_size", t.batch_size);
  t.max_steps = detail::json_get(j, "max_steps", t.max_steps);
  t.warmup_steps = detail::json_get(j, "warmup_steps", t.warmup_steps);
  t.lr_scale = detail::json_get(j, "lr_scale", t.lr_scale);
  t.grad_accum = detail::json_get(j, "grad_accum", t.grad_accum);
  t.seed = detail::json_get(j, "seed", t.seed);
  t.checkpoint_every = detail::json_get(j, "checkpoint_every", t.checkpoint_every);
  t.label_smoothing = detail::json_get(j, "label_smoothing", t.label_smoothing);
  t.max_source_len = detail::json_get(j, "max_source_len", t.max_source_len);
  t.max_target_len = detail::json_get(j, "max_target_len", t.max_target_len);
  t.validate();
  return t;
}

/// Canonical text form used in checkpoint headers and reports:
/// nlohmann objects keep keys sorted, dump() emits no whitespace.
inline std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

}  // namespace tpt
