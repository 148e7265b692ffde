#pragma once

// Checkpoint container. Layout (all integers little-endian):
//
//   "TPTS"  magic
//   u32     format version (currently 1)
//   u64     header length
//   bytes   canonical JSON {"model": {...}, "train": {...}}
//   u64     training step
//   u64     rng seed
//   u64     rng counter
//   tensor table: model parameters
//   u8      has_optimizer
//   [u64    optimizer step count]
//   [tensor table: optimizer accumulators]
//
// A tensor table is: u64 count, then per tensor u32 name length, name
// bytes, u8 dtype (0 = f32, 1 = f64), u8 rank, u64 extents..., raw
// little-endian scalar bytes. Tables are written in registration order,
// so save -> load -> save reproduces the file byte for byte.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "tpt/adafactor.hpp"
#include "tpt/config.hpp"
#include "tpt/errors.hpp"
#include "tpt/model.hpp"

namespace tpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace detail {

inline constexpr char kMagic[4] = {'T', 'P', 'T', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class V>
void write_pod(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& is, const char* what) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

template <class T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? 0 : 1;
}

template <class T>
void write_tensor_table(std::ostream& os,
                        const std::vector<std::pair<std::string, TensorT<T>>>& items) {
  write_pod<std::uint64_t>(os, items.size());
  for (const auto& [name, t] : items) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint8_t>(os, dtype_code<T>());
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_pod<std::uint64_t>(os, t.dim(i));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(T)));
  }
}

template <class T>
std::vector<std::pair<std::string, TensorT<T>>> read_tensor_table(std::istream& is) {
  const auto count = read_pod<std::uint64_t>(is, "tensor count");
  std::vector<std::pair<std::string, TensorT<T>>> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is, "tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw CheckpointError("checkpoint truncated while reading tensor name");
    const auto dtype = read_pod<std::uint8_t>(is, "tensor dtype");
    if (dtype != dtype_code<T>())
      throw CheckpointError("checkpoint tensor '" + name + "' has dtype " +
                            std::to_string(dtype) + ", expected " +
                            std::to_string(dtype_code<T>()));
    const auto rank = read_pod<std::uint8_t>(is, "tensor rank");
    std::vector<int> shape(rank);
    std::size_t numel = 1;
    for (auto& e : shape) {
      e = static_cast<int>(read_pod<std::uint64_t>(is, "tensor extent"));
      numel *= static_cast<std::size_t>(e);
    }
    std::vector<T> data(numel);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * sizeof(T)));
    if (!is) throw CheckpointError("checkpoint truncated while reading tensor '" + name + "'");
    out.emplace_back(name, TensorT<T>::from(shape, std::move(data)));
  }
  return out;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const ModelT<T>& model,
                     const TrainConfig& train_cfg, const AdafactorT<T>* optimizer,
                     const Rng& rng, std::uint64_t step) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  os.write(detail::kMagic, 4);
  detail::write_pod<std::uint32_t>(os, detail::kCheckpointVersion);
  const std::string header =
      canonical_json({{"model", to_json(model.config())}, {"train", to_json(train_cfg)}});
  detail::write_pod<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  detail::write_pod<std::uint64_t>(os, step);
  detail::write_pod<std::uint64_t>(os, rng.seed());
  detail::write_pod<std::uint64_t>(os, rng.counter());
  detail::write_tensor_table<T>(os, model.parameters().items());
  detail::write_pod<std::uint8_t>(os, optimizer ? 1 : 0);
  if (optimizer) {
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(optimizer->step_count()));
    detail::write_tensor_table<T>(os, optimizer->state_tensors());
  }
  if (!os) throw CheckpointError("failed while writing checkpoint: " + path);
}

template <class T>
struct CheckpointData {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  std::uint64_t step = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  std::unique_ptr<ModelT<T>> model;
  bool has_optimizer = false;
  std::uint64_t optimizer_step = 0;
  std::vector<std::pair<std::string, TensorT<T>>> optimizer_tensors;
};

template <class T>
CheckpointData<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kMagic, 4) != 0)
    throw CheckpointError("bad checkpoint magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != detail::kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = detail::read_pod<std::uint64_t>(is, "header length");
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw CheckpointError("checkpoint truncated while reading header");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  CheckpointData<T> out;
  out.model_cfg = model_config_from_json(j.at("model"));
  out.train_cfg = train_config_from_json(j.at("train"));
  out.step = detail::read_pod<std::uint64_t>(is, "step");
  out.rng_seed = detail::read_pod<std::uint64_t>(is, "rng seed");
  out.rng_counter = detail::read_pod<std::uint64_t>(is, "rng counter");

  Rng init_rng(0);  // values are overwritten below
  out.model = std::make_unique<ModelT<T>>(out.model_cfg, init_rng);
  auto tensors = detail::read_tensor_table<T>(is);
  auto& items = out.model->parameters().items();
  if (tensors.size() != items.size())
    throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) +
                          " tensors, model expects " + std::to_string(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (tensors[i].first != items[i].first)
      throw CheckpointError("checkpoint tensor order mismatch: '" + tensors[i].first +
                            "' vs '" + items[i].first + "'");
    if (tensors[i].second.shape() != items[i].second.shape())
      throw CheckpointError("checkpoint tensor '" + tensors[i].first +
                            "' shape does not match the configured model");
    items[i].second.data() = std::move(tensors[i].second.data());
  }
  const auto has_opt = detail::read_pod<std::uint8_t>(is, "optimizer flag");
  if (has_opt) {
    out.has_optimizer = true;
    out.optimizer_step = detail::read_pod<std::uint64_t>(is, "optimizer step");
    out.optimizer_tensors = detail::read_tensor_table<T>(is);
  }
  return out;
}

}  // namespace tpt
