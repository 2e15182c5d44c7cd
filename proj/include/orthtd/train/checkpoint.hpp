// Checkpoint container:
//   "OTD1" | header length (uint64 LE) | JSON header | float32 LE payloads
// The header carries the model spec, feature scaler, schedule step, and one
// entry per stored tensor (name, group, kind, shape, byte offset).
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "orthtd/model/batch.hpp"
#include "orthtd/model/spec_io.hpp"
#include "orthtd/train/optimizer.hpp"

namespace orthtd {

inline constexpr char kCheckpointMagic[4] = {'O', 'T', 'D', '1'};
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

template <typename T>
void append_f32_le(std::string& out, const std::vector<T>& values) {
  for (T x : values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

template <typename T>
void read_f32_le(const char* p, std::vector<T>& values) {
  for (std::size_t j = 0; j < values.size(); ++j, p += 4) {
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
    values[j] = static_cast<T>(std::bit_cast<float>(bits));
  }
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const MultiTaskModel<T>& model, const FeatureScaler& scaler,
                     const AdamW<T>* optimizer = nullptr) {
  std::string payload;
  ordered_json tensors = ordered_json::array();
  auto add = [&](const Parameter<T>& p, const char* kind, const std::vector<T>& values) {
    tensors.push_back({{"name", p.name},
                       {"group", std::string(to_string(p.group))},
                       {"kind", kind},
                       {"shape", p.tensor.shape()},
                       {"offset", payload.size()}});
    detail::append_f32_le(payload, values);
  };
  const auto& params = model.parameters().all();
  for (const auto& p : params) add(p, "param", p.tensor.data());
  if (optimizer) {
    for (std::size_t i = 0; i < params.size(); ++i) add(params[i], "adam_m", optimizer->first_moments()[i]);
    for (std::size_t i = 0; i < params.size(); ++i) add(params[i], "adam_v", optimizer->second_moments()[i]);
  }
  ordered_json header;
  header["format_version"] = kCheckpointVersion;
  header["model"] = to_json(model.spec());
  header["scaler"] = {{"mean", scaler.mean}, {"scale", scaler.scale}};
  header["step"] = optimizer ? optimizer->steps() : 0;
  header["tensors"] = tensors;
  header["payload_bytes"] = payload.size();
  const std::string text = header.dump();

  std::string bytes(kCheckpointMagic, 4);
  detail::append_u64_le(bytes, text.size());
  bytes += text;
  bytes += payload;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("checkpoint: write failed for " + path.string());
}

/// Parsed container before it is applied to a model.
struct CheckpointFile {
  json header;
  std::string payload;

  ModelSpec spec() const { return model_spec_from_json(header.at("model")); }
  FeatureScaler scaler() const {
    return {header.at("scaler").at("mean").get<std::vector<double>>(),
            header.at("scaler").at("scale").get<std::vector<double>>()};
  }
  std::size_t step() const { return header.at("step").get<std::size_t>(); }
};

inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError("checkpoint: " + path.string() + " is not an OTD1 container");
  const std::uint64_t header_len = detail::read_u64_le(bytes.data() + 4);
  if (header_len > bytes.size() - 12) throw CheckpointError("checkpoint: truncated header in " + path.string());
  CheckpointFile f;
  try {
    f.header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }
  const int version = f.header.value("format_version", -1);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: format version " + std::to_string(version) + ", this build reads version " +
                          std::to_string(kCheckpointVersion));
  const auto expected = f.header.at("payload_bytes").get<std::uint64_t>();
  const std::uint64_t actual = bytes.size() - 12 - header_len;
  if (actual != expected)
    throw CheckpointError("checkpoint: truncated payload: header declares " + std::to_string(expected) + " bytes, file has " +
                          std::to_string(actual));
  f.payload = bytes.substr(12 + header_len);
  return f;
}

/// Copies stored tensors into `model` (and optimizer state when given and present).
/// Every model parameter must be present with a matching shape.
template <typename T>
void apply_checkpoint(const CheckpointFile& f, MultiTaskModel<T>& model, AdamW<T>* optimizer = nullptr) {
  auto& params = model.parameters().all();
  std::vector<const json*> stored(params.size() * 3, nullptr);
  for (const auto& entry : f.header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto kind = entry.at("kind").get<std::string>();
    const std::size_t slot = kind == "param" ? 0 : kind == "adam_m" ? 1 : kind == "adam_v" ? 2 : 3;
    if (slot == 3) throw CheckpointError("checkpoint: unknown tensor kind '" + kind + "' for '" + name + "'");
    std::size_t idx = params.size();
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name == name) idx = i;
    if (idx == params.size()) throw CheckpointError("checkpoint: tensor '" + name + "' does not exist in the model");
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != params[idx].tensor.shape())
      throw CheckpointError("checkpoint: shape mismatch for parameter '" + name + "': stored " + shape_str(shape) +
                            ", model expects " + shape_str(params[idx].tensor.shape()));
    stored[idx * 3 + slot] = &entry;
  }
  auto load = [&](const json& entry, std::vector<T>& dst) {
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (offset + 4 * dst.size() > f.payload.size())
      throw CheckpointError("checkpoint: truncated payload for '" + entry.at("name").get<std::string>() + "'");
    detail::read_f32_le(f.payload.data() + offset, dst);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!stored[i * 3]) throw CheckpointError("checkpoint: parameter '" + params[i].name + "' missing");
    load(*stored[i * 3], params[i].tensor.data());
  }
  if (!optimizer) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (stored[i * 3 + 1]) load(*stored[i * 3 + 1], optimizer->first_moments()[i]);
    if (stored[i * 3 + 2]) load(*stored[i * 3 + 2], optimizer->second_moments()[i]);
  }
  optimizer->set_steps(f.step());
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, MultiTaskModel<T>& model, AdamW<T>* optimizer = nullptr) {
  apply_checkpoint(read_checkpoint_file(path), model, optimizer);
}

template <typename T>
struct LoadedModel {
  std::unique_ptr<MultiTaskModel<T>> model;
  FeatureScaler scaler;
  std::size_t step = 0;
};

/// Rebuilds the model from the stored spec and fills its parameters.
template <typename T>
LoadedModel<T> load_checkpoint(const std::filesystem::path& path) {
  const auto f = read_checkpoint_file(path);
  LoadedModel<T> out;
  out.model = build_strategy<T>(f.spec());
  apply_checkpoint(f, *out.model);
  out.scaler = f.scaler();
  out.step = f.step();
  return out;
}

}  // namespace orthtd
