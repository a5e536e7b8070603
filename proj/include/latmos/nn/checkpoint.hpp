#pragma once

// Named-tensor container:
//   "LATMOSCK" | u32 version | u64 config_len | config JSON | u64 tensor_count
//   per tensor: u32 name_len | name | u8 trainable | u32 rank | u32 dims[rank] | f64 values[prod(dims)]

#include <cstdint>
#include <cstring>
#include <string>

#include <json.hpp>

#include "latmos/error.hpp"
#include "latmos/io.hpp"
#include "latmos/nn/tensor.hpp"

namespace latmos::nn {

inline constexpr char kCheckpointMagic[8] = {'L', 'A', 'T', 'M', 'O', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ParamSet& params, const nlohmann::json& config) {
  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  const std::string cfg = config.dump();
  detail::put<std::uint64_t>(buf, cfg.size());
  buf += cfg;
  detail::put<std::uint64_t>(buf, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& p = params[i];
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.name.size()));
    buf += p.name;
    detail::put<std::uint8_t>(buf, p.trainable ? 1 : 0);
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.value.rank()));
    for (int d : p.value.shape()) detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    const auto* raw = reinterpret_cast<const char*>(p.value.data());
    buf.append(raw, p.value.size() * sizeof(double));
  }
  return buf;
}

// Reads only the embedded configuration.
inline nlohmann::json checkpoint_config(const std::string& data) {
  detail::ByteReader in(data);
  if (in.bytes(sizeof(kCheckpointMagic), "magic") != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw ParseError("not a checkpoint file", 0);
  const std::size_t version_at = in.offset();
  if (in.get<std::uint32_t>("version") != kCheckpointVersion)
    throw CheckpointMismatch("unsupported checkpoint version at byte " + std::to_string(version_at));
  const auto len = in.get<std::uint64_t>("config length");
  const std::size_t at = in.offset();
  try {
    return nlohmann::json::parse(in.bytes(len, "config"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint config: ") + e.what(), at + e.byte);
  }
}

// Loads tensor values into an already-constructed parameter set. Names,
// shapes and trainable flags must match exactly.
inline void decode_checkpoint_into(const std::string& data, ParamSet& params) {
  detail::ByteReader in(data);
  checkpoint_config(data);  // validates magic, version and config
  in.bytes(sizeof(kCheckpointMagic), "magic");
  in.get<std::uint32_t>("version");
  in.bytes(in.get<std::uint64_t>("config length"), "config");
  const auto count = in.get<std::uint64_t>("tensor count");
  if (count != params.size())
    throw CheckpointMismatch("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                             std::to_string(params.size()));
  std::vector<Tensor> values;
  for (std::uint64_t i = 0; i < count; ++i) {
    const Param& p = params[i];
    const auto name_len = in.get<std::uint32_t>("name length");
    const std::string name = in.bytes(name_len, "name");
    if (name != p.name) throw CheckpointMismatch("tensor " + std::to_string(i) + " is '" + name + "', expected '" + p.name + "'");
    const bool trainable = in.get<std::uint8_t>("trainable flag") != 0;
    if (trainable != p.trainable) throw CheckpointMismatch("trainable flag differs for " + name);
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank > 8) throw ParseError("implausible tensor rank", in.offset());
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(in.get<std::uint32_t>("dimension"));
    if (shape != p.value.shape()) throw CheckpointMismatch("shape differs for " + name);
    Tensor t(shape);
    const std::string raw = in.bytes(t.size() * sizeof(double), "tensor values");
    std::memcpy(t.data(), raw.data(), raw.size());
    values.push_back(std::move(t));
  }
  if (!in.done()) throw ParseError("trailing bytes after last tensor", in.offset());
  params.restore(values);
}

}  // namespace latmos::nn
