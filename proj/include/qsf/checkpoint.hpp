#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "QSFC"            4-byte magic
//   u32               format version
//   u32               header length in bytes
//   header            UTF-8 JSON
//   payload           raw f64 tensors, row-major, at the header's offsets
//
// Header keys: "config" (model config), "tensors" (name, shape, dtype, offset,
// frozen, decay), "optimizer" (null or per-tensor step and moment offsets)
// and "metadata" (free-form training record). Offsets count bytes from the
// start of the payload.

#include <optional>
#include <string>
#include <string_view>

#include "qsf/autodiff.hpp"
#include "qsf/config.hpp"
#include "qsf/model.hpp"
#include "qsf/optim.hpp"

namespace qsf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  StageConfig config;
  ad::ParamStore params;
  std::optional<OptimizerState> optimizer;
  Json metadata = Json::object();
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws FormatError for a bad magic, version, header or payload, and when
// the tensors do not match the configured architecture.
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
// Also throws FormatError when the stored config differs from `expected`.
Checkpoint load_checkpoint(const std::string& path, const StageConfig& expected);

}  // namespace qsf
