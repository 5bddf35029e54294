#include "qsf/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "qsf/errors.hpp"
#include "qsf/io.hpp"

namespace qsf {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order");

constexpr char kMagic[4] = {'Q', 'S', 'F', 'C'};

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + at, 4);
  return v;
}

void put_matrix(std::string& payload, const ad::Matrix& m) {
  // Eigen stores column-major; the file is row-major.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  payload.append(reinterpret_cast<const char*>(rm.data()), sizeof(double) * rm.size());
}

ad::Matrix get_matrix(std::string_view payload, std::size_t offset, int rows, int cols,
                      const std::string& name) {
  const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(rows) * cols;
  if (offset > payload.size() || payload.size() - offset < bytes) {
    throw FormatError("checkpoint: tensor '" + name + "' runs past the end of the payload");
  }
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  std::memcpy(rm.data(), payload.data() + offset, bytes);
  return rm;
}

template <typename T>
T field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError("checkpoint: " + where + " lacks '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: " + where + "." + key + ": " + e.what());
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string payload;
  Json tensors = Json::array();
  for (const ad::Parameter& p : ckpt.params.params()) {
    Json t;
    t["name"] = p.name;
    t["shape"] = {p.value.rows(), p.value.cols()};
    t["dtype"] = "f64";
    t["offset"] = payload.size();
    t["frozen"] = p.frozen;
    t["decay"] = p.decay;
    tensors.push_back(std::move(t));
    put_matrix(payload, p.value);
  }

  Json optimizer = nullptr;
  if (ckpt.optimizer) {
    optimizer = Json::array();
    const auto& slots = ckpt.optimizer->slots;
    for (std::size_t i = 0; i < slots.size() && i < ckpt.params.size(); ++i) {
      if (slots[i].m.size() == 0) continue;
      Json s;
      s["name"] = ckpt.params.at(i).name;
      s["step"] = slots[i].step;
      s["m_offset"] = payload.size();
      put_matrix(payload, slots[i].m);
      s["v_offset"] = payload.size();
      put_matrix(payload, slots[i].v);
      optimizer.push_back(std::move(s));
    }
  }

  Json header;
  header["config"] = to_json(ckpt.config);
  header["tensors"] = std::move(tensors);
  header["optimizer"] = std::move(optimizer);
  header["metadata"] = ckpt.metadata;
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += payload;
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint: missing QSFC magic");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (bytes.size() - 12 < header_len) throw FormatError("checkpoint: truncated header");

  Json header;
  try {
    header = Json::parse(bytes.substr(12, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(12 + header_len);

  Checkpoint ckpt;
  if (!header.contains("config")) throw FormatError("checkpoint: header lacks 'config'");
  try {
    ckpt.config = stage_config_from_json(header.at("config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad config: ") + e.what());
  }

  const Json tensors = field<Json>(header, "tensors", "header");
  if (!tensors.is_array()) throw FormatError("checkpoint: 'tensors' is not an array");
  for (const Json& t : tensors) {
    const auto name = field<std::string>(t, "name", "tensor");
    if (field<std::string>(t, "dtype", name) != "f64") {
      throw FormatError("checkpoint: tensor '" + name + "' is not f64");
    }
    const auto shape = field<std::vector<int>>(t, "shape", name);
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) {
      throw FormatError("checkpoint: tensor '" + name + "' has a bad shape");
    }
    ad::Matrix value =
        get_matrix(payload, field<std::size_t>(t, "offset", name), shape[0], shape[1], name);
    ad::Parameter& p = ckpt.params.add(name, std::move(value), field<bool>(t, "decay", name));
    p.frozen = field<bool>(t, "frozen", name);
  }

  const Json& opt = header.contains("optimizer") ? header.at("optimizer") : Json();
  if (!opt.is_null()) {
    if (!opt.is_array()) throw FormatError("checkpoint: 'optimizer' is not an array");
    OptimizerState state;
    state.slots.resize(ckpt.params.size());
    for (const Json& s : opt) {
      const auto name = field<std::string>(s, "name", "optimizer slot");
      if (!ckpt.params.contains(name)) {
        throw FormatError("checkpoint: optimizer slot for unknown tensor '" + name + "'");
      }
      const std::size_t i = ckpt.params.index_of(name);
      const ad::Matrix& v = ckpt.params.at(i).value;
      const auto rows = static_cast<int>(v.rows());
      const auto cols = static_cast<int>(v.cols());
      auto& slot = state.slots[i];
      slot.step = field<long>(s, "step", name);
      slot.m = get_matrix(payload, field<std::size_t>(s, "m_offset", name), rows, cols, name);
      slot.v = get_matrix(payload, field<std::size_t>(s, "v_offset", name), rows, cols, name);
    }
    ckpt.optimizer = std::move(state);
  }
  if (header.contains("metadata")) ckpt.metadata = header.at("metadata");

  Model(ckpt.config).check_parameters(ckpt.params);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return parse_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
}

Checkpoint load_checkpoint(const std::string& path, const StageConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.config == expected)) {
    throw FormatError("'" + path + "': stored config " + to_json(ckpt.config).dump() +
                      " does not match expected " + to_json(expected).dump());
  }
  return ckpt;
}

}  // namespace qsf
