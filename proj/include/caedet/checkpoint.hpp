#pragma once

// Binary checkpoint layout, all integers little-endian:
//
//   "CAE1"                      magic
//   u32                         version
//   u32 + bytes                 UTF-8 JSON config block
//   per parameter, build order: u32 + bytes name, u32 rank, u64 dims[rank],
//                               f32 values
//   optional optimizer state:   m records, then v records (same layout,
//                               names suffixed ".m" / ".v"), then u64 step
//   u32                         CRC32 of every preceding byte
//
// The JSON block carries the model configuration, the parameter shape table,
// training metadata, and whether the optimizer section is present.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "caedet/error.hpp"
#include "caedet/model.hpp"

namespace caedet {

inline constexpr char kCheckpointMagic[4] = {'C', 'A', 'E', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_height", c.input_height}, {"input_width", c.input_width},
          {"channels", c.channels},         {"bottleneck_dim", c.bottleneck_dim},
          {"scale_factor", c.scale_factor}, {"kernel_size", c.kernel_size},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.input_height = j.at("input_height").get<std::size_t>();
    c.input_width = j.at("input_width").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.bottleneck_dim = j.at("bottleneck_dim").get<std::size_t>();
    c.scale_factor = j.at("scale_factor").get<std::size_t>();
    c.kernel_size = j.at("kernel_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  validate(c);
  return c;
}

/// Non-parameter content of a checkpoint.
struct CheckpointMeta {
  nlohmann::json run = nlohmann::json::object();
  std::uint64_t epochs_completed = 0;
};

template <typename T>
struct LoadedCheckpoint {
  AutoencoderModel<T> model;
  CheckpointMeta meta;
  bool has_optimizer_state = false;
};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return size_ - pos_; }

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > remaining()) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) {
    const std::uint8_t* p = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    const std::uint8_t* p = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    const std::uint8_t* p = take(n, what);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large buffers.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
void write_record(ByteWriter& w, const std::string& name, const Tensor<T>& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (T v : t.data()) w.f32(static_cast<float>(v));
}

template <typename T>
void read_record(ByteReader& r, const std::string& expected_name, Tensor<T>& into) {
  const std::size_t at = r.offset();
  const std::string name = r.str("record name");
  if (name != expected_name) {
    throw FormatError("expected record '" + expected_name + "', found '" + name + "'", at);
  }
  const std::size_t rank_at = r.offset();
  const std::uint32_t rank = r.u32("record rank");
  if (rank != into.rank()) {
    throw FormatError("record '" + name + "' has rank " + std::to_string(rank) + ", expected " +
                          std::to_string(into.rank()),
                      rank_at);
  }
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::size_t dim_at = r.offset();
    const std::uint64_t d = r.u64("record dims");
    if (d != into.dim(i)) {
      throw FormatError("record '" + name + "' axis " + std::to_string(i) + " is " +
                            std::to_string(d) + ", expected " + std::to_string(into.dim(i)),
                        dim_at);
    }
  }
  if (into.size() * 4 > r.remaining()) {
    throw FormatError("checkpoint truncated inside record '" + name + "'", r.offset());
  }
  for (T& v : into.data()) v = static_cast<T>(r.f32("record values"));
}

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const AutoencoderModel<T>& model,
                                            const CheckpointMeta& meta,
                                            bool include_optimizer_state) {
  nlohmann::json config;
  config["model"] = to_json(model.config());
  config["run"] = meta.run;
  config["training"] = {{"epochs_completed", meta.epochs_completed}, {"seed", model.config().seed}};
  config["optimizer_state"] = include_optimizer_state;
  nlohmann::json table = nlohmann::json::array();
  for (const Parameter<T>* p : model.parameters()) {
    table.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  }
  config["parameters"] = table;

  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(config.dump());
  for (const Parameter<T>* p : model.parameters()) detail::write_record(w, p->name, p->value);
  if (include_optimizer_state) {
    for (const Parameter<T>* p : model.parameters()) detail::write_record(w, p->name + ".m", p->m);
    for (const Parameter<T>* p : model.parameters()) detail::write_record(w, p->name + ".v", p->v);
    w.u64(model.step());
  }
  w.u32(detail::crc32_of(w.bytes().data(), w.bytes().size()));
  return std::move(w.bytes());
}

/// Parses a checkpoint. When `expected` is given, the stored model
/// configuration must equal it or ConfigError is thrown.
template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                      const std::optional<ModelConfig>& expected = std::nullopt) {
  detail::ByteReader r(bytes.data(), bytes.size());
  const std::uint8_t* magic = r.take(4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  if (bytes.size() < 12) throw FormatError("checkpoint truncated before config block", 8);
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) stored_crc |= std::uint32_t{bytes[body + i]} << (8 * i);

  const std::size_t json_at = r.offset();
  nlohmann::json config;
  try {
    config = nlohmann::json::parse(r.str("config block"));
  } catch (const nlohmann::json::parse_error&) {
    throw FormatError("config block is not valid JSON", json_at);
  }
  if (!config.contains("model") || !config.contains("parameters")) {
    throw FormatError("config block lacks model or parameters", json_at);
  }
  const ModelConfig model_cfg = model_config_from_json(config["model"]);
  if (expected && !(*expected == model_cfg)) {
    throw ConfigError("checkpoint model config " + config["model"].dump() +
                      " does not match expected " + to_json(*expected).dump());
  }

  AutoencoderModel<T> model(model_cfg);
  const auto params = model.parameters();
  const auto& table = config["parameters"];
  if (!table.is_array() || table.size() != params.size()) {
    throw ConfigError("checkpoint shape table lists " + std::to_string(table.size()) +
                      " parameters, configuration builds " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (table[i].value("name", "") != params[i]->name ||
        table[i].value("shape", Shape{}) != params[i]->value.shape()) {
      throw ConfigError("checkpoint shape table entry " + table[i].dump() +
                        " does not match configured parameter " + params[i]->name + " " +
                        to_string(params[i]->value.shape()));
    }
  }

  for (Parameter<T>* p : params) detail::read_record(r, p->name, p->value);
  const bool has_opt = config.value("optimizer_state", false);
  if (has_opt) {
    for (Parameter<T>* p : params) detail::read_record(r, p->name + ".m", p->m);
    for (Parameter<T>* p : params) detail::read_record(r, p->name + ".v", p->v);
    model.set_step(r.u64("optimizer step"));
  }
  if (r.offset() != body) {
    throw FormatError(r.offset() > body ? "checkpoint truncated before checksum"
                                        : "unexpected bytes before checksum",
                      std::min(r.offset(), body));
  }
  if (detail::crc32_of(bytes.data(), body) != stored_crc) {
    throw FormatError("checkpoint checksum mismatch", body);
  }

  CheckpointMeta meta;
  meta.run = config.value("run", nlohmann::json::object());
  if (config.contains("training")) {
    meta.epochs_completed = config["training"].value("epochs_completed", std::uint64_t{0});
  }
  return {std::move(model), std::move(meta), has_opt};
}

/// Writes atomically: the file appears under `path` only once complete.
template <typename T>
void save_checkpoint(const AutoencoderModel<T>& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta = {}, bool include_optimizer_state = false) {
  const auto bytes = encode_checkpoint(model, meta, include_optimizer_state);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path,
                                    const std::optional<ModelConfig>& expected = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes, expected);
}

}  // namespace caedet
