#pragma once

// Checkpoint container: 8-byte magic, u64 header length, a JSON header
// (schema_version, variant, configs, step counter and a tensor directory),
// then every tensor as row-major float64 little-endian values in directory
// order.

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "antic/feature_io.hpp"
#include "antic/model.hpp"

namespace antic {

inline constexpr std::array<char, 8> kCheckpointMagic{'A', 'N', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointSchema = 1;

enum class Variant { base, atkd_teacher, atkd_student, vnrm_teacher, vnrm_student };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::base: return "base";
    case Variant::atkd_teacher: return "atkd_teacher";
    case Variant::atkd_student: return "atkd_student";
    case Variant::vnrm_teacher: return "vnrm_teacher";
    case Variant::vnrm_student: return "vnrm_student";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::base, Variant::atkd_teacher, Variant::atkd_student, Variant::vnrm_teacher, Variant::vnrm_student})
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown model variant '" + s + "'");
}

inline Topology topology_of(Variant v) {
  switch (v) {
    case Variant::base: return Topology::base;
    case Variant::atkd_teacher:
    case Variant::vnrm_teacher: return Topology::teacher;
    default: return Topology::student;
  }
}

inline bool uses_vnrm(Variant v) { return v == Variant::vnrm_teacher || v == Variant::vnrm_student; }

struct Checkpoint {
  Variant variant = Variant::base;
  TaskConfig task;
  std::uint64_t step = 0;
  AnticipationModel model;
};

inline std::string serialize_checkpoint(const AnticipationModel& model, Variant variant, const TaskConfig& task,
                                        std::uint64_t step) {
  Json header;
  header["schema_version"] = kCheckpointSchema;
  header["variant"] = variant_name(variant);
  header["model_config"] = model.config();
  header["vnrm_config"] = model.vnrm_config() ? Json(*model.vnrm_config()) : Json(nullptr);
  header["task_config"] = task;
  header["step"] = step;
  Json dir = Json::array();
  for (const auto& p : model.params().all())
    dir.push_back(Json{{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"decay", p.decay}});
  header["tensors"] = dir;
  const std::string h = header.dump();
  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_pod<std::uint64_t>(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& p : model.params().all())
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  return out.str();
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw IoError("checkpoint: bad magic");
  const auto hlen = detail::read_pod<std::uint64_t>(in, "checkpoint header length");
  if (hlen > bytes.size()) throw IoError("checkpoint: truncated header");
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  const Json header = Json::parse(h);
  if (header.at("schema_version").get<int>() != kCheckpointSchema)
    throw IoError("checkpoint: unsupported schema_version " + header.at("schema_version").dump());
  std::optional<VnrmConfig> vnrm;
  if (!header.at("vnrm_config").is_null()) vnrm = header.at("vnrm_config").get<VnrmConfig>();
  Checkpoint ck{parse_variant(header.at("variant").get<std::string>()), header.at("task_config").get<TaskConfig>(),
                header.at("step").get<std::uint64_t>(),
                AnticipationModel(header.at("model_config").get<ModelConfig>(), vnrm, 0)};
  auto& params = ck.model.params().all();
  const Json& dir = header.at("tensors");
  if (dir.size() != params.size()) throw IoError("checkpoint: tensor count does not match the configuration");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const Json& e = dir[i];
    if (e.at("name").get<std::string>() != p.name || e.at("rows").get<Eigen::Index>() != p.value.rows() ||
        e.at("cols").get<Eigen::Index>() != p.value.cols())
      throw IoError("checkpoint: tensor " + e.at("name").get<std::string>() + " does not match the configuration");
    in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint: truncated tensor data for " + p.name);
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const AnticipationModel& model, Variant variant,
                            const TaskConfig& task, std::uint64_t step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(model, variant, task, step);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file_bytes(path)); }

/// 64-bit FNV-1a digest, printed as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace antic
