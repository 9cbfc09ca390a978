#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dualattn/common.hpp"
#include "dualattn/nn.hpp"

namespace dualattn {

// Binary checkpoint container, little-endian:
//   magic "DATN", u32 version, u32 record count,
//   per record: u16 name length, name bytes, u8 dtype (0=f32, 1=f64),
//               u8 rank, u32 dims[rank], raw element bytes.
// A free-form metadata string may be stored as a record named "__meta__"
// with dtype 2 (bytes).
constexpr uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw data_error("checkpoint truncated");
  return v;
}
template <typename S>
constexpr uint8_t dtype_tag() {
  return sizeof(S) == 4 ? 0 : 1;
}
}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const ParamList<S>& params,
                     const std::string& meta = "") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot create checkpoint: " + path);
  out.write("DATN", 4);
  detail::write_pod<uint32_t>(out, kCheckpointVersion);
  uint32_t count = static_cast<uint32_t>(params.size()) + (meta.empty() ? 0 : 1);
  detail::write_pod<uint32_t>(out, count);
  if (!meta.empty()) {
    const std::string name = "__meta__";
    detail::write_pod<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), name.size());
    detail::write_pod<uint8_t>(out, 2);
    detail::write_pod<uint8_t>(out, 1);
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(meta.size()));
    out.write(meta.data(), meta.size());
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.names[i];
    const Tensor<S>& t = *params.tensors[i];
    detail::write_pod<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), name.size());
    detail::write_pod<uint8_t>(out, detail::dtype_tag<S>());
    detail::write_pod<uint8_t>(out, static_cast<uint8_t>(t.rank()));
    for (int d : t.shape) detail::write_pod<uint32_t>(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(S)));
  }
  if (!out) throw data_error("checkpoint write failed: " + path);
}

// Restores tensors by name into an existing ParamList; shapes must match.
// Returns the metadata string (empty when absent).
template <typename S>
std::string load_checkpoint(const std::string& path, const ParamList<S>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DATN", 4) != 0)
    throw data_error("not a checkpoint file: " + path);
  uint32_t version = detail::read_pod<uint32_t>(in);
  if (version != kCheckpointVersion)
    throw data_error("checkpoint version mismatch: file has v" + std::to_string(version) +
                     ", reader expects v" + std::to_string(kCheckpointVersion));
  uint32_t count = detail::read_pod<uint32_t>(in);

  std::map<std::string, Tensor<S>*> by_name;
  for (size_t i = 0; i < params.size(); ++i) by_name[params.names[i]] = params.tensors[i];

  std::string meta;
  size_t restored = 0;
  for (uint32_t r = 0; r < count; ++r) {
    uint16_t nlen = detail::read_pod<uint16_t>(in);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    uint8_t dtype = detail::read_pod<uint8_t>(in);
    uint8_t rank = detail::read_pod<uint8_t>(in);
    if (dtype == 2) {
      uint32_t len = detail::read_pod<uint32_t>(in);
      meta.resize(len);
      in.read(meta.data(), len);
      continue;
    }
    std::vector<int> dims(rank);
    long numel = 1;
    for (int d = 0; d < rank; ++d) {
      dims[d] = static_cast<int>(detail::read_pod<uint32_t>(in));
      numel *= dims[d];
    }
    if (dtype != detail::dtype_tag<S>())
      throw data_error("checkpoint dtype mismatch for '" + name + "'");
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw data_error("checkpoint contains unknown tensor '" + name + "'");
    Tensor<S>& t = *it->second;
    if (t.shape != dims) throw data_error("checkpoint shape mismatch for '" + name + "'");
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(numel * sizeof(S)));
    if (!in) throw data_error("checkpoint truncated at '" + name + "'");
    ++restored;
  }
  if (restored != params.size())
    throw data_error("checkpoint restored " + std::to_string(restored) + " of " +
                     std::to_string(params.size()) + " tensors");
  return meta;
}

}  // namespace dualattn
