#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lgd/backbone.hpp"

namespace lgd {

// Checkpoint binary format, little-endian throughout:
//   magic "LGDCKPT1" | u32 version | u64 config_len | config JSON bytes
//   | i64 epoch | i32 stage | u64 n_entries | entries
// entry: u32 name_len | name | u8 dtype (1 f32, 2 f64, 3 i64) | u8 rank
//        | i64 dims[rank] | raw data
// Unknown versions are rejected before any state is touched; loading either
// applies completely or not at all.

namespace ckptdetail {

constexpr char kMagic[8] = {'L', 'G', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, float>) return 1;
  else if constexpr (std::is_same_v<T, double>) return 2;
  else return 3;  // int64
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(is), "checkpoint: unexpected end of file");
  return v;
}

}  // namespace ckptdetail

struct CheckpointEntry {
  std::uint8_t dtype = 0;
  Shape shape;
  std::vector<char> bytes;

  template <typename T>
  Tensor<T> as_tensor() const {
    require(dtype == ckptdetail::dtype_code<T>(), "checkpoint entry dtype mismatch");
    Tensor<T> t(shape);
    require(bytes.size() == static_cast<std::size_t>(t.size()) * sizeof(T), "checkpoint entry size mismatch");
    std::memcpy(t.data(), bytes.data(), bytes.size());
    return t;
  }
};

struct LoadedCheckpoint {
  std::string config_json;
  std::int64_t epoch = 0;
  std::int32_t stage = 1;
  std::map<std::string, CheckpointEntry> entries;

  const CheckpointEntry& at(const std::string& name) const {
    auto it = entries.find(name);
    require(it != entries.end(), "checkpoint is missing entry '" + name + "'");
    return it->second;
  }
};

namespace ckptdetail {

template <typename T>
void write_entry(std::ostream& os, const std::string& name, const Tensor<T>& t) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<std::uint8_t>(os, dtype_code<T>());
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (Index d : t.shape()) write_pod<std::int64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
}

inline void write_i64_entry(std::ostream& os, const std::string& name, const std::vector<std::int64_t>& v) {
  Tensor<std::int64_t> t = Tensor<std::int64_t>::from(Shape{static_cast<Index>(v.size())},
                                                      std::vector<std::int64_t>(v));
  write_entry(os, name, t);
}

}  // namespace ckptdetail

template <typename T>
void save_checkpoint(const std::string& path, Network<T>& net, const std::string& config_json,
                     std::int64_t epoch, std::int32_t stage) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot open checkpoint file for writing: " + path);
  os.write(ckptdetail::kMagic, 8);
  ckptdetail::write_pod<std::uint32_t>(os, ckptdetail::kVersion);
  ckptdetail::write_pod<std::uint64_t>(os, config_json.size());
  os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  ckptdetail::write_pod<std::int64_t>(os, epoch);
  ckptdetail::write_pod<std::int32_t>(os, stage);

  std::uint64_t count = 0;
  net.visit_params([&](const std::string&, Param<T>&) { ++count; });
  net.visit_state([&](const std::string&, Tensor<T>&) { ++count; });
  count += 5;  // sketch tables + meta
  ckptdetail::write_pod<std::uint64_t>(os, count);

  net.visit_params([&](const std::string& name, Param<T>& p) {
    ckptdetail::write_entry(os, "param." + name, p.value);
  });
  net.visit_state([&](const std::string& name, Tensor<T>& t) {
    ckptdetail::write_entry(os, "state." + name, t);
  });

  const SketchConfig& sk = net.sketch;
  ckptdetail::write_i64_entry(os, "sketch.h1", std::vector<std::int64_t>(sk.h1.begin(), sk.h1.end()));
  ckptdetail::write_i64_entry(os, "sketch.h2", std::vector<std::int64_t>(sk.h2.begin(), sk.h2.end()));
  ckptdetail::write_i64_entry(os, "sketch.s1", std::vector<std::int64_t>(sk.s1.begin(), sk.s1.end()));
  ckptdetail::write_i64_entry(os, "sketch.s2", std::vector<std::int64_t>(sk.s2.begin(), sk.s2.end()));
  ckptdetail::write_i64_entry(os, "sketch.meta",
                              {sk.input_dim, sk.sketch_dim, static_cast<std::int64_t>(sk.seed)});
  require(static_cast<bool>(os), "failed writing checkpoint: " + path);
}

inline LoadedCheckpoint load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot open checkpoint file: " + path);
  char magic[8];
  is.read(magic, 8);
  require(static_cast<bool>(is) && std::equal(magic, magic + 8, ckptdetail::kMagic),
          "not a checkpoint file: " + path);
  const auto version = ckptdetail::read_pod<std::uint32_t>(is);
  require(version == ckptdetail::kVersion,
          "unsupported checkpoint version " + std::to_string(version) + " in " + path);

  LoadedCheckpoint ck;
  const auto cfg_len = ckptdetail::read_pod<std::uint64_t>(is);
  ck.config_json.resize(cfg_len);
  if (cfg_len > 0) is.read(ck.config_json.data(), static_cast<std::streamsize>(cfg_len));
  ck.epoch = ckptdetail::read_pod<std::int64_t>(is);
  ck.stage = ckptdetail::read_pod<std::int32_t>(is);
  const auto count = ckptdetail::read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = ckptdetail::read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    CheckpointEntry e;
    e.dtype = ckptdetail::read_pod<std::uint8_t>(is);
    const auto rank = ckptdetail::read_pod<std::uint8_t>(is);
    for (int r = 0; r < rank; ++r) e.shape.push_back(ckptdetail::read_pod<std::int64_t>(is));
    std::size_t elem = e.dtype == 1 ? 4 : 8;
    const Index n = numel(e.shape);
    require(n >= 1, "checkpoint: corrupt entry shape for '" + name + "'");
    e.bytes.resize(static_cast<std::size_t>(n) * elem);
    is.read(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
    require(static_cast<bool>(is), "checkpoint: truncated entry '" + name + "'");
    ck.entries.emplace(std::move(name), std::move(e));
  }
  return ck;
}

// Strict application: every network slot must be present with matching dtype
// and shape, and the checkpoint must not carry unknown entries.
template <typename T>
void apply_checkpoint(const LoadedCheckpoint& ck, Network<T>& net) {
  std::size_t used = 0;
  net.visit_params([&](const std::string& name, Param<T>& p) {
    const CheckpointEntry& e = ck.at("param." + name);
    require(e.shape == p.value.shape(), "checkpoint shape mismatch for param " + name);
    p.value = e.as_tensor<T>();
    ++used;
  });
  net.visit_state([&](const std::string& name, Tensor<T>& t) {
    const CheckpointEntry& e = ck.at("state." + name);
    require(e.shape == t.shape(), "checkpoint shape mismatch for state " + name);
    t = e.as_tensor<T>();
    ++used;
  });

  const Tensor<std::int64_t> meta = ck.at("sketch.meta").as_tensor<std::int64_t>();
  require(meta.size() == 3, "checkpoint: bad sketch meta");
  SketchConfig sk;
  sk.input_dim = meta[0];
  sk.sketch_dim = meta[1];
  sk.seed = static_cast<std::uint64_t>(meta[2]);
  auto load_tab = [&](const std::string& name) {
    return ck.at(name).as_tensor<std::int64_t>();
  };
  const Tensor<std::int64_t> h1 = load_tab("sketch.h1"), h2 = load_tab("sketch.h2");
  const Tensor<std::int64_t> s1 = load_tab("sketch.s1"), s2 = load_tab("sketch.s2");
  sk.h1.assign(h1.data(), h1.data() + h1.size());
  sk.h2.assign(h2.data(), h2.data() + h2.size());
  for (Index i = 0; i < s1.size(); ++i) sk.s1.push_back(static_cast<std::int8_t>(s1[i]));
  for (Index i = 0; i < s2.size(); ++i) sk.s2.push_back(static_cast<std::int8_t>(s2[i]));
  sk.validate();
  require(sk.input_dim == net.spec.final_channels(), "checkpoint sketch does not match network channels");
  net.sketch = sk;
  used += 5;
  require(used == ck.entries.size(), "checkpoint carries entries unknown to this network");
}

}  // namespace lgd
