// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/checkpoint.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace fs = std::filesystem;

namespace magms {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'G', 'M', 'S', 'C', 'K', 'P'};
std::atomic<std::uint64_t> g_loads{0};

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(bytes.begin(), bytes.end());
    }
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void put_floats(std::span<const float> values) {
    for (float v : values) put(v);
  }
  void put_shape(const Shape& shape) {
    put(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put(static_cast<std::int64_t>(d));
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& buf, std::string path)
      : buf_(buf), path_(std::move(path)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(bytes.begin(), bytes.end());
    }
    pos_ += sizeof(T);
    return std::bit_cast<T>(bytes);
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<float> get_floats(std::size_t n) {
    need(n * sizeof(float));
    std::vector<float> out(n);
    for (auto& v : out) v = get<float>();
    return out;
  }
  Shape get_shape() {
    const auto rank = get<std::uint32_t>();
    if (rank > 8) fail("implausible tensor rank");
    Shape s(rank);
    for (auto& d : s) {
      d = get<std::int64_t>();
      if (d < 0 || d > (std::int64_t{1} << 32)) fail("implausible tensor extent");
    }
    return s;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw LoadError("checkpoint '" + path_ + "' is corrupt: " + what);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) fail("unexpected end of archive");
  }
  const std::vector<char>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct Parsed {
  ExperimentConfig config;
  std::uint64_t iteration = 0, seed = 0;
  std::int64_t steps = 0;
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> value, m, v;
  };
  std::vector<Entry> params;
  std::vector<std::pair<std::string, Tensor>> buffers;
};

Parsed parse(const std::vector<char>& bytes, const std::string& path, bool header_only) {
  ByteReader r(bytes, path);
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw LoadError("'" + path + "' is not a magms checkpoint");
  }
  const std::uint64_t stored = [&] {
    std::uint64_t h = 0;
    for (int i = 7; i >= 0; --i) {
      h = (h << 8) | static_cast<unsigned char>(bytes[bytes.size() - 8 + static_cast<std::size_t>(i)]);
    }
    return h;
  }();
  if (fnv1a64(std::string_view(bytes.data(), bytes.size() - 8)) != stored) {
    r.fail("checksum mismatch");
  }
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint '" + path + "' has version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));
  }
  Parsed p;
  try {
    p.config = ExperimentConfig::from_json(nlohmann::json::parse(r.get_string()));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad config: ") + e.what());
  } catch (const ConfigError& e) {
    r.fail(std::string("bad config: ") + e.what());
  }
  p.iteration = r.get<std::uint64_t>();
  p.seed = r.get<std::uint64_t>();
  p.steps = r.get<std::int64_t>();
  if (header_only) return p;
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    Parsed::Entry e;
    e.name = r.get_string();
    e.shape = r.get_shape();
    const auto count = static_cast<std::size_t>(shape_numel(e.shape));
    e.value = r.get_floats(count);
    e.m = r.get_floats(count);
    e.v = r.get_floats(count);
    p.params.push_back(std::move(e));
  }
  const auto k = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < k; ++i) {
    auto name = r.get_string();
    auto shape = r.get_shape();
    auto values = r.get_floats(static_cast<std::size_t>(shape_numel(shape)));
    p.buffers.emplace_back(std::move(name), Tensor(shape, std::move(values)));
  }
  return p;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  ByteWriter w;
  for (char c : kMagic) w.put(c);
  w.put(kCheckpointVersion);
  w.put_string(state.config.to_json().dump());
  w.put(static_cast<std::uint64_t>(state.iteration));
  w.put(state.network->init_seed());
  w.put(static_cast<std::int64_t>(state.optimizer.steps()));
  const auto& params = state.network->params();
  const auto& m = state.optimizer.first_moments();
  const auto& v = state.optimizer.second_moments();
  w.put(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.at(static_cast<ParameterStore::Id>(i));
    w.put_string(p.name);
    w.put_shape(p.shape);
    w.put_floats(p.value);
    const std::vector<float> zeros(p.value.size(), 0.0f);
    w.put_floats(m.empty() ? zeros : m[i]);
    w.put_floats(v.empty() ? zeros : v[i]);
  }
  w.put(static_cast<std::uint32_t>(params.buffers().size()));
  for (const auto& [name, t] : params.buffers()) {
    w.put_string(name);
    w.put_shape(t.shape());
    w.put_floats(t.values());
  }
  const auto& bytes = w.bytes();
  const std::uint64_t h = fnv1a64(std::string_view(bytes.data(), bytes.size()));
  w.put(h);

  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint '" + path + "'");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw Error("short write to checkpoint '" + path + "'");
  }
  fs::rename(tmp, target);
}

TrainState load_checkpoint(const std::string& path, const ExperimentConfig* expected) {
  const auto bytes = read_file(path);
  Parsed p = parse(bytes, path, false);
  if (expected && expected->hash() != p.config.hash()) {
    throw LoadError("checkpoint '" + path + "' was written with a different configuration (hash " +
                    hex64(p.config.hash()) + ", expected " + hex64(expected->hash()) + ")");
  }
  TrainState state(p.config, make_network(p.config, p.seed));
  auto& params = state.network->params();
  if (p.params.size() != params.size()) {
    throw LoadError("checkpoint '" + path + "' holds " + std::to_string(p.params.size()) +
                    " parameters, model expects " + std::to_string(params.size()));
  }
  std::vector<std::vector<float>> m, v;
  for (auto& e : p.params) {
    if (!params.contains(e.name)) {
      throw LoadError("checkpoint '" + path + "' has unknown parameter '" + e.name + "'");
    }
    const auto id = params.id_of(e.name);
    if (params.at(id).shape != e.shape) {
      throw LoadError("checkpoint '" + path + "' parameter '" + e.name + "' has shape " +
                      shape_str(e.shape) + ", expected " + shape_str(params.at(id).shape));
    }
    if (id != static_cast<ParameterStore::Id>(m.size())) {
      throw LoadError("checkpoint '" + path + "' parameter order differs from the model");
    }
    auto dst = params.mutable_value(id);
    std::copy(e.value.begin(), e.value.end(), dst.begin());
    m.push_back(std::move(e.m));
    v.push_back(std::move(e.v));
  }
  for (auto& [name, t] : p.buffers) params.buffers()[name] = std::move(t);
  if (p.steps > 0) state.optimizer.restore(p.steps, std::move(m), std::move(v));
  state.iteration = static_cast<std::int64_t>(p.iteration);
  ++g_loads;
  return state;
}

ExperimentConfig peek_checkpoint_config(const std::string& path) {
  return parse(read_file(path), path, true).config;
}

std::uint64_t file_digest(const std::string& path) {
  const auto bytes = read_file(path);
  return fnv1a64(std::string_view(bytes.data(), bytes.size()));
}

std::uint64_t checkpoint_load_count() { return g_loads.load(); }

}  // namespace magms
