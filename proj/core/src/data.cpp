// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "magms/rng.hpp"

namespace fs = std::filesystem;

namespace magms {

const ModalityVolume& MultiModalSample::volume(int index) const {
  if (index < 0 || index >= static_cast<int>(volumes.size())) {
    throw DataError("sample '" + subject_id + "' has no modality index " +
                    std::to_string(index));
  }
  return volumes[static_cast<std::size_t>(index)];
}

const ModalityVolume& MultiModalSample::volume(const ModalityId& id) const {
  const auto& v = volume(id.index);
  if (v.modality != id) {
    throw DataError("sample '" + subject_id + "' modality mismatch for '" + id.name + "'");
  }
  return v;
}

Spacing MultiModalSample::spacing() const {
  return volumes.empty() ? Spacing{1.0, 1.0, 1.0} : volumes.front().spacing;
}

void MultiModalSample::validate(const ModalitySet& set) const {
  if (static_cast<int>(volumes.size()) != set.size()) {
    throw DataError("sample '" + subject_id + "' carries " + std::to_string(volumes.size()) +
                    " modalities, expected " + std::to_string(set.size()));
  }
  labels.validate();
  for (int i = 0; i < set.size(); ++i) {
    const auto& v = volumes[static_cast<std::size_t>(i)];
    if (v.modality != set[i]) {
      throw DataError("sample '" + subject_id + "' is missing modality '" + set[i].name + "'");
    }
    v.validate();
    if (v.voxels.shape() != labels.classes.shape()) {
      throw DimensionError("sample '" + subject_id + "' modality '" + v.modality.name +
                           "' shape " + shape_str(v.voxels.shape()) + " differs from labels " +
                           shape_str(labels.classes.shape()));
    }
    if (v.spacing != volumes.front().spacing) {
      throw DataError("sample '" + subject_id + "' has inconsistent voxel spacing");
    }
  }
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::train, Split::val, Split::test}) {
    if (split_name(s) == name) return s;
  }
  throw DataError("unknown split '" + std::string(name) + "'");
}

std::vector<Split> default_splits(int n) {
  if (n < 1) throw ConfigError("dataset needs at least one subject");
  int test = static_cast<int>(std::lround(n * 4.0 / 18.0));
  int val = static_cast<int>(std::lround(n * 2.0 / 18.0));
  if (n >= 2) test = std::max(test, 1);
  while (n - test - val < 1) {
    if (val > 0) {
      --val;
    } else {
      --test;
    }
  }
  std::vector<Split> out(static_cast<std::size_t>(n), Split::train);
  for (int i = 0; i < val; ++i) out[static_cast<std::size_t>(n - test - val + i)] = Split::val;
  for (int i = 0; i < test; ++i) out[static_cast<std::size_t>(n - test + i)] = Split::test;
  return out;
}

std::vector<const MultiModalSample*> Dataset::subset(Split split) const {
  std::vector<const MultiModalSample*> out;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (splits.at(i) == split) out.push_back(&subjects[i]);
  }
  return out;
}

PhantomSpec PhantomSpec::standard(int modalities, int num_classes) {
  PhantomSpec spec;
  spec.num_classes = num_classes;
  const int fg = num_classes - 1;
  spec.visibility.assign(static_cast<std::size_t>(modalities),
                         std::vector<double>(static_cast<std::size_t>(num_classes), 0.0));
  for (int m = 0; m < modalities; ++m) {
    for (int c = 1; c < num_classes; ++c) {
      const int k = ((c - 1 - m) % fg + fg) % fg;
      auto& v = spec.visibility[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)];
      if (k == 0) v = 1.0;
      if (k == 1 && fg > 1) v = 0.6;
    }
  }
  return spec;
}

PhantomSpec PhantomSpec::complementary(int modalities, int num_classes) {
  PhantomSpec spec;
  spec.num_classes = num_classes;
  const int fg = num_classes - 1;
  spec.visibility.assign(static_cast<std::size_t>(modalities),
                         std::vector<double>(static_cast<std::size_t>(num_classes), 0.0));
  for (int m = 0; m < modalities; ++m) {
    spec.visibility[static_cast<std::size_t>(m)][static_cast<std::size_t>(1 + m % fg)] = 1.0;
  }
  return spec;
}

void PhantomSpec::validate() const {
  if (num_classes < 2 || num_classes > 255) throw ConfigError("phantom num_classes out of range");
  if (visibility.empty()) throw ConfigError("phantom needs at least one modality");
  for (auto g : grid) {
    if (g < 8) throw ConfigError("phantom grid extents must be >= 8");
  }
  for (const auto& row : visibility) {
    if (static_cast<int>(row.size()) != num_classes) {
      throw ConfigError("visibility row length must equal num_classes");
    }
    bool sees = false;
    for (int c = 1; c < num_classes; ++c) {
      const double v = row[static_cast<std::size_t>(c)];
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("visibility entries must lie in [0, 1]");
      sees = sees || v > 0.0;
    }
    if (!sees) throw ConfigError("every modality must see at least one foreground class");
  }
  for (int c = 1; c < num_classes; ++c) {
    bool seen = false;
    for (const auto& row : visibility) seen = seen || row[static_cast<std::size_t>(c)] > 0.0;
    if (!seen) throw ConfigError("class " + std::to_string(c) + " is invisible in every modality");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be nonnegative");
  if (objects_per_class < 1) throw ConfigError("objects_per_class must be >= 1");
  if (!(min_radius > 0.0 && max_radius >= min_radius)) throw ConfigError("bad radius range");
}

nlohmann::json PhantomSpec::to_json() const {
  return {{"grid", grid},
          {"num_classes", num_classes},
          {"visibility", visibility},
          {"noise_sigma", noise_sigma},
          {"seed", seed},
          {"spacing", spacing},
          {"objects_per_class", objects_per_class},
          {"min_radius", min_radius},
          {"max_radius", max_radius}};
}

PhantomSpec PhantomSpec::from_json(const nlohmann::json& j) {
  PhantomSpec s;
  j.at("grid").get_to(s.grid);
  j.at("num_classes").get_to(s.num_classes);
  j.at("visibility").get_to(s.visibility);
  j.at("noise_sigma").get_to(s.noise_sigma);
  j.at("seed").get_to(s.seed);
  j.at("spacing").get_to(s.spacing);
  j.at("objects_per_class").get_to(s.objects_per_class);
  j.at("min_radius").get_to(s.min_radius);
  j.at("max_radius").get_to(s.max_radius);
  s.validate();
  return s;
}

namespace {

struct Ellipsoid {
  double cz, cy, cx, rz, ry, rx;

  bool contains(double z, double y, double x, double grow) const {
    const double dz = (z - cz) / (rz + grow), dy = (y - cy) / (ry + grow),
                 dx = (x - cx) / (rx + grow);
    return dz * dz + dy * dy + dx * dx <= 1.0;
  }
};

// Returns false when the object cannot be placed without overlap.
bool place_object(LabelGrid& labels, std::uint8_t cls, const PhantomSpec& spec, Rng& rng) {
  const std::int64_t D = spec.grid[0], H = spec.grid[1], W = spec.grid[2];
  const double scale = static_cast<double>(std::min({D, H, W})) / 32.0;
  for (int attempt = 0; attempt < 200; ++attempt) {
    Ellipsoid e{};
    e.rz = scale * rng.uniform(spec.min_radius, spec.max_radius);
    e.ry = scale * rng.uniform(spec.min_radius, spec.max_radius);
    e.rx = scale * rng.uniform(spec.min_radius, spec.max_radius);
    if (2 * e.rz + 2 >= D || 2 * e.ry + 2 >= H || 2 * e.rx + 2 >= W) continue;
    e.cz = rng.uniform(e.rz + 1.0, static_cast<double>(D) - e.rz - 2.0);
    e.cy = rng.uniform(e.ry + 1.0, static_cast<double>(H) - e.ry - 2.0);
    e.cx = rng.uniform(e.rx + 1.0, static_cast<double>(W) - e.rx - 2.0);
    // One-voxel gap to any other object.
    bool clash = false;
    for (std::int64_t z = 0; z < D && !clash; ++z) {
      for (std::int64_t y = 0; y < H && !clash; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
          if (labels[(z * H + y) * W + x] != 0 &&
              e.contains(static_cast<double>(z), static_cast<double>(y),
                         static_cast<double>(x), 1.0)) {
            clash = true;
            break;
          }
        }
      }
    }
    if (clash) continue;
    for (std::int64_t z = 0; z < D; ++z) {
      for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
          if (e.contains(static_cast<double>(z), static_cast<double>(y),
                         static_cast<double>(x), 0.0)) {
            labels[(z * H + y) * W + x] = cls;
          }
        }
      }
    }
    return true;
  }
  return false;
}

bool prevalence_ok(const LabelGrid& labels, int num_classes) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (auto v : labels.values()) ++counts[v];
  const double n = static_cast<double>(labels.numel());
  for (int c = 1; c < num_classes; ++c) {
    const double f = static_cast<double>(counts[static_cast<std::size_t>(c)]) / n;
    if (f < 0.01 || f > 0.20) return false;
  }
  return true;
}

MultiModalSample generate_subject(const PhantomSpec& spec, const ModalitySet& names,
                                  int index) {
  const Shape shape{spec.grid[0], spec.grid[1], spec.grid[2]};
  Rng layout_rng(spec.seed, "phantom.layout", static_cast<std::uint64_t>(index));
  LabelGrid labels;
  bool ok = false;
  for (int restart = 0; restart < 50 && !ok; ++restart) {
    labels = LabelGrid(shape, 0);
    ok = true;
    for (int c = 1; c < spec.num_classes && ok; ++c) {
      for (int k = 0; k < spec.objects_per_class && ok; ++k) {
        ok = place_object(labels, static_cast<std::uint8_t>(c), spec, layout_rng);
      }
    }
    ok = ok && prevalence_ok(labels, spec.num_classes);
  }
  if (!ok) {
    throw DataError("phantom generation failed for subject " + std::to_string(index) +
                    ": objects cannot be packed within the prevalence limits");
  }
  MultiModalSample sample;
  char id[32];
  std::snprintf(id, sizeof id, "subj%03d", index);
  sample.subject_id = id;
  sample.labels = LabelMap{labels, spec.num_classes};
  for (int m = 0; m < spec.modalities(); ++m) {
    Rng noise(spec.seed, "phantom.noise",
              static_cast<std::uint64_t>(index) * 1024u + static_cast<std::uint64_t>(m));
    VoxelGrid vox(shape);
    const auto& row = spec.visibility[static_cast<std::size_t>(m)];
    for (std::int64_t i = 0; i < vox.numel(); ++i) {
      const double base = row[labels[i]];
      vox[i] = static_cast<float>(base + spec.noise_sigma * noise.normal());
    }
    sample.volumes.push_back({names[m], std::move(vox), spec.spacing});
  }
  return sample;
}

void require_little_endian_host() {
  static_assert(std::endian::native == std::endian::little ||
                    std::endian::native == std::endian::big,
                "mixed-endian hosts are not supported");
}

template <class T>
void write_raw(const fs::path& path, const std::vector<T>& values) {
  require_little_endian_host();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(T)));
  } else {
    for (T v : values) {
      auto bits = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bits.begin(), bits.end());
      out.write(bits.data(), sizeof(T));
    }
  }
  if (!out) throw Error("short write to '" + path.string() + "'");
}

template <class T>
std::vector<T> read_raw(const fs::path& path, std::int64_t count) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw LoadError("cannot stat dataset file '" + path.string() + "'");
  if (size != static_cast<std::uintmax_t>(count) * sizeof(T)) {
    throw LoadError("dataset file '" + path.string() + "' has " + std::to_string(size) +
                    " bytes, manifest implies " + std::to_string(count * sizeof(T)));
  }
  std::vector<T> values(static_cast<std::size_t>(count));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open dataset file '" + path.string() + "'");
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(size));
  if (!in) throw LoadError("short read from '" + path.string() + "'");
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (auto& v : values) {
      auto bits = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bits.begin(), bits.end());
      v = std::bit_cast<T>(bits);
    }
  }
  return values;
}

}  // namespace

Dataset generate_phantom(const PhantomSpec& spec, int n_subjects, const ModalitySet* names) {
  spec.validate();
  if (n_subjects < 1) throw ConfigError("n_subjects must be >= 1");
  Dataset ds;
  ds.modalities = names ? *names : ModalitySet::with_default_names(spec.modalities());
  if (ds.modalities.size() != spec.modalities()) {
    throw ConfigError("modality names do not match the visibility matrix");
  }
  ds.num_classes = spec.num_classes;
  ds.splits = default_splits(n_subjects);
  ds.generator = spec.to_json();
  for (int i = 0; i < n_subjects; ++i) {
    ds.subjects.push_back(generate_subject(spec, ds.modalities, i));
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& directory) {
  const fs::path dir(directory);
  fs::create_directories(dir);
  if (ds.subjects.empty()) throw ConfigError("cannot write an empty dataset");
  const auto& first = ds.subjects.front();
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["modalities"] = ds.modalities.names();
  manifest["num_classes"] = ds.num_classes;
  manifest["shape"] = first.grid_shape();
  manifest["spacing"] = first.spacing();
  manifest["generator"] = ds.generator;
  manifest["subjects"] = nlohmann::json::array();
  for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
    const auto& sample = ds.subjects[s];
    sample.validate(ds.modalities);
    if (sample.grid_shape() != first.grid_shape() || sample.spacing() != first.spacing()) {
      throw DimensionError("all subjects in a dataset must share shape and spacing");
    }
    nlohmann::json entry;
    entry["id"] = sample.subject_id;
    entry["split"] = std::string(split_name(ds.splits.at(s)));
    for (const auto& v : sample.volumes) {
      const std::string file = sample.subject_id + "_" + v.modality.name + ".f32";
      write_raw(dir / file, v.voxels.storage());
      entry["volumes"][v.modality.name] = file;
    }
    const std::string label_file = sample.subject_id + "_labels.u8";
    write_raw(dir / label_file, sample.labels.classes.storage());
    entry["labels"] = label_file;
    manifest["subjects"].push_back(entry);
  }
  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    out << manifest.dump(2) << '\n';
    if (!out) throw Error("cannot write manifest in '" + directory + "'");
  }
  fs::rename(tmp, dir / "manifest.json");
}

Dataset read_dataset(const std::string& directory, const ModalitySet* required) {
  const fs::path dir(directory);
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open '" + manifest_path.string() + "'");
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("'" + manifest_path.string() + "' is not valid JSON: " + e.what());
  }
  try {
    if (m.at("format_version").get<int>() != 1) {
      throw LoadError("'" + manifest_path.string() + "' has unsupported format_version");
    }
    Dataset ds;
    ds.modalities = ModalitySet(m.at("modalities").get<std::vector<std::string>>());
    ds.num_classes = m.at("num_classes").get<int>();
    ds.generator = m.value("generator", nlohmann::json());
    const auto shape = m.at("shape").get<Shape>();
    const auto spacing = m.at("spacing").get<Spacing>();
    if (shape.size() != 3) throw LoadError("manifest shape must have 3 extents");
    if (required) {
      for (const auto& mod : *required) {
        bool found = false;
        for (const auto& have : ds.modalities) found = found || have.name == mod.name;
        if (!found) {
          throw LoadError("dataset '" + directory + "' is missing modality '" + mod.name +
                          "' required by the configuration");
        }
      }
    }
    const std::int64_t n = shape_numel(shape);
    for (const auto& entry : m.at("subjects")) {
      MultiModalSample sample;
      sample.subject_id = entry.at("id").get<std::string>();
      for (const auto& mod : ds.modalities) {
        if (!entry.at("volumes").contains(mod.name)) {
          throw LoadError("subject '" + sample.subject_id + "' lacks modality '" + mod.name +
                          "' in '" + manifest_path.string() + "'");
        }
        const auto file = dir / entry.at("volumes").at(mod.name).get<std::string>();
        sample.volumes.push_back({mod, VoxelGrid(shape, read_raw<float>(file, n)), spacing});
      }
      const auto label_file = dir / entry.at("labels").get<std::string>();
      sample.labels = LabelMap{LabelGrid(shape, read_raw<std::uint8_t>(label_file, n)),
                               ds.num_classes};
      try {
        sample.validate(ds.modalities);
      } catch (const Error& e) {
        throw LoadError("invalid content in '" + label_file.string() + "': " + e.what());
      }
      ds.splits.push_back(parse_split(entry.at("split").get<std::string>()));
      ds.subjects.push_back(std::move(sample));
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
}

MultiModalSample flip_sample(const MultiModalSample& sample, std::array<bool, 3> axes) {
  if (!axes[0] && !axes[1] && !axes[2]) return sample;
  const auto shape = sample.grid_shape();
  const std::int64_t D = shape[0], H = shape[1], W = shape[2];
  auto flip = [&](const auto& src) {
    auto dst = src;
    for (std::int64_t z = 0; z < D; ++z) {
      const std::int64_t sz = axes[0] ? D - 1 - z : z;
      for (std::int64_t y = 0; y < H; ++y) {
        const std::int64_t sy = axes[1] ? H - 1 - y : y;
        for (std::int64_t x = 0; x < W; ++x) {
          const std::int64_t sx = axes[2] ? W - 1 - x : x;
          dst[(z * H + y) * W + x] = src[(sz * H + sy) * W + sx];
        }
      }
    }
    return dst;
  };
  MultiModalSample out;
  out.subject_id = sample.subject_id;
  out.labels = LabelMap{flip(sample.labels.classes), sample.labels.num_classes};
  for (const auto& v : sample.volumes) out.volumes.push_back({v.modality, flip(v.voxels), v.spacing});
  return out;
}

std::vector<VoxelGrid> modality_means(const std::vector<const MultiModalSample*>& samples,
                                      int modalities) {
  if (samples.empty()) throw ConfigError("mean volumes need at least one training sample");
  std::vector<VoxelGrid> out;
  const auto shape = samples.front()->grid_shape();
  for (int m = 0; m < modalities; ++m) {
    std::vector<double> acc(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    for (const auto* s : samples) {
      const auto& v = s->volume(m).voxels;
      for (std::int64_t i = 0; i < v.numel(); ++i) acc[static_cast<std::size_t>(i)] += v[i];
    }
    VoxelGrid mean(shape);
    for (std::int64_t i = 0; i < mean.numel(); ++i) {
      mean[i] = static_cast<float>(acc[static_cast<std::size_t>(i)] /
                                   static_cast<double>(samples.size()));
    }
    out.push_back(std::move(mean));
  }
  return out;
}

}  // namespace magms
