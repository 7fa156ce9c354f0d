#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "densesr/image_ops.hpp"
#include "densesr/png_io.hpp"
#include "densesr/rng.hpp"
#include "densesr/scene.hpp"
#include "densesr/tensor.hpp"
#include "json.hpp"

namespace densesr {

// Aligned low/high-resolution training pair; lr is always manufactured
// from hr by nearest-neighbor decimation.
template <typename S>
struct ChipPair {
  Tensor<S> hr, lr;
  int scale = 0;
  std::string source_id;
  std::string split;  // "train" or "val"
};

struct ManifestEntry {
  std::string path;
  std::string split;
  int x = 0, y = 0;
  int chip_size = 0;
};

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail_runtime("cannot open manifest for writing: ", path);
  for (const ManifestEntry& e : entries) {
    nlohmann::json j{
        {"path", e.path}, {"split", e.split}, {"x", e.x}, {"y", e.y},
        {"chip_size", e.chip_size}};
    out << j.dump() << "\n";
  }
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_runtime("cannot open manifest: ", path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      fail_runtime("manifest parse error at ", path, ":", lineno);
    }
    try {
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      e.split = j.at("split").get<std::string>();
      e.x = j.at("x").get<int>();
      e.y = j.at("y").get<int>();
      e.chip_size = j.at("chip_size").get<int>();
      if (e.split != "train" && e.split != "val") {
        fail_runtime("manifest split must be train or val at ", path, ":", lineno);
      }
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      fail_runtime("manifest field error at ", path, ":", lineno, ": ", ex.what());
    }
  }
  return entries;
}

// Loads every manifest entry, cuts its chip, and manufactures the
// low-resolution side at the given scale. Relative paths resolve against
// the manifest's directory.
template <typename S>
std::vector<ChipPair<S>> load_pairs(const std::string& manifest_path, int scale) {
  const std::vector<ManifestEntry> entries = load_manifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<ChipPair<S>> pairs;
  for (const ManifestEntry& e : entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base / p;
    Tensor<S> img = load_png<S>(p.string());
    const Shape s = img.shape();
    if (e.x < 0 || e.y < 0 || e.x + e.chip_size > s.w || e.y + e.chip_size > s.h) {
      fail_config("manifest chip at (", e.x, ",", e.y, ") size ", e.chip_size,
                  " exceeds image ", s.str(), " from ", e.path);
    }
    if (e.chip_size % scale != 0) {
      fail_config("chip size ", e.chip_size, " not divisible by scale ", scale);
    }
    Tensor<S> hr(Shape{1, s.c, e.chip_size, e.chip_size});
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < e.chip_size; ++y)
        for (int x = 0; x < e.chip_size; ++x) {
          hr.at(0, c, y, x) = img.at(0, c, e.y + y, e.x + x);
        }
    ChipPair<S> pair;
    pair.hr = hr;
    pair.lr = nn_downsample(hr, scale);
    pair.scale = scale;
    pair.source_id = e.path + ":" + std::to_string(e.x) + "," + std::to_string(e.y);
    pair.split = e.split;
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

struct SyntheticDatasetSpec {
  std::uint64_t seed = 0;
  int scenes = 4;
  int scene_size = 256;
  int chip_size = 64;
  int channels = 3;
  int scale = 4;
  double val_fraction = 0.25;
};

namespace detail {

inline void check_synthetic_spec(const SyntheticDatasetSpec& spec) {
  if (spec.scenes < 1) fail_config("need at least one scene, got ", spec.scenes);
  if (spec.chip_size % spec.scale != 0) {
    fail_config("chip size ", spec.chip_size, " not divisible by scale ", spec.scale);
  }
  if (spec.chip_size > spec.scene_size) {
    fail_config("chip size ", spec.chip_size, " exceeds scene size ", spec.scene_size);
  }
  if (spec.val_fraction < 0.0 || spec.val_fraction >= 1.0) {
    fail_config("val fraction must be in [0,1), got ", spec.val_fraction);
  }
}

// Deterministic split assignment: shuffle chip indices, first block is val.
inline std::vector<int> val_indices(int count, double val_fraction, Rng& rng) {
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  rng.shuffle(order);
  order.resize(static_cast<std::size_t>(count * val_fraction));
  return order;
}

}  // namespace detail

// In-memory synthetic dataset: scenes -> non-overlapping chips -> pairs.
template <typename S>
std::vector<ChipPair<S>> synthetic_pairs(const SyntheticDatasetSpec& spec) {
  detail::check_synthetic_spec(spec);
  Rng base(spec.seed);
  std::vector<ChipPair<S>> pairs;
  for (int i = 0; i < spec.scenes; ++i) {
    SceneSpec scene;
    scene.seed = base.fork(static_cast<std::uint64_t>(i)).raw();
    scene.size = spec.scene_size;
    scene.channels = spec.channels;
    Tensor<S> img = generate_scene<S>(scene);
    for (Chip<S>& chip : chip_image(img, spec.chip_size, spec.chip_size)) {
      ChipPair<S> pair;
      pair.hr = chip.data;
      pair.lr = nn_downsample(chip.data, spec.scale);
      pair.scale = spec.scale;
      pair.source_id = "scene" + std::to_string(i) + ":" + std::to_string(chip.x) + "," +
                       std::to_string(chip.y);
      pair.split = "train";
      pairs.push_back(std::move(pair));
    }
  }
  Rng split_rng = base.fork(0x597117);
  for (int idx :
       detail::val_indices(static_cast<int>(pairs.size()), spec.val_fraction, split_rng)) {
    pairs[idx].split = "val";
  }
  return pairs;
}

// On-disk variant: writes scene PNGs plus a manifest of chip entries, and
// returns the manifest path.
template <typename S>
std::string write_synthetic_dataset(const SyntheticDatasetSpec& spec,
                                    const std::string& out_dir) {
  detail::check_synthetic_spec(spec);
  std::filesystem::create_directories(out_dir);
  Rng base(spec.seed);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < spec.scenes; ++i) {
    SceneSpec scene;
    scene.seed = base.fork(static_cast<std::uint64_t>(i)).raw();
    scene.size = spec.scene_size;
    scene.channels = spec.channels;
    Tensor<S> img = generate_scene<S>(scene);
    const std::string name = "scene" + std::to_string(i) + ".png";
    save_png(img, (std::filesystem::path(out_dir) / name).string());
    for (int y = 0; y + spec.chip_size <= spec.scene_size; y += spec.chip_size) {
      for (int x = 0; x + spec.chip_size <= spec.scene_size; x += spec.chip_size) {
        entries.push_back({name, "train", x, y, spec.chip_size});
      }
    }
  }
  Rng split_rng = base.fork(0x597117);
  for (int idx :
       detail::val_indices(static_cast<int>(entries.size()), spec.val_fraction, split_rng)) {
    entries[idx].split = "val";
  }
  const std::string manifest = (std::filesystem::path(out_dir) / "manifest.jsonl").string();
  save_manifest(entries, manifest);
  return manifest;
}

template <typename S>
struct Batch {
  Tensor<S> hr, lr;  // stacked along the batch dimension
};

// Seeded permutation of the pairs grouped into fixed-size batches; a
// trailing partial batch is dropped when drop_last is set (training).
template <typename S>
std::vector<Batch<S>> make_batches(const std::vector<ChipPair<S>>& pairs, int batch_size,
                                   Rng& rng, bool drop_last = true) {
  if (batch_size < 1) fail_config("batch size must be >= 1, got ", batch_size);
  std::vector<int> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);

  std::vector<Batch<S>> batches;
  for (std::size_t start = 0; start + batch_size <= order.size() ||
                              (!drop_last && start < order.size());
       start += batch_size) {
    const int count = static_cast<int>(
        std::min<std::size_t>(batch_size, order.size() - start));
    const Shape hs = pairs[order[start]].hr.shape();
    const Shape ls = pairs[order[start]].lr.shape();
    Batch<S> batch;
    batch.hr = Tensor<S>(Shape{count, hs.c, hs.h, hs.w});
    batch.lr = Tensor<S>(Shape{count, ls.c, ls.h, ls.w});
    for (int b = 0; b < count; ++b) {
      const ChipPair<S>& pair = pairs[order[start + b]];
      if (pair.hr.shape() != hs || pair.lr.shape() != ls) {
        fail_config("all chips in a batch must share one shape; got ",
                    pair.hr.shape().str(), " vs ", hs.str());
      }
      std::copy(pair.hr.data(), pair.hr.data() + pair.hr.size(),
                batch.hr.mutable_data() + batch.hr.index(b, 0, 0, 0));
      std::copy(pair.lr.data(), pair.lr.data() + pair.lr.size(),
                batch.lr.mutable_data() + batch.lr.index(b, 0, 0, 0));
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

template <typename S>
std::vector<const ChipPair<S>*> split_of(const std::vector<ChipPair<S>>& pairs,
                                         const std::string& split) {
  std::vector<const ChipPair<S>*> out;
  for (const ChipPair<S>& p : pairs) {
    if (p.split == split) out.push_back(&p);
  }
  return out;
}

}  // namespace densesr
