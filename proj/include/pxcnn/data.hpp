/**
 * Copyright 2026 The pxcnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PXCNN_DATA_HPP_
#define PXCNN_DATA_HPP_

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "pxcnn/error.hpp"
#include "pxcnn/image.hpp"
#include "pxcnn/random.hpp"
#include "pxcnn/tensor.hpp"

namespace pxcnn {

inline constexpr int kNormal = 0;
inline constexpr int kPneumonia = 1;

/// Tags for independent random streams derived from a run seed.
enum StreamTag : std::uint64_t {
  kSplitStream = 1,
  kBatchStream = 2,
  kInitStream = 3,
  kDropoutStream = 4,
  kAugmentStream = 5,
  kSyntheticStream = 6,
};

inline const char* class_directory(int label) { return label == kPneumonia ? "PNEUMONIA" : "NORMAL"; }

struct Sample {
  Tensor image;  // [1, H, W], values in [0, 1]
  int label;     // kNormal or kPneumonia
};

struct ManifestEntry {
  std::filesystem::path path;
  int label;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;  // sorted by path
  std::size_t normal_count = 0;
  std::size_t pneumonia_count = 0;
  std::vector<std::string> warnings;  // files skipped as undecodable

  std::size_t size() const { return entries.size(); }
};

inline bool has_image_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".pgm";
}

/// Lists every decodable image under <root>/NORMAL and <root>/PNEUMONIA.
/// Undecodable files are skipped and reported in `warnings`.
inline DatasetManifest scan_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  DatasetManifest manifest;
  for (int label : {kNormal, kPneumonia}) {
    const fs::path dir = root / class_directory(label);
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
      fail(ErrorKind::data, "dataset class directory missing: " + dir.string());
    }
    std::size_t found = 0;
    for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file() || !has_image_extension(entry.path())) continue;
      try {
        (void)decode_image(entry.path());
      } catch (const Error& e) {
        manifest.warnings.emplace_back(e.what());
        continue;
      }
      manifest.entries.push_back({entry.path(), label});
      ++found;
    }
    if (found == 0) fail(ErrorKind::data, std::string("no decodable images for class ") + class_directory(label));
    (label == kNormal ? manifest.normal_count : manifest.pneumonia_count) = found;
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  return manifest;
}

/// CSV with header `path,label`, rows in manifest (path) order.
inline void write_manifest_csv(const DatasetManifest& manifest, std::ostream& out) {
  out << "path,label\n";
  for (const auto& e : manifest.entries) out << e.path.string() << ',' << e.label << '\n';
}

// ---------------------------------------------------------------------------
// Stratified split

template <typename Item>
struct SplitOf {
  std::vector<Item> train;
  std::vector<Item> test;
  double ratio = 0.8;
  std::uint64_t seed = 0;
};

using Split = SplitOf<ManifestEntry>;

/// Within each class, shuffles by seed and sends floor(ratio * n) items to
/// train and the rest to test. Both parts keep the input's relative order.
template <typename Item, typename LabelOf>
SplitOf<Item> stratified_split(std::span<const Item> items, double ratio, std::uint64_t seed, LabelOf label_of) {
  if (!(ratio > 0.0 && ratio < 1.0)) fail_argument("split ratio must lie in (0, 1)");
  if (items.empty()) fail(ErrorKind::data, "cannot split an empty dataset");
  std::vector<bool> to_train(items.size(), false);
  for (int label : {kNormal, kPneumonia}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (label_of(items[i]) == label) members.push_back(i);
    }
    if (members.empty()) fail(ErrorKind::data, std::string("class ") + class_directory(label) + " has no items to split");
    Rng rng = make_rng(seed, {kSplitStream, static_cast<std::uint64_t>(label)});
    shuffle(std::span<std::size_t>(members), rng);
    // The epsilon guards products such as 0.29 * 100 = 28.999999999999996.
    const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(members.size()) + 1e-9));
    for (std::size_t k = 0; k < n_train; ++k) to_train[members[k]] = true;
  }
  SplitOf<Item> out;
  out.ratio = ratio;
  out.seed = seed;
  for (std::size_t i = 0; i < items.size(); ++i) (to_train[i] ? out.train : out.test).push_back(items[i]);
  return out;
}

inline Split split(const DatasetManifest& manifest, double ratio, std::uint64_t seed) {
  return stratified_split(std::span<const ManifestEntry>(manifest.entries), ratio, seed,
                          [](const ManifestEntry& e) { return e.label; });
}

inline SplitOf<Sample> split(std::span<const Sample> samples, double ratio, std::uint64_t seed) {
  return stratified_split(samples, ratio, seed, [](const Sample& s) { return s.label; });
}

// ---------------------------------------------------------------------------
// Batching

/// Shuffles with the (seed, epoch) stream and cuts batches of `batch_size`;
/// the last batch may be short.
template <typename T>
std::vector<std::vector<T>> make_batches(std::span<const T> items, std::size_t batch_size, std::uint64_t epoch,
                                         std::uint64_t seed) {
  if (batch_size == 0) fail_argument("batch size must be at least 1");
  std::vector<T> order(items.begin(), items.end());
  Rng rng = make_rng(seed, {kBatchStream, epoch});
  shuffle(std::span<T>(order), rng);
  std::vector<std::vector<T>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

inline std::vector<Sample> load_samples(std::span<const ManifestEntry> entries, std::size_t height,
                                        std::size_t width) {
  std::vector<Sample> samples;
  samples.reserve(entries.size());
  for (const auto& e : entries) samples.push_back({load_image(e.path, height, width), e.label});
  return samples;
}

// ---------------------------------------------------------------------------
// Synthetic blobs

struct SyntheticSpec {
  std::size_t count = 250;
  std::size_t size = 32;
  std::uint64_t seed = 7;
  double noise_mean = 0.3;
  double noise_sigma = 0.1;
  double blob_amplitude = 1.0;
  double blob_sigma = 3.0;  // pixels
};

/// Noise images; every odd-indexed one (label 1) also carries a bright
/// Gaussian disc centred at a random position at least 6 px from the border.
inline std::vector<Sample> generate_blobs(const SyntheticSpec& spec) {
  if (spec.count < 2 || spec.size < 13) fail_argument("synthetic data needs count >= 2 and size >= 13");
  std::vector<Sample> samples;
  samples.reserve(spec.count);
  const std::size_t n = spec.size;
  for (std::size_t i = 0; i < spec.count; ++i) {
    Rng rng = make_rng(spec.seed, {kSyntheticStream, i});
    const int label = static_cast<int>(i % 2);
    std::vector<double> px(n * n);
    for (double& v : px) v = spec.noise_mean + spec.noise_sigma * standard_normal(rng);
    if (label == kPneumonia) {
      const double cy = uniform(rng, 6.0, static_cast<double>(n) - 7.0);
      const double cx = uniform(rng, 6.0, static_cast<double>(n) - 7.0);
      const double inv = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma);
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          px[y * n + x] += spec.blob_amplitude * std::exp(-(dx * dx + dy * dy) * inv);
        }
      }
    }
    for (double& v : px) v = std::clamp(v, 0.0, 1.0);
    samples.push_back({Tensor({1, n, n}, std::move(px)), label});
  }
  return samples;
}

}  // namespace pxcnn

#endif  // PXCNN_DATA_HPP_
