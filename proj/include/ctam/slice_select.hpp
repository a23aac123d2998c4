#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "ctam/errors.hpp"
#include "ctam/image.hpp"

namespace ctam {

// One slice's standing in the ranking: original stack position and the
// estimated lung area in pixels.
struct SliceRecord {
  int index = 0;
  std::int64_t area = 0;
};

struct SelectionConfig {
  double keep_fraction = 0.5;
  int k_train = 12;
  int k_test = 40;
};

enum class SelectMode { train, test };

// Between-class-variance threshold over a fixed 256-bin histogram of [0,1].
// Returns 0 for degenerate (single-bin) images, which classifies no pixel
// as dark.
inline double otsu_threshold(const Image& image) {
  constexpr int kBins = 256;
  long long hist[kBins] = {0};
  for (double p : image.pixels) {
    int bin = static_cast<int>(p * kBins);
    bin = std::clamp(bin, 0, kBins - 1);
    ++hist[bin];
  }
  const long long total = static_cast<long long>(image.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += static_cast<double>(b) * hist[b];

  double best_sigma = -1.0;
  int best_split = -1;
  long long w0 = 0;
  double sum0 = 0.0;
  for (int b = 0; b < kBins - 1; ++b) {
    w0 += hist[b];
    if (w0 == 0) continue;
    const long long w1 = total - w0;
    if (w1 == 0) break;
    sum0 += static_cast<double>(b) * hist[b];
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double sigma = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
    if (sigma > best_sigma) {
      best_sigma = sigma;
      best_split = b;
    }
  }
  if (best_split < 0) return 0.0;
  return static_cast<double>(best_split + 1) / kBins;
}

// Total pixel count of the two largest dark 4-connected components that do
// not touch the image border, "dark" meaning below the Otsu threshold.
// Degenerate (uniform) images yield 0.
inline std::int64_t estimate_lung_area(const Image& image) {
  detail::require(image.height >= 8 && image.width >= 8,
                  "estimate_lung_area: image must be at least 8x8, got " +
                      std::to_string(image.height) + "x" + std::to_string(image.width));
  const double threshold = otsu_threshold(image);
  if (threshold <= 0.0) return 0;

  const int h = image.height, w = image.width;
  std::vector<std::uint8_t> dark(static_cast<std::size_t>(h) * w, 0);
  for (std::size_t i = 0; i < image.size(); ++i) dark[i] = image.pixels[i] < threshold ? 1 : 0;

  std::vector<std::uint8_t> seen(dark.size(), 0);
  std::vector<int> stack;
  std::int64_t largest = 0, second = 0;

  for (int start = 0; start < h * w; ++start) {
    if (!dark[start] || seen[start]) continue;
    stack.assign(1, start);
    seen[start] = 1;
    std::int64_t count = 0;
    bool touches_border = false;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / w, x = p % w;
      ++count;
      if (y == 0 || y == h - 1 || x == 0 || x == w - 1) touches_border = true;
      const int neighbors[4] = {p - w, p + w, p - 1, p + 1};
      const bool ok[4] = {y > 0, y < h - 1, x > 0, x < w - 1};
      for (int k = 0; k < 4; ++k) {
        if (!ok[k]) continue;
        const int q = neighbors[k];
        if (dark[q] && !seen[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
    if (touches_border) continue;
    if (count > largest) {
      second = largest;
      largest = count;
    } else if (count > second) {
      second = count;
    }
  }
  return largest + second;
}

// Keeps the ceil(n*keep_fraction) records of largest area, breaking area
// ties in favor of the smaller original index, and returns them sorted
// ascending by index.
inline std::vector<SliceRecord> keep_top_fraction(std::vector<SliceRecord> records,
                                                  double keep_fraction) {
  detail::require(!records.empty(), "keep_top_fraction: empty record list");
  detail::require(keep_fraction > 0.0 && keep_fraction <= 1.0,
                  "keep_top_fraction: keep_fraction must lie in (0,1], got " +
                      std::to_string(keep_fraction));
  const auto n = static_cast<double>(records.size());
  const int keep = std::max(1, static_cast<int>(std::ceil(n * keep_fraction - 1e-9)));
  std::sort(records.begin(), records.end(), [](const SliceRecord& a, const SliceRecord& b) {
    if (a.area != b.area) return a.area > b.area;
    return a.index < b.index;
  });
  records.resize(std::min<std::size_t>(records.size(), static_cast<std::size_t>(keep)));
  std::sort(records.begin(), records.end(),
            [](const SliceRecord& a, const SliceRecord& b) { return a.index < b.index; });
  return records;
}

// Positions of k evenly spread picks over a list of m entries. Takes all of
// them when m <= k; otherwise endpoints are always included.
inline std::vector<int> equally_spaced_indices(int m, int k) {
  detail::require(m >= 1, "equally_spaced_indices: m must be >= 1, got " + std::to_string(m));
  detail::require(k >= 1, "equally_spaced_indices: k must be >= 1, got " + std::to_string(k));
  std::vector<int> positions;
  if (m <= k) {
    positions.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) positions[static_cast<std::size_t>(i)] = i;
  } else if (k == 1) {
    positions.push_back((m - 1) / 2);
  } else {
    positions.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j)
      positions.push_back(static_cast<int>(static_cast<std::int64_t>(j) * (m - 1) / (k - 1)));
  }
  return positions;
}

// Full reduction of a slice stack: rank by estimated lung area, keep the
// top fraction, then sample evenly along the kept slices in anatomical
// order. Returns (original index, slice) pairs with strictly increasing
// indices.
inline std::vector<std::pair<int, Image>> select_slices(const Volume& volume,
                                                        const SelectionConfig& config,
                                                        SelectMode mode) {
  validate_volume(volume);
  detail::require(config.k_train >= 1 && config.k_test >= 1,
                  "select_slices: slice budgets must be positive");
  std::vector<SliceRecord> records;
  records.reserve(volume.slices.size());
  for (std::size_t i = 0; i < volume.slices.size(); ++i)
    records.push_back({static_cast<int>(i), estimate_lung_area(volume.slices[i])});

  const std::vector<SliceRecord> kept = keep_top_fraction(std::move(records), config.keep_fraction);
  const int k = mode == SelectMode::train ? config.k_train : config.k_test;
  const std::vector<int> positions = equally_spaced_indices(static_cast<int>(kept.size()), k);

  std::vector<std::pair<int, Image>> out;
  out.reserve(positions.size());
  for (int pos : positions) {
    const int original = kept[static_cast<std::size_t>(pos)].index;
    out.emplace_back(original, volume.slices[static_cast<std::size_t>(original)]);
  }
  return out;
}

}  // namespace ctam
