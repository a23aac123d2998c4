#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctam/errors.hpp"
#include "ctam/image.hpp"
#include "ctam/rng.hpp"
#include "ctam/volume_io.hpp"

namespace ctam {

struct SynthConfig {
  std::uint64_t seed = 0;
  int n_patients = 40;
  int min_slices = 60;
  int max_slices = 120;
  int image_size = 64;
  double lesion_intensity = 0.7;
  double positive_fraction = 0.5;
};

inline constexpr int kGeneratorVersion = 1;

inline void validate_synth_config(const SynthConfig& c) {
  detail::require(c.n_patients >= 1, "synth: n_patients must be positive");
  detail::require(c.min_slices >= 1 && c.min_slices <= c.max_slices,
                  "synth: slice range must satisfy 1 <= min <= max");
  detail::require(c.image_size >= 16, "synth: image_size must be >= 16");
  detail::require(c.positive_fraction > 0.0 && c.positive_fraction < 1.0,
                  "synth: positive_fraction must lie in (0,1)");
  detail::require(c.lesion_intensity >= 0.0 && c.lesion_intensity <= 1.0,
                  "synth: lesion_intensity must lie in [0,1]");
}

// Evenly spreads positives over the patient index range, so any contiguous
// split stays close to the configured fraction.
inline bool synth_label(const SynthConfig& c, int patient_index) {
  const double f = c.positive_fraction;
  return std::floor((patient_index + 1) * f) > std::floor(patient_index * f);
}

inline std::string synth_patient_id(int patient_index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%03d", patient_index);
  return buf;
}

// One procedural CT-like stack: bright noisy background, two dark elliptical
// lungs whose size peaks mid-stack, and (for positives) bright blobs painted
// inside the lungs on a seeded subset of the mid slices. Fully determined by
// (config.seed, patient_index). Pass lung_masks to also receive the per-slice
// lung-interior mask for oracle-style checks.
inline Volume synth_patient(const SynthConfig& config, int patient_index,
                            std::vector<std::vector<std::uint8_t>>* lung_masks = nullptr) {
  validate_synth_config(config);
  std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(patient_index)));
  const bool positive = synth_label(config, patient_index);
  const int n_slices = uniform_int(rng, config.min_slices, config.max_slices);
  const int n = config.image_size;
  const double nd = static_cast<double>(n);

  const double cy = nd * (0.5 + uniform_pm(rng, 0.02));
  const double lung_offset = nd * (0.18 + uniform_pm(rng, 0.015));
  const double cx_left = nd * 0.5 - lung_offset;
  const double cx_right = nd * 0.5 + lung_offset;
  const double a0 = nd * (0.14 + uniform_pm(rng, 0.015));  // semi-axis, horizontal
  const double b0 = nd * (0.22 + uniform_pm(rng, 0.02));   // semi-axis, vertical

  // Mid-stack band that may carry lesions; the same band is where the lung
  // profile peaks.
  const int band_lo = n_slices / 4;
  const int band_hi = (3 * n_slices) / 4;
  std::vector<std::uint8_t> lesion_slice(static_cast<std::size_t>(n_slices), 0);
  if (positive) {
    const double coverage = uniform_in(rng, 0.45, 0.7);
    std::vector<int> band;
    for (int z = band_lo; z < band_hi; ++z) band.push_back(z);
    seeded_shuffle(band, rng);
    const int count = std::max(1, static_cast<int>(std::lround(coverage * band.size())));
    for (int i = 0; i < count && i < static_cast<int>(band.size()); ++i)
      lesion_slice[static_cast<std::size_t>(band[static_cast<std::size_t>(i)])] = 1;
  }

  Volume volume;
  volume.patient_id = synth_patient_id(patient_index);
  volume.slices.reserve(static_cast<std::size_t>(n_slices));
  if (lung_masks) lung_masks->assign(static_cast<std::size_t>(n_slices), {});

  for (int z = 0; z < n_slices; ++z) {
    const double t = (z + 0.5) / n_slices;
    const double profile = std::sin(std::numbers::pi * t);
    const double s = 0.18 + 0.82 * profile;
    const double a = a0 * s, b = b0 * s;

    Image slice(n, n);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n) * n, 0);
    auto in_lungs = [&](double x, double y) {
      const double dl = ((x - cx_left) / a) * ((x - cx_left) / a) +
                        ((y - cy) / b) * ((y - cy) / b);
      const double dr = ((x - cx_right) / a) * ((x - cx_right) / a) +
                        ((y - cy) / b) * ((y - cy) / b);
      return dl <= 1.0 || dr <= 1.0;
    };
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const bool inside = in_lungs(x, y);
        double v = inside ? 0.15 + uniform_pm(rng, 0.03) : 0.80 + uniform_pm(rng, 0.04);
        slice.at(y, x) = std::clamp(v, 0.0, 1.0);
        if (inside) mask[static_cast<std::size_t>(y) * n + x] = 1;
      }
    }

    if (lesion_slice[static_cast<std::size_t>(z)]) {
      const int blobs = uniform_int(rng, 3, 5);
      for (int i = 0; i < blobs; ++i) {
        const double cx = (rng() & 1) ? cx_right : cx_left;
        const double angle = uniform_in(rng, 0.0, 2.0 * std::numbers::pi);
        const double radial = uniform_in(rng, 0.0, 0.55);
        const double bx = cx + radial * a * std::cos(angle);
        const double by = cy + radial * b * std::sin(angle);
        const double rho = uniform_in(rng, 2.0, 4.0) * nd / 64.0;
        const int x_lo = std::max(0, static_cast<int>(std::floor(bx - rho)));
        const int x_hi = std::min(n - 1, static_cast<int>(std::ceil(bx + rho)));
        const int y_lo = std::max(0, static_cast<int>(std::floor(by - rho)));
        const int y_hi = std::min(n - 1, static_cast<int>(std::ceil(by + rho)));
        for (int y = y_lo; y <= y_hi; ++y) {
          for (int x = x_lo; x <= x_hi; ++x) {
            const double dx = x - bx, dy = y - by;
            if (dx * dx + dy * dy > rho * rho) continue;
            if (!in_lungs(x, y)) continue;
            slice.at(y, x) =
                std::clamp(config.lesion_intensity + uniform_pm(rng, 0.02), 0.0, 1.0);
          }
        }
      }
    }

    volume.slices.push_back(std::move(slice));
    if (lung_masks) (*lung_masks)[static_cast<std::size_t>(z)] = std::move(mask);
  }
  return volume;
}

// Writes the whole dataset: one SVOL per patient, labels.csv, and a
// manifest recording the generation parameters. Byte-identical per seed.
inline void synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir) {
  validate_synth_config(config);
  std::filesystem::create_directories(out_dir);

  LabelTable labels;
  for (int i = 0; i < config.n_patients; ++i) {
    const Volume volume = synth_patient(config, i);
    write_volume(volume, out_dir / (volume.patient_id + ".svol"));
    labels.entries[volume.patient_id] = synth_label(config, i) ? 1 : 0;
  }
  write_labels(labels, out_dir / "labels.csv");

  nlohmann::ordered_json manifest;
  manifest["seed"] = config.seed;
  manifest["n_patients"] = config.n_patients;
  manifest["image_size"] = config.image_size;
  manifest["positive_fraction"] = config.positive_fraction;
  manifest["generator_version"] = kGeneratorVersion;
  detail::write_file_bytes(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace ctam
