#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "brainssl/manifest.hpp"
#include "brainssl/rng.hpp"
#include "brainssl/volume.hpp"

namespace brainssl {

struct SynthFactors {
  double size_factor = 0.8;  // [0.6, 1.0]
  int asymmetry = 0;         // 0: structure on the low-W side, 1: high-W side
  int lesion_count = 0;
  std::uint64_t noise_seed = 0;
};

struct SynthStyle {
  double structure_offset = 0.20;  // along W, as a fraction of the grid width
  double structure_radius = 0.20;
  double structure_amplitude = 0.5;
  double lesion_amplitude = 0.5;
  double noise_std = 0.1;
  double jitter_voxels = 1.5;  // head position jitter per axis
  double contrast_jitter = 0.0;  // per-scan gamma exp(U(-c, c)) applied before noise
};

struct SynthSample {
  VolumeGrid volume;     // z-scored
  VolumeGrid raw;        // before noise and z-scoring
  SynthFactors factors;
  std::vector<std::array<double, 3>> lesion_sites;  // voxel coordinates (d, h, w)
  std::int64_t foreground_voxels = 0;               // voxels inside the head ellipsoid
};

/// Renders one volume. Head pose and lesion sites come from `rng`, so scans
/// of one patient share them; voxel noise comes from factors.noise_seed.
/// Throws InvalidArgument for dims below 16 or factors out of range.
SynthSample generate_volume(const Shape3& dims, const SynthFactors& factors, const Rng& rng,
                            const SynthStyle& style = {});

struct SynthDatasetOptions {
  std::int64_t patients = 64;
  std::pair<int, int> scans_per_patient{1, 3};
  Shape3 dims{32, 32, 32};
  std::uint64_t seed = 0;
  SplitRatios ratios{};
  int max_lesions = 6;
  SynthStyle style{};
};

/// Writes volumes under `out_dir/volumes` and the manifest to
/// `out_dir/manifest.jsonl`, which is returned. Labels: sex = asymmetry,
/// age = 100 * size_factor, stroke_scale = lesion count.
std::filesystem::path generate_dataset(const SynthDatasetOptions& opt, const std::filesystem::path& out_dir);

/// Factors of patient `index` of a dataset seeded with `seed`.
SynthFactors patient_factors(std::uint64_t seed, std::int64_t index, int max_lesions);

}  // namespace brainssl
