#pragma once

#include <array>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "brainssl/rng.hpp"
#include "brainssl/volume.hpp"

namespace brainssl {

/// Stored axis treated as the axial axis for flips. After permute_depth_first
/// this is depth.
inline constexpr int kAxialAxis = 0;

/// Canonical model-input shape of the full-resolution pipeline.
inline constexpr Shape3 kCanonicalShape{150, 192, 192};

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

// ---------------------------------------------------------------------------
// Deterministic primitives. Spatial ones use trilinear interpolation.

/// Resize with half-voxel-centre alignment and edge clamping; resizing to the
/// same shape is exact.
VolumeGrid resize_trilinear(const VolumeGrid& v, const Shape3& out);
/// Resamples the box [start, start + extent) onto an `out` grid.
VolumeGrid crop_resize(const VolumeGrid& v, const Shape3& start, const Shape3& extent,
                       const Shape3& out);
VolumeGrid flip(const VolumeGrid& v, int axis);
/// Rotation matrix R0(a0) * R1(a1) * R2(a2), where Rk rotates the plane of
/// the other two stored axes by ak radians.
Mat3 rotation_matrix(const Vec3& angles_rad);
/// Moves content by x' = A (x - c) + c + t about the volume centre c, with
/// zero fill for samples that fall outside the source grid.
VolumeGrid affine_resample(const VolumeGrid& v, const Mat3& a, const Vec3& translation);
VolumeGrid rotate(const VolumeGrid& v, const Vec3& angles_rad);
VolumeGrid shift_intensity(const VolumeGrid& v, double delta);
/// u = (x - min) / (max - min); out = u^gamma * (max - min) + min.
/// Identity on constant volumes.
VolumeGrid adjust_contrast(const VolumeGrid& v, double gamma);
VolumeGrid add_gaussian_noise(const VolumeGrid& v, double std, Rng& rng);

// ---------------------------------------------------------------------------
// Parameterised random transforms.

struct CropResizeParams {
  Shape3 min_size{30, 40, 40};
  Shape3 out_size = kCanonicalShape;
};
struct FlipParams {
  int axis = kAxialAxis;
};
struct RotateParams {
  double max_degrees = 45.0;
};
struct AffineParams {
  Vec3 rotate_rad{0.1, 0.1, 0.1};
  double scale = 0.15;      // factor drawn from [1 - scale, 1 + scale]
  double translate = 5.0;   // voxels, per axis
};
struct ShiftIntensityParams {
  double offset = 0.5;
};
struct AdjustContrastParams {
  double gamma_lo = 0.5;
  double gamma_hi = 1.5;
};
struct GaussianNoiseParams {
  double std = 0.1;
};

using TransformParams = std::variant<CropResizeParams, FlipParams, RotateParams, AffineParams,
                                     ShiftIntensityParams, AdjustContrastParams,
                                     GaussianNoiseParams>;

struct TransformSpec {
  TransformParams params;
  double probability = 1.0;

  std::string_view kind() const;
  friend bool operator==(const TransformSpec& a, const TransformSpec& b);
};

/// Ordered transform list; order is significant.
struct AugmentSpec {
  std::string name;
  std::vector<TransformSpec> transforms;

  /// Throws InvalidArgument for probabilities outside [0, 1] or parameters
  /// outside their documented ranges.
  void validate() const;
  friend bool operator==(const AugmentSpec&, const AugmentSpec&) = default;
};

/// What a random transform decided; filled when a trace pointer is given.
struct TransformTrace {
  bool applied = false;
  std::vector<double> params;
};

VolumeGrid rand_spatial_crop_resize(const VolumeGrid& v, const Shape3& min_size,
                                    const Shape3& out_size, Rng& rng,
                                    TransformTrace* trace = nullptr);
VolumeGrid rand_flip_axial(const VolumeGrid& v, double p, Rng& rng, TransformTrace* trace = nullptr);
VolumeGrid rand_rotate(const VolumeGrid& v, double max_degrees, double p, Rng& rng,
                       TransformTrace* trace = nullptr);
VolumeGrid rand_affine(const VolumeGrid& v, const AffineParams& params, double p, Rng& rng,
                       TransformTrace* trace = nullptr);
VolumeGrid rand_shift_intensity(const VolumeGrid& v, double offset, double p, Rng& rng,
                                TransformTrace* trace = nullptr);
VolumeGrid rand_adjust_contrast(const VolumeGrid& v, double gamma_lo, double gamma_hi, double p,
                                Rng& rng, TransformTrace* trace = nullptr);
VolumeGrid rand_gaussian_noise(const VolumeGrid& v, double std, double p, Rng& rng,
                               TransformTrace* trace = nullptr);

/// Applies one transform, honouring its probability gate.
VolumeGrid apply_transform(const TransformSpec& t, const VolumeGrid& v, Rng& rng,
                           TransformTrace* trace = nullptr);
/// Applies every transform in order; transform i draws from substream i.
VolumeGrid apply(const AugmentSpec& spec, const VolumeGrid& v, const Rng& rng);

/// Crop minimum for `out` obtained by scaling a reference minimum defined at
/// the canonical shape: round(out_i * ref_min_i / canonical_i).
Shape3 scaled_crop_min(const Shape3& reference_min, const Shape3& out);

/// The named stacks: "simclr", "mae_pretrain", "supervised" and "none".
/// Crop minima are scaled from their canonical values when `out` differs
/// from the canonical shape.
AugmentSpec build_pipeline(std::string_view name, const Shape3& out = kCanonicalShape);

struct ViewPair {
  VolumeGrid view_a;
  VolumeGrid view_b;
  std::string source_scan_id;
};

/// Two independent applications of `spec`, drawing from substreams
/// "view_a" and "view_b" of `rng`.
ViewPair make_view_pair(const VolumeGrid& v, const AugmentSpec& spec, const Rng& rng,
                        std::string source_scan_id = {});

/// One line per transform: `kind key=value ... p=probability`.
std::string format_transform(const TransformSpec& t);
TransformSpec parse_transform(std::string_view line);

}  // namespace brainssl
