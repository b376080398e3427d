#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace brainssl {

/// Extent per stored axis, slowest-varying first.
using Shape3 = std::array<std::int64_t, 3>;
/// Voxel spacing in millimetres per stored axis.
using Spacing3 = std::array<double, 3>;

inline std::int64_t numel(const Shape3& s) { return s[0] * s[1] * s[2]; }
std::string to_string(const Shape3& s);

/// Axis-order annotation for the canonical model layout.
inline constexpr const char* kDepthFirst = "DHW";

/// Dense 3D scalar field in row-major order (first axis slowest). The
/// axis-order annotation names which anatomical axis each stored axis is:
/// D (depth / axial), H (height) and W (width).
class VolumeGrid {
 public:
  VolumeGrid() = default;
  /// Zero-filled grid.
  explicit VolumeGrid(Shape3 shape, Spacing3 spacing = {1.0, 1.0, 1.0},
                      std::string axis_order = kDepthFirst);
  /// Takes ownership of `data`; throws InvalidArgument if the length does not
  /// match the shape or any invariant fails.
  VolumeGrid(Shape3 shape, std::vector<float> data, Spacing3 spacing = {1.0, 1.0, 1.0},
             std::string axis_order = kDepthFirst);

  const Shape3& shape() const { return shape_; }
  const Spacing3& spacing() const { return spacing_; }
  const std::string& axis_order() const { return axis_order_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }

  std::int64_t index(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return (d * shape_[1] + h) * shape_[2] + w;
  }
  float& at(std::int64_t d, std::int64_t h, std::int64_t w) { return data_[index(d, h, w)]; }
  float at(std::int64_t d, std::int64_t h, std::int64_t w) const { return data_[index(d, h, w)]; }

  void set_spacing(const Spacing3& s) { spacing_ = s; }
  void set_axis_order(std::string order) { axis_order_ = std::move(order); }

  /// Throws InvalidArgument when an entry is non-finite, an extent is < 1 or
  /// a spacing is <= 0.
  void validate() const;

  /// Bitwise comparison of payload plus metadata.
  friend bool operator==(const VolumeGrid& a, const VolumeGrid& b);

 private:
  Shape3 shape_{0, 0, 0};
  Spacing3 spacing_{1.0, 1.0, 1.0};
  std::string axis_order_ = kDepthFirst;
  std::vector<float> data_;
};

/// Reads a volume. `.nii` files go through the NIfTI-1 adapter; anything
/// else is a little-endian float32 payload with a `<uri>.json` sidecar
/// holding {shape, spacing, axis_order}.
VolumeGrid read_volume(const std::filesystem::path& uri);

/// Writes payload and sidecar, replacing existing files.
void write_volume(const VolumeGrid& v, const std::filesystem::path& uri);

std::filesystem::path sidecar_path(const std::filesystem::path& uri);

/// Reads an uncompressed NIfTI-1 file. The axis-order annotation is derived
/// from the qform/sform orientation (superior-inferior -> D,
/// anterior-posterior -> H, left-right -> W) and is "unknown" when the file
/// carries no orientation.
VolumeGrid read_nifti(const std::filesystem::path& path);

/// Reorders axes so the stored order becomes D,H,W. Throws InvalidArgument
/// for an annotation that is not a permutation of "DHW".
VolumeGrid permute_depth_first(const VolumeGrid& v);

/// Per-axis start offsets floor((shape - target) / 2).
Shape3 center_crop_offsets(const Shape3& shape, const Shape3& target);
VolumeGrid center_crop(const VolumeGrid& v, const Shape3& target);

inline constexpr double kZScoreEpsilon = 1e-8;

/// Standardises to mean 0 and population standard deviation 1 over all
/// voxels. Throws DegenerateInput when std < eps.
VolumeGrid zscore_normalize(const VolumeGrid& v, double eps = kZScoreEpsilon);

/// Post-registration preprocessing in its fixed order: permute to depth
/// first, center crop to `target`, z-score.
VolumeGrid preprocess(const VolumeGrid& v, const Shape3& target);

}  // namespace brainssl
