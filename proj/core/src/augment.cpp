#include "brainssl/augment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "brainssl/error.hpp"

namespace brainssl {

namespace {

struct AxisTaps {
  std::vector<std::int64_t> lo;
  std::vector<std::int64_t> hi;
  std::vector<double> frac;
};

// Half-voxel-centred taps from `out` samples onto [start, start + extent).
AxisTaps make_taps(std::int64_t start, std::int64_t extent, std::int64_t out) {
  AxisTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(extent) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(extent - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    const auto i1 = std::min(i0 + 1, extent - 1);
    t.lo[o] = start + i0;
    t.hi[o] = start + i1;
    t.frac[o] = src - static_cast<double>(i0);
  }
  return t;
}

// Trilinear sample at a continuous index; voxels outside the grid read as 0.
double sample_zero_fill(const VolumeGrid& v, double z, double y, double x) {
  const auto& s = v.shape();
  const double fz = std::floor(z), fy = std::floor(y), fx = std::floor(x);
  const auto z0 = static_cast<std::int64_t>(fz), y0 = static_cast<std::int64_t>(fy),
             x0 = static_cast<std::int64_t>(fx);
  if (z0 < -1 || y0 < -1 || x0 < -1 || z0 >= s[0] || y0 >= s[1] || x0 >= s[2]) return 0.0;
  const double dz = z - fz, dy = y - fy, dx = x - fx;
  double acc = 0.0;
  for (int a = 0; a < 2; ++a) {
    const std::int64_t zi = z0 + a;
    if (zi < 0 || zi >= s[0]) continue;
    const double wz = a ? dz : 1.0 - dz;
    if (wz == 0.0) continue;
    for (int b = 0; b < 2; ++b) {
      const std::int64_t yi = y0 + b;
      if (yi < 0 || yi >= s[1]) continue;
      const double wy = b ? dy : 1.0 - dy;
      if (wy == 0.0) continue;
      for (int c = 0; c < 2; ++c) {
        const std::int64_t xi = x0 + c;
        if (xi < 0 || xi >= s[2]) continue;
        const double wx = c ? dx : 1.0 - dx;
        if (wx == 0.0) continue;
        acc += wz * wy * wx * v.at(zi, yi, xi);
      }
    }
  }
  return acc;
}

Mat3 multiply(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

Mat3 inverse(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (std::abs(det) < 1e-12) throw InvalidArgument("singular affine matrix");
  Mat3 r;
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

void record(TransformTrace* trace, bool applied, std::vector<double> params = {}) {
  if (!trace) return;
  trace->applied = applied;
  trace->params = std::move(params);
}

}  // namespace

VolumeGrid crop_resize(const VolumeGrid& v, const Shape3& start, const Shape3& extent,
                       const Shape3& out) {
  for (int i = 0; i < 3; ++i) {
    if (extent[i] < 1 || start[i] < 0 || start[i] + extent[i] > v.shape()[i] || out[i] < 1) {
      throw InvalidArgument("crop box outside volume " + to_string(v.shape()));
    }
  }
  const AxisTaps tz = make_taps(start[0], extent[0], out[0]);
  const AxisTaps ty = make_taps(start[1], extent[1], out[1]);
  const AxisTaps tx = make_taps(start[2], extent[2], out[2]);
  Spacing3 spacing = v.spacing();
  for (int i = 0; i < 3; ++i) {
    spacing[i] *= static_cast<double>(extent[i]) / static_cast<double>(out[i]);
  }
  VolumeGrid r(out, spacing, v.axis_order());
  auto dst = r.data();
  std::int64_t k = 0;
  for (std::int64_t z = 0; z < out[0]; ++z) {
    const double wz = tz.frac[z];
    for (std::int64_t y = 0; y < out[1]; ++y) {
      const double wy = ty.frac[y];
      const float* p00 = &v.data()[v.index(tz.lo[z], ty.lo[y], 0)];
      const float* p01 = &v.data()[v.index(tz.lo[z], ty.hi[y], 0)];
      const float* p10 = &v.data()[v.index(tz.hi[z], ty.lo[y], 0)];
      const float* p11 = &v.data()[v.index(tz.hi[z], ty.hi[y], 0)];
      for (std::int64_t x = 0; x < out[2]; ++x) {
        const auto x0 = tx.lo[x], x1 = tx.hi[x];
        const double wx = tx.frac[x];
        const double c00 = p00[x0] + wx * (p00[x1] - p00[x0]);
        const double c01 = p01[x0] + wx * (p01[x1] - p01[x0]);
        const double c10 = p10[x0] + wx * (p10[x1] - p10[x0]);
        const double c11 = p11[x0] + wx * (p11[x1] - p11[x0]);
        const double c0 = c00 + wy * (c01 - c00);
        const double c1 = c10 + wy * (c11 - c10);
        dst[k++] = static_cast<float>(c0 + wz * (c1 - c0));
      }
    }
  }
  return r;
}

VolumeGrid resize_trilinear(const VolumeGrid& v, const Shape3& out) {
  if (out == v.shape()) return v;
  return crop_resize(v, {0, 0, 0}, v.shape(), out);
}

VolumeGrid flip(const VolumeGrid& v, int axis) {
  if (axis < 0 || axis > 2) throw InvalidArgument("flip axis must be 0, 1 or 2");
  const auto& s = v.shape();
  VolumeGrid r(s, v.spacing(), v.axis_order());
  for (std::int64_t z = 0; z < s[0]; ++z)
    for (std::int64_t y = 0; y < s[1]; ++y)
      for (std::int64_t x = 0; x < s[2]; ++x) {
        const std::int64_t sz = axis == 0 ? s[0] - 1 - z : z;
        const std::int64_t sy = axis == 1 ? s[1] - 1 - y : y;
        const std::int64_t sx = axis == 2 ? s[2] - 1 - x : x;
        r.at(z, y, x) = v.at(sz, sy, sx);
      }
  return r;
}

Mat3 rotation_matrix(const Vec3& a) {
  const double c0 = std::cos(a[0]), s0 = std::sin(a[0]);
  const double c1 = std::cos(a[1]), s1 = std::sin(a[1]);
  const double c2 = std::cos(a[2]), s2 = std::sin(a[2]);
  // Rotation about stored axis k acts on the plane of the other two axes.
  const Mat3 r0{{{1, 0, 0}, {0, c0, -s0}, {0, s0, c0}}};
  const Mat3 r1{{{c1, 0, s1}, {0, 1, 0}, {-s1, 0, c1}}};
  const Mat3 r2{{{c2, -s2, 0}, {s2, c2, 0}, {0, 0, 1}}};
  return multiply(multiply(r0, r1), r2);
}

VolumeGrid affine_resample(const VolumeGrid& v, const Mat3& a, const Vec3& t) {
  const auto& s = v.shape();
  const Mat3 inv = inverse(a);
  const Vec3 c{(s[0] - 1) / 2.0, (s[1] - 1) / 2.0, (s[2] - 1) / 2.0};
  VolumeGrid r(s, v.spacing(), v.axis_order());
  auto dst = r.data();
  std::int64_t k = 0;
  for (std::int64_t z = 0; z < s[0]; ++z) {
    for (std::int64_t y = 0; y < s[1]; ++y) {
      const double qz = z - c[0] - t[0], qy = y - c[1] - t[1];
      for (std::int64_t x = 0; x < s[2]; ++x) {
        const double qx = x - c[2] - t[2];
        const double sz = inv[0][0] * qz + inv[0][1] * qy + inv[0][2] * qx + c[0];
        const double sy = inv[1][0] * qz + inv[1][1] * qy + inv[1][2] * qx + c[1];
        const double sx = inv[2][0] * qz + inv[2][1] * qy + inv[2][2] * qx + c[2];
        dst[k++] = static_cast<float>(sample_zero_fill(v, sz, sy, sx));
      }
    }
  }
  return r;
}

VolumeGrid rotate(const VolumeGrid& v, const Vec3& angles_rad) {
  if (angles_rad == Vec3{0.0, 0.0, 0.0}) return v;
  return affine_resample(v, rotation_matrix(angles_rad), {0.0, 0.0, 0.0});
}

VolumeGrid shift_intensity(const VolumeGrid& v, double delta) {
  VolumeGrid r = v;
  for (float& x : r.data()) x = static_cast<float>(x + delta);
  return r;
}

VolumeGrid adjust_contrast(const VolumeGrid& v, double gamma) {
  if (!(gamma > 0.0)) throw InvalidArgument("gamma must be > 0");
  const auto data = v.data();
  if (data.empty()) return v;
  const auto [lo_it, hi_it] = std::minmax_element(data.begin(), data.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) return v;
  const double range = hi - lo;
  VolumeGrid r = v;
  for (float& x : r.data()) {
    const double u = (x - lo) / range;
    x = static_cast<float>(std::pow(u, gamma) * range + lo);
  }
  return r;
}

VolumeGrid add_gaussian_noise(const VolumeGrid& v, double std, Rng& rng) {
  if (!(std >= 0.0)) throw InvalidArgument("noise std must be >= 0");
  if (std == 0.0) return v;
  VolumeGrid r = v;
  for (float& x : r.data()) x = static_cast<float>(x + std * rng.normal());
  return r;
}

// ---------------------------------------------------------------------------

VolumeGrid rand_spatial_crop_resize(const VolumeGrid& v, const Shape3& min_size,
                                    const Shape3& out_size, Rng& rng, TransformTrace* trace) {
  const auto& s = v.shape();
  for (int i = 0; i < 3; ++i) {
    if (min_size[i] < 1 || min_size[i] > s[i]) {
      throw InvalidArgument("crop minimum " + to_string(min_size) + " exceeds volume shape " +
                            to_string(s));
    }
  }
  Shape3 extent{}, start{};
  for (int i = 0; i < 3; ++i) extent[i] = rng.uniform_int(min_size[i], s[i]);
  for (int i = 0; i < 3; ++i) start[i] = rng.uniform_int(0, s[i] - extent[i]);
  record(trace, true,
         {double(extent[0]), double(extent[1]), double(extent[2]), double(start[0]),
          double(start[1]), double(start[2])});
  if (extent == s && out_size == s) return v;
  return crop_resize(v, start, extent, out_size);
}

VolumeGrid rand_flip_axial(const VolumeGrid& v, double p, Rng& rng, TransformTrace* trace) {
  const bool apply = rng.bernoulli(p);
  record(trace, apply);
  return apply ? flip(v, kAxialAxis) : v;
}

VolumeGrid rand_rotate(const VolumeGrid& v, double max_degrees, double p, Rng& rng,
                       TransformTrace* trace) {
  const bool apply = rng.bernoulli(p);
  if (!apply) {
    record(trace, false);
    return v;
  }
  const double lim = max_degrees * std::numbers::pi / 180.0;
  Vec3 angles{};
  for (auto& a : angles) a = rng.uniform(-lim, lim);
  record(trace, true, {angles[0], angles[1], angles[2]});
  return rotate(v, angles);
}

VolumeGrid rand_affine(const VolumeGrid& v, const AffineParams& prm, double p, Rng& rng,
                       TransformTrace* trace) {
  const bool apply = rng.bernoulli(p);
  if (!apply) {
    record(trace, false);
    return v;
  }
  Vec3 angles{}, t{};
  for (int i = 0; i < 3; ++i) angles[i] = rng.uniform(-prm.rotate_rad[i], prm.rotate_rad[i]);
  const double scale = 1.0 + rng.uniform(-prm.scale, prm.scale);
  for (auto& x : t) x = rng.uniform(-prm.translate, prm.translate);
  record(trace, true, {angles[0], angles[1], angles[2], scale, t[0], t[1], t[2]});
  Mat3 a = rotation_matrix(angles);
  for (auto& row : a)
    for (auto& e : row) e *= scale;
  return affine_resample(v, a, t);
}

VolumeGrid rand_shift_intensity(const VolumeGrid& v, double offset, double p, Rng& rng,
                                TransformTrace* trace) {
  const bool apply = rng.bernoulli(p);
  if (!apply) {
    record(trace, false);
    return v;
  }
  const double delta = rng.uniform(-offset, offset);
  record(trace, true, {delta});
  return shift_intensity(v, delta);
}

VolumeGrid rand_adjust_contrast(const VolumeGrid& v, double gamma_lo, double gamma_hi, double p,
                                Rng& rng, TransformTrace* trace) {
  const bool apply = rng.bernoulli(p);
  if (!apply) {
    record(trace, false);
    return v;
  }
  const double gamma = rng.uniform(gamma_lo, gamma_hi);
  record(trace, true, {gamma});
  return adjust_contrast(v, gamma);
}

VolumeGrid rand_gaussian_noise(const VolumeGrid& v, double std, double p, Rng& rng,
                               TransformTrace* trace) {
  const bool apply = rng.bernoulli(p);
  record(trace, apply, {std});
  if (!apply) return v;
  return add_gaussian_noise(v, std, rng);
}

// ---------------------------------------------------------------------------

std::string_view TransformSpec::kind() const {
  struct Visitor {
    std::string_view operator()(const CropResizeParams&) const { return "crop_resize"; }
    std::string_view operator()(const FlipParams&) const { return "flip"; }
    std::string_view operator()(const RotateParams&) const { return "rotate"; }
    std::string_view operator()(const AffineParams&) const { return "affine"; }
    std::string_view operator()(const ShiftIntensityParams&) const { return "shift_intensity"; }
    std::string_view operator()(const AdjustContrastParams&) const { return "adjust_contrast"; }
    std::string_view operator()(const GaussianNoiseParams&) const { return "gaussian_noise"; }
  };
  return std::visit(Visitor{}, params);
}

bool operator==(const TransformSpec& a, const TransformSpec& b) {
  return format_transform(a) == format_transform(b);
}

void AugmentSpec::validate() const {
  for (const auto& t : transforms) {
    const std::string k(t.kind());
    if (!(t.probability >= 0.0 && t.probability <= 1.0)) {
      throw InvalidArgument(k + ": probability must lie in [0, 1]");
    }
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          auto fail = [&](const char* what) { throw InvalidArgument(k + ": " + what); };
          if constexpr (std::is_same_v<T, CropResizeParams>) {
            for (int i = 0; i < 3; ++i) {
              if (p.min_size[i] < 1 || p.out_size[i] < 1) fail("sizes must be >= 1");
            }
          } else if constexpr (std::is_same_v<T, FlipParams>) {
            if (p.axis < 0 || p.axis > 2) fail("axis must be 0, 1 or 2");
          } else if constexpr (std::is_same_v<T, RotateParams>) {
            if (!(p.max_degrees >= 0.0 && p.max_degrees <= 180.0)) fail("max_deg must lie in [0, 180]");
          } else if constexpr (std::is_same_v<T, AffineParams>) {
            for (double r : p.rotate_rad) {
              if (!(r >= 0.0 && r <= std::numbers::pi)) fail("rotation range must lie in [0, pi]");
            }
            if (!(p.scale >= 0.0 && p.scale < 1.0)) fail("scale range must lie in [0, 1)");
            if (!(p.translate >= 0.0)) fail("translation range must be >= 0");
          } else if constexpr (std::is_same_v<T, ShiftIntensityParams>) {
            if (!(p.offset >= 0.0)) fail("offset must be >= 0");
          } else if constexpr (std::is_same_v<T, AdjustContrastParams>) {
            if (!(p.gamma_lo > 0.0 && p.gamma_lo <= p.gamma_hi)) fail("gamma range must satisfy 0 < lo <= hi");
          } else if constexpr (std::is_same_v<T, GaussianNoiseParams>) {
            if (!(p.std >= 0.0)) fail("std must be >= 0");
          }
        },
        t.params);
  }
}

VolumeGrid apply_transform(const TransformSpec& t, const VolumeGrid& v, Rng& rng,
                           TransformTrace* trace) {
  return std::visit(
      [&](const auto& p) -> VolumeGrid {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, CropResizeParams>) {
          if (!rng.bernoulli(t.probability)) {
            record(trace, false);
            return resize_trilinear(v, p.out_size);
          }
          return rand_spatial_crop_resize(v, p.min_size, p.out_size, rng, trace);
        } else if constexpr (std::is_same_v<T, FlipParams>) {
          const bool apply = rng.bernoulli(t.probability);
          record(trace, apply);
          return apply ? flip(v, p.axis) : v;
        } else if constexpr (std::is_same_v<T, RotateParams>) {
          return rand_rotate(v, p.max_degrees, t.probability, rng, trace);
        } else if constexpr (std::is_same_v<T, AffineParams>) {
          return rand_affine(v, p, t.probability, rng, trace);
        } else if constexpr (std::is_same_v<T, ShiftIntensityParams>) {
          return rand_shift_intensity(v, p.offset, t.probability, rng, trace);
        } else if constexpr (std::is_same_v<T, AdjustContrastParams>) {
          return rand_adjust_contrast(v, p.gamma_lo, p.gamma_hi, t.probability, rng, trace);
        } else {
          return rand_gaussian_noise(v, p.std, t.probability, rng, trace);
        }
      },
      t.params);
}

VolumeGrid apply(const AugmentSpec& spec, const VolumeGrid& v, const Rng& rng) {
  VolumeGrid cur = v;
  for (std::size_t i = 0; i < spec.transforms.size(); ++i) {
    Rng sub = rng.substream(static_cast<std::uint64_t>(i));
    cur = apply_transform(spec.transforms[i], cur, sub);
  }
  return cur;
}

Shape3 scaled_crop_min(const Shape3& reference_min, const Shape3& out) {
  Shape3 r{};
  for (int i = 0; i < 3; ++i) {
    const double scaled = static_cast<double>(out[i]) * static_cast<double>(reference_min[i]) /
                          static_cast<double>(kCanonicalShape[i]);
    r[i] = std::clamp<std::int64_t>(std::llround(scaled), 1, out[i]);
  }
  return r;
}

AugmentSpec build_pipeline(std::string_view name, const Shape3& out) {
  AugmentSpec s;
  s.name = std::string(name);
  if (name == "simclr") {
    s.transforms = {
        {CropResizeParams{scaled_crop_min({30, 40, 40}, out), out}, 1.0},
        {FlipParams{kAxialAxis}, 0.5},
        {RotateParams{45.0}, 0.5},
        {ShiftIntensityParams{0.5}, 0.8},
        {AdjustContrastParams{0.5, 1.5}, 0.8},
    };
  } else if (name == "mae_pretrain") {
    s.transforms = {
        {CropResizeParams{scaled_crop_min({30, 40, 40}, out), out}, 1.0},
        {FlipParams{kAxialAxis}, 0.5},
    };
  } else if (name == "supervised") {
    double ratio = 0.0;
    for (int i = 0; i < 3; ++i) ratio += static_cast<double>(out[i]) / static_cast<double>(kCanonicalShape[i]);
    ratio /= 3.0;
    s.transforms = {
        {CropResizeParams{scaled_crop_min({90, 115, 115}, out), out}, 1.0},
        {FlipParams{kAxialAxis}, 0.5},
        {AffineParams{{0.1, 0.1, 0.1}, 0.15, 5.0 * ratio}, 0.7},
        {ShiftIntensityParams{0.1}, 0.5},
        {GaussianNoiseParams{0.1}, 0.2},
    };
  } else if (name != "none") {
    throw InvalidArgument("unknown augmentation pipeline '" + std::string(name) + "'");
  }
  return s;
}

ViewPair make_view_pair(const VolumeGrid& v, const AugmentSpec& spec, const Rng& rng,
                        std::string source_scan_id) {
  spec.validate();
  return ViewPair{apply(spec, v, rng.substream("view_a")), apply(spec, v, rng.substream("view_b")),
                  std::move(source_scan_id)};
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

template <typename T, std::size_t N>
std::string fmt_list(const std::array<T, N>& a) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>) {
      s += fmt(a[i]);
    } else {
      s += std::to_string(a[i]);
    }
  }
  return s;
}

double parse_double(std::string_view s, std::string_view key) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw InvalidArgument("bad number '" + std::string(s) + "' for " + std::string(key));
  }
  return v;
}

template <typename T>
std::array<T, 3> parse_triple(std::string_view s, std::string_view key) {
  std::array<T, 3> out{};
  std::size_t i = 0;
  while (true) {
    const auto comma = s.find(',');
    if (i >= 3) throw InvalidArgument("expected three values for " + std::string(key));
    const std::string_view tok = s.substr(0, comma);
    const double v = parse_double(tok, key);
    if constexpr (std::is_integral_v<T>) {
      if (v != std::floor(v)) throw InvalidArgument("expected integers for " + std::string(key));
    }
    out[i++] = static_cast<T>(v);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  if (i != 3) throw InvalidArgument("expected three values for " + std::string(key));
  return out;
}

}  // namespace

std::string format_transform(const TransformSpec& t) {
  std::string s(t.kind());
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, CropResizeParams>) {
          s += " min=" + fmt_list(p.min_size) + " out=" + fmt_list(p.out_size);
        } else if constexpr (std::is_same_v<T, FlipParams>) {
          s += " axis=" + std::to_string(p.axis);
        } else if constexpr (std::is_same_v<T, RotateParams>) {
          s += " max_deg=" + fmt(p.max_degrees);
        } else if constexpr (std::is_same_v<T, AffineParams>) {
          s += " rot=" + fmt_list(p.rotate_rad) + " scale=" + fmt(p.scale) +
               " translate=" + fmt(p.translate);
        } else if constexpr (std::is_same_v<T, ShiftIntensityParams>) {
          s += " offset=" + fmt(p.offset);
        } else if constexpr (std::is_same_v<T, AdjustContrastParams>) {
          s += " gamma=" + fmt(p.gamma_lo) + "," + fmt(p.gamma_hi);
        } else {
          s += " std=" + fmt(p.std);
        }
      },
      t.params);
  s += " p=" + fmt(t.probability);
  return s;
}

TransformSpec parse_transform(std::string_view line) {
  std::istringstream in{std::string(line)};
  std::string kind;
  in >> kind;
  std::vector<std::pair<std::string, std::string>> kv;
  for (std::string tok; in >> tok;) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("expected key=value, got '" + tok + "'");
    kv.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
  }
  TransformSpec t;
  if (kind == "crop_resize") t.params = CropResizeParams{};
  else if (kind == "flip") t.params = FlipParams{};
  else if (kind == "rotate") t.params = RotateParams{};
  else if (kind == "affine") t.params = AffineParams{};
  else if (kind == "shift_intensity") t.params = ShiftIntensityParams{};
  else if (kind == "adjust_contrast") t.params = AdjustContrastParams{};
  else if (kind == "gaussian_noise") t.params = GaussianNoiseParams{};
  else throw InvalidArgument("unknown transform kind '" + kind + "'");

  for (const auto& [k, v] : kv) {
    if (k == "p") {
      t.probability = parse_double(v, k);
      continue;
    }
    bool known = std::visit(
        [&](auto& p) -> bool {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, CropResizeParams>) {
            if (k == "min") return p.min_size = parse_triple<std::int64_t>(v, k), true;
            if (k == "out") return p.out_size = parse_triple<std::int64_t>(v, k), true;
          } else if constexpr (std::is_same_v<T, FlipParams>) {
            if (k == "axis") return p.axis = static_cast<int>(parse_double(v, k)), true;
          } else if constexpr (std::is_same_v<T, RotateParams>) {
            if (k == "max_deg") return p.max_degrees = parse_double(v, k), true;
          } else if constexpr (std::is_same_v<T, AffineParams>) {
            if (k == "rot") return p.rotate_rad = parse_triple<double>(v, k), true;
            if (k == "scale") return p.scale = parse_double(v, k), true;
            if (k == "translate") return p.translate = parse_double(v, k), true;
          } else if constexpr (std::is_same_v<T, ShiftIntensityParams>) {
            if (k == "offset") return p.offset = parse_double(v, k), true;
          } else if constexpr (std::is_same_v<T, AdjustContrastParams>) {
            if (k == "gamma") {
              const auto comma = v.find(',');
              if (comma == std::string::npos) throw InvalidArgument("gamma needs lo,hi");
              p.gamma_lo = parse_double(std::string_view(v).substr(0, comma), k);
              p.gamma_hi = parse_double(std::string_view(v).substr(comma + 1), k);
              return true;
            }
          } else {
            if (k == "std") return p.std = parse_double(v, k), true;
          }
          return false;
        },
        t.params);
    if (!known) throw InvalidArgument("unknown parameter '" + k + "' for " + kind);
  }
  return t;
}

}  // namespace brainssl
