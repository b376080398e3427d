#include "brainssl/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "brainssl/error.hpp"

namespace brainssl {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "volume payloads are little-endian; add byte swapping for this target");

std::string to_string(const Shape3& s) {
  std::ostringstream os;
  os << "(" << s[0] << "," << s[1] << "," << s[2] << ")";
  return os.str();
}

VolumeGrid::VolumeGrid(Shape3 shape, Spacing3 spacing, std::string axis_order)
    : shape_(shape), spacing_(spacing), axis_order_(std::move(axis_order)) {
  for (auto e : shape_) {
    if (e < 1) throw InvalidArgument("volume extent must be >= 1, got " + to_string(shape_));
  }
  data_.assign(static_cast<std::size_t>(numel(shape_)), 0.0f);
  validate();
}

VolumeGrid::VolumeGrid(Shape3 shape, std::vector<float> data, Spacing3 spacing,
                       std::string axis_order)
    : shape_(shape), spacing_(spacing), axis_order_(std::move(axis_order)), data_(std::move(data)) {
  for (auto e : shape_) {
    if (e < 1) throw InvalidArgument("volume extent must be >= 1, got " + to_string(shape_));
  }
  if (static_cast<std::int64_t>(data_.size()) != numel(shape_)) {
    throw InvalidArgument("payload has " + std::to_string(data_.size()) + " values but shape " +
                          to_string(shape_) + " needs " + std::to_string(numel(shape_)));
  }
  validate();
}

void VolumeGrid::validate() const {
  for (auto e : shape_) {
    if (e < 1) throw InvalidArgument("volume extent must be >= 1, got " + to_string(shape_));
  }
  for (auto s : spacing_) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("voxel spacing must be > 0");
  }
  if (static_cast<std::int64_t>(data_.size()) != numel(shape_)) {
    throw InvalidArgument("payload length does not match shape");
  }
  for (float x : data_) {
    if (!std::isfinite(x)) throw InvalidArgument("volume contains non-finite intensities");
  }
}

bool operator==(const VolumeGrid& a, const VolumeGrid& b) {
  return a.shape_ == b.shape_ && a.spacing_ == b.spacing_ && a.axis_order_ == b.axis_order_ &&
         a.data_.size() == b.data_.size() &&
         std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
}

fs::path sidecar_path(const fs::path& uri) {
  fs::path p = uri;
  p += ".json";
  return p;
}

namespace {

bool has_extension(const fs::path& p, std::string_view ext) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

void write_file_atomically(const fs::path& dest, const char* bytes, std::size_t n) {
  fs::path tmp = dest;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes, static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, dest, ec);
  if (ec) throw IoError("cannot replace " + dest.string() + ": " + ec.message());
}

}  // namespace

VolumeGrid read_volume(const fs::path& uri) {
  if (has_extension(uri, ".nii")) return read_nifti(uri);
  if (!fs::exists(uri)) throw IoError("volume not found: " + uri.string());
  const auto side = sidecar_path(uri);
  if (!fs::exists(side)) throw IoError("volume sidecar not found: " + side.string());

  json meta;
  {
    std::ifstream in(side);
    if (!in) throw IoError("cannot open " + side.string());
    try {
      meta = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError("malformed sidecar " + side.string() + ": " + e.what());
    }
  }
  Shape3 shape{};
  Spacing3 spacing{};
  std::string axis_order;
  try {
    const auto& js = meta.at("shape");
    const auto& jp = meta.at("spacing");
    if (!js.is_array() || js.size() != 3 || !jp.is_array() || jp.size() != 3) {
      throw FormatError("sidecar shape and spacing must have three entries");
    }
    for (int i = 0; i < 3; ++i) {
      shape[i] = js[i].get<std::int64_t>();
      spacing[i] = jp[i].get<double>();
    }
    axis_order = meta.at("axis_order").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError("malformed sidecar " + side.string() + ": " + e.what());
  }
  for (auto e : shape) {
    if (e < 1) throw FormatError("sidecar shape entries must be >= 1 in " + side.string());
  }

  const auto bytes = fs::file_size(uri);
  const auto expected = static_cast<std::uintmax_t>(numel(shape)) * sizeof(float);
  if (bytes != expected) {
    throw FormatError("payload " + uri.string() + " holds " + std::to_string(bytes / sizeof(float)) +
                      " values but sidecar shape " + to_string(shape) + " declares " +
                      std::to_string(numel(shape)));
  }
  std::vector<float> data(static_cast<std::size_t>(numel(shape)));
  std::ifstream in(uri, std::ios::binary);
  if (!in) throw IoError("cannot open " + uri.string());
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(expected));
  if (!in) throw IoError("short read on " + uri.string());

  VolumeGrid v(shape, std::move(data), spacing, std::move(axis_order));
  try {
    v.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(uri.string() + ": " + e.what());
  }
  return v;
}

void write_volume(const VolumeGrid& v, const fs::path& uri) {
  if (uri.has_parent_path() && !fs::exists(uri.parent_path())) {
    throw IoError("directory does not exist: " + uri.parent_path().string());
  }
  json meta;
  meta["shape"] = {v.shape()[0], v.shape()[1], v.shape()[2]};
  meta["spacing"] = {v.spacing()[0], v.spacing()[1], v.spacing()[2]};
  meta["axis_order"] = v.axis_order();
  meta["dtype"] = "float32";
  meta["byte_order"] = "little";
  const auto payload = v.data();
  write_file_atomically(uri, reinterpret_cast<const char*>(payload.data()),
                        payload.size() * sizeof(float));
  const std::string text = meta.dump(2) + "\n";
  write_file_atomically(sidecar_path(uri), text.data(), text.size());
}

VolumeGrid permute_depth_first(const VolumeGrid& v) {
  const std::string& order = v.axis_order();
  std::string sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (order.size() != 3 || sorted != "DHW") {
    throw InvalidArgument("unknown axis-order annotation '" + order + "'");
  }
  if (order == kDepthFirst) return v;

  // src[j] = stored axis holding anatomical axis "DHW"[j].
  std::array<int, 3> src{};
  for (int j = 0; j < 3; ++j) src[j] = static_cast<int>(order.find(kDepthFirst[j]));

  const Shape3& in = v.shape();
  Shape3 out_shape{in[src[0]], in[src[1]], in[src[2]]};
  Spacing3 out_spacing{v.spacing()[src[0]], v.spacing()[src[1]], v.spacing()[src[2]]};
  std::array<std::int64_t, 3> in_stride{in[1] * in[2], in[2], 1};
  const std::int64_t s0 = in_stride[src[0]], s1 = in_stride[src[1]], s2 = in_stride[src[2]];

  VolumeGrid out(out_shape, out_spacing, kDepthFirst);
  auto src_data = v.data();
  auto dst = out.data();
  std::int64_t k = 0;
  for (std::int64_t a = 0; a < out_shape[0]; ++a)
    for (std::int64_t b = 0; b < out_shape[1]; ++b)
      for (std::int64_t c = 0; c < out_shape[2]; ++c) dst[k++] = src_data[a * s0 + b * s1 + c * s2];
  return out;
}

Shape3 center_crop_offsets(const Shape3& shape, const Shape3& target) {
  Shape3 off{};
  for (int i = 0; i < 3; ++i) {
    if (target[i] < 1 || target[i] > shape[i]) {
      throw InvalidArgument("crop target " + to_string(target) + " exceeds volume shape " +
                            to_string(shape));
    }
    off[i] = (shape[i] - target[i]) / 2;
  }
  return off;
}

VolumeGrid center_crop(const VolumeGrid& v, const Shape3& target) {
  const Shape3 off = center_crop_offsets(v.shape(), target);
  VolumeGrid out(target, v.spacing(), v.axis_order());
  for (std::int64_t d = 0; d < target[0]; ++d)
    for (std::int64_t h = 0; h < target[1]; ++h) {
      const float* row = &v.data()[v.index(d + off[0], h + off[1], off[2])];
      std::copy(row, row + target[2], &out.at(d, h, 0));
    }
  return out;
}

VolumeGrid zscore_normalize(const VolumeGrid& v, double eps) {
  const auto data = v.data();
  if (data.empty()) throw DegenerateInput("cannot normalise an empty volume");
  double sum = 0.0;
  for (float x : data) sum += x;
  const double mean = sum / static_cast<double>(data.size());
  double sq = 0.0;
  for (float x : data) {
    const double d = x - mean;
    sq += d * d;
  }
  const double sd = std::sqrt(sq / static_cast<double>(data.size()));
  if (!(sd >= eps)) {
    throw DegenerateInput("constant volume: standard deviation " + std::to_string(sd) +
                          " below epsilon");
  }
  VolumeGrid out(v.shape(), v.spacing(), v.axis_order());
  auto dst = out.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    dst[i] = static_cast<float>((data[i] - mean) / sd);
  }
  return out;
}

VolumeGrid preprocess(const VolumeGrid& v, const Shape3& target) {
  return zscore_normalize(center_crop(permute_depth_first(v), target));
}

}  // namespace brainssl
