#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "brainssl/error.hpp"
#include "brainssl/volume.hpp"

namespace brainssl {

namespace {

constexpr std::size_t kHeaderSize = 348;

class HeaderView {
 public:
  HeaderView(const std::array<char, kHeaderSize>& raw, bool swap) : raw_(raw), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    std::array<char, sizeof(T)> b;
    std::memcpy(b.data(), raw_.data() + offset, sizeof(T));
    if (swap_) std::reverse(b.begin(), b.end());
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
  }

 private:
  const std::array<char, kHeaderSize>& raw_;
  bool swap_;
};

template <typename T>
void convert(const std::vector<char>& bytes, bool swap, std::vector<float>& out, double slope,
             double inter) {
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::array<char, sizeof(T)> b;
    std::memcpy(b.data(), bytes.data() + i * sizeof(T), sizeof(T));
    if (swap) std::reverse(b.begin(), b.end());
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    out[i] = static_cast<float>(static_cast<double>(v) * slope + inter);
  }
}

// Anatomical letter of the world axis that dominates a voxel-axis column.
char dominant_axis(double x, double y, double z) {
  const double ax = std::abs(x), ay = std::abs(y), az = std::abs(z);
  if (ax > ay && ax > az) return 'W';
  if (ay > ax && ay > az) return 'H';
  if (az > ax && az > ay) return 'D';
  return '?';
}

std::string orientation(const HeaderView& h) {
  std::array<std::array<double, 3>, 3> r{};  // r[row][voxel axis]
  const short sform = h.get<short>(254);
  const short qform = h.get<short>(252);
  if (sform > 0) {
    for (int row = 0; row < 3; ++row)
      for (int c = 0; c < 3; ++c) r[row][c] = h.get<float>(280 + 16 * row + 4 * c);
  } else if (qform > 0) {
    const double b = h.get<float>(256), c = h.get<float>(260), d = h.get<float>(264);
    const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
    const double qfac = h.get<float>(76) < 0 ? -1.0 : 1.0;
    r = {{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c) * qfac},
          {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b) * qfac},
          {2 * (b * d - a * c), 2 * (c * d + a * b), (a * a + d * d - c * c - b * b) * qfac}}};
  } else {
    return "unknown";
  }
  std::string order(3, '?');
  // Stored axis 0 is the slowest NIfTI axis (k), axis 2 the fastest (i).
  for (int stored = 0; stored < 3; ++stored) {
    const int col = 2 - stored;
    order[stored] = dominant_axis(r[0][col], r[1][col], r[2][col]);
  }
  std::string sorted = order;
  std::sort(sorted.begin(), sorted.end());
  return sorted == "DHW" ? order : "unknown";
}

}  // namespace

VolumeGrid read_nifti(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("volume not found: " + path.string());
  std::array<char, kHeaderSize> raw{};
  in.read(raw.data(), kHeaderSize);
  if (!in) throw FormatError("truncated NIfTI header in " + path.string());

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, raw.data(), 4);
  bool swap = false;
  if (sizeof_hdr != 348) {
    std::reverse(raw.begin(), raw.begin() + 4);
    std::memcpy(&sizeof_hdr, raw.data(), 4);
    std::reverse(raw.begin(), raw.begin() + 4);
    if (sizeof_hdr != 348) throw FormatError("not a NIfTI-1 file: " + path.string());
    swap = true;
  }
  if (std::memcmp(raw.data() + 344, "n+1", 4) != 0) {
    throw FormatError("only single-file NIfTI-1 (n+1) is supported: " + path.string());
  }
  const HeaderView h(raw, swap);

  const short ndim = h.get<short>(40);
  if (ndim < 3 || ndim > 7) throw FormatError("NIfTI dim[0] out of range in " + path.string());
  for (int i = 4; i <= ndim; ++i) {
    if (h.get<short>(40 + 2 * i) > 1) {
      throw FormatError("only 3D NIfTI volumes are supported: " + path.string());
    }
  }
  const std::int64_t nx = h.get<short>(42), ny = h.get<short>(44), nz = h.get<short>(46);
  if (nx < 1 || ny < 1 || nz < 1) throw FormatError("non-positive NIfTI dims in " + path.string());
  Shape3 shape{nz, ny, nx};
  Spacing3 spacing{std::abs(h.get<float>(88)), std::abs(h.get<float>(84)),
                   std::abs(h.get<float>(80))};
  for (auto& s : spacing) {
    if (!(s > 0.0)) s = 1.0;
  }

  const short datatype = h.get<short>(70);
  const auto vox_offset = static_cast<std::streamoff>(h.get<float>(108));
  double slope = h.get<float>(112);
  double inter = h.get<float>(116);
  if (slope == 0.0 || !std::isfinite(slope)) {
    slope = 1.0;
    inter = 0.0;
  }
  if (!std::isfinite(inter)) inter = 0.0;

  std::size_t width = 0;
  switch (datatype) {
    case 2: case 256: width = 1; break;
    case 4: case 512: width = 2; break;
    case 8: case 16: case 768: width = 4; break;
    case 64: width = 8; break;
    default:
      throw FormatError("unsupported NIfTI datatype " + std::to_string(datatype) + " in " +
                        path.string());
  }
  const auto n = static_cast<std::size_t>(numel(shape));
  std::vector<char> bytes(n * width);
  in.seekg(std::max<std::streamoff>(vox_offset, kHeaderSize));
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!in) {
    throw FormatError("NIfTI payload shorter than dims " + to_string(shape) + " in " +
                      path.string());
  }

  std::vector<float> data(n);
  switch (datatype) {
    case 2: convert<std::uint8_t>(bytes, swap, data, slope, inter); break;
    case 256: convert<std::int8_t>(bytes, swap, data, slope, inter); break;
    case 4: convert<std::int16_t>(bytes, swap, data, slope, inter); break;
    case 512: convert<std::uint16_t>(bytes, swap, data, slope, inter); break;
    case 8: convert<std::int32_t>(bytes, swap, data, slope, inter); break;
    case 768: convert<std::uint32_t>(bytes, swap, data, slope, inter); break;
    case 16: convert<float>(bytes, swap, data, slope, inter); break;
    case 64: convert<double>(bytes, swap, data, slope, inter); break;
  }

  VolumeGrid v(shape, std::move(data), spacing, orientation(h));
  try {
    v.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return v;
}

}  // namespace brainssl
