#include "brainssl/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "brainssl/error.hpp"

namespace brainssl {

namespace {

constexpr double kHeadRadius[3] = {0.40, 0.42, 0.38};
constexpr double kLesionSiteLimit = 0.7;

double sq(double x) { return x * x; }

std::string padded(std::int64_t i) {
  std::ostringstream s;
  s << std::setw(4) << std::setfill('0') << i;
  return s.str();
}

}  // namespace

SynthSample generate_volume(const Shape3& dims, const SynthFactors& f, const Rng& rng, const SynthStyle& style) {
  for (auto d : dims) {
    if (d < 16) throw InvalidArgument("synthetic volumes need at least 16 voxels per axis, got " + to_string(dims));
  }
  if (!(f.size_factor >= 0.6 && f.size_factor <= 1.0)) throw InvalidArgument("size_factor must lie in [0.6, 1.0]");
  if (f.asymmetry != 0 && f.asymmetry != 1) throw InvalidArgument("asymmetry must be 0 or 1");
  if (f.lesion_count < 0) throw InvalidArgument("lesion_count must be >= 0");

  Rng pose = rng.substream("pose");
  std::array<double, 3> centre{}, radius{}, s_centre{}, s_radius{};
  for (int a = 0; a < 3; ++a) {
    const double n = static_cast<double>(dims[a]);
    centre[a] = 0.5 * n - 0.5 + pose.uniform(-style.jitter_voxels, style.jitter_voxels);
    radius[a] = f.size_factor * kHeadRadius[a] * n;
    s_centre[a] = centre[a];
    s_radius[a] = f.size_factor * style.structure_radius * n;
  }
  const double side = f.asymmetry ? 1.0 : -1.0;
  s_centre[2] += side * f.size_factor * style.structure_offset * static_cast<double>(dims[2]);

  SynthSample out;
  out.factors = f;
  Rng sites = rng.substream("lesions");
  std::vector<double> lesion_sigma;
  for (int k = 0; k < f.lesion_count; ++k) {
    std::array<double, 3> p{};
    double rho2;
    do {
      rho2 = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double u = sites.uniform(-kLesionSiteLimit, kLesionSiteLimit);
        p[a] = centre[a] + u * radius[a];
        rho2 += u * u;
      }
    } while (rho2 > sq(kLesionSiteLimit));
    out.lesion_sites.push_back(p);
    lesion_sigma.push_back(sites.uniform(2.0, 3.0) / 2.0);
  }

  const double edge = (radius[0] + radius[1] + radius[2]) / 3.0;
  VolumeGrid raw(dims);
  for (std::int64_t d = 0; d < dims[0]; ++d) {
    for (std::int64_t h = 0; h < dims[1]; ++h) {
      for (std::int64_t w = 0; w < dims[2]; ++w) {
        const double x[3] = {static_cast<double>(d), static_cast<double>(h), static_cast<double>(w)};
        double rho2 = 0.0, srho2 = 0.0;
        for (int a = 0; a < 3; ++a) {
          rho2 += sq((x[a] - centre[a]) / radius[a]);
          srho2 += sq((x[a] - s_centre[a]) / s_radius[a]);
        }
        const double rho = std::sqrt(rho2);
        if (rho < 1.0) ++out.foreground_voxels;
        // Bright rim, darker core, smooth one-voxel edge.
        double v = (0.7 + 0.3 * rho2) / (1.0 + std::exp((rho - 1.0) * edge));
        if (srho2 < 1.0) v += style.structure_amplitude * sq(1.0 - srho2);
        for (std::size_t k = 0; k < out.lesion_sites.size(); ++k) {
          double dist2 = 0.0;
          for (int a = 0; a < 3; ++a) dist2 += sq(x[a] - out.lesion_sites[k][a]);
          if (dist2 < sq(3.0 * lesion_sigma[k])) {
            v += style.lesion_amplitude * std::exp(-dist2 / (2.0 * sq(lesion_sigma[k])));
          }
        }
        raw.at(d, h, w) = static_cast<float>(v);
      }
    }
  }

  VolumeGrid noisy = raw;
  if (style.contrast_jitter > 0.0) {
    Rng c = Rng(f.noise_seed).substream("contrast");
    const double gamma = std::exp(c.uniform(-style.contrast_jitter, style.contrast_jitter));
    const auto [lo, hi] = std::minmax_element(raw.data().begin(), raw.data().end());
    const double a = *lo, span = *hi - *lo;
    for (auto& v : noisy.data()) v = static_cast<float>(a + span * std::pow((v - a) / span, gamma));
  }
  Rng noise(f.noise_seed);
  for (auto& v : noisy.data()) v += static_cast<float>(style.noise_std * noise.normal());
  out.volume = zscore_normalize(noisy);
  out.raw = std::move(raw);
  return out;
}

SynthFactors patient_factors(std::uint64_t seed, std::int64_t index, int max_lesions) {
  Rng r = Rng(seed).substream("factors").substream(static_cast<std::uint64_t>(index));
  SynthFactors f;
  f.size_factor = r.uniform(0.6, 1.0);
  f.asymmetry = r.bernoulli(0.5) ? 1 : 0;
  f.lesion_count = static_cast<int>(r.uniform_int(0, max_lesions));
  return f;
}

std::filesystem::path generate_dataset(const SynthDatasetOptions& opt, const std::filesystem::path& out_dir) {
  if (opt.patients < 4) throw InvalidArgument("synthetic datasets need at least 4 patients");
  const auto [lo, hi] = opt.scans_per_patient;
  if (lo < 1 || hi < lo) throw InvalidArgument("scans per patient range must satisfy 1 <= lo <= hi");
  if (opt.max_lesions < 0 || opt.max_lesions > kStrokeScaleMax) {
    throw InvalidArgument("max_lesions must lie in [0, " + std::to_string(kStrokeScaleMax) + "]");
  }

  const auto volume_dir = out_dir / "volumes";
  std::error_code ec;
  std::filesystem::create_directories(volume_dir, ec);
  if (ec) throw IoError("cannot create " + volume_dir.string() + ": " + ec.message());

  const Rng root(opt.seed);
  DatasetManifest m;
  for (std::int64_t i = 0; i < opt.patients; ++i) {
    SynthFactors f = patient_factors(opt.seed, i, opt.max_lesions);
    const Rng anatomy = root.substream("anatomy").substream(static_cast<std::uint64_t>(i));
    Rng counts = root.substream("scan_count").substream(static_cast<std::uint64_t>(i));
    const auto n_scans = counts.uniform_int(lo, hi);

    PatientRecord p;
    p.patient_id = "synth-" + padded(i);
    p.labels.sex = f.asymmetry;
    p.labels.age = 100.0 * f.size_factor;
    p.labels.stroke_scale = std::min(f.lesion_count, kStrokeScaleMax);
    for (std::int64_t s = 0; s < n_scans; ++s) {
      f.noise_seed = derive_seed(derive_seed(opt.seed, static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(s));
      const auto sample = generate_volume(opt.dims, f, anatomy, opt.style);
      ScanRecord scan;
      scan.patient_id = p.patient_id;
      scan.scan_id = p.patient_id + "-s" + std::to_string(s);
      scan.uri = volume_dir / (scan.scan_id + ".f32");
      scan.dataset_tag = "synth";
      write_volume(sample.volume, scan.uri);
      p.scans.push_back(std::move(scan));
    }
    m.patients.push_back(std::move(p));
  }
  m = make_splits(m, opt.ratios, opt.seed);
  const auto path = out_dir / "manifest.jsonl";
  save_manifest(m, path);
  return path;
}

}  // namespace brainssl
