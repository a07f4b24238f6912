#include "fedchain/ctnorm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedchain/errors.hpp"

namespace fedchain::ctnorm {

namespace {

void check_dims(const Dims& d) {
  if (d.nx == 0 || d.ny == 0 || d.nz == 0) {
    throw InvalidArgument("volume dims must be positive");
  }
}

void check_spacing(const Spacing& s) {
  if (!(s.sx > 0.0) || !(s.sy > 0.0) || !(s.sz > 0.0)) {
    throw InvalidArgument("voxel spacing must be positive");
  }
}

// Near-integer positions snap to the exact grid point so that resampling a
// volume onto its own grid reproduces it bitwise.
constexpr double kGridSnapTol = 1e-9;

struct TapSet {
  bool background = false;
  int first = 0;
  std::vector<double> weights;
};

// Weight table for one axis: output index -> renormalized in-range taps.
std::vector<TapSet> axis_taps(std::uint32_t n_in, double in_spacing,
                              std::uint32_t n_out, double out_spacing) {
  std::vector<TapSet> taps(n_out);
  const int n = static_cast<int>(n_in);
  for (std::uint32_t k = 0; k < n_out; ++k) {
    const double pos_mm = (k + 0.5) * out_spacing;
    const double u = pos_mm / in_spacing - 0.5;
    TapSet& t = taps[k];
    if (u < -0.5 || u > n - 0.5) {
      t.background = true;
      continue;
    }
    const double snapped = std::round(u);
    if (std::abs(u - snapped) < kGridSnapTol) {
      int i = std::clamp(static_cast<int>(snapped), 0, n - 1);
      t.first = i;
      t.weights = {1.0};
      continue;
    }
    int lo = std::max(static_cast<int>(std::floor(u)) - 2, 0);
    int hi = std::min(static_cast<int>(std::floor(u)) + 3, n - 1);
    t.first = lo;
    t.weights.resize(static_cast<std::size_t>(hi - lo + 1));
    double sum = 0.0;
    for (int i = lo; i <= hi; ++i) {
      double w = lanczos3(u - i);
      t.weights[static_cast<std::size_t>(i - lo)] = w;
      sum += w;
    }
    for (double& w : t.weights) w /= sum;
  }
  return taps;
}

// One separable pass along the given stride; `lines` is the scanline count.
void resample_pass(const std::vector<double>& in, std::vector<double>& out,
                   const std::vector<TapSet>& taps, std::size_t out_axis,
                   std::size_t stride, std::size_t line_stride_in,
                   std::size_t line_stride_out, std::size_t lines) {
  for (std::size_t line = 0; line < lines; ++line) {
    // Scanlines along a non-contiguous axis are interleaved: `line` indexes
    // the combined remaining axes via division by the stride block.
    std::size_t base_in = (line / stride) * line_stride_in + (line % stride);
    std::size_t base_out = (line / stride) * line_stride_out + (line % stride);
    for (std::size_t k = 0; k < out_axis; ++k) {
      const TapSet& t = taps[k];
      double v;
      if (t.background) {
        v = kBackgroundHu;
      } else {
        v = 0.0;
        for (std::size_t j = 0; j < t.weights.size(); ++j) {
          v += t.weights[j] * in[base_in + (t.first + j) * stride];
        }
      }
      out[base_out + k * stride] = v;
    }
  }
}

}  // namespace

CtVolume::CtVolume(Dims dims, Spacing spacing, std::vector<float> voxels)
    : dims_(dims), spacing_(spacing), voxels_(std::move(voxels)) {
  check_dims(dims_);
  check_spacing(spacing_);
  if (voxels_.size() != dims_.count()) {
    throw InvalidArgument("voxel payload does not match dims");
  }
  for (float v : voxels_) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite voxel value");
  }
}

CtVolume CtVolume::ingest(Dims dims, Spacing spacing, std::vector<float> raw,
                          std::uint64_t* clamped_count) {
  std::uint64_t clamped = 0;
  for (float& v : raw) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite voxel value on ingest");
    if (v < kHuFloor) {
      v = kHuFloor;
      ++clamped;
    } else if (v > kHuCeil) {
      v = kHuCeil;
      ++clamped;
    }
  }
  if (clamped_count) *clamped_count = clamped;
  return CtVolume(dims, spacing, std::move(raw));
}

NormalizedVolume::NormalizedVolume(Dims dims, Spacing spacing, std::vector<float> voxels)
    : dims_(dims), spacing_(spacing), voxels_(std::move(voxels)) {
  check_dims(dims_);
  if (voxels_.size() != dims_.count()) {
    throw InvalidArgument("voxel payload does not match dims");
  }
  for (float v : voxels_) {
    if (!(v >= -0.5f && v <= 0.5f)) {
      throw InvalidArgument("normalized voxel outside [-0.5, 0.5]");
    }
  }
}

NormalizedVolume signal_normalize(const CtVolume& v, const LungWindow& w) {
  if (!(w.ww > 0.0)) throw InvalidArgument("window width must be positive");
  std::vector<float> out(v.voxels().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = (static_cast<double>(v.voxels()[i]) - w.wl) / w.ww;
    out[i] = static_cast<float>(std::clamp(x, -0.5, 0.5));
  }
  return NormalizedVolume(v.dims(), v.spacing(), std::move(out));
}

double lanczos3(double t) {
  constexpr double a = 3.0;
  double at = std::abs(t);
  if (at >= a) return 0.0;
  double snapped = std::round(t);
  if (std::abs(t - snapped) < kGridSnapTol) {
    return snapped == 0.0 ? 1.0 : 0.0;
  }
  const double pi = std::numbers::pi;
  double px = pi * t;
  return a * std::sin(px) * std::sin(px / a) / (px * px);
}

std::vector<double> resample_line(std::span<const double> values,
                                  std::span<const double> positions,
                                  double background) {
  if (values.empty()) throw InvalidArgument("resample_line: empty input");
  const int n = static_cast<int>(values.size());
  std::vector<double> out(positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const double u = positions[k];
    if (u < -0.5 || u > n - 0.5) {
      out[k] = background;
      continue;
    }
    double snapped = std::round(u);
    if (std::abs(u - snapped) < kGridSnapTol) {
      out[k] = values[static_cast<std::size_t>(std::clamp(
          static_cast<int>(snapped), 0, n - 1))];
      continue;
    }
    int lo = std::max(static_cast<int>(std::floor(u)) - 2, 0);
    int hi = std::min(static_cast<int>(std::floor(u)) + 3, n - 1);
    double sum = 0.0, acc = 0.0;
    for (int i = lo; i <= hi; ++i) {
      double w = lanczos3(u - i);
      acc += w * values[static_cast<std::size_t>(i)];
      sum += w;
    }
    out[k] = acc / sum;
  }
  return out;
}

CtVolume spatial_resample(const CtVolume& v, const ExtentMm& target_extent,
                          const Spacing& target_spacing) {
  if (!(target_extent.x > 0.0) || !(target_extent.y > 0.0) || !(target_extent.z > 0.0)) {
    throw InvalidArgument("target extent must be positive");
  }
  check_spacing(target_spacing);

  Dims out_dims{
      static_cast<std::uint32_t>(std::lround(target_extent.x / target_spacing.sx)),
      static_cast<std::uint32_t>(std::lround(target_extent.y / target_spacing.sy)),
      static_cast<std::uint32_t>(std::lround(target_extent.z / target_spacing.sz)),
  };
  if (out_dims.nx == 0 || out_dims.ny == 0 || out_dims.nz == 0) {
    throw InvalidArgument("target grid has a zero-sized axis");
  }

  const Dims& in = v.dims();
  const Spacing& isp = v.spacing();

  auto tx = axis_taps(in.nx, isp.sx, out_dims.nx, target_spacing.sx);
  auto ty = axis_taps(in.ny, isp.sy, out_dims.ny, target_spacing.sy);
  auto tz = axis_taps(in.nz, isp.sz, out_dims.nz, target_spacing.sz);

  // All arithmetic in double; f32 only at the final store.
  std::vector<double> buf_a(v.voxels().begin(), v.voxels().end());

  // Pass over x: (nx,ny,nz) -> (mx,ny,nz). Lines run along x (stride 1).
  std::vector<double> buf_b(static_cast<std::size_t>(out_dims.nx) * in.ny * in.nz);
  resample_pass(buf_a, buf_b, tx, out_dims.nx, 1, in.nx, out_dims.nx,
                static_cast<std::size_t>(in.ny) * in.nz);

  // Pass over y: (mx,ny,nz) -> (mx,my,nz). Lines along y have stride mx.
  buf_a.assign(static_cast<std::size_t>(out_dims.nx) * out_dims.ny * in.nz, 0.0);
  resample_pass(buf_b, buf_a, ty, out_dims.ny, out_dims.nx,
                static_cast<std::size_t>(out_dims.nx) * in.ny,
                static_cast<std::size_t>(out_dims.nx) * out_dims.ny,
                static_cast<std::size_t>(out_dims.nx) * in.nz);

  // Pass over z: (mx,my,nz) -> (mx,my,mz). Lines along z have stride mx*my.
  buf_b.assign(out_dims.count(), 0.0);
  const std::size_t plane = static_cast<std::size_t>(out_dims.nx) * out_dims.ny;
  resample_pass(buf_a, buf_b, tz, out_dims.nz, plane, plane * in.nz,
                plane * out_dims.nz, plane);

  std::vector<float> out(out_dims.count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Lanczos ringing can overshoot the scanner range; clamp back.
    out[i] = static_cast<float>(
        std::clamp(buf_b[i], static_cast<double>(kHuFloor), static_cast<double>(kHuCeil)));
  }
  return CtVolume(out_dims, target_spacing, std::move(out));
}

Aggregator aggregator_from_name(std::string_view name) {
  if (name == "mean") return Aggregator::kMean;
  if (name == "max") return Aggregator::kMax;
  if (name == "min") return Aggregator::kMin;
  throw InvalidArgument("unknown aggregator: " + std::string(name));
}

ProbMap aggregate_plane_probs(const ProbMap& p_xy, const ProbMap& p_yz,
                              const ProbMap& p_xz, Aggregator g) {
  if (!(p_xy.dims == p_yz.dims) || !(p_xy.dims == p_xz.dims)) {
    throw InvalidArgument("aggregate_plane_probs: dim mismatch");
  }
  const std::size_t n = p_xy.dims.count();
  if (p_xy.values.size() != n || p_yz.values.size() != n || p_xz.values.size() != n) {
    throw InvalidArgument("aggregate_plane_probs: payload size mismatch");
  }
  auto check01 = [](const ProbMap& m) {
    for (float v : m.values) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw InvalidArgument("probability outside [0, 1]");
      }
    }
  };
  check01(p_xy);
  check01(p_yz);
  check01(p_xz);

  ProbMap out{p_xy.dims, std::vector<float>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    double a = p_xy.values[i], b = p_yz.values[i], c = p_xz.values[i];
    double r;
    switch (g) {
      case Aggregator::kMean: r = (a + b + c) / 3.0; break;
      case Aggregator::kMax: r = std::max({a, b, c}); break;
      case Aggregator::kMin: r = std::min({a, b, c}); break;
      default: throw InvalidArgument("unknown aggregator");
    }
    out.values[i] = static_cast<float>(std::clamp(r, 0.0, 1.0));
  }
  return out;
}

}  // namespace fedchain::ctnorm
