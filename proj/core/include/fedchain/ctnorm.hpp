#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace fedchain::ctnorm {

// Representable scanner range; raw values outside are clamped on ingest.
inline constexpr float kHuFloor = -1024.0f;
inline constexpr float kHuCeil = 3071.0f;
inline constexpr float kBackgroundHu = -1024.0f;

struct Dims {
  std::uint32_t nx = 0;
  std::uint32_t ny = 0;
  std::uint32_t nz = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(nx) * ny * nz;
  }
  bool operator==(const Dims&) const = default;
};

struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;
};

struct ExtentMm {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// 3D Hounsfield-unit voxel grid with physical spacing, x-fastest ordering.
/// The grid is cell-centered: voxel (i,j,k) sits at ((i+0.5)sx, (j+0.5)sy,
/// (k+0.5)sz) and the volume spans dims*spacing millimetres.
class CtVolume {
 public:
  CtVolume(Dims dims, Spacing spacing, std::vector<float> voxels);

  // Clamps raw values into [kHuFloor, kHuCeil]; the clamp count is reported
  // through `clamped_count` when provided.
  static CtVolume ingest(Dims dims, Spacing spacing, std::vector<float> raw,
                         std::uint64_t* clamped_count = nullptr);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  const std::vector<float>& voxels() const { return voxels_; }

  float at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    return voxels_[static_cast<std::size_t>(z) * dims_.nx * dims_.ny +
                   static_cast<std::size_t>(y) * dims_.nx + x];
  }

  ExtentMm extent_mm() const {
    return {dims_.nx * spacing_.sx, dims_.ny * spacing_.sy, dims_.nz * spacing_.sz};
  }

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<float> voxels_;
};

struct LungWindow {
  double wl = -600.0;  // window level, HU
  double ww = 1200.0;  // window width, HU; must be > 0
};

/// Signal-normalized volume; every voxel lies in [-0.5, 0.5].
class NormalizedVolume {
 public:
  NormalizedVolume(Dims dims, Spacing spacing, std::vector<float> voxels);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  const std::vector<float>& voxels() const { return voxels_; }

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<float> voxels_;
};

// Per-voxel clamp((I - WL)/WW, -0.5, +0.5).
NormalizedVolume signal_normalize(const CtVolume& v, const LungWindow& w);

// Separable Lanczos-3 resampling onto round(extent/spacing) voxels per axis.
// Output voxels whose centers fall outside the source field are background.
CtVolume spatial_resample(const CtVolume& v, const ExtentMm& target_extent,
                          const Spacing& target_spacing);

enum class Aggregator { kMean, kMax, kMin };

Aggregator aggregator_from_name(std::string_view name);

struct ProbMap {
  Dims dims;
  std::vector<float> values;  // each in [0, 1]
};

// Per-voxel g(p_xy, p_yz, p_xz) over three same-shaped probability maps.
ProbMap aggregate_plane_probs(const ProbMap& p_xy, const ProbMap& p_yz,
                              const ProbMap& p_xz, Aggregator g);

// Lanczos kernel, a = 3. Exact 1 at t = 0 and exact 0 at other integers.
double lanczos3(double t);

// Resamples one scanline at fractional index positions. Kernel taps falling
// off the line are dropped and the remaining weights renormalized; positions
// outside [-0.5, n-0.5] yield `background`.
std::vector<double> resample_line(std::span<const double> values,
                                  std::span<const double> positions,
                                  double background = kBackgroundHu);

// --- CTV1 volume file format (little-endian) ---
// magic "CTV1" | u32 nx,ny,nz | f64 sx,sy,sz | f32 voxels, x-fastest.

struct Ctv1ReadResult {
  CtVolume volume;
  std::uint64_t clamped_count = 0;
};

Ctv1ReadResult read_ctv1(const std::filesystem::path& path);
void write_ctv1(const std::filesystem::path& path, const CtVolume& v);
void write_ctv1(const std::filesystem::path& path, const NormalizedVolume& v);

}  // namespace fedchain::ctnorm
