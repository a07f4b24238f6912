#include <bit>
#include <cstring>
#include <fstream>

#include "fedchain/ctnorm.hpp"
#include "fedchain/errors.hpp"

namespace fedchain::ctnorm {

namespace {

static_assert(std::endian::native == std::endian::little,
              "CTV1 I/O assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'T', 'V', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void write_header(std::ostream& os, const Dims& d, const Spacing& s) {
  os.write(kMagic, 4);
  put<std::uint32_t>(os, d.nx);
  put<std::uint32_t>(os, d.ny);
  put<std::uint32_t>(os, d.nz);
  put<double>(os, s.sx);
  put<double>(os, s.sy);
  put<double>(os, s.sz);
}

void write_payload(const std::filesystem::path& path, const Dims& dims,
                   const Spacing& spacing, const std::vector<float>& voxels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  write_header(os, dims, spacing);
  os.write(reinterpret_cast<const char*>(voxels.data()),
           static_cast<std::streamsize>(voxels.size() * sizeof(float)));
  if (!os) throw IoError("short write: " + path.string());
}

}  // namespace

Ctv1ReadResult read_ctv1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());

  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a CTV1 file: " + path.string());
  }
  Dims dims{get<std::uint32_t>(is), get<std::uint32_t>(is), get<std::uint32_t>(is)};
  Spacing spacing{get<double>(is), get<double>(is), get<double>(is)};
  if (!is) throw IoError("truncated CTV1 header: " + path.string());
  if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0) {
    throw IoError("CTV1 header has zero dimension: " + path.string());
  }
  const std::size_t n = dims.count();
  // 1 GiB of voxels is far beyond desk scale; treat as corruption.
  if (n > (1ull << 28)) throw IoError("implausible CTV1 dims: " + path.string());

  std::vector<float> voxels(n);
  is.read(reinterpret_cast<char*>(voxels.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (!is || static_cast<std::size_t>(is.gcount()) != n * sizeof(float)) {
    throw IoError("truncated CTV1 payload: " + path.string());
  }

  std::uint64_t clamped = 0;
  CtVolume vol = CtVolume::ingest(dims, spacing, std::move(voxels), &clamped);
  return Ctv1ReadResult{std::move(vol), clamped};
}

void write_ctv1(const std::filesystem::path& path, const CtVolume& v) {
  write_payload(path, v.dims(), v.spacing(), v.voxels());
}

void write_ctv1(const std::filesystem::path& path, const NormalizedVolume& v) {
  write_payload(path, v.dims(), v.spacing(), v.voxels());
}

}  // namespace fedchain::ctnorm
