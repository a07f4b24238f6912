#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fedchain/ctnorm.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/rng.hpp"
#include "fedchain/simnet.hpp"

namespace fedchain::simnet {

capsnet::LabeledDataset make_blobs(std::size_t n, std::size_t dim,
                                   double separation, RngStream& rng) {
  if (n == 0 || dim == 0) throw InvalidArgument("make_blobs: empty spec");
  capsnet::LabeledDataset d;
  d.feature_dim = dim;
  d.x.resize(n * dim);
  d.y.resize(n);

  // Class centers at +-(separation/2) along the unit diagonal.
  const double offset = separation / (2.0 * std::sqrt(static_cast<double>(dim)));
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t label = static_cast<std::uint32_t>(i % 2);
    const double center = label == 0 ? -offset : offset;
    for (std::size_t c = 0; c < dim; ++c) {
      d.x[i * dim + c] = center + rng.next_gaussian();
    }
    d.y[i] = label;
  }
  return d;
}

capsnet::LabeledDataset make_lesion_images(std::size_t n, std::size_t image_size,
                                           RngStream& rng) {
  if (n == 0 || image_size < 8) {
    throw InvalidArgument("make_lesion_images: image_size must be >= 8");
  }
  capsnet::LabeledDataset d;
  const std::size_t pixels = image_size * image_size;
  d.feature_dim = pixels;
  d.x.resize(n * pixels);
  d.y.resize(n);

  const double radius = static_cast<double>(image_size) / 5.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t label = static_cast<std::uint32_t>(i % 2);
    double* img = d.x.data() + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) {
      img[p] = 0.1 * std::abs(rng.next_gaussian());
    }
    if (label == 1) {
      // A bright circular opacity somewhere inside the parenchyma margin.
      const double margin = radius + 1.0;
      const double cx = margin + rng.next_double() * (image_size - 2.0 * margin);
      const double cy = margin + rng.next_double() * (image_size - 2.0 * margin);
      for (std::size_t y = 0; y < image_size; ++y) {
        for (std::size_t x = 0; x < image_size; ++x) {
          const double dx = static_cast<double>(x) - cx;
          const double dy = static_cast<double>(y) - cy;
          if (dx * dx + dy * dy <= radius * radius) {
            img[y * image_size + x] += 0.8 + 0.1 * rng.next_gaussian();
          }
        }
      }
    }
    for (std::size_t p = 0; p < pixels; ++p) img[p] = std::clamp(img[p], 0.0, 1.0);
    d.y[i] = label;
  }
  return d;
}

capsnet::LabeledDataset load_ctv_manifest(const std::filesystem::path& manifest_path,
                                          std::size_t image_size,
                                          const ctnorm::LungWindow& default_window) {
  if (image_size < 4) throw InvalidArgument("load_ctv_manifest: image_size too small");
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open dataset manifest: " + manifest_path.string());
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded() || !j.is_array() || j.empty()) {
    throw InvalidArgument("dataset manifest must be a non-empty JSON array");
  }

  const auto base = manifest_path.parent_path();
  const std::size_t pixels = image_size * image_size;

  capsnet::LabeledDataset d;
  d.feature_dim = pixels;
  d.x.reserve(j.size() * pixels);
  d.y.reserve(j.size());

  for (const auto& entry : j) {
    std::filesystem::path vol_path = entry.at("volume").get<std::string>();
    if (vol_path.is_relative()) vol_path = base / vol_path;

    ctnorm::LungWindow window = default_window;
    if (entry.contains("wl")) window.wl = entry.at("wl").get<double>();
    if (entry.contains("ww")) window.ww = entry.at("ww").get<double>();

    auto read = ctnorm::read_ctv1(vol_path);
    auto extent = read.volume.extent_mm();
    // one axial slab: square in-plane grid, the z axis collapsed
    ctnorm::Spacing spacing{extent.x / static_cast<double>(image_size),
                            extent.y / static_cast<double>(image_size), extent.z};
    auto slab = ctnorm::spatial_resample(read.volume, extent, spacing);
    auto norm = ctnorm::signal_normalize(slab, window);

    for (float v : norm.voxels()) d.x.push_back(static_cast<double>(v) + 0.5);
    d.y.push_back(entry.at("label").get<std::uint32_t>());
  }
  return d;
}

std::vector<capsnet::LabeledDataset> partition_dataset(
    const capsnet::LabeledDataset& dataset, std::size_t n_hospitals,
    PartitionScheme scheme, std::span<const double> ratios, std::uint64_t seed) {
  if (n_hospitals == 0) throw InvalidArgument("partition_dataset: n_hospitals == 0");
  if (dataset.size() < n_hospitals) {
    throw InvalidArgument("partition_dataset: fewer samples than hospitals");
  }

  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng = RngStream(seed).derive("partition");
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng.next_below(i);
    std::swap(order[i - 1], order[j]);
  }

  std::vector<std::size_t> sizes(n_hospitals, 0);
  if (scheme == PartitionScheme::kIidEqual) {
    const std::size_t base = n / n_hospitals;
    const std::size_t extra = n % n_hospitals;
    for (std::size_t h = 0; h < n_hospitals; ++h) {
      sizes[h] = base + (h < extra ? 1 : 0);
    }
  } else {
    if (ratios.size() != n_hospitals) {
      throw InvalidArgument("partition_dataset: need one ratio per hospital");
    }
    double total = 0.0;
    for (double r : ratios) {
      if (!(r > 0.0)) throw InvalidArgument("partition_dataset: ratios must be positive");
      total += r;
    }
    std::size_t assigned = 0;
    for (std::size_t h = 0; h < n_hospitals; ++h) {
      sizes[h] = static_cast<std::size_t>(
          std::floor(static_cast<double>(n) * ratios[h] / total));
      assigned += sizes[h];
    }
    for (std::size_t h = 0; assigned < n; h = (h + 1) % n_hospitals) {
      ++sizes[h];
      ++assigned;
    }
    for (std::size_t h = 0; h < n_hospitals; ++h) {
      if (sizes[h] == 0) throw InvalidArgument("partition_dataset: a partition is empty");
    }
  }

  std::vector<capsnet::LabeledDataset> parts(n_hospitals);
  std::size_t cursor = 0;
  for (std::size_t h = 0; h < n_hospitals; ++h) {
    capsnet::LabeledDataset& p = parts[h];
    p.feature_dim = dataset.feature_dim;
    p.x.reserve(sizes[h] * dataset.feature_dim);
    p.y.reserve(sizes[h]);
    for (std::size_t k = 0; k < sizes[h]; ++k, ++cursor) {
      auto row = dataset.sample(order[cursor]);
      p.x.insert(p.x.end(), row.begin(), row.end());
      p.y.push_back(dataset.y[order[cursor]]);
    }
  }
  return parts;
}

}  // namespace fedchain::simnet
