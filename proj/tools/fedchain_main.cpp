#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedchain/chain.hpp"
#include "fedchain/ctnorm.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/simnet.hpp"

namespace {

using fedchain::ctnorm::CtVolume;
using fedchain::ctnorm::ExtentMm;
using fedchain::ctnorm::LungWindow;
using fedchain::ctnorm::Spacing;

struct NormalizeJob {
  std::string input;
  std::string output;
  std::optional<LungWindow> window;
  std::optional<ExtentMm> extent;
  std::optional<Spacing> spacing;
};

void run_normalize_job(const NormalizeJob& job) {
  if (job.extent.has_value() != job.spacing.has_value()) {
    throw fedchain::InvalidArgument("normalize: --extent and --spacing go together");
  }
  if (!job.window && !job.extent) {
    throw fedchain::InvalidArgument(
        "normalize: need --wl/--ww and/or --extent with --spacing");
  }

  auto read = fedchain::ctnorm::read_ctv1(job.input);
  if (read.clamped_count > 0) {
    std::fprintf(stderr, "%s: clamped %llu voxels into the scanner HU range\n",
                 job.input.c_str(),
                 static_cast<unsigned long long>(read.clamped_count));
  }
  CtVolume volume = std::move(read.volume);

  if (job.extent && job.spacing) {
    volume = fedchain::ctnorm::spatial_resample(volume, *job.extent, *job.spacing);
  }

  if (job.window) {
    auto normalized = fedchain::ctnorm::signal_normalize(volume, *job.window);
    fedchain::ctnorm::write_ctv1(job.output, normalized);
  } else {
    fedchain::ctnorm::write_ctv1(job.output, volume);
  }
  std::printf("%s -> %s\n", job.input.c_str(), job.output.c_str());
}

std::vector<NormalizeJob> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw fedchain::IoError("cannot open manifest: " + path);
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded() || !j.is_array()) {
    throw fedchain::InvalidArgument("manifest must be a JSON array of jobs");
  }
  std::vector<NormalizeJob> jobs;
  for (const auto& item : j) {
    NormalizeJob job;
    job.input = item.at("input").get<std::string>();
    job.output = item.at("output").get<std::string>();
    if (item.contains("wl") && item.contains("ww")) {
      job.window = LungWindow{item.at("wl").get<double>(), item.at("ww").get<double>()};
    }
    if (item.contains("extent")) {
      auto e = item.at("extent");
      job.extent = ExtentMm{e.at(0).get<double>(), e.at(1).get<double>(),
                            e.at(2).get<double>()};
    }
    if (item.contains("spacing")) {
      auto s = item.at("spacing");
      job.spacing = Spacing{s.at(0).get<double>(), s.at(1).get<double>(),
                            s.at(2).get<double>()};
    }
    jobs.push_back(std::move(job));
  }
  return jobs;
}

int cmd_ledger_verify(const std::string& path) {
  std::string reason;
  if (fedchain::chain::verify_ledger_file(path, &reason)) {
    auto ledger = fedchain::chain::Ledger::open(path);
    std::printf("OK: %zu blocks, tip height %llu\n", ledger.blocks().size(),
                static_cast<unsigned long long>(ledger.tip_height()));
    return 0;
  }
  std::fprintf(stderr, "CORRUPT: %s\n", reason.c_str());
  return 1;
}

int cmd_ledger_show(const std::string& path, std::optional<std::uint64_t> height) {
  auto ledger = fedchain::chain::Ledger::open(path);
  if (height) {
    for (const auto& block : ledger.blocks()) {
      if (block.height == *height) {
        std::printf("%s\n", block.to_json().dump(2).c_str());
        return 0;
      }
    }
    std::fprintf(stderr, "no block at height %llu (tip is %llu)\n",
                 static_cast<unsigned long long>(*height),
                 static_cast<unsigned long long>(ledger.tip_height()));
    return 1;
  }
  for (const auto& block : ledger.blocks()) {
    std::printf("height=%llu txs=%zu proposer=%s hash=%s\n",
                static_cast<unsigned long long>(block.height), block.txs.size(),
                block.proposer.c_str(), block.hash.substr(0, 16).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedchain: blockchain-coordinated differentially-private "
               "federated learning simulator"};
  app.require_subcommand(1);

  // --- run ---
  auto* run = app.add_subcommand("run", "Run a federated experiment from a config file");
  std::string config_path;
  run->add_option("--config", config_path, "experiment config (JSON)")->required();

  // --- normalize ---
  auto* normalize = app.add_subcommand("normalize", "Normalize CTV1 volumes");
  std::string in_path, out_path, manifest_path;
  std::vector<double> extent_vals, spacing_vals;
  double wl = 0.0, ww = 0.0;
  normalize->add_option("--input", in_path, "input CTV1 file");
  normalize->add_option("--output", out_path, "output CTV1 file");
  normalize->add_option("--manifest", manifest_path,
                        "JSON manifest with a list of normalize jobs");
  auto* wl_opt = normalize->add_option("--wl", wl, "lung window level (HU)");
  auto* ww_opt = normalize->add_option("--ww", ww, "lung window width (HU)");
  normalize->add_option("--extent", extent_vals, "target extent in mm (x y z)")
      ->expected(3);
  normalize->add_option("--spacing", spacing_vals, "target spacing in mm (sx sy sz)")
      ->expected(3);

  // --- ledger ---
  auto* ledger = app.add_subcommand("ledger", "Inspect or verify a ledger file");
  ledger->require_subcommand(1);
  auto* verify = ledger->add_subcommand("verify", "Recompute and check every link");
  std::string verify_path;
  verify->add_option("file", verify_path, "ledger JSON-lines file")->required();
  auto* show = ledger->add_subcommand("show", "Print blocks");
  std::string show_path;
  std::uint64_t show_height = 0;
  show->add_option("file", show_path, "ledger JSON-lines file")->required();
  auto* height_opt = show->add_option("--height", show_height, "block height to print");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      auto cfg = fedchain::simnet::load_config(config_path);
      fedchain::simnet::run_experiment(cfg);
      std::printf("experiment complete: csv=%s jsonl=%s ledger=%s\n",
                  cfg.csv_path.c_str(), cfg.jsonl_path.c_str(),
                  cfg.ledger_path.c_str());
      return 0;
    }

    if (normalize->parsed()) {
      const bool have_window = wl_opt->count() > 0 || ww_opt->count() > 0;
      if (have_window && (wl_opt->count() == 0 || ww_opt->count() == 0)) {
        throw fedchain::InvalidArgument("normalize: --wl and --ww go together");
      }
      std::vector<NormalizeJob> jobs;
      if (!manifest_path.empty()) {
        jobs = load_manifest(manifest_path);
      } else {
        if (in_path.empty() || out_path.empty()) {
          throw fedchain::InvalidArgument(
              "normalize: need --input and --output (or --manifest)");
        }
        NormalizeJob job;
        job.input = in_path;
        job.output = out_path;
        if (have_window) job.window = LungWindow{wl, ww};
        if (!extent_vals.empty()) {
          job.extent = ExtentMm{extent_vals[0], extent_vals[1], extent_vals[2]};
        }
        if (!spacing_vals.empty()) {
          job.spacing = Spacing{spacing_vals[0], spacing_vals[1], spacing_vals[2]};
        }
        jobs.push_back(std::move(job));
      }
      for (const auto& job : jobs) run_normalize_job(job);
      return 0;
    }

    if (verify->parsed()) return cmd_ledger_verify(verify_path);
    if (show->parsed()) {
      std::optional<std::uint64_t> h;
      if (height_opt->count() > 0) h = show_height;
      return cmd_ledger_show(show_path, h);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
