#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedchain/capsnet.hpp"
#include "fedchain/chain.hpp"
#include "fedchain/ctnorm.hpp"
#include "fedchain/feddp.hpp"

namespace fedchain::simnet {

enum class PartitionScheme { kIidEqual, kSizeSkewed };

PartitionScheme partition_scheme_from_name(std::string_view name);

struct DatasetSpec {
  std::string kind = "blobs";  // "blobs" | "lesion-images" | "ctv-manifest"
  std::size_t train_samples = 300;
  std::size_t validation_samples = 60;  // shared consensus validation set
  std::size_t test_samples = 100;       // held-out reporting set
  std::size_t dim = 16;                 // blobs
  double separation = 4.0;              // blob center distance
  std::size_t image_size = 16;          // lesion images / CT slices, square
  std::string manifest_path;            // ctv-manifest: labeled CTV1 volumes
  ctnorm::LungWindow window;            // default window for manifest entries
};

struct TrainerParams {
  capsnet::ModelConfig model;
  int epochs_per_round = 5;
  double learning_rate = 0.5;
};

struct ExperimentConfig {
  // experiment
  std::size_t n_hospitals = 3;
  int rounds = 10;
  std::uint64_t seed = 1;
  PartitionScheme scheme = PartitionScheme::kIidEqual;
  std::vector<double> skew_ratios;  // size-skewed scheme only
  bool sweep_providers = true;      // sweep 1..n_hospitals, else n only
  std::int64_t timestamp_base = 0;  // deterministic block timestamps
  std::string csv_path = "reports/experiment.csv";
  std::string jsonl_path = "reports/experiment.jsonl";
  std::string ledger_path = "reports/ledger.jsonl";

  // fed
  feddp::FedConfig fed;
  double laplace_sensitivity = 0.0;  // 0 disables local perturbation

  // chain
  std::string category = "ct-covid";
  std::optional<double> consensus_threshold;  // absent: median * 1.5

  // trainer + dataset
  TrainerParams trainer;
  DatasetSpec dataset;

  void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig config_from_json(const nlohmann::json& j);

struct RoundReport {
  int round = 0;
  int providers = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  double wall_time_ms = 0.0;
  double vc = 0.0;
  double us = 0.0;
  int accepted = 0;
  int rejected = 0;

  nlohmann::ordered_json to_json() const;
};

inline constexpr const char* kCsvHeader =
    "round,providers,accuracy,loss,vc,us,accepted,wall_time_ms";

std::string csv_row(const RoundReport& r);

// ---------------------------------------------------------------------------
// Synthetic datasets + partitioning
// ---------------------------------------------------------------------------

capsnet::LabeledDataset make_blobs(std::size_t n, std::size_t dim,
                                   double separation, RngStream& rng);
capsnet::LabeledDataset make_lesion_images(std::size_t n, std::size_t image_size,
                                           RngStream& rng);

// Loads labeled CTV1 volumes listed in a JSON manifest
// ([{"volume": path, "label": 0|1, "wl"?: hu, "ww"?: hu}, ...]), resamples
// each onto an image_size x image_size x 1 grid, window-normalizes, and
// shifts the values into [0, 1]. Relative volume paths resolve against the
// manifest's directory.
capsnet::LabeledDataset load_ctv_manifest(const std::filesystem::path& manifest_path,
                                          std::size_t image_size,
                                          const ctnorm::LungWindow& default_window);

// Disjoint covering partitions; iid-equal spreads the remainder over the
// first partitions, size-skewed uses floor(N * ratio) with the remainder
// assigned in order.
std::vector<capsnet::LabeledDataset> partition_dataset(
    const capsnet::LabeledDataset& dataset, std::size_t n_hospitals,
    PartitionScheme scheme, std::span<const double> ratios, std::uint64_t seed);

// ---------------------------------------------------------------------------
// In-process federation simulator
// ---------------------------------------------------------------------------

enum class PayloadKind { kWeights, kTransaction, kBlock };

struct MessageRecord {
  std::string from;
  std::string to;
  PayloadKind kind = PayloadKind::kWeights;
  std::size_t bytes = 0;
};

/// Records every payload that crosses a hospital boundary so tests can audit
/// that only model weights, transactions and blocks ever move.
class MessageLog {
 public:
  void record(std::string from, std::string to, PayloadKind kind, std::size_t bytes);
  const std::vector<MessageRecord>& records() const { return records_; }
  bool only_model_payloads() const;

 private:
  std::vector<MessageRecord> records_;
};

struct HospitalSim {
  chain::KeyPair keys;
  chain::NodeId node;
  capsnet::LabeledDataset partition;
  std::uint64_t tx_count = 0;
};

// Training seed for one hospital in one round; exposed so harnesses can
// reproduce a round's local training independently of the simulator.
std::uint64_t round_train_seed(std::uint64_t experiment_seed, std::size_t providers,
                               int round, std::string_view node_hex);

class FederationSim {
 public:
  explicit FederationSim(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const capsnet::LabeledDataset& train_pool() const { return train_pool_; }
  const capsnet::LabeledDataset& validation_set() const { return validation_; }
  const capsnet::LabeledDataset& test_set() const { return test_; }
  const std::vector<HospitalSim>& hospitals() const { return hospitals_; }
  const chain::Ledger& ledger() const { return *ledger_; }
  const chain::CommunityTable& community() const { return community_; }
  const MessageLog& message_log() const { return log_; }
  const capsnet::CapsuleClassifier& global_model() const { return global_; }
  std::size_t active_providers() const { return providers_; }
  // Round index, starting weights and sampled set X_t of the last round.
  const feddp::RoundState& last_round_state() const { return last_round_; }

  // Fresh global model and partitions over the first `providers` hospitals.
  void start_leg(std::size_t providers);

  // One federated round: local training, Laplace perturbation, signed
  // submission, MAE consensus, DP aggregation, block append, broadcast.
  RoundReport run_round();

  // Provider sweep writing the CSV / JSON-lines reports and the ledger.
  void run_experiment();

 private:
  ExperimentConfig cfg_;
  capsnet::LabeledDataset train_pool_;
  capsnet::LabeledDataset validation_;
  capsnet::LabeledDataset test_;
  std::vector<HospitalSim> hospitals_;
  std::optional<chain::Ledger> ledger_;
  chain::CommunityTable community_;
  MessageLog log_;
  capsnet::CapsuleClassifier global_;
  feddp::RoundState last_round_;
  std::size_t providers_ = 0;
  int round_ = 0;
};

// Convenience wrapper used by the CLI: loads the config and runs the sweep.
void run_experiment(const ExperimentConfig& cfg);

}  // namespace fedchain::simnet
