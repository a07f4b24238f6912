#include <chrono>
#include <cstdio>
#include <fstream>

#include "fedchain/errors.hpp"
#include "fedchain/hash.hpp"
#include "fedchain/simnet.hpp"

namespace fedchain::simnet {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

capsnet::LabeledDataset make_split(const DatasetSpec& spec, std::size_t n,
                                   RngStream& rng) {
  if (spec.kind == "blobs") {
    return make_blobs(n, spec.dim, spec.separation, rng);
  }
  if (spec.kind == "lesion-images") {
    return make_lesion_images(n, spec.image_size, rng);
  }
  throw InvalidArgument("generator cannot produce dataset kind: " + spec.kind);
}

}  // namespace

PartitionScheme partition_scheme_from_name(std::string_view name) {
  if (name == "iid-equal") return PartitionScheme::kIidEqual;
  if (name == "size-skewed") return PartitionScheme::kSizeSkewed;
  throw InvalidArgument("unknown partition scheme: " + std::string(name));
}

void ExperimentConfig::validate() const {
  if (n_hospitals < 1) throw InvalidArgument("n_hospitals must be >= 1");
  if (rounds < 1) throw InvalidArgument("rounds must be >= 1");
  fed.validate();
  if (laplace_sensitivity < 0.0) {
    throw InvalidArgument("laplace_sensitivity must be >= 0");
  }
  if (scheme == PartitionScheme::kSizeSkewed && skew_ratios.size() != n_hospitals) {
    throw InvalidArgument("size-skewed scheme needs one ratio per hospital");
  }
  trainer.model.validate();
  if (trainer.epochs_per_round < 0) throw InvalidArgument("negative epochs_per_round");
  if (!(trainer.learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
}

nlohmann::ordered_json RoundReport::to_json() const {
  nlohmann::ordered_json j;
  j["round"] = round;
  j["providers"] = providers;
  j["accuracy"] = accuracy;
  j["loss"] = loss;
  j["wall_time_ms"] = wall_time_ms;
  j["vc"] = vc;
  j["us"] = us;
  j["accepted"] = accepted;
  j["rejected"] = rejected;
  return j;
}

std::string csv_row(const RoundReport& r) {
  std::string row;
  row += std::to_string(r.round);
  row += ',';
  row += std::to_string(r.providers);
  row += ',';
  row += fmt_double(r.accuracy);
  row += ',';
  row += fmt_double(r.loss);
  row += ',';
  row += fmt_double(r.vc);
  row += ',';
  row += fmt_double(r.us);
  row += ',';
  row += std::to_string(r.accepted);
  row += ',';
  row += fmt_double(r.wall_time_ms);
  return row;
}

void MessageLog::record(std::string from, std::string to, PayloadKind kind,
                        std::size_t bytes) {
  records_.push_back({std::move(from), std::move(to), kind, bytes});
}

bool MessageLog::only_model_payloads() const {
  for (const MessageRecord& r : records_) {
    if (r.kind != PayloadKind::kWeights && r.kind != PayloadKind::kTransaction &&
        r.kind != PayloadKind::kBlock) {
      return false;
    }
  }
  return true;
}

std::uint64_t round_train_seed(std::uint64_t experiment_seed, std::size_t providers,
                               int round, std::string_view node_hex) {
  std::string label = "leg/" + std::to_string(providers) + "/round/" +
                      std::to_string(round) + "/train/" + std::string(node_hex);
  return derive_seed(experiment_seed, label);
}

FederationSim::FederationSim(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();

  RngStream root(cfg_.seed);
  if (cfg_.dataset.kind == "ctv-manifest") {
    // One labeled pool from disk, split deterministically into the shared
    // validation set, the held-out test set, and the training pool.
    auto all = load_ctv_manifest(cfg_.dataset.manifest_path,
                                 cfg_.dataset.image_size, cfg_.dataset.window);
    const std::size_t need =
        cfg_.dataset.validation_samples + cfg_.dataset.test_samples + cfg_.n_hospitals;
    if (all.size() < need) {
      throw InvalidArgument("dataset manifest has too few volumes for the split");
    }
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    RngStream split_rng = root.derive("dataset/split");
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t k = split_rng.next_below(i);
      std::swap(order[i - 1], order[k]);
    }
    auto take = [&](std::size_t begin, std::size_t count) {
      capsnet::LabeledDataset part;
      part.feature_dim = all.feature_dim;
      for (std::size_t k = begin; k < begin + count; ++k) {
        auto row = all.sample(order[k]);
        part.x.insert(part.x.end(), row.begin(), row.end());
        part.y.push_back(all.y[order[k]]);
      }
      return part;
    };
    validation_ = take(0, cfg_.dataset.validation_samples);
    test_ = take(cfg_.dataset.validation_samples, cfg_.dataset.test_samples);
    train_pool_ = take(cfg_.dataset.validation_samples + cfg_.dataset.test_samples,
                       all.size() - cfg_.dataset.validation_samples -
                           cfg_.dataset.test_samples);
  } else {
    RngStream data_rng = root.derive("dataset/train");
    train_pool_ = make_split(cfg_.dataset, cfg_.dataset.train_samples, data_rng);
    RngStream val_rng = root.derive("dataset/validation");
    validation_ = make_split(cfg_.dataset, cfg_.dataset.validation_samples, val_rng);
    RngStream test_rng = root.derive("dataset/test");
    test_ = make_split(cfg_.dataset, cfg_.dataset.test_samples, test_rng);
  }

  if (train_pool_.feature_dim != cfg_.trainer.model.flat_input_size()) {
    throw InvalidArgument("dataset feature size does not match trainer model");
  }

  // Hospital identities are keyed by index so the set is stable across legs.
  hospitals_.reserve(cfg_.n_hospitals);
  std::vector<chain::Transaction> registrations;
  for (std::size_t h = 0; h < cfg_.n_hospitals; ++h) {
    HospitalSim hs;
    hs.keys = chain::KeyPair::derive(cfg_.seed, "hospital/" + std::to_string(h));
    hs.node = hs.keys.node_id();
    community_.add(hs.node, cfg_.category);
    registrations.push_back(
        chain::make_register_tx(hs.keys, cfg_.category, hs.tx_count++));
    hospitals_.push_back(std::move(hs));
  }

  std::filesystem::path ledger_path(cfg_.ledger_path);
  if (ledger_path.has_parent_path()) {
    std::filesystem::create_directories(ledger_path.parent_path());
  }
  ledger_ = chain::Ledger::create(ledger_path, std::move(registrations),
                                  hospitals_.front().node, cfg_.timestamp_base);

  start_leg(cfg_.n_hospitals);
}

void FederationSim::start_leg(std::size_t providers) {
  if (providers < 1 || providers > hospitals_.size()) {
    throw InvalidArgument("start_leg: provider count out of range");
  }
  providers_ = providers;
  round_ = 0;

  global_ = capsnet::CapsuleClassifier::init(cfg_.trainer.model,
                                             derive_seed(cfg_.seed, "global-init"));

  // Skew ratios follow the active prefix of hospitals; partition_dataset
  // renormalizes, so shorter legs of a sweep stay proportional.
  std::span<const double> ratio_span;
  if (cfg_.scheme == PartitionScheme::kSizeSkewed) {
    ratio_span = std::span<const double>(cfg_.skew_ratios.data(), providers);
  }
  auto parts = partition_dataset(
      train_pool_, providers, cfg_.scheme, ratio_span,
      derive_seed(cfg_.seed, "leg/" + std::to_string(providers)));
  for (std::size_t h = 0; h < hospitals_.size(); ++h) {
    hospitals_[h].partition =
        h < providers ? std::move(parts[h]) : capsnet::LabeledDataset{};
  }
}

RoundReport FederationSim::run_round() {
  const int t = ++round_;
  const auto started = std::chrono::steady_clock::now();

  const std::string leg = "leg/" + std::to_string(providers_);
  const std::string round_label = leg + "/round/" + std::to_string(t);
  RngStream root(cfg_.seed);

  // 0. Random sub-sampling of this round's participants.
  std::vector<std::string> ids;
  for (std::size_t h = 0; h < providers_; ++h) ids.push_back(hospitals_[h].node.hex());
  RngStream sample_rng = root.derive(round_label + "/subsample");
  std::vector<std::string> sampled = feddp::subsample(ids, cfg_.fed.subsample, sample_rng);
  std::set<std::string> sampled_set(sampled.begin(), sampled.end());

  const WeightTensor w_t = global_.weights();
  last_round_ = feddp::RoundState{static_cast<std::uint64_t>(t), w_t, sampled};
  std::vector<double> validation_targets(validation_.size());
  for (std::size_t i = 0; i < validation_.size(); ++i) {
    validation_targets[i] = static_cast<double>(validation_.y[i]);
  }

  struct Submission {
    std::size_t hospital_index;
    WeightTensor delta;
    chain::Transaction tx;
    chain::ConsensusCandidate candidate;
  };
  std::vector<Submission> submissions;

  // 1..3: local training, Laplace perturbation, signed submission.
  // Iteration follows the hospital list so aggregation order is stable.
  for (std::size_t h = 0; h < providers_; ++h) {
    HospitalSim& hospital = hospitals_[h];
    if (!sampled_set.count(hospital.node.hex())) continue;

    auto trained = capsnet::train_local(
        global_, hospital.partition, cfg_.trainer.epochs_per_round,
        cfg_.trainer.learning_rate,
        round_train_seed(cfg_.seed, providers_, t, hospital.node.hex()));

    WeightTensor local = trained.model.weights();
    RngStream lap_rng = root.derive(round_label + "/laplace/" + hospital.node.hex());
    WeightTensor perturbed = feddp::laplace_perturb(
        local, cfg_.laplace_sensitivity, cfg_.fed.epsilon, lap_rng);

    capsnet::CapsuleClassifier shared = trained.model;
    shared.set_weights(perturbed);

    std::vector<double> predictions(validation_.size());
    for (std::size_t i = 0; i < validation_.size(); ++i) {
      predictions[i] = shared.scalar_prediction(validation_.sample(i));
    }
    const double claimed_mae = mae(validation_targets, predictions);

    Submission s;
    s.hospital_index = h;
    s.delta = sub(perturbed, w_t);
    s.tx = chain::make_model_tx(hospital.keys, shared.model_hash(), cfg_.category,
                                claimed_mae, perturbed.size() * sizeof(double),
                                hospital.tx_count++);
    s.candidate = chain::ConsensusCandidate{hospital.node, shared.model_hash(),
                                            std::move(predictions)};

    log_.record(hospital.node.hex(), "aggregator", PayloadKind::kWeights,
                perturbed.size() * sizeof(double));
    log_.record(hospital.node.hex(), "chain", PayloadKind::kTransaction,
                s.tx.canonical_bytes().size());
    submissions.push_back(std::move(s));
  }

  // 4. MAE-voting consensus over the submitted models.
  std::vector<chain::ConsensusCandidate> candidates;
  candidates.reserve(submissions.size());
  for (const Submission& s : submissions) candidates.push_back(s.candidate);

  chain::ConsensusConfig ccfg;
  ccfg.gamma = cfg_.fed.gamma;
  ccfg.threshold = cfg_.consensus_threshold;
  chain::ConsensusResult consensus =
      chain::consensus_round(candidates, validation_targets, ccfg);

  std::set<std::string> accepted_nodes;
  for (const chain::CandidateOutcome& o : consensus.table) {
    if (o.accepted) accepted_nodes.insert(o.node.hex());
  }

  // 5. DP-federated aggregation of the accepted clipped updates.
  std::vector<feddp::ModelUpdate> accepted_updates;
  std::vector<WeightTensor> all_deltas;
  for (Submission& s : submissions) {
    all_deltas.push_back(s.delta);
    if (accepted_nodes.count(hospitals_[s.hospital_index].node.hex())) {
      accepted_updates.push_back(
          {hospitals_[s.hospital_index].node.hex(), std::move(s.delta)});
    }
  }

  if (!accepted_updates.empty()) {
    RngStream noise_rng = root.derive(round_label + "/noise");
    WeightTensor next =
        feddp::dp_federated_round(w_t, accepted_updates, cfg_.fed, noise_rng);
    global_.set_weights(next);
  }

  feddp::UpdateStats stats = feddp::update_stats(all_deltas);

  // 6. Record the round on the chain, proposed by the consensus leader.
  std::size_t leader_index = 0;
  for (std::size_t h = 0; h < providers_; ++h) {
    if (hospitals_[h].node == consensus.leader) {
      leader_index = h;
      break;
    }
  }
  std::vector<chain::Transaction> txs;
  for (Submission& s : submissions) txs.push_back(std::move(s.tx));
  txs.push_back(chain::make_consensus_tx(consensus, cfg_.category,
                                         global_.model_hash(),
                                         hospitals_[leader_index].keys,
                                         hospitals_[leader_index].tx_count++));
  const chain::Block& block = ledger_->append_block(
      std::move(txs), consensus.leader,
      cfg_.timestamp_base + static_cast<std::int64_t>(ledger_->tip_height()) + 1);

  // 7. Broadcast the new block and global weights to every hospital.
  for (const HospitalSim& hospital : hospitals_) {
    log_.record("chain", hospital.node.hex(), PayloadKind::kBlock,
                block.canonical_bytes().size());
    log_.record("aggregator", hospital.node.hex(), PayloadKind::kWeights,
                w_t.size() * sizeof(double));
  }

  capsnet::EvalResult eval = capsnet::evaluate(global_, test_);
  const auto finished = std::chrono::steady_clock::now();

  RoundReport report;
  report.round = t;
  report.providers = static_cast<int>(providers_);
  report.accuracy = eval.metrics.accuracy.value_or(0.0);
  report.loss = eval.mean_loss;
  report.wall_time_ms =
      std::chrono::duration<double, std::milli>(finished - started).count();
  report.vc = stats.vc;
  report.us = stats.us;
  report.accepted = static_cast<int>(accepted_updates.size());
  report.rejected = static_cast<int>(submissions.size() - accepted_updates.size());
  return report;
}

void FederationSim::run_experiment() {
  auto open_report = [](const std::string& raw_path) {
    std::filesystem::path path(raw_path);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write report: " + path.string());
    return os;
  };
  std::ofstream csv = open_report(cfg_.csv_path);
  std::ofstream jsonl = open_report(cfg_.jsonl_path);
  csv << kCsvHeader << "\n";

  std::vector<std::size_t> provider_counts;
  if (cfg_.sweep_providers) {
    for (std::size_t p = 1; p <= cfg_.n_hospitals; ++p) provider_counts.push_back(p);
  } else {
    provider_counts.push_back(cfg_.n_hospitals);
  }

  for (std::size_t p : provider_counts) {
    start_leg(p);
    for (int r = 0; r < cfg_.rounds; ++r) {
      RoundReport report = run_round();
      csv << csv_row(report) << "\n";
      jsonl << report.to_json().dump() << "\n";
    }
  }
  csv.flush();
  jsonl.flush();
  if (!csv || !jsonl) throw IoError("short report write");
}

void run_experiment(const ExperimentConfig& cfg) {
  FederationSim sim(cfg);
  sim.run_experiment();
}

}  // namespace fedchain::simnet
