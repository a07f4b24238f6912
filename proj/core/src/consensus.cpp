#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "fedchain/chain.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/metrics.hpp"

namespace fedchain::chain {

namespace {

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Index of the highest set bit counted from the LSB, or -1 for zero.
int highest_bit_index(const Distance160& d) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] != 0) {
      int in_byte = 7 - std::countl_zero(d[i]);
      return static_cast<int>((d.size() - 1 - i) * 8) + in_byte;
    }
  }
  return -1;
}

}  // namespace

ConsensusResult consensus_round(std::span<const ConsensusCandidate> candidates,
                                std::span<const double> validation_targets,
                                const ConsensusConfig& cfg) {
  if (candidates.empty()) throw InvalidArgument("consensus_round: no candidates");
  if (validation_targets.empty()) {
    throw InvalidArgument("consensus_round: empty validation set");
  }

  ConsensusResult result;
  result.table.reserve(candidates.size());

  std::vector<double> maes;
  maes.reserve(candidates.size());
  for (const ConsensusCandidate& c : candidates) {
    if (c.predictions.size() != validation_targets.size()) {
      throw InvalidArgument("consensus_round: prediction length mismatch");
    }
    CandidateOutcome o;
    o.node = c.node;
    o.model_hash = c.model_hash;
    o.mae = mae(validation_targets, c.predictions);
    maes.push_back(o.mae);
    result.table.push_back(std::move(o));
  }

  const double mean_mae =
      std::accumulate(maes.begin(), maes.end(), 0.0) / static_cast<double>(maes.size());

  std::vector<double> scores;
  scores.reserve(result.table.size());
  for (CandidateOutcome& o : result.table) {
    o.score = cfg.gamma * o.mae + mean_mae;
    scores.push_back(o.score);
  }

  result.threshold = cfg.threshold.value_or(median(scores) * 1.5);
  for (CandidateOutcome& o : result.table) {
    o.accepted = o.score <= result.threshold;
  }

  // Canonical order makes the outcome independent of candidate permutation.
  std::sort(result.table.begin(), result.table.end(),
            [](const CandidateOutcome& a, const CandidateOutcome& b) {
              return a.node < b.node;
            });

  const CandidateOutcome* leader = &result.table.front();
  for (const CandidateOutcome& o : result.table) {
    if (o.score < leader->score) leader = &o;  // ties keep the smaller id
  }
  result.leader = leader->node;
  return result;
}

Transaction make_consensus_tx(const ConsensusResult& result,
                              const std::string& category,
                              const std::string& global_model_hash,
                              const KeyPair& leader_keys, std::uint64_t tc) {
  Transaction tx;
  tx.kind = "consensus";
  tx.hospital = leader_keys.node_id().hex();
  tx.model_hash = global_model_hash;
  tx.category = category;
  tx.payload_meta = {"consensus-outcome", result.table.size()};
  tx.tc = tc;

  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const CandidateOutcome& o : result.table) {
    nlohmann::ordered_json e;
    e["node"] = o.node.hex();
    e["model_hash"] = o.model_hash;
    e["mae"] = o.mae;
    e["score"] = o.score;
    e["accepted"] = o.accepted;
    entries.push_back(std::move(e));
  }
  tx.detail["threshold"] = result.threshold;
  tx.detail["leader"] = result.leader.hex();
  tx.detail["models"] = std::move(entries);

  sign_transaction(tx, leader_keys);
  return tx;
}

void CommunityTable::add(const NodeId& node, const std::string& category) {
  if (category.empty()) throw InvalidArgument("community category must be non-empty");
  auto& members = categories_[category];
  if (std::find(members.begin(), members.end(), node) == members.end()) {
    members.push_back(node);
    std::sort(members.begin(), members.end());
  }
  all_nodes_.insert(node);
}

bool CommunityTable::has_category(const std::string& category) const {
  return categories_.count(category) > 0;
}

const std::vector<NodeId>& CommunityTable::members(const std::string& category) const {
  auto it = categories_.find(category);
  if (it == categories_.end()) throw NotFound("unknown category: " + category);
  return it->second;
}

std::vector<std::string> CommunityTable::categories() const {
  std::vector<std::string> names;
  names.reserve(categories_.size());
  for (const auto& [name, _] : categories_) names.push_back(name);
  return names;
}

std::map<int, std::vector<NodeId>> CommunityTable::buckets(const NodeId& self) const {
  std::map<int, std::vector<NodeId>> out;
  const std::size_t n = all_nodes_.size();
  if (n < 2) return out;
  const std::size_t capacity =
      static_cast<std::size_t>(std::floor(std::log2(static_cast<double>(n)))) + 1;

  for (const NodeId& peer : all_nodes_) {
    if (peer == self) continue;
    Distance160 d = xor_distance(self, peer);
    int idx = highest_bit_index(d);
    out[idx].push_back(peer);
  }
  for (auto& [idx, peers] : out) {
    std::sort(peers.begin(), peers.end(), [&](const NodeId& a, const NodeId& b) {
      return xor_distance(self, a) < xor_distance(self, b);
    });
    if (peers.size() > capacity) peers.resize(capacity);
  }
  return out;
}

ModelRef retrieve_model(const Ledger& ledger, const CommunityTable& table,
                        const std::string& category, const NodeId& requester) {
  (void)requester;  // retrieval is open to community members; no ACL here
  if (!table.has_category(category)) {
    throw NotFound("unknown category: " + category);
  }
  for (auto it = ledger.blocks().rbegin(); it != ledger.blocks().rend(); ++it) {
    for (auto tx = it->txs.rbegin(); tx != it->txs.rend(); ++tx) {
      if (tx->kind == "consensus" && tx->category == category) {
        return ModelRef{tx->model_hash, it->height, tx->tx_id};
      }
    }
  }
  throw NotFound("category '" + category +
                 "' has members but no consensus-accepted model yet");
}

}  // namespace fedchain::chain
