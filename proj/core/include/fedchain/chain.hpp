#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedchain/rng.hpp"

namespace fedchain::chain {

inline constexpr std::size_t kNodeIdBytes = 20;
inline constexpr std::size_t kPublicKeyBytes = 32;
inline constexpr std::size_t kSecretKeyBytes = 64;
inline constexpr std::size_t kSignatureBytes = 64;

/// 160-bit node identifier: the leading 20 bytes of SHA-256 over the node's
/// public key, rendered as 40 lowercase hex characters.
class NodeId {
 public:
  NodeId() = default;

  static NodeId from_public_key(std::span<const std::uint8_t> public_key);
  static NodeId from_hex(std::string_view hex40);

  const std::array<std::uint8_t, kNodeIdBytes>& bytes() const { return bytes_; }
  std::string hex() const;

  auto operator<=>(const NodeId&) const = default;

 private:
  std::array<std::uint8_t, kNodeIdBytes> bytes_{};
};

// Big-endian 160-bit magnitude; compares lexicographically.
using Distance160 = std::array<std::uint8_t, kNodeIdBytes>;

Distance160 xor_distance(const NodeId& a, const NodeId& b);

// log2(1 + d); the single place the log base of the distance metric lives.
double log_distance_term(const Distance160& d);

using AttributeSet = std::set<std::string>;

/// Binary category-membership indicators per node, keyed by NodeId hex.
struct AttributeMatrix {
  std::map<std::string, AttributeSet> rows;
};

// Symmetric-difference / union attribute ratio scaled by the log of the XOR
// distance. Zero when the attribute sets coincide.
double category_distance(const NodeId& h_i, const NodeId& h_j,
                         const AttributeMatrix& attrs);

struct KeyPair {
  std::array<std::uint8_t, kPublicKeyBytes> public_key{};
  std::array<std::uint8_t, kSecretKeyBytes> secret_key{};

  static KeyPair from_seed(std::span<const std::uint8_t> seed32);
  // Deterministic keypair keyed by (seed, label); hospitals use their index.
  static KeyPair derive(std::uint64_t seed, std::string_view label);

  NodeId node_id() const;
};

struct PayloadMeta {
  std::string data_type;  // e.g. "model-weights"
  std::uint64_t size = 0;
};

/// Signed record of a model submission, a node registration, or a consensus
/// outcome. Canonical bytes are the JSON-lines encoding with tx_id and
/// signature emptied; tx_id is the SHA-256 of those bytes and the Ed25519
/// signature is computed over them.
struct Transaction {
  std::string kind;        // "register" | "model" | "consensus"
  std::string tx_id;       // 64 hex chars
  std::string hospital;    // submitter NodeId hex
  std::string model_hash;  // 64 hex chars, empty for register
  std::string category;
  double mae_claim = 0.0;
  PayloadMeta payload_meta;
  std::uint64_t tc = 0;  // submitter's transaction count
  std::string pubkey;    // hex, set on register transactions
  nlohmann::ordered_json detail = nlohmann::ordered_json::object();
  std::string sig_scheme = "ed25519";
  std::string signature;  // hex

  std::string canonical_bytes() const;
  nlohmann::ordered_json to_json() const;
  static Transaction from_json(const nlohmann::ordered_json& j);
};

Transaction make_register_tx(const KeyPair& keys, const std::string& category,
                             std::uint64_t tc);
Transaction make_model_tx(const KeyPair& keys, const std::string& model_hash,
                          const std::string& category, double mae_claim,
                          std::uint64_t payload_size, std::uint64_t tc);

// Fills tx_id and signature from the canonical bytes.
void sign_transaction(Transaction& tx, const KeyPair& signer);
bool verify_transaction(const Transaction& tx,
                        std::span<const std::uint8_t> public_key);

struct Block {
  std::uint64_t height = 0;
  std::string prev_hash;  // 64 hex chars; all zeros for genesis
  std::vector<Transaction> txs;
  std::string merkle_root;
  std::int64_t timestamp = 0;  // unix seconds
  std::string proposer;        // NodeId hex
  std::string hash;            // SHA-256 of canonical bytes (hash emptied)

  std::string canonical_bytes() const;
  nlohmann::ordered_json to_json() const;
  static Block from_json(const nlohmann::ordered_json& j);
};

// Merkle root over tx_id leaves; pairs hashed as SHA-256(left || right),
// odd levels duplicate the last node; empty list hashes the empty string.
std::string merkle_root_of(std::span<const Transaction> txs);

/// Append-only hash-chained ledger persisted as JSON lines, one block per
/// line. Single-writer: all appends go through one Ledger instance.
class Ledger {
 public:
  Ledger(const Ledger&) = delete;
  Ledger& operator=(const Ledger&) = delete;
  Ledger(Ledger&&) = default;
  Ledger& operator=(Ledger&&) = default;

  // Creates the file with a genesis block holding the registration txs.
  static Ledger create(const std::filesystem::path& path,
                       std::vector<Transaction> genesis_txs,
                       const NodeId& proposer, std::int64_t timestamp);

  // Loads and structurally verifies an existing file; throws CorruptLedger.
  static Ledger open(const std::filesystem::path& path);

  const std::vector<Block>& blocks() const { return blocks_; }
  std::uint64_t tip_height() const { return blocks_.back().height; }
  const std::filesystem::path& path() const { return path_; }

  // Registered node public keys, hospital hex -> key bytes.
  const std::map<std::string, std::array<std::uint8_t, kPublicKeyBytes>>&
  registry() const {
    return registry_;
  }

  const Block& append_block(std::vector<Transaction> txs, const NodeId& proposer,
                            std::int64_t timestamp);

 private:
  Ledger() = default;

  void admit_transactions(const std::vector<Transaction>& txs);
  void persist_block(const Block& b);

  std::filesystem::path path_;
  std::vector<Block> blocks_;
  std::map<std::string, std::array<std::uint8_t, kPublicKeyBytes>> registry_;
};

// Full recomputation of every hash link, merkle root, tx id and signature
// from genesis.
bool verify_chain(const Ledger& ledger);

// Disk-level verification; false on unparsable or tampered content. When
// `reason` is given it receives a short description of the first failure.
bool verify_ledger_file(const std::filesystem::path& path,
                        std::string* reason = nullptr);

// ---------------------------------------------------------------------------
// MAE-voting consensus
// ---------------------------------------------------------------------------

struct ConsensusCandidate {
  NodeId node;
  std::string model_hash;
  std::vector<double> predictions;  // candidate outputs on the validation set
};

struct CandidateOutcome {
  NodeId node;
  std::string model_hash;
  double mae = 0.0;
  double score = 0.0;
  bool accepted = false;
};

struct ConsensusConfig {
  double gamma = 0.5;
  // Scores above the threshold are excluded; defaults to median score * 1.5.
  std::optional<double> threshold;
};

struct ConsensusResult {
  std::vector<CandidateOutcome> table;  // sorted by node id
  NodeId leader;                        // minimal score, ties to smaller id
  double threshold = 0.0;
};

// score(H_j) = gamma * MAE(m_j) + mean_i MAE(m_i); candidates whose score
// exceeds the threshold are excluded from aggregation.
ConsensusResult consensus_round(std::span<const ConsensusCandidate> candidates,
                                std::span<const double> validation_targets,
                                const ConsensusConfig& cfg);

// Consensus outcome as a signed transaction carrying the per-model MAE table
// and the hash of the aggregated global model.
Transaction make_consensus_tx(const ConsensusResult& result,
                              const std::string& category,
                              const std::string& global_model_hash,
                              const KeyPair& leader_keys, std::uint64_t tc);

// ---------------------------------------------------------------------------
// Community table and retrieval
// ---------------------------------------------------------------------------

/// Category membership plus per-node Kademlia-style peer buckets.
class CommunityTable {
 public:
  void add(const NodeId& node, const std::string& category);

  bool has_category(const std::string& category) const;
  // Sorted by node id.
  const std::vector<NodeId>& members(const std::string& category) const;
  std::vector<std::string> categories() const;
  std::size_t node_count() const { return all_nodes_.size(); }

  // Peers of `self` bucketed by XOR bit length; within a bucket ascending by
  // distance; bucket capacity floor(log2(n)) + 1, farthest dropped first.
  std::map<int, std::vector<NodeId>> buckets(const NodeId& self) const;

 private:
  std::map<std::string, std::vector<NodeId>> categories_;
  std::set<NodeId> all_nodes_;
};

struct ModelRef {
  std::string model_hash;
  std::uint64_t block_height = 0;
  std::string tx_id;
};

// Latest consensus-accepted global model for the category. Never returns raw
// data; only the hash and its provenance on the chain.
ModelRef retrieve_model(const Ledger& ledger, const CommunityTable& table,
                        const std::string& category, const NodeId& requester);

}  // namespace fedchain::chain
