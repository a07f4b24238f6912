#include <fstream>
#include <sstream>

#include "fedchain/chain.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/hash.hpp"

namespace fedchain::chain {

namespace {

const std::string kZeroHash(64, '0');

// Registration transactions must be self-consistent: the embedded key hashes
// to the claimed node id and signs the transaction.
bool verify_register_tx(const Transaction& tx) {
  std::vector<std::uint8_t> pk;
  try {
    pk = from_hex(tx.pubkey);
  } catch (const InvalidArgument&) {
    return false;
  }
  if (pk.size() != kPublicKeyBytes) return false;
  if (NodeId::from_public_key(pk).hex() != tx.hospital) return false;
  return verify_transaction(tx, pk);
}

struct VerifyState {
  std::map<std::string, std::array<std::uint8_t, kPublicKeyBytes>> registry;
  std::string fail;

  bool check_block(const Block& b, const Block* parent) {
    if (parent == nullptr) {
      if (b.height != 0) return fail_with("genesis height is not 0");
      if (b.prev_hash != kZeroHash) return fail_with("genesis prev_hash not zero");
    } else {
      if (b.height != parent->height + 1) return fail_with("non-contiguous height");
      if (b.prev_hash != parent->hash) return fail_with("broken parent link");
    }
    if (b.hash != sha256_hex(b.canonical_bytes())) {
      return fail_with("block hash mismatch");
    }
    if (b.merkle_root != merkle_root_of(b.txs)) {
      return fail_with("merkle root mismatch");
    }
    for (const Transaction& tx : b.txs) {
      if (tx.kind == "register") {
        if (!verify_register_tx(tx)) return fail_with("bad registration tx");
        auto it = registry.find(tx.hospital);
        std::array<std::uint8_t, kPublicKeyBytes> pk{};
        auto bytes = from_hex(tx.pubkey);
        std::copy(bytes.begin(), bytes.end(), pk.begin());
        if (it != registry.end() && it->second != pk) {
          return fail_with("node re-registered with a different key");
        }
        registry[tx.hospital] = pk;
      } else {
        auto it = registry.find(tx.hospital);
        if (it == registry.end()) return fail_with("transaction from unknown node");
        if (!verify_transaction(tx, it->second)) {
          return fail_with("transaction signature invalid");
        }
      }
    }
    return true;
  }

  bool fail_with(std::string why) {
    fail = std::move(why);
    return false;
  }
};

}  // namespace

std::string Block::canonical_bytes() const {
  Block blank = *this;
  blank.hash.clear();
  return blank.to_json().dump();
}

nlohmann::ordered_json Block::to_json() const {
  nlohmann::ordered_json j;
  j["height"] = height;
  j["prev_hash"] = prev_hash;
  nlohmann::ordered_json tx_list = nlohmann::ordered_json::array();
  for (const Transaction& tx : txs) tx_list.push_back(tx.to_json());
  j["tx_list"] = std::move(tx_list);
  j["merkle_root"] = merkle_root;
  j["timestamp"] = timestamp;
  j["proposer"] = proposer;
  j["hash"] = hash;
  return j;
}

Block Block::from_json(const nlohmann::ordered_json& j) {
  Block b;
  b.height = j.at("height").get<std::uint64_t>();
  b.prev_hash = j.at("prev_hash").get<std::string>();
  for (const auto& tj : j.at("tx_list")) {
    b.txs.push_back(Transaction::from_json(tj));
  }
  b.merkle_root = j.at("merkle_root").get<std::string>();
  b.timestamp = j.at("timestamp").get<std::int64_t>();
  b.proposer = j.at("proposer").get<std::string>();
  b.hash = j.at("hash").get<std::string>();
  return b;
}

std::string merkle_root_of(std::span<const Transaction> txs) {
  if (txs.empty()) return sha256_hex(std::string_view{});

  std::vector<Sha256Digest> level;
  level.reserve(txs.size());
  for (const Transaction& tx : txs) {
    auto bytes = from_hex(tx.tx_id);
    if (bytes.size() != 32) throw InvalidArgument("tx_id is not a sha256 hex digest");
    Sha256Digest d{};
    std::copy(bytes.begin(), bytes.end(), d.begin());
    level.push_back(d);
  }

  while (level.size() > 1) {
    if (level.size() % 2 == 1) level.push_back(level.back());
    std::vector<Sha256Digest> next;
    next.reserve(level.size() / 2);
    for (std::size_t i = 0; i < level.size(); i += 2) {
      std::array<std::uint8_t, 64> pair{};
      std::copy(level[i].begin(), level[i].end(), pair.begin());
      std::copy(level[i + 1].begin(), level[i + 1].end(), pair.begin() + 32);
      next.push_back(sha256(pair));
    }
    level = std::move(next);
  }
  return to_hex(level.front());
}

void Ledger::admit_transactions(const std::vector<Transaction>& txs) {
  for (const Transaction& tx : txs) {
    if (tx.kind == "register") {
      if (!verify_register_tx(tx)) {
        throw Rejected("registration transaction failed verification: hospital " +
                       tx.hospital);
      }
      std::array<std::uint8_t, kPublicKeyBytes> pk{};
      auto bytes = from_hex(tx.pubkey);
      std::copy(bytes.begin(), bytes.end(), pk.begin());
      auto it = registry_.find(tx.hospital);
      if (it != registry_.end() && it->second != pk) {
        throw Rejected("node re-registered with a different key: hospital " +
                       tx.hospital);
      }
      registry_[tx.hospital] = pk;
    } else {
      auto it = registry_.find(tx.hospital);
      if (it == registry_.end()) {
        throw UnknownNode("transaction signer is not registered: " + tx.hospital);
      }
      if (!verify_transaction(tx, it->second)) {
        throw Rejected("transaction failed signature verification: hospital " +
                       tx.hospital + ", tx " + tx.tx_id);
      }
    }
  }
}

void Ledger::persist_block(const Block& b) {
  std::ofstream os(path_, std::ios::app);
  if (!os) throw IoError("cannot append to ledger file: " + path_.string());
  os << b.to_json().dump() << "\n";
  os.flush();
  if (!os) throw IoError("short ledger write: " + path_.string());
}

Ledger Ledger::create(const std::filesystem::path& path,
                      std::vector<Transaction> genesis_txs, const NodeId& proposer,
                      std::int64_t timestamp) {
  Ledger ledger;
  ledger.path_ = path;

  {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot create ledger file: " + path.string());
  }

  ledger.admit_transactions(genesis_txs);

  Block genesis;
  genesis.height = 0;
  genesis.prev_hash = kZeroHash;
  genesis.txs = std::move(genesis_txs);
  genesis.merkle_root = merkle_root_of(genesis.txs);
  genesis.timestamp = timestamp;
  genesis.proposer = proposer.hex();
  genesis.hash = sha256_hex(genesis.canonical_bytes());

  ledger.persist_block(genesis);
  ledger.blocks_.push_back(std::move(genesis));
  return ledger;
}

Ledger Ledger::open(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open ledger file: " + path.string());

  Ledger ledger;
  ledger.path_ = path;

  VerifyState vs;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(line, nullptr, false);
    if (j.is_discarded()) throw CorruptLedger("unparsable ledger line");
    Block b;
    try {
      b = Block::from_json(j);
    } catch (const std::exception& e) {
      throw CorruptLedger(std::string("malformed block record: ") + e.what());
    }
    const Block* parent = ledger.blocks_.empty() ? nullptr : &ledger.blocks_.back();
    if (!vs.check_block(b, parent)) throw CorruptLedger(vs.fail);
    ledger.blocks_.push_back(std::move(b));
  }
  if (ledger.blocks_.empty()) throw CorruptLedger("ledger file has no blocks");
  ledger.registry_ = std::move(vs.registry);
  return ledger;
}

const Block& Ledger::append_block(std::vector<Transaction> txs,
                                  const NodeId& proposer, std::int64_t timestamp) {
  if (blocks_.empty()) throw CorruptLedger("append on a ledger without genesis");
  admit_transactions(txs);

  Block b;
  b.height = blocks_.back().height + 1;
  b.prev_hash = blocks_.back().hash;
  b.txs = std::move(txs);
  b.merkle_root = merkle_root_of(b.txs);
  b.timestamp = timestamp;
  b.proposer = proposer.hex();
  b.hash = sha256_hex(b.canonical_bytes());

  persist_block(b);
  blocks_.push_back(std::move(b));
  return blocks_.back();
}

bool verify_chain(const Ledger& ledger) {
  if (ledger.blocks().empty()) return false;
  VerifyState vs;
  const Block* parent = nullptr;
  for (const Block& b : ledger.blocks()) {
    if (!vs.check_block(b, parent)) return false;
    parent = &b;
  }
  return true;
}

bool verify_ledger_file(const std::filesystem::path& path, std::string* reason) {
  std::ifstream is(path);
  if (!is) {
    if (reason) *reason = "cannot open file";
    return false;
  }
  VerifyState vs;
  std::vector<Block> blocks;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      if (reason) *reason = "unparsable ledger line";
      return false;
    }
    Block b;
    try {
      b = Block::from_json(j);
    } catch (const std::exception&) {
      if (reason) *reason = "malformed block record";
      return false;
    }
    const Block* parent = blocks.empty() ? nullptr : &blocks.back();
    if (!vs.check_block(b, parent)) {
      if (reason) *reason = vs.fail;
      return false;
    }
    blocks.push_back(std::move(b));
  }
  if (blocks.empty()) {
    if (reason) *reason = "ledger file has no blocks";
    return false;
  }
  return true;
}

}  // namespace fedchain::chain
