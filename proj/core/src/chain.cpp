#include <sodium.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fedchain/chain.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/hash.hpp"

namespace fedchain::chain {

namespace {

void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw Error("libsodium initialization failed");
}

}  // namespace

NodeId NodeId::from_public_key(std::span<const std::uint8_t> public_key) {
  Sha256Digest digest = sha256(public_key);
  NodeId id;
  std::copy_n(digest.begin(), kNodeIdBytes, id.bytes_.begin());
  return id;
}

NodeId NodeId::from_hex(std::string_view hex40) {
  auto bytes = fedchain::from_hex(hex40);
  if (bytes.size() != kNodeIdBytes) throw InvalidArgument("node id must be 40 hex chars");
  NodeId id;
  std::copy(bytes.begin(), bytes.end(), id.bytes_.begin());
  return id;
}

std::string NodeId::hex() const { return to_hex(bytes_); }

Distance160 xor_distance(const NodeId& a, const NodeId& b) {
  Distance160 d;
  for (std::size_t i = 0; i < kNodeIdBytes; ++i) {
    d[i] = static_cast<std::uint8_t>(a.bytes()[i] ^ b.bytes()[i]);
  }
  return d;
}

double log_distance_term(const Distance160& d) {
  // 160 bits exceed a double's mantissa; long double keeps enough precision
  // for ordering and for the small ids used in tests to come out exact.
  long double value = 0.0L;
  for (std::uint8_t byte : d) value = value * 256.0L + byte;
  return static_cast<double>(std::log2(1.0L + value));
}

double category_distance(const NodeId& h_i, const NodeId& h_j,
                         const AttributeMatrix& attrs) {
  auto it_i = attrs.rows.find(h_i.hex());
  auto it_j = attrs.rows.find(h_j.hex());
  if (it_i == attrs.rows.end() || it_j == attrs.rows.end()) {
    throw InvalidArgument("category_distance: missing attribute row");
  }
  const AttributeSet& a = it_i->second;
  const AttributeSet& b = it_j->second;
  if (a.empty() && b.empty()) {
    throw InvalidArgument("category_distance: both attribute sets empty");
  }

  // Binary indicators: an attribute contributes x_i + x_j, i.e. 2 when
  // shared and 1 when held by exactly one node.
  double sym_diff = 0.0, united = 0.0;
  for (const std::string& attr : a) {
    if (b.count(attr)) {
      united += 2.0;
    } else {
      sym_diff += 1.0;
      united += 1.0;
    }
  }
  for (const std::string& attr : b) {
    if (!a.count(attr)) {
      sym_diff += 1.0;
      united += 1.0;
    }
  }
  if (sym_diff == 0.0) return 0.0;
  return sym_diff / united * log_distance_term(xor_distance(h_i, h_j));
}

KeyPair KeyPair::from_seed(std::span<const std::uint8_t> seed32) {
  if (seed32.size() != crypto_sign_SEEDBYTES) {
    throw InvalidArgument("key seed must be 32 bytes");
  }
  ensure_sodium();
  KeyPair kp;
  crypto_sign_seed_keypair(kp.public_key.data(), kp.secret_key.data(), seed32.data());
  return kp;
}

KeyPair KeyPair::derive(std::uint64_t seed, std::string_view label) {
  // Stretch (seed, label) into 32 deterministic bytes.
  std::string material = "fedchain-keypair/" + std::string(label) + "/" +
                         std::to_string(seed);
  Sha256Digest digest = sha256(material);
  return from_seed(digest);
}

NodeId KeyPair::node_id() const { return NodeId::from_public_key(public_key); }

std::string Transaction::canonical_bytes() const {
  Transaction blank = *this;
  blank.tx_id.clear();
  blank.signature.clear();
  return blank.to_json().dump();
}

nlohmann::ordered_json Transaction::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind;
  j["tx_id"] = tx_id;
  j["hospital"] = hospital;
  j["model_hash"] = model_hash;
  j["category"] = category;
  j["mae_claim"] = mae_claim;
  j["payload_meta"] = {{"data_type", payload_meta.data_type},
                       {"size", payload_meta.size}};
  j["tc"] = tc;
  j["pubkey"] = pubkey;
  j["detail"] = detail;
  j["sig_scheme"] = sig_scheme;
  j["signature"] = signature;
  return j;
}

Transaction Transaction::from_json(const nlohmann::ordered_json& j) {
  Transaction tx;
  tx.kind = j.at("kind").get<std::string>();
  tx.tx_id = j.at("tx_id").get<std::string>();
  tx.hospital = j.at("hospital").get<std::string>();
  tx.model_hash = j.at("model_hash").get<std::string>();
  tx.category = j.at("category").get<std::string>();
  tx.mae_claim = j.at("mae_claim").get<double>();
  tx.payload_meta.data_type = j.at("payload_meta").at("data_type").get<std::string>();
  tx.payload_meta.size = j.at("payload_meta").at("size").get<std::uint64_t>();
  tx.tc = j.at("tc").get<std::uint64_t>();
  tx.pubkey = j.at("pubkey").get<std::string>();
  tx.detail = j.at("detail");
  tx.sig_scheme = j.at("sig_scheme").get<std::string>();
  tx.signature = j.at("signature").get<std::string>();
  return tx;
}

Transaction make_register_tx(const KeyPair& keys, const std::string& category,
                             std::uint64_t tc) {
  Transaction tx;
  tx.kind = "register";
  tx.hospital = keys.node_id().hex();
  tx.category = category;
  tx.payload_meta = {"node-registration", kPublicKeyBytes};
  tx.tc = tc;
  tx.pubkey = to_hex(keys.public_key);
  sign_transaction(tx, keys);
  return tx;
}

Transaction make_model_tx(const KeyPair& keys, const std::string& model_hash,
                          const std::string& category, double mae_claim,
                          std::uint64_t payload_size, std::uint64_t tc) {
  Transaction tx;
  tx.kind = "model";
  tx.hospital = keys.node_id().hex();
  tx.model_hash = model_hash;
  tx.category = category;
  tx.mae_claim = mae_claim;
  tx.payload_meta = {"model-weights", payload_size};
  tx.tc = tc;
  sign_transaction(tx, keys);
  return tx;
}

void sign_transaction(Transaction& tx, const KeyPair& signer) {
  ensure_sodium();
  std::string canonical = tx.canonical_bytes();
  std::array<std::uint8_t, kSignatureBytes> sig{};
  crypto_sign_detached(sig.data(), nullptr,
                       reinterpret_cast<const std::uint8_t*>(canonical.data()),
                       canonical.size(), signer.secret_key.data());
  tx.signature = to_hex(sig);
  tx.tx_id = sha256_hex(canonical);
}

bool verify_transaction(const Transaction& tx,
                        std::span<const std::uint8_t> public_key) {
  if (public_key.size() != kPublicKeyBytes) return false;
  if (tx.sig_scheme != "ed25519") return false;
  ensure_sodium();

  std::string canonical = tx.canonical_bytes();
  if (tx.tx_id != sha256_hex(canonical)) return false;

  std::vector<std::uint8_t> sig;
  try {
    sig = from_hex(tx.signature);
  } catch (const InvalidArgument&) {
    return false;
  }
  if (sig.size() != kSignatureBytes) return false;

  return crypto_sign_verify_detached(
             sig.data(), reinterpret_cast<const std::uint8_t*>(canonical.data()),
             canonical.size(), public_key.data()) == 0;
}

}  // namespace fedchain::chain
