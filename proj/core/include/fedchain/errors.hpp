#pragma once

#include <stdexcept>
#include <string>

namespace fedchain {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Signer is not registered with the chain.
class UnknownNode : public Error {
 public:
  using Error::Error;
};

// A transaction or block failed admission checks.
class Rejected : public Error {
 public:
  using Error::Error;
};

// Persisted ledger state fails hash-chain verification.
class CorruptLedger : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedchain
