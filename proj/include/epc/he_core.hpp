#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "epc/errors.hpp"

namespace epc::he {

// The reference backend is homomorphism-exact: it seals the true value inside
// an opaque handle and enforces key identity, shape compatibility, layer
// discipline and the multiplication-level budget. It is a protocol-logic
// testbed, NOT a cryptographic construction; a lattice-based scheme can be
// slotted in behind the same operation signatures.
enum class Mode { Exact, Quantized };

struct BackendConfig {
  Mode mode = Mode::Exact;
  int level_budget = 8;
  int frac_bits = 40;  // quantized mode: values rounded to this many significant fraction bits
};

struct KeyId {
  std::uint64_t value = 0;
  friend bool operator==(const KeyId&, const KeyId&) = default;
};

struct PublicKey {
  KeyId id;
};
struct SecretKey {
  KeyId id;
};
struct KeyPair {
  PublicKey pk;
  SecretKey sk;
};

struct Shape {
  int rows = 1;
  int cols = 1;
  friend bool operator==(const Shape&, const Shape&) = default;
  bool is_scalar() const { return rows == 1 && cols == 1; }
  bool is_vector() const { return cols == 1 && rows > 1; }
  int slots() const { return rows * cols; }
};

// Encoded message: scalar, column vector, or small matrix of reals.
struct Plaintext {
  Eigen::MatrixXd value;

  static Plaintext scalar(double x) {
    Plaintext p;
    p.value = Eigen::MatrixXd::Constant(1, 1, x);
    return p;
  }
  static Plaintext from(const Eigen::MatrixXd& m) {
    Plaintext p;
    p.value = m;
    return p;
  }
  Shape shape() const { return {static_cast<int>(value.rows()), static_cast<int>(value.cols())}; }
  double as_scalar() const {
    if (value.rows() != 1 || value.cols() != 1) {
      throw ShapeMismatch("plaintext is not a scalar");
    }
    return value(0, 0);
  }
};

class Backend;

// Opaque ciphertext handle. The payload is reachable only through a Backend
// holding the matching secret key; handles carry fresh nonces so equal
// plaintexts are not recognizable from the outside.
class Ciphertext {
 public:
  Ciphertext() = default;
  KeyId key_id() const { return key_; }
  Shape shape() const { return shape_; }
  int level() const { return level_; }
  int layers() const { return layers_; }
  std::uint64_t nonce() const { return nonce_; }

 private:
  friend class Backend;
  Eigen::MatrixXd sealed_;                      // layer-1 payload
  std::shared_ptr<const Ciphertext> inner_;     // layer-2 payload
  KeyId key_;
  Shape shape_;
  int level_ = 0;
  int layers_ = 1;
  std::uint64_t nonce_ = 0;
};

class Backend {
 public:
  explicit Backend(BackendConfig cfg = {}, std::uint64_t nonce_seed = 0);

  const BackendConfig& config() const { return cfg_; }

  KeyPair keygen();

  Ciphertext encrypt(const Plaintext& p, const PublicKey& pk);
  Plaintext decrypt(const Ciphertext& c, const SecretKey& sk) const;

  // Double encryption: wraps an existing ciphertext under a second key.
  // The wrapped handle admits no homomorphic operations.
  Ciphertext encrypt_layered(const Ciphertext& inner, const PublicKey& outer);
  Ciphertext decrypt_outer(const Ciphertext& c, const SecretKey& sk) const;

  // Homomorphic operations. add/mul require matching key ids and layer 1.
  // Levels: add keeps max(l1,l2); mul consumes one level, max(l1,l2)+1,
  // checked against the budget. plain_mul is level-free.
  Ciphertext add(const Ciphertext& a, const Ciphertext& b);
  Ciphertext mul(const Ciphertext& a, const Ciphertext& b);
  Ciphertext plain_mul(const Plaintext& m, const Ciphertext& c);

  // Left-to-right folds of add / mul. Empty input throws EmptyFold.
  Ciphertext sum(std::span<const Ciphertext> cs);
  Ciphertext prod(std::span<const Ciphertext> cs);

  // Componentwise slot re-grouping: k equal-length vector ciphertexts under
  // one key become the rows of a k x n matrix ciphertext. Pure bookkeeping
  // (slots are independently encrypted scalars), so no level is consumed.
  Ciphertext stack_rows(std::span<const Ciphertext> rows);

  // Self-describing envelope {key_id, shape, level, layers, payload} where the
  // payload is a nonce-derived opaque token per slot. Stable within a run.
  std::vector<std::uint8_t> serialize(const Ciphertext& c) const;
  static std::size_t envelope_size(const Ciphertext& c);

  // Highest multiplication level any ciphertext produced by this backend has
  // reached; protocol depth assertions read this.
  int max_level_observed() const { return max_level_.load(); }

 private:
  double quantize(double x) const;
  Eigen::MatrixXd quantize(const Eigen::MatrixXd& m) const;
  std::uint64_t fresh_nonce();
  Ciphertext make(Eigen::MatrixXd value, KeyId key, int level);

  BackendConfig cfg_;
  std::atomic<std::uint64_t> key_counter_ = 0;  // keygen owns this counter exclusively
  std::atomic<std::uint64_t> nonce_counter_ = 0;
  std::uint64_t nonce_seed_ = 0;
  std::atomic<int> max_level_ = 0;
};

}  // namespace epc::he
