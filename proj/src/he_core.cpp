#include "epc/he_core.hpp"

#include <cmath>
#include <cstring>

#include "epc/rng.hpp"

namespace epc::he {

namespace {

std::string shape_str(const Shape& s) {
  return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

void require_layer1(const Ciphertext& c, const char* op) {
  if (c.layers() != 1) {
    throw LayerViolation(std::string(op) + ": double-encrypted ciphertexts admit only outer decryption");
  }
}

void require_same_key(const Ciphertext& a, const Ciphertext& b, const char* op) {
  if (!(a.key_id() == b.key_id())) {
    throw KeyMismatch(std::string(op) + ": operands are encrypted under different keys");
  }
}

}  // namespace

Backend::Backend(BackendConfig cfg, std::uint64_t nonce_seed)
    : cfg_(cfg), nonce_seed_(mix64(nonce_seed ^ 0xC1A0C1A0C1A0C1A0ull)) {}

double Backend::quantize(double x) const {
  if (cfg_.mode == Mode::Exact || x == 0.0 || !std::isfinite(x)) return x;
  int e;
  const double m = std::frexp(x, &e);  // |m| in [0.5, 1)
  const double scale = std::ldexp(1.0, cfg_.frac_bits + 1);
  return std::ldexp(std::nearbyint(m * scale) / scale, e);
}

Eigen::MatrixXd Backend::quantize(const Eigen::MatrixXd& m) const {
  if (cfg_.mode == Mode::Exact) return m;
  return m.unaryExpr([this](double x) { return quantize(x); });
}

std::uint64_t Backend::fresh_nonce() {
  return mix64(nonce_seed_ ^ nonce_counter_.fetch_add(1));
}

Ciphertext Backend::make(Eigen::MatrixXd value, KeyId key, int level) {
  Ciphertext c;
  c.sealed_ = std::move(value);
  c.key_ = key;
  c.shape_ = {static_cast<int>(c.sealed_.rows()), static_cast<int>(c.sealed_.cols())};
  c.level_ = level;
  c.layers_ = 1;
  c.nonce_ = fresh_nonce();
  int seen = max_level_.load();
  while (level > seen && !max_level_.compare_exchange_weak(seen, level)) {
  }
  return c;
}

KeyPair Backend::keygen() {
  const KeyId id{mix64(key_counter_.fetch_add(1) + 0x5EC2E7ull)};
  return {PublicKey{id}, SecretKey{id}};
}

Ciphertext Backend::encrypt(const Plaintext& p, const PublicKey& pk) {
  if (p.value.size() == 0) {
    throw ShapeMismatch("encrypt: empty plaintext");
  }
  return make(quantize(p.value), pk.id, 0);
}

Plaintext Backend::decrypt(const Ciphertext& c, const SecretKey& sk) const {
  if (c.layers() != 1) {
    throw LayerViolation("decrypt: outer layer must be removed first");
  }
  if (!(c.key_id() == sk.id)) {
    throw KeyMismatch("decrypt: secret key does not match ciphertext key");
  }
  return Plaintext::from(c.sealed_);
}

Ciphertext Backend::encrypt_layered(const Ciphertext& inner, const PublicKey& outer) {
  Ciphertext c;
  c.inner_ = std::make_shared<Ciphertext>(inner);
  c.key_ = outer.id;
  c.shape_ = inner.shape();
  c.level_ = 0;
  c.layers_ = inner.layers() + 1;
  c.nonce_ = fresh_nonce();
  return c;
}

Ciphertext Backend::decrypt_outer(const Ciphertext& c, const SecretKey& sk) const {
  if (c.layers() != 2) {
    throw LayerViolation("decrypt_outer: ciphertext has no outer layer");
  }
  if (!(c.key_id() == sk.id)) {
    throw KeyMismatch("decrypt_outer: secret key does not match outer key");
  }
  return *c.inner_;
}

Ciphertext Backend::add(const Ciphertext& a, const Ciphertext& b) {
  require_layer1(a, "add");
  require_layer1(b, "add");
  require_same_key(a, b, "add");
  if (!(a.shape() == b.shape())) {
    throw ShapeMismatch("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return make(a.sealed_ + b.sealed_, a.key_id(), std::max(a.level(), b.level()));
}

Ciphertext Backend::mul(const Ciphertext& a, const Ciphertext& b) {
  require_layer1(a, "mul");
  require_layer1(b, "mul");
  require_same_key(a, b, "mul");
  const int level = std::max(a.level(), b.level()) + 1;
  if (level > cfg_.level_budget) {
    throw LevelBudgetExceeded("mul: level " + std::to_string(level) + " exceeds budget " +
                              std::to_string(cfg_.level_budget));
  }
  const Shape sa = a.shape(), sb = b.shape();
  Eigen::MatrixXd out;
  if (sa.is_scalar()) {
    out = a.sealed_(0, 0) * b.sealed_;
  } else if (sb.is_scalar()) {
    out = b.sealed_(0, 0) * a.sealed_;
  } else if (sa.is_vector() && sb.is_vector() && sa.rows == sb.rows) {
    out = Eigen::MatrixXd::Constant(1, 1, (a.sealed_.array() * b.sealed_.array()).sum());
  } else if (sa.cols == sb.rows) {
    out = a.sealed_ * b.sealed_;
  } else {
    throw ShapeMismatch("mul: " + shape_str(sa) + " vs " + shape_str(sb) + " not composable");
  }
  return make(quantize(out), a.key_id(), level);
}

Ciphertext Backend::plain_mul(const Plaintext& m, const Ciphertext& c) {
  require_layer1(c, "plain_mul");
  const Shape sm = m.shape(), sc = c.shape();
  Eigen::MatrixXd out;
  if (sm.is_scalar()) {
    out = m.value(0, 0) * c.sealed_;
  } else if (sc.is_scalar()) {
    out = c.sealed_(0, 0) * m.value;
  } else if (sm.cols == sc.rows) {
    out = m.value * c.sealed_;
  } else {
    throw ShapeMismatch("plain_mul: " + shape_str(sm) + " vs " + shape_str(sc) + " not composable");
  }
  return make(quantize(out), c.key_id(), c.level());
}

Ciphertext Backend::sum(std::span<const Ciphertext> cs) {
  if (cs.empty()) throw EmptyFold("sum of zero ciphertexts");
  Ciphertext acc = cs[0];
  for (std::size_t i = 1; i < cs.size(); ++i) acc = add(acc, cs[i]);
  return acc;
}

Ciphertext Backend::prod(std::span<const Ciphertext> cs) {
  if (cs.empty()) throw EmptyFold("product of zero ciphertexts");
  Ciphertext acc = cs[0];
  for (std::size_t i = 1; i < cs.size(); ++i) acc = mul(acc, cs[i]);
  return acc;
}

Ciphertext Backend::stack_rows(std::span<const Ciphertext> rows) {
  if (rows.empty()) throw EmptyFold("stack_rows of zero ciphertexts");
  const int n = rows[0].shape().slots();
  int level = 0;
  for (const auto& r : rows) {
    require_layer1(r, "stack_rows");
    require_same_key(rows[0], r, "stack_rows");
    if (!(r.shape().is_vector() || r.shape().rows == 1) || r.shape().slots() != n) {
      throw ShapeMismatch("stack_rows: rows must be equal-length vectors");
    }
    level = std::max(level, r.level());
  }
  Eigen::MatrixXd out(static_cast<int>(rows.size()), n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<int>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rows[i].sealed_.data(), n);
  }
  return make(std::move(out), rows[0].key_id(), level);
}

std::size_t Backend::envelope_size(const Ciphertext& c) {
  // key_id(8) shape(2) level(1) layers(1) nonce(8) + 16 bytes per slot,
  // plus the wrapped envelope for layered handles
  std::size_t n = 20 + 16 * static_cast<std::size_t>(c.shape().slots());
  if (c.layers() > 1 && c.inner_) n += envelope_size(*c.inner_);
  return n;
}

std::vector<std::uint8_t> Backend::serialize(const Ciphertext& c) const {
  std::vector<std::uint8_t> out;
  out.reserve(envelope_size(c));
  const auto push_u64 = [&out](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  push_u64(c.key_id().value);
  out.push_back(static_cast<std::uint8_t>(c.shape().rows));
  out.push_back(static_cast<std::uint8_t>(c.shape().cols));
  out.push_back(static_cast<std::uint8_t>(c.level()));
  out.push_back(static_cast<std::uint8_t>(c.layers()));
  push_u64(c.nonce());
  // payload: per-slot opaque tokens derived from the handle nonce only;
  // plaintext bits never reach the wire format
  for (int s = 0; s < c.shape().slots(); ++s) {
    push_u64(mix64(c.nonce() ^ (0x9E37u + static_cast<std::uint64_t>(s) * 2)));
    push_u64(mix64(c.nonce() ^ (0x9E37u + static_cast<std::uint64_t>(s) * 2 + 1)));
  }
  if (c.layers() > 1 && c.inner_) {
    const auto inner = serialize(*c.inner_);
    out.insert(out.end(), inner.begin(), inner.end());
  }
  return out;
}

}  // namespace epc::he
