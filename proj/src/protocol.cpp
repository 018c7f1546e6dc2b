#include "epc/protocol.hpp"

#include <algorithm>
#include <cmath>

namespace epc {

namespace {

// Operator-side floor for delegated inverse-norm arguments: a genuinely
// degenerate geometry (|v_rel| or |h| <= 1e-9) stays below this bound for
// every admissible mask magnitude (w >= 2^-8).
constexpr double kDelegatedNormEps = 1e-18 * 0x1p-16;

he::Plaintext encode_vec(const Vec3& v) {
  return he::Plaintext::from(v);
}

he::Plaintext encode_mat(const Eigen::MatrixXd& m) {
  return he::Plaintext::from(m);
}

}  // namespace

OperatorSecret make_operator_secret(const StateVector& state, const Mat3& cov, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw InvalidCovariance("operator radius must be positive and finite");
  }
  validate_covariance(cov);
  OperatorSecret s;
  s.state = state;
  s.cov = cov;
  s.radius = radius;
  s.cov_factor = factor_covariance(cov);
  return s;
}

Schedule make_schedule(std::uint64_t samples, std::uint64_t seed) {
  Schedule sch;
  sch.seed = seed;
  sch.assignment.resize(samples);
  const RandomStream rng(seed, streams::kSchedule);
  for (std::uint64_t j = 0; j < samples; ++j) {
    sch.assignment[j] = static_cast<std::uint8_t>(1 + (rng.u64_at(j) & 1));
  }
  return sch;
}

bool pi3_masked_compare(double lhs, double rhs, double alpha, double beta) {
  double first = alpha * lhs + beta;
  double second = alpha * rhs + beta;
  if (alpha < 0.0) std::swap(first, second);
  // the delegated party evaluates "first <= second"; the slot order already
  // absorbed the mask sign, so the report is the inference
  return first <= second;
}

namespace detail {

// ---------------------------------------------------------------------------
// Operator state machine: answers coordinator requests using only its own
// secret, its own key pair and the announced public keys. It never sees mask
// values or the schedule's purpose.
// ---------------------------------------------------------------------------
class OperatorParty {
 public:
  OperatorParty(PartyId id, int index, OperatorSecret secret, TestHooks hooks)
      : id_(id), index_(index), secret_(std::move(secret)), hooks_(hooks) {}

  PartyId id() const { return id_; }
  int index() const { return index_; }
  const OperatorSecret& secret() const { return secret_; }
  const he::KeyPair& keys() const { return keys_; }

  void generate_keys(he::Backend& backend) { keys_ = backend.keygen(); }

  Message key_announce() const {
    Message m;
    m.from = id_;
    m.to = PartyId::Coordinator;
    m.kind = MessageKind::KeyAnnounce;
    m.subprotocol = Subprotocol::Setup;
    m.plains = {static_cast<double>(keys_.pk.id.value)};
    return m;
  }

  std::optional<Message> handle(const Message& msg, he::Backend& backend) {
    switch (msg.kind) {
      case MessageKind::KeyAnnounce:
        pk_outer_ = he::PublicKey{he::KeyId{static_cast<std::uint64_t>(msg.plains.at(0))}};
        pk_op_[0] = he::PublicKey{he::KeyId{static_cast<std::uint64_t>(msg.plains.at(1))}};
        pk_op_[1] = he::PublicKey{he::KeyId{static_cast<std::uint64_t>(msg.plains.at(2))}};
        return std::nullopt;
      case MessageKind::SchedulePublish:
        return std::nullopt;  // published for bookkeeping; operators act per request
      case MessageKind::ResultPublish:
        return std::nullopt;
      case MessageKind::Pi1UploadRequest:
        return pi1_upload(msg, backend);
      case MessageKind::Pi1SkewUploadRequest:
        return pi1_skew_upload(msg, backend);
      case MessageKind::Pi1MaskedNormRequest:
        return masked_norm_response(msg, backend);
      case MessageKind::Pi2CovUploadRequest:
        return pi2_cov_upload(msg, backend);
      case MessageKind::Pi2MissDistRequest:
        return missdist_response(msg, backend);
      case MessageKind::Pi3MaskedPair:
        return pi3_compare(msg, backend);
      default:
        throw IllegalRoute("operator received an unexpected message kind");
    }
  }

 private:
  double sign() const { return index_ == 1 ? 1.0 : -1.0; }

  he::PublicKey pipeline_pk(int k) const { return pk_op_.at(static_cast<std::size_t>(k - 1)); }

  he::Ciphertext double_encrypt(const he::Plaintext& p, int pipeline, he::Backend& backend) const {
    return backend.encrypt_layered(backend.encrypt(p, pipeline_pk(pipeline)), pk_outer_);
  }

  Message respond(const Message& req, MessageKind kind, Subprotocol sp) const {
    Message m;
    m.from = id_;
    m.to = PartyId::Coordinator;
    m.kind = kind;
    m.subprotocol = sp;
    m.pipeline_key = req.pipeline_key;
    return m;
  }

  Message pi1_upload(const Message& req, he::Backend& backend) {
    Message m = respond(req, MessageKind::Pi1DoubleEncUpload, Subprotocol::Pi1);
    m.ciphers.push_back(double_encrypt(encode_mat(skew(sign() * secret_.state.r)), req.pipeline_key, backend));
    m.ciphers.push_back(double_encrypt(encode_vec(sign() * secret_.state.v), req.pipeline_key, backend));
    return m;
  }

  Message pi1_skew_upload(const Message& req, he::Backend& backend) {
    Message m = respond(req, MessageKind::Pi1SkewVelUpload, Subprotocol::Pi1);
    m.ciphers.push_back(double_encrypt(encode_mat(skew(sign() * secret_.state.v)), req.pipeline_key, backend));
    return m;
  }

  Message masked_norm_response(const Message& req, he::Backend& backend) {
    const double x = backend.decrypt(req.ciphers.at(0), keys_.sk).as_scalar();
    if (!(x > kDelegatedNormEps)) {
      throw DegenerateGeometry("delegated inverse norm: masked norm vanishes");
    }
    Message m = respond(req, MessageKind::Pi1MaskedNormResponse, Subprotocol::Pi1);
    m.ciphers.push_back(
        backend.encrypt(he::Plaintext::scalar(std::pow(x, -0.5)), he::PublicKey{req.ciphers.at(0).key_id()}));
    return m;
  }

  Message pi2_cov_upload(const Message& req, he::Backend& backend) {
    Message m = respond(req, MessageKind::Pi2CovUpload, Subprotocol::Pi2);
    m.ciphers.push_back(double_encrypt(encode_mat(secret_.cov_factor), req.pipeline_key, backend));
    m.ciphers.push_back(double_encrypt(he::Plaintext::scalar(secret_.radius), req.pipeline_key, backend));
    m.ciphers.push_back(double_encrypt(encode_vec(sign() * secret_.state.r), req.pipeline_key, backend));
    if (hooks_.plaintext_cov_upload) {
      // seeded leak fault: the factor rides along in the clear
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m.plains.push_back(secret_.cov_factor(r, c));
    }
    return m;
  }

  Message missdist_response(const Message& req, he::Backend& backend) {
    const double x = backend.decrypt(req.ciphers.at(0), keys_.sk).as_scalar();
    Message m = respond(req, MessageKind::Pi2MissDistResponse, Subprotocol::Pi2);
    m.ciphers.push_back(backend.encrypt(he::Plaintext::scalar(std::sqrt(std::max(x, 0.0))),
                                        he::PublicKey{req.ciphers.at(0).key_id()}));
    return m;
  }

  Message pi3_compare(const Message& req, he::Backend& backend) {
    Message m = respond(req, MessageKind::Pi3CompareResult, Subprotocol::Pi3);
    m.sample_indices = req.sample_indices;
    for (std::size_t i = 0; i + 1 < req.ciphers.size(); i += 2) {
      const double first = backend.decrypt(req.ciphers[i], keys_.sk).as_scalar();
      const double second = backend.decrypt(req.ciphers[i + 1], keys_.sk).as_scalar();
      m.booleans.push_back(first <= second ? 1 : 0);
    }
    return m;
  }

  PartyId id_;
  int index_;
  OperatorSecret secret_;
  TestHooks hooks_;
  he::KeyPair keys_;
  he::PublicKey pk_outer_;
  std::array<he::PublicKey, 2> pk_op_;
};

// ---------------------------------------------------------------------------
// Coordinator: owns sk1, the schedule, all masks and the sample randomness.
// ---------------------------------------------------------------------------
class CoordinatorParty {
 public:
  struct Pipeline {
    int key = 0;          // schedule index this pipeline serves
    he::PublicKey pk;     // operator key the pipeline runs under
    PartyId delegate = PartyId::Operator1;
    he::Ciphertext c_skew_rrel, c_vrel, c_h, c_skew_vrel, c_qxz;
    he::Ciphertext c_sig_xz_1, c_sig_xz_2, c_rvec, c_r0vec, c_big_r, c_rhs;
    double w_sample = 1.0;  // pi2 mask shared by miss distance, samples and RHS
  };

  struct SampleRecord {
    std::uint64_t index = 0;
    int pipeline = 0;
    he::Ciphertext lhs;
  };

  CoordinatorParty(const SessionConfig& cfg)
      : cfg_(cfg),
        mask_rng_(derive_seed(cfg.seed, 0xA5A5), streams::kMasks),
        z1_(cfg.seed, streams::kOperatorZ1),
        z2_(cfg.seed, streams::kOperatorZ2) {}

  const SessionConfig& cfg_;
  RandomStream mask_rng_;
  RandomStream z1_, z2_;
  he::KeyPair keys_;
  Schedule schedule_;
  std::array<he::PublicKey, 2> operator_pks_;
  std::map<int, Pipeline> pipelines_;
  std::vector<SampleRecord> samples_;
  std::vector<MaskRecord> mask_log_;
  std::vector<std::uint8_t> results_;
  std::uint64_t n_collisions_ = 0;
  std::optional<double> reused_;

  double draw_w(const std::string& purpose, bool unmask_override) {
    double w;
    if (unmask_override || cfg_.hooks.force_unit_masks) {
      w = 1.0;
    } else if (cfg_.hooks.reuse_masks && reused_) {
      w = *reused_;
    } else {
      w = std::exp2(16.0 * mask_rng_.next_uniform() - 8.0);
      if (cfg_.hooks.reuse_masks) reused_ = w;
    }
    mask_log_.push_back({"w:" + purpose, w});
    return w;
  }

  double draw_alpha(std::uint64_t j) {
    double a;
    if (cfg_.hooks.force_unit_masks) {
      a = 1.0;
    } else {
      const double mag = std::exp2(16.0 * mask_rng_.next_uniform() - 8.0);
      a = mask_rng_.next_uniform() < 0.5 ? -mag : mag;
    }
    mask_log_.push_back({"alpha:" + std::to_string(j), a});
    return a;
  }

  double draw_beta(std::uint64_t j) {
    const double b = cfg_.hooks.force_unit_masks ? 1.0 : (mask_rng_.next_uniform() - 0.5) * 512.0;
    mask_log_.push_back({"beta:" + std::to_string(j), b});
    return b;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Session driver
// ---------------------------------------------------------------------------

Session::Session(const OperatorSecret& o1, const OperatorSecret& o2, const SessionConfig& cfg)
    : cfg_(cfg),
      backend_(cfg.backend, derive_seed(cfg.seed, 0x17E)),
      op1_(std::make_unique<detail::OperatorParty>(PartyId::Operator1, 1, o1, cfg.hooks)),
      op2_(std::make_unique<detail::OperatorParty>(PartyId::Operator2, 2, o2, cfg.hooks)),
      coord_(std::make_unique<detail::CoordinatorParty>(cfg_)) {}

Session::~Session() = default;

void Session::pump() {
  bool progressed = true;
  while (progressed) {
    progressed = false;
    for (detail::OperatorParty* op : {op1_.get(), op2_.get()}) {
      while (auto m = bus_.deliver(op->id())) {
        progressed = true;
        if (auto resp = op->handle(*m, backend_)) bus_.send(std::move(*resp));
      }
    }
  }
}

namespace {

std::vector<Message> drain_coordinator(Bus& bus) {
  std::vector<Message> out;
  while (auto m = bus.deliver(PartyId::Coordinator)) out.push_back(std::move(*m));
  return out;
}

PartyId operator_party(int index) {
  return index == 1 ? PartyId::Operator1 : PartyId::Operator2;
}

}  // namespace

void Session::setup() {
  if (cfg_.samples < 1) throw Error("session requires at least one sample");
  const auto& s1 = op1_->secret();
  const auto& s2 = op2_->secret();
  if (s1.state.epoch != s2.state.epoch) {
    throw EpochMismatch("session: operator states are not at the same epoch");
  }
  validate_covariance(s1.cov);
  validate_covariance(s2.cov);

  bus_.register_party(PartyId::Operator1);
  bus_.register_party(PartyId::Operator2);
  bus_.register_party(PartyId::Coordinator);

  coord_->keys_ = backend_.keygen();
  op1_->generate_keys(backend_);
  op2_->generate_keys(backend_);

  bus_.send(op1_->key_announce());
  bus_.send(op2_->key_announce());
  for (const auto& m : drain_coordinator(bus_)) {
    const int idx = m.from == PartyId::Operator1 ? 0 : 1;
    coord_->operator_pks_[idx] = he::PublicKey{he::KeyId{static_cast<std::uint64_t>(m.plains.at(0))}};
  }
  for (PartyId to : {PartyId::Operator1, PartyId::Operator2}) {
    Message m;
    m.from = PartyId::Coordinator;
    m.to = to;
    m.kind = MessageKind::KeyAnnounce;
    m.subprotocol = Subprotocol::Setup;
    m.plains = {static_cast<double>(coord_->keys_.pk.id.value),
                static_cast<double>(coord_->operator_pks_[0].id.value),
                static_cast<double>(coord_->operator_pks_[1].id.value)};
    bus_.send(std::move(m));
  }

  coord_->schedule_ = make_schedule(cfg_.samples, derive_seed(cfg_.seed, 0x5C4E));
  for (PartyId to : {PartyId::Operator1, PartyId::Operator2}) {
    Message m;
    m.from = PartyId::Coordinator;
    m.to = to;
    m.kind = MessageKind::SchedulePublish;
    m.subprotocol = Subprotocol::Setup;
    m.booleans = coord_->schedule_.assignment;
    bus_.send(std::move(m));
  }
  pump();

  // one pipeline per distinct scheduled key
  for (const std::uint8_t b : coord_->schedule_.assignment) {
    const int k = b;
    if (coord_->pipelines_.count(k)) continue;
    detail::CoordinatorParty::Pipeline p;
    p.key = k;
    const int serving = cfg_.hooks.wrong_key_route ? 3 - k : k;
    p.pk = coord_->operator_pks_[serving - 1];
    p.delegate = operator_party(serving);
    coord_->pipelines_.emplace(k, std::move(p));
  }
  setup_done_ = true;
}

void Session::run_pi1() {
  if (!setup_done_) throw Error("pi1: session not set up");
  auto& backend = backend_;
  for (auto& [k, pipe] : coord_->pipelines_) {
    // Step 2-3: double-encrypted state uploads, outer layer stripped
    for (PartyId to : {PartyId::Operator1, PartyId::Operator2}) {
      Message req;
      req.from = PartyId::Coordinator;
      req.to = to;
      req.kind = MessageKind::Pi1UploadRequest;
      req.subprotocol = Subprotocol::Pi1;
      req.pipeline_key = k;
      bus_.send(std::move(req));
    }
    pump();
    std::optional<he::Ciphertext> skew_sum, v_sum;
    for (const auto& m : drain_coordinator(bus_)) {
      const he::Ciphertext c_skew = backend.decrypt_outer(m.ciphers.at(0), coord_->keys_.sk);
      const he::Ciphertext c_v = backend.decrypt_outer(m.ciphers.at(1), coord_->keys_.sk);
      skew_sum = skew_sum ? backend.add(*skew_sum, c_skew) : c_skew;
      v_sum = v_sum ? backend.add(*v_sum, c_v) : c_v;
    }
    pipe.c_skew_rrel = *skew_sum;
    pipe.c_vrel = *v_sum;

    // Step 4: encrypted cross product h = r_rel x v_rel
    pipe.c_h = backend.mul(pipe.c_skew_rrel, pipe.c_vrel);

    // Step 5: pseudo encrypted division for Y
    const double w_v = coord_->draw_w("pi1.norm.v.k" + std::to_string(k), cfg_.hooks.skip_norm_mask);
    const he::Ciphertext c_w2v = backend.encrypt(he::Plaintext::scalar(w_v * w_v), pipe.pk);
    const he::Ciphertext c_wv = backend.encrypt(he::Plaintext::scalar(w_v), pipe.pk);
    const he::Ciphertext c_div_v = delegated_inverse_norm(k, backend.mul(backend.mul(pipe.c_vrel, pipe.c_vrel), c_w2v));
    const he::Ciphertext unmask_v = backend.mul(c_div_v, c_wv);
    const he::Ciphertext c_y = backend.mul(pipe.c_vrel, unmask_v);

    // skew-embedded v_rel via a second upload round
    for (PartyId to : {PartyId::Operator1, PartyId::Operator2}) {
      Message req;
      req.from = PartyId::Coordinator;
      req.to = to;
      req.kind = MessageKind::Pi1SkewUploadRequest;
      req.subprotocol = Subprotocol::Pi1;
      req.pipeline_key = k;
      bus_.send(std::move(req));
    }
    pump();
    std::optional<he::Ciphertext> skew_v_sum;
    for (const auto& m : drain_coordinator(bus_)) {
      const he::Ciphertext c = backend.decrypt_outer(m.ciphers.at(0), coord_->keys_.sk);
      skew_v_sum = skew_v_sum ? backend.add(*skew_v_sum, c) : c;
    }
    pipe.c_skew_vrel = *skew_v_sum;
    const he::Ciphertext c_skew_y = backend.mul(pipe.c_skew_vrel, unmask_v);

    // fresh mask, pseudo encrypted division for Z
    const double w_h = coord_->draw_w("pi1.norm.h.k" + std::to_string(k), cfg_.hooks.skip_norm_mask);
    const he::Ciphertext c_w2h = backend.encrypt(he::Plaintext::scalar(w_h * w_h), pipe.pk);
    const he::Ciphertext c_wh = backend.encrypt(he::Plaintext::scalar(w_h), pipe.pk);
    const he::Ciphertext c_div_h = delegated_inverse_norm(k, backend.mul(backend.mul(pipe.c_h, pipe.c_h), c_w2h));
    const he::Ciphertext c_z = backend.mul(pipe.c_h, backend.mul(c_div_h, c_wh));

    // Step 6: X = Y x Z
    const he::Ciphertext c_x = backend.mul(c_skew_y, c_z);

    // Step 7: C_Q rows [X; Y; Z], projected to the conjunction plane
    const std::array<he::Ciphertext, 3> rows = {c_x, c_y, c_z};
    const he::Ciphertext c_q = backend.stack_rows(rows);
    Eigen::MatrixXd proj(2, 3);
    proj << 1, 0, 0, 0, 0, 1;
    pipe.c_qxz = backend.plain_mul(encode_mat(proj), c_q);
  }
  pi1_done_ = true;
}

he::Ciphertext Session::delegated_inverse_norm(int pipeline_key, const he::Ciphertext& masked) {
  auto& pipe = coord_->pipelines_.at(pipeline_key);
  Message req;
  req.from = PartyId::Coordinator;
  req.to = pipe.delegate;
  req.kind = MessageKind::Pi1MaskedNormRequest;
  req.subprotocol = Subprotocol::Pi1;
  req.pipeline_key = pipe.key;
  req.ciphers.push_back(masked);
  bus_.send(std::move(req));
  pump();
  auto resp = drain_coordinator(bus_);
  return resp.at(0).ciphers.at(0);
}

void Session::run_pi2() {
  if (!pi1_done_) throw Error("pi2: pi1 has not run");
  auto& backend = backend_;
  coord_->samples_.reserve(cfg_.samples);

  for (auto& [k, pipe] : coord_->pipelines_) {
    // Step 2: covariance-factor / radius / position uploads
    for (PartyId to : {PartyId::Operator1, PartyId::Operator2}) {
      Message req;
      req.from = PartyId::Coordinator;
      req.to = to;
      req.kind = MessageKind::Pi2CovUploadRequest;
      req.subprotocol = Subprotocol::Pi2;
      req.pipeline_key = k;
      bus_.send(std::move(req));
    }
    pump();
    std::optional<he::Ciphertext> r_sum, big_r_sum;
    for (const auto& m : drain_coordinator(bus_)) {
      const he::Ciphertext c_factor = backend.decrypt_outer(m.ciphers.at(0), coord_->keys_.sk);
      const he::Ciphertext c_radius = backend.decrypt_outer(m.ciphers.at(1), coord_->keys_.sk);
      const he::Ciphertext c_r = backend.decrypt_outer(m.ciphers.at(2), coord_->keys_.sk);
      const he::Ciphertext sig_xz = backend.mul(pipe.c_qxz, c_factor);
      if (m.from == PartyId::Operator1) {
        pipe.c_sig_xz_1 = sig_xz;
      } else {
        pipe.c_sig_xz_2 = sig_xz;
      }
      big_r_sum = big_r_sum ? backend.add(*big_r_sum, c_radius) : c_radius;
      r_sum = r_sum ? backend.add(*r_sum, c_r) : c_r;
    }
    pipe.c_rvec = *r_sum;
    pipe.c_big_r = *big_r_sum;

    // Step 3: masked miss distance
    const double w = coord_->draw_w("pi2.missdist.k" + std::to_string(k), cfg_.hooks.skip_missdist_mask);
    pipe.w_sample = w;
    const he::Ciphertext c_w2 = backend.encrypt(he::Plaintext::scalar(w * w), pipe.pk);
    Message req;
    req.from = PartyId::Coordinator;
    req.to = pipe.delegate;
    req.kind = MessageKind::Pi2MissDistRequest;
    req.subprotocol = Subprotocol::Pi2;
    req.pipeline_key = k;
    req.ciphers.push_back(backend.mul(backend.mul(pipe.c_rvec, pipe.c_rvec), c_w2));
    bus_.send(std::move(req));
    pump();
    const he::Ciphertext c_sqrt = drain_coordinator(bus_).at(0).ciphers.at(0);
    Eigen::MatrixXd minus_e1(2, 1);
    minus_e1 << -1, 0;
    pipe.c_r0vec = backend.plain_mul(encode_mat(minus_e1), c_sqrt);

    // Step 5 (fixed part): RHS = w^2 * (R1+R2)^2; squaring happens after the
    // encrypted sum so mixed terms are kept
    if (cfg_.hooks.rhs_linear_bug) {
      pipe.c_rhs = backend.mul(c_w2, pipe.c_big_r);
    } else {
      pipe.c_rhs = backend.mul(c_w2, backend.mul(pipe.c_big_r, pipe.c_big_r));
    }
  }

  // Step 4-5: per-sample masked standard-normal pairs -> C_LHS^j
  for (std::uint64_t j = 0; j < cfg_.samples; ++j) {
    const int k = coord_->schedule_.operator_of(j);
    auto& pipe = coord_->pipelines_.at(k);
    const auto za = coord_->z1_.gauss3_at(j);
    const auto zb = coord_->z2_.gauss3_at(j);
    const double w = pipe.w_sample;
    const Vec3 wz1(w * za[0], w * za[1], w * za[2]);
    const Vec3 wz2(w * zb[0], w * zb[1], w * zb[2]);
    const he::Ciphertext c_s =
        backend.add(backend.mul(pipe.c_sig_xz_1, backend.encrypt(encode_vec(wz1), pipe.pk)),
                    backend.mul(pipe.c_sig_xz_2, backend.encrypt(encode_vec(wz2), pipe.pk)));
    const he::Ciphertext c_diff = backend.add(c_s, pipe.c_r0vec);
    detail::CoordinatorParty::SampleRecord rec;
    rec.index = j;
    rec.pipeline = k;
    rec.lhs = backend.mul(c_diff, c_diff);
    coord_->samples_.push_back(std::move(rec));
  }
  pi2_done_ = true;
}

void Session::run_pi3() {
  if (!pi2_done_) throw Error("pi3: pi2 has not run");
  auto& backend = backend_;
  coord_->results_.assign(cfg_.samples, 0);

  // Step 1-2: per-sample (alpha, beta), masked pairs. A negative alpha is
  // absorbed by swapping the delegated slot order, which keeps ties exact.
  struct Delegated {
    std::uint64_t j;
    he::Ciphertext first, second;
  };
  std::array<std::vector<Delegated>, 2> queues;
  for (const auto& rec : coord_->samples_) {
    const auto& pipe = coord_->pipelines_.at(rec.pipeline);
    const double alpha = coord_->draw_alpha(rec.index);
    const double beta = coord_->draw_beta(rec.index);
    he::Ciphertext first = backend.add(backend.plain_mul(he::Plaintext::scalar(alpha), rec.lhs),
                                       backend.encrypt(he::Plaintext::scalar(beta), pipe.pk));
    he::Ciphertext second = backend.add(backend.plain_mul(he::Plaintext::scalar(alpha), pipe.c_rhs),
                                        backend.encrypt(he::Plaintext::scalar(beta), pipe.pk));
    if (alpha < 0.0) std::swap(first, second);
    const int serving = pipe.delegate == PartyId::Operator1 ? 1 : 2;
    queues[serving - 1].push_back({rec.index, std::move(first), std::move(second)});
  }

  // Step 3-5: batched delegation rounds, responses tallied by sample index
  std::array<std::size_t, 2> cursor = {0, 0};
  const std::size_t batch = cfg_.batch > 0 ? static_cast<std::size_t>(cfg_.batch) : 1024;
  while (cursor[0] < queues[0].size() || cursor[1] < queues[1].size()) {
    for (int o = 0; o < 2; ++o) {
      if (cursor[o] >= queues[o].size()) continue;
      const std::size_t end = std::min(cursor[o] + batch, queues[o].size());
      Message req;
      req.from = PartyId::Coordinator;
      req.to = operator_party(o + 1);
      req.kind = MessageKind::Pi3MaskedPair;
      req.subprotocol = Subprotocol::Pi3;
      req.pipeline_key = coord_->schedule_.operator_of(queues[o][cursor[o]].j);
      for (std::size_t i = cursor[o]; i < end; ++i) {
        req.sample_indices.push_back(queues[o][i].j);
        req.ciphers.push_back(queues[o][i].first);
        req.ciphers.push_back(queues[o][i].second);
      }
      cursor[o] = end;
      bus_.send(std::move(req));
    }
    pump();
    for (const auto& resp : drain_coordinator(bus_)) {
      for (std::size_t i = 0; i < resp.booleans.size(); ++i) {
        coord_->results_[resp.sample_indices.at(i)] = resp.booleans[i];
      }
    }
  }

  // Step 6: tally and publish
  coord_->n_collisions_ = 0;
  for (const std::uint8_t b : coord_->results_) coord_->n_collisions_ += b;
  const double pc =
      static_cast<double>(coord_->n_collisions_) / static_cast<double>(cfg_.samples);
  for (PartyId to : {PartyId::Operator1, PartyId::Operator2}) {
    Message m;
    m.from = PartyId::Coordinator;
    m.to = to;
    m.kind = MessageKind::ResultPublish;
    m.subprotocol = Subprotocol::Pi3;
    m.plains = {pc, static_cast<double>(coord_->n_collisions_), static_cast<double>(cfg_.samples)};
    bus_.send(std::move(m));
  }
  pump();
  pi3_done_ = true;
}

ProtocolOutput Session::run() {
  setup();
  run_pi1();
  run_pi2();
  run_pi3();
  return output();
}

ProtocolOutput Session::output() const {
  if (!pi3_done_) throw Error("protocol output requested before pi3 completed");
  ProtocolOutput out;
  out.samples = cfg_.samples;
  out.n_collisions = coord_->n_collisions_;
  out.pc = static_cast<double>(out.n_collisions) / static_cast<double>(out.samples);
  out.metrics = metrics(bus_.transcript());
  out.max_level = backend_.max_level_observed();
  return out;
}

const Transcript& Session::transcript() const { return bus_.transcript(); }
const Schedule& Session::schedule() const { return coord_->schedule_; }
he::Backend& Session::backend() { return backend_; }
const he::Backend& Session::backend() const { return backend_; }

Mat23 Session::decrypted_q_xz(int pipeline_key) const {
  const auto& pipe = coord_->pipelines_.at(pipeline_key);
  const he::SecretKey& sk =
      pipe.pk.id == op1_->keys().pk.id ? op1_->keys().sk : op2_->keys().sk;
  return backend_.decrypt(pipe.c_qxz, sk).value;
}

std::pair<double, double> Session::decrypted_sample_pair(std::uint64_t j) const {
  const auto& rec = coord_->samples_.at(j);
  const auto& pipe = coord_->pipelines_.at(rec.pipeline);
  const he::SecretKey& sk =
      pipe.pk.id == op1_->keys().pk.id ? op1_->keys().sk : op2_->keys().sk;
  const double w2 = pipe.w_sample * pipe.w_sample;
  return {backend_.decrypt(rec.lhs, sk).as_scalar() / w2,
          backend_.decrypt(pipe.c_rhs, sk).as_scalar() / w2};
}

Session::AuditData Session::audit_data() const {
  AuditData d;
  d.schedule = coord_->schedule_;
  d.masks = coord_->mask_log_;
  d.coordinator_keys = coord_->keys_;
  d.operator_keys = {op1_->keys(), op2_->keys()};
  d.operator_secrets = {op1_->secret(), op2_->secret()};
  for (const auto& [k, pipe] : coord_->pipelines_) d.pipeline_key_ids[k] = pipe.pk.id;
  d.comparison_results = coord_->results_;
  return d;
}

ProtocolOutput run_protocol(const OperatorSecret& o1, const OperatorSecret& o2,
                            const SessionConfig& cfg) {
  Session s(o1, o2, cfg);
  return s.run();
}

}  // namespace epc
