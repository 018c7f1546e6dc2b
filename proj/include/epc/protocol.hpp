#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epc/geometry.hpp"
#include "epc/he_core.hpp"
#include "epc/netsim.hpp"
#include "epc/rng.hpp"

namespace epc {

// One operator's private input: state, positional covariance, body radius and
// the cached lower Cholesky factor both operators agree to use.
struct OperatorSecret {
  StateVector state;
  Mat3 cov = Mat3::Identity();
  double radius = 1.0;
  Mat3 cov_factor = Mat3::Identity();
};

// Validates the covariance and radius and caches the factor.
OperatorSecret make_operator_secret(const StateVector& state, const Mat3& cov, double radius);

// Published per-sample assignment b(j) in {1, 2}.
struct Schedule {
  std::vector<std::uint8_t> assignment;
  std::uint64_t seed = 0;
  int operator_of(std::uint64_t j) const { return assignment[j]; }
};

Schedule make_schedule(std::uint64_t samples, std::uint64_t seed);

// Deliberate protocol faults for tests and the leakage audit. Never set in
// production paths.
struct TestHooks {
  bool force_unit_masks = false;      // all masks drawn as exactly 1
  bool reuse_masks = false;           // one w reused for every masking operation
  bool skip_norm_mask = false;        // pi1 norm delegations go out unmasked
  bool skip_missdist_mask = false;    // pi2 miss-distance delegation goes out unmasked
  bool wrong_key_route = false;       // pipeline k keyed/routed to the other operator
  bool plaintext_cov_upload = false;  // covariance factor uploaded in the clear
  bool rhs_linear_bug = false;        // regression: RHS built as w^2*R instead of w^2*R^2
};

struct SessionConfig {
  std::uint64_t samples = 10000;
  std::uint64_t seed = 1;
  int batch = 1024;  // pi3 delegations per operator per round
  he::BackendConfig backend;
  TestHooks hooks;
};

struct ProtocolOutput {
  double pc = 0.0;
  std::uint64_t n_collisions = 0;
  std::uint64_t samples = 0;
  std::map<Subprotocol, SubprotocolMetrics> metrics;
  int max_level = 0;
};

// Coordinator-side record of one drawn mask; the audit checks freshness and
// range discipline against this log.
struct MaskRecord {
  std::string purpose;
  double value;
};

namespace detail {
class OperatorParty;
class CoordinatorParty;
}  // namespace detail

// One protocol session between Operator1, Operator2 and the Coordinator.
// All inter-party traffic flows over the in-memory bus; the coordinator
// drives, operators answer. Deterministic for a fixed config.
class Session {
 public:
  Session(const OperatorSecret& o1, const OperatorSecret& o2, const SessionConfig& cfg);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  // Key generation, key announcement, schedule publication, pipeline init.
  // Throws EpochMismatch / InvalidCovariance.
  void setup();
  // Encrypted construction of Q_XZ per active pipeline.
  void run_pi1();
  // Encrypted per-sample LHS/RHS of the collision inequality.
  void run_pi2();
  // Masked comparisons, tally, result publication.
  void run_pi3();

  ProtocolOutput run();  // setup + pi1 + pi2 + pi3
  ProtocolOutput output() const;

  const Transcript& transcript() const;
  const Schedule& schedule() const;
  he::Backend& backend();
  const he::Backend& backend() const;

  // Decrypted Q_XZ of a pipeline (test/verification surface).
  Mat23 decrypted_q_xz(int pipeline_key) const;
  // Decrypted (LHS, RHS) of one sample, unmasked by the pipeline w^2.
  std::pair<double, double> decrypted_sample_pair(std::uint64_t j) const;

  // ---- audit surface -------------------------------------------------
  struct AuditData {
    Schedule schedule;
    std::vector<MaskRecord> masks;                  // coordinator randomness
    he::KeyPair coordinator_keys;
    std::array<he::KeyPair, 2> operator_keys;       // index 0 -> Operator1
    std::array<OperatorSecret, 2> operator_secrets;
    std::map<int, he::KeyId> pipeline_key_ids;      // pipeline index -> operator key
    std::vector<std::uint8_t> comparison_results;   // coordinator's tally inputs
  };
  AuditData audit_data() const;

 private:
  void pump();
  he::Ciphertext delegated_inverse_norm(int pipeline_key, const he::Ciphertext& masked);

  SessionConfig cfg_;
  he::Backend backend_;
  Bus bus_;
  std::unique_ptr<detail::OperatorParty> op1_;
  std::unique_ptr<detail::OperatorParty> op2_;
  std::unique_ptr<detail::CoordinatorParty> coord_;
  bool setup_done_ = false;
  bool pi1_done_ = false;
  bool pi2_done_ = false;
  bool pi3_done_ = false;
};

// Composes session setup and the three subprotocols.
ProtocolOutput run_protocol(const OperatorSecret& o1, const OperatorSecret& o2,
                            const SessionConfig& cfg);

// pi3 masking/inference core, exposed for direct verification: masks the pair
// with (alpha, beta), evaluates the delegated "first <= second" comparison,
// and infers the original relation. Exact for both alpha signs and ties.
bool pi3_masked_compare(double lhs, double rhs, double alpha, double beta);

}  // namespace epc
