#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "epc/protocol.hpp"

namespace epc {

inline constexpr std::uint64_t kNoSample = ~0ull;

enum class ValueClass {
  PayloadScalar,  // raw payload value observed in the clear
  MaskedScalar,   // value protected by a multiplicative/affine mask
  Boolean,
  ScheduleBit,
  PublicResult,
  KeyIdValue,
  OwnSecret,      // a party's own private input component
  OwnMask,        // coordinator-drawn mask
};

const char* to_string(ValueClass c);

struct Observable {
  std::string tag;  // message kind name, or own:...
  double value = 0.0;
  ValueClass cls = ValueClass::PayloadScalar;
  std::string provenance;  // "seq:<n>" or "own"
  std::uint64_t sample = kNoSample;
  int pipeline_key = 0;
};

struct CipherObservable {
  std::string tag;
  he::KeyId key_id;
  int pipeline_key = 0;
};

// Everything one party can see: plaintext observables reconstructed from the
// transcript with that party's keys, plus opaque ciphertext sightings.
struct PartyView {
  PartyId party = PartyId::Coordinator;
  std::vector<Observable> plaintext;
  std::vector<CipherObservable> ciphertexts;
};

// What a party brings to the table on its own: its secret keys and its own
// inputs/randomness (the latter double as proximity targets for the leak
// scan when owned by someone else).
struct PartyContext {
  PartyId party = PartyId::Coordinator;
  std::vector<he::SecretKey> secret_keys;
  std::vector<Observable> own;
};

std::vector<PartyView> extract_views(const Transcript& transcript,
                                     const std::vector<PartyContext>& contexts,
                                     const he::Backend& backend);

// Declared allowed views. Tag sets gate plaintext observables; the schedule
// and expected key map gate which operator may serve which sample/pipeline.
struct ViewPolicy {
  std::map<PartyId, std::set<std::string>> allowed_tags;
  Schedule schedule;
  std::map<PartyId, he::KeyId> operator_key_ids;
  bool mask_discipline = true;
  bool key_route_check = true;
  bool proximity_check = true;
};

struct Violation {
  PartyId party;
  std::string tag;
  std::string value_class;
  std::string detail;
};

struct AuditReport {
  bool pass = true;
  std::vector<Violation> violations;
  std::vector<std::string> notes;
  std::string to_text() const;
};

AuditReport check_policy(const std::vector<PartyView>& views, const ViewPolicy& policy);

// Session conveniences. The auditor is a test harness: it holds every
// party's keys and secrets and replays the transcript against the policy.
std::vector<PartyContext> session_contexts(const Session& session);
std::vector<PartyView> session_views(const Session& session);
ViewPolicy default_policy(const Session& session);
AuditReport audit_session(const Session& session);

// Masked miss-distance value the delegated operator observed (probe channel).
double observed_missdist(const Session& session);

// ---- statistics -----------------------------------------------------------

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov with the asymptotic p-value.
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

// Q_KS(lambda) = 2 * sum_k (-1)^(k-1) exp(-2 k^2 lambda^2)
double kolmogorov_asymptotic_q(double lambda);

struct ProbeReport {
  bool pass = false;
  int trials = 0;
  KsResult dist_a;  // observations at r0_a vs the mask law
  KsResult dist_b;  // observations at r0_b vs the mask law
  KsResult cross;   // r0_a observations vs r0_b observations
  std::string to_text() const;
};

// Statistical hiding probe for the masked miss-distance channel. `observe`
// must return the operator-visible masked value w^2*r0^2 for a fresh session
// (trial index selects the session seed). Passes when, after log-transform
// and centering, both observation sets match the mask law and each other
// (two-sample KS, significance 0.01). Requires trials >= 1000.
ProbeReport mask_hiding_probe(const std::function<double(double r0, std::uint64_t trial)>& observe,
                              double r0_a, double r0_b, int trials, std::uint64_t seed);

}  // namespace epc
