#include "epc/audit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_map>

namespace epc {

const char* to_string(ValueClass c) {
  switch (c) {
    case ValueClass::PayloadScalar: return "payload-scalar";
    case ValueClass::MaskedScalar: return "masked-scalar";
    case ValueClass::Boolean: return "boolean";
    case ValueClass::ScheduleBit: return "schedule-bit";
    case ValueClass::PublicResult: return "public-result";
    case ValueClass::KeyIdValue: return "key-id";
    case ValueClass::OwnSecret: return "own-secret";
    case ValueClass::OwnMask: return "own-mask";
  }
  return "?";
}

namespace {

bool masked_kind(MessageKind k) {
  return k == MessageKind::Pi1MaskedNormRequest || k == MessageKind::Pi2MissDistRequest ||
         k == MessageKind::Pi3MaskedPair;
}

ValueClass plain_class(MessageKind k) {
  switch (k) {
    case MessageKind::KeyAnnounce: return ValueClass::KeyIdValue;
    case MessageKind::ResultPublish: return ValueClass::PublicResult;
    default: return ValueClass::PayloadScalar;
  }
}

ValueClass boolean_class(MessageKind k) {
  return k == MessageKind::SchedulePublish ? ValueClass::ScheduleBit : ValueClass::Boolean;
}

int operator_index(PartyId p) {
  if (p == PartyId::Operator1) return 1;
  if (p == PartyId::Operator2) return 2;
  return 0;
}

void observe_cipher(PartyView& view, const Message& m, const he::Ciphertext& c,
                    const std::vector<he::SecretKey>& keys, const he::Backend& backend) {
  const char* tag = to_string(m.kind);
  he::Ciphertext current = c;
  // strip outer layers while this party owns the outer key
  while (current.layers() > 1) {
    const auto it = std::find_if(keys.begin(), keys.end(),
                                 [&](const he::SecretKey& k) { return k.id == current.key_id(); });
    if (it == keys.end()) break;
    current = backend.decrypt_outer(current, *it);
  }
  view.ciphertexts.push_back({tag, current.key_id(), m.pipeline_key});
  if (current.layers() != 1) return;
  const auto it = std::find_if(keys.begin(), keys.end(),
                               [&](const he::SecretKey& k) { return k.id == current.key_id(); });
  if (it == keys.end()) return;
  const Eigen::MatrixXd value = backend.decrypt(current, *it).value;
  const ValueClass cls = masked_kind(m.kind) ? ValueClass::MaskedScalar : ValueClass::PayloadScalar;
  for (int r = 0; r < value.rows(); ++r) {
    for (int col = 0; col < value.cols(); ++col) {
      Observable obs;
      obs.tag = tag;
      obs.value = value(r, col);
      obs.cls = cls;
      obs.provenance = "seq:" + std::to_string(m.seq);
      obs.pipeline_key = m.pipeline_key;
      view.plaintext.push_back(std::move(obs));
    }
  }
}

}  // namespace

std::vector<PartyView> extract_views(const Transcript& transcript,
                                     const std::vector<PartyContext>& contexts,
                                     const he::Backend& backend) {
  std::vector<PartyView> views;
  views.reserve(contexts.size());
  for (const auto& ctx : contexts) {
    PartyView v;
    v.party = ctx.party;
    v.plaintext = ctx.own;
    views.push_back(std::move(v));
  }
  for (const auto& m : transcript.messages) {
    for (std::size_t vi = 0; vi < contexts.size(); ++vi) {
      if (contexts[vi].party != m.to) continue;
      auto& view = views[vi];
      const char* tag = to_string(m.kind);
      for (std::size_t i = 0; i < m.plains.size(); ++i) {
        Observable obs;
        obs.tag = tag;
        obs.value = m.plains[i];
        obs.cls = plain_class(m.kind);
        obs.provenance = "seq:" + std::to_string(m.seq);
        obs.pipeline_key = m.pipeline_key;
        view.plaintext.push_back(std::move(obs));
      }
      for (std::size_t i = 0; i < m.booleans.size(); ++i) {
        Observable obs;
        obs.tag = tag;
        obs.value = static_cast<double>(m.booleans[i]);
        obs.cls = boolean_class(m.kind);
        obs.provenance = "seq:" + std::to_string(m.seq);
        obs.sample = i < m.sample_indices.size() ? m.sample_indices[i] : kNoSample;
        view.plaintext.push_back(std::move(obs));
      }
      for (std::size_t i = 0; i < m.ciphers.size(); ++i) {
        const std::size_t before = view.plaintext.size();
        observe_cipher(view, m, m.ciphers[i], contexts[vi].secret_keys, backend);
        // pi3 pairs carry one sample index per (first, second) pair
        if (m.kind == MessageKind::Pi3MaskedPair && i / 2 < m.sample_indices.size()) {
          for (std::size_t p = before; p < view.plaintext.size(); ++p) {
            view.plaintext[p].sample = m.sample_indices[i / 2];
          }
        }
      }
    }
  }
  return views;
}

namespace {

struct MaskEntry {
  std::string kind;  // w / alpha / beta
  double value;
};

MaskEntry parse_mask_tag(const Observable& obs) {
  // own:mask:<kind>:<purpose>
  const std::string prefix = "own:mask:";
  std::string rest = obs.tag.substr(prefix.size());
  const auto colon = rest.find(':');
  return {rest.substr(0, colon), obs.value};
}

}  // namespace

AuditReport check_policy(const std::vector<PartyView>& views, const ViewPolicy& policy) {
  AuditReport report;
  report.notes.push_back("per-sample comparison booleans are disclosed to the delegated operator by design");

  const auto violate = [&report](PartyId p, const std::string& tag, ValueClass cls,
                                 std::string detail) {
    report.violations.push_back({p, tag, to_string(cls), std::move(detail)});
  };

  // collect proximity targets: each party's own secret components
  struct Target {
    PartyId owner;
    double value;
  };
  std::vector<Target> targets;
  for (const auto& v : views) {
    for (const auto& obs : v.plaintext) {
      if (obs.cls == ValueClass::OwnSecret && std::abs(obs.value) > 1e-12) {
        targets.push_back({v.party, obs.value});
      }
    }
  }

  for (const auto& v : views) {
    const auto allowed_it = policy.allowed_tags.find(v.party);
    const std::set<std::string> empty;
    const auto& allowed = allowed_it == policy.allowed_tags.end() ? empty : allowed_it->second;

    for (const auto& obs : v.plaintext) {
      if (!allowed.count(obs.tag)) {
        violate(v.party, obs.tag, obs.cls, "plaintext observable outside the allowed view");
        continue;
      }
      // scheduled-recipient gating for delegated masked channels
      const int op = operator_index(v.party);
      if (op != 0 && obs.cls == ValueClass::MaskedScalar) {
        if (obs.sample != kNoSample) {
          if (policy.schedule.operator_of(obs.sample) != op) {
            violate(v.party, obs.tag, obs.cls,
                    "masked pair for sample " + std::to_string(obs.sample) +
                        " delegated to the wrong operator");
          }
        } else if (obs.pipeline_key != 0 && obs.pipeline_key != op) {
          violate(v.party, obs.tag, obs.cls,
                  "pipeline " + std::to_string(obs.pipeline_key) + " delegation served by operator " +
                      std::to_string(op));
        }
      }
      // leak scan against other parties' secret components
      if (policy.proximity_check && obs.provenance != "own" &&
          (obs.cls == ValueClass::PayloadScalar || obs.cls == ValueClass::MaskedScalar)) {
        for (const auto& t : targets) {
          if (t.owner == v.party) continue;
          if (std::abs(obs.value - t.value) <= 1e-9 * std::max(1.0, std::abs(t.value))) {
            violate(v.party, obs.tag, obs.cls, "observable matches another party's secret component");
            break;
          }
        }
      }
    }

    // expected-key discipline for delegated ciphertexts
    if (policy.key_route_check) {
      const int op = operator_index(v.party);
      if (op != 0) {
        const auto key_it = policy.operator_key_ids.find(v.party);
        for (const auto& co : v.ciphertexts) {
          const bool delegated = co.tag == std::string("Pi1MaskedNormRequest") ||
                                 co.tag == std::string("Pi2MissDistRequest") ||
                                 co.tag == std::string("Pi3MaskedPair");
          if (!delegated) continue;
          if (co.pipeline_key != 0 && co.pipeline_key != op) {
            violate(v.party, co.tag, ValueClass::MaskedScalar,
                    "pipeline " + std::to_string(co.pipeline_key) + " ciphertext routed to operator " +
                        std::to_string(op));
          }
          if (key_it != policy.operator_key_ids.end() && !(co.key_id == key_it->second)) {
            violate(v.party, co.tag, ValueClass::MaskedScalar,
                    "delegated ciphertext not under the serving operator's key");
          }
        }
      }
    }

    // mask discipline from the coordinator's own mask log
    if (policy.mask_discipline && v.party == PartyId::Coordinator) {
      std::unordered_map<double, int> occurrences;
      for (const auto& obs : v.plaintext) {
        if (obs.cls != ValueClass::OwnMask) continue;
        const MaskEntry e = parse_mask_tag(obs);
        if (e.kind == "w" || e.kind == "alpha") {
          const double mag = std::abs(e.value);
          if (!(mag >= 0x1p-8 && mag <= 0x1p8)) {
            violate(v.party, obs.tag, obs.cls, "mask magnitude outside [2^-8, 2^8]");
          }
          if (mag == 1.0) {
            violate(v.party, obs.tag, obs.cls, "identity mask: channel transmitted unmasked");
          }
        } else if (e.kind == "beta") {
          if (!(std::abs(e.value) <= 0x1p8)) {
            violate(v.party, obs.tag, obs.cls, "additive mask outside [-2^8, 2^8]");
          }
        }
        occurrences[e.value] += 1;
      }
      for (const auto& [value, count] : occurrences) {
        if (count > 1 && value != 1.0) {
          violate(v.party, "own:mask", ValueClass::OwnMask,
                  "mask value used in " + std::to_string(count) + " distinct masking operations");
        }
      }
    }
  }

  report.pass = report.violations.empty();
  return report;
}

std::string AuditReport::to_text() const {
  std::ostringstream os;
  os << (pass ? "AUDIT PASS" : "AUDIT FAIL") << " (" << violations.size() << " violation(s))\n";
  for (const auto& v : violations) {
    os << "  [" << to_string(v.party) << "] " << v.tag << " (" << v.value_class << "): " << v.detail
       << "\n";
  }
  for (const auto& n : notes) os << "  note: " << n << "\n";
  return os.str();
}

namespace {

void push_secret(std::vector<Observable>& out, const std::string& name, double value) {
  Observable obs;
  obs.tag = "own:secret:" + name;
  obs.value = value;
  obs.cls = ValueClass::OwnSecret;
  obs.provenance = "own";
  out.push_back(std::move(obs));
}

}  // namespace

std::vector<PartyContext> session_contexts(const Session& session) {
  const auto data = session.audit_data();
  std::vector<PartyContext> ctxs(3);

  for (int i = 0; i < 2; ++i) {
    auto& ctx = ctxs[i];
    ctx.party = i == 0 ? PartyId::Operator1 : PartyId::Operator2;
    ctx.secret_keys = {data.operator_keys[i].sk};
    const auto& s = data.operator_secrets[i];
    for (int k = 0; k < 3; ++k) push_secret(ctx.own, "r[" + std::to_string(k) + "]", s.state.r[k]);
    for (int k = 0; k < 3; ++k) push_secret(ctx.own, "v[" + std::to_string(k) + "]", s.state.v[k]);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        push_secret(ctx.own, "cov[" + std::to_string(r) + "][" + std::to_string(c) + "]", s.cov(r, c));
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c <= r; ++c)
        push_secret(ctx.own, "cov_factor[" + std::to_string(r) + "][" + std::to_string(c) + "]",
                    s.cov_factor(r, c));
    push_secret(ctx.own, "radius", s.radius);
  }

  auto& coord = ctxs[2];
  coord.party = PartyId::Coordinator;
  coord.secret_keys = {data.coordinator_keys.sk};
  for (const auto& m : data.masks) {
    Observable obs;
    obs.tag = "own:mask:" + m.purpose;
    obs.value = m.value;
    obs.cls = ValueClass::OwnMask;
    obs.provenance = "own";
    coord.own.push_back(std::move(obs));
  }
  return ctxs;
}

std::vector<PartyView> session_views(const Session& session) {
  return extract_views(session.transcript(), session_contexts(session), session.backend());
}

ViewPolicy default_policy(const Session& session) {
  const auto data = session.audit_data();
  ViewPolicy policy;
  policy.schedule = data.schedule;
  policy.operator_key_ids[PartyId::Operator1] = data.operator_keys[0].pk.id;
  policy.operator_key_ids[PartyId::Operator2] = data.operator_keys[1].pk.id;

  std::set<std::string> common = {"KeyAnnounce", "SchedulePublish", "ResultPublish"};
  std::set<std::string> op_tags = common;
  op_tags.insert("Pi1MaskedNormRequest");
  op_tags.insert("Pi2MissDistRequest");
  op_tags.insert("Pi3MaskedPair");
  std::set<std::string> own_secret_tags;
  // operators may always see their own inputs
  for (const auto& ctx : session_contexts(session)) {
    for (const auto& obs : ctx.own) {
      if (obs.cls == ValueClass::OwnSecret) own_secret_tags.insert(obs.tag);
    }
  }
  auto op_all = op_tags;
  op_all.insert(own_secret_tags.begin(), own_secret_tags.end());
  policy.allowed_tags[PartyId::Operator1] = op_all;
  policy.allowed_tags[PartyId::Operator2] = op_all;

  std::set<std::string> coord_tags = common;
  coord_tags.insert("Pi3CompareResult");
  for (const auto& m : data.masks) coord_tags.insert("own:mask:" + m.purpose);
  policy.allowed_tags[PartyId::Coordinator] = coord_tags;
  return policy;
}

AuditReport audit_session(const Session& session) {
  return check_policy(session_views(session), default_policy(session));
}

double observed_missdist(const Session& session) {
  const auto data = session.audit_data();
  for (const auto& m : session.transcript().messages) {
    if (m.kind != MessageKind::Pi2MissDistRequest) continue;
    const int idx = m.to == PartyId::Operator1 ? 0 : 1;
    return session.backend().decrypt(m.ciphers.at(0), data.operator_keys[idx].sk).as_scalar();
  }
  throw Error("observed_missdist: transcript has no miss-distance delegation");
}

// ---- statistics -----------------------------------------------------------

double kolmogorov_asymptotic_q(double lambda) {
  if (lambda < 1e-8) return 1.0;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * std::exp(-2.0 * k * k * lambda * lambda);
    q += (k % 2 == 1) ? term : -term;
  }
  return std::clamp(q, 0.0, 1.0);
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InsufficientTrials("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double n = static_cast<double>(a.size());
  const double m = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      const double v = a[i];
      while (i < a.size() && a[i] == v) ++i;
      while (j < b.size() && b[j] == v) ++j;
    }
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  const double lambda = std::sqrt(n * m / (n + m)) * d;
  return {d, kolmogorov_asymptotic_q(lambda)};
}

std::string ProbeReport::to_text() const {
  std::ostringstream os;
  os << (pass ? "PROBE PASS" : "PROBE FAIL") << " trials=" << trials
     << " pA=" << dist_a.p_value << " pB=" << dist_b.p_value << " pCross=" << cross.p_value << "\n";
  return os.str();
}

ProbeReport mask_hiding_probe(const std::function<double(double r0, std::uint64_t trial)>& observe,
                              double r0_a, double r0_b, int trials, std::uint64_t seed) {
  if (trials < 1000) throw InsufficientTrials("mask_hiding_probe: at least 1000 trials required");
  if (!(r0_a > 0.0) || !(r0_b > 0.0) || r0_a == r0_b) {
    throw Error("mask_hiding_probe: two distinct positive miss distances required");
  }

  const auto centered_logs = [](std::vector<double> xs) {
    double mean = 0.0;
    for (double& x : xs) {
      if (!(x > 0.0)) throw Error("mask_hiding_probe: nonpositive masked observation");
      x = std::log(x);
      mean += x;
    }
    mean /= static_cast<double>(xs.size());
    for (double& x : xs) x -= mean;
    return xs;
  };

  std::vector<double> obs_a, obs_b;
  obs_a.reserve(trials);
  obs_b.reserve(trials);
  for (int t = 0; t < trials; ++t) {
    obs_a.push_back(observe(r0_a, static_cast<std::uint64_t>(t)));
    obs_b.push_back(observe(r0_b, static_cast<std::uint64_t>(t) + trials));
  }

  // reference: log of the mask law, log(w^2) with log2(w) ~ U[-8, 8]
  const RandomStream ref_rng(seed, streams::kProbe);
  std::vector<double> ref;
  ref.reserve(trials);
  for (int t = 0; t < trials; ++t) {
    ref.push_back(2.0 * std::numbers::ln2 * (16.0 * ref_rng.uniform_at(t) - 8.0));
  }
  double ref_mean = 0.0;
  for (double x : ref) ref_mean += x;
  ref_mean /= static_cast<double>(ref.size());
  for (double& x : ref) x -= ref_mean;

  ProbeReport report;
  report.trials = trials;
  const auto la = centered_logs(obs_a);
  const auto lb = centered_logs(obs_b);
  report.dist_a = ks_two_sample(la, ref);
  report.dist_b = ks_two_sample(lb, ref);
  report.cross = ks_two_sample(la, lb);
  const double alpha = 0.01;
  report.pass = report.dist_a.p_value >= alpha && report.dist_b.p_value >= alpha &&
                report.cross.p_value >= alpha;
  return report;
}

}  // namespace epc
