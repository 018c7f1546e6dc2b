#include "epc/netsim.hpp"

#include <algorithm>
#include <sstream>

namespace epc {

const char* to_string(PartyId p) {
  switch (p) {
    case PartyId::Operator1: return "operator1";
    case PartyId::Operator2: return "operator2";
    case PartyId::Coordinator: return "coordinator";
  }
  return "?";
}

const char* to_string(Subprotocol s) {
  switch (s) {
    case Subprotocol::Setup: return "setup";
    case Subprotocol::Pi1: return "pi1";
    case Subprotocol::Pi2: return "pi2";
    case Subprotocol::Pi3: return "pi3";
  }
  return "?";
}

const char* to_string(MessageKind k) {
  switch (k) {
    case MessageKind::KeyAnnounce: return "KeyAnnounce";
    case MessageKind::SchedulePublish: return "SchedulePublish";
    case MessageKind::Pi1UploadRequest: return "Pi1UploadRequest";
    case MessageKind::Pi1DoubleEncUpload: return "Pi1DoubleEncUpload";
    case MessageKind::Pi1SkewUploadRequest: return "Pi1SkewUploadRequest";
    case MessageKind::Pi1SkewVelUpload: return "Pi1SkewVelUpload";
    case MessageKind::Pi1MaskedNormRequest: return "Pi1MaskedNormRequest";
    case MessageKind::Pi1MaskedNormResponse: return "Pi1MaskedNormResponse";
    case MessageKind::Pi2CovUploadRequest: return "Pi2CovUploadRequest";
    case MessageKind::Pi2CovUpload: return "Pi2CovUpload";
    case MessageKind::Pi2MissDistRequest: return "Pi2MissDistRequest";
    case MessageKind::Pi2MissDistResponse: return "Pi2MissDistResponse";
    case MessageKind::Pi3MaskedPair: return "Pi3MaskedPair";
    case MessageKind::Pi3CompareResult: return "Pi3CompareResult";
    case MessageKind::ResultPublish: return "ResultPublish";
  }
  return "?";
}

namespace {

bool from_coordinator(MessageKind k) {
  switch (k) {
    case MessageKind::SchedulePublish:
    case MessageKind::Pi1UploadRequest:
    case MessageKind::Pi1SkewUploadRequest:
    case MessageKind::Pi1MaskedNormRequest:
    case MessageKind::Pi2CovUploadRequest:
    case MessageKind::Pi2MissDistRequest:
    case MessageKind::Pi3MaskedPair:
    case MessageKind::ResultPublish:
      return true;
    case MessageKind::KeyAnnounce:  // either direction
      return true;
    default:
      return false;
  }
}

bool from_operator(MessageKind k) {
  switch (k) {
    case MessageKind::KeyAnnounce:
    case MessageKind::Pi1DoubleEncUpload:
    case MessageKind::Pi1SkewVelUpload:
    case MessageKind::Pi1MaskedNormResponse:
    case MessageKind::Pi2CovUpload:
    case MessageKind::Pi2MissDistResponse:
    case MessageKind::Pi3CompareResult:
      return true;
    default:
      return false;
  }
}

int party_index(PartyId p) { return static_cast<int>(p); }

}  // namespace

std::size_t message_bytes(const Message& m) {
  std::size_t n = 16;  // seq, routing and tags
  for (const auto& c : m.ciphers) n += he::Backend::envelope_size(c);
  n += m.plains.size() * 8;
  n += m.booleans.size();
  n += m.sample_indices.size() * 8;
  return n;
}

void Bus::register_party(PartyId p) {
  if (!registered(p)) parties_.push_back(p);
}

bool Bus::registered(PartyId p) const {
  return std::find(parties_.begin(), parties_.end(), p) != parties_.end();
}

void Bus::check_route(const Message& m) const {
  if (!registered(m.from) || !registered(m.to)) {
    throw UnknownParty("bus: unregistered party on message route");
  }
  if (m.from == m.to) {
    throw IllegalRoute("bus: self-addressed message");
  }
  const bool op_from = m.from != PartyId::Coordinator;
  const bool op_to = m.to != PartyId::Coordinator;
  if (op_from && op_to) {
    throw IllegalRoute("bus: operators have no direct link");
  }
  if (op_from && !from_operator(m.kind)) {
    throw IllegalRoute(std::string("bus: ") + to_string(m.kind) + " not legal from an operator");
  }
  if (!op_from && !from_coordinator(m.kind)) {
    throw IllegalRoute(std::string("bus: ") + to_string(m.kind) + " not legal from the coordinator");
  }
}

std::uint64_t Bus::send(Message msg) {
  check_route(msg);
  msg.seq = next_seq_++;
  transcript_.messages.push_back(msg);
  queues_[{party_index(msg.from), party_index(msg.to)}].push_back(std::move(msg));
  return transcript_.messages.back().seq;
}

std::optional<Message> Bus::deliver(PartyId to) {
  // lowest sequence number across this party's inbound edges
  std::deque<Message>* best = nullptr;
  for (auto& [edge, q] : queues_) {
    if (edge.second != party_index(to) || q.empty()) continue;
    if (!best || q.front().seq < best->front().seq) best = &q;
  }
  if (!best) return std::nullopt;
  Message m = std::move(best->front());
  best->pop_front();
  return m;
}

bool Bus::has_pending(PartyId to) const {
  for (const auto& [edge, q] : queues_) {
    if (edge.second == party_index(to) && !q.empty()) return true;
  }
  return false;
}

std::map<Subprotocol, SubprotocolMetrics> metrics(const Transcript& t) {
  std::map<Subprotocol, SubprotocolMetrics> out;
  std::map<Subprotocol, bool> in_outbound_run;
  for (const auto& m : t.messages) {
    auto& row = out[m.subprotocol];
    row.messages += 1;
    row.ciphertexts += m.ciphers.size();
    row.bytes += message_bytes(m);
    const bool outbound = m.from == PartyId::Coordinator;
    auto& running = in_outbound_run[m.subprotocol];
    if (outbound && !running) row.rounds += 1;
    running = outbound;
  }
  return out;
}

std::string metrics_csv(const std::map<Subprotocol, SubprotocolMetrics>& m) {
  std::ostringstream os;
  os << "subprotocol,messages,rounds,ciphertexts,bytes\n";
  for (const auto& [sp, row] : m) {
    os << to_string(sp) << ',' << row.messages << ',' << row.rounds << ',' << row.ciphertexts
       << ',' << row.bytes << '\n';
  }
  return os.str();
}

std::string transcript_export(const Transcript& t, bool payload_dump) {
  std::ostringstream os;
  for (const auto& m : t.messages) {
    os << "{\"seq\":" << m.seq << ",\"from\":\"" << to_string(m.from) << "\",\"to\":\""
       << to_string(m.to) << "\",\"kind\":\"" << to_string(m.kind) << "\",\"subprotocol\":\""
       << to_string(m.subprotocol) << "\",\"bytes\":" << message_bytes(m);
    if (payload_dump) {
      os << ",\"plains\":[";
      for (std::size_t i = 0; i < m.plains.size(); ++i) {
        if (i) os << ',';
        os.precision(17);
        os << m.plains[i];
      }
      os << "],\"cipher_nonces\":[";
      for (std::size_t i = 0; i < m.ciphers.size(); ++i) {
        if (i) os << ',';
        os << m.ciphers[i].nonce();
      }
      os << ']';
    }
    os << "}\n";
  }
  return os.str();
}

}  // namespace epc
