#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epc/errors.hpp"
#include "epc/he_core.hpp"

namespace epc {

enum class PartyId { Operator1, Operator2, Coordinator };

enum class Subprotocol { Setup, Pi1, Pi2, Pi3 };

enum class MessageKind {
  KeyAnnounce,
  SchedulePublish,
  Pi1UploadRequest,
  Pi1DoubleEncUpload,
  Pi1SkewUploadRequest,
  Pi1SkewVelUpload,
  Pi1MaskedNormRequest,
  Pi1MaskedNormResponse,
  Pi2CovUploadRequest,
  Pi2CovUpload,
  Pi2MissDistRequest,
  Pi2MissDistResponse,
  Pi3MaskedPair,
  Pi3CompareResult,
  ResultPublish,
};

const char* to_string(PartyId p);
const char* to_string(Subprotocol s);
const char* to_string(MessageKind k);

struct Message {
  std::uint64_t seq = 0;  // assigned by the bus, strictly increasing
  PartyId from = PartyId::Coordinator;
  PartyId to = PartyId::Coordinator;
  MessageKind kind = MessageKind::KeyAnnounce;
  Subprotocol subprotocol = Subprotocol::Setup;
  int pipeline_key = 0;  // operator key index this payload is encrypted for (0 = n/a)
  std::vector<he::Ciphertext> ciphers;
  std::vector<double> plains;
  std::vector<std::uint8_t> booleans;
  std::vector<std::uint64_t> sample_indices;
};

std::size_t message_bytes(const Message& m);

struct SubprotocolMetrics {
  std::uint64_t messages = 0;
  std::uint64_t rounds = 0;  // contiguous bursts of coordinator-outbound traffic
  std::uint64_t ciphertexts = 0;
  std::uint64_t bytes = 0;
};

struct Transcript {
  std::vector<Message> messages;
};

// Rounds count the request bursts: a maximal run of coordinator-to-operator
// messages is one round (the responses that follow belong to it).
std::map<Subprotocol, SubprotocolMetrics> metrics(const Transcript& t);

std::string metrics_csv(const std::map<Subprotocol, SubprotocolMetrics>& m);

// Line-delimited records {seq, from, to, kind, subprotocol, bytes}; payload
// envelopes are hex-dumped only when payload_dump is set.
std::string transcript_export(const Transcript& t, bool payload_dump = false);

// In-memory bus between the three parties. FIFO per directed edge; every
// send appends to the transcript. Direct operator-to-operator traffic is
// not part of the architecture and is rejected.
class Bus {
 public:
  void register_party(PartyId p);
  std::uint64_t send(Message msg);
  std::optional<Message> deliver(PartyId to);
  bool has_pending(PartyId to) const;
  const Transcript& transcript() const { return transcript_; }

 private:
  bool registered(PartyId p) const;
  void check_route(const Message& m) const;

  std::vector<PartyId> parties_;
  std::map<std::pair<int, int>, std::deque<Message>> queues_;
  Transcript transcript_;
  std::uint64_t next_seq_ = 1;
};

}  // namespace epc
