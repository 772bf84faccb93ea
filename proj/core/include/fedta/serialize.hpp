#pragma once

// JSON wire formats. Doubles are written in shortest round-trip form, so every
// value read back is bit-identical to the one written.

#include <stdexcept>
#include <string>

#include "fedta/anchor.hpp"
#include "fedta/enhancement.hpp"
#include "fedta/federation.hpp"

namespace fedta {

inline constexpr int kWireVersion = 1;

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::string knowledge_base_to_json(const KnowledgeBase& kb);
KnowledgeBase knowledge_base_from_json(const std::string& text);

std::string tail_anchor_set_to_json(const TailAnchorSet& set);
TailAnchorSet tail_anchor_set_from_json(const std::string& text);

std::string prototype_table_to_json(const PrototypeTable& table);
PrototypeTable prototype_table_from_json(const std::string& text);

/// Versioned envelope {version, round, payload}.
std::string encode_message(const ClientUpdateMessage& msg);
std::string encode_message(const GlobalStateMessage& msg);
ClientUpdateMessage decode_client_update(const std::string& text);
GlobalStateMessage decode_global_state(const std::string& text);

}  // namespace fedta
