#include "fedta/serialize.hpp"

#include <json.hpp>

namespace fedta {

using nlohmann::json;

namespace {

json mat_to_json(const Mat& m) { return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}}; }

Mat mat_from_json(const json& j) {
  Mat m;
  m.rows = j.at("rows").get<std::size_t>();
  m.cols = j.at("cols").get<std::size_t>();
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols) throw FormatError("matrix: data length does not match shape");
  return m;
}

json kb_json(const KnowledgeBase& kb) {
  json entries = json::array();
  for (const auto& e : kb.entries) {
    entries.push_back({{"key", e.key}, {"tokens", mat_to_json(e.tokens)}, {"frozen", e.frozen}});
  }
  return json{{"M", kb.entries.size()},
              {"tokens_per_ie", kb.tokens_per_ie},
              {"d", kb.dim},
              {"entries", std::move(entries)}};
}

KnowledgeBase kb_from(const json& j) {
  KnowledgeBase kb;
  kb.tokens_per_ie = j.at("tokens_per_ie").get<std::size_t>();
  kb.dim = j.at("d").get<std::size_t>();
  const auto m = j.at("M").get<std::size_t>();
  for (const auto& e : j.at("entries")) {
    InputEnhancementEntry entry;
    entry.key = e.at("key").get<Vec>();
    entry.tokens = mat_from_json(e.at("tokens"));
    entry.frozen = e.at("frozen").get<bool>();
    kb.entries.push_back(std::move(entry));
  }
  if (kb.entries.size() != m) throw FormatError("knowledge base: entry count does not match M");
  try {
    kb.validate();
  } catch (const NumericError& err) {
    throw FormatError(err.what());
  }
  return kb;
}

json protos_json(const PrototypeTable& table) {
  json out = json::object();
  for (const auto& [label, v] : table) out[std::to_string(label)] = v;
  return out;
}

PrototypeTable protos_from(const json& j) {
  PrototypeTable table;
  for (const auto& [key, value] : j.items()) {
    try {
      table.set(std::stoi(key), value.get<Vec>());
    } catch (const NumericError& err) {
      throw FormatError(err.what());
    }
  }
  return table;
}

json globals_json(const GlobalPrototypes& globals) {
  json out = json::object();
  for (const auto& [label, g] : globals) out[std::to_string(label)] = {{"vec", g.vec}, {"fixed", g.fixed}};
  return out;
}

GlobalPrototypes globals_from(const json& j) {
  GlobalPrototypes out;
  for (const auto& [key, value] : j.items()) {
    out[std::stoi(key)] = {value.at("vec").get<Vec>(), value.at("fixed").get<bool>()};
  }
  return out;
}

json head_json(const LinearHead& h) { return {{"weights", mat_to_json(h.weights)}, {"bias", h.bias}}; }

LinearHead head_from(const json& j) {
  LinearHead h;
  h.weights = mat_from_json(j.at("weights"));
  h.bias = j.at("bias").get<Vec>();
  return h;
}

json envelope(std::size_t round, json payload) {
  return json{{"version", kWireVersion}, {"round", round}, {"payload", std::move(payload)}};
}

json open_envelope(const std::string& text, const char* kind) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string(kind) + ": " + e.what());
  }
  if (j.at("version").get<int>() != kWireVersion) {
    throw FormatError(std::string(kind) + ": unsupported wire version");
  }
  if (j.at("payload").at("kind").get<std::string>() != kind) {
    throw FormatError(std::string("expected ") + kind + " payload");
  }
  return j;
}

template <typename Fn>
auto guarded(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string knowledge_base_to_json(const KnowledgeBase& kb) { return kb_json(kb).dump(); }

KnowledgeBase knowledge_base_from_json(const std::string& text) {
  return guarded("knowledge base", [&] { return kb_from(json::parse(text)); });
}

std::string tail_anchor_set_to_json(const TailAnchorSet& set) {
  json entries = json::array();
  for (const auto& e : set.entries) {
    entries.push_back({{"key", e.key},
                       {"anchor", e.anchor},
                       {"mask", e.mask},
                       {"frozen", e.frozen},
                       {"locked", e.locked}});
  }
  return json{{"m", set.entries.size()},
              {"d", set.dim},
              {"rule", set.rule == MixRule::kConvex ? "convex" : "random-mask"},
              {"entries", std::move(entries)}}
      .dump();
}

TailAnchorSet tail_anchor_set_from_json(const std::string& text) {
  return guarded("tail anchor set", [&] {
    const json j = json::parse(text);
    TailAnchorSet set;
    set.dim = j.at("d").get<std::size_t>();
    const auto rule = j.at("rule").get<std::string>();
    if (rule == "convex") {
      set.rule = MixRule::kConvex;
    } else if (rule == "random-mask") {
      set.rule = MixRule::kRandomMask;
    } else {
      throw FormatError("tail anchor set: unknown mix rule '" + rule + "'");
    }
    for (const auto& e : j.at("entries")) {
      TailAnchorEntry entry;
      entry.key = e.at("key").get<Vec>();
      entry.anchor = e.at("anchor").get<Vec>();
      entry.mask = e.at("mask").get<Vec>();
      entry.frozen = e.at("frozen").get<bool>();
      entry.locked = e.at("locked").get<bool>();
      set.entries.push_back(std::move(entry));
    }
    if (set.entries.size() != j.at("m").get<std::size_t>()) {
      throw FormatError("tail anchor set: entry count does not match m");
    }
    try {
      set.validate();
    } catch (const NumericError& err) {
      throw FormatError(err.what());
    }
    return set;
  });
}

std::string prototype_table_to_json(const PrototypeTable& table) { return protos_json(table).dump(); }

PrototypeTable prototype_table_from_json(const std::string& text) {
  return guarded("prototype table", [&] { return protos_from(json::parse(text)); });
}

std::string encode_message(const ClientUpdateMessage& msg) {
  json payload{{"kind", "client_update"},
               {"client_id", msg.client_id},
               {"kb", kb_json(msg.kb)},
               {"prototypes", protos_json(msg.prototypes)}};
  if (msg.head) payload["head"] = head_json(*msg.head);
  return envelope(msg.round, std::move(payload)).dump();
}

std::string encode_message(const GlobalStateMessage& msg) {
  json payload{{"kind", "global_state"},
               {"kb", kb_json(msg.kb)},
               {"prototypes", globals_json(msg.prototypes)}};
  if (msg.head) payload["head"] = head_json(*msg.head);
  return envelope(msg.round, std::move(payload)).dump();
}

ClientUpdateMessage decode_client_update(const std::string& text) {
  return guarded("client update", [&] {
    const json j = open_envelope(text, "client_update");
    const json& p = j.at("payload");
    ClientUpdateMessage msg;
    msg.round = j.at("round").get<std::size_t>();
    msg.client_id = p.at("client_id").get<int>();
    msg.kb = kb_from(p.at("kb"));
    msg.prototypes = protos_from(p.at("prototypes"));
    if (p.contains("head")) msg.head = head_from(p.at("head"));
    return msg;
  });
}

GlobalStateMessage decode_global_state(const std::string& text) {
  return guarded("global state", [&] {
    const json j = open_envelope(text, "global_state");
    const json& p = j.at("payload");
    GlobalStateMessage msg;
    msg.round = j.at("round").get<std::size_t>();
    msg.kb = kb_from(p.at("kb"));
    msg.prototypes = globals_from(p.at("prototypes"));
    if (p.contains("head")) msg.head = head_from(p.at("head"));
    return msg;
  });
}

}  // namespace fedta
