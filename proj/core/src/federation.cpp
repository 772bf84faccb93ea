#include "fedta/federation.hpp"

#include <algorithm>
#include <future>
#include <numeric>

#include "fedta/serialize.hpp"

namespace fedta {

// --- methods -------------------------------------------------------------------

std::string to_string(Method m) {
  switch (m) {
    case Method::kFedTA: return "fedta";
    case Method::kNoTailAnchor: return "fedta-no-ta";
    case Method::kNoFusion: return "fedta-no-sikf";
    case Method::kNoPrototypeSelection: return "fedta-no-bgps";
    case Method::kFedAvgHead: return "fedavg-head";
    case Method::kFrozenHead: return "frozen-head";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::kFedTA, Method::kNoTailAnchor, Method::kNoFusion,
                   Method::kNoPrototypeSelection, Method::kFedAvgHead, Method::kFrozenHead}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + name + "'");
}

bool uses_enhancement(Method m) { return !is_head_baseline(m); }
bool uses_anchors(Method m) { return uses_enhancement(m) && m != Method::kNoTailAnchor; }
bool is_head_baseline(Method m) { return m == Method::kFedAvgHead || m == Method::kFrozenHead; }

PrototypeTable to_table(const GlobalPrototypes& globals) {
  PrototypeTable t;
  for (const auto& [label, g] : globals) t.set(label, g.vec);
  return t;
}

std::vector<int> fixed_classes(const GlobalPrototypes& globals) {
  std::vector<int> out;
  for (const auto& [label, g] : globals) {
    if (g.fixed) out.push_back(label);
  }
  return out;
}

// --- client --------------------------------------------------------------------

ClientState ClientState::create(int client_id, std::size_t num_classes, std::size_t dim,
                                const ClientConfig& cfg, std::uint64_t seed) {
  ClientState s;
  s.client_id = client_id;
  s.seed = seed;
  Rng rng(derive_seed(seed, 0x1A17));
  if (uses_enhancement(cfg.method)) {
    s.kb = KnowledgeBase::initialize(cfg.base_size, cfg.tokens_per_ie, dim, rng);
    s.ta_set = TailAnchorSet::initialize(cfg.anchor_pool, dim, rng, cfg.mix_rule, cfg.stage2.mix_alpha);
  } else {
    s.kb.dim = dim;
    s.kb.tokens_per_ie = cfg.tokens_per_ie;
    s.ta_set.dim = dim;
  }
  s.head_e = LinearHead(num_classes, dim);
  s.head_ta = LinearHead(num_classes, dim);
  return s;
}

namespace {

std::vector<FeatureSample> frozen_features(const Dataset& data, const Encoder& encoder,
                                           const KnowledgeBase* kb, std::size_t top_n) {
  std::vector<FeatureSample> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    Vec f = kb != nullptr ? enhanced_feature(encoder, *kb, s.features, top_n)
                          : encoder.encode(encoder.embed(s.features));
    out.push_back({s.label, std::move(f)});
  }
  return out;
}

void train_head_only(const std::vector<FeatureSample>& data, LinearHead& head,
                     const StageOneHyper& hyper, Rng& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t stop = std::min(order.size(), start + hyper.batch_size);
      const double w = 1.0 / static_cast<double>(stop - start);
      HeadGrad acc(head);
      for (std::size_t b = start; b < stop; ++b) {
        const auto& fs = data[order[b]];
        head_cross_entropy(head, fs.f_out, static_cast<std::size_t>(fs.label), &acc, w);
      }
      sgd_step(head, acc, hyper.learning_rate);
    }
  }
}

}  // namespace

ClientUpdateMessage client_train_task(ClientState& state, const Dataset& task_data,
                                      const Encoder& encoder, const ClientConfig& cfg,
                                      bool completes_task) {
  if (task_data.empty()) throw NumericError("client_train_task: empty task data");
  Rng rng(derive_seed(state.seed, 0x7A5C, state.comm_round));

  ClientUpdateMessage msg;
  msg.client_id = state.client_id;
  msg.round = state.comm_round;

  if (is_head_baseline(cfg.method)) {
    const auto features = frozen_features(task_data, encoder, nullptr, 0);
    train_head_only(features, state.head_e, cfg.stage1, rng);
    state.local_prototypes = compute_local_prototypes(features, state.ta_set, 1.0, false).table;
    msg.head = state.head_e;
  } else {
    state.kb.unfreeze_all();
    state.ta_set.unfreeze_unlocked();
    train_input_enhancement(task_data, state.kb, state.head_e, encoder, cfg.stage1, rng);

    const bool anchors = uses_anchors(cfg.method);
    const auto features = frozen_features(task_data, encoder, &state.kb, cfg.stage1.top_n);
    train_tail_anchors(features, state.ta_set, state.head_ta, to_table(state.globals), cfg.stage2,
                       rng, anchors);
    LocalPrototypes local = compute_local_prototypes(features, state.ta_set, cfg.stage2.mix_alpha, anchors);
    for (const auto& [anchor, classes] : local.routing) {
      state.anchor_classes[anchor].insert(classes.begin(), classes.end());
    }
    state.local_prototypes = std::move(local.table);
    msg.kb = state.kb;
  }

  for (const auto& s : task_data) state.known_classes.insert(s.label);
  msg.prototypes = state.local_prototypes;
  ++state.comm_round;
  if (completes_task) ++state.task_cursor;
  return msg;
}

void install_global_state(ClientState& state, const GlobalStateMessage& msg, const ClientConfig& cfg) {
  if (cfg.method == Method::kFrozenHead) return;
  if (is_head_baseline(cfg.method)) {
    if (msg.head) state.head_e = *msg.head;
  } else {
    state.kb = msg.kb;
  }
  state.globals = msg.prototypes;
  for (const auto& [label, g] : msg.prototypes) state.known_classes.insert(label);

  if (cfg.lock_fixed_anchors && uses_anchors(cfg.method)) {
    for (const auto& [anchor, classes] : state.anchor_classes) {
      const bool serves_fixed = std::any_of(classes.begin(), classes.end(), [&](int c) {
        auto it = state.globals.find(c);
        return it != state.globals.end() && it->second.fixed;
      });
      if (serves_fixed) {
        state.ta_set.entries[anchor].locked = true;
        state.ta_set.entries[anchor].frozen = true;
      }
    }
  }
}

// --- fusion --------------------------------------------------------------------

DistillationGrads distillation_loss_and_grads(const KnowledgeBase& student, ConstSpan raw,
                                              const std::vector<Vec>& teacher_features,
                                              const Encoder& encoder, std::size_t top_n,
                                              double key_weight, std::span<const std::size_t> selected) {
  require(!teacher_features.empty(), "distillation: no teacher features");
  const TokenSequence e = encoder.embed(raw);
  const Vec query = ie_query_key(encoder, e);

  DistillationGrads out;
  out.selected.assign(selected.begin(), selected.end());
  if (out.selected.empty()) out.selected = query_ie(query, student, top_n);

  const TokenSequence enhanced = enhance(e, student, out.selected);
  const Vec v = encoder.encode(enhanced);
  const double d = static_cast<double>(v.size());
  const double inv_teachers = 1.0 / static_cast<double>(teacher_features.size());

  Vec cot(v.size(), 0.0);
  for (const Vec& t : teacher_features) {
    require(t.size() == v.size(), "distillation: teacher feature dim mismatch");
    double sq = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double diff = v[k] - t[k];
      sq += diff * diff;
      cot[k] += inv_teachers * 2.0 * diff / d;
    }
    out.mse_loss += inv_teachers * sq / d;
  }

  std::vector<std::size_t> slots(out.selected.size() * student.tokens_per_ie);
  std::iota(slots.begin(), slots.end(), 0);
  const auto slot_grads = encoder.encode_vjp(enhanced, cot, slots);

  double key_loss = 0.0;
  for (std::size_t s = 0; s < out.selected.size(); ++s) {
    Mat g(student.tokens_per_ie, student.dim);
    for (std::size_t t = 0; t < student.tokens_per_ie; ++t) {
      const Vec& src = slot_grads[s * student.tokens_per_ie + t];
      std::copy(src.begin(), src.end(), g.row(t).begin());
    }
    out.token_grads.push_back(std::move(g));

    const Vec& key = student.entries[out.selected[s]].key;
    key_loss += cosine_distance(query, key);
    Vec kg(student.dim, 0.0);
    if (key_weight != 0.0) {
      kg = cosine_distance_grad(query, key);
      scale(kg, key_weight);
    }
    out.key_grads.push_back(std::move(kg));
  }
  out.loss = out.mse_loss + key_weight * key_loss;
  return out;
}

namespace {

std::vector<std::vector<Vec>> teacher_table(const std::vector<KnowledgeBase>& bases,
                                            std::size_t target, const Dataset& surrogate,
                                            const Encoder& encoder, std::size_t top_n) {
  std::vector<std::vector<Vec>> out(surrogate.size());
  for (std::size_t s = 0; s < surrogate.size(); ++s) {
    for (std::size_t j = 0; j < bases.size(); ++j) {
      if (j == target) continue;
      out[s].push_back(enhanced_feature(encoder, bases[j], surrogate[s].features, top_n));
    }
  }
  return out;
}

double mse_against(const KnowledgeBase& student, const std::vector<std::vector<Vec>>& teachers,
                   const Dataset& surrogate, const Encoder& encoder, std::size_t top_n) {
  double total = 0.0;
  for (std::size_t s = 0; s < surrogate.size(); ++s) {
    const Vec v = enhanced_feature(encoder, student, surrogate[s].features, top_n);
    double per = 0.0;
    for (const Vec& t : teachers[s]) {
      double sq = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) sq += (v[k] - t[k]) * (v[k] - t[k]);
      per += sq / static_cast<double>(v.size());
    }
    total += per / static_cast<double>(teachers[s].size());
  }
  return total / static_cast<double>(surrogate.size());
}

}  // namespace

double distillation_loss(const KnowledgeBase& student, const std::vector<KnowledgeBase>& bases,
                         std::size_t target, const Dataset& surrogate, const Encoder& encoder,
                         std::size_t top_n) {
  require(bases.size() >= 2, "distillation_loss: need at least two bases");
  require(!surrogate.empty(), "distillation_loss: empty surrogate set");
  return mse_against(student, teacher_table(bases, target, surrogate, encoder, top_n), surrogate,
                     encoder, top_n);
}

FusionResult selective_input_knowledge_fusion(const std::vector<KnowledgeBase>& bases,
                                              const Dataset& surrogate, const Encoder& encoder,
                                              const ServerConfig& cfg, Rng& rng) {
  require(!bases.empty(), "fusion: no knowledge bases");
  FusionResult out;
  if (bases.size() < 2) {
    out.kb = bases.front();
    return out;
  }
  if (surrogate.empty()) throw NumericError("fusion: empty surrogate set");
  require(cfg.fusion_batch > 0, "fusion: batch size must be positive");

  std::uniform_int_distribution<std::size_t> pick_target(0, bases.size() - 1);
  out.target = pick_target(rng);
  out.kb = bases[out.target];
  out.kb.unfreeze_all();

  const auto teachers = teacher_table(bases, out.target, surrogate, encoder, cfg.top_n);
  out.loss_history.push_back(mse_against(out.kb, teachers, surrogate, encoder, cfg.top_n));

  std::uniform_int_distribution<std::size_t> pick(0, surrogate.size() - 1);
  const double w = 1.0 / static_cast<double>(cfg.fusion_batch);
  for (std::size_t step = 0; step < cfg.fusion_steps; ++step) {
    std::vector<Mat> token_acc(out.kb.size(), Mat(out.kb.tokens_per_ie, out.kb.dim));
    std::vector<Vec> key_acc(out.kb.size(), Vec(out.kb.dim, 0.0));
    std::vector<bool> touched(out.kb.size(), false);
    for (std::size_t b = 0; b < cfg.fusion_batch; ++b) {
      const std::size_t s = pick(rng);
      const auto g = distillation_loss_and_grads(out.kb, surrogate[s].features, teachers[s], encoder,
                                                 cfg.top_n, cfg.fusion_key_weight);
      for (std::size_t k = 0; k < g.selected.size(); ++k) {
        axpy(w, g.token_grads[k].data, token_acc[g.selected[k]].data);
        axpy(w, g.key_grads[k], key_acc[g.selected[k]]);
        touched[g.selected[k]] = true;
      }
    }
    for (std::size_t i = 0; i < out.kb.size(); ++i) {
      if (!touched[i]) continue;
      axpy(-cfg.fusion_lr, token_acc[i].data, out.kb.entries[i].tokens.data);
      axpy(-cfg.fusion_lr, key_acc[i], out.kb.entries[i].key);
    }
    out.loss_history.push_back(mse_against(out.kb, teachers, surrogate, encoder, cfg.top_n));
  }
  out.kb.freeze_all();
  return out;
}

KnowledgeBase average_knowledge_bases(const std::vector<KnowledgeBase>& bases) {
  require(!bases.empty(), "average_knowledge_bases: no bases");
  KnowledgeBase out = bases.front();
  for (std::size_t j = 1; j < bases.size(); ++j) {
    require(bases[j].size() == out.size() && bases[j].dim == out.dim &&
                bases[j].tokens_per_ie == out.tokens_per_ie,
            "average_knowledge_bases: shape mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) {
      axpy(1.0, bases[j].entries[i].key, out.entries[i].key);
      axpy(1.0, bases[j].entries[i].tokens.data, out.entries[i].tokens.data);
    }
  }
  const double inv = 1.0 / static_cast<double>(bases.size());
  for (auto& e : out.entries) {
    scale(e.key, inv);
    scale(e.tokens.data, inv);
  }
  out.freeze_all();
  return out;
}

// --- prototype election ----------------------------------------------------------

SimilarityMatrix build_similarity_matrix(const std::vector<ClientUpdateMessage>& uploads) {
  SimilarityMatrix m;
  for (const auto& u : uploads) {
    for (const auto& [label, v] : u.prototypes) m.members.push_back({label, u.client_id, v});
  }
  if (m.members.empty()) throw NumericError("build_similarity_matrix: no prototypes uploaded");
  std::stable_sort(m.members.begin(), m.members.end(),
                   [](const PrototypeMember& a, const PrototypeMember& b) { return a.label < b.label; });

  const std::size_t n = m.members.size();
  m.values = Mat(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = m.members[i].label == m.members[j].label
                           ? 1.0
                           : cosine_similarity(m.members[i].vec, m.members[j].vec);
      m.values(i, j) = v;
      m.values(j, i) = v;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = m.groups.try_emplace(m.members[i].label, i, i);
    if (!inserted) it->second.second = i;
  }
  return m;
}

GlobalPrototypes select_global_prototypes(const SimilarityMatrix& matrix,
                                          const GlobalPrototypes& prior, double threshold) {
  GlobalPrototypes out = prior;
  const std::size_t n = matrix.members.size();
  for (const auto& [label, range] : matrix.groups) {
    auto it = prior.find(label);
    if (it != prior.end() && it->second.fixed) continue;

    std::size_t best = range.first;
    double best_mean = 0.0;
    for (std::size_t i = range.first; i <= range.second; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += matrix.values(i, j);
      const double mean = sum / static_cast<double>(n);
      if (i == range.first || mean < best_mean) {
        best = i;
        best_mean = mean;
      }
    }
    out[label] = {matrix.members[best].vec, best_mean < threshold};
  }
  return out;
}

GlobalPrototypes average_global_prototypes(const std::vector<ClientUpdateMessage>& uploads,
                                           const GlobalPrototypes& prior) {
  std::map<int, std::pair<Vec, std::size_t>> sums;
  for (const auto& u : uploads) {
    for (const auto& [label, v] : u.prototypes) {
      auto& [sum, count] = sums[label];
      if (sum.empty()) sum.assign(v.size(), 0.0);
      axpy(1.0, v, sum);
      ++count;
    }
  }
  GlobalPrototypes out = prior;
  for (auto& [label, acc] : sums) {
    scale(acc.first, 1.0 / static_cast<double>(acc.second));
    out[label] = {std::move(acc.first), false};
  }
  return out;
}

namespace {

LinearHead average_heads(const std::vector<ClientUpdateMessage>& uploads) {
  LinearHead out;
  std::size_t count = 0;
  for (const auto& u : uploads) {
    if (!u.head) continue;
    if (count == 0) {
      out = *u.head;
    } else {
      axpy(1.0, u.head->weights.data, out.weights.data);
      axpy(1.0, u.head->bias, out.bias);
    }
    ++count;
  }
  require(count > 0, "average_heads: no heads uploaded");
  scale(out.weights.data, 1.0 / static_cast<double>(count));
  scale(out.bias, 1.0 / static_cast<double>(count));
  return out;
}

}  // namespace

GlobalStateMessage server_aggregate(ServerState& server,
                                    const std::vector<ClientUpdateMessage>& uploads,
                                    const Dataset& surrogate, const Encoder& encoder,
                                    const ServerConfig& cfg, Method method) {
  require(!uploads.empty(), "server_aggregate: no uploads");
  const std::size_t round = uploads.front().round;
  GlobalStateMessage msg;
  msg.round = round;

  if (uses_enhancement(method)) {
    std::vector<KnowledgeBase> bases;
    bases.reserve(uploads.size());
    for (const auto& u : uploads) bases.push_back(u.kb);
    if (bases.size() < 2) {
      msg.kb = bases.front();
    } else if (method == Method::kNoFusion || surrogate.empty()) {
      msg.kb = average_knowledge_bases(bases);
    } else {
      Rng rng(derive_seed(cfg.seed, 0x51CF, round));
      msg.kb = selective_input_knowledge_fusion(bases, surrogate, encoder, cfg, rng).kb;
    }
    msg.kb.freeze_all();
    server.kb = msg.kb;
  } else {
    msg.kb = uploads.front().kb;
  }

  const bool elect = method == Method::kFedTA || method == Method::kNoTailAnchor ||
                     method == Method::kNoFusion;
  if (elect) {
    msg.prototypes = select_global_prototypes(build_similarity_matrix(uploads), server.globals,
                                              cfg.threshold);
  } else {
    msg.prototypes = average_global_prototypes(uploads, server.globals);
  }
  if (method == Method::kFedAvgHead) {
    msg.head = average_heads(uploads);
    server.head = msg.head;
  }

  server.globals = msg.prototypes;
  server.round = round + 1;
  return msg;
}

// --- rounds --------------------------------------------------------------------

RoundReport run_round(std::vector<ClientState>& clients, ServerState& server,
                      const std::vector<Dataset>& task_data, const Dataset& surrogate,
                      const Encoder& encoder, const RoundConfig& cfg, const LocalHook& after_local) {
  require(!clients.empty(), "run_round: no clients");
  require(clients.size() == task_data.size(), "run_round: one task dataset per client required");
  for (const auto& c : clients) {
    require(c.task_cursor == clients.front().task_cursor, "run_round: clients at different task cursors");
  }

  RoundReport report;
  report.uploads.resize(clients.size());
  if (cfg.threads > 1) {
    std::vector<std::future<ClientUpdateMessage>> pending;
    pending.reserve(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
      pending.push_back(std::async(std::launch::async, [&, i] {
        return client_train_task(clients[i], task_data[i], encoder, cfg.client, cfg.completes_task);
      }));
    }
    for (std::size_t i = 0; i < clients.size(); ++i) report.uploads[i] = pending[i].get();
  } else {
    for (std::size_t i = 0; i < clients.size(); ++i) {
      report.uploads[i] = client_train_task(clients[i], task_data[i], encoder, cfg.client, cfg.completes_task);
    }
  }

  if (after_local) {
    for (std::size_t i = 0; i < clients.size(); ++i) after_local(i, clients[i]);
  }
  if (cfg.wire_roundtrip) {
    for (auto& u : report.uploads) u = decode_client_update(encode_message(u));
  }

  report.global = server_aggregate(server, report.uploads, surrogate, encoder, cfg.server,
                                   cfg.client.method);
  if (cfg.wire_roundtrip) report.global = decode_global_state(encode_message(report.global));

  for (auto& c : clients) install_global_state(c, report.global, cfg.client);
  return report;
}

// --- inference -----------------------------------------------------------------

Vec ModelView::feature(ConstSpan raw) const {
  require(encoder != nullptr, "ModelView: no encoder");
  Vec f = kb != nullptr && top_n > 0 ? enhanced_feature(*encoder, *kb, raw, top_n)
                                     : encoder->encode(encoder->embed(raw));
  if (ta_set != nullptr) f = anchored_feature(f, *ta_set, mix_alpha);
  return f;
}

int nearest_prototype(ConstSpan feature, const PrototypeTable& prototypes) {
  if (prototypes.empty()) throw NumericError("nearest_prototype: no prototypes");
  int best = 0;
  double best_sim = 0.0;
  bool have = false;
  for (const auto& [label, g] : prototypes) {
    const double s = cosine_similarity(feature, g);
    if (!have || s > best_sim) {
      best = label;
      best_sim = s;
      have = true;
    }
  }
  return best;
}

int ModelView::predict(ConstSpan raw) const {
  const Vec f = feature(raw);
  if (rule == InferenceRule::kNearestPrototype) return nearest_prototype(f, prototypes);
  require(head != nullptr, "ModelView: head rule without a head");
  return static_cast<int>(head_predict(*head, f, allowed));
}

ModelView local_view(const ClientState& state, const Encoder& encoder, const ClientConfig& cfg) {
  ModelView v;
  v.encoder = &encoder;
  v.allowed.assign(state.known_classes.begin(), state.known_classes.end());
  if (is_head_baseline(cfg.method)) {
    v.head = &state.head_e;
    v.rule = InferenceRule::kLocalHead;
    return v;
  }
  v.kb = &state.kb;
  v.ta_set = uses_anchors(cfg.method) ? &state.ta_set : nullptr;
  v.head = &state.head_ta;
  v.top_n = cfg.stage1.top_n;
  v.mix_alpha = cfg.stage2.mix_alpha;
  v.rule = cfg.inference;
  v.prototypes = to_table(state.globals);
  for (const auto& [label, p] : state.local_prototypes) v.prototypes.set(label, p);
  return v;
}

ModelView global_view(const ClientState& state, const GlobalStateMessage& global,
                      const Encoder& encoder, const ClientConfig& cfg) {
  if (cfg.method == Method::kFrozenHead) return local_view(state, encoder, cfg);
  ModelView v;
  v.encoder = &encoder;
  for (const auto& [label, g] : global.prototypes) v.allowed.push_back(label);
  if (cfg.method == Method::kFedAvgHead) {
    require(global.head.has_value(), "global_view: aggregated head missing");
    v.head = &*global.head;
    v.rule = InferenceRule::kLocalHead;
    return v;
  }
  v.kb = &global.kb;
  v.ta_set = uses_anchors(cfg.method) ? &state.ta_set : nullptr;
  v.head = &state.head_ta;
  v.top_n = cfg.stage1.top_n;
  v.mix_alpha = cfg.stage2.mix_alpha;
  v.rule = cfg.inference;
  v.prototypes = to_table(global.prototypes);
  return v;
}

int global_inference(const LabeledSample& sample, const TailAnchorSet& ta_set,
                     const KnowledgeBase& kb_global, const GlobalPrototypes& globals,
                     const Encoder& encoder, std::size_t top_n, double mix_alpha) {
  if (globals.empty()) throw NumericError("global_inference: no global prototypes");
  Vec f = enhanced_feature(encoder, kb_global, sample.features, top_n);
  f = anchored_feature(f, ta_set, mix_alpha);
  return nearest_prototype(f, to_table(globals));
}

}  // namespace fedta
