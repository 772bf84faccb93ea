#pragma once

// Client state machine, server-side fusion/election, and the round protocol.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedta/anchor.hpp"
#include "fedta/encoder.hpp"
#include "fedta/enhancement.hpp"
#include "fedta/head.hpp"
#include "fedta/sample.hpp"

namespace fedta {

enum class Method {
  kFedTA,
  kNoTailAnchor,          // F_TA := F_out, anchors untouched
  kNoFusion,              // KB_G := entrywise mean of client bases
  kNoPrototypeSelection,  // G^y := mean of local prototypes, never fixed
  kFedAvgHead,            // frozen encoder + linear head, heads averaged per round
  kFrozenHead,            // frozen encoder + linear head, no communication
};

std::string to_string(Method m);
Method method_from_string(const std::string& name);

bool uses_enhancement(Method m);
bool uses_anchors(Method m);
bool is_head_baseline(Method m);

enum class InferenceRule { kNearestPrototype, kLocalHead };

struct GlobalPrototype {
  Vec vec;
  bool fixed = false;

  friend bool operator==(const GlobalPrototype&, const GlobalPrototype&) = default;
};

using GlobalPrototypes = std::map<int, GlobalPrototype>;

PrototypeTable to_table(const GlobalPrototypes& globals);
std::vector<int> fixed_classes(const GlobalPrototypes& globals);

struct ClientConfig {
  Method method = Method::kFedTA;
  StageOneHyper stage1;
  StageTwoHyper stage2;
  std::size_t base_size = 10;
  std::size_t tokens_per_ie = 2;
  std::size_t anchor_pool = 40;
  MixRule mix_rule = MixRule::kConvex;
  /// Anchors that served a class with a fixed global prototype stay frozen for good.
  bool lock_fixed_anchors = true;
  InferenceRule inference = InferenceRule::kNearestPrototype;
};

struct ClientState {
  int client_id = 0;
  KnowledgeBase kb;
  TailAnchorSet ta_set;
  LinearHead head_e;
  LinearHead head_ta;
  std::size_t task_cursor = 0;
  /// Communication rounds taken part in; equals task_cursor with one round per task.
  std::size_t comm_round = 0;
  GlobalPrototypes globals;
  PrototypeTable local_prototypes;
  std::map<std::size_t, std::set<int>> anchor_classes;
  std::set<int> known_classes;
  std::uint64_t seed = 0;

  static ClientState create(int client_id, std::size_t num_classes, std::size_t dim,
                            const ClientConfig& cfg, std::uint64_t seed);
};

/// Client -> server payload. Carries model state only, never samples.
struct ClientUpdateMessage {
  int client_id = 0;
  std::size_t round = 0;
  KnowledgeBase kb;
  PrototypeTable prototypes;
  std::optional<LinearHead> head;  // head baselines only

  friend bool operator==(const ClientUpdateMessage&, const ClientUpdateMessage&) = default;
};

/// Server -> client payload.
struct GlobalStateMessage {
  std::size_t round = 0;
  KnowledgeBase kb;
  GlobalPrototypes prototypes;
  std::optional<LinearHead> head;

  friend bool operator==(const GlobalStateMessage&, const GlobalStateMessage&) = default;
};

/// Two-stage local training on the current task; mutates `state` and returns its
/// upload. The task cursor advances only when `completes_task` is set, so a task
/// can span several communication rounds.
ClientUpdateMessage client_train_task(ClientState& state, const Dataset& task_data,
                                      const Encoder& encoder, const ClientConfig& cfg,
                                      bool completes_task = true);

/// Installs the server's fused base, prototypes (and head) before the next task.
void install_global_state(ClientState& state, const GlobalStateMessage& msg, const ClientConfig& cfg);

// --- server ------------------------------------------------------------------

struct ServerConfig {
  double threshold = 0.3;
  std::size_t fusion_steps = 20;
  std::size_t fusion_batch = 16;
  double fusion_lr = 0.1;
  /// Weight of the key-pull term during fusion (same form as stage one's surrogate term).
  double fusion_key_weight = 0.5;
  std::size_t top_n = 2;
  std::uint64_t seed = 0;
};

struct FusionResult {
  KnowledgeBase kb;
  std::size_t target = 0;
  /// Distillation loss (MSE part only) measured on the full surrogate set
  /// before the first step and after every step.
  std::vector<double> loss_history;
};

/// Mean over the surrogate set of (1/(n-1)) sum_{j != target} MSE(V(E'_G), V(E'_j)),
/// where E'_k enhances x_s with the top-N entries of base k.
double distillation_loss(const KnowledgeBase& student, const std::vector<KnowledgeBase>& bases,
                         std::size_t target, const Dataset& surrogate, const Encoder& encoder,
                         std::size_t top_n);

struct DistillationGrads {
  double loss = 0.0;      // MSE part + key_weight * key part
  double mse_loss = 0.0;
  std::vector<std::size_t> selected;
  std::vector<Mat> token_grads;
  std::vector<Vec> key_grads;
};

/// Per-sample distillation objective for one surrogate input against fixed
/// teacher features, with the student's selection held fixed when given.
DistillationGrads distillation_loss_and_grads(const KnowledgeBase& student, ConstSpan raw,
                                              const std::vector<Vec>& teacher_features,
                                              const Encoder& encoder, std::size_t top_n,
                                              double key_weight,
                                              std::span<const std::size_t> selected = {});

FusionResult selective_input_knowledge_fusion(const std::vector<KnowledgeBase>& bases,
                                              const Dataset& surrogate, const Encoder& encoder,
                                              const ServerConfig& cfg, Rng& rng);

/// Entrywise arithmetic mean of keys and token blocks.
KnowledgeBase average_knowledge_bases(const std::vector<KnowledgeBase>& bases);

struct PrototypeMember {
  int label = 0;
  int client_id = 0;
  Vec vec;
};

struct SimilarityMatrix {
  std::vector<PrototypeMember> members;  // reordered so classes are contiguous
  Mat values;                            // cosine similarity, same-class pairs = 1
  std::map<int, std::pair<std::size_t, std::size_t>> groups;  // class -> [low, high]
};

SimilarityMatrix build_similarity_matrix(const std::vector<ClientUpdateMessage>& uploads);

/// Elects, for every class in the matrix that is not already fixed in `prior`,
/// the member with the lowest row mean; fixes it when that mean is below
/// `threshold`. Classes absent from the matrix are carried over from `prior`.
GlobalPrototypes select_global_prototypes(const SimilarityMatrix& matrix,
                                          const GlobalPrototypes& prior, double threshold);

/// Per-class mean of uploaded local prototypes, never fixed.
GlobalPrototypes average_global_prototypes(const std::vector<ClientUpdateMessage>& uploads,
                                           const GlobalPrototypes& prior);

struct ServerState {
  std::size_t round = 0;
  std::optional<KnowledgeBase> kb;
  std::optional<LinearHead> head;
  GlobalPrototypes globals;
};

GlobalStateMessage server_aggregate(ServerState& server,
                                    const std::vector<ClientUpdateMessage>& uploads,
                                    const Dataset& surrogate, const Encoder& encoder,
                                    const ServerConfig& cfg, Method method);

// --- rounds ------------------------------------------------------------------

struct RoundConfig {
  ClientConfig client;
  ServerConfig server;
  std::size_t threads = 1;
  /// Pass every message through its JSON wire format.
  bool wire_roundtrip = true;
  /// False for every communication round of a task but the last.
  bool completes_task = true;
};

struct RoundReport {
  std::vector<ClientUpdateMessage> uploads;
  GlobalStateMessage global;
};

/// Called once per client after local training and before aggregation.
using LocalHook = std::function<void(std::size_t client_index, const ClientState&)>;

RoundReport run_round(std::vector<ClientState>& clients, ServerState& server,
                      const std::vector<Dataset>& task_data, const Dataset& surrogate,
                      const Encoder& encoder, const RoundConfig& cfg,
                      const LocalHook& after_local = {});

// --- inference ---------------------------------------------------------------

/// Everything needed to classify a raw sample.
struct ModelView {
  const Encoder* encoder = nullptr;
  const KnowledgeBase* kb = nullptr;      // null: no enhancement
  const TailAnchorSet* ta_set = nullptr;  // null: F_TA = F_out
  const LinearHead* head = nullptr;
  PrototypeTable prototypes;
  std::vector<int> allowed;  // head rule: candidate classes
  InferenceRule rule = InferenceRule::kNearestPrototype;
  std::size_t top_n = 0;
  double mix_alpha = 0.5;

  Vec feature(ConstSpan raw) const;
  int predict(ConstSpan raw) const;
};

/// argmax_y cos(feature, G^y); ties go to the lowest label.
int nearest_prototype(ConstSpan feature, const PrototypeTable& prototypes);

/// The client's own model after local training: its base, anchors and head,
/// with prototypes = last received globals overridden by its fresh local ones.
ModelView local_view(const ClientState& state, const Encoder& encoder, const ClientConfig& cfg);

/// The aggregated model as seen from one client: fused base, the client's
/// anchors, and the elected global prototypes.
ModelView global_view(const ClientState& state, const GlobalStateMessage& global,
                      const Encoder& encoder, const ClientConfig& cfg);

/// Nearest-global-prototype prediction through the fused base and client anchors.
int global_inference(const LabeledSample& sample, const TailAnchorSet& ta_set,
                     const KnowledgeBase& kb_global, const GlobalPrototypes& globals,
                     const Encoder& encoder, std::size_t top_n, double mix_alpha);

}  // namespace fedta
