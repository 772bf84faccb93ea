#pragma once

// Tail anchors: m (key, anchor) pairs. A sample's frozen feature F_out picks
// the anchor whose key is closest and is mixed with it into F_TA, the feature
// that classification and prototypes are built on.

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "fedta/head.hpp"
#include "fedta/numkit.hpp"
#include "fedta/sample.hpp"

namespace fedta {

enum class MixRule {
  kConvex,      // F_TA = a * F_out + (1 - a) * TA
  kRandomMask,  // each coordinate taken from F_out with probability a, fixed per entry
};

struct TailAnchorEntry {
  Vec key;
  Vec anchor;
  /// Per-coordinate weight on F_out; empty under the convex rule.
  Vec mask;
  bool frozen = false;
  /// Permanently frozen: the entry served a class whose global prototype is fixed.
  bool locked = false;

  friend bool operator==(const TailAnchorEntry&, const TailAnchorEntry&) = default;
};

struct TailAnchorSet {
  std::size_t dim = 0;
  MixRule rule = MixRule::kConvex;
  std::vector<TailAnchorEntry> entries;

  std::size_t size() const { return entries.size(); }

  /// Unit-normalised Gaussian keys; anchors are N(0, 1e-4^2) noise around zero.
  static TailAnchorSet initialize(std::size_t pool_size, std::size_t dim, Rng& rng,
                                  MixRule rule = MixRule::kConvex, double mix_alpha = 0.5);

  void freeze_all();
  /// Unfreezes everything that is not locked.
  void unfreeze_unlocked();
  bool all_frozen() const;
  void validate() const;

  friend bool operator==(const TailAnchorSet&, const TailAnchorSet&) = default;
};

/// Class label -> prototype vector. Every stored vector is nonzero and finite.
class PrototypeTable {
public:
  void set(int label, Vec v);
  bool contains(int label) const { return table_.count(label) != 0; }
  const Vec& at(int label) const;
  std::size_t size() const { return table_.size(); }
  bool empty() const { return table_.empty(); }
  void erase(int label) { table_.erase(label); }

  auto begin() const { return table_.begin(); }
  auto end() const { return table_.end(); }
  std::vector<int> labels() const;

  friend bool operator==(const PrototypeTable&, const PrototypeTable&) = default;

private:
  std::map<int, Vec> table_;
};

struct StageTwoHyper {
  double lambda2 = 1.0;
  double lambda3 = 0.5;
  double tau = 0.1;
  double mix_alpha = 0.5;
  double learning_rate = 0.05;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
};

struct AnchorQuery {
  std::size_t index = 0;
  const TailAnchorEntry* entry = nullptr;
};

/// argmin_i dis(F_out, K_i); ties go to the lower index.
AnchorQuery query_ta(ConstSpan f_out, const TailAnchorSet& set);

/// Elementwise convex combination mix_alpha * F_out + (1 - mix_alpha) * TA.
Vec mix(ConstSpan f_out, ConstSpan anchor, double mix_alpha);

/// Mixes according to the entry's rule: its mask when present, otherwise mix_alpha.
Vec mix_with_entry(ConstSpan f_out, const TailAnchorEntry& entry, double mix_alpha);

/// -log softmax_a(F_TA . G_a / tau)[y] over every class in `globals`.
/// Prototypes are constants; the gradient is with respect to F_TA.
LossAndGrad contrastive_loss(ConstSpan f_ta, int label, const PrototypeTable& globals, double tau);

struct StageTwoResult {
  double loss = 0.0;
  double ce_loss = 0.0;
  double cons_loss = 0.0;
  double key_loss = 0.0;
  bool used_contrastive = false;
  std::size_t chosen = 0;
  Vec f_ta;
  Vec anchor_grad;
  Vec key_grad;
  HeadGrad head;

  explicit StageTwoResult(const LinearHead& h) : head(h) {}
};

/// L = CE(head(F_TA), y) + lambda2 * L_cons(F_TA) + lambda3 * dis(F_TA, K_s)
/// with F_out constant. The contrastive term is omitted when `globals` is
/// empty or has no prototype for y. Throws when the chosen entry is frozen.
/// `chosen` fixes the anchor (gradient checks); otherwise query_ta picks it.
StageTwoResult stage2_loss_and_grads(ConstSpan f_out, int label, const TailAnchorSet& set,
                                     const LinearHead& head, const PrototypeTable& globals,
                                     const StageTwoHyper& hyper,
                                     std::optional<std::size_t> chosen = std::nullopt);

/// A task sample with its frozen enhanced feature precomputed.
struct FeatureSample {
  int label = 0;
  Vec f_out;
};

/// Trains the chosen anchors, their keys and the head over `data`, then freezes
/// the whole set. Locked entries still route samples but are never updated.
/// With `train_anchors` false (no-anchor ablation) F_TA = F_out and only the head trains.
TrainHistory train_tail_anchors(const std::vector<FeatureSample>& data, TailAnchorSet& set,
                                  LinearHead& head, const PrototypeTable& globals,
                                  const StageTwoHyper& hyper, Rng& rng, bool train_anchors = true);

/// F_TA for a frozen feature (F_out itself when anchors are disabled).
Vec anchored_feature(ConstSpan f_out, const TailAnchorSet& set, double mix_alpha,
                     bool use_anchors = true);

struct LocalPrototypes {
  PrototypeTable table;
  /// Anchor index -> classes whose samples were routed to it.
  std::map<std::size_t, std::set<int>> routing;
};

/// Per-class mean of F_TA over `data`; classes without samples are absent.
LocalPrototypes compute_local_prototypes(const std::vector<FeatureSample>& data,
                                         const TailAnchorSet& set, double mix_alpha,
                                         bool use_anchors = true);

}  // namespace fedta
