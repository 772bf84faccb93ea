#include "fedta/anchor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fedta {

namespace {

constexpr double kAnchorInitScale = 1e-4;

double weight_at(const TailAnchorEntry& entry, std::size_t k, double mix_alpha) {
  return entry.mask.empty() ? mix_alpha : entry.mask[k];
}

}  // namespace

// --- TailAnchorSet -------------------------------------------------------------

TailAnchorSet TailAnchorSet::initialize(std::size_t pool_size, std::size_t dim, Rng& rng,
                                        MixRule rule, double mix_alpha) {
  require(pool_size > 0 && dim > 0, "TailAnchorSet: sizes must be positive");
  TailAnchorSet set;
  set.dim = dim;
  set.rule = rule;
  set.entries.reserve(pool_size);
  std::bernoulli_distribution coin(std::clamp(mix_alpha, 0.0, 1.0));
  for (std::size_t i = 0; i < pool_size; ++i) {
    TailAnchorEntry e;
    e.key = unit_gaussian_vec(rng, dim);
    e.anchor = gaussian_vec(rng, dim, kAnchorInitScale);
    if (rule == MixRule::kRandomMask) {
      e.mask.resize(dim);
      for (double& w : e.mask) w = coin(rng) ? 1.0 : 0.0;
    }
    set.entries.push_back(std::move(e));
  }
  return set;
}

void TailAnchorSet::freeze_all() {
  for (auto& e : entries) e.frozen = true;
}

void TailAnchorSet::unfreeze_unlocked() {
  for (auto& e : entries) e.frozen = e.locked;
}

bool TailAnchorSet::all_frozen() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.frozen; });
}

void TailAnchorSet::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string where = "TailAnchorSet entry " + std::to_string(i);
    require(e.key.size() == dim && e.anchor.size() == dim, where + ": dim mismatch");
    require(e.mask.empty() || e.mask.size() == dim, where + ": mask dim mismatch");
    require(all_finite(e.key) && all_finite(e.anchor), where + ": non-finite value");
    require(norm(e.key) > 0.0, where + ": zero key");
    require(!e.locked || e.frozen, where + ": locked entry must be frozen");
  }
}

// --- PrototypeTable ------------------------------------------------------------

void PrototypeTable::set(int label, Vec v) {
  require(all_finite(v), "PrototypeTable: non-finite prototype for class " + std::to_string(label));
  require(norm(v) > 0.0, "PrototypeTable: zero prototype for class " + std::to_string(label));
  table_[label] = std::move(v);
}

const Vec& PrototypeTable::at(int label) const {
  auto it = table_.find(label);
  if (it == table_.end()) throw NumericError("PrototypeTable: no prototype for class " + std::to_string(label));
  return it->second;
}

std::vector<int> PrototypeTable::labels() const {
  std::vector<int> out;
  out.reserve(table_.size());
  for (const auto& [label, v] : table_) out.push_back(label);
  return out;
}

// --- operations ----------------------------------------------------------------

AnchorQuery query_ta(ConstSpan f_out, const TailAnchorSet& set) {
  if (set.entries.empty()) throw NumericError("query_ta: empty tail anchor set");
  std::size_t best = 0;
  double best_dist = cosine_distance(f_out, set.entries[0].key);
  for (std::size_t i = 1; i < set.entries.size(); ++i) {
    const double d = cosine_distance(f_out, set.entries[i].key);
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return {best, &set.entries[best]};
}

Vec mix(ConstSpan f_out, ConstSpan anchor, double mix_alpha) {
  if (f_out.size() != anchor.size()) throw NumericError("mix: dimension mismatch");
  Vec out(f_out.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = mix_alpha * f_out[k] + (1.0 - mix_alpha) * anchor[k];
  return out;
}

Vec mix_with_entry(ConstSpan f_out, const TailAnchorEntry& entry, double mix_alpha) {
  if (entry.mask.empty()) return mix(f_out, entry.anchor, mix_alpha);
  if (f_out.size() != entry.anchor.size()) throw NumericError("mix: dimension mismatch");
  Vec out(f_out.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = entry.mask[k] * f_out[k] + (1.0 - entry.mask[k]) * entry.anchor[k];
  }
  return out;
}

LossAndGrad contrastive_loss(ConstSpan f_ta, int label, const PrototypeTable& globals, double tau) {
  require(tau > 0.0, "contrastive_loss: tau must be positive");
  if (globals.empty()) throw NumericError("contrastive_loss: no global prototypes");
  if (!globals.contains(label)) {
    throw NumericError("contrastive_loss: class " + std::to_string(label) + " has no global prototype");
  }
  std::vector<const Vec*> protos;
  Vec logits;
  std::size_t target = 0;
  for (const auto& [y, g] : globals) {
    if (y == label) target = protos.size();
    protos.push_back(&g);
    logits.push_back(dot(f_ta, g) / tau);
  }
  LossAndGrad ce = softmax_cross_entropy(logits, target);
  // dL/dF = sum_a (p_a - [a == y]) G_a / tau
  Vec grad(f_ta.size(), 0.0);
  for (std::size_t a = 0; a < protos.size(); ++a) axpy(ce.grad[a] / tau, *protos[a], grad);
  return {ce.loss, std::move(grad)};
}

StageTwoResult stage2_loss_and_grads(ConstSpan f_out, int label, const TailAnchorSet& set,
                                     const LinearHead& head, const PrototypeTable& globals,
                                     const StageTwoHyper& hyper, std::optional<std::size_t> chosen) {
  const std::size_t s = chosen ? *chosen : query_ta(f_out, set).index;
  require(s < set.size(), "stage2: anchor index out of range");
  const TailAnchorEntry& entry = set.entries[s];
  if (entry.frozen) throw NumericError("stage2: chosen tail anchor " + std::to_string(s) + " is frozen");

  StageTwoResult out(head);
  out.chosen = s;
  out.f_ta = mix_with_entry(f_out, entry, hyper.mix_alpha);

  HeadLoss ce = head_cross_entropy(head, out.f_ta, static_cast<std::size_t>(label), &out.head);
  out.ce_loss = ce.loss;
  Vec g_fta = std::move(ce.grad_feature);

  if (hyper.lambda2 > 0.0 && !globals.empty() && globals.contains(label)) {
    const LossAndGrad cons = contrastive_loss(out.f_ta, label, globals, hyper.tau);
    out.cons_loss = cons.loss;
    out.used_contrastive = true;
    axpy(hyper.lambda2, cons.grad, g_fta);
  }

  out.key_grad.assign(set.dim, 0.0);
  if (hyper.lambda3 > 0.0) {
    out.key_loss = cosine_distance(out.f_ta, entry.key);
    out.key_grad = cosine_distance_grad(out.f_ta, entry.key);
    scale(out.key_grad, hyper.lambda3);
    // dis is symmetric, so its gradient in F_TA has the same form.
    axpy(hyper.lambda3, cosine_distance_grad(entry.key, out.f_ta), g_fta);
  }

  out.loss = out.ce_loss + hyper.lambda2 * out.cons_loss + hyper.lambda3 * out.key_loss;

  out.anchor_grad.resize(set.dim);
  for (std::size_t k = 0; k < set.dim; ++k) {
    out.anchor_grad[k] = (1.0 - weight_at(entry, k, hyper.mix_alpha)) * g_fta[k];
  }
  return out;
}

TrainHistory train_tail_anchors(const std::vector<FeatureSample>& data, TailAnchorSet& set,
                                LinearHead& head, const PrototypeTable& globals,
                                const StageTwoHyper& hyper, Rng& rng, bool train_anchors) {
  if (data.empty()) throw NumericError("train_tail_anchors: empty task data");
  require(hyper.batch_size > 0, "train_tail_anchors: batch_size must be positive");

  // Frozen (locked) entries still route samples; their CE gradient reaches the head only.
  auto sample_step = [&](const FeatureSample& fs, HeadGrad& head_acc, std::vector<Vec>* anchor_acc,
                         std::vector<Vec>* key_acc, std::vector<bool>* touched, double w) -> double {
    if (!train_anchors) {
      return head_cross_entropy(head, fs.f_out, static_cast<std::size_t>(fs.label), &head_acc, w).loss;
    }
    const AnchorQuery q = query_ta(fs.f_out, set);
    if (q.entry->frozen) {
      const Vec f_ta = mix_with_entry(fs.f_out, *q.entry, hyper.mix_alpha);
      return head_cross_entropy(head, f_ta, static_cast<std::size_t>(fs.label), &head_acc, w).loss;
    }
    StageTwoResult r = stage2_loss_and_grads(fs.f_out, fs.label, set, head, globals, hyper, q.index);
    axpy(w, r.head.weights.data, head_acc.weights.data);
    axpy(w, r.head.bias, head_acc.bias);
    if (anchor_acc != nullptr) {
      axpy(w, r.anchor_grad, (*anchor_acc)[q.index]);
      axpy(w, r.key_grad, (*key_acc)[q.index]);
      (*touched)[q.index] = true;
    }
    return r.loss;
  };

  auto full_loss = [&]() {
    HeadGrad scratch(head);
    double total = 0.0;
    for (const auto& fs : data) total += sample_step(fs, scratch, nullptr, nullptr, nullptr, 0.0);
    return total / static_cast<double>(data.size());
  };

  TrainHistory history;
  if (hyper.epochs > 0) history.epoch_loss.push_back(full_loss());

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t stop = std::min(order.size(), start + hyper.batch_size);
      const double w = 1.0 / static_cast<double>(stop - start);
      HeadGrad head_acc(head);
      std::vector<Vec> anchor_acc(set.size(), Vec(set.dim, 0.0));
      std::vector<Vec> key_acc(set.size(), Vec(set.dim, 0.0));
      std::vector<bool> touched(set.size(), false);
      for (std::size_t b = start; b < stop; ++b) {
        sample_step(data[order[b]], head_acc, &anchor_acc, &key_acc, &touched, w);
      }
      sgd_step(head, head_acc, hyper.learning_rate);
      for (std::size_t i = 0; i < set.size(); ++i) {
        if (!touched[i]) continue;
        axpy(-hyper.learning_rate, anchor_acc[i], set.entries[i].anchor);
        axpy(-hyper.learning_rate, key_acc[i], set.entries[i].key);
      }
    }
    history.epoch_loss.push_back(full_loss());
  }
  set.freeze_all();
  return history;
}

Vec anchored_feature(ConstSpan f_out, const TailAnchorSet& set, double mix_alpha, bool use_anchors) {
  if (!use_anchors) return Vec(f_out.begin(), f_out.end());
  const AnchorQuery q = query_ta(f_out, set);
  return mix_with_entry(f_out, *q.entry, mix_alpha);
}

LocalPrototypes compute_local_prototypes(const std::vector<FeatureSample>& data,
                                         const TailAnchorSet& set, double mix_alpha,
                                         bool use_anchors) {
  std::map<int, std::pair<Vec, std::size_t>> sums;
  LocalPrototypes out;
  for (const auto& fs : data) {
    Vec f_ta;
    if (use_anchors) {
      const AnchorQuery q = query_ta(fs.f_out, set);
      f_ta = mix_with_entry(fs.f_out, *q.entry, mix_alpha);
      out.routing[q.index].insert(fs.label);
    } else {
      f_ta = fs.f_out;
    }
    auto& [sum, count] = sums[fs.label];
    if (sum.empty()) sum.assign(f_ta.size(), 0.0);
    axpy(1.0, f_ta, sum);
    ++count;
  }
  for (auto& [label, acc] : sums) {
    auto& [sum, count] = acc;
    scale(sum, 1.0 / static_cast<double>(count));
    out.table.set(label, std::move(sum));
  }
  return out;
}

}  // namespace fedta
