#include "fedta/enhancement.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace fedta {

namespace {

constexpr double kTokenInitScale = 0.02;

struct StageOneCache {
  TokenSequence embedding;
  Vec query_key;
  std::size_t label;
};

std::vector<StageOneCache> build_cache(const Dataset& data, const Encoder& encoder) {
  std::vector<StageOneCache> cache;
  cache.reserve(data.size());
  for (const auto& s : data) {
    TokenSequence e = encoder.embed(s.features);
    Vec key = ie_query_key(encoder, e);
    cache.push_back({std::move(e), std::move(key), static_cast<std::size_t>(s.label)});
  }
  return cache;
}

double mean_loss(const std::vector<StageOneCache>& cache, const KnowledgeBase& kb,
                 const LinearHead& head, const Encoder& encoder, const StageOneHyper& hyper) {
  double total = 0.0;
  for (const auto& c : cache) {
    total += stage1_loss_and_grads(c.embedding, c.query_key, c.label, kb, head, encoder, hyper).loss;
  }
  return total / static_cast<double>(cache.size());
}

}  // namespace

KnowledgeBase KnowledgeBase::initialize(std::size_t base_size, std::size_t tokens_per_ie,
                                        std::size_t dim, Rng& rng) {
  require(base_size > 0 && tokens_per_ie > 0 && dim > 0, "KnowledgeBase: sizes must be positive");
  KnowledgeBase kb;
  kb.tokens_per_ie = tokens_per_ie;
  kb.dim = dim;
  kb.entries.reserve(base_size);
  for (std::size_t i = 0; i < base_size; ++i) {
    InputEnhancementEntry e;
    e.key = unit_gaussian_vec(rng, dim);
    e.tokens = gaussian_mat(rng, tokens_per_ie, dim, kTokenInitScale);
    kb.entries.push_back(std::move(e));
  }
  return kb;
}

void KnowledgeBase::freeze_all() {
  for (auto& e : entries) e.frozen = true;
}

void KnowledgeBase::unfreeze_all() {
  for (auto& e : entries) e.frozen = false;
}

bool KnowledgeBase::all_frozen() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.frozen; });
}

void KnowledgeBase::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string where = "KnowledgeBase entry " + std::to_string(i);
    require(e.key.size() == dim, where + ": key dim mismatch");
    require(e.tokens.rows == tokens_per_ie && e.tokens.cols == dim, where + ": token shape mismatch");
    require(e.tokens.data.size() == tokens_per_ie * dim, where + ": token storage mismatch");
    require(all_finite(e.key) && all_finite(e.tokens.data), where + ": non-finite value");
    require(norm(e.key) > 0.0, where + ": zero key");
  }
}

std::vector<std::size_t> query_ie(ConstSpan query_key, const KnowledgeBase& kb, std::size_t top_n) {
  if (top_n < 1 || top_n > kb.size()) {
    throw NumericError("query_ie: N=" + std::to_string(top_n) + " outside [1, " +
                       std::to_string(kb.size()) + "]");
  }
  std::vector<double> dist(kb.size());
  for (std::size_t i = 0; i < kb.size(); ++i) dist[i] = cosine_distance(query_key, kb.entries[i].key);
  std::vector<std::size_t> order(kb.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top_n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
                    });
  order.resize(top_n);
  return order;
}

TokenSequence enhance(const TokenSequence& embedding, const KnowledgeBase& kb,
                      std::span<const std::size_t> selected) {
  if (embedding.dim() != kb.dim) {
    throw NumericError("enhance: embedding dim " + std::to_string(embedding.dim()) +
                       " != knowledge base dim " + std::to_string(kb.dim));
  }
  const std::size_t d = kb.dim;
  const std::size_t prefix = selected.size() * kb.tokens_per_ie;
  TokenSequence out;
  out.prefix_len = embedding.prefix_len + prefix;
  out.tokens = Mat(prefix + embedding.length(), d);
  std::size_t row = 0;
  for (std::size_t idx : selected) {
    require(idx < kb.size(), "enhance: entry index out of range");
    const Mat& block = kb.entries[idx].tokens;
    std::copy(block.data.begin(), block.data.end(), out.tokens.data.begin() + static_cast<std::ptrdiff_t>(row * d));
    row += block.rows;
  }
  std::copy(embedding.tokens.data.begin(), embedding.tokens.data.end(),
            out.tokens.data.begin() + static_cast<std::ptrdiff_t>(row * d));
  return out;
}

Vec ie_query_key(const Encoder& encoder, const TokenSequence& embedding) {
  return encoder.encode(embedding);
}

StageOneResult stage1_loss_and_grads(const TokenSequence& embedding, ConstSpan query_key,
                                     std::size_t label, const KnowledgeBase& kb,
                                     const LinearHead& head, const Encoder& encoder,
                                     const StageOneHyper& hyper,
                                     std::span<const std::size_t> selected) {
  std::vector<std::size_t> chosen(selected.begin(), selected.end());
  if (chosen.empty()) chosen = query_ie(query_key, kb, hyper.top_n);
  for (std::size_t idx : chosen) {
    require(idx < kb.size(), "stage1: entry index out of range");
    if (kb.entries[idx].frozen) {
      throw NumericError("stage1: frozen entry " + std::to_string(idx) + " selected for training");
    }
  }

  StageOneResult out{0.0, 0.0, 0.0, StageOneGrads(head)};
  out.grads.selected = chosen;

  const TokenSequence enhanced = enhance(embedding, kb, chosen);
  const Vec feature = encoder.encode(enhanced);
  const HeadLoss ce = head_cross_entropy(head, feature, label, &out.grads.head);
  out.ce_loss = ce.loss;

  std::vector<std::size_t> slots(chosen.size() * kb.tokens_per_ie);
  std::iota(slots.begin(), slots.end(), 0);
  const std::vector<Vec> slot_grads = encoder.encode_vjp(enhanced, ce.grad_feature, slots);

  for (std::size_t s = 0; s < chosen.size(); ++s) {
    Mat g(kb.tokens_per_ie, kb.dim);
    for (std::size_t t = 0; t < kb.tokens_per_ie; ++t) {
      const Vec& src = slot_grads[s * kb.tokens_per_ie + t];
      std::copy(src.begin(), src.end(), g.row(t).begin());
    }
    out.grads.token_grads.push_back(std::move(g));

    const Vec& key = kb.entries[chosen[s]].key;
    out.key_loss += cosine_distance(query_key, key);
    Vec kg = cosine_distance_grad(query_key, key);
    scale(kg, hyper.lambda1);
    out.grads.key_grads.push_back(std::move(kg));
  }
  out.loss = out.ce_loss + hyper.lambda1 * out.key_loss;
  return out;
}

StageOneResult stage1_loss_and_grads(const LabeledSample& sample, const KnowledgeBase& kb,
                                     const LinearHead& head, const Encoder& encoder,
                                     const StageOneHyper& hyper) {
  const TokenSequence e = encoder.embed(sample.features);
  const Vec key = ie_query_key(encoder, e);
  return stage1_loss_and_grads(e, key, static_cast<std::size_t>(sample.label), kb, head, encoder,
                               hyper);
}

TrainHistory train_input_enhancement(const Dataset& task_data, KnowledgeBase& kb,
                                     LinearHead& head, const Encoder& encoder,
                                     const StageOneHyper& hyper, Rng& rng) {
  if (task_data.empty()) throw NumericError("train_input_enhancement: empty task data");
  require(hyper.batch_size > 0, "train_input_enhancement: batch_size must be positive");
  for (const auto& e : kb.entries) require(!e.frozen, "train_input_enhancement: knowledge base is frozen");

  const auto cache = build_cache(task_data, encoder);
  TrainHistory history;
  if (hyper.epochs > 0) history.epoch_loss.push_back(mean_loss(cache, kb, head, encoder, hyper));

  std::vector<std::size_t> order(cache.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t stop = std::min(order.size(), start + hyper.batch_size);
      const double w = 1.0 / static_cast<double>(stop - start);

      std::vector<Mat> token_acc(kb.size(), Mat(kb.tokens_per_ie, kb.dim));
      std::vector<Vec> key_acc(kb.size(), Vec(kb.dim, 0.0));
      std::vector<bool> touched(kb.size(), false);
      HeadGrad head_acc(head);

      for (std::size_t b = start; b < stop; ++b) {
        const auto& c = cache[order[b]];
        const auto r = stage1_loss_and_grads(c.embedding, c.query_key, c.label, kb, head, encoder, hyper);
        axpy(w, r.grads.head.weights.data, head_acc.weights.data);
        axpy(w, r.grads.head.bias, head_acc.bias);
        for (std::size_t s = 0; s < r.grads.selected.size(); ++s) {
          const std::size_t idx = r.grads.selected[s];
          axpy(w, r.grads.token_grads[s].data, token_acc[idx].data);
          axpy(w, r.grads.key_grads[s], key_acc[idx]);
          touched[idx] = true;
        }
      }

      sgd_step(head, head_acc, hyper.learning_rate);
      for (std::size_t i = 0; i < kb.size(); ++i) {
        if (!touched[i]) continue;
        axpy(-hyper.learning_rate, token_acc[i].data, kb.entries[i].tokens.data);
        axpy(-hyper.learning_rate, key_acc[i], kb.entries[i].key);
      }
    }
    history.epoch_loss.push_back(mean_loss(cache, kb, head, encoder, hyper));
  }
  kb.freeze_all();
  return history;
}

Vec enhanced_feature(const Encoder& encoder, const KnowledgeBase& kb, ConstSpan raw,
                     std::size_t top_n) {
  const TokenSequence e = encoder.embed(raw);
  if (top_n == 0) return encoder.encode(e);
  const Vec key = ie_query_key(encoder, e);
  const auto chosen = query_ie(key, kb, top_n);
  return encoder.encode(enhance(e, kb, chosen));
}

}  // namespace fedta
