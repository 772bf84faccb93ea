#pragma once

// Input-enhancement knowledge base: M (key, token block) pairs. A sample's
// query key selects the N closest entries, whose token blocks are prepended
// to the sample's embedding before it goes through the frozen encoder.

#include <vector>

#include "fedta/encoder.hpp"
#include "fedta/head.hpp"
#include "fedta/sample.hpp"

namespace fedta {

struct InputEnhancementEntry {
  Vec key;
  Mat tokens;  // tokens_per_ie x d
  bool frozen = false;

  friend bool operator==(const InputEnhancementEntry&, const InputEnhancementEntry&) = default;
};

struct KnowledgeBase {
  std::size_t tokens_per_ie = 0;
  std::size_t dim = 0;
  std::vector<InputEnhancementEntry> entries;

  std::size_t size() const { return entries.size(); }

  /// Unit-normalised Gaussian keys, token blocks drawn as N(0, 0.02^2).
  static KnowledgeBase initialize(std::size_t base_size, std::size_t tokens_per_ie,
                                  std::size_t dim, Rng& rng);

  void freeze_all();
  void unfreeze_all();
  bool all_frozen() const;

  /// Throws NumericError when shapes disagree or any value is non-finite.
  void validate() const;

  friend bool operator==(const KnowledgeBase&, const KnowledgeBase&) = default;
};

struct StageOneHyper {
  double lambda1 = 0.5;
  std::size_t top_n = 2;
  double learning_rate = 0.1;
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
};

/// Indices of the `top_n` entries closest (cosine distance) to `query_key`,
/// ascending by distance; ties go to the lower index.
std::vector<std::size_t> query_ie(ConstSpan query_key, const KnowledgeBase& kb, std::size_t top_n);

/// Prepends the selected token blocks, in selection order, to `embedding`.
TokenSequence enhance(const TokenSequence& embedding, const KnowledgeBase& kb,
                      std::span<const std::size_t> selected);

/// Query key used for entry selection: the encoder's feature for the bare embedding.
Vec ie_query_key(const Encoder& encoder, const TokenSequence& embedding);

struct StageOneGrads {
  std::vector<std::size_t> selected;
  std::vector<Mat> token_grads;  // one per selected entry
  std::vector<Vec> key_grads;    // one per selected entry
  HeadGrad head;

  explicit StageOneGrads(const LinearHead& h) : head(h) {}
};

struct StageOneResult {
  double loss = 0.0;
  double ce_loss = 0.0;
  double key_loss = 0.0;
  StageOneGrads grads;
};

/// CE(head(encode(E')), y) + lambda1 * sum_selected dis(K_in, K_s).
/// The query key is a constant; the CE term reaches the selected token blocks
/// through the encoder's VJP and the key term reaches only the selected keys.
/// `selected` fixes the selection (used by gradient checks); when empty it is
/// recomputed with query_ie.
StageOneResult stage1_loss_and_grads(const TokenSequence& embedding, ConstSpan query_key,
                                     std::size_t label, const KnowledgeBase& kb,
                                     const LinearHead& head, const Encoder& encoder,
                                     const StageOneHyper& hyper,
                                     std::span<const std::size_t> selected = {});

/// Convenience overload starting from a raw sample.
StageOneResult stage1_loss_and_grads(const LabeledSample& sample, const KnowledgeBase& kb,
                                     const LinearHead& head, const Encoder& encoder,
                                     const StageOneHyper& hyper);

/// Mini-batch gradient descent on the stage-one objective; freezes every
/// entry when done. `rng` drives the per-epoch shuffle.
TrainHistory train_input_enhancement(const Dataset& task_data, KnowledgeBase& kb,
                                     LinearHead& head, const Encoder& encoder,
                                     const StageOneHyper& hyper, Rng& rng);

/// Feature of a sample after enhancement with the given (frozen) base.
Vec enhanced_feature(const Encoder& encoder, const KnowledgeBase& kb, ConstSpan raw,
                     std::size_t top_n);

}  // namespace fedta
