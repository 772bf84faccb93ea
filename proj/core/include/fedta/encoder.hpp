#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "fedta/numkit.hpp"

namespace fedta {

/// An ordered run of d-dimensional tokens. The first `prefix_len` rows are
/// prepended input-enhancement tokens; the rest are the sample's own tokens.
struct TokenSequence {
  Mat tokens;
  std::size_t prefix_len = 0;

  std::size_t length() const { return tokens.rows; }
  std::size_t dim() const { return tokens.cols; }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct FrozenEncoderSpec {
  std::uint64_t seed = 7;
  std::size_t raw_dim = 64;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t num_base_tokens = 4;
};

/// The frozen feature pathway: an embedding function plus a feature
/// extractor whose parameters never change after construction.
class Encoder {
public:
  virtual ~Encoder() = default;

  virtual std::size_t raw_dim() const = 0;
  virtual std::size_t embed_dim() const = 0;

  virtual TokenSequence embed(ConstSpan sample) const = 0;
  virtual Vec encode(const TokenSequence& tokens) const = 0;

  /// Gradient of dot(cotangent, encode(tokens)) with respect to each listed
  /// token row, in the order given.
  virtual std::vector<Vec> encode_vjp(const TokenSequence& tokens, ConstSpan cotangent,
                                      std::span<const std::size_t> trainable_slots) const = 0;

  /// False when encode ignores prefix tokens (gradients are then all zero).
  virtual bool supports_vjp() const = 0;
};

/// Reference frozen encoder built from seeded random features:
///   embed:  token_t = P_t x                 (one bias-free map per base slot)
///   encode: pooled = mean_t tanh(W_tok e_t)
///           h      = tanh(W_1 pooled)
///           out    = W_2 h + b_2            (b_2 fixed and nonzero)
/// Mean pooling makes the output invariant to token order.
class RandomFeatureEncoder final : public Encoder {
public:
  explicit RandomFeatureEncoder(const FrozenEncoderSpec& spec);

  const FrozenEncoderSpec& spec() const { return spec_; }
  std::size_t raw_dim() const override { return spec_.raw_dim; }
  std::size_t embed_dim() const override { return spec_.embed_dim; }

  TokenSequence embed(ConstSpan sample) const override;
  Vec encode(const TokenSequence& tokens) const override;
  std::vector<Vec> encode_vjp(const TokenSequence& tokens, ConstSpan cotangent,
                              std::span<const std::size_t> trainable_slots) const override;
  bool supports_vjp() const override { return true; }

  // Exposed for tests that rebuild the pipeline independently.
  const std::vector<Mat>& slot_projections() const { return slot_proj_; }
  const Mat& token_map() const { return token_map_; }
  const Mat& hidden_weights() const { return w1_; }
  const Mat& output_weights() const { return w2_; }
  const Vec& output_bias() const { return b2_; }

private:
  FrozenEncoderSpec spec_;
  std::vector<Mat> slot_proj_;  // num_base_tokens x (d x raw_dim)
  Mat token_map_;               // d x d
  Mat w1_;                      // hidden x d
  Mat w2_;                      // d x hidden
  Vec b2_;                      // d
};

/// Encoder over precomputed features: a sample *is* its feature vector.
/// embed() wraps the vector as a single base token and encode() returns the
/// mean of the base tokens, ignoring any prepended enhancement tokens, so
/// encode_vjp yields zero gradients for every prefix slot.
class LookupEncoder final : public Encoder {
public:
  explicit LookupEncoder(std::size_t dim) : dim_(dim) {}

  std::size_t raw_dim() const override { return dim_; }
  std::size_t embed_dim() const override { return dim_; }
  TokenSequence embed(ConstSpan sample) const override;
  Vec encode(const TokenSequence& tokens) const override;
  std::vector<Vec> encode_vjp(const TokenSequence& tokens, ConstSpan cotangent,
                              std::span<const std::size_t> trainable_slots) const override;
  bool supports_vjp() const override { return false; }

private:
  std::size_t dim_;
};

}  // namespace fedta
