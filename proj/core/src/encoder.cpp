#include "fedta/encoder.hpp"

#include <cmath>
#include <string>

namespace fedta {

namespace {

constexpr double kHiddenGain = 2.0;
constexpr double kOutputBiasScale = 0.05;

void check_tokens(const TokenSequence& tokens, std::size_t d) {
  if (tokens.length() == 0) throw NumericError("encode: empty token sequence");
  if (tokens.dim() != d) {
    throw NumericError("encode: token dim " + std::to_string(tokens.dim()) + " != encoder dim " +
                       std::to_string(d));
  }
}

}  // namespace

RandomFeatureEncoder::RandomFeatureEncoder(const FrozenEncoderSpec& spec) : spec_(spec) {
  require(spec.raw_dim > 0 && spec.embed_dim > 0 && spec.hidden_dim > 0 &&
              spec.num_base_tokens > 0,
          "FrozenEncoderSpec: all sizes must be positive");
  const std::size_t d = spec.embed_dim;
  const std::size_t h = spec.hidden_dim;

  Rng rng(derive_seed(spec.seed, 0xE1C0DE));
  slot_proj_.reserve(spec.num_base_tokens);
  for (std::size_t t = 0; t < spec.num_base_tokens; ++t) {
    slot_proj_.push_back(gaussian_mat(rng, d, spec.raw_dim, 1.0));
  }
  token_map_ = gaussian_mat(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
  w1_ = gaussian_mat(rng, h, d, kHiddenGain / std::sqrt(static_cast<double>(d)));
  w2_ = gaussian_mat(rng, d, h, 1.0 / std::sqrt(static_cast<double>(h)));
  b2_ = gaussian_vec(rng, d, kOutputBiasScale);
  // A zero bias would let a zero hidden state map to the zero feature.
  if (norm(b2_) == 0.0) b2_[0] = kOutputBiasScale;
}

TokenSequence RandomFeatureEncoder::embed(ConstSpan sample) const {
  if (sample.size() != spec_.raw_dim) {
    throw NumericError("embed: sample dim " + std::to_string(sample.size()) + " != " +
                       std::to_string(spec_.raw_dim));
  }
  TokenSequence seq;
  seq.tokens = Mat(spec_.num_base_tokens, spec_.embed_dim);
  for (std::size_t t = 0; t < spec_.num_base_tokens; ++t) {
    const Vec tok = matvec(slot_proj_[t], sample);
    std::copy(tok.begin(), tok.end(), seq.tokens.row(t).begin());
  }
  return seq;
}

Vec RandomFeatureEncoder::encode(const TokenSequence& tokens) const {
  const std::size_t d = spec_.embed_dim;
  check_tokens(tokens, d);
  const std::size_t len = tokens.length();

  Vec pooled(d, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    Vec a = matvec(token_map_, tokens.tokens.row(t));
    for (std::size_t k = 0; k < d; ++k) pooled[k] += std::tanh(a[k]);
  }
  scale(pooled, 1.0 / static_cast<double>(len));

  Vec hidden = matvec(w1_, pooled);
  for (double& v : hidden) v = std::tanh(v);
  Vec out = matvec(w2_, hidden);
  axpy(1.0, b2_, out);
  return out;
}

std::vector<Vec> RandomFeatureEncoder::encode_vjp(const TokenSequence& tokens, ConstSpan cotangent,
                                                  std::span<const std::size_t> trainable_slots) const {
  const std::size_t d = spec_.embed_dim;
  check_tokens(tokens, d);
  require(cotangent.size() == d, "encode_vjp: cotangent dim mismatch");
  const std::size_t len = tokens.length();
  for (std::size_t slot : trainable_slots) {
    if (slot >= len) {
      throw NumericError("encode_vjp: slot " + std::to_string(slot) + " out of range (length " +
                         std::to_string(len) + ")");
    }
  }
  std::vector<Vec> grads;
  if (trainable_slots.empty()) return grads;

  // Forward pass (activations needed for the backward pass).
  std::vector<Vec> acts(len);
  Vec pooled(d, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    Vec a = matvec(token_map_, tokens.tokens.row(t));
    for (double& v : a) v = std::tanh(v);
    axpy(1.0, a, pooled);
    acts[t] = std::move(a);
  }
  scale(pooled, 1.0 / static_cast<double>(len));
  Vec hidden = matvec(w1_, pooled);
  for (double& v : hidden) v = std::tanh(v);

  // Backward.
  Vec g_hidden = matvec_transposed(w2_, cotangent);
  for (std::size_t k = 0; k < g_hidden.size(); ++k) g_hidden[k] *= 1.0 - hidden[k] * hidden[k];
  Vec g_pooled = matvec_transposed(w1_, g_hidden);
  scale(g_pooled, 1.0 / static_cast<double>(len));

  grads.reserve(trainable_slots.size());
  for (std::size_t slot : trainable_slots) {
    const Vec& a = acts[slot];
    Vec g_pre(d);
    for (std::size_t k = 0; k < d; ++k) g_pre[k] = g_pooled[k] * (1.0 - a[k] * a[k]);
    grads.push_back(matvec_transposed(token_map_, g_pre));
  }
  return grads;
}

TokenSequence LookupEncoder::embed(ConstSpan sample) const {
  if (sample.size() != dim_) {
    throw NumericError("embed: sample dim " + std::to_string(sample.size()) + " != " +
                       std::to_string(dim_));
  }
  TokenSequence seq;
  seq.tokens = Mat(1, dim_);
  std::copy(sample.begin(), sample.end(), seq.tokens.row(0).begin());
  return seq;
}

Vec LookupEncoder::encode(const TokenSequence& tokens) const {
  check_tokens(tokens, dim_);
  require(tokens.prefix_len < tokens.length(), "encode: sequence has no base tokens");
  Vec out(dim_, 0.0);
  const std::size_t base = tokens.length() - tokens.prefix_len;
  for (std::size_t t = tokens.prefix_len; t < tokens.length(); ++t) axpy(1.0, tokens.tokens.row(t), out);
  scale(out, 1.0 / static_cast<double>(base));
  return out;
}

std::vector<Vec> LookupEncoder::encode_vjp(const TokenSequence& tokens, ConstSpan cotangent,
                                           std::span<const std::size_t> trainable_slots) const {
  check_tokens(tokens, dim_);
  require(cotangent.size() == dim_, "encode_vjp: cotangent dim mismatch");
  std::vector<Vec> grads;
  for (std::size_t slot : trainable_slots) {
    if (slot >= tokens.length()) throw NumericError("encode_vjp: slot out of range");
    // Base tokens pass straight through the mean; prefix tokens are ignored.
    Vec g(dim_, 0.0);
    if (slot >= tokens.prefix_len) {
      axpy(1.0 / static_cast<double>(tokens.length() - tokens.prefix_len), cotangent, g);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace fedta
