#pragma once

#include <array>
#include <optional>

#include "raffnet/encoder.hpp"

namespace raffnet {

// Small trainable stand-in for a CLIP-style vision transformer:
// patch-flatten -> linear embed (+ learned positions) -> residual
// single-head self-attention blocks -> mean pool -> linear head.
struct ToyVitConfig {
  Index embed_dim = 16;
  Index input_size = 16;
  Index patch_size = 4;
  int blocks = 2;

  Index tokens() const { return (input_size / patch_size) * (input_size / patch_size); }
  Index patch_dim() const { return 3 * patch_size * patch_size; }
};

// "toy-vit-d{D}" with optional "-i{input}-p{patch}" suffix.
std::optional<ToyVitConfig> parse_toy_vit_name(const std::string& name);
std::string toy_vit_name(const ToyVitConfig& cfg);

struct AttentionBlock {
  Linear<double> query, key, value, out;
};

class ToyVitEncoder final : public ImageEncoder {
 public:
  ToyVitEncoder(const ToyVitConfig& cfg, std::uint64_t seed);

  std::string name() const override { return toy_vit_name(cfg_); }
  Index embed_dim() const override { return cfg_.embed_dim; }
  InputSize native_input() const override { return {cfg_.input_size, cfg_.input_size}; }

  Vector encode(const Image& native) const override;
  bool differentiable() const override { return true; }
  Vector encode(const Image& native, std::unique_ptr<EncoderTape>& tape) const override;
  void backward(const EncoderTape& tape, const Vector& grad_out, ImageEncoder& grad) const override;

  void visit_parameters(const ParamVisitor& v) override;
  void visit_parameters(const ConstParamVisitor& v) const override;
  std::unique_ptr<ImageEncoder> clone() const override;

  const ToyVitConfig& config() const { return cfg_; }
  Linear<double>& head() { return head_; }
  Linear<double>& patch_embed() { return patch_embed_; }

  // Flattened patches, one column per token (channel-major within a patch).
  Matrix patchify(const Image& native) const;

 private:
  template <typename Self, typename Visitor>
  static void visit_impl(Self& self, Visitor&& v);

  Vector forward(const Image& native, class ToyVitTape* tape) const;

  ToyVitConfig cfg_;
  Linear<double> patch_embed_;
  Matrix positions_;
  std::vector<AttentionBlock> blocks_;
  Linear<double> head_;
};

// Hashing tokenizer into a frozen embedding table, mean-pooled.
class ToyTextEncoder final : public TextEncoder {
 public:
  ToyTextEncoder(Index embed_dim, Index vocab, std::uint64_t seed);

  std::string name() const override { return "toy-text-d" + std::to_string(table_.cols()); }
  Index embed_dim() const override { return table_.cols(); }

  void visit_parameters(const ParamVisitor& v) override;
  void visit_parameters(const ConstParamVisitor& v) const override;
  std::unique_ptr<TextEncoder> clone() const override;

  static std::vector<std::string> tokenize(const std::string& text);
  Index token_row(const std::string& token) const;

 protected:
  Vector encode_uncached(const std::string& prompt) const override;

 private:
  Matrix table_;  // vocab x D
};

}  // namespace raffnet
