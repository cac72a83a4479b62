#include "raffnet/toy_vit.hpp"

#include <cctype>
#include <regex>

namespace raffnet {

std::optional<ToyVitConfig> parse_toy_vit_name(const std::string& name) {
  static const std::regex re(R"(toy-vit-d(\d+)(?:-i(\d+)-p(\d+))?)");
  std::smatch m;
  if (!std::regex_match(name, m, re)) return std::nullopt;
  ToyVitConfig cfg;
  cfg.embed_dim = std::stol(m[1].str());
  if (m[2].matched) {
    cfg.input_size = std::stol(m[2].str());
    cfg.patch_size = std::stol(m[3].str());
  }
  if (cfg.embed_dim < 4) throw DataError("toy backend needs D >= 4: " + name);
  if (cfg.patch_size < 1 || cfg.input_size % cfg.patch_size != 0)
    throw DataError("toy backend input size must be a multiple of the patch size: " + name);
  return cfg;
}

std::string toy_vit_name(const ToyVitConfig& cfg) {
  std::string n = "toy-vit-d" + std::to_string(cfg.embed_dim);
  if (cfg.input_size != ToyVitConfig{}.input_size || cfg.patch_size != ToyVitConfig{}.patch_size)
    n += "-i" + std::to_string(cfg.input_size) + "-p" + std::to_string(cfg.patch_size);
  return n;
}

class ToyVitTape final : public EncoderTape {
 public:
  struct Block {
    Matrix input, query, key, value, attention, mixed;
  };
  Matrix patches;
  std::vector<Block> blocks;
  Vector pooled;
};

ToyVitEncoder::ToyVitEncoder(const ToyVitConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  const Index d = cfg.embed_dim;
  Rng rng(seed);
  patch_embed_ = Linear<double>(cfg.patch_dim(), d);
  patch_embed_.init_normal(rng, 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())));
  positions_.resize(d, cfg.tokens());
  for (Index i = 0; i < positions_.size(); ++i) positions_.data()[i] = 0.1 * rng.normal();
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (int b = 0; b < cfg.blocks; ++b) {
    AttentionBlock blk{Linear<double>(d, d), Linear<double>(d, d), Linear<double>(d, d), Linear<double>(d, d)};
    blk.query.init_normal(rng, s);
    blk.key.init_normal(rng, s);
    blk.value.init_normal(rng, s);
    blk.out.init_normal(rng, s);
    blocks_.push_back(std::move(blk));
  }
  head_ = Linear<double>(d, d);
  head_.init_normal(rng, s);
}

Matrix ToyVitEncoder::patchify(const Image& native) const {
  if (native.height() != cfg_.input_size || native.width() != cfg_.input_size)
    throw DimensionError("toy backend expects " + std::to_string(cfg_.input_size) + "x" +
                         std::to_string(cfg_.input_size) + " input");
  const Index p = cfg_.patch_size, grid = cfg_.input_size / p;
  Matrix out(cfg_.patch_dim(), cfg_.tokens());
  for (Index ty = 0; ty < grid; ++ty)
    for (Index tx = 0; tx < grid; ++tx) {
      const Index t = ty * grid + tx;
      Index k = 0;
      for (int c = 0; c < 3; ++c)
        for (Index y = 0; y < p; ++y)
          for (Index x = 0; x < p; ++x) out(k++, t) = 2.0 * (native(c, ty * p + y, tx * p + x) - 0.5);
    }
  return out;
}

namespace {

void softmax_rows(Matrix& s) {
  for (Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

}  // namespace

Vector ToyVitEncoder::forward(const Image& native, ToyVitTape* tape) const {
  Matrix patches = patchify(native);
  Matrix x = patch_embed_.weight * patches + positions_;
  x.colwise() += patch_embed_.bias;
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));
  if (tape) {
    tape->patches = std::move(patches);
    tape->blocks.clear();
  }
  for (const auto& blk : blocks_) {
    Matrix q = blk.query.weight * x;
    q.colwise() += blk.query.bias;
    Matrix k = blk.key.weight * x;
    k.colwise() += blk.key.bias;
    Matrix v = blk.value.weight * x;
    v.colwise() += blk.value.bias;
    Matrix attn = scale * (q.transpose() * k);
    softmax_rows(attn);
    Matrix mixed = v * attn.transpose();
    Matrix next = x + blk.out.weight * mixed;
    next.colwise() += blk.out.bias;
    if (tape) tape->blocks.push_back({std::move(x), std::move(q), std::move(k), std::move(v), std::move(attn), std::move(mixed)});
    x = std::move(next);
  }
  Vector pooled = x.rowwise().mean();
  Vector out = head_(pooled);
  if (tape) tape->pooled = std::move(pooled);
  return out;
}

Vector ToyVitEncoder::encode(const Image& native) const { return forward(native, nullptr); }

Vector ToyVitEncoder::encode(const Image& native, std::unique_ptr<EncoderTape>& tape) const {
  auto t = std::make_unique<ToyVitTape>();
  Vector out = forward(native, t.get());
  tape = std::move(t);
  return out;
}

void ToyVitEncoder::backward(const EncoderTape& tape_base, const Vector& grad_out, ImageEncoder& grad_base) const {
  const auto& tape = dynamic_cast<const ToyVitTape&>(tape_base);
  auto& grad = dynamic_cast<ToyVitEncoder&>(grad_base);
  require_dim(grad_out.size(), cfg_.embed_dim, "toy backend output gradient");

  const Vector d_pooled = head_.backward(tape.pooled, grad_out, grad.head_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));
  const Index tokens = cfg_.tokens();
  Matrix dx = d_pooled.replicate(1, tokens) / static_cast<double>(tokens);

  for (std::size_t b = blocks_.size(); b-- > 0;) {
    const auto& blk = blocks_[b];
    const auto& t = tape.blocks[b];
    auto& g = grad.blocks_[b];

    g.out.weight.noalias() += dx * t.mixed.transpose();
    g.out.bias += dx.rowwise().sum();
    const Matrix d_mixed = blk.out.weight.transpose() * dx;

    // mixed = V A^T
    const Matrix d_value = d_mixed * t.attention;
    const Matrix d_attn = d_mixed.transpose() * t.value;
    // Row-wise softmax backward.
    const Vector row_dot = (d_attn.array() * t.attention.array()).rowwise().sum();
    const Matrix d_scores = t.attention.array() * (d_attn.colwise() - row_dot).array();
    const Matrix d_query = scale * (t.key * d_scores.transpose());
    const Matrix d_key = scale * (t.query * d_scores);

    g.query.weight.noalias() += d_query * t.input.transpose();
    g.query.bias += d_query.rowwise().sum();
    g.key.weight.noalias() += d_key * t.input.transpose();
    g.key.bias += d_key.rowwise().sum();
    g.value.weight.noalias() += d_value * t.input.transpose();
    g.value.bias += d_value.rowwise().sum();

    dx += blk.query.weight.transpose() * d_query + blk.key.weight.transpose() * d_key +
          blk.value.weight.transpose() * d_value;
  }
  grad.positions_ += dx;
  grad.patch_embed_.weight.noalias() += dx * tape.patches.transpose();
  grad.patch_embed_.bias += dx.rowwise().sum();
}

template <typename Self, typename Visitor>
void ToyVitEncoder::visit_impl(Self& self, Visitor&& v) {
  visit_linear(self.patch_embed_, "patch_embed", v);
  v("positions", self.positions_);
  for (std::size_t b = 0; b < self.blocks_.size(); ++b) {
    auto& blk = self.blocks_[b];
    const std::string p = "blocks." + std::to_string(b) + ".";
    visit_linear(blk.query, p + "query", v);
    visit_linear(blk.key, p + "key", v);
    visit_linear(blk.value, p + "value", v);
    visit_linear(blk.out, p + "out", v);
  }
  visit_linear(self.head_, "head", v);
}

void ToyVitEncoder::visit_parameters(const ParamVisitor& v) { visit_impl(*this, v); }
void ToyVitEncoder::visit_parameters(const ConstParamVisitor& v) const { visit_impl(*this, v); }

std::unique_ptr<ImageEncoder> ToyVitEncoder::clone() const { return std::make_unique<ToyVitEncoder>(*this); }

ToyTextEncoder::ToyTextEncoder(Index embed_dim, Index vocab, std::uint64_t seed) : table_(vocab, embed_dim) {
  Rng rng(seed);
  for (Index i = 0; i < table_.size(); ++i) table_.data()[i] = rng.normal();
}

std::vector<std::string> ToyTextEncoder::tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

Index ToyTextEncoder::token_row(const std::string& token) const {
  return static_cast<Index>(fnv1a(token) % static_cast<std::uint64_t>(table_.rows()));
}

Vector ToyTextEncoder::encode_uncached(const std::string& prompt) const {
  const auto tokens = tokenize(prompt);
  if (tokens.empty()) throw DataError("prompt has no tokens: '" + prompt + "'");
  Vector acc = Vector::Zero(table_.cols());
  for (const auto& t : tokens) acc += table_.row(token_row(t)).transpose();
  return acc / static_cast<double>(tokens.size());
}

void ToyTextEncoder::visit_parameters(const ParamVisitor& v) {
  clear_cache();
  v("table", table_);
}

void ToyTextEncoder::visit_parameters(const ConstParamVisitor& v) const { v("table", table_); }

std::unique_ptr<TextEncoder> ToyTextEncoder::clone() const { return std::make_unique<ToyTextEncoder>(*this); }

}  // namespace raffnet
