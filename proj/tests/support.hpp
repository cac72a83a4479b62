#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "raffnet/encoder.hpp"
#include "raffnet/fusion.hpp"
#include "raffnet/nn.hpp"
#include "raffnet/rng.hpp"

namespace raffnet::test {

inline void fill_normal(Matrix& m, Rng& rng, double scale = 1.0) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
}

inline void fill_normal(Vector& v, Rng& rng, double scale = 1.0) {
  for (Index i = 0; i < v.size(); ++i) v(i) = scale * rng.normal();
}

inline void randomize(Linear<double>& l, Rng& rng, double scale) {
  fill_normal(l.weight, rng, scale);
  fill_normal(l.bias, rng, scale);
}

inline Vector random_vector(Index n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  fill_normal(v, rng, scale);
  return v;
}

// Max-abs error of the analytic gradient against central differences,
// relative to the largest gradient magnitude of that tensor. Tensors whose
// gradient vanishes (below 1e-7 both ways) report the absolute error.
struct GradCheck {
  std::map<std::string, double> rel_error;
  double worst() const {
    double w = 0.0;
    for (const auto& [_, e] : rel_error) w = std::max(w, e);
    return w;
  }
};

using Tensor = std::pair<std::string, std::pair<double*, Index>>;

inline GradCheck finite_difference(const std::vector<Tensor>& params, const std::vector<const double*>& analytic,
                                   const std::function<double()>& loss, double h = 1e-6) {
  GradCheck out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    double* p = params[t].second.first;
    const Index n = params[t].second.second;
    double max_diff = 0.0, max_mag = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      const double up = loss();
      p[i] = keep - h;
      const double down = loss();
      p[i] = keep;
      const double numeric = (up - down) / (2 * h);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[t][i]));
      max_mag = std::max({max_mag, std::abs(numeric), std::abs(analytic[t][i])});
    }
    out.rel_error[params[t].first] = max_mag < 1e-7 ? max_diff : max_diff / max_mag;
  }
  return out;
}

inline void push_linear(std::vector<Tensor>& params, std::vector<const double*>& grads, const std::string& name,
                        Linear<double>& p, const Linear<double>& g) {
  params.push_back({name + ".weight", {p.weight.data(), p.weight.size()}});
  grads.push_back(g.weight.data());
  params.push_back({name + ".bias", {p.bias.data(), p.bias.size()}});
  grads.push_back(g.bias.data());
}

// Main adapter into the fusion head: adapter, projection, gate and classifier
// gradients of the cross-entropy loss for one random draw.
inline GradCheck check_head_gradients(Index dim, Index anchors, Rng& rng) {
  Adapter<double> adapter(dim);
  randomize(adapter.down, rng, 0.5);
  randomize(adapter.up, rng, 0.5);
  FusionParams<double> fusion(anchors, dim);
  randomize(fusion.projection, rng, 0.5);
  randomize(fusion.gate1, rng, 0.5);
  randomize(fusion.gate2, rng, 0.5);
  randomize(fusion.classifier, rng, 0.5);
  const Vector z = random_vector(dim, rng);
  const Vector z_f = random_vector(anchors, rng);
  const int label = static_cast<int>(rng.below(kNumClasses));

  auto loss = [&] {
    const FusionState<double> s = fusion_forward(fusion, adapter_forward(adapter, z), z_f);
    return ce_loss(s.logits, label);
  };

  Adapter<double> g_adapter(dim);
  FusionParams<double> g_fusion(anchors, dim);
  const FusionState<double> s = fusion_forward(fusion, adapter_forward(adapter, z), z_f);
  const FusionGrads<double> back = fusion_backward(fusion, s, ce_loss_grad(s.logits, label), g_fusion);
  adapter_backward(adapter, z, back.z_v, g_adapter);

  std::vector<Tensor> params;
  std::vector<const double*> grads;
  push_linear(params, grads, "adapter.down", adapter.down, g_adapter.down);
  push_linear(params, grads, "adapter.up", adapter.up, g_adapter.up);
  push_linear(params, grads, "fusion.projection", fusion.projection, g_fusion.projection);
  push_linear(params, grads, "fusion.gate1", fusion.gate1, g_fusion.gate1);
  push_linear(params, grads, "fusion.gate2", fusion.gate2, g_fusion.gate2);
  push_linear(params, grads, "head.classifier", fusion.classifier, g_fusion.classifier);
  return finite_difference(params, grads, loss);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("raffnet_" + tag + "_" + std::to_string(::getpid()) + "_" + hex64(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace raffnet::test
