#pragma once

#include <cstddef>
#include <map>
#include <mutex>

#include "raffnet/data.hpp"
#include "raffnet/model.hpp"

namespace raffnet {

// Decoded images keyed by sample index, cached up to a byte budget.
class ImageStore {
 public:
  explicit ImageStore(const DatasetManifest& manifest, std::size_t cache_bytes = std::size_t{1} << 31);
  Image get(std::size_t index) const;
  const DatasetManifest& manifest() const { return manifest_; }

 private:
  const DatasetManifest& manifest_;
  std::size_t budget_;
  mutable std::mutex mutex_;
  mutable std::map<std::size_t, Image> cache_;
  mutable std::size_t used_ = 0;
};

// Fecal-backbone features per sample index; valid while that backbone stays frozen.
class FeatureCache {
 public:
  Matrix get(const RaffNet& model, const ImageStore& images, std::size_t index);
  void clear();

 private:
  std::mutex mutex_;
  std::map<std::size_t, Matrix> cache_;
};

}  // namespace raffnet
