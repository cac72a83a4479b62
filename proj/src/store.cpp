#include "raffnet/store.hpp"

namespace raffnet {

ImageStore::ImageStore(const DatasetManifest& manifest, std::size_t cache_bytes)
    : manifest_(manifest), budget_(cache_bytes) {}

Image ImageStore::get(std::size_t index) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(index); it != cache_.end()) return it->second;
  }
  Image img = read_image(manifest_.resolve(manifest_.samples.at(index)));
  const auto bytes = static_cast<std::size_t>(img.height() * img.width() * 3) * sizeof(double);
  std::lock_guard lock(mutex_);
  if (used_ + bytes <= budget_ && cache_.emplace(index, img).second) used_ += bytes;
  return img;
}

Matrix FeatureCache::get(const RaffNet& model, const ImageStore& images, std::size_t index) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(index); it != cache_.end()) return it->second;
  }
  Matrix f = model.anchor_features(images.get(index));
  std::lock_guard lock(mutex_);
  return cache_.emplace(index, std::move(f)).first->second;
}

void FeatureCache::clear() {
  std::lock_guard lock(mutex_);
  cache_.clear();
}

}  // namespace raffnet
