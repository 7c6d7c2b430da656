#include "metafas/data.hpp"

#include "metafas/ops.hpp"

namespace metafas {

const char* liveness_name(Liveness l) {
  return l == Liveness::kLiving ? "living" : "spoofing";
}

Liveness liveness_from_name(const std::string& name) {
  if (name == "living") return Liveness::kLiving;
  if (name == "spoofing") return Liveness::kSpoofing;
  throw DataError("unknown liveness tag '" + name + "' (expected living|spoofing)");
}

void DepthLabel::validate() const {
  if (!map.defined()) throw ValueError("DepthLabel: undefined map");
  if (liveness == Liveness::kSpoofing) {
    for (double v : map.values()) {
      if (v != 0.0) throw ValueError("DepthLabel: spoofing label must be all zero");
    }
  } else {
    for (double v : map.values()) {
      if (v < 0.0 || v > 1.0) {
        throw ValueError("DepthLabel: living depth value " + std::to_string(v) +
                         " outside [0,1]");
      }
    }
  }
}

Batch make_batch(const std::vector<Sample>& samples) {
  if (samples.empty()) throw ValueError("make_batch: empty sample list");
  const Shape& img_shape = samples[0].image.shape();
  const Shape& map_shape = samples[0].label.map.shape();

  Batch batch;
  batch.size = static_cast<int>(samples.size());
  std::vector<double> images, maps, targets;
  images.reserve(samples.size() * samples[0].image.values().size());
  maps.reserve(samples.size() * samples[0].label.map.values().size());
  targets.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.image.shape() != img_shape || s.label.map.shape() != map_shape) {
      throw ShapeError("make_batch: inconsistent sample shapes");
    }
    const auto& iv = s.image.values();
    images.insert(images.end(), iv.begin(), iv.end());
    const auto& mv = s.label.map.values();
    maps.insert(maps.end(), mv.begin(), mv.end());
    targets.push_back(s.label.liveness == Liveness::kLiving ? 1.0 : 0.0);
  }

  Shape img_batch = {batch.size, img_shape[0], img_shape[1], img_shape[2]};
  Shape map_batch = {batch.size, map_shape[0], map_shape[1], map_shape[2]};
  batch.images = Tensor::from_values(img_batch, std::move(images));
  batch.depth_maps = Tensor::from_values(map_batch, std::move(maps));
  batch.live_targets = Tensor::from_values({batch.size, 1}, std::move(targets));
  return batch;
}

}  // namespace metafas
