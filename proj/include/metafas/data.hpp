#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metafas/tensor.hpp"

namespace metafas {

enum class Liveness { kLiving, kSpoofing };

const char* liveness_name(Liveness l);
Liveness liveness_from_name(const std::string& name);

/// Per-sample supervision target: a depth map in [0,1] for living faces,
/// all zeros for spoofing faces.
struct DepthLabel {
  Tensor map;  // (d, d, 1)
  Liveness liveness = Liveness::kSpoofing;

  /// Enforces the label invariants: spoofing maps are all zero, living maps
  /// lie in [0,1].
  void validate() const;
};

struct Sample {
  Tensor image;  // (H, W, 3), values in [0,1]
  DepthLabel label;
  std::string category;  // fine-grained category name
  int64_t uid = -1;      // unique within one dataset; identity for disjointness checks
};

/// Mini-batch assembled from samples: stacked images, stacked depth labels
/// and a 0/1 liveness column (1 = living).
struct Batch {
  Tensor images;       // (B, H, W, 3)
  Tensor depth_maps;   // (B, d, d, 1)
  Tensor live_targets; // (B, 1)
  int size = 0;
};

Batch make_batch(const std::vector<Sample>& samples);

}  // namespace metafas
