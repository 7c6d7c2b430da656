#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metafas/data.hpp"
#include "metafas/tensor.hpp"

namespace metafas {

enum class HeadKind { kDepthRegression, kBinaryClassification };

/// Geometry and capacity of the depth-regression backbone. The backbone is a
/// stem convolution followed by `blocks` cascaded conv+pool blocks; the
/// features of every block are pooled to the depth grid and concatenated
/// before the prediction head.
struct ModelConfig {
  int input_side = 32;
  int depth_side = 4;
  int input_channels = 3;
  int stem_channels = 8;
  std::vector<int> channels = {8, 16, 32};  // one entry per block
  int head_channels = 16;
  HeadKind head = HeadKind::kDepthRegression;
  double lambda_contrast = 0.5;

  int blocks() const { return static_cast<int>(channels.size()); }

  /// Throws ValueError listing every violated constraint.
  void validate() const;
};

/// Named weight collection; order is fixed by construction and is the
/// contract between init_weights, forward and the checkpoint format.
struct Weights {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  int64_t parameter_count() const;
  Weights detached_copy(bool requires_grad) const;
};

/// Sum over the eight 3x3 contrast kernels (center -1, one neighbor +1) of
/// the squared difference between kernel responses on the two maps, with
/// zero padding. Maps are (B, d, d, 1); the batch dimension is summed too.
Tensor contrastive_depth_loss(const Tensor& predicted, const Tensor& label);

/// The eight contrast kernels as a single (3, 3, 1, 8) constant tensor.
Tensor contrast_kernels();

class Network {
 public:
  explicit Network(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// Deterministic fan-in-scaled initialization; same seed, same weights.
  Weights init_weights(uint64_t seed) const;

  /// x: (B, H, W, C) -> depth head (B, d, d, 1) or binary head (B, 1) logits.
  Tensor forward(const Weights& w, const Tensor& x) const;

  /// Depth-head prediction, batched. Alias of forward with a shape check.
  Tensor predict_depth(const Weights& w, const Tensor& x) const;

  /// Mean over the batch of the per-sample loss: squared-error depth loss
  /// plus lambda_contrast * contrastive term for the depth head, or
  /// cross-entropy for the binary head.
  Tensor task_loss(const Weights& w, const Batch& batch) const;

  /// Liveness score per sample: mean predicted depth (depth head) or the
  /// living-class probability (binary head). Higher means more living.
  std::vector<double> live_scores(const Weights& w, const Tensor& images) const;

 private:
  ModelConfig config_;
  std::vector<int> block_sides_;  // spatial side after each block
};

/// Mean of one (d, d, 1) depth map; the depth head's liveness score.
double live_score_from_depth(const Tensor& depth_map);

/// Versioned self-describing checkpoint: config, seed, named weight tensors
/// and the inner-update schedule parameters.
struct Checkpoint {
  int format_version = 1;
  ModelConfig config;
  uint64_t seed = 0;
  Weights weights;
  double alpha = 1e-3;
  double gamma = 1.0;
  int inner_steps = 3;
  double beta = 1e-4;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace metafas
