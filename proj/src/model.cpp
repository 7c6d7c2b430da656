#include "metafas/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "metafas/ops.hpp"

namespace metafas {

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (input_side < 1) problems.push_back("input_side must be positive");
  if (depth_side < 1) problems.push_back("depth_side must be positive");
  if (input_side >= 1 && depth_side >= 1 && input_side % depth_side != 0) {
    problems.push_back("input_side must be a multiple of depth_side");
  }
  if (input_channels < 1) problems.push_back("input_channels must be positive");
  if (channels.empty()) problems.push_back("at least one block is required");
  for (size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1) {
      problems.push_back("block " + std::to_string(i + 1) + " channel width must be >= 1");
    }
  }
  if (stem_channels < 1) problems.push_back("stem_channels must be >= 1");
  if (head_channels < 1) problems.push_back("head_channels must be >= 1");
  if (lambda_contrast < 0.0) problems.push_back("lambda_contrast must be >= 0");

  // Each block halves the spatial side; every block output must be poolable
  // down to the depth grid for the multi-scale concatenation.
  int side = input_side;
  for (size_t i = 0; i < channels.size(); ++i) {
    if (side % 2 != 0) {
      problems.push_back("input_side " + std::to_string(input_side) +
                         " is not divisible by 2^" + std::to_string(channels.size()));
      break;
    }
    side /= 2;
    if (depth_side >= 1 && (side < depth_side || side % depth_side != 0)) {
      problems.push_back("block " + std::to_string(i + 1) + " output side " +
                         std::to_string(side) + " cannot be pooled to depth_side " +
                         std::to_string(depth_side));
    }
  }

  if (!problems.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValueError(msg);
  }
}

int64_t Weights::parameter_count() const {
  int64_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

Weights Weights::detached_copy(bool requires_grad) const {
  Weights out;
  out.names = names;
  out.tensors.reserve(tensors.size());
  for (const auto& t : tensors) {
    Tensor c = t.detach();
    c.set_requires_grad(requires_grad);
    out.tensors.push_back(std::move(c));
  }
  return out;
}

Tensor contrast_kernels() {
  // (3,3,1,8): output channel i has +1 at the i-th neighbor, -1 at center.
  std::vector<double> k(3 * 3 * 1 * 8, 0.0);
  int neighbor = 0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == 1 && j == 1) continue;
      const size_t at = (static_cast<size_t>(i) * 3 + j) * 8 + neighbor;
      k[at] = 1.0;
      const size_t center = (static_cast<size_t>(1) * 3 + 1) * 8 + neighbor;
      k[center] = -1.0;
      ++neighbor;
    }
  }
  return Tensor::from_values({3, 3, 1, 8}, std::move(k));
}

Tensor contrastive_depth_loss(const Tensor& predicted, const Tensor& label) {
  if (predicted.shape() != label.shape()) {
    throw ShapeError("contrastive_depth_loss: shape mismatch " +
                     detail::shape_str(predicted.shape()) + " vs " +
                     detail::shape_str(label.shape()));
  }
  Tensor kernels = contrast_kernels();
  Tensor rp = conv2d(predicted, kernels, 1);
  Tensor rl = conv2d(label, kernels, 1);
  return sum(square(sub(rp, rl)));
}

Network::Network(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  int side = config_.input_side;
  for (int b = 0; b < config_.blocks(); ++b) {
    side /= 2;
    block_sides_.push_back(side);
  }
}

namespace {

Tensor conv_bias_relu(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  Tensor y = conv2d(x, kernel, 1);
  return relu(add(y, broadcast_to_last_axis(bias, y.shape())));
}

int total_block_channels(const ModelConfig& c) {
  int n = 0;
  for (int w : c.channels) n += w;
  return n;
}

}  // namespace

Weights Network::init_weights(uint64_t seed) const {
  std::mt19937_64 rng(seed);
  Weights w;
  auto push_conv = [&](const std::string& name, int kh, int kw, int cin, int cout) {
    const double stddev = std::sqrt(2.0 / (kh * kw * cin));
    w.names.push_back(name + ".kernel");
    w.tensors.push_back(randn({kh, kw, cin, cout}, rng, stddev));
    w.names.push_back(name + ".bias");
    w.tensors.push_back(Tensor::zeros({cout}));
  };

  push_conv("stem", 3, 3, config_.input_channels, config_.stem_channels);
  int prev = config_.stem_channels;
  for (int b = 0; b < config_.blocks(); ++b) {
    push_conv("block" + std::to_string(b + 1), 3, 3, prev, config_.channels[b]);
    prev = config_.channels[b];
  }

  // The output layer starts small so that initial predictions sit near zero
  // and the contrast term does not dwarf everything at the first steps.
  const int fused = total_block_channels(config_);
  if (config_.head == HeadKind::kDepthRegression) {
    push_conv("head1", 3, 3, fused, config_.head_channels);
    const double out_stddev = 0.1 * std::sqrt(1.0 / (9.0 * config_.head_channels));
    w.names.push_back("head2.kernel");
    w.tensors.push_back(randn({3, 3, config_.head_channels, 1}, rng, out_stddev));
    w.names.push_back("head2.bias");
    w.tensors.push_back(Tensor::zeros({1}));
  } else {
    const int in_dim = config_.depth_side * config_.depth_side * fused;
    const double out_stddev = 0.1 * std::sqrt(1.0 / in_dim);
    w.names.push_back("fc.weight");
    w.tensors.push_back(randn({in_dim, 1}, rng, out_stddev));
    w.names.push_back("fc.bias");
    w.tensors.push_back(Tensor::zeros({1}));
  }
  return w;
}

Tensor Network::forward(const Weights& w, const Tensor& x) const {
  const size_t expected = 2 * (1 + config_.blocks()) +
                          (config_.head == HeadKind::kDepthRegression ? 4 : 2);
  if (w.tensors.size() != expected) {
    throw ValueError("forward: weight collection has " + std::to_string(w.tensors.size()) +
                     " tensors, model expects " + std::to_string(expected));
  }
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != config_.input_side || xs[2] != config_.input_side ||
      xs[3] != config_.input_channels) {
    throw ShapeError("forward: input " + detail::shape_str(xs) + " does not match (B," +
                     std::to_string(config_.input_side) + "," +
                     std::to_string(config_.input_side) + "," +
                     std::to_string(config_.input_channels) + ")");
  }

  size_t cursor = 0;
  auto next = [&]() -> const Tensor& { return w.tensors[cursor++]; };

  const Tensor& stem_k = next();
  const Tensor& stem_b = next();
  Tensor h = conv_bias_relu(x, stem_k, stem_b);

  std::vector<Tensor> block_features;
  for (int b = 0; b < config_.blocks(); ++b) {
    const Tensor& k = next();
    const Tensor& bias = next();
    h = max_pool2d(conv_bias_relu(h, k, bias), 2);
    block_features.push_back(h);
  }

  // Pool every block's features onto the depth grid and fuse them.
  std::vector<Tensor> fused;
  for (int b = 0; b < config_.blocks(); ++b) {
    const int factor = block_sides_[b] / config_.depth_side;
    fused.push_back(factor > 1 ? avg_pool2d(block_features[b], factor)
                               : block_features[b]);
  }
  Tensor cat = fused.size() > 1 ? concat(fused, 3) : fused[0];

  if (config_.head == HeadKind::kDepthRegression) {
    const Tensor& h1k = next();
    const Tensor& h1b = next();
    Tensor y = conv_bias_relu(cat, h1k, h1b);
    const Tensor& h2k = next();
    const Tensor& h2b = next();
    Tensor out = conv2d(y, h2k, 1);
    return add(out, broadcast_to_last_axis(h2b, out.shape()));
  }

  const Tensor& fw = next();
  const Tensor& fb = next();
  const int in_dim = config_.depth_side * config_.depth_side * total_block_channels(config_);
  Tensor flat = reshape(cat, {xs[0], in_dim});
  Tensor logits = matmul(flat, fw);
  return add(logits, broadcast_to_last_axis(fb, logits.shape()));
}

Tensor Network::predict_depth(const Weights& w, const Tensor& x) const {
  if (config_.head != HeadKind::kDepthRegression) {
    throw ValueError("predict_depth: model has a binary-classification head");
  }
  if (x.shape().size() == 3) {
    Shape batched = {1, x.shape()[0], x.shape()[1], x.shape()[2]};
    Tensor out = forward(w, reshape(x, batched));
    return reshape(out, {config_.depth_side, config_.depth_side, 1});
  }
  return forward(w, x);
}

Tensor Network::task_loss(const Weights& w, const Batch& batch) const {
  if (batch.size < 1) throw ValueError("task_loss: empty batch");
  Tensor out = forward(w, batch.images);
  if (config_.head == HeadKind::kDepthRegression) {
    Tensor se = mean(square(sub(out, batch.depth_maps)));
    if (config_.lambda_contrast == 0.0) return se;
    Tensor cdl = contrastive_depth_loss(out, batch.depth_maps);
    return add(se, scale(cdl, config_.lambda_contrast / batch.size));
  }

  // Binary head: mean cross-entropy on sigmoid probabilities.
  Tensor p = sigmoid(out);
  Tensor one = Tensor::ones(p.shape());
  Tensor eps = Tensor::full(p.shape(), 1e-12);
  Tensor pos = mul(batch.live_targets, log(add(p, eps)));
  Tensor negv = mul(sub(one, batch.live_targets), log(add(sub(one, p), eps)));
  return neg(mean(add(pos, negv)));
}

std::vector<double> Network::live_scores(const Weights& w, const Tensor& images) const {
  NoGradGuard guard;
  Tensor out = forward(w, images);
  const int batch = images.shape()[0];
  std::vector<double> scores(static_cast<size_t>(batch));
  if (config_.head == HeadKind::kDepthRegression) {
    const int64_t per = out.size() / batch;
    const auto& v = out.values();
    for (int b = 0; b < batch; ++b) {
      double acc = 0.0;
      for (int64_t i = 0; i < per; ++i) acc += v[static_cast<size_t>(b) * per + i];
      scores[b] = acc / static_cast<double>(per);
    }
  } else {
    const auto& v = out.values();
    for (int b = 0; b < batch; ++b) scores[b] = 1.0 / (1.0 + std::exp(-v[b]));
  }
  return scores;
}

double live_score_from_depth(const Tensor& depth_map) {
  return mean(depth_map).item();
}

namespace {

using nlohmann::json;

json config_to_json(const ModelConfig& c) {
  return json{{"input_side", c.input_side},
              {"depth_side", c.depth_side},
              {"input_channels", c.input_channels},
              {"stem_channels", c.stem_channels},
              {"channels", c.channels},
              {"head_channels", c.head_channels},
              {"head", c.head == HeadKind::kDepthRegression ? "depth" : "binary"},
              {"lambda_contrast", c.lambda_contrast}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.input_side = j.at("input_side").get<int>();
  c.depth_side = j.at("depth_side").get<int>();
  c.input_channels = j.at("input_channels").get<int>();
  c.stem_channels = j.at("stem_channels").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.head_channels = j.at("head_channels").get<int>();
  const std::string head = j.at("head").get<std::string>();
  if (head == "depth") {
    c.head = HeadKind::kDepthRegression;
  } else if (head == "binary") {
    c.head = HeadKind::kBinaryClassification;
  } else {
    throw DataError("checkpoint: unknown head kind '" + head + "'");
  }
  c.lambda_contrast = j.at("lambda_contrast").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json j;
  j["format_version"] = ck.format_version;
  j["config"] = config_to_json(ck.config);
  j["seed"] = ck.seed;
  j["alpha"] = ck.alpha;
  j["gamma"] = ck.gamma;
  j["inner_steps"] = ck.inner_steps;
  j["beta"] = ck.beta;
  json ws = json::array();
  for (size_t i = 0; i < ck.weights.tensors.size(); ++i) {
    ws.push_back(json{{"name", ck.weights.names[i]},
                      {"shape", ck.weights.tensors[i].shape()},
                      {"values", ck.weights.tensors[i].values()}});
  }
  j["weights"] = std::move(ws);

  std::ofstream out(path);
  if (!out) throw DataError("checkpoint: cannot write '" + path + "'");
  out << j.dump();
  if (!out) throw DataError("checkpoint: short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("checkpoint: parse failure in '" + path + "': " + e.what());
  }

  Checkpoint ck;
  try {
    ck.format_version = j.at("format_version").get<int>();
    if (ck.format_version != 1) {
      throw DataError("checkpoint: unsupported format_version " +
                      std::to_string(ck.format_version));
    }
    ck.config = config_from_json(j.at("config"));
    ck.seed = j.at("seed").get<uint64_t>();
    ck.alpha = j.at("alpha").get<double>();
    ck.gamma = j.at("gamma").get<double>();
    ck.inner_steps = j.at("inner_steps").get<int>();
    ck.beta = j.at("beta").get<double>();
    for (const auto& wj : j.at("weights")) {
      ck.weights.names.push_back(wj.at("name").get<std::string>());
      Shape shape = wj.at("shape").get<Shape>();
      std::vector<double> values = wj.at("values").get<std::vector<double>>();
      ck.weights.tensors.push_back(Tensor::from_values(std::move(shape), std::move(values)));
    }
  } catch (const json::exception& e) {
    throw DataError("checkpoint: malformed '" + path + "': " + e.what());
  }
  return ck;
}

}  // namespace metafas
