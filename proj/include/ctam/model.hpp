#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctam/errors.hpp"
#include "ctam/image.hpp"
#include "ctam/tensor.hpp"

namespace ctam {

// Convex blend weights for the merged feature map. beta is derived from
// alpha so the unit-sum constraint holds structurally.
struct MergeWeights {
  double alpha = 0.5;
  double beta() const { return 1.0 - alpha; }
};

struct ConvBlock {
  Tensor kernel;  // [Kh,Kw,Cin,Cout]
  Tensor bias;    // [Cout]
};

// Slice classifier parameters: a three-block strided conv backbone
// (1 -> 8 -> 16 -> C channels), a 1x1 attention projection producing the
// per-pixel attention map, and a sigmoid dense head on the pooled features.
struct ModelParams {
  std::array<ConvBlock, 3> backbone;
  Tensor attention_kernel;  // [1,1,C,1]
  Tensor attention_bias;    // [1]
  Tensor head_weight;       // [C,1]
  Tensor head_bias;         // [1]
  MergeWeights merge_weights;
  int input_size = 64;

  int channels() const { return backbone[2].kernel.dim(3); }

  static ModelParams init(std::uint64_t seed, int channels = 16, int input_size = 64) {
    detail::require(channels >= 1, "ModelParams: channels must be positive");
    detail::require(input_size >= 8 && input_size % 8 == 0,
                    "ModelParams: input_size must be a positive multiple of 8");
    std::mt19937_64 rng(seed);
    ModelParams p;
    const int widths[4] = {1, 8, 16, channels};
    for (int b = 0; b < 3; ++b) {
      const int cin = widths[b], cout = widths[b + 1];
      const int fan_in = 3 * 3 * cin;
      p.backbone[static_cast<std::size_t>(b)].kernel = uniform_init(rng, {3, 3, cin, cout}, fan_in);
      p.backbone[static_cast<std::size_t>(b)].bias = uniform_init(rng, {cout}, fan_in);
    }
    p.attention_kernel = uniform_init(rng, {1, 1, channels, 1}, channels);
    p.attention_bias = uniform_init(rng, {1}, channels);
    p.head_weight = uniform_init(rng, {channels, 1}, channels);
    p.head_bias = uniform_init(rng, {1}, channels);
    p.input_size = input_size;
    return p;
  }

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    return {
        {"backbone.conv1.kernel", &backbone[0].kernel},
        {"backbone.conv1.bias", &backbone[0].bias},
        {"backbone.conv2.kernel", &backbone[1].kernel},
        {"backbone.conv2.bias", &backbone[1].bias},
        {"backbone.conv3.kernel", &backbone[2].kernel},
        {"backbone.conv3.bias", &backbone[2].bias},
        {"attention.kernel", &attention_kernel},
        {"attention.bias", &attention_bias},
        {"head.weight", &head_weight},
        {"head.bias", &head_bias},
    };
  }

  std::vector<Tensor*> trainable() {
    std::vector<Tensor*> out;
    for (auto& [name, tensor] : named_tensors()) out.push_back(tensor);
    return out;
  }
};

// Backbone features f_img: three stride-2 conv+relu blocks, [H,W,1] ->
// [H/8, W/8, C]. Input spatial dims must be divisible by 8.
inline Tensor extract_features(const Tensor& image, const ModelParams& params,
                               Tape* tape = nullptr) {
  detail::require(image.rank() == 3 && image.dim(2) == 1,
                  "extract_features: expected a [H,W,1] input, got " +
                      detail::shape_str(image.shape()));
  const int h = image.dim(0), w = image.dim(1);
  if (h % 8 != 0 || w % 8 != 0)
    throw std::invalid_argument(
        "extract_features: input " + std::to_string(h) + "x" + std::to_string(w) +
        " is not divisible by 8; resize the slice first (resize_bilinear, e.g. to " +
        std::to_string(params.input_size) + "x" + std::to_string(params.input_size) + ")");
  Tensor x = image;
  for (const ConvBlock& block : params.backbone) {
    x = conv2d(x, block.kernel, /*stride=*/2, /*pad=*/1, tape);
    x = bias_add(x, block.bias, tape);
    x = relu(x, tape);
  }
  return x;
}

// Attention map A over the feature grid: sigmoid of a 1x1 projection of the
// channels, so every value lies in (0,1).
inline Tensor compute_attention_map(const Tensor& f_img, const ModelParams& params,
                                    Tape* tape = nullptr) {
  detail::require(f_img.rank() == 3, "compute_attention_map: features must be [H,W,C], got " +
                                         detail::shape_str(f_img.shape()));
  detail::require(f_img.dim(2) == params.attention_kernel.dim(2),
                  "compute_attention_map: feature width " + std::to_string(f_img.dim(2)) +
                      " does not match attention kernel width " +
                      std::to_string(params.attention_kernel.dim(2)));
  Tensor z = conv2d(f_img, params.attention_kernel, /*stride=*/1, /*pad=*/0, tape);
  z = bias_add(z, params.attention_bias, tape);
  z = sigmoid(z, tape);
  return reshape(z, {f_img.dim(0), f_img.dim(1)}, tape);
}

// Attended features: every channel rescaled per pixel by the attention map.
inline Tensor attend(const Tensor& f_img, const Tensor& attention, Tape* tape = nullptr) {
  return spatial_scale(f_img, attention, tape);
}

// Merged features: alpha * f_img + (1 - alpha) * f_att, elementwise.
inline Tensor merge(const Tensor& f_img, const Tensor& f_att, const MergeWeights& weights,
                    Tape* tape = nullptr) {
  detail::require(f_img.same_shape(f_att),
                  "merge: shape mismatch " + detail::shape_str(f_img.shape()) + " vs " +
                      detail::shape_str(f_att.shape()));
  detail::require(weights.alpha >= 0.0 && weights.alpha <= 1.0,
                  "merge: alpha must lie in [0,1], got " + std::to_string(weights.alpha));
  return add(scale(f_img, weights.alpha, tape), scale(f_att, weights.beta(), tape), tape);
}

// Final feature vector: per-channel spatial mean of the merged map.
inline Tensor pool_final(const Tensor& f_merged, Tape* tape = nullptr) {
  return global_avg_pool(f_merged, tape);
}

// Sigmoid dense head: confidence in (0,1) that the slice is positive.
inline Tensor slice_confidence(const Tensor& f_final, const ModelParams& params,
                               Tape* tape = nullptr) {
  detail::require(f_final.rank() == 1, "slice_confidence: expected a feature vector, got " +
                                           detail::shape_str(f_final.shape()));
  detail::require(f_final.dim(0) == params.head_weight.dim(0),
                  "slice_confidence: feature width " + std::to_string(f_final.dim(0)) +
                      " does not match head input width " +
                      std::to_string(params.head_weight.dim(0)));
  Tensor row = reshape(f_final, {1, f_final.dim(0)}, tape);
  Tensor logit = bias_add(matmul(row, params.head_weight, tape), params.head_bias, tape);
  return reshape(sigmoid(logit, tape), {1}, tape);
}

struct SliceForward {
  Tensor confidence;  // [1], value in (0,1)
  Tensor features;    // [C], pooled merged features
};

// Whole slice pipeline: backbone -> attention map -> attended -> merged ->
// pooled -> head. Returns both the confidence and the pooled features (the
// learner-based aggregation consumes the latter directly).
inline SliceForward forward_slice(const Tensor& image, const ModelParams& params,
                                  Tape* tape = nullptr) {
  const Tensor f_img = extract_features(image, params, tape);
  const Tensor attention = compute_attention_map(f_img, params, tape);
  const Tensor f_att = attend(f_img, attention, tape);
  const Tensor f_merged = merge(f_img, f_att, params.merge_weights, tape);
  const Tensor f_final = pool_final(f_merged, tape);
  return {slice_confidence(f_final, params, tape), f_final};
}

inline SliceForward forward_slice(const Image& image, const ModelParams& params,
                                  Tape* tape = nullptr) {
  return forward_slice(image_to_tensor(image), params, tape);
}

}  // namespace ctam
