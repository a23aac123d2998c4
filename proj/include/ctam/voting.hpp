#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ctam/errors.hpp"
#include "ctam/tensor.hpp"

namespace ctam {

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr double kDefaultExtremeFraction = 0.025;

enum class Scheme { simple, ranked, learner };
enum class Diagnosis { negative = 0, positive = 1 };

inline const char* to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::simple: return "simple";
    case Scheme::ranked: return "ranked";
    case Scheme::learner: return "learner";
  }
  return "unknown";
}

inline Scheme scheme_from_string(const std::string& name) {
  if (name == "simple") return Scheme::simple;
  if (name == "ranked") return Scheme::ranked;
  if (name == "learner") return Scheme::learner;
  throw std::invalid_argument("unknown voting scheme '" + name +
                              "'; expected simple, ranked or learner");
}

// Patient-level outcome plus the evidence that produced it. Both threshold
// rules are strict: an aggregate of exactly 0.5 stays negative.
struct PatientDecision {
  std::string patient_id;
  Diagnosis diagnosis = Diagnosis::negative;
  Scheme scheme = Scheme::simple;
  double aggregate_confidence = 0.0;
  std::vector<double> slice_confidences;
};

namespace detail {

inline void check_confidences(const std::vector<double>& confidences, const char* who) {
  require(!confidences.empty(), std::string(who) + ": empty confidence list");
  for (double c : confidences)
    require(c >= 0.0 && c <= 1.0,
            std::string(who) + ": confidence " + std::to_string(c) + " outside [0,1]");
}

}  // namespace detail

// Mean of all slice confidences against a strict threshold.
inline PatientDecision simple_average_vote(const std::vector<double>& confidences,
                                           double threshold = kDefaultThreshold) {
  detail::check_confidences(confidences, "simple_average_vote");
  double sum = 0.0;
  for (double c : confidences) sum += c;
  const double avg = sum / static_cast<double>(confidences.size());

  PatientDecision decision;
  decision.scheme = Scheme::simple;
  decision.aggregate_confidence = avg;
  decision.diagnosis = avg > threshold ? Diagnosis::positive : Diagnosis::negative;
  decision.slice_confidences = confidences;
  return decision;
}

// Decision from the extremes only: the top and bottom ceil(n * fraction)
// confidences (union when the two ranges overlap), averaged and compared
// against the strict threshold.
inline PatientDecision ranked_vote(const std::vector<double>& confidences,
                                   double extreme_fraction = kDefaultExtremeFraction,
                                   double threshold = kDefaultThreshold) {
  detail::check_confidences(confidences, "ranked_vote");
  detail::require(extreme_fraction > 0.0 && extreme_fraction <= 0.5,
                  "ranked_vote: extreme_fraction must lie in (0,0.5], got " +
                      std::to_string(extreme_fraction));
  const int n = static_cast<int>(confidences.size());
  const int extremes =
      std::max(1, static_cast<int>(std::ceil(n * extreme_fraction - 1e-9)));

  std::vector<double> sorted(confidences);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < n; ++i) {
    if (i < extremes || i >= n - extremes) {
      sum += sorted[static_cast<std::size_t>(i)];
      ++count;
    }
  }
  const double avg = sum / count;

  PatientDecision decision;
  decision.scheme = Scheme::ranked;
  decision.aggregate_confidence = avg;
  decision.diagnosis = avg > threshold ? Diagnosis::positive : Diagnosis::negative;
  decision.slice_confidences = confidences;
  return decision;
}

// Single-head attention aggregator over per-slice feature vectors. A
// learnable classification token is prepended; no positional encoding, so
// the output is invariant to the order of the slices.
struct ShaParams {
  Tensor query;        // [C,C]
  Tensor key;          // [C,C]
  Tensor value;        // [C,C]
  Tensor cls_token;    // [C]
  Tensor head_weight;  // [C,1]
  Tensor head_bias;    // [1]

  int width() const { return cls_token.dim(0); }

  static ShaParams init(std::uint64_t seed, int channels = 16) {
    detail::require(channels >= 1, "ShaParams: channels must be positive");
    std::mt19937_64 rng(seed);
    ShaParams p;
    p.query = uniform_init(rng, {channels, channels}, channels);
    p.key = uniform_init(rng, {channels, channels}, channels);
    p.value = uniform_init(rng, {channels, channels}, channels);
    p.cls_token = uniform_init(rng, {channels}, channels);
    p.head_weight = uniform_init(rng, {channels, 1}, channels);
    p.head_bias = uniform_init(rng, {1}, channels);
    return p;
  }

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    return {
        {"sha.query", &query},           {"sha.key", &key},
        {"sha.value", &value},           {"sha.cls", &cls_token},
        {"sha.head.weight", &head_weight}, {"sha.head.bias", &head_bias},
    };
  }

  std::vector<Tensor*> trainable() {
    std::vector<Tensor*> out;
    for (auto& [name, tensor] : named_tensors()) out.push_back(tensor);
    return out;
  }
};

namespace detail {

// Packs n feature vectors into an [n,C] matrix. The rows are treated as
// frozen inputs; gradients flow only through the aggregator parameters.
inline Tensor stack_rows(const std::vector<Tensor>& rows, int width) {
  std::vector<double> data;
  data.reserve(rows.size() * static_cast<std::size_t>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].rank() == 1 && rows[i].dim(0) == width,
            "sha_forward: feature " + std::to_string(i) + " has shape " +
                shape_str(rows[i].shape()) + ", expected [" + std::to_string(width) + "]");
    data.insert(data.end(), rows[i].values().begin(), rows[i].values().end());
  }
  return Tensor::from_data({static_cast<int>(rows.size()), width}, std::move(data));
}

}  // namespace detail

// Scaled dot-product attention over [cls; features], sigmoid head on the
// attended cls position. Returns a [1] tensor with value in (0,1).
inline Tensor sha_forward(const std::vector<Tensor>& features, const ShaParams& params,
                          Tape* tape = nullptr) {
  detail::require(!features.empty(), "sha_forward: need at least one feature vector");
  const int c = params.width();
  const Tensor feature_rows = detail::stack_rows(features, c);

  Tensor cls_row = reshape(params.cls_token, {1, c}, tape);
  Tensor tokens = concat_rows(cls_row, feature_rows, tape);  // [n+1, C]
  Tensor q = matmul(tokens, params.query, tape);
  Tensor k = matmul(tokens, params.key, tape);
  Tensor v = matmul(tokens, params.value, tape);
  Tensor scores = scale(matmul(q, transpose(k, tape), tape),
                        1.0 / std::sqrt(static_cast<double>(c)), tape);
  Tensor weights = softmax(scores, tape);       // row-wise, [n+1, n+1]
  Tensor mixed = matmul(weights, v, tape);      // [n+1, C]
  Tensor cls_out = reshape(take_row(mixed, 0, tape), {1, c}, tape);
  Tensor logit = bias_add(matmul(cls_out, params.head_weight, tape), params.head_bias, tape);
  return reshape(sigmoid(logit, tape), {1}, tape);
}

// Learner-based decision: the aggregator consumes the per-slice features
// directly and its output is compared against the strict threshold.
inline PatientDecision learner_vote(const std::vector<Tensor>& features,
                                    const ShaParams& params,
                                    double threshold = kDefaultThreshold) {
  const double out = sha_forward(features, params, nullptr).item();
  PatientDecision decision;
  decision.scheme = Scheme::learner;
  decision.aggregate_confidence = out;
  decision.diagnosis = out > threshold ? Diagnosis::positive : Diagnosis::negative;
  return decision;
}

}  // namespace ctam
