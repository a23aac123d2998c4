#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ctam/errors.hpp"
#include "ctam/image.hpp"
#include "ctam/metrics.hpp"
#include "ctam/model.hpp"
#include "ctam/rng.hpp"
#include "ctam/slice_select.hpp"
#include "ctam/tensor.hpp"
#include "ctam/volume_io.hpp"
#include "ctam/voting.hpp"

namespace ctam {

struct TrainConfig {
  enum class Scope { head_only, head_and_sha };

  int epochs = 20;
  double learning_rate = 1e-3;
  int batch_size = 16;
  std::uint64_t seed = 0;
  Scope scope = Scope::head_and_sha;
  double clamp_eps = 1e-7;
};

// Binary cross-entropy with the prediction clamped to
// [clamp_eps, 1-clamp_eps], so the loss stays finite on saturated outputs.
inline double bce_loss(double confidence, int label, double clamp_eps = 1e-7) {
  detail::require(label == 0 || label == 1, "bce_loss: label must be 0 or 1");
  detail::require(clamp_eps > 0.0 && clamp_eps < 0.5,
                  "bce_loss: clamp_eps must lie in (0,0.5)");
  detail::require(confidence >= 0.0 && confidence <= 1.0,
                  "bce_loss: confidence must lie in [0,1]");
  const double p = std::clamp(confidence, clamp_eps, 1.0 - clamp_eps);
  return -(label * std::log(p) + (1 - label) * std::log(1.0 - p));
}

// Tape-recorded variant; the gradient is zero where the clamp is active.
inline Tensor bce_loss_op(const Tensor& confidence, int label, double clamp_eps, Tape* tape) {
  detail::require(confidence.size() == 1, "bce_loss_op: confidence must be scalar");
  const double raw = confidence.data()[0];
  Tensor out = Tensor::scalar(bce_loss(raw, label, clamp_eps));
  if (tape && confidence.requires_grad()) {
    detail::mark_output(out, tape);
    tape->record([confidence, out, raw, label, clamp_eps]() mutable {
      if (raw < clamp_eps || raw > 1.0 - clamp_eps) return;
      const double g = (raw - label) / (raw * (1.0 - raw));
      confidence.grad_data()[0] += out.grad_data()[0] * g;
    });
  }
  return out;
}

// Adaptive-moment state for one fixed parameter list; shapes mirror the
// parameters in order.
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long step = 0;

  static OptimizerState for_params(const std::vector<Tensor*>& params) {
    OptimizerState state;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
    return state;
  }
};

inline void optimizer_step(const std::vector<Tensor*>& params, OptimizerState& state,
                           double learning_rate) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  detail::require(params.size() == state.m.size(),
                  "optimizer_step: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i)
    detail::require(params[i]->requires_grad(),
                    "optimizer_step: parameter " + std::to_string(i) + " has no gradient");

  ++state.step;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const std::vector<double>& g = p.grad();
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    double* w = p.data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= learning_rate * m_hat / (std::sqrt(v_hat) + kEps);
    }
  }
}

struct TrainResult {
  ModelParams model;
  std::optional<ShaParams> sha;
  std::vector<double> history;      // per-epoch mean slice loss
  std::vector<double> sha_history;  // per-epoch mean patient loss (aggregator phase)
};

namespace detail {

struct PatientSlices {
  std::string id;
  int label = 0;
  std::vector<Tensor> inputs;  // resized [S,S,1] slice tensors
};

inline std::vector<PatientSlices> prepare_training_slices(const std::vector<Volume>& volumes,
                                                          const LabelTable& labels,
                                                          const SelectionConfig& selection,
                                                          int input_size) {
  std::vector<const Volume*> sorted;
  sorted.reserve(volumes.size());
  for (const Volume& v : volumes) sorted.push_back(&v);
  std::sort(sorted.begin(), sorted.end(),
            [](const Volume* a, const Volume* b) { return a->patient_id < b->patient_id; });

  std::vector<PatientSlices> out;
  out.reserve(sorted.size());
  for (const Volume* volume : sorted) {
    PatientSlices p;
    p.id = volume->patient_id;
    p.label = labels.at(volume->patient_id);
    for (const auto& [index, image] : select_slices(*volume, selection, SelectMode::train))
      p.inputs.push_back(image_to_tensor(resize_bilinear(image, input_size, input_size)));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace detail

// Fits the slice classifier with per-slice binary cross-entropy, every
// selected slice inheriting its patient's label. When the scope includes
// the aggregator, a second phase fits it on the frozen per-slice features
// with patient-level loss. Deterministic for a fixed (seed, config, data).
inline TrainResult train(const std::vector<Volume>& volumes, const LabelTable& labels,
                         const TrainConfig& config, const SelectionConfig& selection) {
  detail::require(config.epochs >= 0, "train: epochs must be >= 0");
  detail::require(config.learning_rate >= 0.0, "train: learning_rate must be >= 0");
  detail::require(config.batch_size >= 1, "train: batch_size must be >= 1");
  detail::require(config.clamp_eps > 0.0 && config.clamp_eps < 0.5,
                  "train: clamp_eps must lie in (0,0.5)");
  detail::require(volumes.size() >= 2, "train: need at least two patients");

  TrainResult result;
  result.model = ModelParams::init(config.seed);

  const std::vector<detail::PatientSlices> patients = detail::prepare_training_slices(
      volumes, labels, selection, result.model.input_size);
  {
    bool has_pos = false, has_neg = false;
    for (const auto& p : patients) (p.label == 1 ? has_pos : has_neg) = true;
    detail::require(has_pos && has_neg,
                    "train: both classes must be present in the training labels");
  }

  struct Sample {
    const Tensor* input;
    int label;
  };
  std::vector<Sample> pool;
  for (const auto& p : patients)
    for (const Tensor& input : p.inputs) pool.push_back({&input, p.label});

  std::vector<Tensor*> params = result.model.trainable();
  OptimizerState opt = OptimizerState::for_params(params);
  std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0xA1));

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    seeded_shuffle(order, shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      Tape tape;
      Tensor total;
      for (std::size_t i = start; i < stop; ++i) {
        const Sample& sample = pool[order[i]];
        SliceForward fwd = forward_slice(*sample.input, result.model, &tape);
        Tensor loss = bce_loss_op(fwd.confidence, sample.label, config.clamp_eps, &tape);
        total = total.defined() ? add(total, loss, &tape) : loss;
      }
      Tensor batch_loss = scale(total, 1.0 / static_cast<double>(stop - start), &tape);
      const double loss_value = batch_loss.item();
      if (!std::isfinite(loss_value))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch starting at sample " + std::to_string(start));
      for (Tensor* p : params) p->zero_grad();
      backward(batch_loss, tape);
      optimizer_step(params, opt, config.learning_rate);
      epoch_loss += loss_value * static_cast<double>(stop - start);
    }
    result.history.push_back(epoch_loss / static_cast<double>(pool.size()));
  }

  if (config.scope == TrainConfig::Scope::head_and_sha) {
    result.sha = ShaParams::init(mix_seed(config.seed, 0xB2), result.model.channels());

    // Frozen per-slice features per patient.
    std::vector<std::vector<Tensor>> features(patients.size());
    std::vector<int> patient_labels(patients.size());
    for (std::size_t i = 0; i < patients.size(); ++i) {
      patient_labels[i] = patients[i].label;
      for (const Tensor& input : patients[i].inputs)
        features[i].push_back(forward_slice(input, result.model, nullptr).features);
    }

    std::vector<Tensor*> sha_params = result.sha->trainable();
    OptimizerState sha_opt = OptimizerState::for_params(sha_params);
    std::mt19937_64 sha_rng(mix_seed(config.seed, 0xC3));
    std::vector<std::size_t> patient_order(patients.size());
    std::iota(patient_order.begin(), patient_order.end(), std::size_t{0});

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      seeded_shuffle(patient_order, sha_rng);
      double epoch_loss = 0.0;
      for (std::size_t idx : patient_order) {
        Tape tape;
        Tensor out = sha_forward(features[idx], *result.sha, &tape);
        Tensor loss = bce_loss_op(out, patient_labels[idx], config.clamp_eps, &tape);
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value))
          throw std::runtime_error("train: non-finite aggregator loss at epoch " +
                                   std::to_string(epoch));
        for (Tensor* p : sha_params) p->zero_grad();
        backward(loss, tape);
        optimizer_step(sha_params, sha_opt, config.learning_rate);
        epoch_loss += loss_value;
      }
      result.sha_history.push_back(epoch_loss / static_cast<double>(patients.size()));
    }
  }
  return result;
}

// Per-patient forward outputs on the evaluation slice budget.
struct PatientForward {
  std::string patient_id;
  int label = -1;  // -1 when no label is attached
  std::vector<double> confidences;
  std::vector<Tensor> features;
};

inline PatientForward forward_patient(const Volume& volume, const ModelParams& model,
                                      const SelectionConfig& selection, SelectMode mode) {
  PatientForward out;
  out.patient_id = volume.patient_id;
  for (const auto& [index, image] : select_slices(volume, selection, mode)) {
    const Image resized = resize_bilinear(image, model.input_size, model.input_size);
    SliceForward fwd = forward_slice(resized, model, nullptr);
    out.confidences.push_back(fwd.confidence.item());
    out.features.push_back(fwd.features);
  }
  return out;
}

// Runs forward_patient over a set of volumes, optionally attaching labels,
// optionally spreading patients over worker threads. Output order and
// values do not depend on the thread count.
inline std::vector<PatientForward> forward_volumes(const std::vector<Volume>& volumes,
                                                   const ModelParams& model,
                                                   const SelectionConfig& selection,
                                                   SelectMode mode,
                                                   const LabelTable* labels = nullptr,
                                                   int threads = 1) {
  detail::require(threads >= 1, "forward_volumes: threads must be >= 1");
  std::vector<const Volume*> sorted;
  sorted.reserve(volumes.size());
  for (const Volume& v : volumes) sorted.push_back(&v);
  std::sort(sorted.begin(), sorted.end(),
            [](const Volume* a, const Volume* b) { return a->patient_id < b->patient_id; });

  std::vector<PatientForward> out(sorted.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < sorted.size(); i += step)
      out[i] = forward_patient(*sorted[i], model, selection, mode);
  };
  if (threads == 1 || sorted.size() <= 1) {
    work(0, 1);
  } else {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads),
                                                      sorted.size());
    std::vector<std::thread> crew;
    for (std::size_t t = 0; t < workers; ++t) crew.emplace_back(work, t, workers);
    for (std::thread& t : crew) t.join();
  }
  if (labels)
    for (PatientForward& pf : out) pf.label = labels->at(pf.patient_id);
  return out;
}

inline PatientDecision decide(const PatientForward& patient, Scheme scheme,
                              const ShaParams* sha,
                              double threshold = kDefaultThreshold,
                              double extreme_fraction = kDefaultExtremeFraction) {
  PatientDecision decision;
  switch (scheme) {
    case Scheme::simple:
      decision = simple_average_vote(patient.confidences, threshold);
      break;
    case Scheme::ranked:
      decision = ranked_vote(patient.confidences, extreme_fraction, threshold);
      break;
    case Scheme::learner:
      detail::require(sha != nullptr,
                      "decide: learner voting needs aggregator weights, none loaded");
      decision = learner_vote(patient.features, *sha, threshold);
      break;
  }
  decision.patient_id = patient.patient_id;
  return decision;
}

inline MetricsReport evaluate_patients(const std::vector<PatientForward>& patients,
                                       Scheme scheme, const ShaParams* sha,
                                       double threshold = kDefaultThreshold,
                                       double extreme_fraction = kDefaultExtremeFraction) {
  detail::require(!patients.empty(), "evaluate_patients: no patients");
  std::vector<double> scores;
  std::vector<int> predictions, truth;
  for (const PatientForward& patient : patients) {
    detail::require(patient.label == 0 || patient.label == 1,
                    "evaluate_patients: patient '" + patient.patient_id + "' has no label");
    const PatientDecision d = decide(patient, scheme, sha, threshold, extreme_fraction);
    scores.push_back(d.aggregate_confidence);
    predictions.push_back(d.diagnosis == Diagnosis::positive ? 1 : 0);
    truth.push_back(patient.label);
  }
  return compute_report(scores, predictions, truth);
}

// Selects the evaluation slice budget per patient, votes under the given
// scheme, and reports AUC over aggregate confidences plus Macro-F1 over the
// decisions.
inline MetricsReport evaluate_split(const std::vector<Volume>& volumes, const LabelTable& labels,
                                    const ModelParams& model, const ShaParams* sha,
                                    const SelectionConfig& selection, Scheme scheme) {
  const std::vector<PatientForward> forwards =
      forward_volumes(volumes, model, selection, SelectMode::test, &labels);
  return evaluate_patients(forwards, scheme, sha);
}

}  // namespace ctam
