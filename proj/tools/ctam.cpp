// Command-line entry point for the CT-volume classification pipeline:
// dataset generation, slice selection, training, prediction and evaluation.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctam/errors.hpp"
#include "ctam/synth.hpp"
#include "ctam/trainer.hpp"
#include "ctam/weights_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitValidation = 4;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void print_error(const char* kind, const std::string& message) {
  std::cerr << "ctam: error kind=" << kind << " message=\"" << message << "\"\n";
}

std::string format6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<ctam::Volume> load_volume_dir(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root) || !fs::is_directory(root))
    throw ctam::IoError(ctam::IoError::Kind::open_failed,
                        "data directory '" + dir + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_regular_file() && entry.path().extension() == ".svol")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  ctam::detail::require(!files.empty(), "no .svol volumes found in '" + dir + "'");
  std::vector<ctam::Volume> out;
  out.reserve(files.size());
  for (const fs::path& file : files) out.push_back(ctam::read_volume(file));
  return out;
}

// Keeps only volumes present in the label table; every labeled patient must
// have a volume file. Extra unlabeled volumes define the other split and are
// skipped.
std::vector<ctam::Volume> pick_labeled(std::vector<ctam::Volume> volumes,
                                       const ctam::LabelTable& labels) {
  std::set<std::string> present;
  for (const ctam::Volume& v : volumes) present.insert(v.patient_id);
  for (const auto& [id, label] : labels.entries)
    ctam::detail::require(present.count(id) > 0,
                          "labeled patient '" + id + "' has no volume file");
  std::vector<ctam::Volume> out;
  for (ctam::Volume& v : volumes)
    if (labels.contains(v.patient_id)) out.push_back(std::move(v));
  ctam::detail::require(!out.empty(), "label table is empty");
  return out;
}

// Applies a flat JSON config (keys mirror long flag names) by appending the
// missing flags to the token list; flags given on the command line win.
void apply_config_file(CLI::App& app, std::vector<std::string>& tokens) {
  std::string path;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == "--config" && i + 1 < tokens.size()) {
      path = tokens[i + 1];
      break;
    }
    if (tokens[i].rfind("--config=", 0) == 0) {
      path = tokens[i].substr(9);
      break;
    }
  }
  if (path.empty()) return;

  CLI::App* sub = nullptr;
  for (const std::string& token : tokens) {
    if (!token.empty() && token[0] == '-') continue;
    try {
      sub = app.get_subcommand(token);
      break;
    } catch (const CLI::OptionNotFound&) {
    }
  }

  json cfg;
  try {
    cfg = json::parse(ctam::detail::read_file_bytes(path));
  } catch (const ctam::IoError& e) {
    throw ConfigError(e.what());
  } catch (const std::exception& e) {
    throw ConfigError("config '" + path + "': invalid JSON: " + e.what());
  }
  if (!cfg.is_object()) throw ConfigError("config '" + path + "': must be a JSON object");

  std::set<std::string> known;
  auto collect = [&known](const CLI::App* a) {
    for (const CLI::Option* option : a->get_options())
      for (const std::string& name : option->get_lnames()) known.insert(name);
  };
  collect(&app);
  if (sub) collect(sub);

  for (const auto& [key, value] : cfg.items()) {
    if (key == "config")
      throw ConfigError("config '" + path + "': key 'config' is not allowed");
    if (!known.count(key))
      throw ConfigError("config '" + path + "': unknown key '" + key + "'" +
                        (sub ? " for command '" + sub->get_name() + "'" : ""));
    const std::string flag = "--" + key;
    bool given = false;
    for (const std::string& token : tokens)
      if (token == flag || token.rfind(flag + "=", 0) == 0) {
        given = true;
        break;
      }
    if (given) continue;
    tokens.push_back(flag);
    tokens.push_back(value.is_string() ? value.get<std::string>() : value.dump());
  }
}

std::vector<ctam::Scheme> schemes_from_flag(const std::string& flag) {
  if (flag == "all")
    return {ctam::Scheme::simple, ctam::Scheme::ranked, ctam::Scheme::learner};
  return {ctam::scheme_from_string(flag)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CT-volume classification pipeline: phantom data, lung-area slice selection, "
               "attention-merge slice model, and patient-level voting"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int threads = 1;
  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON config file; flat keys mirror flag names, command-line flags win");
  app.add_option("--seed", seed, "seed for dataset generation and training")
      ->capture_default_str();
  app.add_option("--threads", threads, "worker threads for predict/evaluate")
      ->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic phantom dataset");
  synth->fallthrough();
  ctam::SynthConfig synth_cfg;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n-patients", synth_cfg.n_patients, "number of patients")
      ->capture_default_str();
  synth->add_option("--min-slices", synth_cfg.min_slices, "minimum slices per patient")
      ->capture_default_str();
  synth->add_option("--max-slices", synth_cfg.max_slices, "maximum slices per patient")
      ->capture_default_str();
  synth->add_option("--image-size", synth_cfg.image_size, "slice height and width")
      ->capture_default_str();
  synth->add_option("--lesion-intensity", synth_cfg.lesion_intensity,
                    "intensity of painted lesions")
      ->capture_default_str();
  synth->add_option("--positive-fraction", synth_cfg.positive_fraction,
                    "fraction of positive patients")
      ->capture_default_str();

  // select
  auto* select = app.add_subcommand("select",
                                    "report selected slice indices per patient "
                                    "(patient_id,k,indices...)");
  select->fallthrough();
  std::string select_data, select_out, select_mode = "train";
  ctam::SelectionConfig select_sel;
  select->add_option("--data", select_data, "directory of .svol volumes")->required();
  select->add_option("--mode", select_mode, "slice budget to apply")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  select->add_option("--out", select_out, "output CSV path (stdout when omitted)");
  select->add_option("--keep-fraction", select_sel.keep_fraction,
                     "fraction of slices kept by lung-area ranking")
      ->capture_default_str();
  select->add_option("--k-train", select_sel.k_train, "slices kept for training")
      ->capture_default_str();
  select->add_option("--k-test", select_sel.k_test, "slices kept for testing")
      ->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "fit the slice classifier and aggregator");
  train_cmd->fallthrough();
  std::string train_data, train_labels_path, train_out = "weights.eam";
  std::string train_history = "history.csv", train_scope = "head_and_sha";
  ctam::TrainConfig train_cfg;
  ctam::SelectionConfig train_sel;
  train_cmd->add_option("--data", train_data, "directory of .svol volumes")->required();
  train_cmd->add_option("--labels", train_labels_path, "labels.csv path")->required();
  train_cmd->add_option("--out", train_out, "weights output path")->capture_default_str();
  train_cmd->add_option("--history", train_history, "training history CSV path")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train_cfg.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--learning-rate", train_cfg.learning_rate, "optimizer step size")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", train_cfg.batch_size, "slices per optimizer step")
      ->capture_default_str();
  train_cmd->add_option("--scope", train_scope, "what to fit")
      ->check(CLI::IsMember({"head_only", "head_and_sha"}))
      ->capture_default_str();
  train_cmd->add_option("--clamp-eps", train_cfg.clamp_eps, "loss clamp epsilon")
      ->capture_default_str();
  train_cmd->add_option("--keep-fraction", train_sel.keep_fraction,
                        "fraction of slices kept by lung-area ranking")
      ->capture_default_str();
  train_cmd->add_option("--k-train", train_sel.k_train, "slices kept for training")
      ->capture_default_str();
  train_cmd->add_option("--k-test", train_sel.k_test, "slices kept for testing")
      ->capture_default_str();

  // predict
  auto* predict = app.add_subcommand(
      "predict", "per-patient decisions (patient_id,scheme,aggregate_confidence,label)");
  predict->fallthrough();
  std::string predict_data, predict_weights, predict_out = "predictions.csv";
  std::string predict_scheme = "simple";
  double predict_threshold = ctam::kDefaultThreshold;
  double predict_extreme = ctam::kDefaultExtremeFraction;
  ctam::SelectionConfig predict_sel;
  predict->add_option("--data", predict_data, "directory of .svol volumes")->required();
  predict->add_option("--weights", predict_weights, "weights file")->required();
  predict->add_option("--out", predict_out, "predictions CSV path")->capture_default_str();
  predict->add_option("--scheme", predict_scheme, "voting scheme")
      ->check(CLI::IsMember({"simple", "ranked", "learner"}))
      ->capture_default_str();
  predict->add_option("--threshold", predict_threshold, "positive decision threshold")
      ->capture_default_str();
  predict->add_option("--extreme-fraction", predict_extreme,
                      "fraction of extreme slices per side for ranked voting")
      ->capture_default_str();
  predict->add_option("--keep-fraction", predict_sel.keep_fraction,
                      "fraction of slices kept by lung-area ranking")
      ->capture_default_str();
  predict->add_option("--k-test", predict_sel.k_test, "slices kept per patient")
      ->capture_default_str();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "metrics report for labeled volumes");
  evaluate->fallthrough();
  std::string eval_data, eval_labels_path, eval_weights, eval_out = "report.csv";
  std::string eval_scheme = "all";
  double eval_threshold = ctam::kDefaultThreshold;
  double eval_extreme = ctam::kDefaultExtremeFraction;
  ctam::SelectionConfig eval_sel;
  evaluate->add_option("--data", eval_data, "directory of .svol volumes")->required();
  evaluate->add_option("--labels", eval_labels_path, "labels.csv path")->required();
  evaluate->add_option("--weights", eval_weights, "weights file")->required();
  evaluate->add_option("--out", eval_out, "report CSV path")->capture_default_str();
  evaluate->add_option("--scheme", eval_scheme, "voting scheme or all")
      ->check(CLI::IsMember({"simple", "ranked", "learner", "all"}))
      ->capture_default_str();
  evaluate->add_option("--threshold", eval_threshold, "positive decision threshold")
      ->capture_default_str();
  evaluate->add_option("--extreme-fraction", eval_extreme,
                       "fraction of extreme slices per side for ranked voting")
      ->capture_default_str();
  evaluate->add_option("--keep-fraction", eval_sel.keep_fraction,
                       "fraction of slices kept by lung-area ranking")
      ->capture_default_str();
  evaluate->add_option("--k-test", eval_sel.k_test, "slices kept per patient")
      ->capture_default_str();

  try {
    std::vector<std::string> tokens(argv + 1, argv + argc);
    apply_config_file(app, tokens);
    std::reverse(tokens.begin(), tokens.end());
    app.parse(tokens);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", e.what());
    return kExitConfig;
  } catch (const ConfigError& e) {
    print_error("config", e.what());
    return kExitConfig;
  }

  try {
    ctam::detail::require(threads >= 1, "--threads must be >= 1");

    if (*synth) {
      synth_cfg.seed = seed;
      ctam::synth_generate(synth_cfg, synth_out);
      std::cout << "generated " << synth_cfg.n_patients << " patients in " << synth_out << "\n";
      return 0;
    }

    if (*select) {
      const auto mode =
          select_mode == "train" ? ctam::SelectMode::train : ctam::SelectMode::test;
      std::string report;
      for (const ctam::Volume& volume : load_volume_dir(select_data)) {
        const auto selected = ctam::select_slices(volume, select_sel, mode);
        report += volume.patient_id + "," + std::to_string(selected.size());
        for (const auto& [index, image] : selected) report += "," + std::to_string(index);
        report += "\n";
      }
      if (select_out.empty())
        std::cout << report;
      else
        ctam::detail::write_file_bytes(select_out, report);
      return 0;
    }

    if (*train_cmd) {
      const ctam::LabelTable labels = ctam::load_labels(train_labels_path);
      const std::vector<ctam::Volume> volumes =
          pick_labeled(load_volume_dir(train_data), labels);
      train_cfg.seed = seed;
      train_cfg.scope = train_scope == "head_only" ? ctam::TrainConfig::Scope::head_only
                                                   : ctam::TrainConfig::Scope::head_and_sha;
      const ctam::TrainResult result = ctam::train(volumes, labels, train_cfg, train_sel);
      ctam::save_model(result.model, result.sha ? &*result.sha : nullptr, train_out);

      std::string history = "epoch,mean_loss\n";
      for (std::size_t e = 0; e < result.history.size(); ++e)
        history += std::to_string(e + 1) + "," + format6(result.history[e]) + "\n";
      ctam::detail::write_file_bytes(train_history, history);

      std::cout << "trained on " << volumes.size() << " patients for " << train_cfg.epochs
                << " epochs";
      if (!result.history.empty()) std::cout << ", final loss " << format6(result.history.back());
      if (!result.sha_history.empty())
        std::cout << ", final aggregator loss " << format6(result.sha_history.back());
      std::cout << "\nweights: " << train_out << "\nhistory: " << train_history << "\n";
      return 0;
    }

    if (*predict) {
      const ctam::LoadedWeights weights = ctam::load_model(predict_weights);
      const ctam::ShaParams* sha = weights.sha ? &*weights.sha : nullptr;
      const auto forwards =
          ctam::forward_volumes(load_volume_dir(predict_data), weights.model, predict_sel,
                                ctam::SelectMode::test, nullptr, threads);
      const ctam::Scheme scheme = ctam::scheme_from_string(predict_scheme);

      std::string csv = "patient_id,scheme,aggregate_confidence,label\n";
      for (const ctam::PatientForward& pf : forwards) {
        const ctam::PatientDecision d =
            ctam::decide(pf, scheme, sha, predict_threshold, predict_extreme);
        csv += pf.patient_id;
        csv += ",";
        csv += ctam::to_string(scheme);
        csv += "," + format6(d.aggregate_confidence) + ",";
        csv += d.diagnosis == ctam::Diagnosis::positive ? "1" : "0";
        csv += "\n";
      }
      ctam::detail::write_file_bytes(predict_out, csv);
      std::cout << "wrote " << forwards.size() << " predictions to " << predict_out << "\n";
      return 0;
    }

    if (*evaluate) {
      const ctam::LabelTable labels = ctam::load_labels(eval_labels_path);
      const ctam::LoadedWeights weights = ctam::load_model(eval_weights);
      const ctam::ShaParams* sha = weights.sha ? &*weights.sha : nullptr;
      const std::vector<ctam::Volume> volumes = pick_labeled(load_volume_dir(eval_data), labels);
      const auto forwards = ctam::forward_volumes(volumes, weights.model, eval_sel,
                                                  ctam::SelectMode::test, &labels, threads);

      std::string csv = "scheme," + ctam::MetricsReport::csv_header() + "\n";
      for (ctam::Scheme scheme : schemes_from_flag(eval_scheme)) {
        const ctam::MetricsReport report =
            ctam::evaluate_patients(forwards, scheme, sha, eval_threshold, eval_extreme);
        std::cout << "scheme=" << ctam::to_string(scheme) << "\n"
                  << report.to_text() << "\n";
        csv += std::string(ctam::to_string(scheme)) + "," + report.to_csv_row() + "\n";
      }
      ctam::detail::write_file_bytes(eval_out, csv);
      return 0;
    }

    print_error("internal", "no command dispatched");
    return kExitInternal;
  } catch (const ctam::IoError& e) {
    print_error("io", e.what());
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    print_error("validation", e.what());
    return kExitValidation;
  } catch (const std::runtime_error& e) {
    print_error("validation", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return kExitInternal;
  }
}
