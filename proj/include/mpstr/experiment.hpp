#pragma once

// Experiment configs, evaluation reports and the ablation driver.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpstr/inference.hpp"
#include "mpstr/model.hpp"
#include "mpstr/toy_data.hpp"
#include "mpstr/training.hpp"

namespace mpstr {

enum class Variant {
  kFull,        // mask tokens + word length head + K permutations
  kBaseline,    // plain left-to-right AR: K=1, mask side blocked, no length, lambda 0
  kPlmOnly,     // permutations without mask tokens or length
  kNoLength,    // mask tokens, no length head: GT mask count in training, L = T at inference
  kCharLength,  // per-slot character-count head instead of the [len] token
};

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

// Forces the flags a variant implies onto the model/training configs.
void apply_variant(Variant v, ModelConfig& model, TrainConfig& train);

struct ExperimentConfig {
  ModelConfig model = ModelConfig::toy();
  TrainConfig train;
  Variant variant = Variant::kFull;
  std::string train_dir = "data/train";
  std::string test_dir = "data/test";
  std::string checkpoint = "model.ckpt";
  std::string log = "train_log.jsonl";
  std::uint64_t model_seed = 1;

  // Applies the variant, then validates. Throws ConfigError.
  void finalize();
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
// Parses a JSON file; unknown keys are rejected so typos surface. Throws
// IoError / ConfigError with the file name in the message.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Case-insensitive, charset-filtered form used on both sides of a match.
std::string match_form(const TextCodec& codec, const std::string& text);

struct EvalRow {
  std::string filename;
  std::string label;
  int true_length = 0;
  int predicted_length = 0;
  std::string ar, nar, cloze;
};

struct EvalReport {
  int samples = 0;
  double ar_accuracy = 0;
  double nar_accuracy = 0;
  double cloze_accuracy = 0;  // ground-truth text as the initial prediction
  double length_accuracy = 0;
  double ms_per_image = 0;
  std::vector<EvalRow> rows;
};

struct EvalOptions {
  DecodePolicy ar = DecodePolicy::defaults(DecodeMode::kAr);
  DecodePolicy nar = DecodePolicy::defaults(DecodeMode::kNar);
};

EvalReport evaluate(const Model<float>& model, const Dataset& data, const EvalOptions& opts = {});
void write_eval_tsv(const std::filesystem::path& path, const EvalReport& report);
std::string eval_summary(const EvalReport& report);

// Trains a model from scratch on already-loaded examples and returns it.
Model<float> train_model(const ModelConfig& model_cfg, const TrainConfig& train_cfg, std::uint64_t model_seed,
                         const std::vector<TrainExample>& examples, const Trainer::FitOptions& opts = {});

struct AblationRow {
  std::string name;
  Variant variant = Variant::kFull;
  int permutations = 0;
  double perturb_ratio = 0;
  bool refined = true;
  EvalReport report;
  double train_seconds = 0;
};

// Suites: "core" (full, baseline, plm-only, no-length, char-length),
// "k" (K in {1, 2, 6, 12}), "perturb" (ratio in {0, 0.1, 0.3, 0.5}), "all".
// The K sweep follows the permutation-count protocol: no length
// perturbation and no refinement passes at evaluation. Baseline and
// plm-only are also decoded without refinement.
struct AblationPlan {
  std::string name;
  Variant variant;
  int permutations;
  double perturb_ratio;
  bool refine = true;
};
std::vector<AblationPlan> ablation_suite(const std::string& suite, const TrainConfig& base);

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::vector<AblationPlan>& plan,
                                      const Dataset& train, const Dataset& test,
                                      const std::function<void(const std::string&)>& progress = {});
void write_ablation_tsv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace mpstr
