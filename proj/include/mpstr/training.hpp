#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "mpstr/model.hpp"
#include "mpstr/optimizer.hpp"
#include "mpstr/toy_data.hpp"

namespace mpstr {

struct PerturbPolicy {
  double ratio = 0.0;  // offsets are always -1 / +1
};

struct TrainConfig {
  int permutations = 12;  // K
  double lambda = 0.25;
  double perturb_ratio = 0.1;
  int batch_size = 32;
  std::int64_t iterations = 2000;
  double max_lr = 1e-3;
  double cycle_fraction = 0.85;
  double warmup_fraction = 0.3;
  double div_factor = 25.0;
  double final_ratio = 0.01;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  int log_every = 10;
  int checkpoint_every = 0;  // 0: only at the end

  // Throws ConfigError.
  void validate() const;
  LrSchedule lr_schedule() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossBreakdown {
  double total = 0;
  double len_loss = 0;
  double rec_loss = 0;
};

// Value-level losses (no graph), used by tests and as oracles' counterparts.
// length: CE of 1 x T logits against class g_len-1. Throws LengthError.
template <typename T>
double compute_length_loss(const Matrix<T>& length_logits, int g_len);
// logit_sets: K matrices of at least L+1 rows. CE over the L characters and
// the EOS slot, averaged per permutation, then over K.
template <typename T>
double compute_rec_loss(const std::vector<Matrix<T>>& logit_sets, const LabelSequence& label, int eos_class);

// Mask-token count for one sample: with probability `ratio`, g_len +- 1
// (uniform sign) clamped to [1, max_len]; otherwise g_len.
int apply_perturbation(int g_len, int max_len, Rng& rng, const PerturbPolicy& policy);

// Per-slot targets for one schedule pass: the L character ids then EOS.
std::vector<int> rec_targets(const LabelSequence& label, int eos_class);

// Graph nodes of the per-sample objective.
struct SampleLossVars {
  Var len_loss;  // invalid when the model has no length source
  Var rec_loss;
  Var total;
};

// Builds the full training objective for one (image, label) pair:
// teacher-forced context, one schedule per permutation (each restricted to
// the label's length), mask tokens sized by `mask_len`.
template <typename T>
SampleLossVars sample_loss(Graph<T>& g, const Model<T>& model, const Matrix<T>& patches, const LabelSequence& label,
                           const std::vector<Permutation>& perms, int mask_len, double lambda);

// Effective lambda for a model: forced to 0 when there is no length head.
double effective_lambda(const ModelConfig& cfg, double lambda);

struct TrainExample {
  Matrix<float> patches;
  LabelSequence label;
};

// Converts a dataset into model inputs. Labels are normalized and encoded;
// throws LengthError for labels the model cannot represent.
std::vector<TrainExample> prepare_examples(const Model<float>& model, const Dataset& data);

class Trainer {
 public:
  Trainer(Model<float>& model, TrainConfig cfg);

  // One optimizer update on `batch`. The current step index seeds the
  // permutation and perturbation draws, so a resumed run replays the same
  // stream.
  LossBreakdown train_step(std::span<const TrainExample* const> batch);

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  const TrainConfig& config() const { return cfg_; }

  struct FitOptions {
    std::filesystem::path log_path;         // JSONL; empty disables
    std::filesystem::path checkpoint_path;  // empty disables
    bool append_log = false;
    std::function<void(std::int64_t, const LossBreakdown&, double)> on_log;
  };
  // Runs from the current step up to cfg.iterations.
  void fit(const std::vector<TrainExample>& examples, const FitOptions& opts);

 private:
  Model<float>& model_;
  TrainConfig cfg_;
  Adam adam_;
  std::int64_t step_ = 0;
};

}  // namespace mpstr
