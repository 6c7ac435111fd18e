#include "mpstr/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "mpstr/checkpoint.hpp"
#include "mpstr/errors.hpp"

namespace mpstr {

void TrainConfig::validate() const {
  if (permutations < 1) throw ConfigError("permutations (K) must be >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(perturb_ratio >= 0.0 && perturb_ratio <= 1.0)) throw ConfigError("perturb_ratio must lie in [0, 1]");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(max_lr > 0.0)) throw ConfigError("max_lr must be positive");
  if (!(cycle_fraction > 0.0 && cycle_fraction <= 1.0)) throw ConfigError("cycle_fraction must lie in (0, 1]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1)");
  if (!(div_factor >= 1.0)) throw ConfigError("div_factor must be >= 1");
  if (!(final_ratio > 0.0 && final_ratio <= 1.0)) throw ConfigError("final_ratio must lie in (0, 1]");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

LrSchedule TrainConfig::lr_schedule() const {
  return LrSchedule{max_lr, iterations, cycle_fraction, warmup_fraction, div_factor, final_ratio};
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"permutations", c.permutations},
       {"lambda", c.lambda},
       {"perturb_ratio", c.perturb_ratio},
       {"batch_size", c.batch_size},
       {"iterations", c.iterations},
       {"max_lr", c.max_lr},
       {"cycle_fraction", c.cycle_fraction},
       {"warmup_fraction", c.warmup_fraction},
       {"div_factor", c.div_factor},
       {"final_ratio", c.final_ratio},
       {"weight_decay", c.weight_decay},
       {"grad_clip", c.grad_clip},
       {"seed", c.seed},
       {"log_every", c.log_every},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d = c;
  c.permutations = j.value("permutations", d.permutations);
  c.lambda = j.value("lambda", d.lambda);
  c.perturb_ratio = j.value("perturb_ratio", d.perturb_ratio);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.iterations = j.value("iterations", d.iterations);
  c.max_lr = j.value("max_lr", d.max_lr);
  c.cycle_fraction = j.value("cycle_fraction", d.cycle_fraction);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.div_factor = j.value("div_factor", d.div_factor);
  c.final_ratio = j.value("final_ratio", d.final_ratio);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.seed = j.value("seed", d.seed);
  c.log_every = j.value("log_every", d.log_every);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
}

namespace {

// log-sum-exp(row) - row[target]
template <typename T>
double row_ce(std::span<const T> row, int target) {
  double mx = row[0];
  for (T v : row) mx = std::max(mx, static_cast<double>(v));
  double s = 0;
  for (T v : row) s += std::exp(static_cast<double>(v) - mx);
  return mx + std::log(s) - static_cast<double>(row[static_cast<std::size_t>(target)]);
}

BlockMask first_rows(const BlockMask& m, int rows) {
  BlockMask out(rows, m.cols);
  std::copy_n(m.blocked.begin(), static_cast<std::size_t>(rows) * m.cols, out.blocked.begin());
  return out;
}

}  // namespace

template <typename T>
double compute_length_loss(const Matrix<T>& length_logits, int g_len) {
  if (length_logits.rows() != 1) throw ShapeError("length logits must be a single row");
  if (g_len < 1 || g_len > length_logits.cols()) {
    throw LengthError("ground-truth length " + std::to_string(g_len) + " outside [1, " +
                      std::to_string(length_logits.cols()) + "]");
  }
  return row_ce<T>(length_logits.row(0), g_len - 1);
}

template <typename T>
double compute_rec_loss(const std::vector<Matrix<T>>& logit_sets, const LabelSequence& label, int eos_class) {
  if (logit_sets.empty()) throw ShapeError("no logit sets");
  const std::vector<int> targets = rec_targets(label, eos_class);
  double sum = 0;
  for (const Matrix<T>& logits : logit_sets) {
    if (logits.rows() < static_cast<int>(targets.size()) || logits.cols() <= eos_class) {
      throw ShapeError("logit set is " + std::to_string(logits.rows()) + "x" + std::to_string(logits.cols()) +
                       ", too small for a length-" + std::to_string(label.length()) + " label");
    }
    double per = 0;
    for (std::size_t r = 0; r < targets.size(); ++r) per += row_ce<T>(logits.row(static_cast<int>(r)), targets[r]);
    sum += per / static_cast<double>(targets.size());
  }
  return sum / static_cast<double>(logit_sets.size());
}

int apply_perturbation(int g_len, int max_len, Rng& rng, const PerturbPolicy& policy) {
  if (policy.ratio <= 0.0) return g_len;
  if (uniform01(rng) >= policy.ratio) return g_len;
  const int delta = uniform_index(rng, 2) == 0 ? -1 : 1;
  return std::clamp(g_len + delta, 1, max_len);
}

std::vector<int> rec_targets(const LabelSequence& label, int eos_class) {
  std::vector<int> t = label.ids;
  t.push_back(eos_class);
  return t;
}

double effective_lambda(const ModelConfig& cfg, double lambda) {
  return cfg.length_source == LengthSource::kNone ? 0.0 : lambda;
}

template <typename T>
SampleLossVars sample_loss(Graph<T>& g, const Model<T>& model, const Matrix<T>& patches, const LabelSequence& label,
                           const std::vector<Permutation>& perms, int mask_len, double lambda) {
  const ModelConfig& cfg = model.config();
  const int max_len = cfg.max_len;
  const int len = label.length();
  if (len < 1 || len > max_len) {
    throw LengthError("label length " + std::to_string(len) + " outside [1, " + std::to_string(max_len) + "]");
  }
  if (perms.empty()) throw ConfigError("at least one permutation is required");
  lambda = effective_lambda(cfg, lambda);
  // Teacher forcing: the mask count always comes from the (possibly
  // perturbed) ground-truth length, whether or not the model predicts one.
  const int effective = mask_len;
  if (effective < 1 || effective > max_len) throw LengthError("mask length outside [1, T]");

  SampleLossVars out;
  EncoderVars enc = model.encoder().forward(g, g.input(patches));
  if (cfg.length_source == LengthSource::kWord) {
    const std::vector<int> target{len - 1};
    out.len_loss = g.cross_entropy(model.word_length_head().forward(g, enc.length_token), target);
  } else if (cfg.length_source == LengthSource::kChar) {
    std::vector<int> slots(static_cast<std::size_t>(max_len));
    for (int s = 0; s < max_len; ++s) slots[s] = s < len ? 1 : 0;
    out.len_loss = g.cross_entropy(model.char_length_head().forward(g, enc.visual), slots);
  }

  const ContextTokens ctx = build_context(label.ids, len, max_len, model.codec().specials());
  const PadMask pad = build_pad_mask(effective, max_len);
  std::vector<BlockMask> masks;
  masks.reserve(perms.size());
  for (const Permutation& perm : perms) {
    const Permutation p = perm.length() == len ? perm : restrict_to(perm, len);
    if (!is_permutation_of_1_to_n(p)) throw ConfigError("permutation does not cover 1..L");
    masks.push_back(first_rows(model.decoder_mask(build_train_mask(p, len, effective, max_len), pad), len + 1));
  }
  const int k = static_cast<int>(perms.size());
  Var logits = model.decoder().forward(g, enc.visual, ctx, stack(masks), k, len + 1);

  const std::vector<int> one = rec_targets(label, model.codec().specials().eos);
  std::vector<int> targets;
  targets.reserve(one.size() * perms.size());
  for (int i = 0; i < k; ++i) targets.insert(targets.end(), one.begin(), one.end());
  out.rec_loss = g.cross_entropy(logits, targets);
  out.total = out.len_loss.valid() ? g.weighted_sum(out.len_loss, T(lambda), out.rec_loss, T(1.0 - lambda))
                                   : out.rec_loss;
  return out;
}

std::vector<TrainExample> prepare_examples(const Model<float>& model, const Dataset& data) {
  std::vector<TrainExample> out;
  out.reserve(data.samples.size());
  const TextCodec& codec = model.codec();
  for (const Sample& s : data.samples) {
    try {
      out.push_back(TrainExample{patchify<float>(s.image, model.config().encoder), codec.encode(codec.normalize(s.label))});
    } catch (const std::exception& e) {
      throw LengthError(s.filename + ": " + e.what());
    }
  }
  return out;
}

Trainer::Trainer(Model<float>& model, TrainConfig cfg)
    : model_(model), cfg_(cfg), adam_(model.params(), AdamConfig{0.9, 0.999, 1e-8, cfg.weight_decay}) {
  cfg_.validate();
}

LossBreakdown Trainer::train_step(std::span<const TrainExample* const> batch) {
  if (batch.empty()) throw ConfigError("empty batch");
  Rng rng(derive_seed(cfg_.seed, 0x9E3779B9ULL + static_cast<std::uint64_t>(step_)));
  int longest = 1;
  for (const TrainExample* ex : batch) longest = std::max(longest, ex->label.length());
  const std::vector<Permutation> perms = sample_permutations(cfg_.permutations, longest, rng);
  const PerturbPolicy policy{cfg_.perturb_ratio};
  const int max_len = model_.max_len();
  const double lambda = effective_lambda(model_.config(), cfg_.lambda);
  const float inv = 1.0f / static_cast<float>(batch.size());

  model_.params().zero_grad();
  LossBreakdown acc;
  for (const TrainExample* ex : batch) {
    const int mask_len = apply_perturbation(ex->label.length(), max_len, rng, policy);
    Graph<float> g;
    const SampleLossVars v = sample_loss(g, model_, ex->patches, ex->label, perms, mask_len, lambda);
    g.backward(v.total, inv);
    if (v.len_loss.valid()) acc.len_loss += g.value(v.len_loss)(0, 0);
    acc.rec_loss += g.value(v.rec_loss)(0, 0);
    acc.total += g.value(v.total)(0, 0);
  }
  const double n = static_cast<double>(batch.size());
  acc.len_loss /= n;
  acc.rec_loss /= n;
  acc.total /= n;
  clip_grad_norm(model_.params(), cfg_.grad_clip);
  adam_.step(model_.params(), cfg_.lr_schedule().at(step_));
  ++step_;
  return acc;
}

void Trainer::fit(const std::vector<TrainExample>& examples, const FitOptions& opts) {
  if (examples.empty()) throw ConfigError("training set is empty");
  std::ofstream log;
  if (!opts.log_path.empty()) {
    log.open(opts.log_path, opts.append_log ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open training log " + opts.log_path.string());
  }
  const auto n = static_cast<std::uint64_t>(examples.size());
  const auto bs = static_cast<std::uint64_t>(cfg_.batch_size);
  std::vector<std::size_t> order(examples.size());
  std::uint64_t order_epoch = UINT64_MAX;
  const nlohmann::json train_json = cfg_;
  const LrSchedule schedule = cfg_.lr_schedule();

  std::vector<const TrainExample*> batch;
  while (step_ < cfg_.iterations) {
    // The sample stream is a sequence of per-epoch shuffles keyed by the
    // epoch index, so any step can be reproduced without saved RNG state.
    batch.clear();
    for (std::uint64_t b = 0; b < bs; ++b) {
      const std::uint64_t s = static_cast<std::uint64_t>(step_) * bs + b;
      const std::uint64_t epoch = s / n;
      if (epoch != order_epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle(derive_seed(cfg_.seed, epoch));
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(shuffle, i + 1)]);
        order_epoch = epoch;
      }
      batch.push_back(&examples[order[s % n]]);
    }
    const std::int64_t this_step = step_;
    const double lr = schedule.at(this_step);
    const LossBreakdown loss = train_step(batch);
    if (this_step % cfg_.log_every == 0 || step_ == cfg_.iterations) {
      if (log.is_open()) {
        const nlohmann::json rec = {{"step", this_step},
                                    {"len_loss", loss.len_loss},
                                    {"rec_loss", loss.rec_loss},
                                    {"total", loss.total},
                                    {"lr", lr}};
        log << rec.dump() << '\n';
        log.flush();
      }
      if (opts.on_log) opts.on_log(this_step, loss, lr);
    }
    if (!opts.checkpoint_path.empty() && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 &&
        step_ < cfg_.iterations) {
      save_checkpoint(opts.checkpoint_path, model_, train_json, step_, &adam_);
    }
  }
  if (!opts.checkpoint_path.empty()) save_checkpoint(opts.checkpoint_path, model_, train_json, step_, &adam_);
}

template double compute_length_loss<float>(const Matrix<float>&, int);
template double compute_length_loss<double>(const Matrix<double>&, int);
template double compute_rec_loss<float>(const std::vector<Matrix<float>>&, const LabelSequence&, int);
template double compute_rec_loss<double>(const std::vector<Matrix<double>>&, const LabelSequence&, int);
template SampleLossVars sample_loss<float>(Graph<float>&, const Model<float>&, const Matrix<float>&,
                                           const LabelSequence&, const std::vector<Permutation>&, int, double);
template SampleLossVars sample_loss<double>(Graph<double>&, const Model<double>&, const Matrix<double>&,
                                            const LabelSequence&, const std::vector<Permutation>&, int, double);

}  // namespace mpstr
