// mpstr: data generation, training, evaluation and diagnostics.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mpstr/check/gradcheck.hpp"
#include "mpstr/check/mask_oracle.hpp"
#include "mpstr/checkpoint.hpp"
#include "mpstr/errors.hpp"
#include "mpstr/experiment.hpp"
#include "mpstr/simd/kernels.hpp"

using namespace mpstr;
namespace fs = std::filesystem;

namespace {

struct GenArgs {
  std::string out;
  std::string config;
  std::uint64_t seed = 7;
  int train = 2000, val = 200, test = 200;
  int min_len = 1, max_len = 8;
  int jitter = -1;
  bool augment = false;
};

int cmd_gen_data(const GenArgs& a) {
  GenConfig base;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw IoError("cannot open " + a.config);
    try {
      nlohmann::json::parse(in).get_to(base);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(a.config + ": " + e.what());
    }
  } else {
    base.min_len = a.min_len;
    base.max_len = a.max_len;
    if (a.jitter >= 0) base.render.jitter = a.jitter;
    if (a.augment) base.augment = AugmentParams{0.3, 0.4, 0.9, 0.3, 8.0, 0.3, 15.0};
  }
  const std::pair<const char*, int> splits[] = {{"train", a.train}, {"val", a.val}, {"test", a.test}};
  std::uint64_t index = 0;
  for (const auto& [name, count] : splits) {
    const std::uint64_t k = index++;
    if (count <= 0) continue;
    GenConfig cfg = base;
    cfg.split = name;
    cfg.count = count;
    cfg.seed = derive_seed(a.seed, k);
    generate_dataset(cfg, fs::path(a.out) / name);
    std::cout << (fs::path(a.out) / name / "manifest.tsv").string() << '\n';
  }
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string resume;
  std::int64_t iterations = -1;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg = load_experiment_config(a.config);
  if (a.iterations >= 0) cfg.train.iterations = a.iterations;
  std::cout << "config " << nlohmann::json(cfg).dump() << std::endl;

  const Dataset train = load_dataset(cfg.train_dir);
  std::optional<LoadedCheckpoint> resumed;
  if (!a.resume.empty()) {
    resumed.emplace(load_checkpoint(a.resume));
    if (nlohmann::json(resumed->model.config()) != nlohmann::json(cfg.model)) {
      throw ConfigError("checkpoint " + a.resume + " was trained with a different model config");
    }
  }
  Model<float> model = resumed ? std::move(resumed->model) : Model<float>(cfg.model, cfg.model_seed);
  Trainer trainer(model, cfg.train);
  if (resumed) {
    trainer.set_step(resumed->step);
    if (resumed->has_optimizer_state) {
      trainer.optimizer().first_moments() = std::move(resumed->adam_m);
      trainer.optimizer().second_moments() = std::move(resumed->adam_v);
      trainer.optimizer().set_steps(resumed->adam_steps);
    }
    std::cout << "resuming at step " << resumed->step << std::endl;
  }
  const std::vector<TrainExample> examples = prepare_examples(model, train);
  Trainer::FitOptions opts;
  opts.log_path = cfg.log;
  opts.checkpoint_path = cfg.checkpoint;
  opts.append_log = resumed.has_value();
  opts.on_log = [](std::int64_t step, const LossBreakdown& l, double lr) {
    std::printf("step %6lld  total %.5f  len %.5f  rec %.5f  lr %.2e\n", static_cast<long long>(step), l.total,
                l.len_loss, l.rec_loss, lr);
    std::fflush(stdout);
  };
  trainer.fit(examples, opts);
  std::cout << "checkpoint " << cfg.checkpoint << "\nlog " << cfg.log << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, tsv;
  int ar_refine = 1, nar_refine = 2;
};

int cmd_eval(const EvalArgs& a) {
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const Dataset data = load_dataset(a.data);
  EvalOptions opts;
  opts.ar.refine_iters = a.ar_refine;
  opts.nar.refine_iters = a.nar_refine;
  const EvalReport rep = evaluate(ck.model, data, opts);
  if (!a.tsv.empty()) write_eval_tsv(a.tsv, rep);
  std::cout << eval_summary(rep);
  return 0;
}

struct PredictArgs {
  std::string checkpoint, mode = "nar";
  int refine = -1;
  std::vector<std::string> images;
};

int cmd_predict(const PredictArgs& a) {
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  DecodePolicy policy = DecodePolicy::defaults(decode_mode_from_string(a.mode));
  if (a.refine >= 0) policy.refine_iters = a.refine;
  for (const std::string& path : a.images) {
    const Recognition r = recognize(ck.model, read_pgm(path), policy);
    const nlohmann::json rec = {{"image", path},
                                {"mode", to_string(r.mode)},
                                {"text", r.text},
                                {"length_used", r.length_used},
                                {"confidence", r.mean_confidence()}};
    std::cout << rec.dump() << '\n';
  }
  return 0;
}

struct DumpArgs {
  std::string kind = "train";
  int length = 0;
  int max_len = 0;
  int mask_len = 0;
  std::string perm;
};

int cmd_dump_masks(const DumpArgs& a) {
  const int max_len = a.max_len > 0 ? a.max_len : a.length;
  AttentionSchedule s(1, std::max(1, max_len));
  if (a.kind == "train") {
    Permutation p = identity_permutation(a.length);
    if (!a.perm.empty()) {
      p.order.clear();
      std::stringstream ss(a.perm);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          p.order.push_back(std::stoi(item));
        } catch (const std::exception&) {
          throw ConfigError("bad permutation entry '" + item + "'");
        }
      }
    }
    if (p.length() != a.length || !is_permutation_of_1_to_n(p)) {
      throw ConfigError("--perm must be a permutation of 1.." + std::to_string(a.length));
    }
    s = a.mask_len > 0 ? build_train_mask(p, a.length, a.mask_len, max_len) : build_train_mask(p, a.length, max_len);
  } else if (a.kind == "ar") {
    s = build_ar_infer_mask(a.length, max_len);
  } else if (a.kind == "nar") {
    s = build_nar_mask(a.length, max_len);
  } else if (a.kind == "cloze") {
    s = build_cloze_mask(a.length, max_len);
  } else {
    throw ConfigError("unknown mask kind '" + a.kind + "' (expected train, ar, nar or cloze)");
  }
  std::cout << s.to_text();
  return 0;
}

struct AblateArgs {
  std::string config, suite = "core", out;
  std::int64_t iterations = -1;
};

int cmd_ablate(const AblateArgs& a) {
  ExperimentConfig base = load_experiment_config(a.config);
  if (a.iterations >= 0) base.train.iterations = a.iterations;
  const auto plan = ablation_suite(a.suite, base.train);
  const Dataset train = load_dataset(base.train_dir);
  const Dataset test = load_dataset(base.test_dir);
  const auto rows = run_ablation(base, plan, train, test, [](const std::string& msg) {
    std::cerr << msg << std::endl;
  });
  if (!a.out.empty()) write_ablation_tsv(a.out, rows);
  std::cout << ablation_table(rows);
  return 0;
}

struct SelfcheckArgs {
  bool quick = false;
};

int cmd_selfcheck(const SelfcheckArgs& a) {
  bool ok = true;
  std::cout << "kernels: " << simd::kernels_for<float>(simd::active_isa()).name << '\n';
  const oracle::SweepResult sw = oracle::sweep(5, 8, a.quick ? 100 : 1000, 2024);
  std::cout << "mask oracle: " << sw.schedules << " schedules, " << sw.failures.size() << " mismatches\n";
  for (const std::string& f : sw.failures) std::cout << "  " << f << '\n';
  ok &= sw.failures.empty();

  GradCheckOptions opts;
  if (a.quick) opts.samples_per_tensor = 16;
  const GradCheckReport g = toy_gradient_check(opts);
  std::printf("gradient check: %lld entries over %zu tensors, max rel err %.3e (%s), directional %.3e\n",
              g.entries_checked, g.tensors.size(), g.max_rel_error, g.worst_tensor.c_str(), g.directional_rel_error);
  const bool grad_ok = g.max_rel_error <= 1e-4 && g.directional_rel_error <= 1e-4;
  ok &= grad_ok;
  std::cout << (ok ? "selfcheck passed\n" : "selfcheck FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-and-permuted scene text recognition on synthetic glyph images"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Write train/val/test toy corpora");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--config", gen.config, "Generation config JSON (overrides length/augment flags)");
  g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  g->add_option("--train", gen.train, "Training samples")->capture_default_str();
  g->add_option("--val", gen.val, "Validation samples")->capture_default_str();
  g->add_option("--test", gen.test, "Test samples")->capture_default_str();
  g->add_option("--min-len", gen.min_len, "Shortest word")->capture_default_str();
  g->add_option("--max-len", gen.max_len, "Longest word")->capture_default_str();
  g->add_option("--jitter", gen.jitter, "Max random extra left margin in px (default: corpus default)");
  g->add_flag("--augment", gen.augment, "Enable blur / noise / rotation");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train from a JSON experiment config");
  t->add_option("config", tr.config, "Experiment config JSON")->required();
  t->add_option("--resume", tr.resume, "Checkpoint to continue from");
  t->add_option("--iterations", tr.iterations, "Override train.iterations");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "AR, NAR and ground-truth cloze accuracy on a dataset");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--tsv", ev.tsv, "Per-sample report");
  e->add_option("--ar-refine", ev.ar_refine)->capture_default_str();
  e->add_option("--nar-refine", ev.nar_refine)->capture_default_str();

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Recognize PGM images, one JSON record per line");
  p->add_option("--checkpoint", pr.checkpoint)->required();
  p->add_option("--mode", pr.mode, "ar or nar")->capture_default_str();
  p->add_option("--refine", pr.refine, "Refinement passes (default: ar 1, nar 2)");
  p->add_option("images", pr.images)->required();

  DumpArgs du;
  auto* d = app.add_subcommand("dump-masks", "Print a schedule as word/mask grids (1 = blocked)");
  d->add_option("--kind", du.kind, "train, ar, nar or cloze")->capture_default_str();
  d->add_option("--L", du.length, "Word length")->required()->check(CLI::PositiveNumber);
  d->add_option("--T", du.max_len, "Maximum length (default L)");
  d->add_option("--perm", du.perm, "Decode order for --kind train, e.g. 1,3,2");
  d->add_option("--mask-len", du.mask_len, "Perturbed mask count for --kind train");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train and compare model variants");
  a->add_option("config", ab.config, "Base experiment config JSON")->required();
  a->add_option("--suite", ab.suite, "core, k, perturb or all")->capture_default_str();
  a->add_option("--out", ab.out, "TSV report");
  a->add_option("--iterations", ab.iterations, "Override train.iterations");

  SelfcheckArgs sc;
  auto* s = app.add_subcommand("selfcheck", "Mask-oracle sweep and gradient check");
  s->add_flag("--quick", sc.quick, "Fewer random permutations and gradient samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*p) return cmd_predict(pr);
    if (*d) return cmd_dump_masks(du);
    if (*a) return cmd_ablate(ab);
    if (*s) return cmd_selfcheck(sc);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}
