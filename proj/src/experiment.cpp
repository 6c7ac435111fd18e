#include "mpstr/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mpstr/errors.hpp"

namespace mpstr {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kBaseline: return "baseline";
    case Variant::kPlmOnly: return "plm-only";
    case Variant::kNoLength: return "no-length";
    case Variant::kCharLength: return "char-length";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::kFull, Variant::kBaseline, Variant::kPlmOnly, Variant::kNoLength, Variant::kCharLength})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown variant '" + s + "' (expected full, baseline, plm-only, no-length or char-length)");
}

void apply_variant(Variant v, ModelConfig& model, TrainConfig& train) {
  switch (v) {
    case Variant::kFull:
      model.mask_tokens = true;
      model.length_source = LengthSource::kWord;
      break;
    case Variant::kBaseline:
      model.mask_tokens = false;
      model.length_source = LengthSource::kNone;
      train.permutations = 1;
      train.lambda = 0.0;
      train.perturb_ratio = 0.0;
      break;
    case Variant::kPlmOnly:
      model.mask_tokens = false;
      model.length_source = LengthSource::kNone;
      train.lambda = 0.0;
      train.perturb_ratio = 0.0;
      break;
    case Variant::kNoLength:
      model.mask_tokens = true;
      model.length_source = LengthSource::kNone;
      train.lambda = 0.0;
      train.perturb_ratio = 0.0;
      break;
    case Variant::kCharLength:
      model.mask_tokens = true;
      model.length_source = LengthSource::kChar;
      break;
  }
}

void ExperimentConfig::finalize() {
  apply_variant(variant, model, train);
  model.validate();
  train.validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"model", c.model},         {"train", c.train},           {"variant", to_string(c.variant)},
       {"train_dir", c.train_dir}, {"test_dir", c.test_dir},     {"checkpoint", c.checkpoint},
       {"log", c.log},             {"model_seed", c.model_seed}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const std::vector<std::string> known = {"model",      "train", "variant", "train_dir", "test_dir",
                                                 "checkpoint", "log",   "model_seed"};
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
  }
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("train")) j.at("train").get_to(c.train);
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.train_dir = j.value("train_dir", c.train_dir);
  c.test_dir = j.value("test_dir", c.test_dir);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  c.log = j.value("log", c.log);
  c.model_seed = j.value("model_seed", c.model_seed);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  ExperimentConfig cfg;
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    j.get_to(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  cfg.finalize();
  return cfg;
}

std::string match_form(const TextCodec& codec, const std::string& text) { return codec.normalize(text); }

EvalReport evaluate(const Model<float>& model, const Dataset& data, const EvalOptions& opts) {
  EvalReport rep;
  rep.samples = static_cast<int>(data.samples.size());
  if (rep.samples == 0) return rep;
  const TextCodec& codec = model.codec();
  int ar_ok = 0, nar_ok = 0, cloze_ok = 0, len_ok = 0;
  const auto start = std::chrono::steady_clock::now();
  for (const Sample& s : data.samples) {
    EvalRow row;
    row.filename = s.filename;
    row.label = match_form(codec, s.label);
    row.true_length = static_cast<int>(row.label.size());
    const VisualEncoding<float> enc = model.encode(s.image);
    row.predicted_length = model.predict_length(enc);
    row.ar = recognize_ar(model, enc, opts.ar.refine_iters).text;
    row.nar = recognize_nar(model, enc, opts.nar.refine_iters).text;
    if (!row.label.empty() && row.true_length <= model.max_len()) {
      Recognition gt;
      gt.text = row.label;
      row.cloze = cloze_refine(gt, model, enc).text;
    }
    ar_ok += match_form(codec, row.ar) == row.label;
    nar_ok += match_form(codec, row.nar) == row.label;
    cloze_ok += match_form(codec, row.cloze) == row.label;
    len_ok += row.predicted_length == row.true_length;
    rep.rows.push_back(std::move(row));
  }
  const double elapsed =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  const double n = rep.samples;
  rep.ar_accuracy = ar_ok / n;
  rep.nar_accuracy = nar_ok / n;
  rep.cloze_accuracy = cloze_ok / n;
  rep.length_accuracy = len_ok / n;
  rep.ms_per_image = elapsed / n;
  return rep;
}

void write_eval_tsv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << "filename\tlabel\ttrue_length\tpredicted_length\tar\tnar\tcloze\n";
  for (const EvalRow& r : report.rows) {
    out << r.filename << '\t' << r.label << '\t' << r.true_length << '\t' << r.predicted_length << '\t' << r.ar
        << '\t' << r.nar << '\t' << r.cloze << '\n';
  }
}

std::string eval_summary(const EvalReport& report) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "samples          %d\n"
                "AR accuracy      %.4f\n"
                "NAR accuracy     %.4f\n"
                "cloze accuracy   %.4f  (ground truth as initial prediction)\n"
                "length accuracy  %.4f\n"
                "ms per image     %.2f  (all three modes)\n",
                report.samples, report.ar_accuracy, report.nar_accuracy, report.cloze_accuracy,
                report.length_accuracy, report.ms_per_image);
  return buf;
}

Model<float> train_model(const ModelConfig& model_cfg, const TrainConfig& train_cfg, std::uint64_t model_seed,
                         const std::vector<TrainExample>& examples, const Trainer::FitOptions& opts) {
  Model<float> model(model_cfg, model_seed);
  Trainer trainer(model, train_cfg);
  trainer.fit(examples, opts);
  return model;
}

std::vector<AblationPlan> ablation_suite(const std::string& suite, const TrainConfig& base) {
  std::vector<AblationPlan> plan;
  const int k = base.permutations;
  const double r = base.perturb_ratio;
  if (suite == "core" || suite == "all") {
    plan.push_back({"full", Variant::kFull, k, r});
    // cloze refinement reads the mask side, which these two never train
    plan.push_back({"baseline", Variant::kBaseline, 1, 0.0, false});
    plan.push_back({"plm-only", Variant::kPlmOnly, k, 0.0, false});
    plan.push_back({"no-length", Variant::kNoLength, k, 0.0});
    plan.push_back({"char-length", Variant::kCharLength, k, r});
  }
  if (suite == "k" || suite == "all") {
    for (int kk : {1, 2, 6, 12}) plan.push_back({"K=" + std::to_string(kk), Variant::kFull, kk, 0.0, false});
  }
  if (suite == "perturb" || suite == "all") {
    for (double rr : {0.0, 0.1, 0.3, 0.5}) {
      char name[32];
      std::snprintf(name, sizeof name, "perturb=%.1f", rr);
      plan.push_back({name, Variant::kFull, k, rr});
    }
  }
  if (plan.empty()) throw ConfigError("unknown ablation suite '" + suite + "' (expected core, k, perturb or all)");
  return plan;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::vector<AblationPlan>& plan,
                                      const Dataset& train, const Dataset& test,
                                      const std::function<void(const std::string&)>& progress) {
  std::vector<AblationRow> rows;
  for (const AblationPlan& p : plan) {
    ModelConfig mc = base.model;
    TrainConfig tc = base.train;
    tc.permutations = p.permutations;
    tc.perturb_ratio = p.perturb_ratio;
    apply_variant(p.variant, mc, tc);
    if (progress) progress("training " + p.name);
    const Model<float> probe(mc, base.model_seed);
    const std::vector<TrainExample> examples = prepare_examples(probe, train);
    const auto start = std::chrono::steady_clock::now();
    Model<float> model = train_model(mc, tc, base.model_seed, examples);
    AblationRow row;
    row.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.name = p.name;
    row.variant = p.variant;
    row.permutations = tc.permutations;
    row.perturb_ratio = tc.perturb_ratio;
    row.refined = p.refine;
    EvalOptions eo;
    if (!p.refine) eo.ar.refine_iters = eo.nar.refine_iters = 0;
    row.report = evaluate(model, test, eo);
    if (progress) progress(p.name + ": AR " + std::to_string(row.report.ar_accuracy) + " NAR " +
                           std::to_string(row.report.nar_accuracy));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_tsv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << "name\tvariant\tK\tperturb_ratio\trefine\tar\tnar\tcloze\tlength\ttrain_seconds\n";
  for (const AblationRow& r : rows) {
    out << r.name << '\t' << to_string(r.variant) << '\t' << r.permutations << '\t' << r.perturb_ratio << '\t'
        << (r.refined ? "yes" : "no") << '\t' << r.report.ar_accuracy << '\t' << r.report.nar_accuracy << '\t'
        << r.report.cloze_accuracy << '\t' << r.report.length_accuracy << '\t' << r.train_seconds << '\n';
  }
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %-12s %3s %7s %6s %7s %7s %7s %7s\n", "name", "variant", "K", "perturb",
                "refine", "AR", "NAR", "cloze", "length");
  os << buf;
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%-14s %-12s %3d %7.2f %6s %7.2f %7.2f %7.2f %7.2f\n", r.name.c_str(),
                  to_string(r.variant).c_str(), r.permutations, r.perturb_ratio, r.refined ? "yes" : "no",
                  100 * r.report.ar_accuracy, 100 * r.report.nar_accuracy, 100 * r.report.cloze_accuracy,
                  100 * r.report.length_accuracy);
    os << buf;
  }
  return os.str();
}

}  // namespace mpstr
