#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "urlt/attribution.hpp"
#include "urlt/baseline.hpp"
#include "urlt/cli.hpp"
#include "urlt/data.hpp"
#include "urlt/error.hpp"
#include "urlt/evaluation.hpp"
#include "urlt/kernels.hpp"

namespace urlt {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("URLT_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || *end != '\0' || *s == '-') throw ConfigError(std::string("URLT_SEED is not an unsigned integer: ") + s);
  return v;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  return fs::absolute(dir);
}

// ---- gen-data ----------------------------------------------------------------

struct GenDataFlags {
  std::string out;
  std::size_t n_benign = SyntheticSpec{}.n_benign;
  std::size_t n_malicious = SyntheticSpec{}.n_malicious;
  std::optional<std::uint64_t> seed;
  std::size_t word_list_size = SyntheticSpec{}.word_list_size;
  SplitFractions fractions;
};

void cmd_gen_data(const GenDataFlags& f, std::ostream& out) {
  SyntheticSpec spec;
  spec.n_benign = f.n_benign;
  spec.n_malicious = f.n_malicious;
  spec.word_list_size = f.word_list_size;
  if (auto s = f.seed ? f.seed : env_seed()) spec.seed = *s;
  const auto dir = prepare_out(f.out);
  const UrlDataset data = generate_synthetic(spec);
  const DatasetSplits parts = split(data, f.fractions, spec.seed);
  save_tsv(parts.train, dir / "train.tsv");
  save_tsv(parts.validation, dir / "val.tsv");
  save_tsv(parts.test, dir / "test.tsv");
  json manifest = {
      {"generator", "synthetic"},
      {"seed", spec.seed},
      {"n_benign", spec.n_benign},
      {"n_malicious", spec.n_malicious},
      {"word_list_size", spec.word_list_size},
      {"entropy_segment_length", {spec.entropy_min, spec.entropy_max}},
      {"fractions", {f.fractions.train, f.fractions.validation, f.fractions.test}},
      {"files", json::object()},
  };
  for (const auto& [name, part] : {std::pair{"train.tsv", &parts.train}, std::pair{"val.tsv", &parts.validation},
                                   std::pair{"test.tsv", &parts.test}})
    manifest["files"][name] = {{"records", part->size()}, {"benign", part->count_label(0)},
                               {"malicious", part->count_label(1)}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << parts.train.size() << "/" << parts.validation.size() << "/" << parts.test.size()
      << " train/val/test URLs to " << dir.string() << "\n";
}

// ---- train ---------------------------------------------------------------------

std::string step_header() {
  return "phase\tepoch\tstep\tloss\tclassification_loss\tnext_char_loss\talpha\tbeta\tfraction_cls\tfraction_next\tfallback\n";
}

std::string step_row(const StepRecord& s) {
  std::ostringstream os;
  const bool mixed = s.report.multipliers.size() == 2;
  auto pick = [&](const std::vector<double>& v, std::size_t i) { return mixed ? fmt(v[i]) : std::string("nan"); };
  os << to_string(s.phase) << '\t' << s.epoch << '\t' << s.step << '\t' << fmt(s.loss) << '\t'
     << fmt(s.classification_loss) << '\t' << fmt(s.next_char_loss) << '\t' << pick(s.report.multipliers, 0) << '\t'
     << pick(s.report.multipliers, 1) << '\t' << pick(s.report.fractions, 0) << '\t' << pick(s.report.fractions, 1)
     << '\t' << (s.report.fallback ? 1 : 0) << '\n';
  return os.str();
}

void cmd_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  if (config.out_dir.empty()) throw ConfigError("no output directory given (--out)");
  const UrlDataset train = load_tsv(config.train_path, true);
  const UrlDataset validation = config.validation_path.empty() ? UrlDataset{} : load_tsv(config.validation_path, true);
  std::optional<UrlDataset> corpus;
  if (!config.corpus_path.empty()) corpus = load_tsv(config.corpus_path, false);

  const auto dir = prepare_out(config.out_dir);
  write_file(dir / kConfigEchoFile, config.to_json().dump(2) + "\n");

  std::ofstream log(dir / kTrainLogFile, std::ios::binary);
  if (!log) throw IoError("cannot write " + (dir / kTrainLogFile).string());
  log << step_header();

  Rng init_rng(config.seed);
  TransformerModel model = TransformerModel::init(config.model, init_rng);
  out << "regime " << to_string(config.training.regime) << ", " << model.parameter_count() << " parameters, "
      << train.size() << " training URLs\n";

  TrainingCallbacks callbacks;
  callbacks.on_step = [&](Regime, const StepRecord& s) { log << step_row(s); };
  callbacks.on_epoch = [&](Regime, const EpochRecord& e) {
    out << to_string(e.phase) << " epoch " << e.epoch << ": train loss " << fmt(e.train_loss);
    if (e.validation_auc) out << ", validation AUC " << fmt(*e.validation_auc);
    out << "\n";
  };
  TrainingResult result =
      run_regime(config.training, std::move(model), train, validation, corpus ? &*corpus : nullptr, callbacks);
  log.close();
  if (!log) throw IoError("failed writing " + (dir / kTrainLogFile).string());

  save_checkpoint(result.model, dir / kCheckpointFile);

  std::ostringstream m;
  m << "phase\tepoch\ttrain_loss\tvalidation_auc\tvalidation_loss\n";
  for (const auto& e : result.history.epochs)
    m << to_string(e.phase) << '\t' << e.epoch << '\t' << fmt(e.train_loss) << '\t'
      << (e.validation_auc ? fmt(*e.validation_auc) : "nan") << '\t'
      << (e.validation_loss ? fmt(*e.validation_loss) : "nan") << '\n';
  m << "\nmetric\tvalue\n";
  m << "best_epoch\t" << (result.history.best_epoch ? std::to_string(*result.history.best_epoch) : "nan") << '\n';
  m << "best_validation_auc\t"
    << (result.history.best_validation_auc ? fmt(*result.history.best_validation_auc) : "nan") << '\n';
  if (!validation.empty()) m << "final_validation_auc\t" << fmt(evaluate_epoch(result.model, validation).auc) << '\n';
  m << "fallback_events\t" << result.history.fallback_events << '\n';
  m << "parameters\t" << result.model.parameter_count() << '\n';
  write_file(dir / kMetricsFile, m.str());
  out << "checkpoint written to " << (dir / kCheckpointFile).string() << "\n";
}

// ---- eval ----------------------------------------------------------------------

struct EvalFlags {
  std::vector<std::string> checkpoints;
  std::string test;
  std::string out;
  std::string baseline_train;
  std::optional<std::uint64_t> seed;
};

std::pair<std::string, std::string> named_path(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) return {fs::path(spec).parent_path().filename().string() + "/" + fs::path(spec).stem().string(), spec};
  if (eq == 0 || eq + 1 == spec.size()) throw ConfigError("checkpoint must be NAME=PATH or PATH: " + spec);
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

std::string auc_table(std::span<const NamedRoc> curves) {
  std::ostringstream os;
  os << "model\tauc\tn_pos\tn_neg\n";
  for (const auto& c : curves) os << c.name << '\t' << fmt(c.roc.auc) << '\t' << c.roc.positives << '\t' << c.roc.negatives << '\n';
  return os.str();
}

NamedRoc baseline_curve(const UrlDataset& train, const UrlDataset& test, std::uint64_t seed) {
  NgramOptions options;
  options.seed = seed;
  const NgramLogistic model = NgramLogistic::train(train, options);
  const auto scores = model.predict(test);
  return {"ngram-baseline", roc_curve(scores, test.labels())};
}

void cmd_eval(const EvalFlags& f, std::ostream& out) {
  if (f.checkpoints.empty()) throw ConfigError("at least one --checkpoint is required");
  std::vector<std::pair<std::string, std::string>> named;
  for (const auto& c : f.checkpoints) named.push_back(named_path(c));
  const UrlDataset test = load_tsv(f.test, true);
  std::vector<NamedRoc> curves;
  for (const auto& [name, path] : named) {
    const TransformerModel model = load_checkpoint(path);
    curves.push_back({name, roc_curve(predict_scores(model, test), test.labels())});
  }
  if (!f.baseline_train.empty()) {
    const auto seed = f.seed ? f.seed : env_seed();
    curves.push_back(baseline_curve(load_tsv(f.baseline_train, true), test, seed.value_or(1)));
  }
  const auto dir = prepare_out(f.out);
  export_curves(curves, dir / kCurvesFile);
  const std::string table = auc_table(curves);
  write_file(dir / kMetricsFile, table);
  out << table;
}

// ---- attribute -----------------------------------------------------------------

struct AttributeFlags {
  std::string checkpoint;
  std::string urls;
  std::string out;
  std::size_t steps = kDefaultAttributionSteps;
};

void cmd_attribute(const AttributeFlags& f, std::ostream& out, std::ostream& err) {
  const TransformerModel model = load_checkpoint(f.checkpoint);
  const UrlDataset data = load_tsv(f.urls, false);
  std::vector<std::string> urls;
  for (const auto& r : data.records) urls.push_back(r.url);
  const auto dir = prepare_out(f.out);
  const AttributionReport report = attribute_report(model, urls, f.steps, dir / kAttributionsFile);
  for (std::size_t c = 0; c < kCharCategories; ++c) {
    const auto& s = report.categories[c];
    out << to_string(static_cast<CharCategory>(c)) << ": " << s.segments << " segments, mean contribution "
        << fmt(s.mean_per_segment()) << "\n";
  }
  if (report.max_relative_residual > 0.05)
    err << "warning: completeness residual reaches " << fmt(100.0 * report.max_relative_residual)
        << "% of the score difference; increase --steps\n";
  out << "attributions written to " << (dir / kAttributionsFile).string() << "\n";
}

// ---- baseline ------------------------------------------------------------------

struct BaselineFlags {
  std::string train;
  std::string test;
  std::string out;
  std::optional<std::uint64_t> seed;
  NgramOptions options;
};

void cmd_baseline(BaselineFlags f, std::ostream& out) {
  if (auto s = f.seed ? f.seed : env_seed()) f.options.seed = *s;
  f.options.validate();
  const UrlDataset train = load_tsv(f.train, true);
  const UrlDataset test = load_tsv(f.test, true);
  const NgramLogistic model = NgramLogistic::train(train, f.options);
  const std::vector<NamedRoc> curves = {{"ngram-baseline", roc_curve(model.predict(test), test.labels())}};
  const auto dir = prepare_out(f.out);
  export_curves(curves, dir / kCurvesFile);
  const std::string table = auc_table(curves);
  write_file(dir / kMetricsFile, table);
  out << table;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  kernels::tune_allocator();
  CLI::App app{"Character-level transformer for malicious URL classification"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GenDataFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic train/val/test TSVs and a manifest");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n-benign", gen.n_benign, "Benign URLs")->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--n-malicious", gen.n_malicious, "Malicious URLs")->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator and split seed (default URLT_SEED, else 7)");
  gen_cmd->add_option("--word-list-size", gen.word_list_size, "Words drawn for benign text")
      ->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--train-frac", gen.fractions.train)->capture_default_str();
  gen_cmd->add_option("--val-frac", gen.fractions.validation)->capture_default_str();
  gen_cmd->add_option("--test-frac", gen.fractions.test)->capture_default_str();

  // Train flags are collected as a JSON overlay that sits above the config file.
  json overlay = json::object();
  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "Train a model under one regime");
  train_cmd->add_option("--config", config_path, "JSON configuration file");
  std::map<std::string, CLI::Option*> opts;
  std::string regime, train_path, val_path, corpus_path, out_dir, preset;
  std::uint64_t seed = 0;
  std::size_t epochs = 0, pretrain_epochs = 0, batch_size = 0, freeze = 0, patience = 0, layers = 0, window = 0,
              dim = 0, ffn = 0, heads = 0;
  double frac_cls = 0, lr = 0, ft_lr = 0, dropout = 0, clip = 0;
  opts["regime"] = train_cmd->add_option("--regime", regime, "decode-to-label, finetune, finetune-corpus or mixed");
  opts["train"] = train_cmd->add_option("--train", train_path, "Labeled training TSV");
  opts["val"] = train_cmd->add_option("--val", val_path, "Labeled validation TSV");
  opts["corpus"] = train_cmd->add_option("--corpus", corpus_path, "Unlabeled pretraining corpus (finetune-corpus)");
  opts["out"] = train_cmd->add_option("--out", out_dir, "Output directory");
  opts["preset"] = train_cmd->add_option("--preset", preset, "desk or paper");
  opts["seed"] = train_cmd->add_option("--seed", seed, "Run seed (default URLT_SEED, else 1)");
  opts["epochs"] = train_cmd->add_option("--epochs", epochs);
  opts["pretrain-epochs"] = train_cmd->add_option("--pretrain-epochs", pretrain_epochs);
  opts["batch-size"] = train_cmd->add_option("--batch-size", batch_size);
  opts["freeze-layers"] = train_cmd->add_option("--freeze-layers", freeze);
  opts["patience"] = train_cmd->add_option("--patience", patience);
  opts["loss-frac-cls"] = train_cmd->add_option("--loss-frac-cls", frac_cls, "Classification share of the mixed loss");
  opts["learning-rate"] = train_cmd->add_option("--learning-rate", lr);
  opts["finetune-learning-rate"] = train_cmd->add_option("--finetune-learning-rate", ft_lr);
  opts["clip-norm"] = train_cmd->add_option("--clip-norm", clip);
  opts["layers"] = train_cmd->add_option("--layers", layers);
  opts["context-window"] = train_cmd->add_option("--context-window", window);
  opts["model-dim"] = train_cmd->add_option("--model-dim", dim);
  opts["ffn-dim"] = train_cmd->add_option("--ffn-dim", ffn);
  opts["heads"] = train_cmd->add_option("--heads", heads);
  opts["dropout"] = train_cmd->add_option("--dropout", dropout);

  EvalFlags eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints on a test split and export ROC curves");
  eval_cmd->add_option("--checkpoint", eval.checkpoints, "NAME=PATH or PATH (repeatable)")->required();
  eval_cmd->add_option("--test", eval.test, "Labeled test TSV")->required();
  eval_cmd->add_option("--out", eval.out, "Output directory")->required();
  eval_cmd->add_option("--baseline-train", eval.baseline_train, "Also train the n-gram baseline on this TSV");
  eval_cmd->add_option("--seed", eval.seed, "Baseline seed");

  AttributeFlags attr;
  auto* attr_cmd = app.add_subcommand("attribute", "Integrated-gradients attribution per character");
  attr_cmd->add_option("--checkpoint", attr.checkpoint)->required();
  attr_cmd->add_option("--urls", attr.urls, "TSV of URLs (labels ignored)")->required();
  attr_cmd->add_option("--out", attr.out, "Output directory")->required();
  attr_cmd->add_option("--steps", attr.steps, "Midpoint steps")->check(CLI::PositiveNumber)->capture_default_str();

  BaselineFlags base;
  auto* base_cmd = app.add_subcommand("baseline", "Train and evaluate the character n-gram logistic baseline");
  base_cmd->add_option("--train", base.train)->required();
  base_cmd->add_option("--test", base.test)->required();
  base_cmd->add_option("--out", base.out)->required();
  base_cmd->add_option("--seed", base.seed);
  base_cmd->add_option("--epochs", base.options.epochs)->capture_default_str();
  base_cmd->add_option("--buckets", base.options.buckets)->capture_default_str();
  base_cmd->add_option("--max-n", base.options.max_n)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) {
      if (std::abs(gen.fractions.train + gen.fractions.validation + gen.fractions.test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
      cmd_gen_data(gen, out);
    } else if (train_cmd->parsed()) {
      auto given = [&](const char* name) { return opts.at(name)->count() > 0; };
      if (given("regime")) overlay["training"]["regime"] = to_string(parse_regime(regime));
      if (given("preset")) overlay["preset"] = preset;
      if (given("seed")) overlay["seed"] = seed;
      if (given("train")) overlay["data"]["train"] = train_path;
      if (given("val")) overlay["data"]["validation"] = val_path;
      if (given("corpus")) overlay["data"]["corpus"] = corpus_path;
      if (given("out")) overlay["out"] = out_dir;
      if (given("epochs")) overlay["training"]["epochs"] = epochs;
      if (given("pretrain-epochs")) overlay["training"]["pretrain_epochs"] = pretrain_epochs;
      if (given("batch-size")) overlay["training"]["batch_size"] = batch_size;
      if (given("freeze-layers")) overlay["training"]["freeze_layers"] = freeze;
      if (given("patience")) overlay["training"]["patience"] = patience;
      if (given("loss-frac-cls")) {
        if (!(frac_cls > 0.0 && frac_cls < 1.0)) throw ConfigError("--loss-frac-cls must lie strictly between 0 and 1");
        overlay["training"]["loss_fractions"] = {frac_cls, 1.0 - frac_cls};
      }
      if (given("learning-rate")) overlay["training"]["learning_rate"] = lr;
      if (given("finetune-learning-rate")) overlay["training"]["finetune_learning_rate"] = ft_lr;
      if (given("clip-norm")) overlay["training"]["clip_norm"] = clip;
      if (given("layers")) overlay["model"]["num_layers"] = layers;
      if (given("context-window")) overlay["model"]["context_window"] = window;
      if (given("model-dim")) overlay["model"]["model_dim"] = dim;
      if (given("ffn-dim")) overlay["model"]["ffn_dim"] = ffn;
      if (given("heads")) overlay["model"]["num_heads"] = heads;
      if (given("dropout")) overlay["model"]["dropout"] = dropout;

      std::vector<json> layers_in;
      if (auto s = env_seed()) layers_in.push_back({{"seed", *s}});
      if (!config_path.empty()) layers_in.push_back(read_json_file(config_path));
      layers_in.push_back(overlay);
      cmd_train(resolve_config(layers_in), out);
    } else if (eval_cmd->parsed()) {
      cmd_eval(eval, out);
    } else if (attr_cmd->parsed()) {
      cmd_attribute(attr, out, err);
    } else if (base_cmd->parsed()) {
      cmd_baseline(base, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace urlt
