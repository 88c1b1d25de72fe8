#include <fstream>
#include <set>

#include "urlt/cli.hpp"
#include "urlt/error.hpp"

namespace urlt {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw ConfigError("unknown config key " + where + "." + key);
}

// Parsed JSON stores non-negative literals as unsigned; built-in json values may be signed.
bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::size_t get_count(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!non_negative_integer(v)) throw ConfigError(where + "." + key + " must be a non-negative integer");
  return v.get<std::size_t>();
}

double get_real(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
  return v.get<double>();
}

std::string get_text(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_string()) throw ConfigError(where + "." + key + " must be a string");
  return v.get<std::string>();
}

std::string absolute_or_empty(const std::string& p) {
  return p.empty() ? p : std::filesystem::absolute(p).lexically_normal().string();
}

}  // namespace

RunConfig resolve_merged(const std::vector<json>& layers);

json default_config_json(const std::string& preset, Regime regime) {
  RunConfig c;
  if (preset == "desk") {
    c.model = ModelConfig::desk_scale();
    c.training = RegimeConfig::desk_preset(regime);
  } else if (preset == "paper") {
    c.model = ModelConfig::full_scale();
    c.training = RegimeConfig::paper_preset(regime);
  } else {
    throw ConfigError("unknown preset '" + preset + "' (valid: desk, paper)");
  }
  c.preset = preset;
  return c.to_json();
}

json RunConfig::to_json() const {
  const auto& t = training;
  return json{
      {"preset", preset},
      {"seed", seed},
      {"model",
       {{"num_layers", model.num_layers},
        {"context_window", model.context_window},
        {"model_dim", model.model_dim},
        {"ffn_dim", model.ffn_dim},
        {"num_heads", model.num_heads},
        {"dropout", model.dropout},
        {"head_hidden", model.head_hidden}}},
      {"training",
       {{"regime", to_string(t.regime)},
        {"epochs", t.epochs},
        {"pretrain_epochs", t.pretrain_epochs},
        {"batch_size", t.batch_size},
        {"freeze_layers", t.freeze_layers ? json(*t.freeze_layers) : json(nullptr)},
        {"loss_fractions", t.weights.fractions},
        {"patience", t.patience},
        {"validate_every", t.validate_every},
        {"learning_rate", t.adam.learning_rate},
        {"adam_beta1", t.adam.beta1},
        {"adam_beta2", t.adam.beta2},
        {"adam_epsilon", t.adam.epsilon},
        {"finetune_learning_rate", t.finetune_learning_rate},
        {"clip_norm", t.clip_norm}}},
      {"data", {{"train", train_path}, {"validation", validation_path}, {"corpus", corpus_path}}},
      {"out", out_dir},
  };
}

void RunConfig::validate() const {
  model.validate();
  training.validate();
  if (training.freeze_layers && *training.freeze_layers > model.num_layers)
    throw ConfigError("freeze_layers exceeds num_layers");
  if (train_path.empty()) throw ConfigError("no training data given (--train or data.train)");
  if (training.regime == Regime::finetune_corpus && corpus_path.empty())
    throw ConfigError("regime finetune-corpus needs a pretraining corpus (--corpus or data.corpus)");
  if (training.regime != Regime::finetune_corpus && !corpus_path.empty())
    throw ConfigError("a pretraining corpus is only used by the finetune-corpus regime");
}

RunConfig resolve_config(const std::vector<json>& layers) {
  try {
    return resolve_merged(layers);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

RunConfig resolve_merged(const std::vector<json>& layers) {
  json merged = json::object();
  for (const auto& layer : layers) {
    if (!layer.is_object()) throw ConfigError("configuration must be a JSON object");
    merged.merge_patch(layer);
  }
  std::string preset = "desk";
  Regime regime = Regime::mixed;
  if (merged.contains("preset")) preset = get_text(merged, "preset", "config");
  if (merged.contains("training") && merged["training"].is_object() && merged["training"].contains("regime"))
    regime = parse_regime(get_text(merged["training"], "regime", "training"));

  json j = default_config_json(preset, regime);
  j.merge_patch(merged);

  check_keys(j, "config", {"preset", "seed", "model", "training", "data", "out"});
  RunConfig c;
  c.preset = preset;
  if (!non_negative_integer(j.at("seed"))) throw ConfigError("seed must be a non-negative integer");
  c.seed = j.at("seed").get<std::uint64_t>();
  c.out_dir = absolute_or_empty(get_text(j, "out", "config"));

  const json& m = j.at("model");
  check_keys(m, "model", {"num_layers", "context_window", "model_dim", "ffn_dim", "num_heads", "dropout", "head_hidden"});
  c.model.num_layers = get_count(m, "num_layers", "model");
  c.model.context_window = get_count(m, "context_window", "model");
  c.model.model_dim = get_count(m, "model_dim", "model");
  c.model.ffn_dim = get_count(m, "ffn_dim", "model");
  c.model.num_heads = get_count(m, "num_heads", "model");
  c.model.dropout = get_real(m, "dropout", "model");
  c.model.head_hidden = get_count(m, "head_hidden", "model");

  const json& t = j.at("training");
  check_keys(t, "training",
             {"regime", "epochs", "pretrain_epochs", "batch_size", "freeze_layers", "loss_fractions", "patience",
              "validate_every", "learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon",
              "finetune_learning_rate", "clip_norm"});
  auto& r = c.training;
  r.regime = parse_regime(get_text(t, "regime", "training"));
  r.epochs = get_count(t, "epochs", "training");
  r.pretrain_epochs = get_count(t, "pretrain_epochs", "training");
  r.batch_size = get_count(t, "batch_size", "training");
  if (!t.contains("freeze_layers") || t["freeze_layers"].is_null())
    r.freeze_layers.reset();
  else
    r.freeze_layers = get_count(t, "freeze_layers", "training");
  if (!t.at("loss_fractions").is_array()) throw ConfigError("training.loss_fractions must be an array");
  r.weights.fractions.clear();
  for (const auto& v : t["loss_fractions"]) {
    if (!v.is_number()) throw ConfigError("training.loss_fractions must hold numbers");
    r.weights.fractions.push_back(v.get<double>());
  }
  r.patience = get_count(t, "patience", "training");
  r.validate_every = get_count(t, "validate_every", "training");
  r.adam.learning_rate = get_real(t, "learning_rate", "training");
  r.adam.beta1 = get_real(t, "adam_beta1", "training");
  r.adam.beta2 = get_real(t, "adam_beta2", "training");
  r.adam.epsilon = get_real(t, "adam_epsilon", "training");
  r.finetune_learning_rate = get_real(t, "finetune_learning_rate", "training");
  r.clip_norm = get_real(t, "clip_norm", "training");
  r.seed = c.seed;

  const json& d = j.at("data");
  check_keys(d, "data", {"train", "validation", "corpus"});
  c.train_path = absolute_or_empty(get_text(d, "train", "data"));
  c.validation_path = absolute_or_empty(get_text(d, "validation", "data"));
  c.corpus_path = absolute_or_empty(get_text(d, "corpus", "data"));
  return c;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
}

}  // namespace urlt
