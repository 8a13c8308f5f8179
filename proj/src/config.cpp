#include "mgmf/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace mgmf {

using nlohmann::json;

namespace {

void require_keys(const json& obj, const std::string& where,
                  std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok |= key == a;
    if (!ok)
      throw ConfigError("unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
void opt_get(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::array<int, 4> parse_classes(const json& j) {
  if (!j.is_object())
    throw ConfigError("\"classes\" must map task names to class counts");
  require_keys(j, "classes", {"mr", "sa", "id", "od"});
  std::array<int, 4> out{};
  for (std::size_t t = 0; t < 4; ++t) {
    if (!j.contains(kTaskNames[t]))
      throw ConfigError(std::string("classes.") + kTaskNames[t] +
                        " is mandatory (no default)");
    out[t] = j.at(kTaskNames[t]).get<int>();
  }
  return out;
}

}  // namespace

std::string AblationFlags::tag() const {
  if (om) return "wo_om";
  if (up) return "wo_up";
  if (gl) return "wo_gl";
  if (dg) return "wo_dg";
  return "full";
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid structured text: ") +
                      e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be an object");
  require_keys(j, "config root",
               {"model", "classes", "optimizer", "loss", "ablation", "data",
                "eval_every", "out"});
  RunConfig cfg;
  cfg.enc.vocab = 64;  // encoder default of 0 forces explicit choice in code
  if (!j.contains("classes"))
    throw ConfigError("\"classes\" is mandatory (no default)");
  cfg.class_counts = parse_classes(j.at("classes"));
  cfg.data.synth.class_counts = cfg.class_counts;

  if (j.contains("model")) {
    const json& m = j.at("model");
    require_keys(m, "model",
                 {"width", "heads", "ff_hidden", "layers", "vocab", "max_text",
                  "image_side", "patch_side", "channels", "interaction",
                  "concat_domains", "tie_cap_directions", "full_concat_context",
                  "unimodal_post_fusion", "contrast_pre_stack"});
    opt_get(m, "width", cfg.enc.width);
    opt_get(m, "heads", cfg.enc.heads);
    opt_get(m, "ff_hidden", cfg.enc.ff_hidden);
    opt_get(m, "layers", cfg.layers);
    opt_get(m, "vocab", cfg.enc.vocab);
    opt_get(m, "max_text", cfg.enc.max_text);
    opt_get(m, "image_side", cfg.enc.image_side);
    opt_get(m, "patch_side", cfg.enc.patch_side);
    opt_get(m, "channels", cfg.enc.channels);
    if (m.contains("interaction")) {
      const std::string kind = m.at("interaction").get<std::string>();
      if (kind == "global") cfg.interaction_global = true;
      else if (kind == "local") cfg.interaction_global = false;
      else throw ConfigError("model.interaction must be \"global\" or \"local\"");
    }
    opt_get(m, "concat_domains", cfg.concat_domains);
    opt_get(m, "tie_cap_directions", cfg.tie_cap_directions);
    opt_get(m, "full_concat_context", cfg.full_concat_context);
    opt_get(m, "unimodal_post_fusion", cfg.unimodal_post_fusion);
    opt_get(m, "contrast_pre_stack", cfg.contrast_pre_stack);
  }

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    require_keys(o, "optimizer", {"kind", "lr", "beta1", "beta2", "eps",
                                  "steps", "batch", "seed"});
    if (o.contains("kind")) {
      const std::string kind = o.at("kind").get<std::string>();
      if (kind == "adam") cfg.opt.kind = OptimizerConfig::Kind::Adam;
      else if (kind == "sgd") cfg.opt.kind = OptimizerConfig::Kind::Sgd;
      else throw ConfigError("optimizer.kind must be \"adam\" or \"sgd\"");
    }
    opt_get(o, "lr", cfg.opt.lr);
    opt_get(o, "beta1", cfg.opt.beta1);
    opt_get(o, "beta2", cfg.opt.beta2);
    opt_get(o, "eps", cfg.opt.eps);
    opt_get(o, "steps", cfg.steps);
    opt_get(o, "batch", cfg.batch);
    opt_get(o, "seed", cfg.seed);
  }

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    require_keys(l, "loss", {"tau", "lambda", "mode", "trunk_decay"});
    opt_get(l, "tau", cfg.loss.tau);
    if (l.contains("lambda")) {
      const json& lam = l.at("lambda");
      if (lam.is_number()) cfg.loss.lambda.fill(lam.get<double>());
      else if (lam.is_array() && lam.size() == 4)
        for (std::size_t t = 0; t < 4; ++t) cfg.loss.lambda[t] = lam[t].get<double>();
      else
        throw ConfigError("loss.lambda must be a number or a 4-element array");
    }
    if (l.contains("mode")) {
      const std::string mode = l.at("mode").get<std::string>();
      if (mode == "symmetric") cfg.loss.mode = ContrastiveMode::Symmetric;
      else if (mode == "literal") cfg.loss.mode = ContrastiveMode::Literal;
      else throw ConfigError("loss.mode must be \"symmetric\" or \"literal\"");
    }
    opt_get(l, "trunk_decay", cfg.loss.trunk_decay);
  }

  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    require_keys(a, "ablation", {"om", "up", "gl", "dg"});
    opt_get(a, "om", cfg.drop.om);
    opt_get(a, "up", cfg.drop.up);
    opt_get(a, "gl", cfg.drop.gl);
    opt_get(a, "dg", cfg.drop.dg);
  }

  if (j.contains("data")) {
    const json& d = j.at("data");
    require_keys(d, "data", {"train_manifest", "test_manifest", "synthetic"});
    const bool has_files = d.contains("train_manifest") || d.contains("test_manifest");
    if (has_files && d.contains("synthetic"))
      throw ConfigError("data: choose manifests or synthetic, not both");
    if (has_files) {
      if (!d.contains("train_manifest") || !d.contains("test_manifest"))
        throw ConfigError("data: both train_manifest and test_manifest required");
      cfg.data.use_synthetic = false;
      cfg.data.train_manifest = d.at("train_manifest").get<std::string>();
      cfg.data.test_manifest = d.at("test_manifest").get<std::string>();
    } else if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      require_keys(s, "data.synthetic",
                   {"train", "test", "weak_correlation", "text_len", "source_len",
                    "target_len", "image_side"});
      cfg.data.use_synthetic = true;
      opt_get(s, "train", cfg.data.synth_train);
      opt_get(s, "test", cfg.data.synth_test);
      opt_get(s, "weak_correlation", cfg.data.synth.weak_correlation);
      opt_get(s, "text_len", cfg.data.synth.text_len);
      opt_get(s, "source_len", cfg.data.synth.source_len);
      opt_get(s, "target_len", cfg.data.synth.target_len);
      opt_get(s, "image_side", cfg.data.synth.image_side);
    }
  }

  opt_get(j, "eval_every", cfg.eval_every);
  opt_get(j, "out", cfg.out_dir);

  cfg.data.synth.vocab = cfg.enc.vocab;
  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

void validate_run_config(const RunConfig& cfg) {
  if (cfg.enc.width == 0 || cfg.enc.heads == 0 || cfg.enc.ff_hidden == 0 ||
      cfg.layers == 0 || cfg.enc.vocab == 0 || cfg.enc.max_text == 0 ||
      cfg.enc.image_side == 0 || cfg.enc.patch_side == 0)
    throw ConfigError("all model dimensions must be positive");
  if (cfg.enc.width % cfg.enc.heads != 0)
    throw ConfigError("model width must be divisible by heads");
  if (cfg.enc.image_side % cfg.enc.patch_side != 0)
    throw ConfigError("patch_side must divide image_side");
  for (std::size_t t = 0; t < 4; ++t)
    if (cfg.class_counts[t] <= 0)
      throw ConfigError(std::string("classes.") + kTaskNames[t] +
                        " must be positive");
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  if (!cfg.drop.dg && cfg.batch < 2)
    throw ConfigError("batch size must be >= 2 while the contrastive term is "
                      "enabled (it needs in-batch negatives)");
  if (cfg.loss.tau <= 0) throw ConfigError("loss.tau must be positive");
  for (double l : cfg.loss.lambda)
    if (l < 0) throw ConfigError("loss.lambda entries must be >= 0");
  if (cfg.loss.trunk_decay < 0)
    throw ConfigError("loss.trunk_decay must be >= 0");
  if (cfg.opt.lr <= 0) throw ConfigError("optimizer.lr must be positive");
}

std::string config_fingerprint(const RunConfig& cfg) {
  json f;
  f["width"] = cfg.enc.width;
  f["heads"] = cfg.enc.heads;
  f["ff_hidden"] = cfg.enc.ff_hidden;
  f["layers"] = cfg.layers;
  f["vocab"] = cfg.enc.vocab;
  f["max_text"] = cfg.enc.max_text;
  f["image_side"] = cfg.enc.image_side;
  f["patch_side"] = cfg.enc.patch_side;
  f["channels"] = cfg.enc.channels;
  f["classes"] = cfg.class_counts;
  f["tie_cap_directions"] = cfg.tie_cap_directions;
  return f.dump();
}

std::string run_config_to_text(const RunConfig& cfg) {
  json j;
  j["model"] = {{"width", cfg.enc.width},
                {"heads", cfg.enc.heads},
                {"ff_hidden", cfg.enc.ff_hidden},
                {"layers", cfg.layers},
                {"vocab", cfg.enc.vocab},
                {"max_text", cfg.enc.max_text},
                {"image_side", cfg.enc.image_side},
                {"patch_side", cfg.enc.patch_side},
                {"channels", cfg.enc.channels},
                {"interaction", cfg.interaction_global ? "global" : "local"},
                {"concat_domains", cfg.concat_domains},
                {"tie_cap_directions", cfg.tie_cap_directions},
                {"full_concat_context", cfg.full_concat_context},
                {"unimodal_post_fusion", cfg.unimodal_post_fusion},
                {"contrast_pre_stack", cfg.contrast_pre_stack}};
  j["classes"] = {{"mr", cfg.class_counts[0]},
                  {"sa", cfg.class_counts[1]},
                  {"id", cfg.class_counts[2]},
                  {"od", cfg.class_counts[3]}};
  j["optimizer"] = {
      {"kind", cfg.opt.kind == OptimizerConfig::Kind::Adam ? "adam" : "sgd"},
      {"lr", cfg.opt.lr},
      {"beta1", cfg.opt.beta1},
      {"beta2", cfg.opt.beta2},
      {"eps", cfg.opt.eps},
      {"steps", cfg.steps},
      {"batch", cfg.batch},
      {"seed", cfg.seed}};
  j["loss"] = {
      {"tau", cfg.loss.tau},
      {"lambda", cfg.loss.lambda},
      {"mode", cfg.loss.mode == ContrastiveMode::Symmetric ? "symmetric" : "literal"},
      {"trunk_decay", cfg.loss.trunk_decay}};
  j["ablation"] = {{"om", cfg.drop.om},
                   {"up", cfg.drop.up},
                   {"gl", cfg.drop.gl},
                   {"dg", cfg.drop.dg}};
  if (cfg.data.use_synthetic)
    j["data"] = {{"synthetic",
                  {{"train", cfg.data.synth_train},
                   {"test", cfg.data.synth_test},
                   {"weak_correlation", cfg.data.synth.weak_correlation},
                   {"text_len", cfg.data.synth.text_len},
                   {"source_len", cfg.data.synth.source_len},
                   {"target_len", cfg.data.synth.target_len},
                   {"image_side", cfg.data.synth.image_side}}}};
  else
    j["data"] = {{"train_manifest", cfg.data.train_manifest},
                 {"test_manifest", cfg.data.test_manifest}};
  j["eval_every"] = cfg.eval_every;
  j["out"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

}  // namespace mgmf
