#include "lgsan/model/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "lgsan/core/errors.hpp"
#include "lgsan/core/rng.hpp"

namespace lgsan {

using nlohmann::json;

AblationFlags AblationFlags::parse(const std::string& csv) {
  AblationFlags f{false, false, false};
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::string t;
    for (char c : tok)
      if (!isspace(static_cast<unsigned char>(c))) t.push_back(static_cast<char>(tolower(c)));
    if (t.empty() || t == "b") continue;
    if (t == "c") f.grounding = true;
    else if (t == "e") f.feem = true;
    else if (t == "sc") f.sc = true;
    else throw ConfigError("unknown ablation flag '" + tok + "' (expected c, e, sc)");
  }
  return f;
}

std::string AblationFlags::str() const {
  std::string s = "B";
  if (grounding) s += "+C";
  if (feem) s += "+E";
  if (sc) s += "+SC";
  return s;
}

static json to_json_tree(const RunConfig& rc) {
  const ModelConfig& m = rc.model;
  json j;
  j["backbone"] = {{"channels", m.backbone_channels},
                   {"pretrained_adapter", m.backbone_pretrained_adapter}};
  j["grounding"] = {{"enabled", rc.flags.grounding},
                    {"provider", m.grounding_provider},
                    {"text_dim", m.text_dim},
                    {"width", m.grounding_width},
                    {"attn_dim", m.attn_dim},
                    {"transformer_depth", m.transformer_depth},
                    {"prompt_template", m.prompt_template}};
  j["feem"] = {{"enabled", rc.flags.feem},
               {"channels", m.feem_channels},
               {"cutoff_ratio", m.fft_cutoff_ratio},
               {"padding_mode", m.feem_padding_mode}};
  j["saam"] = {{"dim", m.saam_dim}};
  j["cglrm"] = {{"shared_local_weights", m.cglrm_shared_local_weights},
                {"reduction", m.cglrm_reduction}};
  j["sc_enabled"] = rc.flags.sc;
  j["decoder"] = {{"channels", m.decoder_channels}};
  j["lambda"] = m.lambda;
  j["pad_to_multiple"] = m.pad_to_multiple;
  j["optimizer"] = {{"lr", rc.optim.lr},
                    {"poly_power", rc.optim.poly_power},
                    {"steps", rc.optim.steps},
                    {"batch_size", rc.optim.batch_size}};
  j["data"] = {{"root", rc.data.root},
               {"synth_count", rc.data.synth_count},
               {"size", rc.data.size},
               {"camo_strength", rc.data.camo_strength}};
  j["seed"] = rc.seed;
  j["out_dir"] = rc.out_dir;
  j["eval_every"] = rc.eval_every;
  return j;
}

std::string RunConfig::to_json() const { return to_json_tree(*this).dump(2); }

template <class T>
static void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig rc;
  ModelConfig& m = rc.model;
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    get_if(b, "channels", m.backbone_channels);
    get_if(b, "pretrained_adapter", m.backbone_pretrained_adapter);
  }
  if (j.contains("grounding")) {
    const auto& g = j["grounding"];
    get_if(g, "enabled", rc.flags.grounding);
    get_if(g, "provider", m.grounding_provider);
    get_if(g, "text_dim", m.text_dim);
    get_if(g, "width", m.grounding_width);
    get_if(g, "attn_dim", m.attn_dim);
    get_if(g, "transformer_depth", m.transformer_depth);
    get_if(g, "prompt_template", m.prompt_template);
  }
  if (j.contains("feem")) {
    const auto& f = j["feem"];
    get_if(f, "enabled", rc.flags.feem);
    get_if(f, "channels", m.feem_channels);
    get_if(f, "cutoff_ratio", m.fft_cutoff_ratio);
    get_if(f, "padding_mode", m.feem_padding_mode);
  }
  if (j.contains("saam")) get_if(j["saam"], "dim", m.saam_dim);
  if (j.contains("cglrm")) {
    get_if(j["cglrm"], "shared_local_weights", m.cglrm_shared_local_weights);
    get_if(j["cglrm"], "reduction", m.cglrm_reduction);
  }
  get_if(j, "sc_enabled", rc.flags.sc);
  if (j.contains("decoder")) get_if(j["decoder"], "channels", m.decoder_channels);
  get_if(j, "lambda", m.lambda);
  get_if(j, "pad_to_multiple", m.pad_to_multiple);
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    get_if(o, "lr", rc.optim.lr);
    get_if(o, "poly_power", rc.optim.poly_power);
    get_if(o, "steps", rc.optim.steps);
    get_if(o, "batch_size", rc.optim.batch_size);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    get_if(d, "root", rc.data.root);
    get_if(d, "synth_count", rc.data.synth_count);
    get_if(d, "size", rc.data.size);
    get_if(d, "camo_strength", rc.data.camo_strength);
  }
  get_if(j, "seed", rc.seed);
  get_if(j, "out_dir", rc.out_dir);
  get_if(j, "eval_every", rc.eval_every);

  if (!(m.fft_cutoff_ratio > 0.0 && m.fft_cutoff_ratio < 1.0))
    throw ConfigError("feem.cutoff_ratio must lie in (0,1)");
  if (m.feem_padding_mode != "zero" && m.feem_padding_mode != "reflect")
    throw ConfigError("feem.padding_mode must be 'zero' or 'reflect'");
  if (m.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string RunConfig::config_hash() const {
  std::uint64_t h = Rng::hash_string(to_json_tree(*this).dump());
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace lgsan
