#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

namespace lgsan {

// Table-2 switches: C = language grounding, E = FEEM, SC = SAAM+CGLRM.
struct AblationFlags {
  bool grounding = true;  // C
  bool feem = true;       // E
  bool sc = true;         // SC

  static AblationFlags baseline() { return {false, false, false}; }
  static AblationFlags parse(const std::string& csv);  // "c,e,sc" (case-insensitive)
  std::string str() const;
};

struct ModelConfig {
  // backbone
  std::array<int, 4> backbone_channels{16, 32, 64, 128};
  std::string backbone_pretrained_adapter;  // empty -> built-in tiny pyramid

  // grounding
  std::string grounding_provider = "synthetic";
  int text_dim = 64;
  int grounding_width = 16;
  int attn_dim = 32;
  int transformer_depth = 1;
  std::string prompt_template = "a photo of the camouflaged {category}";

  // feem
  int feem_channels = 32;
  double fft_cutoff_ratio = 0.25;
  std::string feem_padding_mode = "zero";  // zero | reflect

  // saam
  int saam_dim = 16;

  // cglrm
  bool cglrm_shared_local_weights = true;
  int cglrm_reduction = 4;

  // decoder / objective
  int decoder_channels = 32;
  double lambda = 5.0;

  // pad non-multiple-of-32 inputs (e.g. 521 -> 544) and crop predictions back
  bool pad_to_multiple = false;
};

struct OptimConfig {
  double lr = 1e-4;
  double poly_power = 0.9;
  int steps = 600;
  int batch_size = 4;
};

struct DataConfig {
  std::string root;          // dataset directory (Imgs/ + GT/ [+ Edge/, meta.tsv])
  int synth_count = 0;       // if > 0 and root empty: generate in-memory
  int size = 64;
  double camo_strength = 0.5;
};

struct RunConfig {
  ModelConfig model;
  AblationFlags flags;
  OptimConfig optim;
  DataConfig data;
  std::uint64_t seed = 42;
  std::string out_dir = "runs/latest";
  int eval_every = 50;

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::string& path);
  // FNV-1a over the canonical serialized form; embedded in every artifact
  std::string config_hash() const;
};

// poly schedule: lr0 * (1 - step/total)^power
inline double poly_lr(double lr0, int step, int total, double power) {
  double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total);
  if (frac < 0.0) frac = 0.0;
  return lr0 * std::pow(frac, power);
}

}  // namespace lgsan
