#pragma once

#include <string>
#include <vector>

#include "cadv/tensor.hpp"

namespace cadv {

// Sample container shared by the IDX loaders and the synthetic generator.
// x is N x 1 x H x W for image sources and N x D for the synthetic SCM;
// style holds per-sample ground-truth style buckets (synthetic only).
struct Dataset {
  Tensor<double> x;
  std::vector<int64_t> y;
  std::vector<int64_t> style;
  int64_t k = 0;
  // provenance, set by synth_generate and required by flip_association
  bool synthetic = false;
  uint64_t seed = 0;
  double rho = 0.0;

  int64_t size() const { return x.defined() ? x.dim(0) : 0; }
  void validate() const;
};

// Big-endian IDX (magic 2051 for images, 2049 for labels), bytes scaled to
// [0,1] by /255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& ds);

// Structural causal model behind the controlled spurious-correlation
// experiments: C and S drawn independently, Y = argmax(Lc C), and the style
// bucket is forced to agree with Y with probability rho (to disagree for
// negative rho), so the bucket-label agreement rate is (1+rho)/2 at k = 2
// and buckets stay independent of Y at rho = 0 for every k. Inputs are
// [content block | style block] = 0.5 + gain * (M c or s) + noise, clamped.
struct SyntheticCausalConfig {
  int64_t d_c = 8;
  int64_t d_sty = 4;
  int64_t k = 4;
  int64_t block_c = 16;
  int64_t block_s = 8;
  double rho = 0.0;
  double noise = 0.02;
  double gain = 0.15;
  uint64_t mix_seed = 1234;  // the fixed mixing/label/score maps derive from this

  int64_t input_dim() const { return block_c + block_s; }
  void validate() const;
};

Dataset synth_generate(const SyntheticCausalConfig& cfg, int64_t n, uint64_t seed);

// Regenerate with rho -> -rho. Per-sample derived seeds keep every content
// draw, label, and noise draw bitwise identical; only the style side moves.
Dataset flip_association(const Dataset& ds, const SyntheticCausalConfig& cfg);

// Procedural digit glyphs (28x28, ten stroke-drawn classes with jitter and
// pixel noise): a self-contained stand-in for handwritten-digit data.
Dataset glyph_digits(int64_t n, uint64_t seed);

// Container round-trip with a "SYNTH1" tag for synthetic provenance.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Batch slicing for training: gathers rows idx, optionally flattened to
// B x D for mlp consumption, cast to Real.
template <class Real>
Tensor<Real> batch_x(const Dataset& ds, const std::vector<int64_t>& idx, bool flatten);
std::vector<int64_t> batch_y(const Dataset& ds, const std::vector<int64_t>& idx);
std::vector<int64_t> batch_style(const Dataset& ds, const std::vector<int64_t>& idx);

// Columns [lo, hi) of a rank-2 tensor (probing the content/style blocks).
Tensor<double> column_block(const Tensor<double>& x, int64_t lo, int64_t hi);

}  // namespace cadv
