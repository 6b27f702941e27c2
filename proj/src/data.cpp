#include "cadv/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "cadv/container.hpp"
#include "cadv/rng.hpp"

namespace cadv {

void Dataset::validate() const {
  CADV_CHECK(x.defined(), "dataset has no inputs");
  CADV_CHECK(x.ndim() == 2 || x.ndim() == 4, "dataset x must be N x D or N x C x H x W, got ",
             shape_str(x.shape()));
  const int64_t n = x.dim(0);
  CADV_CHECK(static_cast<int64_t>(y.size()) == n, "dataset has ", n, " inputs but ", y.size(),
             " labels");
  CADV_CHECK(style.empty() || static_cast<int64_t>(style.size()) == n,
             "style annotations must be empty or cover every sample");
  CADV_CHECK(k >= 1, "dataset needs a positive class count, got ", k);
  for (int64_t v : y) CADV_CHECK(v >= 0 && v < k, "label ", v, " outside [0, ", k, ")");
  for (int64_t v : style) CADV_CHECK(v >= 0, "negative style bucket ", v);
  for (double v : x.data())
    CADV_CHECK(std::isfinite(v) && v >= 0.0 && v <= 1.0, "input value ", v, " outside [0, 1]");
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  CADV_CHECK(f.good(), "cannot open ", path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

uint32_t be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
  CADV_CHECK(off + 4 <= b.size(), "truncated file: ", path);
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
         uint32_t(b[off + 3]);
}

void push_be32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(uint8_t(v >> 24));
  b.push_back(uint8_t(v >> 16));
  b.push_back(uint8_t(v >> 8));
  b.push_back(uint8_t(v));
}

void write_file(const std::string& path, const std::vector<uint8_t>& b) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  CADV_CHECK(f.good(), "cannot open ", path, " for writing");
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  CADV_CHECK(f.good(), "short write to ", path);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const std::vector<uint8_t> ib = read_file(images_path);
  const uint32_t imagic = be32(ib, 0, images_path);
  CADV_CHECK(imagic == 2051u, "wrong magic in ", images_path, ": expected 2051, got ", imagic);
  const int64_t n = be32(ib, 4, images_path);
  const int64_t h = be32(ib, 8, images_path);
  const int64_t w = be32(ib, 12, images_path);
  const size_t want = 16 + size_t(n) * size_t(h) * size_t(w);
  CADV_CHECK(ib.size() >= want, "truncated file: ", images_path);
  CADV_CHECK(ib.size() == want, "trailing bytes in ", images_path);

  const std::vector<uint8_t> lb = read_file(labels_path);
  const uint32_t lmagic = be32(lb, 0, labels_path);
  CADV_CHECK(lmagic == 2049u, "wrong magic in ", labels_path, ": expected 2049, got ", lmagic);
  const int64_t n2 = be32(lb, 4, labels_path);
  CADV_CHECK(lb.size() >= 8 + size_t(n2), "truncated file: ", labels_path);
  CADV_CHECK(lb.size() == 8 + size_t(n2), "trailing bytes in ", labels_path);
  CADV_CHECK(n == n2, "image/label count mismatch: ", n, " images vs ", n2, " labels");

  Dataset ds;
  ds.x = Tensor<double>({n, 1, h, w});
  double* xp = ds.x.ptr();
  for (size_t i = 0; i < size_t(n) * size_t(h) * size_t(w); ++i)
    xp[i] = double(ib[16 + i]) / 255.0;
  ds.y.resize(size_t(n));
  int64_t maxy = 0;
  for (int64_t i = 0; i < n; ++i) {
    ds.y[size_t(i)] = lb[8 + size_t(i)];
    maxy = std::max<int64_t>(maxy, ds.y[size_t(i)]);
  }
  ds.k = maxy + 1;
  ds.validate();
  return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path, const Dataset& ds) {
  ds.validate();
  CADV_CHECK(ds.x.ndim() == 4 && ds.x.dim(1) == 1, "IDX export needs N x 1 x H x W inputs, got ",
             shape_str(ds.x.shape()));
  CADV_CHECK(ds.k <= 256, "IDX labels are single bytes; k = ", ds.k, " does not fit");
  const int64_t n = ds.size(), h = ds.x.dim(2), w = ds.x.dim(3);

  std::vector<uint8_t> ib;
  ib.reserve(16 + size_t(n) * size_t(h) * size_t(w));
  push_be32(ib, 2051u);
  push_be32(ib, uint32_t(n));
  push_be32(ib, uint32_t(h));
  push_be32(ib, uint32_t(w));
  for (double v : ds.x.data()) {
    long q = std::lround(v * 255.0);
    ib.push_back(uint8_t(std::clamp(q, 0l, 255l)));
  }
  write_file(images_path, ib);

  std::vector<uint8_t> lb;
  lb.reserve(8 + size_t(n));
  push_be32(lb, 2049u);
  push_be32(lb, uint32_t(n));
  for (int64_t v : ds.y) lb.push_back(uint8_t(v));
  write_file(labels_path, lb);
}

// ---------------------------------------------------------------------------
// Synthetic SCM

void SyntheticCausalConfig::validate() const {
  CADV_CHECK(d_c >= 1 && d_sty >= 1, "latent dims must be positive");
  CADV_CHECK(k >= 2, "need at least two classes, got ", k);
  CADV_CHECK(block_c >= 1 && block_s >= 1, "observed blocks must be non-empty");
  CADV_CHECK(rho >= -1.0 && rho <= 1.0, "rho must lie in [-1, 1], got ", rho);
  CADV_CHECK(noise >= 0.0, "noise must be non-negative");
  CADV_CHECK(gain > 0.0, "gain must be positive");
}

namespace {

struct SynthMaps {
  std::vector<double> Lc;  // k x d_c label map
  std::vector<double> Mc;  // block_c x d_c mixing
  std::vector<double> Ms;  // block_s x d_sty mixing
  std::vector<double> w;   // d_sty bucket score direction
  double wn = 0.0;
};

SynthMaps synth_maps(const SyntheticCausalConfig& cfg) {
  SynthMaps m;
  Rng r1(Rng::derive(cfg.mix_seed, 101));
  m.Lc.resize(size_t(cfg.k * cfg.d_c));
  for (double& v : m.Lc) v = r1.normal();
  Rng r2(Rng::derive(cfg.mix_seed, 102));
  m.Mc.resize(size_t(cfg.block_c * cfg.d_c));
  for (double& v : m.Mc) v = r2.normal() / std::sqrt(double(cfg.d_c));
  Rng r3(Rng::derive(cfg.mix_seed, 103));
  m.Ms.resize(size_t(cfg.block_s * cfg.d_sty));
  for (double& v : m.Ms) v = r3.normal() / std::sqrt(double(cfg.d_sty));
  Rng r4(Rng::derive(cfg.mix_seed, 104));
  m.w.resize(size_t(cfg.d_sty));
  double s2 = 0.0;
  for (double& v : m.w) {
    v = r4.normal();
    s2 += v * v;
  }
  m.wn = std::sqrt(s2);
  CADV_CHECK(m.wn > 0.0, "degenerate bucket direction");
  return m;
}

// w'S / |w| is exactly standard normal, so floor(k * Phi(.)) gives k
// equal-mass buckets.
int64_t bucket_of(const std::vector<double>& s, const SynthMaps& m, int64_t k) {
  double t = 0.0;
  for (size_t j = 0; j < s.size(); ++j) t += m.w[j] * s[j];
  t /= m.wn;
  const double p = 0.5 * (1.0 + std::erf(t / std::sqrt(2.0)));
  return std::min<int64_t>(std::max<int64_t>(int64_t(p * double(k)), 0), k - 1);
}

}  // namespace

Dataset synth_generate(const SyntheticCausalConfig& cfg, int64_t n, uint64_t seed) {
  cfg.validate();
  CADV_CHECK(n >= 1, "need at least one sample");
  const SynthMaps maps = synth_maps(cfg);
  const int64_t d = cfg.input_dim();

  Dataset ds;
  ds.x = Tensor<double>({n, d});
  ds.y.resize(size_t(n));
  ds.style.resize(size_t(n));
  ds.k = cfg.k;
  ds.synthetic = true;
  ds.seed = seed;
  ds.rho = cfg.rho;

  std::vector<double> c(size_t(cfg.d_c)), s(size_t(cfg.d_sty));
  for (int64_t i = 0; i < n; ++i) {
    // Independent substreams so that flipping the association (which only
    // changes how the style stream is consumed) leaves content, label, and
    // pixel noise draws bitwise intact.
    Rng rc(Rng::derive(seed, uint64_t(i), 1));
    for (double& v : c) v = rc.normal();
    int64_t y = 0;
    double best = -1e300;
    for (int64_t j = 0; j < cfg.k; ++j) {
      double z = 0.0;
      for (int64_t q = 0; q < cfg.d_c; ++q) z += maps.Lc[size_t(j * cfg.d_c + q)] * c[size_t(q)];
      if (z > best) {
        best = z;
        y = j;
      }
    }

    Rng rs(Rng::derive(seed, uint64_t(i), 2));
    for (double& v : s) v = rs.normal();
    const double u = rs.uniform();
    if (u < std::fabs(cfg.rho)) {
      int64_t target = y;
      if (cfg.rho < 0.0) {
        target = int64_t(rs.randint(uint64_t(cfg.k - 1)));
        if (target >= y) ++target;
      }
      int64_t tries = 0;
      while (bucket_of(s, maps, cfg.k) != target) {
        for (double& v : s) v = rs.normal();
        CADV_CHECK(++tries < 1000000, "bucket resampling did not terminate");
      }
    }
    ds.style[size_t(i)] = bucket_of(s, maps, cfg.k);
    ds.y[size_t(i)] = y;

    Rng rn(Rng::derive(seed, uint64_t(i), 3));
    double* row = ds.x.ptr() + i * d;
    for (int64_t j = 0; j < cfg.block_c; ++j) {
      double z = 0.0;
      for (int64_t q = 0; q < cfg.d_c; ++q) z += maps.Mc[size_t(j * cfg.d_c + q)] * c[size_t(q)];
      row[j] = std::clamp(0.5 + cfg.gain * z + cfg.noise * rn.normal(), 0.0, 1.0);
    }
    for (int64_t j = 0; j < cfg.block_s; ++j) {
      double z = 0.0;
      for (int64_t q = 0; q < cfg.d_sty; ++q)
        z += maps.Ms[size_t(j * cfg.d_sty + q)] * s[size_t(q)];
      row[cfg.block_c + j] = std::clamp(0.5 + cfg.gain * z + cfg.noise * rn.normal(), 0.0, 1.0);
    }
  }
  ds.validate();
  return ds;
}

Dataset flip_association(const Dataset& ds, const SyntheticCausalConfig& cfg) {
  CADV_CHECK(ds.synthetic, "flip_association needs a synthetic dataset");
  CADV_CHECK(ds.x.ndim() == 2 && ds.x.dim(1) == cfg.input_dim(), "config does not match dataset: ",
             shape_str(ds.x.shape()), " vs input_dim ", cfg.input_dim());
  CADV_CHECK(ds.k == cfg.k, "config does not match dataset: k ", cfg.k, " vs ", ds.k);
  SyntheticCausalConfig flipped = cfg;
  flipped.rho = -ds.rho;
  return synth_generate(flipped, ds.size(), ds.seed);
}

// ---------------------------------------------------------------------------
// Procedural glyphs

namespace {

struct Pt {
  double r, c;
};

double seg_dist(double r, double c, Pt a, Pt b) {
  const double vr = b.r - a.r, vc = b.c - a.c;
  const double L2 = vr * vr + vc * vc;
  double t = L2 > 0.0 ? ((r - a.r) * vr + (c - a.c) * vc) / L2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dr = r - (a.r + t * vr), dc = c - (a.c + t * vc);
  return std::sqrt(dr * dr + dc * dc);
}

// Seven-segment skeletons; corners are jittered jointly so strokes stay
// connected.
const int kSegCorner[7][2] = {
    {0, 1},  // A: top
    {1, 3},  // B: upper right
    {3, 5},  // C: lower right
    {4, 5},  // D: bottom
    {2, 4},  // E: lower left
    {0, 2},  // F: upper left
    {2, 3},  // G: middle
};

const char* kDigitSegs[10] = {"ABCDEF", "BC",     "ABGED", "ABGCD", "FGBC",
                              "AFGCD",  "AFGECD", "ABC",   "ABCDEFG", "ABCDFG"};

}  // namespace

Dataset glyph_digits(int64_t n, uint64_t seed) {
  CADV_CHECK(n >= 1, "need at least one sample");
  const int64_t H = 28, W = 28;
  Dataset ds;
  ds.x = Tensor<double>({n, 1, H, W});
  ds.y.resize(size_t(n));
  ds.k = 10;
  ds.seed = seed;

  const Pt base[6] = {{2, 4}, {2, 15}, {10, 4}, {10, 15}, {18, 4}, {18, 15}};
  for (int64_t i = 0; i < n; ++i) {
    Rng rng(Rng::derive(seed, uint64_t(i), 7));
    const int64_t digit = int64_t(rng.randint(10));
    ds.y[size_t(i)] = digit;

    const double dr = 2.0 + double(rng.randint(5));
    const double dc = 2.0 + double(rng.randint(5));
    Pt corner[6];
    for (int j = 0; j < 6; ++j) {
      corner[j].r = base[j].r + dr + rng.uniform(-1.2, 1.2);
      corner[j].c = base[j].c + dc + rng.uniform(-1.2, 1.2);
    }
    // wide saturated strokes with hard edges: thresholding at 0.5 recovers
    // the clean glyph from any |delta| <= 0.3 perturbation, so a robust
    // classifier exists with margin to spare
    const double half = 0.5 * rng.uniform(2.6, 3.4);
    const double ink = 1.0;

    double* img = ds.x.ptr() + i * H * W;
    for (const char* sp = kDigitSegs[digit]; *sp; ++sp) {
      const int si = *sp - 'A';
      const Pt a = corner[kSegCorner[si][0]], b = corner[kSegCorner[si][1]];
      const int r0 = std::max(0, int(std::floor(std::min(a.r, b.r) - half - 1)));
      const int r1 = std::min(int(H - 1), int(std::ceil(std::max(a.r, b.r) + half + 1)));
      const int c0 = std::max(0, int(std::floor(std::min(a.c, b.c) - half - 1)));
      const int c1 = std::min(int(W - 1), int(std::ceil(std::max(a.c, b.c) + half + 1)));
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
          const double d = seg_dist(double(r), double(c), a, b);
          const double v = d <= half ? ink : 0.0;
          double& px = img[r * W + c];
          px = std::max(px, v);
        }
    }
    for (int64_t p = 0; p < H * W; ++p)
      img[p] = std::clamp(img[p] + 0.02 * rng.normal(), 0.0, 1.0);
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Container round-trip

void save_dataset(const std::string& path, const Dataset& ds) {
  ds.validate();
  Container box;
  box.put_tensor("x", ds.x.shape(), ds.x.data());
  std::vector<double> yv(ds.y.begin(), ds.y.end());
  box.put_tensor("y", {ds.size()}, yv);
  if (!ds.style.empty()) {
    std::vector<double> sv(ds.style.begin(), ds.style.end());
    box.put_tensor("style", {ds.size()}, sv);
  }
  nlohmann::json meta;
  meta["k"] = ds.k;
  meta["synthetic"] = ds.synthetic;
  meta["seed"] = ds.seed;
  meta["rho"] = ds.rho;
  box.put_text("meta", meta.dump());
  if (ds.synthetic) box.put_text("SYNTH1", "synthetic causal dataset");
  box.save(path);
}

Dataset load_dataset(const std::string& path) {
  Container box = Container::load(path);
  Dataset ds;
  Shape xs;
  std::vector<double> xv = box.tensor("x", &xs);
  ds.x = Tensor<double>::from(xs, std::move(xv));
  Shape ys;
  for (double v : box.tensor("y", &ys)) ds.y.push_back(int64_t(std::llround(v)));
  if (box.has("style")) {
    Shape ss;
    for (double v : box.tensor("style", &ss)) ds.style.push_back(int64_t(std::llround(v)));
  }
  nlohmann::json meta = nlohmann::json::parse(box.text("meta"));
  ds.k = meta.at("k").get<int64_t>();
  ds.synthetic = meta.at("synthetic").get<bool>();
  ds.seed = meta.at("seed").get<uint64_t>();
  ds.rho = meta.at("rho").get<double>();
  CADV_CHECK(ds.synthetic == box.has("SYNTH1"), "corrupt dataset container: provenance mismatch");
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Batching

template <class Real>
Tensor<Real> batch_x(const Dataset& ds, const std::vector<int64_t>& idx, bool flatten) {
  CADV_CHECK(ds.x.defined(), "dataset has no inputs");
  const int64_t n = ds.size();
  const int64_t row = ds.x.numel() / std::max<int64_t>(n, 1);
  const int64_t b = static_cast<int64_t>(idx.size());
  Shape shape;
  if (flatten) {
    shape = {b, row};
  } else {
    shape = ds.x.shape();
    shape[0] = b;
  }
  Tensor<Real> out(shape);
  const double* src = ds.x.ptr();
  Real* dst = out.ptr();
  for (int64_t i = 0; i < b; ++i) {
    const int64_t j = idx[size_t(i)];
    CADV_CHECK(j >= 0 && j < n, "batch index ", j, " outside [0, ", n, ")");
    for (int64_t p = 0; p < row; ++p) dst[i * row + p] = Real(src[j * row + p]);
  }
  return out;
}

template Tensor<float> batch_x<float>(const Dataset&, const std::vector<int64_t>&, bool);
template Tensor<double> batch_x<double>(const Dataset&, const std::vector<int64_t>&, bool);

std::vector<int64_t> batch_y(const Dataset& ds, const std::vector<int64_t>& idx) {
  std::vector<int64_t> out;
  out.reserve(idx.size());
  for (int64_t j : idx) {
    CADV_CHECK(j >= 0 && j < ds.size(), "batch index ", j, " outside [0, ", ds.size(), ")");
    out.push_back(ds.y[size_t(j)]);
  }
  return out;
}

std::vector<int64_t> batch_style(const Dataset& ds, const std::vector<int64_t>& idx) {
  CADV_CHECK(!ds.style.empty(), "dataset has no style annotations");
  std::vector<int64_t> out;
  out.reserve(idx.size());
  for (int64_t j : idx) {
    CADV_CHECK(j >= 0 && j < ds.size(), "batch index ", j, " outside [0, ", ds.size(), ")");
    out.push_back(ds.style[size_t(j)]);
  }
  return out;
}

Tensor<double> column_block(const Tensor<double>& x, int64_t lo, int64_t hi) {
  CADV_CHECK(x.ndim() == 2, "column_block needs a rank-2 tensor, got ", shape_str(x.shape()));
  CADV_CHECK(0 <= lo && lo < hi && hi <= x.dim(1), "bad column range [", lo, ", ", hi, ")");
  const int64_t n = x.dim(0), d = x.dim(1), w = hi - lo;
  Tensor<double> out({n, w});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < w; ++j) out.ptr()[i * w + j] = x.ptr()[i * d + lo + j];
  return out;
}

}  // namespace cadv
