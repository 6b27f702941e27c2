#include "cadv/model.hpp"

#include <json.hpp>

#include "cadv/container.hpp"
#include "cadv/rng.hpp"

namespace cadv {

const char* arch_name(Arch a) { return a == Arch::mnist_cnn ? "mnist_cnn" : "mlp"; }

Arch arch_from_name(const std::string& name) {
  if (name == "mnist_cnn") return Arch::mnist_cnn;
  if (name == "mlp") return Arch::mlp;
  fail("unknown architecture '", name, "' (expected mnist_cnn or mlp)");
}

namespace {

// The fixed mnist_cnn layout: conv3x3(32)-conv3x3(32)-pool-conv3x3(64)-
// conv3x3(64)-pool-fc(200)-fc(200), relu after every layer, no padding.
constexpr int64_t kCnnChannels[4] = {32, 32, 64, 64};
constexpr bool kCnnPoolAfter[4] = {false, true, false, true};
constexpr int64_t kCnnFc[2] = {200, 200};

// Spatial dims after the conv stack; validates pool evenness.
void cnn_trunk_dims(const NetworkSpec& s, int64_t* out_c, int64_t* out_h, int64_t* out_w) {
  int64_t h = s.in_h, w = s.in_w;
  for (int i = 0; i < 4; ++i) {
    h -= 2;
    w -= 2;
    CADV_CHECK(h >= 1 && w >= 1, "mnist_cnn: input ", s.in_h, "x", s.in_w,
               " too small for the conv stack");
    if (kCnnPoolAfter[i]) {
      CADV_CHECK(h % 2 == 0 && w % 2 == 0, "mnist_cnn: odd dims ", h, "x", w,
                 " before maxpool");
      h /= 2;
      w /= 2;
    }
  }
  *out_c = kCnnChannels[3];
  *out_h = h;
  *out_w = w;
}

template <class Real>
Tensor<Real> he_uniform(Rng& rng, Shape shape, int64_t fan_in) {
  const double limit = std::sqrt(6.0 / double(fan_in));
  int64_t n = numel(shape);
  std::vector<Real> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-limit, limit));
  return Tensor<Real>::from(std::move(shape), std::move(v), true);
}

}  // namespace

int64_t NetworkSpec::d() const {
  if (arch == Arch::mnist_cnn) return kCnnFc[1];
  CADV_CHECK(!layers.empty(), "mlp: layers must be non-empty");
  return layers.back();
}

int64_t NetworkSpec::style_dim() const {
  if (d_s > 0) return d_s;
  return std::min<int64_t>(64, d() - k);
}

int64_t NetworkSpec::flat_input() const {
  return arch == Arch::mnist_cnn ? in_channels * in_h * in_w : input_dim;
}

void NetworkSpec::validate() const {
  CADV_CHECK(k >= 2, "spec: class count k must be >= 2, got ", k);
  if (arch == Arch::mnist_cnn) {
    CADV_CHECK(in_channels >= 1 && in_h >= 1 && in_w >= 1, "spec: bad input dims");
    int64_t c, h, w;
    cnn_trunk_dims(*this, &c, &h, &w);
  } else {
    CADV_CHECK(input_dim >= 1, "spec: input_dim must be >= 1");
    CADV_CHECK(!layers.empty(), "spec: layers must be non-empty");
    for (int64_t l : layers) CADV_CHECK(l >= 1, "spec: layer width must be >= 1");
  }
  CADV_CHECK(d() > k, "spec: representation dim ", d(), " must exceed k=", k);
  CADV_CHECK(style_dim() <= d() - k, "spec: d_s=", style_dim(),
             " exceeds d - k = ", d() - k);
  CADV_CHECK(style_dim() >= 1, "spec: d_s must be >= 1");
  CADV_CHECK(sigma >= 0, "spec: sigma must be >= 0");
}

template <class Real>
std::vector<Tensor<Real>> Classifier<Real>::parameters() const {
  std::vector<Tensor<Real>> out;
  for (const auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <class Real>
std::vector<std::pair<std::string, Tensor<Real>>> Classifier<Real>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<Real>>> out;
  for (size_t i = 0; i < convs.size(); ++i) {
    out.emplace_back("conv" + std::to_string(i) + ".W", convs[i].W);
    out.emplace_back("conv" + std::to_string(i) + ".b", convs[i].b);
  }
  for (size_t i = 0; i < fcs.size(); ++i) {
    out.emplace_back("fc" + std::to_string(i) + ".W", fcs[i].W);
    out.emplace_back("fc" + std::to_string(i) + ".b", fcs[i].b);
  }
  out.emplace_back("head.W", Wc);
  out.emplace_back("head.b", bc);
  out.emplace_back("style.Wg", Wg);
  return out;
}

template <class Real>
Classifier<Real> build_classifier(const NetworkSpec& spec, uint64_t seed) {
  spec.validate();
  Classifier<Real> c;
  c.spec = spec;
  c.sigma = static_cast<Real>(spec.sigma);
  Rng rng(seed);

  int64_t d = spec.d(), k = spec.k, ds = spec.style_dim();
  if (spec.arch == Arch::mnist_cnn) {
    int64_t cin = spec.in_channels;
    for (int i = 0; i < 4; ++i) {
      typename Classifier<Real>::Conv conv;
      conv.W = he_uniform<Real>(rng, {kCnnChannels[i], cin, 3, 3}, cin * 9);
      conv.b = Tensor<Real>(Shape{kCnnChannels[i]}, Real(0), true);
      conv.pool_after = kCnnPoolAfter[i];
      cin = kCnnChannels[i];
      c.convs.push_back(std::move(conv));
    }
    int64_t tc, th, tw;
    cnn_trunk_dims(spec, &tc, &th, &tw);
    int64_t in = tc * th * tw;
    for (int64_t width : kCnnFc) {
      typename Classifier<Real>::Fc fc;
      fc.W = he_uniform<Real>(rng, {width, in}, in);
      fc.b = Tensor<Real>(Shape{width}, Real(0), true);
      c.fcs.push_back(std::move(fc));
      in = width;
    }
  } else {
    int64_t in = spec.input_dim;
    for (int64_t width : spec.layers) {
      typename Classifier<Real>::Fc fc;
      fc.W = he_uniform<Real>(rng, {width, in}, in);
      fc.b = Tensor<Real>(Shape{width}, Real(0), true);
      c.fcs.push_back(std::move(fc));
      in = width;
    }
  }

  c.Wc = he_uniform<Real>(rng, {k, d}, d);
  c.bc = Tensor<Real>(Shape{k}, Real(0), true);
  c.Wg = he_uniform<Real>(rng, {k, ds}, ds);

  c.cov = CovarianceEstimate::identity(d);
  double resid = reproject_style_map(c);
  CADV_CHECK(resid < 1e-6, "build_classifier: style map residual ", resid);
  return c;
}

template <class Real>
Classifier<Real> clone_classifier(const Classifier<Real>& c) {
  auto dup = [](const Tensor<Real>& t) {
    Tensor<Real> out = t.clone();
    out.set_requires_grad(t.requires_grad());
    return out;
  };
  Classifier<Real> out;
  out.spec = c.spec;
  out.sigma = c.sigma;
  out.cov = c.cov;
  for (const auto& cv : c.convs) out.convs.push_back({dup(cv.W), dup(cv.b), cv.pool_after});
  for (const auto& fc : c.fcs) out.fcs.push_back({dup(fc.W), dup(fc.b)});
  out.Wc = dup(c.Wc);
  out.bc = dup(c.bc);
  out.Wg = dup(c.Wg);
  out.Ws = dup(c.Ws);
  return out;
}

template <class Real>
ForwardOut<Real> forward(Tape<Real>& tape, const Classifier<Real>& c, Tensor<Real> x) {
  Tensor<Real> h = x;
  if (c.spec.arch == Arch::mnist_cnn) {
    CADV_CHECK(h.ndim() == 4 && h.dim(1) == c.spec.in_channels && h.dim(2) == c.spec.in_h &&
                   h.dim(3) == c.spec.in_w,
               "forward: input ", shape_str(h.shape()), " does not match spec");
    for (const auto& conv : c.convs) {
      h = tape.relu(tape.conv2d(h, conv.W, conv.b, 0));
      if (conv.pool_after) h = tape.maxpool2x2(h);
    }
    h = tape.flatten(h);
  } else {
    CADV_CHECK(h.ndim() >= 1 && h.numel() / h.dim(0) == c.spec.input_dim, "forward: input ",
               shape_str(h.shape()), " does not flatten to width ", c.spec.input_dim);
    if (h.ndim() != 2) h = tape.flatten(h);
  }
  for (const auto& fc : c.fcs) h = tape.relu(tape.add(tape.matmul(h, fc.W, false, true), fc.b));
  ForwardOut<Real> out;
  out.R = h;
  out.logits = tape.add(tape.matmul(h, c.Wc, false, true), c.bc);
  return out;
}

template <class Real>
Tensor<Real> style_mu(Tape<Real>& tape, const Classifier<Real>& c, Tensor<Real> R) {
  return tape.matmul(R, c.Ws, false, true);
}

template <class Real>
double reproject_style_map(Classifier<Real>& c) {
  const int64_t k = c.spec.k, d = c.spec.d(), ds = c.spec.style_dim();
  std::vector<double> wc(static_cast<size_t>(k * d));
  for (int64_t i = 0; i < k * d; ++i) wc[i] = double(c.Wc.at(i));
  std::vector<double> ws = orthogonal_style_map(wc, k, d, c.cov, ds);
  std::vector<Real> wsr(ws.size());
  for (size_t i = 0; i < ws.size(); ++i) wsr[i] = static_cast<Real>(ws[i]);
  c.Ws = Tensor<Real>::from({ds, d}, std::move(wsr), false);
  return style_orthogonality_residual(ws, ds, wc, k, d, c.cov);
}

namespace {

template <class Real>
std::vector<double> to_f64(const Tensor<Real>& t) {
  std::vector<double> v(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) v[i] = double(t.at(i));
  return v;
}

template <class Real>
void fill_from_f64(Tensor<Real>& t, const Shape& shape, const std::vector<double>& v,
                   const std::string& name) {
  CADV_CHECK(t.shape() == shape, "load: section '", name, "' shape ", shape_str(shape),
             " vs expected ", shape_str(t.shape()));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<Real>(v[i]);
}

}  // namespace

template <class Real>
void save_classifier(const std::string& path, const Classifier<Real>& c) {
  nlohmann::json meta;
  meta["arch"] = arch_name(c.spec.arch);
  meta["in_channels"] = c.spec.in_channels;
  meta["in_h"] = c.spec.in_h;
  meta["in_w"] = c.spec.in_w;
  meta["input_dim"] = c.spec.input_dim;
  meta["layers"] = c.spec.layers;
  meta["k"] = c.spec.k;
  meta["d_s"] = c.spec.d_s;
  meta["sigma"] = c.spec.sigma;
  meta["rho_ema"] = c.cov.rho_ema;
  meta["rho_shr"] = c.cov.rho_shr;

  Container box;
  box.put_text("meta", meta.dump(2));
  for (const auto& [name, t] : c.named_parameters()) box.put_tensor(name, t.shape(), to_f64(t));
  box.put_tensor("style.Ws", c.Ws.shape(), to_f64(c.Ws));
  box.put_tensor("cov.M", {c.cov.d, c.cov.d}, c.cov.M);
  box.put_tensor("cov.m", {c.cov.d}, c.cov.m);
  box.save(path);
}

template <class Real>
Classifier<Real> load_classifier(const std::string& path) {
  Container box = Container::load(path);
  nlohmann::json meta = nlohmann::json::parse(box.text("meta"));
  NetworkSpec spec;
  spec.arch = arch_from_name(meta.at("arch").get<std::string>());
  spec.in_channels = meta.at("in_channels").get<int64_t>();
  spec.in_h = meta.at("in_h").get<int64_t>();
  spec.in_w = meta.at("in_w").get<int64_t>();
  spec.input_dim = meta.at("input_dim").get<int64_t>();
  spec.layers = meta.at("layers").get<std::vector<int64_t>>();
  spec.k = meta.at("k").get<int64_t>();
  spec.d_s = meta.at("d_s").get<int64_t>();
  spec.sigma = meta.at("sigma").get<double>();

  Classifier<Real> c = build_classifier<Real>(spec, 0);
  c.cov.rho_ema = meta.value("rho_ema", 0.99);
  c.cov.rho_shr = meta.value("rho_shr", 0.1);
  for (auto& [name, t] : c.named_parameters()) {
    Shape shape;
    std::vector<double> v = box.tensor(name, &shape);
    fill_from_f64(t, shape, v, name);
  }
  {
    Shape shape;
    std::vector<double> v = box.tensor("style.Ws", &shape);
    fill_from_f64(c.Ws, shape, v, "style.Ws");
  }
  Shape ms, vs;
  c.cov.M = box.tensor("cov.M", &ms);
  c.cov.m = box.tensor("cov.m", &vs);
  const Shape want_m{c.cov.d, c.cov.d}, want_v{c.cov.d};
  CADV_CHECK(ms == want_m && vs == want_v, "load: covariance shape");
  return c;
}

template struct Classifier<float>;
template struct Classifier<double>;
template Classifier<float> build_classifier<float>(const NetworkSpec&, uint64_t);
template Classifier<double> build_classifier<double>(const NetworkSpec&, uint64_t);
template Classifier<float> clone_classifier<float>(const Classifier<float>&);
template Classifier<double> clone_classifier<double>(const Classifier<double>&);
template ForwardOut<float> forward<float>(Tape<float>&, const Classifier<float>&, Tensor<float>);
template ForwardOut<double> forward<double>(Tape<double>&, const Classifier<double>&,
                                            Tensor<double>);
template Tensor<float> style_mu<float>(Tape<float>&, const Classifier<float>&, Tensor<float>);
template Tensor<double> style_mu<double>(Tape<double>&, const Classifier<double>&,
                                         Tensor<double>);
template double reproject_style_map<float>(Classifier<float>&);
template double reproject_style_map<double>(Classifier<double>&);
template void save_classifier<float>(const std::string&, const Classifier<float>&);
template void save_classifier<double>(const std::string&, const Classifier<double>&);
template Classifier<float> load_classifier<float>(const std::string&);
template Classifier<double> load_classifier<double>(const std::string&);

}  // namespace cadv
