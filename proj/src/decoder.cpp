#include "avh/decoder.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "avh/io.hpp"
#include "avh/uv.hpp"

namespace avh {

static_assert(std::endian::native == std::endian::little, "weight files are written in host order");

// ---------------------------------------------------------------------------------------------
// Configuration and layout

void DecoderConfig::validate() const {
  if (fc_size < 1 || latent_size < 1 || hidden_size < 1) throw std::invalid_argument("decoder: sizes must be >= 1");
  if (!(displacement_max > 0.0)) throw std::invalid_argument("decoder: displacement_max must be > 0");
  const int k = upsamplings();
  if (k < 1) throw std::invalid_argument("decoder: out_resolution must be fc_size * 2^k with k >= 1");
  if (latent_size % (1 << k) != 0) throw std::invalid_argument("decoder: latent_size must be divisible by 2^k");
}

int DecoderConfig::upsamplings() const {
  if (fc_size < 1 || out_resolution <= fc_size || out_resolution % fc_size != 0) return 0;
  const int ratio = out_resolution / fc_size;
  if (!std::has_single_bit(static_cast<unsigned>(ratio))) return 0;
  return std::countr_zero(static_cast<unsigned>(ratio));
}

namespace {

const char* const kHeads[2] = {"color", "displacement"};

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string stage_prefix(int head, int stage) {
  return std::string(kHeads[head]) + ".stage" + std::to_string(stage) + ".";
}

}  // namespace

DecoderLayout::DecoderLayout(const DecoderConfig& cfg) : config(cfg) {
  cfg.validate();
  const auto add = [](std::vector<TensorSpec>& list, std::size_t& size, std::string name, std::vector<int> shape) {
    TensorSpec t{std::move(name), std::move(shape), size, 0};
    t.size = product(t.shape);
    size += t.size;
    list.push_back(std::move(t));
  };
  const int H = cfg.hidden_size;
  const int L = cfg.latent_size;
  add(params, param_size, "mlp.fc1.weight", {H, kEncodedPoseSize});
  add(params, param_size, "mlp.fc1.bias", {H});
  add(params, param_size, "mlp.fc2.weight", {L, H});
  add(params, param_size, "mlp.fc2.bias", {L});
  add(params, param_size, "cuboid", {L, cfg.fc_size, cfg.fc_size});
  const int k = cfg.upsamplings();
  for (int h = 0; h < 2; ++h) {
    int C = L;
    for (int s = 0; s <= k; ++s) {
      const std::string p = stage_prefix(h, s);
      add(params, param_size, p + "conv1.weight", {C, C, 3, 3});
      add(params, param_size, p + "bn1.gamma", {C});
      add(params, param_size, p + "bn1.beta", {C});
      add(params, param_size, p + "conv2.weight", {C, C, 3, 3});
      add(params, param_size, p + "bn2.gamma", {C});
      add(params, param_size, p + "bn2.beta", {C});
      add(buffers, buffer_size, p + "bn1.running_mean", {C});
      add(buffers, buffer_size, p + "bn1.running_var", {C});
      add(buffers, buffer_size, p + "bn2.running_mean", {C});
      add(buffers, buffer_size, p + "bn2.running_var", {C});
      if (s < k) {
        add(params, param_size, p + "up.weight", {C, C / 2, 2, 2});
        add(params, param_size, p + "up.bias", {C / 2});
        C /= 2;
      }
    }
    add(params, param_size, std::string(kHeads[h]) + ".out.weight", {3, C});
    add(params, param_size, std::string(kHeads[h]) + ".out.bias", {3});
  }
}

namespace {

const TensorSpec& find_spec(const std::vector<TensorSpec>& list, const std::string& name) {
  for (const auto& t : list) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("decoder: no tensor named " + name);
}

}  // namespace

const TensorSpec& DecoderLayout::param(const std::string& name) const { return find_spec(params, name); }
const TensorSpec& DecoderLayout::buffer(const std::string& name) const { return find_spec(buffers, name); }

ParamReport param_report(const DecoderConfig& cfg) {
  const DecoderLayout layout(cfg);
  ParamReport r;
  const auto block = [&](const std::string& name, auto pred) {
    std::size_t n = 0;
    for (const auto& t : layout.params) {
      if (pred(t.name)) n += t.size;
    }
    r.blocks.push_back({name, n});
  };
  const auto has = [](const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; };
  block("mlp", [&](const std::string& n) { return n.rfind("mlp.", 0) == 0; });
  block("cuboid", [&](const std::string& n) { return n == "cuboid"; });
  for (const char* head : kHeads) {
    const std::string h = std::string(head) + ".";
    const auto in_head = [&](const std::string& n) { return n.rfind(h, 0) == 0; };
    block(h + "conv3x3", [&](const std::string& n) { return in_head(n) && has(n, ".conv"); });
    block(h + "batchnorm", [&](const std::string& n) { return in_head(n) && has(n, ".bn"); });
    block(h + "upsample", [&](const std::string& n) { return in_head(n) && has(n, ".up."); });
    block(h + "output", [&](const std::string& n) { return in_head(n) && has(n, ".out."); });
  }
  for (const auto& b : r.blocks) r.total += b.count;
  return r;
}

std::size_t param_count(const DecoderConfig& cfg) { return DecoderLayout(cfg).param_size; }

std::string ParamReport::text() const {
  std::ostringstream os;
  for (const auto& b : blocks) os << b.name << ": " << b.count << "\n";
  os << "total: " << total << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------------------------
// Initialization

namespace {

// Box-Muller on raw engine output, so the stream does not depend on the standard library.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(seed) {}
  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * 3.14159265358979323846 * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

DecoderWeights init_weights(const DecoderConfig& cfg, std::uint64_t seed) {
  const DecoderLayout layout(cfg);
  DecoderWeights w{cfg, std::vector<float>(layout.param_size, 0.0f), std::vector<float>(layout.buffer_size, 0.0f)};
  NormalStream normal(seed);
  for (const auto& t : layout.params) {
    float* p = w.params.data() + t.offset;
    if (t.name == "cuboid") {
      for (std::size_t i = 0; i < t.size; ++i) p[i] = static_cast<float>(normal.next());
    } else if (ends_with(t.name, ".gamma")) {
      std::fill(p, p + t.size, 1.0f);
    } else if (ends_with(t.name, ".out.weight") || ends_with(t.name, "bias") || ends_with(t.name, ".beta")) {
      // zero
    } else {
      // fan-in: input channels times kernel area (transposed conv: each output sees C_in taps).
      std::size_t fan_in = 0;
      if (t.name.rfind("mlp.", 0) == 0) fan_in = t.shape[1];
      else if (ends_with(t.name, "up.weight")) fan_in = t.shape[0];
      else fan_in = static_cast<std::size_t>(t.shape[1]) * 9;
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < t.size; ++i) p[i] = static_cast<float>(sd * normal.next());
    }
  }
  for (const auto& t : layout.buffers) {
    if (ends_with(t.name, "running_var")) std::fill(w.buffers.begin() + t.offset, w.buffers.begin() + t.offset + t.size, 1.0f);
  }
  return w;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || batch < 1 || epochs < 1 || !(lr_decay > 0.0) || max_steps < 0) {
    throw std::invalid_argument("train: lr, batch, epochs and lr_decay must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw std::invalid_argument("train: invalid Adam parameters");
  }
}

// ---------------------------------------------------------------------------------------------
// Network

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kLossEps = 1e-8;

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct StageIdx {
  std::size_t conv1, g1, b1, conv2, g2, b2, upw = 0, upb = 0;
  std::size_t rm1, rv1, rm2, rv2;
  int channels, side;
  bool has_up;
};

struct HeadIdx {
  std::vector<StageIdx> stages;
  std::size_t outw, outb;
  int out_channels;
};

struct NetIdx {
  std::size_t fc1w, fc1b, fc2w, fc2b, cuboid;
  HeadIdx heads[2];
  int hidden, latent, fc, out;
};

NetIdx resolve(const DecoderLayout& L) {
  const auto& c = L.config;
  NetIdx n{};
  n.hidden = c.hidden_size;
  n.latent = c.latent_size;
  n.fc = c.fc_size;
  n.out = c.out_resolution;
  n.fc1w = L.param("mlp.fc1.weight").offset;
  n.fc1b = L.param("mlp.fc1.bias").offset;
  n.fc2w = L.param("mlp.fc2.weight").offset;
  n.fc2b = L.param("mlp.fc2.bias").offset;
  n.cuboid = L.param("cuboid").offset;
  const int k = c.upsamplings();
  for (int h = 0; h < 2; ++h) {
    int C = c.latent_size;
    int side = c.fc_size;
    for (int s = 0; s <= k; ++s) {
      const std::string p = stage_prefix(h, s);
      StageIdx st{};
      st.conv1 = L.param(p + "conv1.weight").offset;
      st.g1 = L.param(p + "bn1.gamma").offset;
      st.b1 = L.param(p + "bn1.beta").offset;
      st.conv2 = L.param(p + "conv2.weight").offset;
      st.g2 = L.param(p + "bn2.gamma").offset;
      st.b2 = L.param(p + "bn2.beta").offset;
      st.rm1 = L.buffer(p + "bn1.running_mean").offset;
      st.rv1 = L.buffer(p + "bn1.running_var").offset;
      st.rm2 = L.buffer(p + "bn2.running_mean").offset;
      st.rv2 = L.buffer(p + "bn2.running_var").offset;
      st.channels = C;
      st.side = side;
      st.has_up = s < k;
      if (st.has_up) {
        st.upw = L.param(p + "up.weight").offset;
        st.upb = L.param(p + "up.bias").offset;
        C /= 2;
        side *= 2;
      }
      n.heads[h].stages.push_back(st);
    }
    n.heads[h].outw = L.param(std::string(kHeads[h]) + ".out.weight").offset;
    n.heads[h].outb = L.param(std::string(kHeads[h]) + ".out.bias").offset;
    n.heads[h].out_channels = C;
  }
  return n;
}

// 3x3, zero padding 1. Row ci*9 + ky*3 + kx of `cols` holds x(ci, y + ky - 1, x + kx - 1).
template <typename S>
void im2col(const Mat<S>& x, int side, Mat<S>& cols) {
  const int C = static_cast<int>(x.rows());
  cols.setZero(static_cast<Eigen::Index>(C) * 9, static_cast<Eigen::Index>(side) * side);
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = c * 9 + ky * 3 + kx;
        for (int y = 0; y < side; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= side) continue;
          for (int xx = 0; xx < side; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= side) continue;
            cols(row, y * side + xx) = x(c, sy * side + sx);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const Mat<S>& dcols, int C, int side, Mat<S>& dx) {
  dx.setZero(C, static_cast<Eigen::Index>(side) * side);
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = c * 9 + ky * 3 + kx;
        for (int y = 0; y < side; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= side) continue;
          for (int xx = 0; xx < side; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= side) continue;
            dx(c, sy * side + sx) += dcols(row, y * side + xx);
          }
        }
      }
    }
  }
}

template <typename S>
Eigen::Map<const RowMat<S>> cmap(const std::vector<S>& v, std::size_t off, Eigen::Index r, Eigen::Index c) {
  return Eigen::Map<const RowMat<S>>(v.data() + off, r, c);
}
template <typename S>
Eigen::Map<RowMat<S>> gmap(std::vector<S>& v, std::size_t off, Eigen::Index r, Eigen::Index c) {
  return Eigen::Map<RowMat<S>>(v.data() + off, r, c);
}

// Transposed conv 2x2 stride 2: W[ci][co][dy][dx]; out(co, (2y+dy, 2x+dx)) = sum_ci W x(ci, (y, x)) + b(co).
template <typename S>
Mat<S> tap_matrix(const std::vector<S>& p, std::size_t off, int Ci, int Co, int tap) {
  Mat<S> w(Co, Ci);
  for (int ci = 0; ci < Ci; ++ci) {
    for (int co = 0; co < Co; ++co) w(co, ci) = p[off + (static_cast<std::size_t>(ci) * Co + co) * 4 + tap];
  }
  return w;
}

template <typename S>
Mat<S> upsample(const std::vector<S>& p, const StageIdx& st, const Mat<S>& x) {
  const int Ci = st.channels;
  const int Co = Ci / 2;
  const int s = st.side;
  Mat<S> out(Co, static_cast<Eigen::Index>(4) * s * s);
  for (int tap = 0; tap < 4; ++tap) {
    const int dy = tap / 2;
    const int dx = tap % 2;
    const Mat<S> y = tap_matrix(p, st.upw, Ci, Co, tap) * x;
    for (int yy = 0; yy < s; ++yy) {
      for (int xx = 0; xx < s; ++xx) {
        const int q = (2 * yy + dy) * (2 * s) + (2 * xx + dx);
        for (int co = 0; co < Co; ++co) out(co, q) = y(co, yy * s + xx) + p[st.upb + co];
      }
    }
  }
  return out;
}

template <typename S>
struct BnCache {
  std::vector<Mat<S>> xhat;
  Vec<S> invstd;
};

// Normalizes `a` in place across items and pixels (training) or with running statistics.
enum class BnUpdate { none, momentum, exact };

template <typename S>
void batch_norm(std::vector<Mat<S>>& a, const std::vector<S>& p, std::size_t g, std::size_t b, std::vector<S>& buf,
                std::size_t rm, std::size_t rv, bool training, BnUpdate update, BnCache<S>* cache) {
  const Eigen::Index C = a[0].rows();
  const Eigen::Index P = a[0].cols();
  const double M = static_cast<double>(a.size()) * static_cast<double>(P);
  if (cache) {
    cache->xhat.resize(a.size());
    cache->invstd.resize(C);
  }
  for (Eigen::Index c = 0; c < C; ++c) {
    double mean, var;
    if (training) {
      double sum = 0.0;
      for (const auto& m : a) sum += m.row(c).template cast<double>().sum();
      mean = sum / M;
      double sq = 0.0;
      for (const auto& m : a) sq += (m.row(c).template cast<double>().array() - mean).square().sum();
      var = sq / M;
      if (update == BnUpdate::momentum) {
        const double unbiased = M > 1.0 ? sq / (M - 1.0) : var;
        buf[rm + c] = static_cast<S>((1.0 - kBnMomentum) * buf[rm + c] + kBnMomentum * mean);
        buf[rv + c] = static_cast<S>((1.0 - kBnMomentum) * buf[rv + c] + kBnMomentum * unbiased);
      } else if (update == BnUpdate::exact) {
        buf[rm + c] = static_cast<S>(mean);
        buf[rv + c] = static_cast<S>(var);
      }
    } else {
      mean = buf[rm + c];
      var = buf[rv + c];
    }
    const S inv = static_cast<S>(1.0 / std::sqrt(var + kBnEps));
    const S mu = static_cast<S>(mean);
    if (cache) cache->invstd(c) = inv;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (cache && c == 0) cache->xhat[i].resize(C, P);
      auto row = a[i].row(c);
      for (Eigen::Index q = 0; q < P; ++q) {
        const S xh = (row(q) - mu) * inv;
        if (cache) cache->xhat[i](c, q) = xh;
        row(q) = p[g + c] * xh + p[b + c];
      }
    }
  }
}

// dy -> dx through training-mode batch norm; accumulates dgamma, dbeta.
template <typename S>
void batch_norm_backward(std::vector<Mat<S>>& d, const BnCache<S>& cache, const std::vector<S>& p, std::size_t g,
                         std::vector<S>& grad, std::size_t gb) {
  const Eigen::Index C = d[0].rows();
  const Eigen::Index P = d[0].cols();
  const double M = static_cast<double>(d.size()) * static_cast<double>(P);
  for (Eigen::Index c = 0; c < C; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (Eigen::Index q = 0; q < P; ++q) {
        sum_dy += d[i](c, q);
        sum_dy_xhat += static_cast<double>(d[i](c, q)) * cache.xhat[i](c, q);
      }
    }
    grad[g + c] += static_cast<S>(sum_dy_xhat);
    grad[gb + c] += static_cast<S>(sum_dy);
    const double gamma = p[g + c];
    const double inv = cache.invstd(c);
    // dxhat = dy * gamma; dx = inv / M * (M dxhat - sum dxhat - xhat sum(dxhat xhat))
    const double s1 = gamma * sum_dy;
    const double s2 = gamma * sum_dy_xhat;
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (Eigen::Index q = 0; q < P; ++q) {
        const double dxh = gamma * d[i](c, q);
        d[i](c, q) = static_cast<S>(inv / M * (M * dxh - s1 - cache.xhat[i](c, q) * s2));
      }
    }
  }
}

template <typename S>
void relu(std::vector<Mat<S>>& a, std::vector<std::uint8_t>* pattern) {
  for (auto& m : a) {
    if (pattern) {
      for (Eigen::Index i = 0; i < m.size(); ++i) pattern->push_back(m.data()[i] > S(0) ? 1 : 0);
    }
    m = m.cwiseMax(S(0));
  }
}

template <typename S>
struct StageCache {
  std::vector<Mat<S>> cols1, cols2, r1, r2;  // im2col inputs and post-ReLU outputs
  BnCache<S> bn1, bn2;
};

template <typename S>
struct HeadCache {
  std::vector<StageCache<S>> stages;
  std::vector<Mat<S>> final_in;  // input of the 1x1 output conv
  std::vector<Mat<S>> t;         // tanh of the output conv
};

template <typename S>
struct NetCache {
  std::vector<Vec<S>> enc, hpre, h, z;
  HeadCache<S> heads[2];
};

template <typename S>
Vec<S> encoded(const Theta& theta) {
  const auto e = encode_pose(theta);
  Vec<S> v(kEncodedPoseSize);
  for (int i = 0; i < kEncodedPoseSize; ++i) v(i) = static_cast<S>(e[i]);
  return v;
}

// calibrate: training-mode pass that stores the exact (biased) batch statistics as running statistics.
enum class BnMode { inference, training, training_update, calibrate };

// Runs the batch; returns tanh outputs per head and item. Fills `cache` when given.
template <typename S>
void run(const NetIdx& n, const std::vector<S>& p, std::vector<S>& buf, std::span<const Theta> thetas, BnMode mode,
         NetCache<S>& cache, std::vector<std::uint8_t>* pattern) {
  const std::size_t B = thetas.size();
  const bool training = mode != BnMode::inference;
  const BnUpdate update = mode == BnMode::training_update ? BnUpdate::momentum
                          : mode == BnMode::calibrate     ? BnUpdate::exact
                                                          : BnUpdate::none;
  const auto W1 = cmap(p, n.fc1w, n.hidden, kEncodedPoseSize);
  const auto W2 = cmap(p, n.fc2w, n.latent, n.hidden);
  const Eigen::Map<const Vec<S>> b1(p.data() + n.fc1b, n.hidden);
  const Eigen::Map<const Vec<S>> b2(p.data() + n.fc2b, n.latent);
  const auto cub = cmap(p, n.cuboid, n.latent, static_cast<Eigen::Index>(n.fc) * n.fc);

  cache.enc.resize(B);
  cache.hpre.resize(B);
  cache.h.resize(B);
  cache.z.resize(B);
  std::vector<Mat<S>> x0(B);
  for (std::size_t i = 0; i < B; ++i) {
    cache.enc[i] = encoded<S>(thetas[i]);
    cache.hpre[i] = W1 * cache.enc[i] + b1;
    if (pattern) {
      for (Eigen::Index j = 0; j < cache.hpre[i].size(); ++j) pattern->push_back(cache.hpre[i](j) > S(0) ? 1 : 0);
    }
    cache.h[i] = cache.hpre[i].cwiseMax(S(0));
    cache.z[i] = W2 * cache.h[i] + b2;
    x0[i] = cache.z[i].asDiagonal() * cub;
  }

  for (int h = 0; h < 2; ++h) {
    const HeadIdx& hd = n.heads[h];
    HeadCache<S>& hc = cache.heads[h];
    hc.stages.assign(hd.stages.size(), StageCache<S>{});
    std::vector<Mat<S>> x = x0;
    for (std::size_t s = 0; s < hd.stages.size(); ++s) {
      const StageIdx& st = hd.stages[s];
      StageCache<S>& sc = hc.stages[s];
      const int C = st.channels;
      const auto K1 = cmap(p, st.conv1, C, static_cast<Eigen::Index>(C) * 9);
      const auto K2 = cmap(p, st.conv2, C, static_cast<Eigen::Index>(C) * 9);
      sc.cols1.resize(B);
      sc.cols2.resize(B);
      std::vector<Mat<S>> a(B);
      for (std::size_t i = 0; i < B; ++i) {
        im2col(x[i], st.side, sc.cols1[i]);
        a[i] = K1 * sc.cols1[i];
      }
      batch_norm(a, p, st.g1, st.b1, buf, st.rm1, st.rv1, training, update, &sc.bn1);
      relu(a, pattern);
      sc.r1 = a;
      for (std::size_t i = 0; i < B; ++i) {
        im2col(sc.r1[i], st.side, sc.cols2[i]);
        a[i] = K2 * sc.cols2[i];
      }
      batch_norm(a, p, st.g2, st.b2, buf, st.rm2, st.rv2, training, update, &sc.bn2);
      relu(a, pattern);
      sc.r2 = a;
      if (st.has_up) {
        for (std::size_t i = 0; i < B; ++i) x[i] = upsample(p, st, sc.r2[i]);
      } else {
        x = sc.r2;
      }
    }
    const auto Wo = cmap(p, hd.outw, 3, hd.out_channels);
    const Eigen::Map<const Vec<S>> bo(p.data() + hd.outb, 3);
    hc.final_in = x;
    hc.t.resize(B);
    for (std::size_t i = 0; i < B; ++i) {
      Mat<S> y = Wo * x[i];
      y.colwise() += bo;
      hc.t[i] = y.array().tanh().matrix();
    }
  }
}

template <typename S>
DecoderOutputT<S> to_output(const NetCache<S>& c, std::size_t i, double dmax) {
  DecoderOutputT<S> o;
  o.color = ((c.heads[0].t[i].array() + S(1)) * S(0.5)).matrix();
  o.displacement = c.heads[1].t[i] * static_cast<S>(dmax);
  return o;
}

template <typename S>
void check_weights(const DecoderWeightsT<S>& w, const DecoderLayout& L) {
  if (w.params.size() != L.param_size || w.buffers.size() != L.buffer_size) {
    throw std::invalid_argument("decoder: weight vector does not match the configuration");
  }
}

template <typename S>
void check_targets(const NetIdx& n, std::span<const DecoderTargetT<S>* const> targets) {
  const Eigen::Index P = static_cast<Eigen::Index>(n.out) * n.out;
  for (const auto* t : targets) {
    if (t->color.rows() != 3 || t->color.cols() != P || t->displacement.rows() != 3 || t->displacement.cols() != P ||
        t->kappa.size() != P || t->weight.size() != P) {
      throw std::invalid_argument("decoder: target shape does not match out_resolution");
    }
  }
}

}  // namespace

template <typename S>
DecoderOutputT<S> forward(const DecoderWeightsT<S>& w, const Theta& theta) {
  const DecoderLayout L(w.config);
  check_weights(w, L);
  const NetIdx n = resolve(L);
  std::vector<S> buf = w.buffers;
  NetCache<S> cache;
  run<S>(n, w.params, buf, std::span<const Theta>(&theta, 1), BnMode::inference, cache, nullptr);
  return to_output(cache, 0, w.config.displacement_max);
}

template <typename S>
std::vector<DecoderOutputT<S>> forward_train(const DecoderWeightsT<S>& w, std::span<const Theta> thetas) {
  const DecoderLayout L(w.config);
  check_weights(w, L);
  const NetIdx n = resolve(L);
  std::vector<S> buf = w.buffers;
  NetCache<S> cache;
  run<S>(n, w.params, buf, thetas, BnMode::training, cache, nullptr);
  std::vector<DecoderOutputT<S>> out;
  for (std::size_t i = 0; i < thetas.size(); ++i) out.push_back(to_output(cache, i, w.config.displacement_max));
  return out;
}

template <typename S>
S masked_loss(const DecoderOutputT<S>& out, const DecoderTargetT<S>& t, double dmax) {
  double num_c = 0.0, num_d = 0.0;
  const double sk = t.kappa.template cast<double>().sum();
  const double sw = t.weight.template cast<double>().sum();
  for (Eigen::Index q = 0; q < t.kappa.size(); ++q) {
    for (int c = 0; c < 3; ++c) {
      const double ec = static_cast<double>(out.color(c, q)) - t.color(c, q);
      const double ed = (static_cast<double>(out.displacement(c, q)) - t.displacement(c, q)) / dmax;
      num_c += t.kappa(q) * ec * ec;
      num_d += t.weight(q) * ed * ed;
    }
  }
  return static_cast<S>(num_c / (3.0 * sk + kLossEps) + num_d / (3.0 * sw + kLossEps));
}

template <typename S>
S loss_and_gradient(DecoderWeightsT<S>& w, std::span<const Theta> thetas,
                    std::span<const DecoderTargetT<S>* const> targets, std::vector<S>* grad,
                    const GradientOptions& options) {
  if (thetas.empty() || thetas.size() != targets.size()) {
    throw std::invalid_argument("loss_and_gradient: need one target per pose and at least one item");
  }
  const DecoderLayout L(w.config);
  check_weights(w, L);
  const NetIdx n = resolve(L);
  check_targets(n, targets);
  const std::size_t B = thetas.size();
  const double dmax = w.config.displacement_max;
  if (options.relu_pattern) options.relu_pattern->clear();
  NetCache<S> cache;
  run<S>(n, w.params, w.buffers, thetas, options.update_running_stats ? BnMode::training_update : BnMode::training,
         cache, options.relu_pattern);

  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) loss += masked_loss(to_output(cache, i, dmax), *targets[i], dmax);
  loss /= static_cast<double>(B);
  if (!grad) return static_cast<S>(loss);

  std::vector<S>& g = *grad;
  g.assign(L.param_size, S(0));
  const std::vector<S>& p = w.params;
  const Eigen::Index P0 = static_cast<Eigen::Index>(n.fc) * n.fc;
  std::vector<Mat<S>> dx0(B, Mat<S>::Zero(n.latent, P0));

  for (int h = 0; h < 2; ++h) {
    const HeadIdx& hd = n.heads[h];
    const HeadCache<S>& hc = cache.heads[h];
    // d loss / d y at the output conv.
    std::vector<Mat<S>> d(B);
    for (std::size_t i = 0; i < B; ++i) {
      const DecoderTargetT<S>& t = *targets[i];
      const Mat<S>& th = hc.t[i];
      Mat<S> dy(3, th.cols());
      if (h == 0) {
        const double denom = (3.0 * t.kappa.template cast<double>().sum() + kLossEps) * static_cast<double>(B);
        for (Eigen::Index q = 0; q < th.cols(); ++q) {
          for (int c = 0; c < 3; ++c) {
            const double cp = 0.5 * (static_cast<double>(th(c, q)) + 1.0);
            const double dl = 2.0 * t.kappa(q) * (cp - t.color(c, q)) / denom;
            dy(c, q) = static_cast<S>(dl * 0.5 * (1.0 - static_cast<double>(th(c, q)) * th(c, q)));
          }
        }
      } else {
        const double denom = (3.0 * t.weight.template cast<double>().sum() + kLossEps) * static_cast<double>(B);
        for (Eigen::Index q = 0; q < th.cols(); ++q) {
          for (int c = 0; c < 3; ++c) {
            const double dl = 2.0 * t.weight(q) * (static_cast<double>(th(c, q)) - t.displacement(c, q) / dmax) / denom;
            dy(c, q) = static_cast<S>(dl * (1.0 - static_cast<double>(th(c, q)) * th(c, q)));
          }
        }
      }
      d[i] = std::move(dy);
    }
    // Output 1x1 conv.
    {
      auto gW = gmap(g, hd.outw, 3, hd.out_channels);
      const auto Wo = cmap(p, hd.outw, 3, hd.out_channels);
      for (std::size_t i = 0; i < B; ++i) {
        gW.noalias() += d[i] * hc.final_in[i].transpose();
        for (int c = 0; c < 3; ++c) g[hd.outb + c] += d[i].row(c).sum();
        d[i] = Wo.transpose() * d[i];
      }
    }
    for (int s = static_cast<int>(hd.stages.size()) - 1; s >= 0; --s) {
      const StageIdx& st = hd.stages[s];
      const StageCache<S>& sc = hc.stages[s];
      const int C = st.channels;
      if (st.has_up) {
        // d currently refers to the upsampled output (C/2 x 4P); bring it back to the stage output.
        const int Co = C / 2;
        const int sd = st.side;
        for (std::size_t i = 0; i < B; ++i) {
          Mat<S> dr(C, static_cast<Eigen::Index>(sd) * sd);
          dr.setZero();
          for (int tap = 0; tap < 4; ++tap) {
            const int dy = tap / 2;
            const int dxo = tap % 2;
            Mat<S> dyk(Co, static_cast<Eigen::Index>(sd) * sd);
            for (int yy = 0; yy < sd; ++yy) {
              for (int xx = 0; xx < sd; ++xx) {
                dyk.col(yy * sd + xx) = d[i].col((2 * yy + dy) * (2 * sd) + (2 * xx + dxo));
              }
            }
            const Mat<S> gw = dyk * sc.r2[i].transpose();  // Co x C
            for (int ci = 0; ci < C; ++ci) {
              for (int co = 0; co < Co; ++co) g[st.upw + (static_cast<std::size_t>(ci) * Co + co) * 4 + tap] += gw(co, ci);
            }
            dr.noalias() += tap_matrix(p, st.upw, C, Co, tap).transpose() * dyk;
          }
          for (int co = 0; co < Co; ++co) g[st.upb + co] += d[i].row(co).sum();
          d[i] = std::move(dr);
        }
      }
      // ReLU 2, BN 2, conv 2.
      for (std::size_t i = 0; i < B; ++i) d[i] = d[i].cwiseProduct((sc.r2[i].array() > S(0)).matrix().template cast<S>());
      batch_norm_backward(d, sc.bn2, p, st.g2, g, st.b2);
      {
        auto gK = gmap(g, st.conv2, C, static_cast<Eigen::Index>(C) * 9);
        const auto K = cmap(p, st.conv2, C, static_cast<Eigen::Index>(C) * 9);
        for (std::size_t i = 0; i < B; ++i) {
          gK.noalias() += d[i] * sc.cols2[i].transpose();
          const Mat<S> dcols = K.transpose() * d[i];
          col2im(dcols, C, st.side, d[i]);
        }
      }
      for (std::size_t i = 0; i < B; ++i) d[i] = d[i].cwiseProduct((sc.r1[i].array() > S(0)).matrix().template cast<S>());
      batch_norm_backward(d, sc.bn1, p, st.g1, g, st.b1);
      {
        auto gK = gmap(g, st.conv1, C, static_cast<Eigen::Index>(C) * 9);
        const auto K = cmap(p, st.conv1, C, static_cast<Eigen::Index>(C) * 9);
        for (std::size_t i = 0; i < B; ++i) {
          gK.noalias() += d[i] * sc.cols1[i].transpose();
          const Mat<S> dcols = K.transpose() * d[i];
          col2im(dcols, C, st.side, d[i]);
        }
      }
    }
    for (std::size_t i = 0; i < B; ++i) dx0[i] += d[i];
  }

  // Cuboid gating and MLP.
  const auto cub = cmap(p, n.cuboid, n.latent, P0);
  auto gcub = gmap(g, n.cuboid, n.latent, P0);
  const auto W2 = cmap(p, n.fc2w, n.latent, n.hidden);
  auto gW1 = gmap(g, n.fc1w, n.hidden, kEncodedPoseSize);
  auto gW2 = gmap(g, n.fc2w, n.latent, n.hidden);
  for (std::size_t i = 0; i < B; ++i) {
    gcub.noalias() += cache.z[i].asDiagonal() * dx0[i];
    const Vec<S> dz = cub.cwiseProduct(dx0[i]).rowwise().sum();
    gW2.noalias() += dz * cache.h[i].transpose();
    for (int j = 0; j < n.latent; ++j) g[n.fc2b + j] += dz(j);
    Vec<S> dh = W2.transpose() * dz;
    for (int j = 0; j < n.hidden; ++j) dh(j) = cache.hpre[i](j) > S(0) ? dh(j) : S(0);
    gW1.noalias() += dh * cache.enc[i].transpose();
    for (int j = 0; j < n.hidden; ++j) g[n.fc1b + j] += dh(j);
  }

  for (const auto& t : L.params) {
    for (std::size_t k = 0; k < t.size; ++k) {
      if (!std::isfinite(static_cast<double>(g[t.offset + k]))) {
        throw std::runtime_error("loss_and_gradient: non-finite gradient in " + t.name);
      }
    }
  }
  return static_cast<S>(loss);
}

template <typename S>
void recalibrate_batch_norm(DecoderWeightsT<S>& w, std::span<const Theta> thetas) {
  if (thetas.empty()) return;
  const DecoderLayout L(w.config);
  check_weights(w, L);
  const NetIdx n = resolve(L);
  NetCache<S> cache;
  run<S>(n, w.params, w.buffers, thetas, BnMode::calibrate, cache, nullptr);
}

// ---------------------------------------------------------------------------------------------

template DecoderOutputT<float> forward(const DecoderWeightsT<float>&, const Theta&);
template DecoderOutputT<double> forward(const DecoderWeightsT<double>&, const Theta&);
template std::vector<DecoderOutputT<float>> forward_train(const DecoderWeightsT<float>&, std::span<const Theta>);
template std::vector<DecoderOutputT<double>> forward_train(const DecoderWeightsT<double>&, std::span<const Theta>);
template float masked_loss(const DecoderOutputT<float>&, const DecoderTargetT<float>&, double);
template double masked_loss(const DecoderOutputT<double>&, const DecoderTargetT<double>&, double);
template float loss_and_gradient(DecoderWeightsT<float>&, std::span<const Theta>,
                                 std::span<const DecoderTargetT<float>* const>, std::vector<float>*,
                                 const GradientOptions&);
template double loss_and_gradient(DecoderWeightsT<double>&, std::span<const Theta>,
                                  std::span<const DecoderTargetT<double>* const>, std::vector<double>*,
                                  const GradientOptions&);
template void recalibrate_batch_norm(DecoderWeightsT<float>&, std::span<const Theta>);
template void recalibrate_batch_norm(DecoderWeightsT<double>&, std::span<const Theta>);

// ---------------------------------------------------------------------------------------------
// Data, training, files

DecoderTarget make_target(const BakeBundle& b, int resolution) {
  const auto fit = [&](const FloatGrid& g) {
    return g.width == resolution && g.height == resolution ? g : resample_grid(g, resolution, resolution);
  };
  FloatGrid wmask(b.width, b.height, 1);
  for (std::size_t t = 0; t < b.texel_count(); ++t) {
    wmask.data[t] = b.matched_mask[t] ? b.visibility_registered.data[t] : 0.0f;
  }
  const FloatGrid color = fit(b.texture);
  const FloatGrid disp = fit(b.displacement);
  const FloatGrid kappa = fit(b.confidence);
  const FloatGrid weight = fit(wmask);
  const Eigen::Index P = static_cast<Eigen::Index>(resolution) * resolution;
  DecoderTarget t{Mat<float>(3, P), Mat<float>(3, P), Vec<float>(P), Vec<float>(P)};
  for (Eigen::Index q = 0; q < P; ++q) {
    for (int c = 0; c < 3; ++c) {
      t.color(c, q) = color.data[q * 3 + c];
      t.displacement(c, q) = disp.data[q * 3 + c];
    }
    t.kappa(q) = std::max(0.0f, kappa.data[q]);
    t.weight(q) = std::max(0.0f, weight.data[q]);
  }
  return t;
}

FloatGrid output_grid(const Mat<float>& m, int side) {
  if (m.cols() != static_cast<Eigen::Index>(side) * side) throw std::invalid_argument("output_grid: size mismatch");
  FloatGrid g(side, side, static_cast<int>(m.rows()));
  for (Eigen::Index q = 0; q < m.cols(); ++q) {
    for (Eigen::Index c = 0; c < m.rows(); ++c) g.data[q * m.rows() + c] = m(c, q);
  }
  return g;
}

double evaluate(const DecoderWeights& w, const std::vector<TrainSample>& samples) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& s : samples) sum += masked_loss(forward(w, s.theta), s.target, w.config.displacement_max);
  return sum / static_cast<double>(samples.size());
}

TrainResult train(const std::vector<TrainSample>& training, const std::vector<TrainSample>& validation,
                  const DecoderConfig& config, const TrainConfig& tc, std::optional<DecoderWeights> initial) {
  tc.validate();
  config.validate();
  if (training.empty()) throw std::invalid_argument("train: no training frames");
  TrainResult r;
  r.weights = initial ? std::move(*initial) : init_weights(config, tc.seed);
  if (r.weights.params.size() != param_count(config)) throw std::invalid_argument("train: initial weights do not match");

  Adam<float> adam(r.weights.params.size(), tc.beta1, tc.beta2, tc.adam_eps);
  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(training.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> grad;
  double lr = tc.lr;
  double first = -1.0;
  long steps = 0;
  bool stop = false;
  for (int epoch = 0; epoch < tc.epochs && !stop; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double epoch_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch));
      std::vector<Theta> thetas;
      std::vector<const DecoderTarget*> targets;
      for (std::size_t k = start; k < end; ++k) {
        thetas.push_back(training[order[k]].theta);
        targets.push_back(&training[order[k]].target);
      }
      const double loss = loss_and_gradient<float>(r.weights, thetas, targets, &grad, {.update_running_stats = true});
      if (first < 0.0) first = loss;
      if (!std::isfinite(loss) || (first > 0.0 && loss > 10.0 * first)) {
        throw std::runtime_error("train: diverged (batch loss " + std::to_string(loss) + ", initial " +
                                 std::to_string(first) + ")");
      }
      adam.step(r.weights.params, grad, lr);
      r.step_losses.push_back(loss);
      epoch_sum += loss;
      ++batches;
      ++steps;
      if (tc.max_steps > 0 && steps >= tc.max_steps) {
        stop = true;
        break;
      }
    }
    EpochLog log{epoch, steps, lr, epoch_sum / batches, evaluate(r.weights, validation)};
    r.epochs.push_back(log);
    spdlog::debug("epoch {}: lr {:.6g} train {:.6g} validation {:.6g}", epoch, lr, log.train_loss,
                  log.validation_loss);
    lr *= tc.lr_decay;
  }
  if (tc.recalibrate_bn) {
    std::vector<Theta> all;
    for (const auto& s : training) all.push_back(s.theta);
    recalibrate_batch_norm(r.weights, std::span<const Theta>(all));
  }
  return r;
}

namespace {

constexpr char kMagic[4] = {'A', 'V', 'H', 'W'};
constexpr std::uint32_t kWeightVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated weight file " + path.string());
  return v;
}

void put_tensor(std::ostream& os, const TensorSpec& t, const float* data) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
  os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(t.size * sizeof(float)));
}

}  // namespace

void save_weights(const DecoderWeights& w, const std::filesystem::path& path) {
  const DecoderLayout L(w.config);
  check_weights(w, L);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kWeightVersion);
  put<std::int32_t>(os, w.config.fc_size);
  put<std::int32_t>(os, w.config.latent_size);
  put<std::int32_t>(os, w.config.hidden_size);
  put<std::int32_t>(os, w.config.out_resolution);
  put<double>(os, w.config.displacement_max);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(L.params.size() + L.buffers.size()));
  for (const auto& t : L.params) put_tensor(os, t, w.params.data() + t.offset);
  for (const auto& t : L.buffers) put_tensor(os, t, w.buffers.data() + t.offset);
  if (!os) throw IoError("write failed for " + path.string());
}

DecoderWeights load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path.string() + ": not an AVHW file");
  if (get<std::uint32_t>(is, path) != kWeightVersion) throw IoError(path.string() + ": unsupported version");
  DecoderWeights w;
  w.config.fc_size = get<std::int32_t>(is, path);
  w.config.latent_size = get<std::int32_t>(is, path);
  w.config.hidden_size = get<std::int32_t>(is, path);
  w.config.out_resolution = get<std::int32_t>(is, path);
  w.config.displacement_max = get<double>(is, path);
  const DecoderLayout L(w.config);
  w.params.assign(L.param_size, 0.0f);
  w.buffers.assign(L.buffer_size, 0.0f);
  const std::uint32_t count = get<std::uint32_t>(is, path);
  if (count != L.params.size() + L.buffers.size()) throw IoError(path.string() + ": tensor count mismatch");
  for (std::uint32_t k = 0; k < count; ++k) {
    const bool is_param = k < L.params.size();
    const TensorSpec& t = is_param ? L.params[k] : L.buffers[k - L.params.size()];
    const std::uint32_t len = get<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len) || name != t.name) throw IoError(path.string() + ": unexpected tensor " + name);
    const std::uint32_t ndim = get<std::uint32_t>(is, path);
    if (ndim != t.shape.size()) throw IoError(path.string() + ": bad rank for " + name);
    for (int d : t.shape) {
      if (get<std::uint32_t>(is, path) != static_cast<std::uint32_t>(d)) throw IoError(path.string() + ": bad shape for " + name);
    }
    float* dst = (is_param ? w.params.data() : w.buffers.data()) + t.offset;
    if (!is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(t.size * sizeof(float)))) {
      throw IoError("truncated weight file " + path.string());
    }
  }
  for (float v : w.params) {
    if (!std::isfinite(v)) throw IoError(path.string() + ": non-finite weight");
  }
  return w;
}

void write_loss_csv(const std::vector<EpochLog>& epochs, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "epoch,steps,lr,train_loss,validation_loss\n";
  char line[256];
  for (const auto& e : epochs) {
    std::snprintf(line, sizeof line, "%d,%ld,%.9g,%.9g,%.9g\n", e.epoch, e.steps, e.lr, e.train_loss,
                  e.validation_loss);
    os << line;
  }
  write_text_file(path, os.str());
}

}  // namespace avh
