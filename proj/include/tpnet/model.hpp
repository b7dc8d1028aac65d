#pragma once

// Permutation-invariant next-frame predictor.
//
// Each of the m input frames (N unordered 2D points) goes through a shared
// PointNet-style encoder:
//
//   points -> input T-net (2x2) -> per-point MLP1 -> feature T-net (d x d)
//          -> per-point MLP2 -> max over points -> dense k->k + ReLU
//
// giving k global features per frame. Max pooling makes the features
// independent of point order, while feature j means the same thing in every
// frame. The prediction network treats each feature channel as its own scalar
// time series of length m: a stack of bidirectional LSTM layers, with weights
// shared across the k channels and layer normalization between layers. All
// per-step outputs of the last layer (k * m * 2H values) feed a dense readout
// that emits the N x 2 coordinates of the next frame.
//
// Parameter ordering of the flat vector (stable; checkpoints depend on it):
//
//   1. input T-net      (if enabled)  mlp blocks, fc blocks, out block
//   2. point MLP1       dense blocks
//   3. feature T-net    (if enabled)  mlp blocks, fc blocks, out block
//   4. point MLP2       dense blocks
//   5. refine           dense k -> k
//   6. LSTM             per layer: forward direction, then backward direction;
//                       each direction is Wx (in x 4H), Wh (H x 4H), b (4H),
//                       gate order i, f, g, o
//   7. layer norms      per gap between LSTM layers: gain (2H), shift (2H)
//   8. readout          dense (k * m * 2H) -> 2N
//
// A dense block stores its weight (in x out, column-major) followed by its
// bias (out). Points are row vectors: y = x W + b.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tpnet/geometry.hpp"
#include "tpnet/random.hpp"

namespace tpnet {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct ModelConfig {
  std::size_t n_points = 30;
  std::size_t m_frames = 5;
  std::vector<std::size_t> point_mlp1{64, 64};
  std::vector<std::size_t> point_mlp2{64, 128, 256};
  std::size_t k_global = 256;
  std::size_t lstm_hidden = 32;
  std::size_t lstm_layers = 3;
  bool use_input_transform = true;
  bool use_feature_transform = true;
  std::vector<std::size_t> tnet_mlp{32, 64};
  std::vector<std::size_t> tnet_fc{32};
  std::uint64_t seed = 0;

  /// Sized for single-core training: small recurrent core, wide per-point layers.
  static ModelConfig desk() {
    ModelConfig c;
    c.point_mlp1 = {32, 32};
    c.point_mlp2 = {256, 256, 128};
    c.k_global = 128;
    c.lstm_hidden = 8;
    c.tnet_mlp = {16, 32};
    c.tnet_fc = {16};
    return c;
  }

  /// Small enough for exhaustive finite-difference checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.n_points = 6;
    c.m_frames = 3;
    c.point_mlp1 = {6, 5};
    c.point_mlp2 = {7, 8};
    c.k_global = 8;
    c.lstm_hidden = 4;
    c.lstm_layers = 3;
    c.tnet_mlp = {5, 6};
    c.tnet_fc = {4};
    return c;
  }

  std::size_t feature_dim() const noexcept { return point_mlp1.empty() ? 2 : point_mlp1.back(); }
  std::size_t readout_inputs() const noexcept { return k_global * m_frames * 2 * lstm_hidden; }

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("ModelConfig: " + what); };
    auto positive = [&](const std::vector<std::size_t>& w, const char* name) {
      for (auto v : w)
        if (v == 0) fail(std::string(name) + " widths must be >= 1");
    };
    if (n_points == 0) fail("n_points must be >= 1");
    if (m_frames < 3 || m_frames > 5) fail("m_frames must be 3, 4 or 5 (got " + std::to_string(m_frames) + ")");
    if (point_mlp2.empty()) fail("point_mlp2 must have at least one layer");
    positive(point_mlp1, "point_mlp1");
    positive(point_mlp2, "point_mlp2");
    positive(tnet_mlp, "tnet_mlp");
    positive(tnet_fc, "tnet_fc");
    if ((use_input_transform || use_feature_transform) && tnet_mlp.empty())
      fail("tnet_mlp must have at least one layer when a T-net is enabled");
    if (k_global != point_mlp2.back()) fail("k_global must equal the last point_mlp2 width");
    if (lstm_hidden == 0) fail("lstm_hidden must be >= 1");
    if (lstm_layers == 0) fail("lstm_layers must be >= 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------------------
// Parameter layout

struct DenseBlock {
  std::size_t offset = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t size() const noexcept { return in * out + out; }
};

struct TNetBlocks {
  std::size_t dim = 0;  // emits a dim x dim transform
  std::vector<DenseBlock> mlp;
  std::vector<DenseBlock> fc;
  DenseBlock out;
};

struct LstmBlock {
  std::size_t offset = 0;
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t wh_offset() const noexcept { return offset + in * 4 * hidden; }
  std::size_t bias_offset() const noexcept { return wh_offset() + hidden * 4 * hidden; }
  std::size_t size() const noexcept { return (in + hidden + 1) * 4 * hidden; }
};

struct NormBlock {
  std::size_t offset = 0;
  std::size_t dim = 0;
  std::size_t size() const noexcept { return 2 * dim; }
};

struct ParamRange {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct ParamLayout {
  bool has_input_tnet = false;
  bool has_feature_tnet = false;
  TNetBlocks input_tnet;
  std::vector<DenseBlock> mlp1;
  TNetBlocks feature_tnet;
  std::vector<DenseBlock> mlp2;
  DenseBlock refine;
  std::vector<std::array<LstmBlock, 2>> lstm;
  std::vector<NormBlock> norms;
  DenseBlock readout;
  std::vector<ParamRange> ranges;
  std::size_t total = 0;

  static ParamLayout build(const ModelConfig& c) {
    c.validate();
    ParamLayout l;
    std::size_t cursor = 0;
    auto dense = [&](std::size_t in, std::size_t out) {
      DenseBlock b{cursor, in, out};
      cursor += b.size();
      return b;
    };
    auto chain = [&](std::size_t in, const std::vector<std::size_t>& widths) {
      std::vector<DenseBlock> blocks;
      for (auto w : widths) {
        blocks.push_back(dense(in, w));
        in = w;
      }
      return blocks;
    };
    auto mark = [&](const std::string& name, std::size_t begin) {
      if (cursor > begin) l.ranges.push_back({name, begin, cursor});
    };
    auto tnet = [&](std::size_t dim) {
      TNetBlocks t;
      t.dim = dim;
      t.mlp = chain(dim, c.tnet_mlp);
      t.fc = chain(c.tnet_mlp.back(), c.tnet_fc);
      t.out = dense(c.tnet_fc.empty() ? c.tnet_mlp.back() : c.tnet_fc.back(), dim * dim);
      return t;
    };

    std::size_t begin = cursor;
    if (c.use_input_transform) {
      l.has_input_tnet = true;
      l.input_tnet = tnet(2);
      mark("input_tnet", begin);
    }
    begin = cursor;
    l.mlp1 = chain(2, c.point_mlp1);
    mark("point_mlp1", begin);
    begin = cursor;
    if (c.use_feature_transform) {
      l.has_feature_tnet = true;
      l.feature_tnet = tnet(c.feature_dim());
      mark("feature_tnet", begin);
    }
    begin = cursor;
    l.mlp2 = chain(c.feature_dim(), c.point_mlp2);
    mark("point_mlp2", begin);
    begin = cursor;
    l.refine = dense(c.k_global, c.k_global);
    mark("refine", begin);
    begin = cursor;
    const std::size_t h = c.lstm_hidden;
    for (std::size_t layer = 0; layer < c.lstm_layers; ++layer) {
      const std::size_t in = layer == 0 ? 1 : 2 * h;
      std::array<LstmBlock, 2> dirs;
      for (auto& d : dirs) {
        d = {cursor, in, h};
        cursor += d.size();
      }
      l.lstm.push_back(dirs);
    }
    mark("lstm", begin);
    begin = cursor;
    for (std::size_t layer = 0; layer + 1 < c.lstm_layers; ++layer) {
      NormBlock nb{cursor, 2 * h};
      cursor += nb.size();
      l.norms.push_back(nb);
    }
    mark("layer_norm", begin);
    begin = cursor;
    l.readout = dense(c.readout_inputs(), 2 * c.n_points);
    mark("readout", begin);
    l.total = cursor;
    return l;
  }

  /// Name of the block that owns flat index `index`.
  std::string block_name(std::size_t index) const {
    for (const auto& r : ranges)
      if (index >= r.begin && index < r.end) return r.name;
    return "out_of_range";
  }

  const ParamRange& range(const std::string& name) const {
    for (const auto& r : ranges)
      if (r.name == name) return r;
    throw std::out_of_range("ParamLayout: no block named " + name);
  }
};

/// Closed-form parameter count; must agree with ParamLayout::build(c).total.
inline std::size_t param_count(const ModelConfig& c) {
  c.validate();
  auto dense = [](std::size_t in, std::size_t out) { return in * out + out; };
  auto chain = [&](std::size_t in, const std::vector<std::size_t>& widths) {
    std::size_t total = 0;
    for (auto w : widths) {
      total += dense(in, w);
      in = w;
    }
    return total;
  };
  auto tnet = [&](std::size_t dim) {
    const std::size_t pooled = c.tnet_mlp.back();
    const std::size_t last = c.tnet_fc.empty() ? pooled : c.tnet_fc.back();
    return chain(dim, c.tnet_mlp) + chain(pooled, c.tnet_fc) + dense(last, dim * dim);
  };
  const std::size_t h = c.lstm_hidden;
  std::size_t total = 0;
  if (c.use_input_transform) total += tnet(2);
  total += chain(2, c.point_mlp1);
  if (c.use_feature_transform) total += tnet(c.feature_dim());
  total += chain(c.feature_dim(), c.point_mlp2);
  total += dense(c.k_global, c.k_global);
  total += 2 * 4 * h * (1 + h + 1);                          // first LSTM layer, both directions
  total += (c.lstm_layers - 1) * 2 * 4 * h * (2 * h + h + 1);  // deeper layers
  total += (c.lstm_layers - 1) * 2 * (2 * h);                 // layer norms
  total += dense(c.readout_inputs(), 2 * c.n_points);
  return total;
}

struct ModelParams {
  ModelConfig config;
  ParamLayout layout;
  std::vector<double> values;

  const double* data() const noexcept { return values.data(); }
  double* data() noexcept { return values.data(); }
  std::size_t size() const noexcept { return values.size(); }
};

/// Seeded Glorot-uniform initialization. T-net output layers start at zero so
/// both transforms begin as the identity; LSTM forget-gate biases start at 1;
/// layer-norm gains at 1.
inline ModelParams init_params(const ModelConfig& config) {
  ModelParams p;
  p.config = config;
  p.layout = ParamLayout::build(config);
  p.values.assign(p.layout.total, 0.0);
  std::mt19937_64 rng(mix_seed(config.seed));
  double* theta = p.values.data();

  auto glorot = [&](std::size_t offset, std::size_t count, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < count; ++i) theta[offset + i] = uniform_real(rng, -bound, bound);
  };
  auto dense = [&](const DenseBlock& b) { glorot(b.offset, b.in * b.out, b.in, b.out); };
  auto tnet = [&](const TNetBlocks& t) {
    for (const auto& b : t.mlp) dense(b);
    for (const auto& b : t.fc) dense(b);
  };
  const auto& l = p.layout;
  if (l.has_input_tnet) tnet(l.input_tnet);
  for (const auto& b : l.mlp1) dense(b);
  if (l.has_feature_tnet) tnet(l.feature_tnet);
  for (const auto& b : l.mlp2) dense(b);
  dense(l.refine);
  for (const auto& layer : l.lstm) {
    for (const auto& d : layer) {
      const std::size_t g = 4 * d.hidden;
      glorot(d.offset, d.in * g, d.in, g);
      glorot(d.wh_offset(), d.hidden * g, d.hidden, g);
      for (std::size_t u = 0; u < d.hidden; ++u) theta[d.bias_offset() + d.hidden + u] = 1.0;
    }
  }
  for (const auto& nb : l.norms)
    for (std::size_t u = 0; u < nb.dim; ++u) theta[nb.offset + u] = 1.0;
  dense(l.readout);
  return p;
}

/// k global features of one frame; feature j has the same meaning in every frame.
struct GlobalFeatures {
  RowVector values;
};

// ---------------------------------------------------------------------------
// Layer kernels with explicit reverse passes.

namespace detail {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using Index = Eigen::Index;

inline constexpr double kLayerNormEps = 1e-5;

inline ConstMap weight(const DenseBlock& b, const double* theta) {
  return ConstMap(theta + b.offset, static_cast<Index>(b.in), static_cast<Index>(b.out));
}
inline Eigen::Map<const RowVector> bias(const DenseBlock& b, const double* theta) {
  return Eigen::Map<const RowVector>(theta + b.offset + b.in * b.out, static_cast<Index>(b.out));
}

inline Matrix dense(const DenseBlock& b, const double* theta, const Matrix& x, bool relu) {
  Matrix y = x * weight(b, theta);
  y.rowwise() += bias(b, theta);
  if (relu) y = y.cwiseMax(0.0);
  return y;
}

/// `dy` is the gradient w.r.t. the layer output (after the activation, if any).
/// Accumulates parameter gradients; returns dL/dx when requested.
inline Matrix dense_backward(const DenseBlock& b, const double* theta, double* grad, const Matrix& x,
                             const Matrix& y, Matrix dy, bool relu, bool want_dx = true) {
  if (relu) dy = (y.array() > 0.0).select(dy.array(), 0.0).matrix();
  MutMap(grad + b.offset, static_cast<Index>(b.in), static_cast<Index>(b.out)).noalias() += x.transpose() * dy;
  Eigen::Map<RowVector>(grad + b.offset + b.in * b.out, static_cast<Index>(b.out)) += dy.colwise().sum();
  if (!want_dx) return {};
  return dy * weight(b, theta).transpose();
}

struct MlpTrace {
  std::vector<Matrix> outputs;
};

inline const Matrix& mlp_forward(std::span<const DenseBlock> blocks, const double* theta, const Matrix& x,
                                 MlpTrace& trace) {
  trace.outputs.clear();
  const Matrix* cur = &x;
  for (const auto& b : blocks) {
    trace.outputs.push_back(dense(b, theta, *cur, true));
    cur = &trace.outputs.back();
  }
  return *cur;
}

inline Matrix mlp_backward(std::span<const DenseBlock> blocks, const double* theta, double* grad, const Matrix& x,
                           const MlpTrace& trace, Matrix dy) {
  for (std::size_t l = blocks.size(); l-- > 0;) {
    const Matrix& in = l == 0 ? x : trace.outputs[l - 1];
    dy = dense_backward(blocks[l], theta, grad, in, trace.outputs[l], std::move(dy), true);
  }
  return dy;
}

/// Column-wise max over rows (points). Ties resolve to the lowest row index.
struct MaxPool {
  RowVector values;
  std::vector<Index> argmax;
  Index rows = 0;
};

inline MaxPool max_pool(const Matrix& h) {
  MaxPool p;
  p.rows = h.rows();
  p.values.resize(h.cols());
  p.argmax.resize(static_cast<std::size_t>(h.cols()));
  for (Index c = 0; c < h.cols(); ++c) {
    Index best = 0;
    double v = h(0, c);
    for (Index r = 1; r < h.rows(); ++r) {
      if (h(r, c) > v) {
        v = h(r, c);
        best = r;
      }
    }
    p.values(c) = v;
    p.argmax[static_cast<std::size_t>(c)] = best;
  }
  return p;
}

inline Matrix max_pool_backward(const MaxPool& p, const RowVector& d) {
  Matrix dh = Matrix::Zero(p.rows, d.size());
  for (Index c = 0; c < d.size(); ++c) dh(p.argmax[static_cast<std::size_t>(c)], c) = d(c);
  return dh;
}

struct TNetTrace {
  MlpTrace mlp;
  MaxPool pool;
  Matrix pooled;  // 1 x width
  MlpTrace fc;
  Matrix transform;
};

/// Emits I + reshape(out), row-major: entry (r, c) is output r * dim + c.
inline const Matrix& tnet_forward(const TNetBlocks& t, const double* theta, const Matrix& x, TNetTrace& tr) {
  const Matrix& h = mlp_forward(t.mlp, theta, x, tr.mlp);
  tr.pool = max_pool(h);
  tr.pooled = tr.pool.values;
  const Matrix& f = mlp_forward(t.fc, theta, tr.pooled, tr.fc);
  const Matrix out = dense(t.out, theta, f, false);
  const auto d = static_cast<Index>(t.dim);
  tr.transform = Matrix::Identity(d, d);
  for (Index r = 0; r < d; ++r)
    for (Index c = 0; c < d; ++c) tr.transform(r, c) += out(0, r * d + c);
  return tr.transform;
}

inline Matrix tnet_backward(const TNetBlocks& t, const double* theta, double* grad, const Matrix& x,
                            const TNetTrace& tr, const Matrix& d_transform) {
  const auto d = static_cast<Index>(t.dim);
  Matrix d_out(1, d * d);
  for (Index r = 0; r < d; ++r)
    for (Index c = 0; c < d; ++c) d_out(0, r * d + c) = d_transform(r, c);
  const Matrix& f = tr.fc.outputs.empty() ? tr.pooled : tr.fc.outputs.back();
  Matrix df = dense_backward(t.out, theta, grad, f, Matrix{}, std::move(d_out), false);
  Matrix d_pooled = mlp_backward(t.fc, theta, grad, tr.pooled, tr.fc, std::move(df));
  Matrix dh = max_pool_backward(tr.pool, d_pooled);
  return mlp_backward(t.mlp, theta, grad, x, tr.mlp, std::move(dh));
}

inline Matrix points_to_matrix(std::span<const Vec2> points) {
  Matrix x(static_cast<Index>(points.size()), 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    x(static_cast<Index>(i), 0) = points[i].x;
    x(static_cast<Index>(i), 1) = points[i].y;
  }
  return x;
}

}  // namespace detail

/// Everything the encoder computed for one frame, kept for the reverse pass.
struct FeatureTrace {
  Matrix x;
  detail::TNetTrace input_tnet;
  Matrix x_aligned;
  detail::MlpTrace mlp1;
  detail::TNetTrace feature_tnet;
  Matrix h_aligned;
  detail::MlpTrace mlp2;
  detail::MaxPool pool;
  Matrix pooled;
  Matrix refined;  // 1 x k, the global features
};

inline GlobalFeatures extract_features(const ModelParams& params, std::span<const Vec2> frame, FeatureTrace& tr) {
  const auto& cfg = params.config;
  const auto& l = params.layout;
  if (frame.size() != cfg.n_points)
    throw std::invalid_argument("extract_features: expected " + std::to_string(cfg.n_points) + " points, got " +
                                std::to_string(frame.size()));
  const double* theta = params.data();
  tr.x = detail::points_to_matrix(frame);
  if (l.has_input_tnet) {
    const Matrix& t = detail::tnet_forward(l.input_tnet, theta, tr.x, tr.input_tnet);
    tr.x_aligned = tr.x * t;
  } else {
    tr.x_aligned = tr.x;
  }
  const Matrix& h1 = detail::mlp_forward(l.mlp1, theta, tr.x_aligned, tr.mlp1);
  if (l.has_feature_tnet) {
    const Matrix& t = detail::tnet_forward(l.feature_tnet, theta, h1, tr.feature_tnet);
    tr.h_aligned = h1 * t;
  } else {
    tr.h_aligned = h1;
  }
  const Matrix& h2 = detail::mlp_forward(l.mlp2, theta, tr.h_aligned, tr.mlp2);
  tr.pool = detail::max_pool(h2);
  tr.pooled = tr.pool.values;
  tr.refined = detail::dense(l.refine, theta, tr.pooled, true);
  return {tr.refined.row(0)};
}

inline GlobalFeatures extract_features(const ModelParams& params, std::span<const Vec2> frame) {
  FeatureTrace tr;
  return extract_features(params, frame, tr);
}

/// Reverse pass of extract_features. Accumulates into `grad` and returns the
/// gradient w.r.t. the frame's coordinates. A positive `ortho_weight` adds the
/// feature-transform penalty ortho_weight * ||T T^T - I||_F^2 (its value is
/// returned through `penalty`).
inline PointSet extract_features_backward(const ModelParams& params, const FeatureTrace& tr,
                                          const RowVector& d_features, double* grad, double ortho_weight = 0.0,
                                          double* penalty = nullptr) {
  const auto& l = params.layout;
  const double* theta = params.data();
  Matrix d_pooled = detail::dense_backward(l.refine, theta, grad, tr.pooled, tr.refined, d_features, true);
  Matrix dh2 = detail::max_pool_backward(tr.pool, d_pooled);
  Matrix dh_aligned = detail::mlp_backward(l.mlp2, theta, grad, tr.h_aligned, tr.mlp2, std::move(dh2));

  const Matrix& h1 = tr.mlp1.outputs.empty() ? tr.x_aligned : tr.mlp1.outputs.back();
  Matrix dh1;
  if (l.has_feature_tnet) {
    const Matrix& t = tr.feature_tnet.transform;
    dh1 = dh_aligned * t.transpose();
    Matrix dt = h1.transpose() * dh_aligned;
    if (ortho_weight > 0.0) {
      const Matrix gap = t * t.transpose() - Matrix::Identity(t.rows(), t.cols());
      if (penalty) *penalty += ortho_weight * gap.squaredNorm();
      dt += (4.0 * ortho_weight) * gap * t;
    }
    dh1 += detail::tnet_backward(l.feature_tnet, theta, grad, h1, tr.feature_tnet, dt);
  } else {
    dh1 = std::move(dh_aligned);
  }
  Matrix dx_aligned = detail::mlp_backward(l.mlp1, theta, grad, tr.x_aligned, tr.mlp1, std::move(dh1));
  Matrix dx;
  if (l.has_input_tnet) {
    const Matrix& t = tr.input_tnet.transform;
    dx = dx_aligned * t.transpose();
    dx += detail::tnet_backward(l.input_tnet, theta, grad, tr.x, tr.input_tnet, tr.x.transpose() * dx_aligned);
  } else {
    dx = std::move(dx_aligned);
  }
  PointSet out(static_cast<std::size_t>(dx.rows()));
  for (Eigen::Index i = 0; i < dx.rows(); ++i) out[static_cast<std::size_t>(i)] = {dx(i, 0), dx(i, 1)};
  return out;
}

/// Penalty value only, for loss evaluation without a reverse pass.
inline double feature_transform_penalty(const FeatureTrace& tr, double ortho_weight) {
  if (ortho_weight <= 0.0 || tr.feature_tnet.transform.size() == 0) return 0.0;
  const Matrix& t = tr.feature_tnet.transform;
  return ortho_weight * (t * t.transpose() - Matrix::Identity(t.rows(), t.cols())).squaredNorm();
}

// ---------------------------------------------------------------------------
// Prediction network

struct LstmStepTrace {
  Matrix gates;  // k x 4H, activated: sigmoid(i), sigmoid(f), tanh(g), sigmoid(o)
  Matrix c;
  Matrix tanh_c;
  Matrix h;
};

struct LstmLayerTrace {
  std::vector<Matrix> inputs;                    // per time step, k x in
  std::array<std::vector<LstmStepTrace>, 2> dirs;  // indexed by time step
  std::vector<Matrix> outputs;                   // per time step, k x 2H (before normalization)
  std::vector<Matrix> xhat;                      // normalized outputs, when a norm follows
  std::vector<Eigen::VectorXd> inv_std;
};

struct PredictTrace {
  std::vector<LstmLayerTrace> layers;
  Matrix flat;  // 1 x (k * m * 2H)
  Matrix out;   // 1 x 2N
};

namespace detail {

template <class A>
auto sigmoid(const A& x) {
  return (1.0 + (-x).exp()).inverse();
}

/// tanh through the vectorized exp, as 2 sigmoid(2x) - 1.
template <class A>
auto tanh(const A& x) {
  return 2.0 * (1.0 + (-2.0 * x).exp()).inverse() - 1.0;
}

/// Inputs of all time steps stacked row-wise, step t in rows [t k, (t + 1) k).
inline Matrix stack_steps(const std::vector<Matrix>& inputs) {
  const Index k = inputs.front().rows();
  Matrix x(static_cast<Index>(inputs.size()) * k, inputs.front().cols());
  for (std::size_t t = 0; t < inputs.size(); ++t) x.middleRows(static_cast<Index>(t) * k, k) = inputs[t];
  return x;
}

/// Runs one direction over all time steps, writing hidden states into columns
/// [col, col + H) of `outputs[t]`.
inline void lstm_forward(const LstmBlock& b, const double* theta, const std::vector<Matrix>& inputs, bool reverse,
                         std::vector<LstmStepTrace>& trace, std::vector<Matrix>& outputs, Index col) {
  const auto h = static_cast<Index>(b.hidden);
  const auto m = inputs.size();
  const Index k = inputs.front().rows();
  const ConstMap wx(theta + b.offset, static_cast<Index>(b.in), 4 * h);
  const ConstMap wh(theta + b.wh_offset(), h, 4 * h);
  const Eigen::Map<const RowVector> bias(theta + b.bias_offset(), 4 * h);
  trace.resize(m);
  Matrix xw(static_cast<Index>(m) * k, 4 * h);
  xw.noalias() = stack_steps(inputs) * wx;
  xw.rowwise() += bias;
  const LstmStepTrace* prev = nullptr;
  for (std::size_t s = 0; s < m; ++s) {
    const std::size_t t = reverse ? m - 1 - s : s;
    auto& st = trace[t];
    st.gates = xw.middleRows(static_cast<Index>(t) * k, k);
    if (prev) st.gates.noalias() += prev->h * wh;
    st.gates.leftCols(2 * h).array() = sigmoid(st.gates.leftCols(2 * h).array());
    st.gates.middleCols(2 * h, h).array() = tanh(st.gates.middleCols(2 * h, h).array());
    st.gates.rightCols(h).array() = sigmoid(st.gates.rightCols(h).array());
    st.c.resize(k, h);
    if (prev)
      st.c.array() = st.gates.middleCols(h, h).array() * prev->c.array() +
                     st.gates.leftCols(h).array() * st.gates.middleCols(2 * h, h).array();
    else
      st.c.array() = st.gates.leftCols(h).array() * st.gates.middleCols(2 * h, h).array();
    st.tanh_c.resize(k, h);
    st.tanh_c.array() = tanh(st.c.array());
    st.h.resize(k, h);
    st.h.array() = st.gates.rightCols(h).array() * st.tanh_c.array();
    outputs[t].middleCols(col, h) = st.h;
    prev = &st;
  }
}

/// Backpropagation through time for one direction. `d_outputs[t]` columns
/// [col, col + H) hold dL/dh_t; input gradients are added to `d_inputs[t]`.
inline void lstm_backward(const LstmBlock& b, const double* theta, double* grad, const std::vector<Matrix>& inputs,
                          bool reverse, const std::vector<LstmStepTrace>& trace, const std::vector<Matrix>& d_outputs,
                          Index col, std::vector<Matrix>& d_inputs, bool want_dx) {
  const auto h = static_cast<Index>(b.hidden);
  const auto m = inputs.size();
  const Index k = inputs.front().rows();
  const ConstMap wx(theta + b.offset, static_cast<Index>(b.in), 4 * h);
  const ConstMap wh(theta + b.wh_offset(), h, 4 * h);
  MutMap gwx(grad + b.offset, static_cast<Index>(b.in), 4 * h);
  MutMap gwh(grad + b.wh_offset(), h, 4 * h);
  Eigen::Map<RowVector> gb(grad + b.bias_offset(), 4 * h);
  Matrix dh_next = Matrix::Zero(k, h);
  Matrix dc_next = Matrix::Zero(k, h);
  Matrix dz_all(static_cast<Index>(m) * k, 4 * h);
  Eigen::ArrayXXd dh(k, h), dc(k, h);
  for (std::size_t s = m; s-- > 0;) {
    const std::size_t t = reverse ? m - 1 - s : s;
    const LstmStepTrace& st = trace[t];
    const LstmStepTrace* prev = s > 0 ? &trace[reverse ? m - s : s - 1] : nullptr;
    auto dz = dz_all.middleRows(static_cast<Index>(t) * k, k);
    dh = d_outputs[t].middleCols(col, h).array() + dh_next.array();
    const auto i = st.gates.leftCols(h).array();
    const auto f = st.gates.middleCols(h, h).array();
    const auto g = st.gates.middleCols(2 * h, h).array();
    const auto o = st.gates.rightCols(h).array();
    const auto tc = st.tanh_c.array();
    dc = dh * o * (1.0 - tc * tc) + dc_next.array();
    dz.leftCols(h).array() = dc * g * i * (1.0 - i);
    if (prev)
      dz.middleCols(h, h).array() = dc * prev->c.array() * f * (1.0 - f);
    else
      dz.middleCols(h, h).setZero();
    dz.middleCols(2 * h, h).array() = dc * i * (1.0 - g * g);
    dz.rightCols(h).array() = dh * tc * o * (1.0 - o);
    dc_next.array() = dc * f;
    if (prev) {
      gwh.noalias() += prev->h.transpose() * dz;
      dh_next.noalias() = dz * wh.transpose();
    }
  }
  gb += dz_all.colwise().sum();
  gwx.noalias() += stack_steps(inputs).transpose() * dz_all;
  if (want_dx) {
    const Matrix dx = dz_all * wx.transpose();
    for (std::size_t t = 0; t < m; ++t) d_inputs[t] += dx.middleRows(static_cast<Index>(t) * k, k);
  }
}

inline Matrix layer_norm_forward(const NormBlock& nb, const double* theta, const Matrix& x, Matrix& xhat,
                                 Eigen::VectorXd& inv_std) {
  const auto d = static_cast<Index>(nb.dim);
  const Eigen::Map<const RowVector> gain(theta + nb.offset, d);
  const Eigen::Map<const RowVector> shift(theta + nb.offset + nb.dim, d);
  const Eigen::VectorXd mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  inv_std = (var.array() + kLayerNormEps).rsqrt().matrix();
  xhat = inv_std.asDiagonal() * centered;
  Matrix y = xhat.array().rowwise() * gain.array();
  y.rowwise() += shift;
  return y;
}

inline Matrix layer_norm_backward(const NormBlock& nb, const double* theta, double* grad, const Matrix& xhat,
                                  const Eigen::VectorXd& inv_std, const Matrix& dy) {
  const auto d = static_cast<Index>(nb.dim);
  const Eigen::Map<const RowVector> gain(theta + nb.offset, d);
  Eigen::Map<RowVector>(grad + nb.offset, d) += (dy.array() * xhat.array()).colwise().sum().matrix();
  Eigen::Map<RowVector>(grad + nb.offset + nb.dim, d) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.array();
  const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
  const Eigen::VectorXd sum_dx = (dxhat.array() * xhat.array()).rowwise().sum();
  const double dd = static_cast<double>(d);
  Matrix dx = (dd * dxhat).colwise() - sum_d;
  dx -= (xhat.array().colwise() * sum_dx.array()).matrix();
  return (inv_std / dd).asDiagonal() * dx;
}

}  // namespace detail

inline PointSet predict_next(const ModelParams& params, std::span<const GlobalFeatures> features, PredictTrace& tr) {
  using detail::Index;
  const auto& cfg = params.config;
  const auto& l = params.layout;
  const std::size_t m = cfg.m_frames;
  const auto k = static_cast<Index>(cfg.k_global);
  const auto h = static_cast<Index>(cfg.lstm_hidden);
  if (features.size() != m)
    throw std::invalid_argument("predict_next: expected " + std::to_string(m) + " feature vectors, got " +
                                std::to_string(features.size()));
  for (const auto& f : features)
    if (f.values.size() != k)
      throw std::invalid_argument("predict_next: feature vectors must have length " + std::to_string(k));
  const double* theta = params.data();

  tr.layers.assign(cfg.lstm_layers, {});
  std::vector<Matrix> inputs(m);
  for (std::size_t t = 0; t < m; ++t) inputs[t] = features[t].values.transpose();
  for (std::size_t layer = 0; layer < cfg.lstm_layers; ++layer) {
    auto& lt = tr.layers[layer];
    lt.inputs = std::move(inputs);
    lt.outputs.assign(m, Matrix(k, 2 * h));
    detail::lstm_forward(l.lstm[layer][0], theta, lt.inputs, false, lt.dirs[0], lt.outputs, 0);
    detail::lstm_forward(l.lstm[layer][1], theta, lt.inputs, true, lt.dirs[1], lt.outputs, h);
    inputs.assign(m, Matrix{});
    if (layer + 1 < cfg.lstm_layers) {
      lt.xhat.resize(m);
      lt.inv_std.resize(m);
      for (std::size_t t = 0; t < m; ++t)
        inputs[t] = detail::layer_norm_forward(l.norms[layer], theta, lt.outputs[t], lt.xhat[t], lt.inv_std[t]);
    }
  }

  const auto& last = tr.layers.back().outputs;
  const Index width = 2 * h;
  tr.flat.resize(1, static_cast<Index>(cfg.readout_inputs()));
  for (Index j = 0; j < k; ++j)
    for (std::size_t t = 0; t < m; ++t)
      tr.flat.block(0, (j * static_cast<Index>(m) + static_cast<Index>(t)) * width, 1, width) = last[t].row(j);
  tr.out = detail::dense(l.readout, theta, tr.flat, false);

  PointSet next(cfg.n_points);
  for (std::size_t i = 0; i < cfg.n_points; ++i)
    next[i] = {tr.out(0, static_cast<Index>(2 * i)), tr.out(0, static_cast<Index>(2 * i + 1))};
  return next;
}

inline PointSet predict_next(const ModelParams& params, std::span<const GlobalFeatures> features) {
  PredictTrace tr;
  return predict_next(params, features, tr);
}

/// Reverse pass of predict_next: accumulates into `grad`, returns dL/dG_t for
/// each of the m input feature vectors.
inline std::vector<RowVector> predict_next_backward(const ModelParams& params, const PredictTrace& tr,
                                                    std::span<const Vec2> d_next, double* grad,
                                                    bool want_feature_grads = true) {
  using detail::Index;
  const auto& cfg = params.config;
  const auto& l = params.layout;
  const std::size_t m = cfg.m_frames;
  const auto k = static_cast<Index>(cfg.k_global);
  const auto h = static_cast<Index>(cfg.lstm_hidden);
  const double* theta = params.data();

  Matrix d_out(1, static_cast<Index>(2 * cfg.n_points));
  for (std::size_t i = 0; i < cfg.n_points; ++i) {
    d_out(0, static_cast<Index>(2 * i)) = d_next[i].x;
    d_out(0, static_cast<Index>(2 * i + 1)) = d_next[i].y;
  }
  const Matrix d_flat = detail::dense_backward(l.readout, theta, grad, tr.flat, Matrix{}, std::move(d_out), false);

  const Index width = 2 * h;
  std::vector<Matrix> d_outputs(m, Matrix(k, width));
  for (Index j = 0; j < k; ++j)
    for (std::size_t t = 0; t < m; ++t)
      d_outputs[t].row(j) = d_flat.block(0, (j * static_cast<Index>(m) + static_cast<Index>(t)) * width, 1, width);

  for (std::size_t layer = cfg.lstm_layers; layer-- > 0;) {
    const auto& lt = tr.layers[layer];
    const bool want_dx = layer > 0 || want_feature_grads;
    std::vector<Matrix> d_inputs(m, Matrix::Zero(k, lt.inputs.front().cols()));
    detail::lstm_backward(l.lstm[layer][0], theta, grad, lt.inputs, false, lt.dirs[0], d_outputs, 0, d_inputs,
                          want_dx);
    detail::lstm_backward(l.lstm[layer][1], theta, grad, lt.inputs, true, lt.dirs[1], d_outputs, h, d_inputs,
                          want_dx);
    if (layer > 0) {
      const auto& below = tr.layers[layer - 1];
      for (std::size_t t = 0; t < m; ++t)
        d_outputs[t] = detail::layer_norm_backward(l.norms[layer - 1], theta, grad, below.xhat[t], below.inv_std[t],
                                                   d_inputs[t]);
    } else {
      d_outputs = std::move(d_inputs);
    }
  }

  std::vector<RowVector> d_features(m);
  if (want_feature_grads)
    for (std::size_t t = 0; t < m; ++t) d_features[t] = d_outputs[t].col(0).transpose();
  return d_features;
}

// ---------------------------------------------------------------------------
// Whole-model entry points

inline void check_frames(const ModelParams& params, std::span<const PointSet> frames, const char* who) {
  if (frames.size() != params.config.m_frames)
    throw std::invalid_argument(std::string(who) + ": expected " + std::to_string(params.config.m_frames) +
                                " frames, got " + std::to_string(frames.size()));
  for (const auto& f : frames)
    if (f.size() != params.config.n_points)
      throw std::invalid_argument(std::string(who) + ": expected " + std::to_string(params.config.n_points) +
                                  " points per frame, got " + std::to_string(f.size()));
}

inline PointSet forward(const ModelParams& params, std::span<const PointSet> frames) {
  check_frames(params, frames, "forward");
  std::vector<GlobalFeatures> features;
  features.reserve(frames.size());
  for (const auto& f : frames) features.push_back(extract_features(params, f));
  return predict_next(params, features);
}

/// Called before each prediction with the step index and the m frames in the
/// current window.
using RolloutObserver = std::function<void(std::size_t step, std::span<const PointSet> window)>;

/// Autoregressive prediction: each output is appended to the window and the
/// oldest frame dropped. Features of a frame are computed once and reused
/// while it stays in the window.
inline std::vector<PointSet> rollout(const ModelParams& params, std::span<const PointSet> frames, std::size_t steps,
                                     const RolloutObserver& observer = {}) {
  check_frames(params, frames, "rollout");
  if (steps == 0) throw std::invalid_argument("rollout: steps must be >= 1");
  const std::size_t m = params.config.m_frames;
  std::vector<PointSet> window(frames.begin(), frames.end());
  std::vector<GlobalFeatures> features;
  for (const auto& f : window) features.push_back(extract_features(params, f));
  std::vector<PointSet> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    if (observer) observer(s, window);
    out.push_back(predict_next(params, features));
    if (s + 1 == steps) break;
    window.erase(window.begin());
    window.push_back(out.back());
    features.erase(features.begin());
    features.push_back(extract_features(params, out.back()));
    (void)m;
  }
  return out;
}

}  // namespace tpnet
