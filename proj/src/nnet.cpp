#include "ghostlab/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ghostlab::nn {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Parameters

ModelParams::ModelParams(const ModelShape& shape) : shape_(shape) {
  if (shape.input <= 0 || shape.hidden <= 0 || shape.k <= 0 || shape.embed <= 0 || shape.classes < 2) {
    throw std::invalid_argument("invalid model shape");
  }
  const Eigen::Index h = shape.hidden;
  const std::array<std::pair<Eigen::Index, Eigen::Index>, kBlockCount> dims{{
      {h, shape.input}, {h, 1},                 // block 1
      {h, 2 * h},       {h, 1},                 // block 2
      {h, 2 * h},       {h, 1},                 // trunk
      {shape.classes, h}, {shape.classes, 1},   // class head
      {shape.embed, h}, {shape.embed, 1},       // embedding head
      {1, h},           {1, 1},                 // confidence head
  }};
  Eigen::Index offset = 0;
  for (int b = 0; b < kBlockCount; ++b) {
    slots_[b] = {offset, dims[b].first, dims[b].second};
    offset += dims[b].first * dims[b].second;
  }
  flat_ = Vector::Zero(offset);
}

ModelParams ModelParams::random(const ModelShape& shape, std::uint64_t seed) {
  ModelParams p(shape);
  std::mt19937_64 rng(seed);
  for (Block b : {W1, W2, W3, WC, WE, WQ}) {
    auto m = p.block(b);
    std::normal_distribution<double> d(0.0, 1.0 / std::sqrt(static_cast<double>(m.cols())));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = d(rng);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Neighbourhoods

namespace {

using Candidate = std::pair<double, int>;  // (squared distance, index)

std::vector<int> knn_brute(const Matrix& coords, int k) {
  const auto n = static_cast<int>(coords.rows());
  std::vector<int> out(static_cast<std::size_t>(n) * k);
  std::vector<Candidate> cand(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double dx = coords(j, 0) - coords(i, 0);
      const double dy = coords(j, 1) - coords(i, 1);
      cand[static_cast<std::size_t>(j)] = {dx * dx + dy * dy, j};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int m = 0; m < k; ++m) out[static_cast<std::size_t>(i) * k + m] = cand[static_cast<std::size_t>(m)].second;
  }
  return out;
}

}  // namespace

std::vector<int> knn(const Matrix& coords, int k) {
  const auto n = static_cast<int>(coords.rows());
  if (k <= 0 || k > n) throw std::invalid_argument("knn: need 0 < k <= N");
  if (n <= 128) return knn_brute(coords, k);

  const double min_x = coords.col(0).minCoeff(), max_x = coords.col(0).maxCoeff();
  const double min_y = coords.col(1).minCoeff(), max_y = coords.col(1).maxCoeff();
  const double area = std::max((max_x - min_x) * (max_y - min_y), 1e-6);
  double cell = std::sqrt(area * k / n);
  cell = std::max(cell, std::max(max_x - min_x, max_y - min_y) / 1024.0);
  cell = std::max(cell, 1e-6);
  const int nx = static_cast<int>((max_x - min_x) / cell) + 1;
  const int ny = static_cast<int>((max_y - min_y) / cell) + 1;

  // Counting sort of points into cells.
  std::vector<int> cell_of(static_cast<std::size_t>(n));
  std::vector<int> start(static_cast<std::size_t>(nx) * ny + 1, 0);
  auto cx_of = [&](int i) { return std::min(nx - 1, static_cast<int>((coords(i, 0) - min_x) / cell)); };
  auto cy_of = [&](int i) { return std::min(ny - 1, static_cast<int>((coords(i, 1) - min_y) / cell)); };
  for (int i = 0; i < n; ++i) {
    cell_of[static_cast<std::size_t>(i)] = cy_of(i) * nx + cx_of(i);
    ++start[static_cast<std::size_t>(cell_of[static_cast<std::size_t>(i)]) + 1];
  }
  std::partial_sum(start.begin(), start.end(), start.begin());
  std::vector<int> members(static_cast<std::size_t>(n));
  {
    std::vector<int> fill(start.begin(), start.end() - 1);
    for (int i = 0; i < n; ++i) members[static_cast<std::size_t>(fill[static_cast<std::size_t>(cell_of[static_cast<std::size_t>(i)])]++)] = i;
  }

  std::vector<int> out(static_cast<std::size_t>(n) * k);
  std::priority_queue<Candidate> heap;  // max-heap on (d2, index)
  for (int i = 0; i < n; ++i) {
    const int cx = cx_of(i), cy = cy_of(i);
    const double px = coords(i, 0), py = coords(i, 1);
    heap = {};
    auto visit = [&](int gx, int gy) {
      if (gx < 0 || gy < 0 || gx >= nx || gy >= ny) return;
      const auto c = static_cast<std::size_t>(gy * nx + gx);
      for (int m = start[c]; m < start[c + 1]; ++m) {
        const int j = members[static_cast<std::size_t>(m)];
        const double dx = coords(j, 0) - px;
        const double dy = coords(j, 1) - py;
        const Candidate cand{dx * dx + dy * dy, j};
        if (static_cast<int>(heap.size()) < k) {
          heap.push(cand);
        } else if (cand < heap.top()) {
          heap.pop();
          heap.push(cand);
        }
      }
    };
    const int max_ring = std::max(nx, ny);
    for (int r = 0; r <= max_ring; ++r) {
      if (r == 0) {
        visit(cx, cy);
      } else {
        for (int gx = cx - r; gx <= cx + r; ++gx) {
          visit(gx, cy - r);
          visit(gx, cy + r);
        }
        for (int gy = cy - r + 1; gy <= cy + r - 1; ++gy) {
          visit(cx - r, gy);
          visit(cx + r, gy);
        }
      }
      // Every point in ring r + 1 is at least r cells away.
      const double bound = r * cell;
      if (static_cast<int>(heap.size()) == k && heap.top().first < bound * bound) break;
    }
    for (int m = k - 1; m >= 0; --m) {
      out[static_cast<std::size_t>(i) * k + m] = heap.top().second;
      heap.pop();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward. Activations are stored feature-major (features x points).

namespace {

Matrix silu(const Matrix& z) { return (z.array() / (1.0 + (-z.array()).exp())).matrix(); }

Matrix silu_grad(const Matrix& z) {
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
  return (s * (1.0 + z.array() * (1.0 - s))).matrix();
}

Matrix neighbor_mean(const Matrix& a, const std::vector<int>& nb, int k) {
  Matrix g = Matrix::Zero(a.rows(), a.cols());
  const double inv = 1.0 / k;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    const int* row = nb.data() + i * k;
    for (int m = 0; m < k; ++m) g.col(i) += a.col(row[m]);
    g.col(i) *= inv;
  }
  return g;
}

// Adjoint of neighbor_mean.
void neighbor_mean_backward(const Matrix& dg, const std::vector<int>& nb, int k, Matrix& da) {
  const double inv = 1.0 / k;
  for (Eigen::Index i = 0; i < dg.cols(); ++i) {
    const int* row = nb.data() + i * k;
    for (int m = 0; m < k; ++m) da.col(row[m]) += inv * dg.col(i);
  }
}

Matrix affine(const ConstMatrixMap& w, const ConstMatrixMap& b, const Matrix& x) {
  Matrix z = w * x;
  z.colwise() += b.col(0);
  return z;
}

Matrix concat_rows(const Matrix& top, const Matrix& bottom) {
  Matrix c(top.rows() + bottom.rows(), top.cols());
  c.topRows(top.rows()) = top;
  c.bottomRows(bottom.rows()) = bottom;
  return c;
}

}  // namespace

Output forward(const ModelParams& params, const Matrix& features, const Matrix& coords, ForwardCache* cache) {
  if (coords.rows() != features.rows() || coords.cols() != 2) throw std::invalid_argument("forward: coords must be N x 2");
  if (!coords.allFinite()) throw std::invalid_argument("forward: non-finite coordinates");
  if (coords.rows() < params.shape().k) throw std::invalid_argument("forward: need at least k points");
  return forward(params, features, knn(coords, params.shape().k), cache);
}

Output forward(const ModelParams& params, const Matrix& features, std::vector<int> neighbors, ForwardCache* cache) {
  const auto& sh = params.shape();
  const Eigen::Index n = features.rows();
  if (features.cols() != sh.input) throw std::invalid_argument("forward: feature width mismatch");
  if (n < sh.k) throw std::invalid_argument("forward: need at least k points");
  if (!features.allFinite()) throw std::invalid_argument("forward: non-finite features");
  if (static_cast<Eigen::Index>(neighbors.size()) != n * sh.k) throw std::invalid_argument("forward: neighbour list size");

  using B = ModelParams;
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.input = features.transpose();
  c.neighbors = std::move(neighbors);
  c.z1 = affine(params.block(B::W1), params.block(B::B1), c.input);
  c.a1 = silu(c.z1);
  c.c1 = concat_rows(c.a1, neighbor_mean(c.a1, c.neighbors, sh.k));
  c.z2 = affine(params.block(B::W2), params.block(B::B2), c.c1);
  c.a2 = silu(c.z2);
  c.c2 = concat_rows(c.a2, neighbor_mean(c.a2, c.neighbors, sh.k));
  c.z3 = affine(params.block(B::W3), params.block(B::B3), c.c2);
  c.trunk = silu(c.z3);

  Output out;
  out.logits = affine(params.block(B::WC), params.block(B::BC), c.trunk).transpose();
  out.embeddings = affine(params.block(B::WE), params.block(B::BE), c.trunk).transpose();
  const Matrix q = affine(params.block(B::WQ), params.block(B::BQ), c.trunk);
  out.confidence = (1.0 / (1.0 + (-q.row(0).array()).exp())).matrix().transpose();
  return out;
}

Vector backward(const ModelParams& params, const ForwardCache& c, const Output& out, const Matrix& d_logits,
                const Matrix& d_embeddings, const Vector& d_confidence) {
  using B = ModelParams;
  const auto& sh = params.shape();
  const Eigen::Index h = sh.hidden;
  Vector grad = Vector::Zero(params.size());

  const Matrix dl = d_logits.transpose();      // C x N
  const Matrix de = d_embeddings.transpose();  // E x N
  const Eigen::RowVectorXd dq =
      (d_confidence.array() * out.confidence.array() * (1.0 - out.confidence.array())).matrix().transpose();

  params.block_of(grad, B::WC) = dl * c.trunk.transpose();
  params.block_of(grad, B::BC) = dl.rowwise().sum();
  params.block_of(grad, B::WE) = de * c.trunk.transpose();
  params.block_of(grad, B::BE) = de.rowwise().sum();
  params.block_of(grad, B::WQ) = dq * c.trunk.transpose();
  params.block_of(grad, B::BQ)(0, 0) = dq.sum();

  Matrix dtrunk = params.block(B::WC).transpose() * dl + params.block(B::WE).transpose() * de +
                  params.block(B::WQ).transpose() * dq;

  const Matrix dz3 = (dtrunk.array() * silu_grad(c.z3).array()).matrix();
  params.block_of(grad, B::W3) = dz3 * c.c2.transpose();
  params.block_of(grad, B::B3) = dz3.rowwise().sum();
  const Matrix dc2 = params.block(B::W3).transpose() * dz3;

  Matrix da2 = dc2.topRows(h);
  neighbor_mean_backward(dc2.bottomRows(h), c.neighbors, sh.k, da2);
  const Matrix dz2 = (da2.array() * silu_grad(c.z2).array()).matrix();
  params.block_of(grad, B::W2) = dz2 * c.c1.transpose();
  params.block_of(grad, B::B2) = dz2.rowwise().sum();
  const Matrix dc1 = params.block(B::W2).transpose() * dz2;

  Matrix da1 = dc1.topRows(h);
  neighbor_mean_backward(dc1.bottomRows(h), c.neighbors, sh.k, da1);
  const Matrix dz1 = (da1.array() * silu_grad(c.z1).array()).matrix();
  params.block_of(grad, B::W1) = dz1 * c.input.transpose();
  params.block_of(grad, B::B1) = dz1.rowwise().sum();
  return grad;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Losses

void LossWeights::validate() const {
  if (!(k1 > 0.0 && k2 > k1)) throw std::invalid_argument("loss: thresholds must satisfy k2 > k1 > 0");
  if (!(alpha >= 0.0)) throw std::invalid_argument("loss: alpha must be non-negative");
  for (double w : class_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("loss: class weights must be finite and >= 0");
  }
}

std::vector<double> class_weights_from_counts(std::span<const double> counts) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double c = static_cast<double>(counts.size());
  std::vector<double> s;
  for (std::size_t l = 0; l < counts.size(); ++l) {
    if (!(counts[l] > 0.0)) {
      throw std::invalid_argument("class " + std::to_string(l) + " absent from the training split");
    }
    s.push_back(1.0 / (c * (counts[l] / total)));
  }
  return s;
}

std::vector<double> class_weights(std::span<const prep::PointTargets> targets, const ClassConfig& cfg) {
  std::vector<double> counts(static_cast<std::size_t>(cfg.num_classes()), 0.0);
  for (const auto& t : targets) {
    for (int c : t.cls) {
      if (c >= 0) counts.at(static_cast<std::size_t>(c)) += 1.0;
    }
  }
  return class_weights_from_counts(counts);
}

LossValue semantic_loss(const Matrix& logits, std::span<const int> targets, std::span<const double> class_weights) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) throw std::invalid_argument("semantic_loss: size mismatch");
  if (static_cast<Eigen::Index>(class_weights.size()) != logits.cols()) {
    throw std::invalid_argument("semantic_loss: one weight per class required");
  }
  LossValue lv;
  lv.grad = Matrix::Zero(logits.rows(), logits.cols());
  const auto count = std::count_if(targets.begin(), targets.end(), [](int t) { return t != kIgnoreTarget; });
  if (count == 0) return lv;
  const Matrix p = softmax(logits);
  const double inv = 1.0 / static_cast<double>(count);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t == kIgnoreTarget) continue;
    const double w = class_weights[static_cast<std::size_t>(t)];
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    lv.value += w * (lse - logits(i, t)) * inv;
    lv.grad.row(i) = w * inv * p.row(i);
    lv.grad(i, t) -= w * inv;
  }
  return lv;
}

Matrix similarity_matrix(const Matrix& e) {
  const Eigen::Index n = e.rows();
  Matrix s = Matrix::Zero(n, n);
  const Matrix et = e.transpose();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double d = (et.col(i) - et.col(j)).norm();
      s(i, j) = d;
      s(j, i) = d;
    }
  }
  return s;
}

namespace {

enum class PairKind { None, SameInstance, SameClass, OtherClass, BgFg };

PairKind pair_kind(const PairTargets& t, std::size_t i, std::size_t j) {
  const int ci = t.cls[i], cj = t.cls[j];
  if (ci == kIgnoreTarget || cj == kIgnoreTarget) return PairKind::None;
  const bool bi = ci == kBackgroundTarget, bj = cj == kBackgroundTarget;
  if (bi && bj) return PairKind::None;
  if (bi != bj) return PairKind::BgFg;
  if (t.instance[i] == t.instance[j] && ci == cj) return PairKind::SameInstance;
  return ci == cj ? PairKind::SameClass : PairKind::OtherClass;
}

}  // namespace

LossValue similarity_loss(const Matrix& S, const PairTargets& t, const LossWeights& w) {
  const auto n = static_cast<std::size_t>(S.rows());
  if (S.cols() != S.rows() || t.cls.size() != n || t.instance.size() != n) {
    throw std::invalid_argument("similarity_loss: shape mismatch");
  }
  LossValue lv;
  lv.grad = Matrix::Zero(S.rows(), S.cols());
  double n_fg = 0.0, n_bg = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = j + 1; i < n; ++i) {
      const auto kind = pair_kind(t, i, j);
      if (kind == PairKind::BgFg) n_bg += 1.0;
      else if (kind != PairKind::None) n_fg += 1.0;
    }
  }
  if (n_fg + n_bg == 0.0) return lv;
  const double w_fg = n_fg > 0 ? 1.0 / (2.0 * n_fg) : 0.0;
  const double w_bg = n_bg > 0 ? 1.0 / (2.0 * n_bg) : 0.0;

  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = j + 1; i < n; ++i) {
      const auto kind = pair_kind(t, i, j);
      if (kind == PairKind::None) continue;
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      const double d = S(ii, jj);
      double loss = 0.0, dd = 0.0;
      switch (kind) {
        case PairKind::SameInstance: loss = d; dd = 1.0; break;
        case PairKind::SameClass:
          if (d < w.k1) { loss = w.alpha * (w.k1 - d); dd = -w.alpha; }
          break;
        case PairKind::OtherClass:
        case PairKind::BgFg:
          if (d < w.k2) { loss = w.k2 - d; dd = -1.0; }
          break;
        case PairKind::None: break;
      }
      const double weight = kind == PairKind::BgFg ? w_bg : w_fg;
      lv.value += weight * loss;
      lv.grad(jj, ii) = weight * dd;  // upper triangle (row < col)
    }
  }
  return lv;
}

LossValue similarity_loss_embeddings(const Matrix& e, const PairTargets& t, const LossWeights& w) {
  const Matrix S = similarity_matrix(e);
  LossValue ls = similarity_loss(S, t, w);
  LossValue out;
  out.value = ls.value;
  out.grad = Matrix::Zero(e.rows(), e.cols());
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < e.rows(); ++j) {
      const double g = ls.grad(i, j);
      if (g == 0.0 || S(i, j) == 0.0) continue;
      const Eigen::RowVectorXd dir = (e.row(i) - e.row(j)) / S(i, j);
      out.grad.row(i) += g * dir;
      out.grad.row(j) -= g * dir;
    }
  }
  return out;
}

Vector confidence_targets(const Matrix& S, const PairTargets& t, double k1) {
  const auto n = static_cast<std::size_t>(S.rows());
  Vector out = Vector::Zero(S.rows());
  for (std::size_t i = 0; i < n; ++i) {
    if (t.cls[i] <= 0) continue;
    double inter = 0.0, uni = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (t.cls[j] == kIgnoreTarget) continue;
      const bool in_prop = S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) < k1;
      const bool in_gt = t.cls[j] > 0 && t.instance[j] == t.instance[i] && t.cls[j] == t.cls[i];
      inter += (in_prop && in_gt) ? 1.0 : 0.0;
      uni += (in_prop || in_gt) ? 1.0 : 0.0;
    }
    out(static_cast<Eigen::Index>(i)) = uni > 0.0 ? inter / uni : 0.0;
  }
  return out;
}

LossValue confidence_loss(const Vector& conf, const Vector& targets, std::span<const int> cls) {
  LossValue lv;
  lv.grad = Matrix::Zero(conf.size(), 1);
  const auto count = std::count_if(cls.begin(), cls.end(), [](int c) { return c != kIgnoreTarget; });
  if (count == 0) return lv;
  const double inv = 1.0 / static_cast<double>(count);
  for (Eigen::Index i = 0; i < conf.size(); ++i) {
    if (cls[static_cast<std::size_t>(i)] == kIgnoreTarget) continue;
    const double r = conf(i) - targets(i);
    lv.value += r * r * inv;
    lv.grad(i, 0) = 2.0 * r * inv;
  }
  return lv;
}

// ---------------------------------------------------------------------------
// Training

Sample make_sample(const prep::FixedCloud& cloud, const ClassConfig& cfg, const prep::FeatureStats* stats, int k) {
  Sample s;
  s.features = prep::featurize(cloud, stats);
  s.neighbors = knn(prep::coordinates(cloud), k);
  s.targets = prep::make_targets(cloud, cfg);
  return s;
}

LossBreakdown loss_and_gradient(const ModelParams& params, const Sample& sample, std::span<const int> subset,
                                const LossWeights& w, Vector* grad, const Vector* frozen_conf_targets) {
  ForwardCache cache;
  const Output out = forward(params, sample.features, sample.neighbors, &cache);
  const Eigen::Index n = out.logits.rows();

  std::vector<int> idx(subset.begin(), subset.end());
  if (idx.empty()) {
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
  }
  const auto m = static_cast<Eigen::Index>(idx.size());
  Matrix emb(m, out.embeddings.cols());
  Vector conf(m);
  PairTargets pt;
  for (Eigen::Index r = 0; r < m; ++r) {
    const int i = idx[static_cast<std::size_t>(r)];
    emb.row(r) = out.embeddings.row(i);
    conf(r) = out.confidence(i);
    pt.cls.push_back(sample.targets.cls[static_cast<std::size_t>(i)]);
    pt.instance.push_back(sample.targets.instance[static_cast<std::size_t>(i)]);
  }

  const LossValue sem = semantic_loss(out.logits, sample.targets.cls, w.class_weights);
  const LossValue sim = similarity_loss_embeddings(emb, pt, w);
  Vector ctarget;
  if (frozen_conf_targets) {
    ctarget = *frozen_conf_targets;
  } else {
    ctarget = confidence_targets(similarity_matrix(emb), pt, w.k1);
  }
  const LossValue cl = confidence_loss(conf, ctarget, pt.cls);

  LossBreakdown lb;
  lb.semantic = sem.value;
  lb.similarity = sim.value;
  lb.confidence = cl.value;
  lb.total = w.semantic * sem.value + w.similarity * sim.value + w.confidence * cl.value;

  if (grad) {
    Matrix d_emb = Matrix::Zero(n, out.embeddings.cols());
    Vector d_conf = Vector::Zero(n);
    for (Eigen::Index r = 0; r < m; ++r) {
      const int i = idx[static_cast<std::size_t>(r)];
      d_emb.row(i) += w.similarity * sim.grad.row(r);
      d_conf(i) += w.confidence * cl.grad(r, 0);
    }
    *grad = backward(params, cache, out, w.semantic * sem.grad, d_emb, d_conf);
  }
  return lb;
}

TrainResult train(ModelParams params, std::span<const Sample> data, const LossWeights& w, const TrainConfig& cfg,
                  const ProgressFn& progress) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch < 1 || cfg.steps < 0 || cfg.pair_points < 2) throw std::invalid_argument("train: invalid config");
  w.validate();

  TrainResult result{std::move(params), {}};
  ModelParams& p = result.params;
  std::mt19937_64 rng(cfg.seed);
  Vector m1 = Vector::Zero(p.size()), m2 = Vector::Zero(p.size());
  Vector grad, step_grad;
  std::vector<int> perm;

  for (int step = 1; step <= cfg.steps; ++step) {
    step_grad = Vector::Zero(p.size());
    LossBreakdown mean;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto pick = std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng);
      const Sample& s = data[pick];
      const auto n = static_cast<int>(s.features.rows());
      const int m = std::min(n, cfg.pair_points);
      perm.resize(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      for (int i = 0; i < m; ++i) {
        const int j = std::uniform_int_distribution<int>(i, n - 1)(rng);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
      }
      std::vector<int> subset(perm.begin(), perm.begin() + m);
      std::sort(subset.begin(), subset.end());
      const LossBreakdown lb = loss_and_gradient(p, s, subset, w, &grad);
      if (!std::isfinite(lb.total) || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "training diverged at step " << step << " (sample " << pick << "): semantic=" << lb.semantic
            << " similarity=" << lb.similarity << " confidence=" << lb.confidence
            << " grad_finite=" << grad.allFinite();
        throw TrainingDiverged(msg.str());
      }
      step_grad += grad / cfg.batch;
      mean.total += lb.total / cfg.batch;
      mean.semantic += lb.semantic / cfg.batch;
      mean.similarity += lb.similarity / cfg.batch;
      mean.confidence += lb.confidence / cfg.batch;
    }

    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * step_grad;
    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * step_grad.cwiseProduct(step_grad);
    const double c1 = 1.0 - std::pow(cfg.beta1, step);
    const double c2 = 1.0 - std::pow(cfg.beta2, step);
    p.flat().array() -= cfg.lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.epsilon);

    result.curve.push_back({step, mean});
    if (progress && cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps)) progress(result.curve.back());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

Matrix Model::features(const prep::FixedCloud& cloud) const {
  return prep::featurize(cloud, preprocess.standardize ? &stats : nullptr);
}

Output Model::run(const prep::FixedCloud& cloud) const {
  return forward(params, features(cloud), prep::coordinates(cloud));
}

std::string model_to_string(const Model& m) {
  const auto& sh = m.params.shape();
  std::vector<double> weights(m.params.flat().data(), m.params.flat().data() + m.params.size());
  const json j{{"format", "ghostlab-model"},
               {"version", kCheckpointVersion},
               {"shape",
                {{"input", sh.input}, {"hidden", sh.hidden}, {"k", sh.k}, {"embed", sh.embed}, {"classes", sh.classes}}},
               {"classes",
                {{"granularity", to_string(m.classes.granularity)}, {"labelset", to_string(m.classes.labelset)}}},
               {"preprocess",
                {{"n_cycles", m.preprocess.n_cycles},
                 {"n_points", m.preprocess.n_points},
                 {"standardize", m.preprocess.standardize}}},
               {"stats", {{"mean", m.stats.mean}, {"stddev", m.stats.stddev}}},
               {"loss",
                {{"class_weights", m.loss.class_weights},
                 {"k1", m.loss.k1},
                 {"k2", m.loss.k2},
                 {"alpha", m.loss.alpha},
                 {"semantic", m.loss.semantic},
                 {"similarity", m.loss.similarity},
                 {"confidence", m.loss.confidence}}},
               {"weights", weights}};
  return j.dump() + "\n";
}

Model model_from_string(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "ghostlab-model") throw FormatError("not a model checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    ModelShape sh;
    const auto& js = j.at("shape");
    sh.input = js.at("input").get<int>();
    sh.hidden = js.at("hidden").get<int>();
    sh.k = js.at("k").get<int>();
    sh.embed = js.at("embed").get<int>();
    sh.classes = js.at("classes").get<int>();
    Model m{ModelParams(sh), {}, {}, {}, {}};
    m.classes.granularity = granularity_from_string(j.at("classes").at("granularity").get<std::string>());
    m.classes.labelset = labelset_from_string(j.at("classes").at("labelset").get<std::string>());
    if (m.classes.num_classes() != sh.classes) throw FormatError("class config does not match head width");
    const auto& jp = j.at("preprocess");
    m.preprocess.n_cycles = jp.at("n_cycles").get<int>();
    m.preprocess.n_points = jp.at("n_points").get<std::size_t>();
    m.preprocess.standardize = jp.at("standardize").get<bool>();
    m.stats.mean = j.at("stats").at("mean").get<std::array<double, prep::kFeatureCount>>();
    m.stats.stddev = j.at("stats").at("stddev").get<std::array<double, prep::kFeatureCount>>();
    const auto& jl = j.at("loss");
    m.loss.class_weights = jl.at("class_weights").get<std::vector<double>>();
    m.loss.k1 = jl.at("k1").get<double>();
    m.loss.k2 = jl.at("k2").get<double>();
    m.loss.alpha = jl.at("alpha").get<double>();
    m.loss.semantic = jl.at("semantic").get<double>();
    m.loss.similarity = jl.at("similarity").get<double>();
    m.loss.confidence = jl.at("confidence").get<double>();
    const auto weights = j.at("weights").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(weights.size()) != m.params.size()) throw FormatError("weight count mismatch");
    m.params.flat() = Eigen::Map<const Vector>(weights.data(), m.params.size());
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_model(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << model_to_string(m);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_string(ss.str());
}

}  // namespace ghostlab::nn
