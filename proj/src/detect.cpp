#include "ghostlab/detect.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>

namespace ghostlab::detect {

namespace {

std::vector<Proposal> keep_large(std::vector<Proposal> props) {
  std::erase_if(props, [](const Proposal& p) { return p.members.size() < kMinInstancePoints; });
  return props;
}

// Dense bitset over point indices for fast intersection counts.
struct BitSet {
  std::vector<std::uint64_t> words;
  std::size_t count = 0;

  BitSet(std::span<const std::size_t> pts, std::size_t universe) : words((universe + 63) / 64, 0), count(pts.size()) {
    for (auto p : pts) words[p / 64] |= std::uint64_t{1} << (p % 64);
  }
  std::size_t intersect(const BitSet& o) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < words.size(); ++i) n += static_cast<std::size_t>(std::popcount(words[i] & o.words[i]));
    return n;
  }
};

}  // namespace

std::vector<Proposal> sgpn_propose(const Matrix& S, const Vector& confidence, double k1) {
  std::vector<Proposal> out;
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    Proposal p;
    p.seed = static_cast<std::size_t>(i);
    p.seed_confidence = confidence.size() ? confidence(i) : 1.0;
    for (Eigen::Index j = 0; j < S.cols(); ++j) {
      if (S(i, j) < k1) p.members.push_back(static_cast<std::size_t>(j));
    }
    out.push_back(std::move(p));
  }
  return keep_large(std::move(out));
}

std::vector<Proposal> sgpn_propose_embeddings(const Matrix& embeddings, const Vector& confidence, double k1) {
  const Matrix et = embeddings.transpose();
  const double k1_sq = k1 * k1;
  std::vector<Proposal> out;
  for (Eigen::Index i = 0; i < et.cols(); ++i) {
    Proposal p;
    p.seed = static_cast<std::size_t>(i);
    p.seed_confidence = confidence.size() ? confidence(i) : 1.0;
    for (Eigen::Index j = 0; j < et.cols(); ++j) {
      if ((et.col(i) - et.col(j)).squaredNorm() < k1_sq) p.members.push_back(static_cast<std::size_t>(j));
    }
    out.push_back(std::move(p));
  }
  return keep_large(std::move(out));
}

std::vector<std::size_t> nms(std::span<const Candidate> cands, double iou_threshold) {
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (cands[a].score != cands[b].score) return cands[a].score > cands[b].score;
    return cands[a].seed < cands[b].seed;
  });
  std::size_t universe = 0;
  for (const auto& c : cands) {
    if (!c.points.empty()) universe = std::max(universe, c.points.back() + 1);
  }
  std::vector<BitSet> bits;
  bits.reserve(cands.size());
  for (const auto& c : cands) bits.emplace_back(c.points, universe);

  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    const auto& b = bits[idx];
    bool suppressed = false;
    for (std::size_t k : kept) {
      const auto& kb = bits[k];
      const double lo = static_cast<double>(std::min(b.count, kb.count));
      const double hi = static_cast<double>(std::max(b.count, kb.count));
      if (hi == 0.0 || lo / hi <= iou_threshold) continue;  // IoU cannot exceed the size ratio
      const double inter = static_cast<double>(b.intersect(kb));
      const double uni = static_cast<double>(b.count + kb.count) - inter;
      if (uni > 0.0 && inter / uni > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

InstanceClass classify_instance(std::span<const std::size_t> points, const Matrix& probs, const Vector& confidence) {
  const Eigen::Index classes = probs.cols();
  std::vector<int> votes(static_cast<std::size_t>(classes), 0);
  std::vector<double> prob_sum(static_cast<std::size_t>(classes), 0.0);
  double conf_sum = 0.0;
  for (auto p : points) {
    const auto i = static_cast<Eigen::Index>(p);
    Eigen::Index best = 1;
    for (Eigen::Index c = 2; c < classes; ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    ++votes[static_cast<std::size_t>(best)];
    for (Eigen::Index c = 1; c < classes; ++c) prob_sum[static_cast<std::size_t>(c)] += probs(i, c);
    conf_sum += confidence.size() ? confidence(i) : 1.0;
  }
  int winner = 1;
  for (int c = 2; c < classes; ++c) {
    const auto uc = static_cast<std::size_t>(c), uw = static_cast<std::size_t>(winner);
    if (votes[uc] > votes[uw] || (votes[uc] == votes[uw] && prob_sum[uc] > prob_sum[uw])) winner = c;
  }
  const double n = static_cast<double>(points.size());
  if (n == 0.0) return {winner, 0.0};
  return {winner, (prob_sum[static_cast<std::size_t>(winner)] / n) * (conf_sum / n)};
}

std::vector<int> dbscan_cluster(const Matrix& points, double eps, int min_pts) {
  const Eigen::Index n = points.rows();
  const double eps_sq = eps * eps;
  auto region = [&](Eigen::Index i) {
    std::vector<Eigen::Index> nb;
    for (Eigen::Index j = 0; j < n; ++j) {
      if ((points.row(i) - points.row(j)).squaredNorm() <= eps_sq) nb.push_back(j);
    }
    return nb;
  };

  constexpr int kUnvisited = -2;
  std::vector<int> labels(static_cast<std::size_t>(n), kUnvisited);
  int cluster = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] != kUnvisited) continue;
    const auto nb = region(i);
    if (static_cast<int>(nb.size()) < min_pts) {
      labels[static_cast<std::size_t>(i)] = kNoise;
      continue;
    }
    labels[static_cast<std::size_t>(i)] = cluster;
    std::deque<Eigen::Index> queue(nb.begin(), nb.end());
    while (!queue.empty()) {
      const Eigen::Index j = queue.front();
      queue.pop_front();
      auto& lj = labels[static_cast<std::size_t>(j)];
      if (lj == kNoise) lj = cluster;  // border point
      if (lj != kUnvisited) continue;
      lj = cluster;
      const auto nb2 = region(j);
      if (static_cast<int>(nb2.size()) >= min_pts) queue.insert(queue.end(), nb2.begin(), nb2.end());
    }
    ++cluster;
  }
  return labels;
}

std::vector<std::size_t> unique_origins(const prep::FixedCloud& cloud) {
  std::map<std::size_t, std::size_t> first;
  for (std::size_t i = 0; i < cloud.size(); ++i) first.try_emplace(cloud.points[i].origin, i);
  std::vector<std::size_t> reps;
  reps.reserve(first.size());
  for (const auto& [origin, idx] : first) reps.push_back(idx);
  return reps;
}

std::vector<Detection> dbscan_pipeline(const Matrix& probs, const prep::FixedCloud& cloud, const DbscanParams& p) {
  std::vector<std::size_t> kept;
  for (auto i : unique_origins(cloud)) {
    if (probs(static_cast<Eigen::Index>(i), 0) <= p.background_threshold) kept.push_back(i);
  }
  Matrix feats(static_cast<Eigen::Index>(kept.size()), 4);
  for (std::size_t r = 0; r < kept.size(); ++r) {
    const auto& pt = cloud.points[kept[r]];
    feats.row(static_cast<Eigen::Index>(r)) << pt.x, pt.y, p.doppler_weight * pt.doppler, p.time_weight * pt.rel_time;
  }
  const auto labels = dbscan_cluster(feats, p.eps, p.min_pts);
  std::map<int, std::vector<std::size_t>> clusters;
  for (std::size_t r = 0; r < kept.size(); ++r) {
    if (labels[r] != kNoise) clusters[labels[r]].push_back(kept[r]);
  }
  std::vector<Detection> dets;
  for (const auto& [id, members] : clusters) {
    if (members.size() < kMinInstancePoints) continue;
    const auto ic = classify_instance(members, probs, Vector());
    Detection d;
    for (auto m : members) d.point_indices.push_back(cloud.points[m].origin);
    std::sort(d.point_indices.begin(), d.point_indices.end());
    d.cls = ic.cls;
    d.score = ic.score;
    dets.push_back(std::move(d));
  }
  return dets;
}

std::vector<Detection> sgpn_pipeline(const nn::Output& out, const prep::FixedCloud& cloud, const SgpnParams& p) {
  // Duplicated points share inputs and neighbourhoods, hence outputs; work on one representative per origin.
  const auto reps = unique_origins(cloud);
  const auto m = static_cast<Eigen::Index>(reps.size());
  Matrix emb(m, out.embeddings.cols());
  Vector conf(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    emb.row(r) = out.embeddings.row(static_cast<Eigen::Index>(reps[static_cast<std::size_t>(r)]));
    conf(r) = out.confidence(static_cast<Eigen::Index>(reps[static_cast<std::size_t>(r)]));
  }
  auto props = sgpn_propose_embeddings(emb, conf, p.k1);

  // Identical point sets score identically; only the lowest seed can survive NMS.
  std::map<std::vector<std::size_t>, std::size_t> seen;
  std::vector<Candidate> cands;
  std::vector<int> classes;
  const Matrix probs = nn::softmax(out.logits);
  for (auto& prop : props) {
    std::vector<std::size_t> cloud_idx, origins;
    for (auto r : prop.members) {
      cloud_idx.push_back(reps[r]);
      origins.push_back(cloud.points[reps[r]].origin);
    }
    if (!seen.emplace(origins, cands.size()).second) continue;
    const auto ic = classify_instance(cloud_idx, probs, out.confidence);
    cands.push_back({std::move(origins), ic.score, reps[prop.seed]});
    classes.push_back(ic.cls);
  }

  std::vector<Detection> dets;
  for (auto k : nms(cands, p.nms_iou)) dets.push_back({cands[k].points, classes[k], cands[k].score});
  return dets;
}

}  // namespace ghostlab::detect
