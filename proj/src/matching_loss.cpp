#include "rxf/matching_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rxf {

// Shortest augmenting path with potentials; gts are the rows being assigned,
// predictions the columns. O(G^2 P).
Assignment hungarian(const Eigen::MatrixXd& cost) {
  const std::size_t P = static_cast<std::size_t>(cost.rows()), G = static_cast<std::size_t>(cost.cols());
  if (P < G) {
    throw ContractError("hungarian: " + std::to_string(P) + " predictions cannot cover " + std::to_string(G) +
                        " ground-truth boxes");
  }
  if (!cost.allFinite()) throw ContractError("hungarian: cost matrix has non-finite entries");
  Assignment out;
  if (G == 0) {
    for (std::size_t i = 0; i < P; ++i) out.unmatched_preds.push_back(i);
    return out;
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(G + 1, 0.0), v(P + 1, 0.0);
  std::vector<std::size_t> owner(P + 1, 0), way(P + 1, 0);  // owner[j]: gt row (1-based) holding pred j
  for (std::size_t i = 1; i <= G; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(P + 1, inf);
    std::vector<char> used(P + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= P; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(j - 1), static_cast<Eigen::Index>(i0 - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= P; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= P; ++j) {
    if (owner[j] != 0) {
      out.pairs.emplace_back(j - 1, owner[j] - 1);
    } else {
      out.unmatched_preds.push_back(j - 1);
    }
  }
  return out;
}

Tensor focal_loss(const Tensor& logits, const std::vector<std::size_t>& targets, const FocalParams& p) {
  if (!(p.gamma >= 0)) throw ContractError("focal_loss: gamma must be >= 0");
  if (logits.rank() != 2) throw DimensionError("focal_loss: logits must be [N x K], got " + shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (targets.size() != N) throw DimensionError("focal_loss: one target per row required");
  if (N == 0) return Tensor::scalar(0.0);
  const double g = p.gamma;
  std::vector<double> probs(N * K);
  std::vector<double> dldz_t(N);  // d loss_i / d z_t expressed as a multiplier of (delta_tj - p_j)
  double total = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t t = targets[i];
    if (t >= K) throw ContractError("focal_loss: target class out of range");
    const double* z = logits.data().data() + i * K;
    const double mx = *std::max_element(z, z + K);
    double se = 0;
    for (std::size_t j = 0; j < K; ++j) se += std::exp(z[j] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < K; ++j) probs[i * K + j] = std::exp(z[j] - lse);
    const double logp = z[t] - lse, pt = probs[i * K + t], q = 1.0 - pt;
    const double at = p.alpha < 0 ? 1.0 : (t + 1 == K ? 1.0 - p.alpha : p.alpha);
    const double mod = g == 0 ? 1.0 : std::pow(q, g);
    total += -at * mod * logp;
    // d/dz_j [-a (1-p)^g log p] = -a [(1-p)^g - g (1-p)^(g-1) p log p] (delta_tj - p_j)
    double dmod = 0;
    if (g != 0 && q > 0) dmod = g * std::pow(q, g - 1.0) * pt * logp;
    dldz_t[i] = -at * (mod - dmod);
  }
  const double inv = 1.0 / static_cast<double>(N);
  return make_op({1}, {total * inv}, {logits},
                 [logits, targets, probs = std::move(probs), dldz_t = std::move(dldz_t), N, K, inv](std::span<const double> go) {
                   auto gz = grad_sink(logits);
                   if (gz.empty()) return;
                   for (std::size_t i = 0; i < N; ++i) {
                     const double c = go[0] * inv * dldz_t[i];
                     for (std::size_t j = 0; j < K; ++j) {
                       gz[i * K + j] += c * ((j == targets[i] ? 1.0 : 0.0) - probs[i * K + j]);
                     }
                   }
                 });
}

double match_cost(const Detection& pred, const Box3D& gt, const FocalParams& p) {
  const auto probs = pred.probabilities();
  if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) + 1 >= probs.size()) {
    throw ContractError("match_cost: gt class " + std::to_string(gt.class_id) + " outside the model's classes");
  }
  const double pc = probs[static_cast<std::size_t>(gt.class_id)];
  const double a = p.alpha < 0 ? 1.0 : p.alpha;
  double c = a * std::pow(1.0 - pc, p.gamma);
  c += (pred.center - gt.center).cwiseAbs().sum();
  c += (pred.size - gt.size).cwiseAbs().sum();
  c += std::abs(pred.sin_yaw - std::sin(gt.yaw)) + std::abs(pred.cos_yaw - std::cos(gt.yaw));
  return c;
}

Eigen::MatrixXd cost_matrix(const std::vector<Detection>& preds, const std::vector<Box3D>& gts, const FocalParams& p) {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(preds.size()), static_cast<Eigen::Index>(gts.size()));
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j)
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = match_cost(preds[i], gts[j], p);
  return c;
}

namespace {

Tensor l1_to(const Tensor& pred_rows, std::vector<double> target) {
  const Shape s = pred_rows.shape();
  return sum(abs(sub(pred_rows, Tensor(s, std::move(target)))));
}

}  // namespace

LossBreakdown total_loss(const std::vector<HeadOutput>& iterations, const std::vector<Box3D>& gts,
                         const LossConfig& cfg) {
  if (iterations.empty()) throw ContractError("total_loss: no iterations");
  LossBreakdown out;
  const std::size_t first = cfg.aux_loss ? 0 : iterations.size() - 1;
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t it = first; it < iterations.size(); ++it) {
    const HeadOutput& h = iterations[it];
    const std::size_t N = h.logits.dim(0), K = h.logits.dim(1);
    const auto a = hungarian(cost_matrix(h.detections(), gts, cfg.focal));
    std::vector<std::size_t> targets(N, K - 1);
    std::vector<std::size_t> rows;
    std::vector<double> tc, ts, ta;
    for (const auto& [pi, gi] : a.pairs) {
      const Box3D& g = gts[gi];
      targets[pi] = static_cast<std::size_t>(g.class_id);
      rows.push_back(pi);
      for (int k = 0; k < 3; ++k) {
        tc.push_back(g.center[k]);
        ts.push_back(g.size[k]);
      }
      ta.push_back(std::sin(g.yaw));
      ta.push_back(std::cos(g.yaw));
    }
    const Tensor cls = focal_loss(h.logits, targets, cfg.focal);
    out.cls += cls.item();
    total = add(total, cls);
    if (!rows.empty()) {
      const Tensor lc = l1_to(gather_rows(h.center, rows), std::move(tc));
      const Tensor ls = l1_to(gather_rows(h.size, rows), std::move(ts));
      const Tensor la = l1_to(gather_rows(h.angle, rows), std::move(ta));
      out.center += lc.item();
      out.size += ls.item();
      out.angle += la.item();
      total = add(total, add(add(lc, ls), la));
    }
    out.assignments.push_back(a);
  }
  out.total = total;
  return out;
}

AdamW::AdamW(const NamedTensors& params, const AdamWConfig& cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0) || !(cfg.eps > 0) || cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1) {
    throw ContractError("AdamW: invalid hyper-parameters");
  }
  for (const auto& [_, t] : params) {
    params_.push_back(t);
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto x = p.mutable_data();
    const auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      x[i] -= cfg_.lr * cfg_.weight_decay * x[i];
      x[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

}  // namespace rxf
