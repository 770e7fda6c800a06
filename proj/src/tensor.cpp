#include "rxf/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rxf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local Tape* g_active_tape = nullptr;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(a.shape()));
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : p_(std::make_shared<TensorData>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  p_->shape = std::move(shape);
  p_->data = std::move(data);
  p_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item(): tensor " + shape_str(shape()) + " is not scalar");
  return p_->data[0];
}

std::span<const double> Tensor::grad() const {
  if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0);
  return p_->grad;
}

std::span<double> Tensor::grad_storage() {
  if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0);
  return p_->grad;
}

void Tensor::zero_grad() { std::fill(p_->grad.begin(), p_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return Tensor(p_->shape, p_->data, false); }

// ---- Tape ------------------------------------------------------------------

void Tape::record(const Tensor& output, BackwardFn fn) {
  nodes_.push_back({output.impl(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  const auto& target = loss.impl();
  std::size_t start = nodes_.size();
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].output == target) {
      start = i;
      break;
    }
  }
  if (start == nodes_.size()) {
    if (loss.requires_grad()) {  // the loss is itself a leaf
      target->grad.resize(1, 0.0);
      target->grad[0] += 1.0;
      return;
    }
    throw ContractError("backward: loss is not on this tape");
  }
  for (auto& n : nodes_) n.output->grad.clear();
  target->grad.assign(1, 1.0);
  for (std::size_t i = start + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.output->grad.empty()) continue;
    node.backward(node.output->grad);
  }
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

Tensor make_op(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
               BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  if (g_active_tape == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor* t) { return t->defined() && t->requires_grad(); });
  if (any) {
    out.set_requires_grad(true);
    g_active_tape->record(out, std::move(backward));
  }
  return out;
}

Tensor make_op(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
               BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  if (g_active_tape == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (any) {
    out.set_requires_grad(true);
    g_active_tape->record(out, std::move(backward));
  }
  return out;
}

std::span<double> grad_sink(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  auto& g = t.impl()->grad;
  if (g.empty()) g.assign(t.size(), 0.0);
  return g;
}

// ---- elementwise / shape ops -----------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  return make_op({m, n}, std::move(out), {&a, &b}, [a, b, m, k, n](std::span<const double> g) {
    CMapMat G(g.data(), m, n);
    if (auto ga = grad_sink(a); !ga.empty()) {
      MapMat(ga.data(), m, k).noalias() += G * CMapMat(b.data().data(), k, n).transpose();
    }
    if (auto gb = grad_sink(b); !gb.empty()) {
      MapMat(gb.data(), k, n).noalias() += CMapMat(a.data().data(), m, k).transpose() * G;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), n, m) = CMapMat(a.data().data(), m, n).transpose();
  return make_op({n, m}, std::move(out), {&a}, [a, m, n](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      MapMat(ga.data(), m, n) += CMapMat(g.data(), n, m).transpose();
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op(a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const double> g) {
    for (const Tensor* t : {&a, &b}) {
      if (auto gt = grad_sink(*t); !gt.empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op(a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (auto gb = grad_sink(b); !gb.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op(a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (auto gb = grad_sink(b); !gb.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return make_op(a.shape(), std::move(out), {&a}, [a, c](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_row");
  const auto m = a.dim(0), n = a.dim(1);
  if (bias.size() != n) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + bias[j];
  return make_op(a.shape(), std::move(out), {&a, &bias}, [a, bias, m, n](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (auto gb = grad_sink(bias); !gb.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Tensor add_channel(const Tensor& x, const Tensor& bias) {
  const auto c = x.dim(0);
  if (bias.size() != c) {
    throw DimensionError("add_channel: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  const auto inner = x.size() / c;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < inner; ++i) out[ch * inner + i] += bias[ch];
  return make_op(x.shape(), std::move(out), {&x, &bias}, [x, bias, c, inner](std::span<const double> g) {
    if (auto gx = grad_sink(x); !gx.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (auto gb = grad_sink(bias); !gb.empty()) {
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < inner; ++i) gb[ch] += g[ch * inner + i];
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0 ? a[i] : 0.0;
  return make_op(a.shape(), std::move(out), {&a}, [a](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a[i] > 0) ga[i] += g[i];
    }
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
  auto result = make_op(a.shape(), out, {&a}, [a, out](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out[i];
    }
  });
  return result;
}

Tensor abs(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a[i]);
  return make_op(a.shape(), std::move(out), {&a}, [a](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += a[i] > 0 ? g[i] : (a[i] < 0 ? -g[i] : 0.0);
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.data()) s += v;
  return make_op({1}, {s}, {&a}, [a](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (auto& v : ga) v += g[0];
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, x[base + k * inner]);
      double z = 0;
      for (std::size_t k = 0; k < n; ++k) {
        out[base + k * inner] = std::exp(x[base + k * inner] - mx);
        z += out[base + k * inner];
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  auto y = out;
  return make_op(x.shape(), std::move(out), {&x},
                 [x, y = std::move(y), outer, inner, n](std::span<const double> g) {
                   auto gx = grad_sink(x);
                   if (gx.empty()) return;
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t in = 0; in < inner; ++in) {
                       const std::size_t base = o * n * inner + in;
                       double dot = 0;
                       for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
                       for (std::size_t k = 0; k < n; ++k) {
                         const auto i = base + k * inner;
                         gx[i] += y[i] * (g[i] - dot);
                       }
                     }
                   }
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op(std::move(shape), std::move(out), {&a}, [a](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
  const auto m = parts.front().dim(0);
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.data().begin() + i * w, w, out.begin() + i * n + off);
    off += w;
  }
  return make_op({m, n}, std::move(out), parts, [parts, m, n](std::span<const double> g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const auto w = p.dim(1);
      if (auto gp = grad_sink(p); !gp.empty()) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + off + j];
      }
      off += w;
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_cols");
  if (begin >= end || end > a.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_str(a.shape()));
  }
  const auto m = a.dim(0), n = a.dim(1), w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.data().begin() + i * n + begin, w, out.begin() + i * w);
  return make_op({m, w}, std::move(out), {&a}, [a, m, n, w, begin](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank(a, 2, "gather_rows");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(a.data().begin() + idx[i] * n, n, out.begin() + i * n);
  }
  return make_op({idx.size(), n}, std::move(out), {&a}, [a, idx, n](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) ga[idx[i] * n + j] += g[i * n + j];
    }
  });
}

Tensor row_normalize(const Tensor& a, double eps) {
  require_rank(a, 2, "row_normalize");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> norms(m), out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    double s = eps * eps;
    for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * a[i * n + j];
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] / norms[i];
  }
  auto y = out;
  return make_op(a.shape(), std::move(out), {&a},
                 [a, y = std::move(y), norms, m, n](std::span<const double> g) {
                   auto ga = grad_sink(a);
                   if (ga.empty()) return;
                   for (std::size_t i = 0; i < m; ++i) {
                     double dot = 0;
                     for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                     for (std::size_t j = 0; j < n; ++j)
                       ga[i * n + j] += (g[i * n + j] - y[i * n + j] * dot) / norms[i];
                   }
                 });
}

// ---- sampling --------------------------------------------------------------

void sample_accumulate(std::span<const double> vol, const std::array<std::size_t, 4>& shape,
                       const std::array<double, 3>& pos, double weight, std::span<double> out) {
  const auto [c, s0, s1, s2] = shape;
  const std::size_t ext[3] = {s0, s1, s2};
  long lo[3];
  double f[3];
  for (int ax = 0; ax < 3; ++ax) {
    const double fl = std::floor(pos[ax]);
    lo[ax] = static_cast<long>(fl);
    f[ax] = pos[ax] - fl;
  }
  const std::size_t plane = s0 * s1 * s2;
  for (int corner = 0; corner < 8; ++corner) {
    double w = weight;
    long idx[3];
    bool inside = true;
    for (int ax = 0; ax < 3; ++ax) {
      const int bit = (corner >> (2 - ax)) & 1;
      idx[ax] = lo[ax] + bit;
      w *= bit ? f[ax] : 1.0 - f[ax];
      if (idx[ax] < 0 || idx[ax] >= static_cast<long>(ext[ax])) inside = false;
    }
    if (!inside || w == 0.0) continue;
    const std::size_t off = (static_cast<std::size_t>(idx[0]) * s1 + static_cast<std::size_t>(idx[1])) * s2 +
                            static_cast<std::size_t>(idx[2]);
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += w * vol[ch * plane + off];
  }
}

SampleGrad sample_backward(std::span<const double> vol, const std::array<std::size_t, 4>& shape,
                           const std::array<double, 3>& pos, double weight,
                           std::span<const double> g, std::span<double> vol_grad) {
  const auto [c, s0, s1, s2] = shape;
  const std::size_t ext[3] = {s0, s1, s2};
  long lo[3];
  double f[3];
  for (int ax = 0; ax < 3; ++ax) {
    const double fl = std::floor(pos[ax]);
    lo[ax] = static_cast<long>(fl);
    f[ax] = pos[ax] - fl;
  }
  const std::size_t plane = s0 * s1 * s2;
  SampleGrad out;
  for (int corner = 0; corner < 8; ++corner) {
    long idx[3];
    double fac[3];
    int bits[3];
    bool inside = true;
    for (int ax = 0; ax < 3; ++ax) {
      bits[ax] = (corner >> (2 - ax)) & 1;
      idx[ax] = lo[ax] + bits[ax];
      fac[ax] = bits[ax] ? f[ax] : 1.0 - f[ax];
      if (idx[ax] < 0 || idx[ax] >= static_cast<long>(ext[ax])) inside = false;
    }
    if (!inside) continue;
    const std::size_t off = (static_cast<std::size_t>(idx[0]) * s1 + static_cast<std::size_t>(idx[1])) * s2 +
                            static_cast<std::size_t>(idx[2]);
    double gv = 0;
    for (std::size_t ch = 0; ch < c; ++ch) gv += g[ch] * vol[ch * plane + off];
    const double w = fac[0] * fac[1] * fac[2];
    out.weight += w * gv;
    for (int ax = 0; ax < 3; ++ax) {
      double d = bits[ax] ? 1.0 : -1.0;
      for (int o = 0; o < 3; ++o)
        if (o != ax) d *= fac[o];
      out.pos[ax] += weight * d * gv;
    }
    if (!vol_grad.empty() && w != 0.0) {
      for (std::size_t ch = 0; ch < c; ++ch) vol_grad[ch * plane + off] += weight * w * g[ch];
    }
  }
  return out;
}

namespace {

Tensor sample_normalized(const Tensor& vol, const Tensor& p, std::array<std::size_t, 4> shape,
                         std::size_t spatial, const char* op) {
  if (p.size() != spatial) {
    throw DimensionError(std::string(op) + ": point has " + std::to_string(p.size()) +
                         " coordinates, expected " + std::to_string(spatial));
  }
  // leading axes of a 2D map are padded with a unit axis
  std::array<double, 3> pos{0, 0, 0};
  std::array<double, 3> span{0, 0, 0};
  for (std::size_t i = 0; i < spatial; ++i) {
    const std::size_t ax = 3 - spatial + i;
    span[ax] = static_cast<double>(shape[ax + 1]) - 1.0;
    pos[ax] = p[i] * span[ax];
  }
  std::vector<double> out(shape[0], 0.0);
  sample_accumulate(vol.data(), shape, pos, 1.0, out);
  return make_op({shape[0]}, std::move(out), {&vol, &p},
                 [vol, p, shape, pos, span, spatial](std::span<const double> g) {
                   auto gv = grad_sink(vol);
                   const auto sg = sample_backward(vol.data(), shape, pos, 1.0, g, gv);
                   if (auto gp = grad_sink(p); !gp.empty()) {
                     for (std::size_t i = 0; i < spatial; ++i) {
                       const std::size_t ax = 3 - spatial + i;
                       gp[i] += sg.pos[ax] * span[ax];
                     }
                   }
                 });
}

}  // namespace

Tensor bilinear_sample(const Tensor& fmap, const Tensor& p) {
  require_rank(fmap, 3, "bilinear_sample");
  return sample_normalized(fmap, p, {fmap.dim(0), 1, fmap.dim(1), fmap.dim(2)}, 2, "bilinear_sample");
}

Tensor trilinear_sample(const Tensor& fcube, const Tensor& p) {
  require_rank(fcube, 4, "trilinear_sample");
  return sample_normalized(fcube, p, {fcube.dim(0), fcube.dim(1), fcube.dim(2), fcube.dim(3)}, 3,
                           "trilinear_sample");
}

// ---- convolution -----------------------------------------------------------

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv3dSpec& spec) {
  require_rank(x, 4, "conv3d");
  require_rank(w, 5, "conv3d");
  const std::size_t cin = x.dim(0), cout = w.dim(0);
  if (w.dim(1) != cin) {
    throw DimensionError("conv3d: weight " + shape_str(w.shape()) + " does not accept input " +
                         shape_str(x.shape()));
  }
  if (b.size() != cout) throw DimensionError("conv3d: bias " + shape_str(b.shape()));
  const std::array<std::size_t, 3> in{x.dim(1), x.dim(2), x.dim(3)};
  const std::array<std::size_t, 3> k{w.dim(2), w.dim(3), w.dim(4)};
  std::array<std::size_t, 3> o{};
  for (int ax = 0; ax < 3; ++ax) {
    if (in[ax] + 2 * spec.padding[ax] < k[ax] || spec.stride[ax] == 0) {
      throw DimensionError("conv3d: kernel larger than padded input " + shape_str(x.shape()));
    }
    o[ax] = (in[ax] + 2 * spec.padding[ax] - k[ax]) / spec.stride[ax] + 1;
  }
  const std::size_t kvol = k[0] * k[1] * k[2];
  const std::size_t rows = cin * kvol;
  const std::size_t cols = o[0] * o[1] * o[2];
  const std::size_t in_plane = in[0] * in[1] * in[2];

  // im2col: -1 marks padding taps
  std::vector<long> gather(rows * cols);
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t a = 0; a < k[0]; ++a)
      for (std::size_t bb = 0; bb < k[1]; ++bb)
        for (std::size_t cc = 0; cc < k[2]; ++cc) {
          const std::size_t r = ((ci * k[0] + a) * k[1] + bb) * k[2] + cc;
          for (std::size_t z = 0; z < o[0]; ++z)
            for (std::size_t y = 0; y < o[1]; ++y)
              for (std::size_t xx = 0; xx < o[2]; ++xx) {
                const long iz = static_cast<long>(z * spec.stride[0] + a) - static_cast<long>(spec.padding[0]);
                const long iy = static_cast<long>(y * spec.stride[1] + bb) - static_cast<long>(spec.padding[1]);
                const long ix = static_cast<long>(xx * spec.stride[2] + cc) - static_cast<long>(spec.padding[2]);
                const std::size_t col = (z * o[1] + y) * o[2] + xx;
                long src = -1;
                if (iz >= 0 && iy >= 0 && ix >= 0 && iz < static_cast<long>(in[0]) &&
                    iy < static_cast<long>(in[1]) && ix < static_cast<long>(in[2])) {
                  src = static_cast<long>(ci * in_plane) + (iz * static_cast<long>(in[1]) + iy) * static_cast<long>(in[2]) + ix;
                }
                gather[r * cols + col] = src;
              }
        }
  std::vector<double> colbuf(rows * cols);
  for (std::size_t i = 0; i < colbuf.size(); ++i) colbuf[i] = gather[i] >= 0 ? x[static_cast<std::size_t>(gather[i])] : 0.0;

  std::vector<double> out(cout * cols);
  MapMat Y(out.data(), cout, cols);
  Y.noalias() = CMapMat(w.data().data(), cout, rows) * CMapMat(colbuf.data(), rows, cols);
  for (std::size_t co = 0; co < cout; ++co) Y.row(co).array() += b[co];

  return make_op({cout, o[0], o[1], o[2]}, std::move(out), {&x, &w, &b},
                 [x, w, b, gather = std::move(gather), colbuf = std::move(colbuf), cout, rows,
                  cols](std::span<const double> g) {
                   CMapMat G(g.data(), cout, cols);
                   if (auto gw = grad_sink(w); !gw.empty()) {
                     MapMat(gw.data(), cout, rows).noalias() += G * CMapMat(colbuf.data(), rows, cols).transpose();
                   }
                   if (auto gb = grad_sink(b); !gb.empty()) {
                     for (std::size_t co = 0; co < cout; ++co) gb[co] += G.row(co).sum();
                   }
                   if (auto gx = grad_sink(x); !gx.empty()) {
                     RowMat gcol = CMapMat(w.data().data(), cout, rows).transpose() * G;
                     const double* pc = gcol.data();
                     for (std::size_t i = 0; i < gather.size(); ++i)
                       if (gather[i] >= 0) gx[static_cast<std::size_t>(gather[i])] += pc[i];
                   }
                 });
}

Tensor upsample_nearest(const Tensor& x, std::array<std::size_t, 3> factor) {
  require_rank(x, 4, "upsample_nearest");
  const std::size_t c = x.dim(0);
  const std::array<std::size_t, 3> in{x.dim(1), x.dim(2), x.dim(3)};
  const std::array<std::size_t, 3> o{in[0] * factor[0], in[1] * factor[1], in[2] * factor[2]};
  const std::size_t op = o[0] * o[1] * o[2], ip = in[0] * in[1] * in[2];
  std::vector<std::size_t> src(op);
  for (std::size_t z = 0; z < o[0]; ++z)
    for (std::size_t y = 0; y < o[1]; ++y)
      for (std::size_t xx = 0; xx < o[2]; ++xx)
        src[(z * o[1] + y) * o[2] + xx] =
            ((z / factor[0]) * in[1] + y / factor[1]) * in[2] + xx / factor[2];
  std::vector<double> out(c * op);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < op; ++i) out[ch * op + i] = x[ch * ip + src[i]];
  return make_op({c, o[0], o[1], o[2]}, std::move(out), {&x},
                 [x, src = std::move(src), c, op, ip](std::span<const double> g) {
                   if (auto gx = grad_sink(x); !gx.empty()) {
                     for (std::size_t ch = 0; ch < c; ++ch)
                       for (std::size_t i = 0; i < op; ++i) gx[ch * ip + src[i]] += g[ch * op + i];
                   }
                 });
}

Tensor avg_pool(const Tensor& x, std::array<std::size_t, 3> factor) {
  require_rank(x, 4, "avg_pool");
  const std::size_t c = x.dim(0);
  const std::array<std::size_t, 3> in{x.dim(1), x.dim(2), x.dim(3)};
  for (int ax = 0; ax < 3; ++ax) {
    if (factor[ax] == 0 || in[ax] % factor[ax] != 0) {
      throw DimensionError("avg_pool: extent not divisible by pool factor in " + shape_str(x.shape()));
    }
  }
  const std::array<std::size_t, 3> o{in[0] / factor[0], in[1] / factor[1], in[2] / factor[2]};
  const std::size_t op = o[0] * o[1] * o[2], ip = in[0] * in[1] * in[2];
  const double inv = 1.0 / static_cast<double>(factor[0] * factor[1] * factor[2]);
  std::vector<std::size_t> dst(ip);
  for (std::size_t z = 0; z < in[0]; ++z)
    for (std::size_t y = 0; y < in[1]; ++y)
      for (std::size_t xx = 0; xx < in[2]; ++xx)
        dst[(z * in[1] + y) * in[2] + xx] = ((z / factor[0]) * o[1] + y / factor[1]) * o[2] + xx / factor[2];
  std::vector<double> out(c * op, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < ip; ++i) out[ch * op + dst[i]] += x[ch * ip + i] * inv;
  return make_op({c, o[0], o[1], o[2]}, std::move(out), {&x},
                 [x, dst = std::move(dst), c, op, ip, inv](std::span<const double> g) {
                   if (auto gx = grad_sink(x); !gx.empty()) {
                     for (std::size_t ch = 0; ch < c; ++ch)
                       for (std::size_t i = 0; i < ip; ++i) gx[ch * ip + i] += g[ch * op + dst[i]] * inv;
                   }
                 });
}

}  // namespace rxf
