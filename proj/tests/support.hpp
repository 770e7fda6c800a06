#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rxf/random.hpp"
#include "rxf/tensor.hpp"

namespace rxf::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

struct GradCheck {
  // worst per-tensor ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-3 * G),
  // G the largest per-tensor gradient norm. The floor keeps tensors whose true
  // gradient vanishes (e.g. a key bias under softmax) from comparing rounding noise.
  double max_rel = 0;
  std::size_t worst = 0;
};

// Central-difference check of the tape gradient of the scalar f() with respect
// to each tensor in `inputs`. At most `max_elems` coordinates per tensor are
// perturbed (chosen with `seed`); the rest are not compared.
inline GradCheck gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h = 1e-6,
                           std::size_t max_elems = static_cast<std::size_t>(-1), std::uint64_t seed = 0) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(f());
  }
  Rng rng(seed);
  GradCheck out;
  struct Norms {
    double diff, analytic, numeric;
  };
  std::vector<Norms> norms;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_elems) {
      for (std::size_t i = 0; i < max_elems; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      idx.resize(max_elems);
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    auto x = t.mutable_data();
    for (std::size_t i : idx) {
      const double v = x[i];
      x[i] = v + h;
      const double fp = f().item();
      x[i] = v - h;
      const double fm = f().item();
      x[i] = v;
      const double num = (fp - fm) / (2 * h);
      diff2 += (analytic[i] - num) * (analytic[i] - num);
      a2 += analytic[i] * analytic[i];
      n2 += num * num;
    }
    norms.push_back({std::sqrt(diff2), std::sqrt(a2), std::sqrt(n2)});
  }
  double scale = 0;
  for (const auto& n : norms) scale = std::max({scale, n.analytic, n.numeric});
  for (std::size_t k = 0; k < norms.size(); ++k) {
    const auto& n = norms[k];
    const double rel = n.diff / std::max({n.analytic, n.numeric, 1e-3 * scale, 1e-12});
    if (rel > out.max_rel) {
      out.max_rel = rel;
      out.worst = k;
    }
  }
  return out;
}

// Fixed random projection so a non-scalar output reduces to a scalar whose
// gradient touches every element with a distinct weight.
inline Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed ^ 0xABCDEFULL);
  const Tensor w = random_tensor(rng, y.shape());
  return sum(mul(y, w));
}

}  // namespace rxf::testing
