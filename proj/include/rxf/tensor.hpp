#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rxf {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Thrown when operand extents are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a caller violates an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorData {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

/// Dense row-major f64 array. Copies share storage; values are not mutated
/// after an op produces them (parameters are the exception, updated in place
/// by optimizers between steps).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  std::size_t rank() const { return p_->shape.size(); }
  std::size_t dim(std::size_t i) const { return p_->shape.at(i); }
  std::size_t size() const { return p_->data.size(); }

  std::span<const double> data() const { return p_->data; }
  std::span<double> mutable_data() { return p_->data; }
  double operator[](std::size_t i) const { return p_->data[i]; }
  double item() const;

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool on) { p_->requires_grad = on; }

  bool has_grad() const { return !p_->grad.empty(); }
  /// Gradient view; zeros if nothing has been accumulated yet.
  std::span<const double> grad() const;
  /// Mutable gradient storage, allocated on demand.
  std::span<double> grad_storage();
  void zero_grad();

  /// Copy of the values, off the tape.
  Tensor detach() const;

  const std::shared_ptr<TensorData>& impl() const { return p_; }

 private:
  std::shared_ptr<TensorData> p_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out)>;

/// Ordered record of differentiable operations. Nodes are appended as ops run,
/// so parents always precede children.
class Tape {
 public:
  struct Node {
    std::shared_ptr<TensorData> output;
    BackwardFn backward;
  };

  void record(const Tensor& output, BackwardFn fn);
  /// Propagates d(loss)/d(.) to every requires_grad leaf. Leaf gradients
  /// accumulate across calls; intermediate gradients are recomputed.
  void backward(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

/// Installs a tape as the calling thread's recording target for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

Tape* active_tape();

/// Builds an op result and, when recording and any input requires grad,
/// registers `backward` on the active tape. The closure must accumulate into
/// input gradients through grad_sink().
Tensor make_op(Shape shape, std::vector<double> data,
               std::initializer_list<const Tensor*> inputs, BackwardFn backward);
Tensor make_op(Shape shape, std::vector<double> data,
               const std::vector<Tensor>& inputs, BackwardFn backward);

/// Gradient accumulator for an op input; empty span if it takes no gradient.
std::span<double> grad_sink(const Tensor& t);

// ---- differentiable ops ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// a[m x n] + bias[n], broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
/// x[C x ...] + bias[C], broadcast over trailing extents.
Tensor add_channel(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
/// Scales each row of a[m x n] to unit L2 norm (eps-guarded).
Tensor row_normalize(const Tensor& a, double eps = 1e-12);

/// Samples fmap[C x H x W] at a normalized point p = (h, w) in [0,1]^2.
/// Grid node i sits at i / (extent - 1); corners outside the map read zero.
Tensor bilinear_sample(const Tensor& fmap, const Tensor& p);
/// Samples fcube[C x R x E x A] at a normalized point p = (r, e, a) in [0,1]^3.
Tensor trilinear_sample(const Tensor& fcube, const Tensor& p);

struct Conv3dSpec {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{1, 1, 1};
};

/// x[Cin x D x H x W] * w[Cout x Cin x kd x kh x kw] + b[Cout].
/// A 2D convolution is the D = kd = 1 case.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv3dSpec& spec);
Tensor upsample_nearest(const Tensor& x, std::array<std::size_t, 3> factor);
Tensor avg_pool(const Tensor& x, std::array<std::size_t, 3> factor);

// ---- sampling kernels shared with the attention modules --------------------

/// Multilinear sampling at continuous cell index `pos` (one entry per spatial
/// axis; cells at integer positions) of a [C x S0 x S1 x S2] volume.
/// Accumulates weight * value into out[0..C).
void sample_accumulate(std::span<const double> vol, const std::array<std::size_t, 4>& shape,
                       const std::array<double, 3>& pos, double weight, std::span<double> out);

/// Adjoint of sample_accumulate. Given g = dL/d(out), adds dL/d(vol) into
/// vol_grad (if non-empty) and returns dL/d(pos) and dL/d(weight).
struct SampleGrad {
  std::array<double, 3> pos{0, 0, 0};
  double weight = 0;
};
SampleGrad sample_backward(std::span<const double> vol, const std::array<std::size_t, 4>& shape,
                           const std::array<double, 3>& pos, double weight,
                           std::span<const double> g, std::span<double> vol_grad);

}  // namespace rxf
