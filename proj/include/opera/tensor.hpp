#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace opera::tensor {

using Shape = std::vector<std::size_t>;

// Dense row-major f64 array. The kernel works on rank-2 shapes; a scalar is
// {1,1} and a row vector {1,n}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v) { return full({1, 1}, v); }
  static Tensor row(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;  // value of a {1,1} tensor

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Named trainable tensor with an accumulated gradient of the same shape.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param(std::string name_, Tensor init)
      : name(std::move(name_)), value(std::move(init)), grad(Tensor::zeros(value.shape())) {}
  void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), 0.0); }
};

// Handle to a node on a tape.
struct Ref {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Records a forward pass and replays it in reverse for gradients. One tape
// per forward pass; backward may run once. Every public operation checks
// shapes and rejects non-finite results.
class Tape {
 public:
  Ref constant(Tensor t);  // leaf without a gradient path
  Ref leaf(Param& p);      // leaf whose gradient accumulates into p.grad

  Ref matmul(Ref a, Ref b);
  Ref transpose(Ref a);
  Ref add(Ref a, Ref b);
  Ref mul(Ref a, Ref b);  // elementwise
  Ref scale(Ref a, double c);
  Ref concat_cols(const std::vector<Ref>& parts);
  Ref slice_rows(Ref a, std::size_t begin, std::size_t end);
  Ref broadcast_rows(Ref a, std::size_t rows);  // {1,c} -> {rows,c}
  Ref softmax(Ref a);                           // per row
  Ref log_softmax(Ref a);                       // per row
  Ref gelu(Ref a);                              // tanh approximation
  Ref layer_norm(Ref x, Ref gain, Ref bias);    // per row, eps 1e-6
  Ref log(Ref a);
  Ref sum(Ref a);   // over all elements -> {1,1}
  Ref mean(Ref a);  // over all elements -> {1,1}
  Ref gather_rows(Ref table, std::vector<std::size_t> row_ids);
  Ref pick(Ref a, std::size_t r, std::size_t c);  // -> {1,1}
  Ref logsumexp(Ref a);                           // {1,n} -> {1,1}

  const Tensor& value(Ref r) const;
  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(loss)/d(param) into every reachable Param.grad. The loss
  // must be a {1,1} node with a gradient path; a second call is an error.
  void backward(Ref loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_ready = false;
    bool needs_grad = false;
    std::function<void(Tape&, const Node&)> back;  // may be empty for leaves
  };

  Ref push(Tensor value, bool needs_grad, std::function<void(Tape&, const Node&)> back,
           const char* op_name);
  Tensor& grad_of(std::size_t id);
  const Node& node(Ref r) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// GeLU via the tanh approximation; fixed reference constants shared by the
// forward and backward paths.
double gelu_scalar(double x);

inline constexpr double kLayerNormEps = 1e-6;

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass = true;
  std::string csv() const;  // param,max_rel_err,pass
};

// Central-difference check of d(loss)/d(param) for every listed param,
// sampling up to max_coords coordinates each. `loss_with_grad` must build a
// fresh tape, run forward and backward, and return the loss value; it is
// called twice up front to reject non-deterministic functions. Differences
// at or below abs_floor count as exact.
GradCheckReport gradcheck(const std::function<double()>& loss_with_grad,
                          const std::vector<Param*>& params, double h = 1e-5,
                          double rel_tol = 1e-4, std::uint64_t seed = 0,
                          std::size_t max_coords = 200, double abs_floor = 1e-8);

}  // namespace opera::tensor
