#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sortrl {

// Dense 64-bit float tensor with reverse-mode differentiation. Graphs are
// rebuilt on every forward pass; a Tensor is a shared handle to one graph
// node. Values are immutable once produced by an op; only optimizer steps
// write through mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor vec(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int64_t>& shape() const;
  int rank() const;
  int64_t dim(int i) const;
  int64_t numel() const;
  bool requires_grad() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;                       // numel()==1
  double at(int64_t i) const;                // rank 1
  double at(int64_t i, int64_t j) const;     // rank 2

  bool has_grad() const;
  std::span<const double> grad() const;      // empty span when absent
  std::span<double> mutable_grad();          // allocates zeros when absent
  void zero_grad();

  // Reverse pass from a scalar (seeds d(out)/d(out) = 1).
  void backward();

  // Value copy detached from any graph.
  Tensor detached() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Low-level builder for custom ops. `backward` receives the finished
  // output node and accumulates into the parents' mutable_grad(); it is
  // only retained when some parent requires grad.
  static Tensor make_op(std::vector<int64_t> shape, std::vector<double> data,
                        std::vector<Tensor> parents,
                        std::function<void(Tensor&)> backward,
                        const char* what);

 private:
  struct Node;
  std::shared_ptr<Node> node_;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
};

// w.x + b. Accepts x of shape [n] or [batch, n]; w is [m, n]; b is [m].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

struct SortResult {
  Tensor values;               // nonincreasing
  std::vector<int64_t> perm;   // output position -> input index
};
// Descending sort of a vector; ties broken by input index (stable).
SortResult sort_desc(const Tensor& x);

Tensor abs_elem(const Tensor& x);   // subgradient 0 at 0
Tensor relu(const Tensor& x);       // subgradient 0 at 0
Tensor log_sum_exp(const Tensor& z);  // vector -> scalar, max-shifted

Tensor add(const Tensor& a, const Tensor& b);   // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// Picks m[i, cols[i]] for each row.
Tensor gather_rows(const Tensor& m, const std::vector<int>& cols);
// Picks one element of a vector as a scalar.
Tensor pick(const Tensor& v, int64_t i);
// Mean Huber loss of (pred - target); pred is [n], target plain values.
Tensor huber_mean(const Tensor& pred, const std::vector<double>& target,
                  double delta);

// Max over coordinates of |analytic - central difference| / max(1, |cd|).
// f must map a tensor shaped like x to a scalar. Runs one backward pass,
// so gradients accumulate into any parameters f captures.
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double h);

}  // namespace sortrl
