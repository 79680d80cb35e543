#include "sortrl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "sortrl/util.hpp"

namespace sortrl {

struct Tensor::Node {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Tensor&)> backward_fn;
};

namespace {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  int64_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
                   requires_grad);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, bool requires_grad) {
  int64_t n = shape_numel(shape);
  return from_data(std::move(shape),
                   std::vector<double>(static_cast<size_t>(n), value), requires_grad);
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("tensor: shape does not match data length");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::vec(std::vector<double> values, bool requires_grad) {
  int64_t n = static_cast<int64_t>(values.size());
  return from_data({n}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const std::vector<int64_t>& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
int64_t Tensor::dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
int64_t Tensor::numel() const { return static_cast<int64_t>(node_->data.size()); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("tensor: item() on non-scalar");
  return node_->data[0];
}

double Tensor::at(int64_t i) const {
  if (rank() != 1) throw std::invalid_argument("tensor: at(i) on non-vector");
  return node_->data.at(static_cast<size_t>(i));
}

double Tensor::at(int64_t i, int64_t j) const {
  if (rank() != 2) throw std::invalid_argument("tensor: at(i,j) on non-matrix");
  return node_->data.at(static_cast<size_t>(i * dim(1) + j));
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detached() const {
  return from_data(node_->shape, node_->data, false);
}

Tensor Tensor::make_op(std::vector<int64_t> shape, std::vector<double> data,
                       std::vector<Tensor> parents,
                       std::function<void(Tensor&)> backward, const char* what) {
  ensure_finite(data, what);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  if (shape_numel(node->shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument(std::string(what) + ": shape/data mismatch");
  }
  node->data = std::move(data);
  bool needs = false;
  for (const auto& p : parents) {
    if (p.requires_grad()) needs = true;
    node->parents.push_back(p.node_);
  }
  node->requires_grad = needs;
  if (needs) node->backward_fn = std::move(backward);
  return Tensor(std::move(node));
}

void Tensor::backward() {
  if (numel() != 1) {
    throw std::invalid_argument("backward: output must be a scalar");
  }
  // Iterative post-order DFS over parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  mutable_grad()[0] += 1.0;
  // order is post-order: children after parents were pushed, so reverse
  // iteration visits each node before its parents.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) {
      Tensor handle(std::shared_ptr<Node>(node_, n));  // aliasing, keeps graph alive
      n->backward_fn(handle);
    }
  }
}

// ---------------------------------------------------------------------------
// ops

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw std::invalid_argument("affine: w must be a matrix");
  if (b.rank() != 1) throw std::invalid_argument("affine: b must be a vector");
  const int64_t m = w.dim(0), n = w.dim(1);
  if (b.dim(0) != m) throw std::invalid_argument("affine: bias length mismatch");
  bool batched = x.rank() == 2;
  if (!batched && x.rank() != 1) {
    throw std::invalid_argument("affine: x must be a vector or matrix");
  }
  const int64_t bs = batched ? x.dim(0) : 1;
  if ((batched ? x.dim(1) : x.dim(0)) != n) {
    throw std::invalid_argument("affine: inner dimensions disagree");
  }

  std::vector<double> out(static_cast<size_t>(bs * m));
  auto xd = x.data();
  auto wd = w.data();
  auto bd = b.data();
  for (int64_t r = 0; r < bs; ++r) {
    const double* xr = xd.data() + r * n;
    double* or_ = out.data() + r * m;
    for (int64_t j = 0; j < m; ++j) {
      const double* wr = wd.data() + j * n;
      double acc = bd[static_cast<size_t>(j)];
      for (int64_t i = 0; i < n; ++i) acc += wr[i] * xr[i];
      or_[j] = acc;
    }
  }
  std::vector<int64_t> oshape = batched ? std::vector<int64_t>{bs, m}
                                        : std::vector<int64_t>{m};
  Tensor xc = x, wc = w, bc = b;
  return Tensor::make_op(
      std::move(oshape), std::move(out), {x, w, b},
      [xc, wc, bc, bs, m, n](Tensor& o) mutable {
        auto go = o.grad();
        auto xd = xc.data();
        auto wd = wc.data();
        if (xc.requires_grad()) {
          auto gx = xc.mutable_grad();
          for (int64_t r = 0; r < bs; ++r)
            for (int64_t j = 0; j < m; ++j) {
              double g = go[static_cast<size_t>(r * m + j)];
              const double* wr = wd.data() + j * n;
              double* gxr = gx.data() + r * n;
              for (int64_t i = 0; i < n; ++i) gxr[i] += g * wr[i];
            }
        }
        if (wc.requires_grad()) {
          auto gw = wc.mutable_grad();
          for (int64_t r = 0; r < bs; ++r)
            for (int64_t j = 0; j < m; ++j) {
              double g = go[static_cast<size_t>(r * m + j)];
              const double* xr = xd.data() + r * n;
              double* gwr = gw.data() + j * n;
              for (int64_t i = 0; i < n; ++i) gwr[i] += g * xr[i];
            }
        }
        if (bc.requires_grad()) {
          auto gb = bc.mutable_grad();
          for (int64_t r = 0; r < bs; ++r)
            for (int64_t j = 0; j < m; ++j)
              gb[static_cast<size_t>(j)] += go[static_cast<size_t>(r * m + j)];
        }
      },
      "affine");
}

SortResult sort_desc(const Tensor& x) {
  if (x.rank() != 1 || x.numel() == 0) {
    throw std::invalid_argument("sort_desc: nonempty vector required");
  }
  const int64_t n = x.numel();
  auto xd = x.data();
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&xd](int64_t a, int64_t b) {
    return xd[static_cast<size_t>(a)] > xd[static_cast<size_t>(b)];
  });
  std::vector<double> vals(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j) vals[static_cast<size_t>(j)] = xd[static_cast<size_t>(perm[static_cast<size_t>(j)])];
  Tensor xc = x;
  auto permc = perm;
  Tensor out = Tensor::make_op(
      {n}, std::move(vals), {x},
      [xc, permc, n](Tensor& o) mutable {
        auto go = o.grad();
        auto gx = xc.mutable_grad();
        for (int64_t j = 0; j < n; ++j)
          gx[static_cast<size_t>(permc[static_cast<size_t>(j)])] += go[static_cast<size_t>(j)];
      },
      "sort_desc");
  return {std::move(out), std::move(perm)};
}

namespace {

Tensor elementwise(const Tensor& x, double (*f)(double), double (*df)(double),
                   const char* what) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = f(v);
  Tensor xc = x;
  return Tensor::make_op(
      x.shape(), std::move(out), {x},
      [xc, df](Tensor& o) mutable {
        auto go = o.grad();
        auto xd = xc.data();
        auto gx = xc.mutable_grad();
        for (size_t i = 0; i < xd.size(); ++i) gx[i] += go[i] * df(xd[i]);
      },
      what);
}

}  // namespace

Tensor abs_elem(const Tensor& x) {
  return elementwise(
      x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); },
      "abs_elem");
}

Tensor relu(const Tensor& x) {
  return elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor log_sum_exp(const Tensor& z) {
  if (z.rank() != 1 || z.numel() == 0) {
    throw std::invalid_argument("log_sum_exp: nonempty vector required");
  }
  auto zd = z.data();
  double m = zd[0];
  for (double v : zd) m = std::max(m, v);
  double s = 0.0;
  for (double v : zd) s += std::exp(v - m);
  double val = m + std::log(s);
  Tensor zc = z;
  return Tensor::make_op(
      {1}, {val}, {z},
      [zc, m, s](Tensor& o) mutable {
        double g = o.grad()[0];
        auto zd = zc.data();
        auto gz = zc.mutable_grad();
        for (size_t i = 0; i < zd.size(); ++i)
          gz[i] += g * std::exp(zd[i] - m) / s;
      },
      "log_sum_exp");
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  Tensor ac = a, bc = b;
  return Tensor::make_op(
      a.shape(), std::move(out), {a, b},
      [ac, bc](Tensor& o) mutable {
        auto go = o.grad();
        if (ac.requires_grad()) {
          auto g = ac.mutable_grad();
          for (size_t i = 0; i < go.size(); ++i) g[i] += go[i];
        }
        if (bc.requires_grad()) {
          auto g = bc.mutable_grad();
          for (size_t i = 0; i < go.size(); ++i) g[i] += go[i];
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  Tensor ac = a, bc = b;
  return Tensor::make_op(
      a.shape(), std::move(out), {a, b},
      [ac, bc](Tensor& o) mutable {
        auto go = o.grad();
        if (ac.requires_grad()) {
          auto g = ac.mutable_grad();
          for (size_t i = 0; i < go.size(); ++i) g[i] += go[i];
        }
        if (bc.requires_grad()) {
          auto g = bc.mutable_grad();
          for (size_t i = 0; i < go.size(); ++i) g[i] -= go[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  Tensor ac = a, bc = b;
  return Tensor::make_op(
      a.shape(), std::move(out), {a, b},
      [ac, bc](Tensor& o) mutable {
        auto go = o.grad();
        auto ad = ac.data();
        auto bd2 = bc.data();
        if (ac.requires_grad()) {
          auto g = ac.mutable_grad();
          for (size_t i = 0; i < go.size(); ++i) g[i] += go[i] * bd2[i];
        }
        if (bc.requires_grad()) {
          auto g = bc.mutable_grad();
          for (size_t i = 0; i < go.size(); ++i) g[i] += go[i] * ad[i];
        }
      },
      "mul");
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= c;
  Tensor ac = a;
  return Tensor::make_op(
      a.shape(), std::move(out), {a},
      [ac, c](Tensor& o) mutable {
        auto go = o.grad();
        auto g = ac.mutable_grad();
        for (size_t i = 0; i < go.size(); ++i) g[i] += go[i] * c;
      },
      "scale");
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor ac = a;
  return Tensor::make_op(
      {1}, {s}, {a},
      [ac](Tensor& o) mutable {
        double g = o.grad()[0];
        auto gx = ac.mutable_grad();
        for (double& v : gx) v += g;
      },
      "sum_all");
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
  double s = 0.0;
  for (double v : a.data()) s += v;
  double inv = 1.0 / static_cast<double>(a.numel());
  Tensor ac = a;
  return Tensor::make_op(
      {1}, {s * inv}, {a},
      [ac, inv](Tensor& o) mutable {
        double g = o.grad()[0] * inv;
        auto gx = ac.mutable_grad();
        for (double& v : gx) v += g;
      },
      "mean_all");
}

Tensor gather_rows(const Tensor& m, const std::vector<int>& cols) {
  if (m.rank() != 2) throw std::invalid_argument("gather_rows: matrix required");
  const int64_t rows = m.dim(0), width = m.dim(1);
  if (static_cast<int64_t>(cols.size()) != rows) {
    throw std::invalid_argument("gather_rows: one column index per row required");
  }
  std::vector<double> out(static_cast<size_t>(rows));
  auto md = m.data();
  for (int64_t r = 0; r < rows; ++r) {
    int c = cols[static_cast<size_t>(r)];
    if (c < 0 || c >= width) throw std::invalid_argument("gather_rows: column out of range");
    out[static_cast<size_t>(r)] = md[static_cast<size_t>(r * width + c)];
  }
  Tensor mc = m;
  auto colsc = cols;
  return Tensor::make_op(
      {rows}, std::move(out), {m},
      [mc, colsc, width](Tensor& o) mutable {
        auto go = o.grad();
        auto g = mc.mutable_grad();
        for (size_t r = 0; r < colsc.size(); ++r)
          g[r * static_cast<size_t>(width) + static_cast<size_t>(colsc[r])] += go[r];
      },
      "gather_rows");
}

Tensor pick(const Tensor& v, int64_t i) {
  if (v.rank() != 1) throw std::invalid_argument("pick: vector required");
  if (i < 0 || i >= v.numel()) throw std::invalid_argument("pick: index out of range");
  Tensor vc = v;
  return Tensor::make_op(
      {1}, {v.at(i)}, {v},
      [vc, i](Tensor& o) mutable {
        vc.mutable_grad()[static_cast<size_t>(i)] += o.grad()[0];
      },
      "pick");
}

Tensor huber_mean(const Tensor& pred, const std::vector<double>& target,
                  double delta) {
  if (pred.rank() != 1 || pred.numel() == 0) {
    throw std::invalid_argument("huber_mean: nonempty vector required");
  }
  if (static_cast<int64_t>(target.size()) != pred.numel()) {
    throw std::invalid_argument("huber_mean: target length mismatch");
  }
  const size_t n = target.size();
  auto pd = pred.data();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = pd[i] - target[i];
    double a = std::fabs(d);
    acc += a <= delta ? 0.5 * d * d : delta * (a - 0.5 * delta);
  }
  double inv = 1.0 / static_cast<double>(n);
  Tensor pc = pred;
  auto tc = target;
  return Tensor::make_op(
      {1}, {acc * inv}, {pred},
      [pc, tc, delta, inv](Tensor& o) mutable {
        double g = o.grad()[0] * inv;
        auto pd = pc.data();
        auto gp = pc.mutable_grad();
        for (size_t i = 0; i < tc.size(); ++i) {
          double d = pd[i] - tc[i];
          double dd = std::fabs(d) <= delta ? d : delta * (d > 0 ? 1.0 : -1.0);
          gp[i] += g * dd;
        }
      },
      "huber_mean");
}

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double h) {
  Tensor xg = Tensor::from_data(x.shape(), {x.data().begin(), x.data().end()}, true);
  Tensor y = f(xg);
  if (y.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  y.backward();
  std::vector<double> analytic(static_cast<size_t>(xg.numel()), 0.0);
  if (xg.has_grad()) analytic.assign(xg.grad().begin(), xg.grad().end());

  std::vector<double> base(x.data().begin(), x.data().end());
  double max_err = 0.0;
  for (size_t i = 0; i < base.size(); ++i) {
    auto probe = base;
    probe[i] = base[i] + h;
    double fp = f(Tensor::from_data(x.shape(), probe)).item();
    probe[i] = base[i] - h;
    double fm = f(Tensor::from_data(x.shape(), probe)).item();
    double cd = (fp - fm) / (2.0 * h);
    double err = std::fabs(analytic[i] - cd) / std::max(1.0, std::fabs(cd));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace sortrl
