#pragma once

// Minimal dense reverse-mode differentiation: 64-bit row-major tensors, a
// tape of recorded operations, the handful of operators the message-passing
// model needs, Huber loss, AdamW and a central-difference gradient checker.
//
// Matrix products go through Eigen maps over the tensors' buffers. Every
// reduction runs in a fixed sequential order, so identical inputs give
// bit-identical outputs and gradients.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "porenet/error.hpp"
#include "porenet/rng.hpp"

namespace porenet {

namespace detail {

// Leaves doubles uninitialised on resize, so buffers that are fully
// overwritten are not zero-filled first. Blocks are 64-byte aligned: Eigen
// peels unaligned heads off its vectorised reductions, so without a fixed
// alignment the summation order (and the last bits) would depend on malloc.
template <class T>
struct NoInitAlloc : std::allocator<T> {
  static constexpr std::align_val_t kAlign{64};
  template <class U>
  struct rebind {
    using other = NoInitAlloc<U>;
  };
  NoInitAlloc() = default;
  template <class U>
  NoInitAlloc(const NoInitAlloc<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

class Tensor {
 public:
  using Storage = std::vector<double, detail::NoInitAlloc<double>>;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : shape_{rows, cols}, data_(rows * cols, fill) {}
  Tensor(std::vector<std::size_t> shape, const std::vector<double>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_size();
  }
  Tensor(std::vector<std::size_t> shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) { check_size(); }
  Tensor(std::vector<std::size_t> shape, std::initializer_list<double> data) : shape_(std::move(shape)), data_(data) { check_size(); }
  /// Contents unspecified; for outputs that are written in full.
  static Tensor uninit(std::size_t rows, std::size_t cols) {
    Tensor t;
    t.shape_ = {rows, cols};
    t.data_.resize(rows * cols);
    return t;
  }

 private:
  void check_size() const {
    std::size_t n = 1;
    for (std::size_t s : shape_) n *= s;
    if (n != data_.size()) throw ShapeError("tensor value count does not match its shape");
  }

 public:
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }
  static Tensor column(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n, 1}, std::move(v));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const {
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
    return shape_.empty() ? 0 : c;
  }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const {
    if (!is_scalar()) throw ShapeError("item() on a non-scalar tensor " + shape_str());
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "x" : "") + std::to_string(shape_[i]);
    return s + "]";
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_{0, 0};
  Storage data_;
};

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;
inline Map mat(Tensor& t) { return Map(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
inline CMap mat(const Tensor& t) { return CMap(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
inline Map mat(double* p, std::size_t r, std::size_t c) { return Map(p, Eigen::Index(r), Eigen::Index(c)); }
inline CMap mat(const double* p, std::size_t r, std::size_t c) { return CMap(p, Eigen::Index(r), Eigen::Index(c)); }
}  // namespace detail

// ---------------------------------------------------------------------------
// Parameters and optimizer state

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;  // first moment
  Tensor v;  // second moment
  std::uint64_t steps = 0;
};

class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value) {
    if (index_.count(name)) throw Error("duplicate parameter name '" + name + "'");
    std::size_t id = params_.size();
    index_[name] = id;
    Param p;
    p.name = std::move(name);
    p.grad = Tensor(value.shape(), Tensor::Storage(value.size(), 0.0));
    p.m = p.grad;
    p.v = p.grad;
    p.value = std::move(value);
    params_.push_back(std::move(p));
    return id;
  }

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }

  std::size_t id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Tape

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using Index = std::shared_ptr<const std::vector<std::size_t>>;

inline Index make_index(std::vector<std::size_t> v) { return std::make_shared<const std::vector<std::size_t>>(std::move(v)); }

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor v) {
    nodes_.push_back(Node{std::move(v), nullptr, {}, nullptr, {}, false});
    return Var(this, nodes_.size() - 1);
  }

  /// Leaf bound to a stored parameter; its gradient accumulates into the
  /// parameter's grad tensor.
  Var param(ParamStore& store, std::size_t id) {
    Param& p = store[id];
    nodes_.push_back(Node{{}, &p.value, {}, &p.grad, {}, true});
    return Var(this, nodes_.size() - 1);
  }

  Var record(Tensor v, std::initializer_list<Var> inputs, Backward bw) { return record(std::move(v), std::span<const Var>(inputs.begin(), inputs.size()), std::move(bw)); }

  Var record(Tensor v, std::span<const Var> inputs, Backward bw) {
    bool rg = false;
    for (const Var& in : inputs) {
      if (in.tape() != this) throw Error("operand recorded on a different tape");
      rg = rg || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(v), nullptr, {}, nullptr, rg ? std::move(bw) : Backward{}, rg});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad_sink) return *n.grad_sink;
    if (n.grad.size() != value(id).size() || n.grad.shape() != value(id).shape())
      n.grad = Tensor(value(id).shape(), Tensor::Storage(value(id).size(), 0.0));
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() > 0 || nodes_[id].grad_sink; }

  /// Reverse sweep from a scalar. Parameter gradients accumulate into their
  /// ParamStore entries (callers zero them first).
  void backward(Var out) {
    if (!out.value().is_scalar())
      throw ShapeError("backward needs a scalar output, got " + out.value().shape_str());
    if (!nodes_[out.id()].requires_grad) return;
    grad(out.id())[0] += 1.0;
    for (std::size_t i = out.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // Pre-activations seen by leaky_relu, kept only when recording is on (used
  // by the gradient checker to spot kink crossings).
  bool record_kinks = false;
  std::vector<double> kink_inputs;

 private:
  struct Node {
    Tensor value;
    const Tensor* external;
    Tensor grad;
    Tensor* grad_sink;
    Backward backward;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {
inline void require_same(const char* op, const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": operand shapes differ, " + a.value().shape_str() + " vs " + b.value().shape_str());
}
inline Tape& tape_of(const Var& v) {
  if (!v.valid()) throw Error("operation on an empty Var");
  return *v.tape();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Operators

inline Var add(Var a, Var b) {
  detail::require_same("add", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (Var in : {a, b})
      if (t.requires_grad(in.id())) {
        Tensor& gi = t.grad(in.id());
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id())) {
      Tensor& ga = t.grad(a.id());
      const Tensor& vb = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(b.id())) {
      Tensor& gb = t.grad(b.id());
      const Tensor& va = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return detail::tape_of(a).record(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

/// Elementwise (x[i] / d[row])-style scaling of rows by fixed factors.
inline Var scale_rows(Var a, std::shared_ptr<const std::vector<double>> factors) {
  if (factors->size() != a.rows()) throw ShapeError("scale_rows: factor count does not match row count");
  Tensor out = a.value();
  const std::size_t c = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] *= (*factors)[r];
  return detail::tape_of(a).record(std::move(out), {a}, [a, factors, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a.id());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t k = 0; k < c; ++k) ga[r * c + k] += (*factors)[r] * g[r * c + k];
  });
}

/// y = x W^T + b with x: n x in, W: out x in, b: 1 x out.
inline Var linear(Var x, Var w, Var b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  if (X.cols() != W.cols() || B.size() != W.rows())
    throw ShapeError("linear: input " + X.shape_str() + ", weight " + W.shape_str() + ", bias " + B.shape_str());
  Tensor out = Tensor::uninit(X.rows(), W.rows());
  auto Y = detail::mat(out);
  Y.noalias() = detail::mat(X) * detail::mat(W).transpose();
  Y.rowwise() += detail::mat(B.data(), 1, B.size()).row(0);
  return detail::tape_of(x).record(std::move(out), {x, w, b}, [x, w, b](Tape& t, std::size_t self) {
    auto G = detail::mat(t.grad(self));
    if (t.requires_grad(x.id())) detail::mat(t.grad(x.id())).noalias() += G * detail::mat(w.value());
    if (t.requires_grad(w.id())) detail::mat(t.grad(w.id())).noalias() += G.transpose() * detail::mat(x.value());
    if (t.requires_grad(b.id())) {
      Tensor& gb = t.grad(b.id());
      detail::mat(gb.data(), 1, gb.size()).row(0) += G.colwise().sum();
    }
  });
}

/// Rows partitioned into groups; rows of group g are order[offsets[g] .. offsets[g+1]).
struct GroupIndex {
  std::vector<std::size_t> offsets;  // size = groups + 1
  std::vector<std::size_t> order;    // row ids grouped
  bool contiguous = false;           // order is the identity

  std::size_t groups() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t rows() const { return order.size(); }

  /// group_of_row[r] in [0, n_groups).
  static GroupIndex from_assignment(std::span<const std::size_t> group_of_row, std::size_t n_groups) {
    GroupIndex gi;
    gi.offsets.assign(n_groups + 1, 0);
    for (std::size_t g : group_of_row) {
      if (g >= n_groups) throw ShapeError("group id out of range");
      ++gi.offsets[g + 1];
    }
    for (std::size_t g = 0; g < n_groups; ++g) gi.offsets[g + 1] += gi.offsets[g];
    gi.order.resize(group_of_row.size());
    std::vector<std::size_t> cursor(gi.offsets.begin(), gi.offsets.end() - 1);
    for (std::size_t r = 0; r < group_of_row.size(); ++r) gi.order[cursor[group_of_row[r]]++] = r;
    gi.contiguous = true;
    for (std::size_t r = 0; r < gi.order.size(); ++r)
      if (gi.order[r] != r) {
        gi.contiguous = false;
        break;
      }
    return gi;
  }
};

/// Per-group linear map: row r of group g gets y_r = W_g x_r + b_g. Weights
/// and biases are given per group and may repeat (shared banks).
inline Var grouped_linear(Var x, std::shared_ptr<const GroupIndex> groups, std::vector<Var> ws, std::vector<Var> bs) {
  const Tensor& X = x.value();
  const std::size_t ng = groups->groups();
  if (ws.size() != ng || (bs.size() != ng && !bs.empty())) throw ShapeError("grouped_linear: one weight (and bias, if any) per group required");
  if (groups->rows() != X.rows()) throw ShapeError("grouped_linear: group index covers " + std::to_string(groups->rows()) + " rows, input has " + std::to_string(X.rows()));
  if (ng == 0) throw ShapeError("grouped_linear: no groups");
  const std::size_t in = X.cols(), outd = ws[0].value().rows();
  for (std::size_t g = 0; g < ng; ++g)
    if (ws[g].value().cols() != in || ws[g].value().rows() != outd || (!bs.empty() && bs[g].value().size() != outd))
      throw ShapeError("grouped_linear: bank " + std::to_string(g) + " has weight " + ws[g].value().shape_str() +
                       (bs.empty() ? std::string() : ", bias " + bs[g].value().shape_str()) + " for input " + X.shape_str());
  Tensor out = Tensor::uninit(X.rows(), outd);
  Tensor::Storage xbuf, ybuf;
  for (std::size_t g = 0; g < ng; ++g) {
    const std::size_t lo = groups->offsets[g], n = groups->offsets[g + 1] - lo;
    if (n == 0) continue;
    const Tensor& W = ws[g].value();
    const double* B = bs.empty() ? nullptr : bs[g].value().data();
    if (groups->contiguous) {
      auto Y = detail::mat(out.data() + lo * outd, n, outd);
      Y.noalias() = detail::mat(X.data() + lo * in, n, in) * detail::mat(W).transpose();
      if (B) Y.rowwise() += detail::mat(B, 1, outd).row(0);
    } else {
      xbuf.resize(n * in);
      ybuf.resize(n * outd);
      for (std::size_t r = 0; r < n; ++r) std::copy_n(X.data() + groups->order[lo + r] * in, in, xbuf.data() + r * in);
      auto Y = detail::mat(ybuf.data(), n, outd);
      Y.noalias() = detail::mat(xbuf.data(), n, in) * detail::mat(W).transpose();
      if (B) Y.rowwise() += detail::mat(B, 1, outd).row(0);
      for (std::size_t r = 0; r < n; ++r) std::copy_n(ybuf.data() + r * outd, outd, out.data() + groups->order[lo + r] * outd);
    }
  }
  std::vector<Var> inputs;
  inputs.reserve(1 + 2 * ng);
  inputs.push_back(x);
  inputs.insert(inputs.end(), ws.begin(), ws.end());
  inputs.insert(inputs.end(), bs.begin(), bs.end());
  return detail::tape_of(x).record(std::move(out), inputs, [x, groups, ws = std::move(ws), bs = std::move(bs), in, outd](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    const Tensor& X = x.value();
    const bool gx = t.requires_grad(x.id());
    Tensor::Storage gbuf, xbuf, dxbuf;
    for (std::size_t g = 0; g < groups->groups(); ++g) {
      const std::size_t lo = groups->offsets[g], n = groups->offsets[g + 1] - lo;
      if (n == 0) continue;
      const double* gp;
      const double* xp;
      if (groups->contiguous) {
        gp = G.data() + lo * outd;
        xp = X.data() + lo * in;
      } else {
        gbuf.resize(n * outd);
        xbuf.resize(n * in);
        for (std::size_t r = 0; r < n; ++r) {
          std::copy_n(G.data() + groups->order[lo + r] * outd, outd, gbuf.data() + r * outd);
          std::copy_n(X.data() + groups->order[lo + r] * in, in, xbuf.data() + r * in);
        }
        gp = gbuf.data();
        xp = xbuf.data();
      }
      auto Gm = detail::mat(gp, n, outd);
      if (t.requires_grad(ws[g].id())) detail::mat(t.grad(ws[g].id())).noalias() += Gm.transpose() * detail::mat(xp, n, in);
      if (!bs.empty() && t.requires_grad(bs[g].id())) {
        Tensor& gb = t.grad(bs[g].id());
        detail::mat(gb.data(), 1, outd).row(0) += Gm.colwise().sum();
      }
      if (gx) {
        Tensor& GX = t.grad(x.id());
        if (groups->contiguous) {
          detail::mat(GX.data() + lo * in, n, in).noalias() += Gm * detail::mat(ws[g].value());
        } else {
          dxbuf.resize(n * in);
          detail::mat(dxbuf.data(), n, in).noalias() = Gm * detail::mat(ws[g].value());
          for (std::size_t r = 0; r < n; ++r) {
            double* dst = GX.data() + groups->order[lo + r] * in;
            for (std::size_t k = 0; k < in; ++k) dst[k] += dxbuf[r * in + k];
          }
        }
      }
    }
  });
}

/// Columns [lo, lo + n) of x.
inline Var column_block(Var x, std::size_t lo, std::size_t n) {
  const Tensor& X = x.value();
  const std::size_t c = X.cols();
  if (lo + n > c) throw ShapeError("column_block: columns [" + std::to_string(lo) + ", " + std::to_string(lo + n) + ") of " + X.shape_str());
  Tensor out = Tensor::uninit(X.rows(), n);
  for (std::size_t r = 0; r < X.rows(); ++r) std::copy_n(X.data() + r * c + lo, n, out.data() + r * n);
  return detail::tape_of(x).record(std::move(out), {x}, [x, lo, n, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t k = 0; k < n; ++k) gx[r * c + lo + k] += g[r * n + k];
  });
}

inline Var leaky_relu(Var x, double slope = 0.01) {
  Tape& tape = detail::tape_of(x);
  Tensor out = x.value();
  if (tape.record_kinks) tape.kink_inputs.insert(tape.kink_inputs.end(), out.values().begin(), out.values().end());
  for (double& v : out.values())
    if (v < 0.0) v *= slope;
  return tape.record(std::move(out), {x}, [x, slope](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = x.value();
    Tensor& gx = t.grad(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] < 0.0 ? slope * g[i] : g[i];
  });
}

inline Var sigmoid(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return detail::tape_of(x).record(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

/// Column-wise concatenation of tensors with equal row counts.
inline Var concat(std::vector<Var> xs) {
  if (xs.empty()) throw ShapeError("concat of nothing");
  const std::size_t n = xs[0].rows();
  std::size_t total = 0;
  for (const Var& v : xs) {
    if (v.rows() != n) throw ShapeError("concat: row counts differ, " + xs[0].value().shape_str() + " vs " + v.value().shape_str());
    total += v.cols();
  }
  Tensor out = Tensor::uninit(n, total);
  std::size_t off = 0;
  for (const Var& v : xs) {
    const std::size_t c = v.cols();
    const double* src = v.value().data();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(src + r * c, c, out.data() + r * total + off);
    off += c;
  }
  Tape& tape = detail::tape_of(xs[0]);
  return tape.record(std::move(out), xs, [xs, total](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& v : xs) {
      const std::size_t c = v.cols();
      if (t.requires_grad(v.id())) {
        Tensor& gv = t.grad(v.id());
        for (std::size_t r = 0; r < gv.rows(); ++r) {
          const double* src = g.data() + r * total + off;
          double* dst = gv.data() + r * c;
          for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
      off += c;
    }
  });
}

/// y[r] = x[idx[r]]. Backward is the matching scatter-add.
inline Var gather_rows(Var x, Index idx) {
  const Tensor& X = x.value();
  const std::size_t c = X.cols();
  Tensor out = Tensor::uninit(idx->size(), c);
  for (std::size_t r = 0; r < idx->size(); ++r) {
    std::size_t s = (*idx)[r];
    if (s >= X.rows()) throw ShapeError("gather_rows: index " + std::to_string(s) + " out of range for " + X.shape_str());
    std::copy_n(X.data() + s * c, c, out.data() + r * c);
  }
  return detail::tape_of(x).record(std::move(out), {x}, [x, idx, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id());
    for (std::size_t r = 0; r < idx->size(); ++r) {
      double* dst = gx.data() + (*idx)[r] * c;
      const double* src = g.data() + r * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
    }
  });
}

/// Row-gathers several inputs and places them side by side:
/// y[r] = [x0[idx0[r]], x1[idx1[r]], ...]. Same as concat of gather_rows
/// without the intermediate tensors.
inline Var gather_concat(const std::vector<std::pair<Var, Index>>& parts) {
  if (parts.empty()) throw ShapeError("gather_concat of nothing");
  const std::size_t n = parts[0].second->size();
  std::size_t total = 0;
  for (const auto& [x, idx] : parts) {
    if (idx->size() != n) throw ShapeError("gather_concat: index lengths differ");
    total += x.cols();
  }
  Tensor out = Tensor::uninit(n, total);
  std::size_t off = 0;
  for (const auto& [x, idx] : parts) {
    const Tensor& X = x.value();
    const std::size_t c = X.cols();
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t s = (*idx)[r];
      if (s >= X.rows()) throw ShapeError("gather_concat: index " + std::to_string(s) + " out of range for " + X.shape_str());
      std::copy_n(X.data() + s * c, c, out.data() + r * total + off);
    }
    off += c;
  }
  std::vector<Var> inputs;
  for (const auto& pr : parts) inputs.push_back(pr.first);
  return detail::tape_of(parts[0].first).record(std::move(out), inputs, [parts, total, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (const auto& [x, idx] : parts) {
      const std::size_t c = x.cols();
      if (t.requires_grad(x.id())) {
        Tensor& gx = t.grad(x.id());
        for (std::size_t r = 0; r < n; ++r) {
          double* dst = gx.data() + (*idx)[r] * c;
          const double* src = g.data() + r * total + off;
          for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
      off += c;
    }
  });
}

/// y = a + b[idx] (row gather of b).
inline Var add_gathered(Var a, Var b, Index idx) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t c = A.cols();
  if (idx->size() != A.rows() || B.cols() != c) throw ShapeError("add_gathered: " + A.shape_str() + " + " + B.shape_str() + " rows");
  Tensor out = A;
  for (std::size_t r = 0; r < idx->size(); ++r) {
    const std::size_t s = (*idx)[r];
    if (s >= B.rows()) throw ShapeError("add_gathered: index out of range");
    const double* src = B.data() + s * c;
    double* dst = out.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
  }
  return detail::tape_of(a).record(std::move(out), {a, b}, [a, b, idx, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id())) {
      Tensor& ga = t.grad(a.id());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b.id())) {
      Tensor& gb = t.grad(b.id());
      for (std::size_t r = 0; r < idx->size(); ++r) {
        double* dst = gb.data() + (*idx)[r] * c;
        const double* src = g.data() + r * c;
        for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
      }
    }
  });
}

/// m = leaky_relu(x); y = m * sigmoid(m W^T + b), elementwise product.
/// Equal to the composition of leaky_relu, linear, sigmoid and mul.
inline Var gated_leaky(Var x, Var w, Var b, double slope = 0.01) {
  Tape& tape = detail::tape_of(x);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const std::size_t n = X.rows(), c = X.cols();
  if (W.rows() != c || W.cols() != c || b.value().size() != c)
    throw ShapeError("gated_leaky: input " + X.shape_str() + ", gate weight " + W.shape_str() + ", bias " + b.value().shape_str());
  if (tape.record_kinks) tape.kink_inputs.insert(tape.kink_inputs.end(), X.values().begin(), X.values().end());
  auto m = std::make_shared<Tensor>(Tensor::uninit(n, c));
  auto s = std::make_shared<Tensor>(Tensor::uninit(n, c));
  auto M = detail::mat(*m).array();
  const auto XA = detail::mat(X).array();
  M = (XA < 0.0).select(slope * XA, XA);
  auto S = detail::mat(*s);
  S.noalias() = detail::mat(*m) * detail::mat(W).transpose();
  S.rowwise() += detail::mat(b.value().data(), 1, c).row(0);
  S.array() = 1.0 / (1.0 + (-S.array()).exp());
  Tensor out = Tensor::uninit(n, c);
  detail::mat(out).array() = M * S.array();
  return tape.record(std::move(out), {x, w, b}, [x, w, b, m, s, slope, n, c](Tape& t, std::size_t self) {
    const auto G = detail::mat(t.grad(self)).array();
    const auto MA = detail::mat(*m).array();
    const auto SA = detail::mat(*s).array();
    // dz: gradient at the gate pre-activation; dm: at m.
    Tensor dz = Tensor::uninit(n, c), dm = Tensor::uninit(n, c);
    auto DZ = detail::mat(dz);
    auto DM = detail::mat(dm);
    DZ.array() = G * MA * SA * (1.0 - SA);
    DM.array() = G * SA;
    if (t.requires_grad(w.id())) detail::mat(t.grad(w.id())).noalias() += DZ.transpose() * detail::mat(*m);
    if (t.requires_grad(b.id())) {
      Tensor& gb = t.grad(b.id());
      detail::mat(gb.data(), 1, c).row(0) += DZ.colwise().sum();
    }
    if (t.requires_grad(x.id())) {
      DM.noalias() += DZ * detail::mat(w.value());
      const auto XA = detail::mat(x.value()).array();
      detail::mat(t.grad(x.id())).array() += (XA < 0.0).select(slope * DM.array(), DM.array());
    }
  });
}

/// y[s] = sum of x[r] over rows with segment[r] == s. Backward gathers.
inline Var scatter_sum(Var x, Index segment, std::size_t n_segments) {
  const Tensor& X = x.value();
  if (segment->size() != X.rows()) throw ShapeError("scatter_sum: " + std::to_string(segment->size()) + " segment ids for " + X.shape_str());
  const std::size_t c = X.cols();
  Tensor out(n_segments, c);
  for (std::size_t r = 0; r < X.rows(); ++r) {
    std::size_t s = (*segment)[r];
    if (s >= n_segments) throw ShapeError("scatter_sum: segment id out of range");
    double* dst = out.data() + s * c;
    const double* src = X.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
  }
  return detail::tape_of(x).record(std::move(out), {x}, [x, segment, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id());
    for (std::size_t r = 0; r < segment->size(); ++r) {
      const double* src = g.data() + (*segment)[r] * c;
      double* dst = gx.data() + r * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
    }
  });
}

/// Segment mean; an empty segment yields a zero row.
inline Var scatter_mean(Var x, Index segment, std::size_t n_segments) {
  std::vector<double> count(n_segments, 0.0);
  for (std::size_t s : *segment)
    if (s < n_segments) count[s] += 1.0;
  auto inv = std::make_shared<std::vector<double>>(n_segments, 0.0);
  for (std::size_t s = 0; s < n_segments; ++s) (*inv)[s] = count[s] > 0.0 ? 1.0 / count[s] : 0.0;
  return scale_rows(scatter_sum(x, std::move(segment), n_segments), std::move(inv));
}

/// Mean Huber loss: 0.5 r^2 when |r| <= delta, delta (|r| - delta/2) otherwise.
inline Var huber_loss(Var pred, const Tensor& target, double delta = 1.0) {
  const Tensor& P = pred.value();
  if (P.size() != target.size()) throw ShapeError("huber_loss: prediction " + P.shape_str() + " vs target " + target.shape_str());
  if (P.size() == 0) throw ShapeError("huber_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    double r = P[i] - target[i];
    acc += std::abs(r) <= delta ? 0.5 * r * r : delta * (std::abs(r) - 0.5 * delta);
  }
  const double n = double(P.size());
  return detail::tape_of(pred).record(Tensor::scalar(acc / n), {pred}, [pred, target, delta, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& P = pred.value();
    Tensor& gp = t.grad(pred.id());
    for (std::size_t i = 0; i < P.size(); ++i) {
      double r = P[i] - target[i];
      double d = std::abs(r) <= delta ? r : (r > 0 ? delta : -delta);
      gp[i] += g * d / n;
    }
  });
}

/// Sum of all elements, as a scalar.
inline Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return detail::tape_of(x).record(Tensor::scalar(acc), {x}, [x](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(x.id()).values()) v += g;
  });
}

/// Zeroes every parameter gradient, then runs the reverse sweep from `out`.
inline void backward(Tape& tape, Var out, ParamStore& params) {
  params.zero_grad();
  tape.backward(out);
}

// ---------------------------------------------------------------------------
// AdamW

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay (p <- p - lr wd p) followed by the bias-corrected
/// Adam step, per parameter.
inline void adamw_step(ParamStore& params, const AdamWConfig& c) {
  for (Param& p : params.all()) {
    ++p.steps;
    const double bc1 = 1.0 - std::pow(c.beta1, double(p.steps));
    const double bc2 = 1.0 - std::pow(c.beta2, double(p.steps));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.value[i] -= c.lr * c.weight_decay * p.value[i];
      p.m[i] = c.beta1 * p.m[i] + (1.0 - c.beta1) * g;
      p.v[i] = c.beta2 * p.v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = p.m[i] / bc1;
      const double vhat = p.v[i] / bc2;
      p.value[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct FiniteDiffReport {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct FiniteDiffOptions {
  double step = 1e-5;
  std::size_t samples = 200;  // coordinates to check; all when larger than the total
  std::uint64_t seed = 0;
  double kink_margin = 1e-3;  // pre-activations closer than this to 0 that flip sign mark a kink crossing
  double abs_floor = 1e-7;    // denominator floor for the relative error
};

/// Compares tape gradients of `forward` (which must build a scalar on the
/// given tape from `params`) against central differences at sampled
/// coordinates. A coordinate is skipped when the +step and -step passes put
/// some leaky-ReLU pre-activation within kink_margin of 0 on opposite sides.
inline FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& forward, ParamStore& params,
                                          const FiniteDiffOptions& opt = {}) {
  {
    Tape tape;
    Var out = forward(tape);
    backward(tape, out, params);
  }
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].value.size(); ++i) coords.emplace_back(p, i);
  Rng rng(opt.seed);
  rng.shuffle(coords);
  FiniteDiffReport rep;
  auto eval = [&](std::vector<double>& kinks) {
    Tape tape;
    tape.record_kinks = true;
    double v = forward(tape).value().item();
    kinks = std::move(tape.kink_inputs);
    return v;
  };
  std::vector<double> kp, km;
  for (const auto& [p, i] : coords) {
    if (rep.checked >= opt.samples) break;
    double& w = params[p].value[i];
    const double saved = w;
    w = saved + opt.step;
    double fp = eval(kp);
    w = saved - opt.step;
    double fm = eval(km);
    w = saved;
    bool kink = kp.size() != km.size();
    for (std::size_t k = 0; !kink && k < kp.size(); ++k)
      kink = (kp[k] < 0.0) != (km[k] < 0.0) && std::min(std::abs(kp[k]), std::abs(km[k])) < opt.kink_margin;
    if (kink) {
      ++rep.skipped_kinks;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * opt.step);
    const double analytic = params[p].grad[i];
    const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), opt.abs_floor});
    ++rep.checked;
    if (rep.checked == 1 || rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_param = params[p].name;
      rep.worst_index = i;
      rep.worst_analytic = analytic;
      rep.worst_numeric = numeric;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Parameter initialisation

/// Uniform in +-sqrt(1/fan_in), fan_in = columns.
inline Tensor uniform_init(std::size_t out, std::size_t in, Rng& rng) {
  Tensor w(out, in);
  const double bound = std::sqrt(1.0 / double(in));
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  return w;
}

}  // namespace porenet
