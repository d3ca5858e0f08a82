#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "datlas/activations.hpp"
#include "datlas/errors.hpp"
#include "datlas/tensor.hpp"

namespace datlas {

// Define-by-run reverse-mode graph. Build it with one forward pass, call
// backward() on a scalar node, read adjoints, then clear() for the next pass.
// Parameter nodes reference external tensors and are tagged with a slot so
// their adjoints can be scattered into a gradient buffer.
class Graph {
 public:
  using Node = std::uint32_t;

  // Local partials of one entry of a reduction, see reduce().
  struct Partial {
    double value = 0.0;
    double da = 0.0;
    double db = 0.0;
  };

  Node constant(Tensor value) {
    Record& r = push(Op::constant);
    r.value = std::move(value);
    return last();
  }
  Node constant(std::span<const double> column) { return constant(Tensor::column(column)); }

  Node parameter(const Tensor& value, std::size_t slot) {
    Record& r = push(Op::parameter);
    r.external = &value;
    r.slot = slot;
    return last();
  }

  Node matmul(Node a, Node b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    DATLAS_REQUIRE(A.cols() == B.rows(), "matmul: inner dimensions differ");
    Tensor out(A.rows(), B.cols());
    const double* pa = A.storage().data();
    const double* pb = B.storage().data();
    const std::size_t n = A.cols();
    if (B.cols() == 1) {
      for (std::size_t i = 0; i < A.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += pa[i * n + k] * pb[k];
        out[i] = acc;
      }
    } else {
      for (std::size_t i = 0; i < A.rows(); ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = pa[i * n + k];
          for (std::size_t j = 0; j < B.cols(); ++j) out(i, j) += aik * B(k, j);
        }
      }
    }
    return push_unary_or_binary(Op::matmul, a, b, std::move(out));
  }

  Node add(Node a, Node b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    DATLAS_REQUIRE(A.same_shape(B), "add: shape mismatch");
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push_unary_or_binary(Op::add, a, b, std::move(out));
  }

  Node mul(Node a, Node b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    DATLAS_REQUIRE(A.same_shape(B), "mul: shape mismatch");
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return push_unary_or_binary(Op::mul, a, b, std::move(out));
  }

  // scale .* a + shift with constant vectors; an empty shift means zero.
  Node affine(Node a, std::span<const double> scale, std::span<const double> shift = {}) {
    const Tensor& A = value(a);
    DATLAS_REQUIRE(scale.size() == A.size(), "affine: scale length mismatch");
    DATLAS_REQUIRE(shift.empty() || shift.size() == A.size(), "affine: shift length mismatch");
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * scale[i] + (shift.empty() ? 0.0 : shift[i]);
    Node n = push_unary_or_binary(Op::affine, a, a, std::move(out));
    nodes_[n].aux_a.assign(scale.begin(), scale.end());
    return n;
  }

  Node scale(Node a, double factor) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
    Node n = push_unary_or_binary(Op::scale, a, a, std::move(out));
    nodes_[n].scalar = factor;
    return n;
  }

  // Vertical concatenation of two column blocks with equal column counts.
  Node concat(Node a, Node b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    DATLAS_REQUIRE(A.cols() == B.cols(), "concat: column counts differ");
    std::vector<double> data(A.storage());
    data.insert(data.end(), B.storage().begin(), B.storage().end());
    return push_unary_or_binary(Op::concat, a, b, Tensor(A.rows() + B.rows(), A.cols(), std::move(data)));
  }

  // Rows [offset, offset + length) of a.
  Node slice(Node a, std::size_t offset, std::size_t length) {
    const Tensor& A = value(a);
    DATLAS_REQUIRE(offset + length <= A.rows(), "slice: out of range");
    const std::size_t c = A.cols();
    std::vector<double> data(A.storage().begin() + offset * c, A.storage().begin() + (offset + length) * c);
    Node n = push_unary_or_binary(Op::slice, a, a, Tensor(length, c, std::move(data)));
    nodes_[n].slot = offset;
    return n;
  }

  Node elu(Node a) { return map(Op::elu, a, [](double x) { return datlas::elu(x); }); }
  Node sigmoid(Node a) { return map(Op::sigmoid, a, [](double x) { return datlas::sigmoid(x); }); }
  Node softplus(Node a) { return map(Op::softplus, a, [](double x) { return datlas::softplus(x); }); }

  // max(a, floor) elementwise; the adjoint passes only where a > floor.
  Node floor_at(Node a, double floor) {
    Node n = map(Op::floor_at, a, [floor](double x) { return x > floor ? x : floor; });
    nodes_[n].scalar = floor;
    return n;
  }

  // min(a, ceiling) elementwise; the adjoint passes only where a < ceiling.
  Node ceil_at(Node a, double ceiling) {
    Node n = map(Op::ceil_at, a, [ceiling](double x) { return x < ceiling ? x : ceiling; });
    nodes_[n].scalar = ceiling;
    return n;
  }

  Node sum(Node a) {
    double s = 0.0;
    for (double v : value(a).values()) s += v;
    return push_unary_or_binary(Op::sum, a, a, Tensor(1, 1, s));
  }

  // Scalar reduction sum_i f(i, a_i, b_i) where f also returns the local
  // partials. Entries for which f returns an all-zero Partial contribute
  // nothing to either the value or the adjoints.
  template <class F>
  Node reduce(Node a, Node b, F&& f) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    DATLAS_REQUIRE(A.size() == B.size(), "reduce: operand lengths differ");
    std::vector<double> da(A.size()), db(A.size());
    double total = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) {
      const Partial p = f(i, A[i], B[i]);
      total += p.value;
      da[i] = p.da;
      db[i] = p.db;
    }
    Node n = push_unary_or_binary(Op::reduce, a, b, Tensor(1, 1, total));
    nodes_[n].aux_a = std::move(da);
    nodes_[n].aux_b = std::move(db);
    return n;
  }

  template <class F>
  Node reduce(Node a, F&& f) {
    return reduce(a, a, [&f](std::size_t i, double x, double) {
      Partial p = f(i, x);
      p.db = 0.0;
      return p;
    });
  }

  const Tensor& value(Node n) const {
    const Record& r = nodes_.at(n);
    return r.external ? *r.external : r.value;
  }
  const Tensor& grad(Node n) const { return nodes_.at(n).grad; }
  double scalar(Node n) const { return value(n)[0]; }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void backward(Node loss) {
    DATLAS_REQUIRE(loss < nodes_.size(), "backward: unknown node");
    DATLAS_REQUIRE(value(loss).size() == 1, "backward: loss node must be scalar");
    for (Record& r : nodes_) {
      const Tensor& v = r.external ? *r.external : r.value;
      if (r.grad.same_shape(v)) {
        r.grad.fill(0.0);
      } else {
        r.grad = Tensor(v.rows(), v.cols());
      }
    }
    nodes_[loss].grad[0] = 1.0;
    for (std::size_t k = loss + 1; k-- > 0;) propagate(static_cast<Node>(k));
  }

  // Adds each parameter node's adjoint into grads[slot].
  void accumulate_parameter_grads(std::span<Tensor> grads) const {
    for (const Record& r : nodes_) {
      if (r.op != Op::parameter) continue;
      DATLAS_REQUIRE(r.slot < grads.size(), "parameter slot outside gradient buffer");
      Tensor& g = grads[r.slot];
      DATLAS_REQUIRE(g.same_shape(r.grad), "gradient buffer shape mismatch");
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.grad[i];
    }
  }

 private:
  enum class Op : std::uint8_t {
    constant,
    parameter,
    matmul,
    add,
    mul,
    affine,
    scale,
    concat,
    slice,
    elu,
    sigmoid,
    softplus,
    floor_at,
    ceil_at,
    sum,
    reduce,
  };

  struct Record {
    Op op = Op::constant;
    Node a = 0;
    Node b = 0;
    std::size_t slot = 0;
    double scalar = 0.0;
    const Tensor* external = nullptr;
    Tensor value;
    Tensor grad;
    std::vector<double> aux_a;
    std::vector<double> aux_b;
  };

  Record& push(Op op) {
    nodes_.emplace_back();
    nodes_.back().op = op;
    return nodes_.back();
  }
  Node last() const { return static_cast<Node>(nodes_.size() - 1); }

  Node push_unary_or_binary(Op op, Node a, Node b, Tensor out) {
    Record& r = push(op);
    r.a = a;
    r.b = b;
    r.value = std::move(out);
    return last();
  }

  template <class F>
  Node map(Op op, Node a, F f) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i]);
    return push_unary_or_binary(op, a, a, std::move(out));
  }

  void propagate(Node k) {
    Record& r = nodes_[k];
    const Tensor& g = r.grad;
    switch (r.op) {
      case Op::constant:
      case Op::parameter:
        return;
      case Op::matmul: {
        const Tensor& A = value(r.a);
        const Tensor& B = value(r.b);
        Tensor& gA = nodes_[r.a].grad;
        Tensor& gB = nodes_[r.b].grad;
        if (B.cols() == 1) {
          const double* a = A.storage().data();
          const double* b = B.storage().data();
          double* ga = gA.values().data();
          double* gb = gB.values().data();
          const std::size_t n = A.cols();
          for (std::size_t i = 0; i < A.rows(); ++i) {
            const double gi = g[i];
            for (std::size_t kk = 0; kk < n; ++kk) {
              ga[i * n + kk] += gi * b[kk];
              gb[kk] += a[i * n + kk] * gi;
            }
          }
          return;
        }
        for (std::size_t i = 0; i < A.rows(); ++i) {
          for (std::size_t kk = 0; kk < A.cols(); ++kk) {
            double acc = 0.0;
            const double aik = A(i, kk);
            for (std::size_t j = 0; j < B.cols(); ++j) {
              acc += g(i, j) * B(kk, j);
              gB(kk, j) += aik * g(i, j);
            }
            gA(i, kk) += acc;
          }
        }
        return;
      }
      case Op::add: {
        Tensor& gA = nodes_[r.a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i];
        Tensor& gB = nodes_[r.b].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gB[i] += g[i];
        return;
      }
      case Op::mul: {
        const Tensor& A = value(r.a);
        const Tensor& B = value(r.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          nodes_[r.a].grad[i] += g[i] * B[i];
          nodes_[r.b].grad[i] += g[i] * A[i];
        }
        return;
      }
      case Op::affine: {
        Tensor& gA = nodes_[r.a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * r.aux_a[i];
        return;
      }
      case Op::scale: {
        Tensor& gA = nodes_[r.a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * r.scalar;
        return;
      }
      case Op::concat: {
        Tensor& gA = nodes_[r.a].grad;
        Tensor& gB = nodes_[r.b].grad;
        const std::size_t na = gA.size();
        for (std::size_t i = 0; i < na; ++i) gA[i] += g[i];
        for (std::size_t i = 0; i < gB.size(); ++i) gB[i] += g[na + i];
        return;
      }
      case Op::slice: {
        Tensor& gA = nodes_[r.a].grad;
        const std::size_t base = r.slot * gA.cols();
        for (std::size_t i = 0; i < g.size(); ++i) gA[base + i] += g[i];
        return;
      }
      case Op::elu: {
        Tensor& gA = nodes_[r.a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = r.value[i];
          gA[i] += g[i] * (y > 0.0 ? 1.0 : y + 1.0);
        }
        return;
      }
      case Op::sigmoid: {
        Tensor& gA = nodes_[r.a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = r.value[i];
          gA[i] += g[i] * y * (1.0 - y);
        }
        return;
      }
      case Op::softplus: {
        const Tensor& A = value(r.a);
        Tensor& gA = nodes_[r.a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * softplus_grad(A[i]);
        return;
      }
      case Op::floor_at: {
        const Tensor& A = value(r.a);
        Tensor& gA = nodes_[r.a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (A[i] > r.scalar) gA[i] += g[i];
        }
        return;
      }
      case Op::ceil_at: {
        const Tensor& A = value(r.a);
        Tensor& gA = nodes_[r.a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (A[i] < r.scalar) gA[i] += g[i];
        }
        return;
      }
      case Op::sum: {
        Tensor& gA = nodes_[r.a].grad;
        for (std::size_t i = 0; i < gA.size(); ++i) gA[i] += g[0];
        return;
      }
      case Op::reduce: {
        Tensor& gA = nodes_[r.a].grad;
        for (std::size_t i = 0; i < gA.size(); ++i) gA[i] += g[0] * r.aux_a[i];
        Tensor& gB = nodes_[r.b].grad;
        for (std::size_t i = 0; i < gB.size(); ++i) gB[i] += g[0] * r.aux_b[i];
        return;
      }
    }
  }

  std::vector<Record> nodes_;
};

}  // namespace datlas
