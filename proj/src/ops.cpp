#include "hlan/ops.hpp"

#include <algorithm>
#include <cmath>

#include "hlan/kernels.hpp"

namespace hlan::ad {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  require(bv.rows() == k, "matmul: inner dimensions differ " + shape_str(av.shape()) + " x " +
                              shape_str(bv.shape()));
  Tensor out = Tensor::matrix(m, n);
  kernels::gemm_nn(av.data(), bv.data(), out.data(), m, k, n, false);
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_sink(ia))  // dA = dC * B^T
      kernels::gemm_nt(g.data(), t.value(ib).data(), ga->data(), m, n, k, true);
    if (Tensor* gb = t.grad_sink(ib))  // dB = A^T * dC
      kernels::gemm_tn(t.value(ia).data(), g.data(), gb->data(), k, m, n, true);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  require(bv.cols() == k, "matmul_nt: inner dimensions differ " + shape_str(av.shape()) + " x " +
                              shape_str(bv.shape()) + "^T");
  Tensor out = Tensor::matrix(m, n);
  kernels::gemm_nt(av.data(), bv.data(), out.data(), m, k, n, false);
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_sink(ia))  // dA = dC * B
      kernels::gemm_nn(g.data(), t.value(ib).data(), ga->data(), m, n, k, true);
    if (Tensor* gb = t.grad_sink(ib))  // dB = dC^T * A
      kernels::gemm_tn(g.data(), t.value(ia).data(), gb->data(), n, m, k, true);
  });
}

Var unary(Unary op, Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i)
    out[i] = op == Unary::sigmoid ? kernels::sigmoid(xv[i]) : std::tanh(xv[i]);
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor* gx = t.grad_sink(ix);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const real d = op == Unary::sigmoid ? y[i] * (1 - y[i]) : 1 - y[i] * y[i];
      (*gx)[i] += g[i] * d;
    }
  });
}

Var binary(Binary op, Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool a_scalar = av.size() == 1 && bv.size() != 1;
  const bool b_scalar = bv.size() == 1 && av.size() != 1;
  require(av.same_shape(bv) || a_scalar || b_scalar ||
              (av.size() == 1 && bv.size() == 1),
          "elementwise: incompatible shapes " + shape_str(av.shape()) + " and " +
              shape_str(bv.shape()));
  const Tensor& big = a_scalar ? bv : av;
  Tensor out(big.shape());
  const std::size_t n = out.size();
  auto at = [](const Tensor& t, bool scalar, std::size_t i) { return scalar ? t[0] : t[i]; };
  for (std::size_t i = 0; i < n; ++i) {
    const real x = at(av, a_scalar, i), y = at(bv, b_scalar, i);
    out[i] = op == Binary::add ? x + y : op == Binary::sub ? x - y : x * y;
  }
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (Tensor* ga = t.grad_sink(ia)) {
      for (std::size_t i = 0; i < n; ++i) {
        const real d = op == Binary::mul ? g[i] * at(bv, b_scalar, i) : g[i];
        (*ga)[a_scalar ? 0 : i] += d;
      }
    }
    if (Tensor* gb = t.grad_sink(ib)) {
      for (std::size_t i = 0; i < n; ++i) {
        const real d = op == Binary::mul ? g[i] * at(av, a_scalar, i)
                       : op == Binary::sub ? -g[i]
                                           : g[i];
        (*gb)[b_scalar ? 0 : i] += d;
      }
    }
  });
}

Var scale(Var x, real factor) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* gx = t.grad_sink(ix);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * factor;
  });
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  require(bv.size() == c, "add_bias: bias " + shape_str(bv.shape()) + " vs input " +
                              shape_str(xv.shape()));
  Tensor out = xv;
  out.requires_grad = false;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) += bv[j];
  const int ix = x.id, ib = bias.id;
  return x.tape->record(std::move(out), {x, bias}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (Tensor* gx = t.grad_sink(ix))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (Tensor* gb = t.grad_sink(ib))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g.at(i, j);
  });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  real s = 0;
  for (real v : xv.values()) s += v;
  const int ix = x.id;
  return x.tape->record(Tensor::scalar(s), {x}, [=](Tape& t, int self) {
    const real g = t.grad(self)[0];
    Tensor* gx = t.grad_sink(ix);
    for (real& v : gx->values()) v += g;
  });
}

Var sum_squares(Var x) {
  const Tensor& xv = x.value();
  real s = 0;
  for (real v : xv.values()) s += v * v;
  const int ix = x.id;
  return x.tape->record(Tensor::scalar(s), {x}, [=](Tape& t, int self) {
    const real g = t.grad(self)[0];
    const Tensor& xv = t.value(ix);
    Tensor* gx = t.grad_sink(ix);
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += 2 * g * xv[i];
  });
}

Var softmax(Var x) {
  const Tensor& xv = x.value();
  require(xv.size() >= 1, "softmax: empty input");
  const real mx = *std::max_element(xv.values().begin(), xv.values().end());
  Tensor out(xv.shape());
  real z = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) z += (out[i] = std::exp(xv[i] - mx));
  for (real& v : out.values()) v /= z;
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    real gy = 0;
    for (std::size_t i = 0; i < y.size(); ++i) gy += g[i] * y[i];
    Tensor* gx = t.grad_sink(ix);
    for (std::size_t i = 0; i < y.size(); ++i) (*gx)[i] += y[i] * (g[i] - gy);
  });
}

Var concat(Var a, Var b, int axis) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.empty() || av.empty()) {
    const Var keep = bv.empty() ? a : b;
    const int ik = keep.id;
    return a.tape->record(keep.value(), {a, b}, [=](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (Tensor* gk = t.grad_sink(ik))
        for (std::size_t i = 0; i < g.size(); ++i) (*gk)[i] += g[i];
    });
  }
  Tensor out;
  std::size_t rows, ca, cb;
  if (av.rank() == 1 && bv.rank() == 1) {
    require(axis == 0, "concat: rank-1 tensors only concatenate on axis 0");
    rows = 1, ca = av.size(), cb = bv.size();
    out = Tensor(Shape{ca + cb});
  } else if (axis == 0) {
    require(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.cols(),
            "concat axis 0: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    // Row concatenation of row-major data is a flat append.
    rows = 1, ca = av.size(), cb = bv.size();
    out = Tensor::matrix(av.rows() + bv.rows(), av.cols());
  } else {
    require(axis == 1 && av.rank() == 2 && bv.rank() == 2 && av.rows() == bv.rows(),
            "concat axis 1: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    rows = av.rows(), ca = av.cols(), cb = bv.cols();
    out = Tensor::matrix(rows, ca + cb);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.grad_sink(ia);
    Tensor* gb = t.grad_sink(ib);
    for (std::size_t r = 0; r < rows; ++r) {
      const real* src = g.data() + r * (ca + cb);
      if (ga) kernels::axpy(1, src, ga->data() + r * ca, ca);
      if (gb) kernels::axpy(1, src + ca, gb->data() + r * cb, cb);
    }
  });
}

Var gather_rows(Var table, std::span<const std::int32_t> ids) {
  const Tensor& tv = table.value();
  const std::size_t d = tv.cols();
  Tensor out = Tensor::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < tv.rows(),
            "gather_rows: index " + std::to_string(ids[i]) + " outside table of " +
                std::to_string(tv.rows()) + " rows");
    std::copy_n(tv.row(ids[i]), d, out.row(i));
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  const int it = table.id;
  return table.tape->record(std::move(out), {table}, [=, saved = std::move(saved)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* gt = t.grad_sink(it);
    for (std::size_t i = 0; i < saved.size(); ++i) kernels::axpy(1, g.row(i), gt->row(saved[i]), d);
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  require(begin + count <= xv.rows(), "slice_rows: range past end of " + shape_str(xv.shape()));
  const std::size_t c = xv.cols();
  Tensor out = Tensor::matrix(count, c);
  std::copy_n(xv.data() + begin * c, count * c, out.data());
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* gx = t.grad_sink(ix);
    kernels::axpy(1, g.data(), gx->data() + begin * c, count * c);
  });
}

Var bce_with_logits(Var logits, const Tensor& targets) {
  const Tensor& s = logits.value();
  require(s.size() == targets.size(), "bce: logits " + shape_str(s.shape()) + " vs targets " +
                                          shape_str(targets.shape()));
  real loss = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const real x = s[i], y = targets[i];
    loss += std::max(x, real{0}) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  const int il = logits.id;
  return logits.tape->record(Tensor::scalar(loss), {logits}, [=, y = targets](Tape& t, int self) {
    const real g = t.grad(self)[0];
    const Tensor& s = t.value(il);
    Tensor* gs = t.grad_sink(il);
    for (std::size_t i = 0; i < s.size(); ++i) (*gs)[i] += g * (kernels::sigmoid(s[i]) - y[i]);
  });
}

}  // namespace hlan::ad
