#include "hlan/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "hlan/kernels.hpp"

namespace hlan::ad {

namespace {

using kernels::gemm_nn;
using kernels::gemm_nt;
using kernels::gemm_tn;

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

void check_shape(const Var& v, std::size_t rows, std::size_t cols, const char* name) {
  const Tensor& t = v.value();
  require(t.rows() == rows && t.cols() == cols,
          std::string("gru: ") + name + " has shape " + shape_str(t.shape()) + ", expected [" +
              std::to_string(rows) + "x" + std::to_string(cols) + "]");
}

// Forward values kept for the backward pass of gru_sequence. Active positions
// are numbered step-major so each step owns a contiguous block of rows.
struct GruSaved {
  std::size_t batch = 0, steps = 0, d_in = 0, hidden = 0;
  std::vector<std::size_t> step_begin;  // size = max_len + 1
  std::vector<std::size_t> seq_of;      // active index -> sequence
  std::vector<std::size_t> row_of;      // active index -> row of x / output
  std::vector<real> r, z, c, hp;        // [active x hidden]
};

}  // namespace

Var gru_cell(Var e, Var h_prev, const GruWeights& w) {
  Tape& t = *e.tape;
  const Var one = t.constant(Tensor::scalar(1));
  const Var r = sigmoid(add_bias(add(matmul(e, w.w_er), matmul(h_prev, w.w_hr)), w.b_r));
  const Var z = sigmoid(add_bias(add(matmul(e, w.w_ez), matmul(h_prev, w.w_hz)), w.b_z));
  const Var c = tanh(add(matmul(e, w.w_ec), matmul(mul(r, h_prev), w.w_hc)));
  return add(mul(sub(one, z), h_prev), mul(z, c));
}

Var gru_sequence(Var x, const GruWeights& w, std::size_t batch, std::size_t steps,
                 std::span<const std::uint8_t> mask, bool reverse) {
  const Tensor& xv = x.value();
  const std::size_t d_in = xv.cols();
  const std::size_t H = w.w_hr.value().cols();
  require(xv.rows() == batch * steps, "gru: input has " + std::to_string(xv.rows()) +
                                          " rows, expected " + std::to_string(batch * steps));
  require(mask.size() == batch * steps, "gru: mask length mismatch");
  check_shape(w.w_er, d_in, H, "W_er");
  check_shape(w.w_ez, d_in, H, "W_ez");
  check_shape(w.w_ec, d_in, H, "W_ec");
  check_shape(w.w_hr, H, H, "W_hr");
  check_shape(w.w_hz, H, H, "W_hz");
  check_shape(w.w_hc, H, H, "W_hc");
  require(w.b_r.value().size() == H && w.b_z.value().size() == H, "gru: bias length mismatch");

  auto sv = std::make_shared<GruSaved>();
  GruSaved& s = *sv;
  s.batch = batch, s.steps = steps, s.d_in = d_in, s.hidden = H;

  std::vector<std::vector<std::size_t>> order(batch);
  std::size_t max_len = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t)
      if (mask[b * steps + t]) order[b].push_back(b * steps + t);
    if (reverse) std::reverse(order[b].begin(), order[b].end());
    max_len = std::max(max_len, order[b].size());
  }
  for (std::size_t st = 0; st < max_len; ++st) {
    s.step_begin.push_back(s.seq_of.size());
    for (std::size_t b = 0; b < batch; ++b)
      if (order[b].size() > st) {
        s.seq_of.push_back(b);
        s.row_of.push_back(order[b][st]);
      }
  }
  s.step_begin.push_back(s.seq_of.size());
  const std::size_t A = s.seq_of.size();

  std::vector<real> xa(A * d_in);
  for (std::size_t a = 0; a < A; ++a) std::copy_n(xv.row(s.row_of[a]), d_in, xa.data() + a * d_in);
  std::vector<real> xr(A * H), xz(A * H), xc(A * H);
  gemm_nn(xa.data(), w.w_er.value().data(), xr.data(), A, d_in, H, false);
  gemm_nn(xa.data(), w.w_ez.value().data(), xz.data(), A, d_in, H, false);
  gemm_nn(xa.data(), w.w_ec.value().data(), xc.data(), A, d_in, H, false);

  s.r.resize(A * H), s.z.resize(A * H), s.c.resize(A * H), s.hp.resize(A * H);
  std::vector<real> state(batch * H, 0), hr, hz, rh, hc;
  Tensor out = Tensor::matrix(batch * steps, H);
  const real* br = w.b_r.value().data();
  const real* bz = w.b_z.value().data();

  for (std::size_t st = 0; st < max_len; ++st) {
    const std::size_t lo = s.step_begin[st], nb = s.step_begin[st + 1] - lo;
    real* hp = s.hp.data() + lo * H;
    for (std::size_t i = 0; i < nb; ++i)
      std::copy_n(state.data() + s.seq_of[lo + i] * H, H, hp + i * H);
    hr.assign(nb * H, 0), hz.assign(nb * H, 0), rh.assign(nb * H, 0), hc.assign(nb * H, 0);
    gemm_nn(hp, w.w_hr.value().data(), hr.data(), nb, H, H, false);
    gemm_nn(hp, w.w_hz.value().data(), hz.data(), nb, H, H, false);
    real* r = s.r.data() + lo * H;
    real* z = s.z.data() + lo * H;
    for (std::size_t i = 0; i < nb; ++i)
      for (std::size_t j = 0; j < H; ++j) {
        const std::size_t k = i * H + j;
        r[k] = kernels::sigmoid(xr[(lo + i) * H + j] + hr[k] + br[j]);
        z[k] = kernels::sigmoid(xz[(lo + i) * H + j] + hz[k] + bz[j]);
        rh[k] = r[k] * hp[k];
      }
    gemm_nn(rh.data(), w.w_hc.value().data(), hc.data(), nb, H, H, false);
    real* c = s.c.data() + lo * H;
    for (std::size_t i = 0; i < nb; ++i) {
      real* dst = out.row(s.row_of[lo + i]);
      real* st_row = state.data() + s.seq_of[lo + i] * H;
      for (std::size_t j = 0; j < H; ++j) {
        const std::size_t k = i * H + j;
        c[k] = std::tanh(xc[(lo + i) * H + j] + hc[k]);
        dst[j] = (1 - z[k]) * hp[k] + z[k] * c[k];
        st_row[j] = dst[j];
      }
    }
  }

  const int ix = x.id;
  const int iwer = w.w_er.id, iwez = w.w_ez.id, iwec = w.w_ec.id;
  const int iwhr = w.w_hr.id, iwhz = w.w_hz.id, iwhc = w.w_hc.id;
  const int ibr = w.b_r.id, ibz = w.b_z.id;
  return x.tape->record(
      std::move(out), {x, w.w_er, w.w_ez, w.w_ec, w.w_hr, w.w_hz, w.w_hc, w.b_r, w.b_z},
      [=](Tape& t, int self) {
        const GruSaved& s = *sv;
        const std::size_t H = s.hidden, d_in = s.d_in, A = s.seq_of.size();
        const Tensor& dout = t.grad(self);
        std::vector<real> dar(A * H, 0), daz(A * H, 0), dac(A * H, 0);
        std::vector<real> dstate(s.batch * H, 0), dhp, drh, rh;
        Tensor* g_whr = t.grad_sink(iwhr);
        Tensor* g_whz = t.grad_sink(iwhz);
        Tensor* g_whc = t.grad_sink(iwhc);
        Tensor* g_br = t.grad_sink(ibr);
        Tensor* g_bz = t.grad_sink(ibz);
        const real* whr = t.value(iwhr).data();
        const real* whz = t.value(iwhz).data();
        const real* whc = t.value(iwhc).data();

        for (std::size_t st = s.step_begin.size() - 1; st-- > 0;) {
          const std::size_t lo = s.step_begin[st], nb = s.step_begin[st + 1] - lo;
          const real* r = s.r.data() + lo * H;
          const real* z = s.z.data() + lo * H;
          const real* c = s.c.data() + lo * H;
          const real* hp = s.hp.data() + lo * H;
          real* d_ar = dar.data() + lo * H;
          real* d_az = daz.data() + lo * H;
          real* d_ac = dac.data() + lo * H;
          dhp.assign(nb * H, 0), drh.assign(nb * H, 0), rh.assign(nb * H, 0);
          for (std::size_t i = 0; i < nb; ++i) {
            const real* g_out = dout.row(s.row_of[lo + i]);
            const real* g_next = dstate.data() + s.seq_of[lo + i] * H;
            for (std::size_t j = 0; j < H; ++j) {
              const std::size_t k = i * H + j;
              const real dh = g_out[j] + g_next[j];
              d_ac[k] = dh * z[k] * (1 - c[k] * c[k]);
              d_az[k] = dh * (c[k] - hp[k]) * z[k] * (1 - z[k]);
              dhp[k] = dh * (1 - z[k]);
              rh[k] = r[k] * hp[k];
            }
          }
          gemm_nt(d_ac, whc, drh.data(), nb, H, H, false);
          if (g_whc) gemm_tn(rh.data(), d_ac, g_whc->data(), H, nb, H, true);
          for (std::size_t k = 0; k < nb * H; ++k) {
            d_ar[k] = drh[k] * hp[k] * r[k] * (1 - r[k]);
            dhp[k] += drh[k] * r[k];
          }
          gemm_nt(d_ar, whr, dhp.data(), nb, H, H, true);
          gemm_nt(d_az, whz, dhp.data(), nb, H, H, true);
          if (g_whr) gemm_tn(hp, d_ar, g_whr->data(), H, nb, H, true);
          if (g_whz) gemm_tn(hp, d_az, g_whz->data(), H, nb, H, true);
          for (std::size_t i = 0; i < nb; ++i) {
            if (g_br) kernels::axpy(1, d_ar + i * H, g_br->data(), H);
            if (g_bz) kernels::axpy(1, d_az + i * H, g_bz->data(), H);
            std::copy_n(dhp.data() + i * H, H, dstate.data() + s.seq_of[lo + i] * H);
          }
        }

        Tensor* g_wer = t.grad_sink(iwer);
        Tensor* g_wez = t.grad_sink(iwez);
        Tensor* g_wec = t.grad_sink(iwec);
        Tensor* g_x = t.grad_sink(ix);
        if (!g_wer && !g_wez && !g_wec && !g_x) return;
        const Tensor& xv = t.value(ix);
        std::vector<real> xa(A * d_in);
        for (std::size_t a = 0; a < A; ++a)
          std::copy_n(xv.row(s.row_of[a]), d_in, xa.data() + a * d_in);
        if (g_wer) gemm_tn(xa.data(), dar.data(), g_wer->data(), d_in, A, H, true);
        if (g_wez) gemm_tn(xa.data(), daz.data(), g_wez->data(), d_in, A, H, true);
        if (g_wec) gemm_tn(xa.data(), dac.data(), g_wec->data(), d_in, A, H, true);
        if (g_x) {
          std::vector<real> dxa(A * d_in, 0);
          gemm_nt(dar.data(), t.value(iwer).data(), dxa.data(), A, H, d_in, true);
          gemm_nt(daz.data(), t.value(iwez).data(), dxa.data(), A, H, d_in, true);
          gemm_nt(dac.data(), t.value(iwec).data(), dxa.data(), A, H, d_in, true);
          for (std::size_t a = 0; a < A; ++a)
            kernels::axpy(1, dxa.data() + a * d_in, g_x->row(s.row_of[a]), d_in);
        }
      });
}

Var segment_softmax(Var scores, std::size_t seg_len, std::span<const std::uint8_t> mask) {
  const Tensor& sv = scores.value();
  const std::size_t rows = sv.rows(), L = sv.cols();
  require(seg_len > 0 && rows % seg_len == 0,
          "segment_softmax: " + std::to_string(rows) + " rows not divisible by segment length " +
              std::to_string(seg_len));
  require(mask.size() == rows, "segment_softmax: mask length mismatch");
  const std::size_t G = rows / seg_len;
  Tensor out = Tensor::matrix(rows, L);
  for (std::size_t g = 0; g < G; ++g) {
    const std::size_t base = g * seg_len;
    for (std::size_t l = 0; l < L; ++l) {
      real mx = -std::numeric_limits<real>::infinity();
      for (std::size_t t = 0; t < seg_len; ++t)
        if (mask[base + t]) mx = std::max(mx, sv.at(base + t, l));
      if (!std::isfinite(mx)) continue;
      real zsum = 0;
      for (std::size_t t = 0; t < seg_len; ++t)
        if (mask[base + t]) zsum += (out.at(base + t, l) = std::exp(sv.at(base + t, l) - mx));
      for (std::size_t t = 0; t < seg_len; ++t)
        if (mask[base + t]) out.at(base + t, l) /= zsum;
    }
  }
  const int is = scores.id;
  return scores.tape->record(std::move(out), {scores}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor* gs = t.grad_sink(is);
    for (std::size_t grp = 0; grp < G; ++grp) {
      const std::size_t base = grp * seg_len;
      for (std::size_t l = 0; l < L; ++l) {
        real gy = 0;
        for (std::size_t i = 0; i < seg_len; ++i) gy += g.at(base + i, l) * y.at(base + i, l);
        for (std::size_t i = 0; i < seg_len; ++i)
          gs->at(base + i, l) += y.at(base + i, l) * (g.at(base + i, l) - gy);
      }
    }
  });
}

Var segment_pool(Var alpha, Var values, std::size_t seg_len, bool shared_values) {
  const Tensor& av = alpha.value();
  const Tensor& vv = values.value();
  const std::size_t rows = av.rows(), L = av.cols(), D = vv.cols();
  require(seg_len > 0 && rows % seg_len == 0, "segment_pool: rows not divisible by segment length");
  const std::size_t G = rows / seg_len;
  const std::size_t want = shared_values ? rows : rows * L;
  require(vv.rows() == want, "segment_pool: values have " + std::to_string(vv.rows()) +
                                 " rows, expected " + std::to_string(want));
  auto value_row = [=](std::size_t l, std::size_t g, std::size_t t) {
    return shared_values ? g * seg_len + t : (l * G + g) * seg_len + t;
  };
  Tensor out = Tensor::matrix(L * G, D);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t g = 0; g < G; ++g) {
      real* dst = out.row(l * G + g);
      for (std::size_t t = 0; t < seg_len; ++t) {
        const real a = av.at(g * seg_len + t, l);
        if (a != 0) kernels::axpy(a, vv.row(value_row(l, g, t)), dst, D);
      }
    }
  const int ia = alpha.id, iv = values.id;
  return alpha.tape->record(std::move(out), {alpha, values}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& vv = t.value(iv);
    Tensor* ga = t.grad_sink(ia);
    Tensor* gv = t.grad_sink(iv);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t grp = 0; grp < G; ++grp) {
        const real* go = g.row(l * G + grp);
        for (std::size_t i = 0; i < seg_len; ++i) {
          const std::size_t vr = value_row(l, grp, i);
          if (ga) ga->at(grp * seg_len + i, l) += kernels::dot(go, vv.row(vr), D);
          if (gv) kernels::axpy(av.at(grp * seg_len + i, l), go, gv->row(vr), D);
        }
      }
  });
}

Var grouped_rowdot(Var u, Var ctx, std::size_t seg_len) {
  const Tensor& uv = u.value();
  const Tensor& cv = ctx.value();
  const std::size_t B = cv.rows(), d = cv.cols();
  require(uv.cols() == d && uv.rows() == B * seg_len,
          "grouped_rowdot: " + shape_str(uv.shape()) + " against context " + shape_str(cv.shape()));
  Tensor out = Tensor::matrix(seg_len, B);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < seg_len; ++t)
      out.at(t, b) = kernels::dot(uv.row(b * seg_len + t), cv.row(b), d);
  const int iu = u.id, ic = ctx.id;
  return u.tape->record(std::move(out), {u, ctx}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& uv = t.value(iu);
    const Tensor& cv = t.value(ic);
    Tensor* gu = t.grad_sink(iu);
    Tensor* gc = t.grad_sink(ic);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < seg_len; ++i) {
        const real gv = g.at(i, b);
        if (gu) kernels::axpy(gv, cv.row(b), gu->row(b * seg_len + i), d);
        if (gc) kernels::axpy(gv, uv.row(b * seg_len + i), gc->row(b), d);
      }
  });
}

}  // namespace hlan::ad
