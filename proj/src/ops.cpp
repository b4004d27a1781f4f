#include "ppasr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace ppasr {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                              " vs " + b.shape_str());
}

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// C[m,n] += A[m,k] . B[k,n]
void mm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float aip = arow[p];
      if (aip == 0.0f) continue;
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C[m,n] += A[m,k] . B^T, B is [n,k]
void mm_nt(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<size_t>(j) * k;
      float acc = 0.0f;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k,n] += A^T . B, A is [m,k], B is [m,n]
void mm_tn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    const float* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float aip = arow[p];
      if (aip == 0.0f) continue;
      float* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                t.shape_str());
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  mm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor A = a, B = b, O = out;
    Tape::active()->record([A, B, O]() mutable {
      const float* go = O.grad().data();
      if (A.requires_grad()) mm_nt(go, B.data().data(), A.grad().data(), A.rows(), B.cols(), A.cols());
      if (B.requires_grad()) mm_tn(A.data().data(), go, B.grad().data(), A.rows(), A.cols(), B.cols());
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  const int m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros({m, n});
  mm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor A = a, B = b, O = out;
    Tape::active()->record([A, B, O]() mutable {
      const float* go = O.grad().data();
      if (A.requires_grad()) mm_nn(go, B.data().data(), A.grad().data(), A.rows(), B.rows(), A.cols());
      if (B.requires_grad()) mm_tn(go, A.data().data(), B.grad().data(), A.rows(), B.rows(), A.cols());
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({n, m});
  const float* src = a.data().data();
  float* dst = out.data().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) dst[static_cast<size_t>(j) * m + i] = src[static_cast<size_t>(i) * n + j];
  if (want_grad({&a})) {
    out.set_requires_grad(true);
    Tensor A = a, O = out;
    Tape::active()->record([A, O]() mutable {
      if (!A.requires_grad()) return;
      const float* go = O.grad().data();
      float* ga = A.grad().data();
      const int mm = A.rows(), nn = A.cols();
      for (int i = 0; i < mm; ++i)
        for (int j = 0; j < nn; ++j) ga[static_cast<size_t>(i) * nn + j] += go[static_cast<size_t>(j) * mm + i];
    });
  }
  return out;
}

namespace {

enum class EwKind { Add, Sub, Mul };

Tensor elementwise(const char* name, EwKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(name, a, b);
  const int64_t n = a.size();
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  switch (kind) {
    case EwKind::Add: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
    case EwKind::Sub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
    case EwKind::Mul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
  }
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor A = a, B = b, O = out;
    Tape::active()->record([A, B, O, kind]() mutable {
      const float* go = O.grad().data();
      const int64_t cnt = O.size();
      if (A.requires_grad()) {
        float* ga = A.grad().data();
        if (kind == EwKind::Mul) {
          const float* pb2 = B.data().data();
          for (int64_t i = 0; i < cnt; ++i) ga[i] += go[i] * pb2[i];
        } else {
          for (int64_t i = 0; i < cnt; ++i) ga[i] += go[i];
        }
      }
      if (B.requires_grad()) {
        float* gb = B.grad().data();
        if (kind == EwKind::Mul) {
          const float* pa2 = A.data().data();
          for (int64_t i = 0; i < cnt; ++i) gb[i] += go[i] * pa2[i];
        } else if (kind == EwKind::Sub) {
          for (int64_t i = 0; i < cnt; ++i) gb[i] -= go[i];
        } else {
          for (int64_t i = 0; i < cnt; ++i) gb[i] += go[i];
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise("add", EwKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise("sub", EwKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise("mul", EwKind::Mul, a, b); }

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_rank2("add_bias", x);
  if (b.rank() != 1 || b.shape()[0] != x.cols()) shape_error("add_bias", x, b);
  const int t = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros({t, n});
  const float* px = x.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < n; ++j) po[static_cast<size_t>(i) * n + j] = px[static_cast<size_t>(i) * n + j] + pb[j];
  if (want_grad({&x, &b})) {
    out.set_requires_grad(true);
    Tensor X = x, B = b, O = out;
    Tape::active()->record([X, B, O]() mutable {
      const float* go = O.grad().data();
      const int tt = O.rows(), nn = O.cols();
      if (X.requires_grad()) {
        float* gx = X.grad().data();
        for (int64_t i = 0; i < O.size(); ++i) gx[i] += go[i];
      }
      if (B.requires_grad()) {
        float* gb = B.grad().data();
        for (int i = 0; i < tt; ++i)
          for (int j = 0; j < nn; ++j) gb[j] += go[static_cast<size_t>(i) * nn + j];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float c) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data().data();
  float* po = out.data().data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = px[i] * c;
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor X = x, O = out;
    Tape::active()->record([X, O, c]() mutable {
      if (!X.requires_grad()) return;
      const float* go = O.grad().data();
      float* gx = X.grad().data();
      for (int64_t i = 0; i < O.size(); ++i) gx[i] += go[i] * c;
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2("softmax_rows", x);
  if (x.cols() < 1) throw std::invalid_argument("softmax_rows: empty axis");
  const int t = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros({t, n});
  const float* px = x.data().data();
  float* po = out.data().data();
  for (int i = 0; i < t; ++i) {
    const float* row = px + static_cast<size_t>(i) * n;
    float* orow = po + static_cast<size_t>(i) * n;
    float mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    float sum = 0.0f;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const float inv = 1.0f / sum;
    for (int j = 0; j < n; ++j) orow[j] *= inv;
  }
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor X = x, O = out;
    Tape::active()->record([X, O]() mutable {
      if (!X.requires_grad()) return;
      const float* go = O.grad().data();
      const float* py = O.data().data();
      float* gx = X.grad().data();
      const int tt = O.rows(), nn = O.cols();
      for (int i = 0; i < tt; ++i) {
        const float* yrow = py + static_cast<size_t>(i) * nn;
        const float* grow = go + static_cast<size_t>(i) * nn;
        float dot = 0.0f;
        for (int j = 0; j < nn; ++j) dot += grow[j] * yrow[j];
        float* gxrow = gx + static_cast<size_t>(i) * nn;
        for (int j = 0; j < nn; ++j) gxrow[j] += yrow[j] * (grow[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank2("layer_norm", x);
  const int t = x.rows(), n = x.cols();
  if (gamma.rank() != 1 || gamma.shape()[0] != n) shape_error("layer_norm", x, gamma);
  if (beta.rank() != 1 || beta.shape()[0] != n) shape_error("layer_norm", x, beta);
  Tensor out = Tensor::zeros({t, n});
  std::vector<float> xhat(static_cast<size_t>(t) * n);
  std::vector<float> inv_std(static_cast<size_t>(t));
  const float* px = x.data().data();
  const float* pg = gamma.data().data();
  const float* pb = beta.data().data();
  float* po = out.data().data();
  for (int i = 0; i < t; ++i) {
    const float* row = px + static_cast<size_t>(i) * n;
    float mean = 0.0f;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<float>(n);
    float var = 0.0f;
    for (int j = 0; j < n; ++j) {
      const float d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<float>(n);
    const float inv = 1.0f / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = inv;
    float* hrow = xhat.data() + static_cast<size_t>(i) * n;
    float* orow = po + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      hrow[j] = (row[j] - mean) * inv;
      orow[j] = pg[j] * hrow[j] + pb[j];
    }
  }
  if (want_grad({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor X = x, G = gamma, B = beta, O = out;
    Tape::active()->record([X, G, B, O, xhat = std::move(xhat),
                            inv_std = std::move(inv_std)]() mutable {
      const float* go = O.grad().data();
      const int tt = O.rows(), nn = O.cols();
      const float* pg2 = G.data().data();
      for (int i = 0; i < tt; ++i) {
        const float* grow = go + static_cast<size_t>(i) * nn;
        const float* hrow = xhat.data() + static_cast<size_t>(i) * nn;
        if (X.requires_grad()) {
          // dx = inv*(g - mean(g) - xhat*mean(g*xhat)), g = dy*gamma
          float mean_g = 0.0f, mean_gh = 0.0f;
          for (int j = 0; j < nn; ++j) {
            const float g = grow[j] * pg2[j];
            mean_g += g;
            mean_gh += g * hrow[j];
          }
          mean_g /= static_cast<float>(nn);
          mean_gh /= static_cast<float>(nn);
          float* gx = X.grad().data() + static_cast<size_t>(i) * nn;
          const float inv = inv_std[static_cast<size_t>(i)];
          for (int j = 0; j < nn; ++j) {
            const float g = grow[j] * pg2[j];
            gx[j] += inv * (g - mean_g - hrow[j] * mean_gh);
          }
        }
        if (G.requires_grad()) {
          float* gg = G.grad().data();
          for (int j = 0; j < nn; ++j) gg[j] += grow[j] * hrow[j];
        }
        if (B.requires_grad()) {
          float* gb = B.grad().data();
          for (int j = 0; j < nn; ++j) gb[j] += grow[j];
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  constexpr float kCubic = 0.044715f;
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data().data();
  float* po = out.data().data();
  for (int64_t i = 0; i < x.size(); ++i) {
    const float v = px[i];
    const float u = kSqrt2OverPi * (v + kCubic * v * v * v);
    po[i] = 0.5f * v * (1.0f + std::tanh(u));
  }
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor X = x, O = out;
    Tape::active()->record([X, O]() mutable {
      if (!X.requires_grad()) return;
      const float* go = O.grad().data();
      const float* px2 = X.data().data();
      float* gx = X.grad().data();
      for (int64_t i = 0; i < X.size(); ++i) {
        const float v = px2[i];
        const float u = kSqrt2OverPi * (v + kCubic * v * v * v);
        const float th = std::tanh(u);
        const float sech2 = 1.0f - th * th;
        const float du = kSqrt2OverPi * (1.0f + 3.0f * kCubic * v * v);
        gx[i] += go[i] * (0.5f * (1.0f + th) + 0.5f * v * sech2 * du);
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  require_rank2("embedding", table);
  const int v = table.rows(), d = table.cols();
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw std::out_of_range("embedding: id " + std::to_string(id) +
                              " out of range for table " + table.shape_str());
    }
  }
  const int t = static_cast<int>(ids.size());
  if (t == 0) throw std::invalid_argument("embedding: empty id list");
  Tensor out = Tensor::zeros({t, d});
  const float* pt = table.data().data();
  float* po = out.data().data();
  for (int i = 0; i < t; ++i) {
    std::memcpy(po + static_cast<size_t>(i) * d,
                pt + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d,
                sizeof(float) * static_cast<size_t>(d));
  }
  if (want_grad({&table})) {
    out.set_requires_grad(true);
    Tensor T = table, O = out;
    Tape::active()->record([T, O, ids]() mutable {
      if (!T.requires_grad()) return;
      const float* go = O.grad().data();
      float* gt = T.grad().data();
      const int dd = T.cols();
      for (size_t i = 0; i < ids.size(); ++i) {
        const float* grow = go + i * static_cast<size_t>(dd);
        float* trow = gt + static_cast<size_t>(ids[i]) * dd;
        for (int j = 0; j < dd; ++j) trow[j] += grow[j];
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const int n = xs[0].cols();
  int total = 0;
  for (const Tensor& x : xs) {
    require_rank2("concat_rows", x);
    if (x.cols() != n) shape_error("concat_rows", xs[0], x);
    total += x.rows();
  }
  Tensor out = Tensor::zeros({total, n});
  float* po = out.data().data();
  int row = 0;
  for (const Tensor& x : xs) {
    std::memcpy(po + static_cast<size_t>(row) * n, x.data().data(),
                sizeof(float) * static_cast<size_t>(x.size()));
    row += x.rows();
  }
  bool any = false;
  for (const Tensor& x : xs) any = any || x.requires_grad();
  if (Tape::active() && any) {
    out.set_requires_grad(true);
    std::vector<Tensor> inputs = xs;
    Tensor O = out;
    Tape::active()->record([inputs, O]() mutable {
      const float* go = O.grad().data();
      const int nn = O.cols();
      int r = 0;
      for (Tensor& x : inputs) {
        if (x.requires_grad()) {
          float* gx = x.grad().data();
          const float* src = go + static_cast<size_t>(r) * nn;
          for (int64_t i = 0; i < x.size(); ++i) gx[i] += src[i];
        }
        r += x.rows();
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  require_rank2("slice_rows", x);
  if (r0 < 0 || r1 > x.rows() || r0 >= r1) {
    throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," +
                                std::to_string(r1) + ") for " + x.shape_str());
  }
  const int n = x.cols();
  Tensor out = Tensor::zeros({r1 - r0, n});
  std::memcpy(out.data().data(), x.data().data() + static_cast<size_t>(r0) * n,
              sizeof(float) * static_cast<size_t>(out.size()));
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor X = x, O = out;
    Tape::active()->record([X, O, r0]() mutable {
      if (!X.requires_grad()) return;
      const float* go = O.grad().data();
      float* gx = X.grad().data() + static_cast<size_t>(r0) * X.cols();
      for (int64_t i = 0; i < O.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int t = xs[0].rows();
  int total = 0;
  for (const Tensor& x : xs) {
    require_rank2("concat_cols", x);
    if (x.rows() != t) shape_error("concat_cols", xs[0], x);
    total += x.cols();
  }
  Tensor out = Tensor::zeros({t, total});
  float* po = out.data().data();
  int col = 0;
  for (const Tensor& x : xs) {
    const float* px = x.data().data();
    const int n = x.cols();
    for (int i = 0; i < t; ++i) {
      std::memcpy(po + static_cast<size_t>(i) * total + col, px + static_cast<size_t>(i) * n,
                  sizeof(float) * static_cast<size_t>(n));
    }
    col += n;
  }
  bool any = false;
  for (const Tensor& x : xs) any = any || x.requires_grad();
  if (Tape::active() && any) {
    out.set_requires_grad(true);
    std::vector<Tensor> inputs = xs;
    Tensor O = out;
    Tape::active()->record([inputs, O]() mutable {
      const float* go = O.grad().data();
      const int tt = O.rows(), total2 = O.cols();
      int c = 0;
      for (Tensor& x : inputs) {
        const int n = x.cols();
        if (x.requires_grad()) {
          float* gx = x.grad().data();
          for (int i = 0; i < tt; ++i) {
            const float* src = go + static_cast<size_t>(i) * total2 + c;
            float* dst = gx + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) dst[j] += src[j];
          }
        }
        c += n;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  require_rank2("slice_cols", x);
  if (c0 < 0 || c1 > x.cols() || c0 >= c1) {
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") for " + x.shape_str());
  }
  const int t = x.rows(), n = x.cols(), w = c1 - c0;
  Tensor out = Tensor::zeros({t, w});
  const float* px = x.data().data();
  float* po = out.data().data();
  for (int i = 0; i < t; ++i) {
    std::memcpy(po + static_cast<size_t>(i) * w, px + static_cast<size_t>(i) * n + c0,
                sizeof(float) * static_cast<size_t>(w));
  }
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor X = x, O = out;
    Tape::active()->record([X, O, c0]() mutable {
      if (!X.requires_grad()) return;
      const float* go = O.grad().data();
      float* gx = X.grad().data();
      const int tt = O.rows(), w2 = O.cols(), n2 = X.cols();
      for (int i = 0; i < tt; ++i) {
        const float* src = go + static_cast<size_t>(i) * w2;
        float* dst = gx + static_cast<size_t>(i) * n2 + c0;
        for (int j = 0; j < w2; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& x) {
  require_rank2("mean_rows", x);
  const int t = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros({1, n});
  const float* px = x.data().data();
  float* po = out.data().data();
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < n; ++j) po[j] += px[static_cast<size_t>(i) * n + j];
  const float inv = 1.0f / static_cast<float>(t);
  for (int j = 0; j < n; ++j) po[j] *= inv;
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor X = x, O = out;
    Tape::active()->record([X, O, inv]() mutable {
      if (!X.requires_grad()) return;
      const float* go = O.grad().data();
      float* gx = X.grad().data();
      const int tt = X.rows(), nn = X.cols();
      for (int i = 0; i < tt; ++i)
        for (int j = 0; j < nn; ++j) gx[static_cast<size_t>(i) * nn + j] += go[j] * inv;
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  float s = 0.0f;
  for (float v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor X = x, O = out;
    Tape::active()->record([X, O]() mutable {
      if (!X.requires_grad()) return;
      const float g = O.grad()[0];
      float* gx = X.grad().data();
      for (int64_t i = 0; i < X.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  require_rank2("linear", x);
  require_rank2("linear", W);
  if (x.cols() != W.cols()) shape_error("linear", x, W);
  const int t = x.rows(), in = x.cols(), out_dim = W.rows();
  if (b.defined() && (b.rank() != 1 || b.shape()[0] != out_dim)) shape_error("linear", W, b);
  Tensor out = Tensor::zeros({t, out_dim});
  mm_nt(x.data().data(), W.data().data(), out.data().data(), t, in, out_dim);
  if (b.defined()) {
    float* po = out.data().data();
    const float* pb = b.data().data();
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < out_dim; ++j) po[static_cast<size_t>(i) * out_dim + j] += pb[j];
  }
  const Tensor* inputs[] = {&x, &W, &b};
  bool any = false;
  for (const Tensor* p : inputs) any = any || (p->defined() && p->requires_grad());
  if (Tape::active() && any) {
    out.set_requires_grad(true);
    Tensor X = x, Wt = W, B = b, O = out;
    Tape::active()->record([X, Wt, B, O]() mutable {
      const float* go = O.grad().data();
      const int tt = O.rows(), oo = O.cols(), ii = X.cols();
      if (X.requires_grad()) mm_nn(go, Wt.data().data(), X.grad().data(), tt, oo, ii);
      if (Wt.requires_grad()) mm_tn(go, X.data().data(), Wt.grad().data(), tt, oo, ii);
      if (B.defined() && B.requires_grad()) {
        float* gb = B.grad().data();
        for (int i = 0; i < tt; ++i)
          for (int j = 0; j < oo; ++j) gb[j] += go[static_cast<size_t>(i) * oo + j];
      }
    });
  }
  return out;
}

Tensor unfold_k3(const Tensor& x, int stride) {
  require_rank2("unfold_k3", x);
  if (stride < 1) throw std::invalid_argument("unfold_k3: stride must be >= 1");
  const int t = x.rows(), c = x.cols();
  if (t < 2) throw std::invalid_argument("unfold_k3: input too short, shape " + x.shape_str());
  const int t_out = (t - 1) / stride + 1;
  Tensor out = Tensor::zeros({t_out, 3 * c});
  const float* px = x.data().data();
  float* po = out.data().data();
  for (int i = 0; i < t_out; ++i) {
    for (int j = 0; j < 3; ++j) {
      const int src = i * stride + j - 1;
      if (src < 0 || src >= t) continue;
      std::memcpy(po + static_cast<size_t>(i) * 3 * c + static_cast<size_t>(j) * c,
                  px + static_cast<size_t>(src) * c, sizeof(float) * static_cast<size_t>(c));
    }
  }
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor X = x, O = out;
    Tape::active()->record([X, O, stride]() mutable {
      if (!X.requires_grad()) return;
      const float* go = O.grad().data();
      float* gx = X.grad().data();
      const int tt = X.rows(), cc = X.cols(), t_out2 = O.rows();
      for (int i = 0; i < t_out2; ++i) {
        for (int j = 0; j < 3; ++j) {
          const int src = i * stride + j - 1;
          if (src < 0 || src >= tt) continue;
          const float* g = go + static_cast<size_t>(i) * 3 * cc + static_cast<size_t>(j) * cc;
          float* dst = gx + static_cast<size_t>(src) * cc;
          for (int k = 0; k < cc; ++k) dst[k] += g[k];
        }
      }
    });
  }
  return out;
}

Tensor causal_mask(const Tensor& scores) {
  require_rank2("causal_mask", scores);
  const int tq = scores.rows(), tk = scores.cols();
  if (tq > tk) shape_error("causal_mask", scores, scores);
  const int offset = tk - tq;
  Tensor out = Tensor::zeros({tq, tk});
  const float* px = scores.data().data();
  float* po = out.data().data();
  for (int i = 0; i < tq; ++i) {
    for (int j = 0; j < tk; ++j) {
      const size_t idx = static_cast<size_t>(i) * tk + j;
      po[idx] = (j > i + offset) ? px[idx] - 1e9f : px[idx];
    }
  }
  if (want_grad({&scores})) {
    out.set_requires_grad(true);
    Tensor X = scores, O = out;
    Tape::active()->record([X, O]() mutable {
      if (!X.requires_grad()) return;
      const float* go = O.grad().data();
      float* gx = X.grad().data();
      for (int64_t i = 0; i < O.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  require_rank2("cross_entropy", logits);
  const int t = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != t) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + logits.shape_str());
  }
  for (int id : targets) {
    if (id < 0 || id >= v) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(id) +
                              " out of range [0," + std::to_string(v) + ")");
    }
  }
  std::vector<float> probs(static_cast<size_t>(t) * v);
  const float* pl = logits.data().data();
  double loss = 0.0;
  for (int i = 0; i < t; ++i) {
    const float* row = pl + static_cast<size_t>(i) * v;
    float mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    float* prow = probs.data() + static_cast<size_t>(i) * v;
    for (int j = 0; j < v; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += prow[j];
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (int j = 0; j < v; ++j) prow[j] *= inv;
    loss += std::log(sum) + mx - row[targets[static_cast<size_t>(i)]];
  }
  Tensor out = Tensor::scalar(static_cast<float>(loss / t));
  if (want_grad({&logits})) {
    out.set_requires_grad(true);
    Tensor L = logits, O = out;
    Tape::active()->record([L, O, targets, probs = std::move(probs)]() mutable {
      if (!L.requires_grad()) return;
      const float g = O.grad()[0] / static_cast<float>(L.rows());
      float* gl = L.grad().data();
      const int vv = L.cols();
      for (int i = 0; i < L.rows(); ++i) {
        const float* prow = probs.data() + static_cast<size_t>(i) * vv;
        float* grow = gl + static_cast<size_t>(i) * vv;
        for (int j = 0; j < vv; ++j) grow[j] += g * prow[j];
        grow[targets[static_cast<size_t>(i)]] -= g;
      }
    });
  }
  return out;
}

Tensor mse_loss(const Tensor& pred, float target) {
  if (pred.size() != 1) {
    throw std::invalid_argument("mse_loss: prediction must be a single value, got " +
                                pred.shape_str());
  }
  const float diff = pred.at(0) - target;
  Tensor out = Tensor::scalar(diff * diff);
  if (want_grad({&pred})) {
    out.set_requires_grad(true);
    Tensor P = pred, O = out;
    Tape::active()->record([P, O, diff]() mutable {
      if (!P.requires_grad()) return;
      P.grad()[0] += O.grad()[0] * 2.0f * diff;
    });
  }
  return out;
}

Tensor detach(const Tensor& x) { return x.detach_alias(); }

}  // namespace ppasr
