#include "dialqa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dialqa/errors.hpp"

namespace dialqa {
namespace {

using Node = Tensor::Node;

void accumulate(Node& parent, std::span<const double> delta) {
  if (!parent.requires_grad) return;
  auto& g = parent.ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? r + axis : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// c[p,r] += a[p,q] * b[q,r]
void gemm_nn(const double* a, const double* b, double* c, std::size_t p,
             std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    double* ci = c + i * r;
    const double* ai = a + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const double av = ai[k];
      if (av == 0.0) continue;
      const double* bk = b + k * r;
      for (std::size_t j = 0; j < r; ++j) ci[j] += av * bk[j];
    }
  }
}

// a_grad[p,q] += g[p,r] * b[q,r]^T
void gemm_nt(const double* g, const double* b, double* out, std::size_t p,
             std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* gi = g + i * r;
    double* oi = out + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const double* bk = b + k * r;
      double acc = 0.0;
      for (std::size_t j = 0; j < r; ++j) acc += gi[j] * bk[j];
      oi[k] += acc;
    }
  }
}

// b_grad[q,r] += a[p,q]^T * g[p,r]
void gemm_tn(const double* a, const double* g, double* out, std::size_t p,
             std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* ai = a + i * q;
    const double* gi = g + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double av = ai[k];
      if (av == 0.0) continue;
      double* ok = out + k * r;
      for (std::size_t j = 0; j < r; ++j) ok[j] += av * gi[j];
    }
  }
}

struct BatchLayout {
  Shape batch_shape;
  std::vector<std::size_t> a_offsets, b_offsets;
};

BatchLayout broadcast_batches(const Shape& sa, const Shape& sb) {
  const std::size_t ra = sa.size() - 2, rb = sb.size() - 2;
  const std::size_t rank = std::max(ra, rb);
  BatchLayout layout;
  layout.batch_shape.assign(rank, 1);
  std::vector<std::size_t> da(rank, 1), db(rank, 1);
  for (std::size_t i = 0; i < ra; ++i) da[rank - ra + i] = sa[i];
  for (std::size_t i = 0; i < rb; ++i) db[rank - rb + i] = sb[i];
  for (std::size_t i = 0; i < rank; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw DimensionError("matmul batch dimensions do not broadcast: " +
                           shape_string(sa) + " x " + shape_string(sb));
    }
    layout.batch_shape[i] = std::max(da[i], db[i]);
  }
  const std::size_t count = shape_size(layout.batch_shape);
  const std::size_t a_mat = sa[sa.size() - 2] * sa.back();
  const std::size_t b_mat = sb[sb.size() - 2] * sb.back();
  layout.a_offsets.resize(count);
  layout.b_offsets.resize(count);
  std::vector<std::size_t> index(rank, 0);
  for (std::size_t n = 0; n < count; ++n) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < rank; ++i) {
      oa = oa * da[i] + (da[i] == 1 ? 0 : index[i]);
      ob = ob * db[i] + (db[i] == 1 ? 0 : index[i]);
    }
    layout.a_offsets[n] = oa * a_mat;
    layout.b_offsets[n] = ob * b_mat;
    for (std::size_t i = rank; i-- > 0;) {
      if (++index[i] < layout.batch_shape[i]) break;
      index[i] = 0;
    }
  }
  return layout;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa.back() != sb[sb.size() - 2]) {
    throw DimensionError("matmul shape mismatch: " + shape_string(sa) + " x " +
                         shape_string(sb));
  }
  const std::size_t p = sa[sa.size() - 2], q = sa.back(), r = sb.back();
  BatchLayout layout = broadcast_batches(sa, sb);
  Shape out_shape = layout.batch_shape;
  out_shape.push_back(p);
  out_shape.push_back(r);
  std::vector<double> out(shape_size(out_shape), 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t n = 0; n < layout.a_offsets.size(); ++n) {
    gemm_nn(ad.data() + layout.a_offsets[n], bd.data() + layout.b_offsets[n],
            out.data() + n * p * r, p, q, r);
  }
  return make_result(
      std::move(out_shape), std::move(out), {a, b},
      [layout = std::move(layout), p, q, r](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        for (std::size_t n = 0; n < layout.a_offsets.size(); ++n) {
          const double* g = self.grad.data() + n * p * r;
          if (na.requires_grad) {
            gemm_nt(g, nb.data.data() + layout.b_offsets[n],
                    na.ensure_grad().data() + layout.a_offsets[n], p, q, r);
          }
          if (nb.requires_grad) {
            gemm_tn(na.data.data() + layout.a_offsets[n], g,
                    nb.ensure_grad().data() + layout.b_offsets[n], p, q, r);
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw DimensionError("transpose requires rank >= 2");
  const std::size_t rows = s[s.size() - 2], cols = s.back();
  const std::size_t batches = a.size() / (rows * cols);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  std::vector<double> out(a.size());
  const auto d = a.data();
  for (std::size_t n = 0; n < batches; ++n) {
    const std::size_t base = n * rows * cols;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        out[base + j * rows + i] = d[base + i * cols + j];
  }
  return make_result(std::move(out_shape), std::move(out), {a},
                     [rows, cols, batches](Node& self) {
                       Node& na = *self.parents[0];
                       auto& g = na.ensure_grad();
                       for (std::size_t n = 0; n < batches; ++n) {
                         const std::size_t base = n * rows * cols;
                         for (std::size_t i = 0; i < rows; ++i)
                           for (std::size_t j = 0; j < cols; ++j)
                             g[base + i * cols + j] += self.grad[base + j * rows + i];
                       }
                     });
}

namespace {

// Size of `b` if its shape equals `a` or a suffix of it; throws otherwise.
std::size_t broadcast_suffix(const Shape& a, const Shape& b, const char* op) {
  bool ok = b.size() <= a.size();
  for (std::size_t i = 0; ok && i < b.size(); ++i) {
    ok = a[a.size() - b.size() + i] == b[i];
  }
  if (!ok) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_string(a) +
                         " and " + shape_string(b));
  }
  return shape_size(b);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t inner = broadcast_suffix(a.shape(), b.shape(), "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % inner];
  return make_result(a.shape(), std::move(out), {a, b}, [inner](Node& self) {
    accumulate(*self.parents[0], self.grad);
    Node& nb = *self.parents[1];
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i];
    }
  });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("multiply shape mismatch: " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  std::vector<double> out(a.size());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.data[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    Node& na = *self.parents[0];
    auto& g = na.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw InputError("add_n of no tensors");
  std::vector<double> out(terms[0].size(), 0.0);
  for (const auto& t : terms) {
    if (t.shape() != terms[0].shape()) {
      throw DimensionError("add_n shape mismatch: " + shape_string(terms[0].shape()) +
                           " and " + shape_string(t.shape()));
    }
    const auto d = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  return make_result(terms[0].shape(), std::move(out),
                     std::vector<Tensor>(terms.begin(), terms.end()),
                     [](Node& self) {
                       for (auto& parent : self.parents) accumulate(*parent, self.grad);
                     });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * d[i] * (1.0 + std::erf(d[i] * std::numbers::sqrt2 / 2.0));
  }
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& nx = *self.parents[0];
    auto& g = nx.ensure_grad();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = nx.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  const std::size_t len = s[ax];
  if (len == 0) throw DimensionError("softmax over empty axis");
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t outer = x.size() / (len * inner);
  std::vector<double> out(x.size());
  const auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = d[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, d[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(d[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
    }
  }
  return make_result(s, std::move(out), {x}, [outer, inner, len](Node& self) {
    Node& nx = *self.parents[0];
    auto& g = nx.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
          dot += self.grad[base + k * inner] * self.data[base + k * inner];
        }
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = base + k * inner;
          g[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (!(eps > 0.0)) throw ConfigError("layer_norm eps must be positive");
  if (x.rank() == 0) throw DimensionError("layer_norm on a scalar");
  const std::size_t width = x.dim(-1);
  if (gain.size() != width || bias.size() != width) {
    throw DimensionError("layer_norm gain/bias " + shape_string(gain.shape()) +
                         "/" + shape_string(bias.shape()) +
                         " do not match last axis of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / width;
  std::vector<double> out(x.size());
  std::vector<double> normalized(x.size());
  std::vector<double> inv_std(rows);
  const auto d = x.data(), gd = gain.data(), bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = d.data() + r * width;
    double mu = 0.0;
    for (std::size_t k = 0; k < width; ++k) mu += xr[k];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t k = 0; k < width; ++k) var += (xr[k] - mu) * (xr[k] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < width; ++k) {
      const double xh = (xr[k] - mu) * inv_std[r];
      normalized[r * width + k] = xh;
      out[r * width + k] = gd[k] * xh + bd[k];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [normalized = std::move(normalized), inv_std = std::move(inv_std), rows,
       width](Node& self) {
        Node& nx = *self.parents[0];
        Node& ng = *self.parents[1];
        Node& nb = *self.parents[2];
        const double inv_w = 1.0 / static_cast<double>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = self.grad.data() + r * width;
          const double* xh = normalized.data() + r * width;
          if (ng.requires_grad) {
            auto& gg = ng.ensure_grad();
            for (std::size_t k = 0; k < width; ++k) gg[k] += gr[k] * xh[k];
          }
          if (nb.requires_grad) {
            auto& gb = nb.ensure_grad();
            for (std::size_t k = 0; k < width; ++k) gb[k] += gr[k];
          }
          if (nx.requires_grad) {
            double mean_dy = 0.0, mean_dy_xh = 0.0;
            for (std::size_t k = 0; k < width; ++k) {
              const double dy = gr[k] * ng.data[k];
              mean_dy += dy;
              mean_dy_xh += dy * xh[k];
            }
            mean_dy *= inv_w;
            mean_dy_xh *= inv_w;
            auto& gx = nx.ensure_grad();
            for (std::size_t k = 0; k < width; ++k) {
              const double dy = gr[k] * ng.data[k];
              gx[r * width + k] += inv_std[r] * (dy - mean_dy - xh[k] * mean_dy_xh);
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " +
                      std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  std::vector<double> out(x.size());
  const auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = d[i] * mask[i];
  }
  return make_result(x.shape(), std::move(out), {x},
                     [mask = std::move(mask)](Node& self) {
                       Node& nx = *self.parents[0];
                       auto& g = nx.ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  if (table.rank() != 2) throw DimensionError("gather_rows requires a matrix");
  const std::size_t n = table.dim(0), width = table.dim(1);
  std::vector<std::size_t> index(rows.begin(), rows.end());
  std::vector<double> out(index.size() * width);
  const auto d = table.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) {
      throw IndexError("row " + std::to_string(index[i]) + " out of range for " +
                       shape_string(table.shape()));
    }
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(index[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  const Shape shape{index.size(), width};
  return make_result(shape, std::move(out), {table},
                     [index = std::move(index), width](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < index.size(); ++i)
                         for (std::size_t k = 0; k < width; ++k)
                           g[index[i] * width + k] += self.grad[i * width + k];
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.rank() != 2 || start + count > x.dim(0)) {
    throw DimensionError("slice_rows [" + std::to_string(start) + ", +" +
                         std::to_string(count) + ") of " + shape_string(x.shape()));
  }
  std::vector<std::size_t> rows(count);
  for (std::size_t i = 0; i < count; ++i) rows[i] = start + i;
  return gather_rows(x, rows);
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.rank() != 2 || start + count > x.dim(1)) {
    throw DimensionError("slice_cols [" + std::to_string(start) + ", +" +
                         std::to_string(count) + ") of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.dim(0), width = x.dim(1);
  std::vector<double> out(rows * count);
  const auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = d[r * width + start + c];
  return make_result({rows, count}, std::move(out), {x},
                     [rows, width, start, count](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < count; ++c)
                           g[r * width + start + c] += self.grad[r * count + c];
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw InputError("concat_rows of no tensors");
  const std::size_t width = parts[0].dim(-1);
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != width) {
      throw DimensionError("concat_rows width mismatch: " +
                           shape_string(parts[0].shape()) + " and " +
                           shape_string(p.shape()));
    }
    offsets.push_back(rows * width);
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * width);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result({rows, width}, std::move(out),
                     std::vector<Tensor>(parts.begin(), parts.end()),
                     [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         Node& p = *self.parents[i];
                         if (!p.requires_grad) continue;
                         auto& g = p.ensure_grad();
                         for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[offsets[i] + k];
                       }
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw InputError("concat_cols of no tensors");
  const std::size_t rows = parts[0].dim(0);
  std::size_t width = 0;
  std::vector<std::size_t> starts;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw DimensionError("concat_cols row mismatch: " +
                           shape_string(parts[0].shape()) + " and " +
                           shape_string(p.shape()));
    }
    starts.push_back(width);
    width += p.dim(1);
  }
  std::vector<double> out(rows * width);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t w = parts[i].dim(1);
    const auto d = parts[i].data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) out[r * width + starts[i] + c] = d[r * w + c];
  }
  return make_result({rows, width}, std::move(out),
                     std::vector<Tensor>(parts.begin(), parts.end()),
                     [starts = std::move(starts), rows, width](Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         Node& p = *self.parents[i];
                         if (!p.requires_grad) continue;
                         const std::size_t w = p.shape[1];
                         auto& g = p.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < w; ++c)
                             g[r * w + c] += self.grad[r * width + starts[i] + c];
                       }
                     });
}

Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) throw DimensionError("mean_rows requires a non-empty matrix");
  const std::size_t rows = x.dim(0), width = x.dim(1);
  std::vector<double> out(width, 0.0);
  const auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out[c] += d[r * width + c];
  const double inv = 1.0 / static_cast<double>(rows);
  for (auto& v : out) v *= inv;
  return make_result({1, width}, std::move(out), {x}, [rows, width, inv](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c) g[r * width + c] += inv * self.grad[c];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_string(x.shape()) + " to " +
                         shape_string(shape));
  }
  return make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                     {x}, [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  const std::size_t k = logits.size();
  if (logits.rank() != 1 && !(logits.rank() == 2 && logits.dim(0) == 1)) {
    throw DimensionError("cross_entropy expects a logit vector, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t targets[1] = {target};
  return cross_entropy_rows(reshape(logits, {1, k}), targets);
}

Tensor cross_entropy_rows(const Tensor& logits,
                          std::span<const std::size_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size() || logits.dim(1) == 0) {
    throw DimensionError("cross_entropy_rows: logits " + shape_string(logits.shape()) +
                         " for " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  std::vector<double> probs(rows * k);
  const auto d = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] >= k) {
      throw IndexError("cross_entropy target " + std::to_string(tgt[r]) +
                       " out of range for " + std::to_string(k) + " classes");
    }
    const double* lr = d.data() + r * k;
    const double mx = *std::max_element(lr, lr + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(lr[c] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < k; ++c) probs[r * k + c] = std::exp(lr[c] - log_z);
    total += log_z - lr[tgt[r]];
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  return make_result(
      {}, {total * inv_rows}, {logits},
      [probs = std::move(probs), tgt = std::move(tgt), k, inv_rows](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        const double scale_out = self.grad[0] * inv_rows;
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          for (std::size_t c = 0; c < k; ++c) {
            const double onehot = c == tgt[r] ? 1.0 : 0.0;
            g[r * k + c] += scale_out * (probs[r * k + c] - onehot);
          }
        }
      });
}

std::vector<double> softmax_values(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax over empty axis");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

}  // namespace dialqa
