// SPDX-License-Identifier: Apache-2.0
#include "metaxp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metaxp/error.hpp"
#include "metaxp/kernels.hpp"

namespace metaxp::ad {

namespace {

Graph& graph_of(Var a, const char* op) {
  if (!a.valid()) throw GraphError(std::string(op) + ": unbound variable");
  return *a.graph;
}

Graph& graph_of(Var a, Var b, const char* op) {
  Graph& g = graph_of(a, op);
  if (b.graph != a.graph) throw GraphError(std::string(op) + ": operands from different graphs");
  return g;
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
}

bool is_row_vector_of(const Tensor& b, const Tensor& a) {
  if (a.rank() != 2) return false;
  const std::size_t n = a.shape()[1];
  return (b.rank() == 1 && b.shape()[0] == n) || (b.rank() == 2 && b.shape()[0] == 1 && b.shape()[1] == n);
}

// Row-major view helpers: every op below treats tensors as rows x cols
// where cols is the last dimension.
std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    shape_mismatch("matmul", av.shape(), bv.shape());
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  Tensor out(Shape{m, n});
  kernels::gemm_nn(m, n, k, av.data(), bv.data(), out.data());
  const std::uint32_t ia = a.id, ib = b.id;
  return g.record(OpKind::MatMul, {ia, ib}, std::move(out), [ia, ib, m, n, k](Graph& gr, std::uint32_t self) {
    auto dc = gr.grad_of(self);
    if (gr.needs_grad(ia)) kernels::gemm_nt(m, k, n, dc, gr.value_of(ib).data(), gr.grad_buffer(ia));
    if (gr.needs_grad(ib)) kernels::gemm_tn(k, n, m, gr.value_of(ia).data(), dc, gr.grad_buffer(ib));
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::uint32_t ia = a.id, ib = b.id;
  if (av.shape() == bv.shape()) {
    Tensor out = av;
    out.set_requires_grad(false);
    kernels::axpy(1.0, bv.data(), out.data());
    return g.record(OpKind::Add, {ia, ib}, std::move(out), [ia, ib](Graph& gr, std::uint32_t self) {
      auto dc = gr.grad_of(self);
      if (gr.needs_grad(ia)) kernels::axpy(1.0, dc, gr.grad_buffer(ia));
      if (gr.needs_grad(ib)) kernels::axpy(1.0, dc, gr.grad_buffer(ib));
    });
  }
  if (!is_row_vector_of(bv, av)) shape_mismatch("add", av.shape(), bv.shape());
  const std::size_t rows = av.shape()[0], cols = av.shape()[1];
  Tensor out(av.shape(), av.storage());
  for (std::size_t r = 0; r < rows; ++r) {
    kernels::axpy(1.0, bv.data(), out.data().subspan(r * cols, cols));
  }
  return g.record(OpKind::Add, {ia, ib}, std::move(out), [ia, ib, rows, cols](Graph& gr, std::uint32_t self) {
    auto dc = gr.grad_of(self);
    if (gr.needs_grad(ia)) kernels::axpy(1.0, dc, gr.grad_buffer(ia));
    if (gr.needs_grad(ib)) {
      auto db = gr.grad_buffer(ib);
      for (std::size_t r = 0; r < rows; ++r) kernels::axpy(1.0, dc.subspan(r * cols, cols), db);
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_mismatch("mul", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::uint32_t ia = a.id, ib = b.id;
  return g.record(OpKind::Mul, {ia, ib}, std::move(out), [ia, ib](Graph& gr, std::uint32_t self) {
    auto dc = gr.grad_of(self);
    const auto& x = gr.value_of(ia);
    const auto& y = gr.value_of(ib);
    if (gr.needs_grad(ia)) {
      auto da = gr.grad_buffer(ia);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dc[i] * y[i];
    }
    if (gr.needs_grad(ib)) {
      auto db = gr.grad_buffer(ib);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dc[i] * x[i];
    }
  });
}

Var scale(Var a, double factor) {
  Graph& g = graph_of(a, "scale");
  Tensor out(a.value().shape(), a.value().storage());
  kernels::scale(factor, out.data());
  const std::uint32_t ia = a.id;
  return g.record(OpKind::Scale, {ia}, std::move(out), [ia, factor](Graph& gr, std::uint32_t self) {
    kernels::axpy(factor, gr.grad_of(self), gr.grad_buffer(ia));
  });
}

Var relu(Var a) {
  Graph& g = graph_of(a, "relu");
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  const std::uint32_t ia = a.id;
  return g.record(OpKind::Relu, {ia}, std::move(out), [ia](Graph& gr, std::uint32_t self) {
    auto dc = gr.grad_of(self);
    const auto& x = gr.value_of(ia);
    auto da = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < da.size(); ++i) {
      if (x[i] > 0.0) da[i] += dc[i];
    }
  });
}

Var softmax(Var a) {
  Graph& g = graph_of(a, "softmax");
  const Tensor& av = a.value();
  const std::size_t cols = last_dim(av);
  const std::size_t rows = av.size() / cols;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * cols;
    double* y = out.data().data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  const std::uint32_t ia = a.id;
  return g.record(OpKind::Softmax, {ia}, std::move(out), [ia, rows, cols](Graph& gr, std::uint32_t self) {
    auto dc = gr.grad_of(self);
    const auto& y = gr.value_of(self);
    auto da = gr.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      const double inner = kernels::dot(dc.subspan(o, cols), y.data().subspan(o, cols));
      for (std::size_t c = 0; c < cols; ++c) da[o + c] += y[o + c] * (dc[o + c] - inner);
    }
  });
}

Var log_softmax(Var a) {
  Graph& g = graph_of(a, "log_softmax");
  const Tensor& av = a.value();
  const std::size_t cols = last_dim(av);
  const std::size_t rows = av.size() / cols;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * cols;
    double* y = out.data().data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(x[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
  }
  const std::uint32_t ia = a.id;
  return g.record(OpKind::LogSoftmax, {ia}, std::move(out), [ia, rows, cols](Graph& gr, std::uint32_t self) {
    auto dc = gr.grad_of(self);
    const auto& y = gr.value_of(self);
    auto da = gr.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += dc[o + c];
      for (std::size_t c = 0; c < cols; ++c) da[o + c] += dc[o + c] - std::exp(y[o + c]) * total;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double epsilon) {
  Graph& g = graph_of(x, gain, "layer_norm");
  graph_of(x, bias, "layer_norm");
  const Tensor& xv = x.value();
  const std::size_t cols = last_dim(xv);
  const std::size_t rows = xv.size() / cols;
  if (gain.value().size() != cols || bias.value().size() != cols) {
    shape_mismatch("layer_norm", xv.shape(), gain.value().shape());
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape());
  std::vector<double> normalized(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xv[o + c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xv[o + c] - mean) * (xv[o + c] - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t c = 0; c < cols; ++c) {
      normalized[o + c] = (xv[o + c] - mean) * inv_std[r];
      out[o + c] = gv[c] * normalized[o + c] + bv[c];
    }
  }
  const std::uint32_t ix = x.id, ig = gain.id, ib = bias.id;
  return g.record(OpKind::LayerNorm, {ix, ig, ib}, std::move(out),
                  [ix, ig, ib, rows, cols, normalized = std::move(normalized),
                   inv_std = std::move(inv_std)](Graph& gr, std::uint32_t self) {
                    auto dy = gr.grad_of(self);
                    if (gr.needs_grad(ig)) {
                      auto dg = gr.grad_buffer(ig);
                      for (std::size_t i = 0; i < dy.size(); ++i) dg[i % cols] += dy[i] * normalized[i];
                    }
                    if (gr.needs_grad(ib)) {
                      auto db = gr.grad_buffer(ib);
                      for (std::size_t i = 0; i < dy.size(); ++i) db[i % cols] += dy[i];
                    }
                    if (!gr.needs_grad(ix)) return;
                    const auto& gv = gr.value_of(ig);
                    auto dx = gr.grad_buffer(ix);
                    const double n = static_cast<double>(cols);
                    std::vector<double> dn(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const std::size_t o = r * cols;
                      double mean_dn = 0.0, mean_dn_n = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        dn[c] = dy[o + c] * gv[c];
                        mean_dn += dn[c];
                        mean_dn_n += dn[c] * normalized[o + c];
                      }
                      mean_dn /= n;
                      mean_dn_n /= n;
                      for (std::size_t c = 0; c < cols; ++c) {
                        dx[o + c] += inv_std[r] * (dn[c] - mean_dn - normalized[o + c] * mean_dn_n);
                      }
                    }
                  });
}

Var dropout(Var x, double rate) {
  Graph& g = graph_of(x, "dropout");
  if (rate < 0.0 || rate >= 1.0) throw ShapeError("dropout: rate must be in [0, 1)");
  if (!g.training() || rate == 0.0) return x;
  const Tensor& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(xv.size());
  auto& rng = g.rng();
  for (auto& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < rate ? 0.0 : keep_scale;
  }
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  const std::uint32_t ix = x.id;
  return g.record(OpKind::Dropout, {ix}, std::move(out), [ix, mask = std::move(mask)](Graph& gr, std::uint32_t self) {
    auto dy = gr.grad_of(self);
    auto dx = gr.grad_buffer(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  Graph& g = graph_of(table, "embedding");
  const Tensor& tv = table.value();
  require_rank2("embedding", tv);
  const std::size_t vocab = tv.shape()[0], dim = tv.shape()[1];
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  Tensor out(Shape{ids.size(), dim});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(ids[r]) + " outside table " + shape_string(tv.shape()));
    }
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * dim), dim,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  const std::uint32_t it = table.id;
  return g.record(OpKind::Embedding, {it}, std::move(out),
                  [it, dim, ids = std::vector<std::size_t>(ids.begin(), ids.end())](Graph& gr, std::uint32_t self) {
                    auto dy = gr.grad_of(self);
                    auto dt = gr.grad_buffer(it);
                    for (std::size_t r = 0; r < ids.size(); ++r) {
                      kernels::axpy(1.0, dy.subspan(r * dim, dim), dt.subspan(ids[r] * dim, dim));
                    }
                  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  Graph& g = graph_of(parts[0], "concat");
  const Tensor& first = parts[0].value();
  require_rank2("concat", first);
  std::size_t rows = first.shape()[0], cols = first.shape()[1];
  std::size_t total = 0;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> extents;
  for (Var p : parts) {
    graph_of(parts[0], p, "concat");
    const Tensor& t = p.value();
    require_rank2("concat", t);
    if (axis == 0 && t.shape()[1] != cols) shape_mismatch("concat", first.shape(), t.shape());
    if (axis == 1 && t.shape()[0] != rows) shape_mismatch("concat", first.shape(), t.shape());
    extents.push_back(t.shape()[axis]);
    total += t.shape()[axis];
    ids.push_back(p.id);
  }
  if (axis == 0) rows = total; else cols = total;
  Tensor out(Shape{rows, cols});
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = parts[i].value();
    if (axis == 0) {
      std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset * cols));
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(r * extents[i]), extents[i],
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * cols + offset));
      }
    }
    offset += extents[i];
  }
  auto ids_copy = ids;
  return g.record(OpKind::Concat, std::move(ids_copy), std::move(out),
                  [ids, extents, axis, rows, cols](Graph& gr, std::uint32_t self) {
                    auto dy = gr.grad_of(self);
                    std::size_t off = 0;
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      if (gr.needs_grad(ids[i])) {
                        auto dx = gr.grad_buffer(ids[i]);
                        if (axis == 0) {
                          kernels::axpy(1.0, dy.subspan(off * cols, dx.size()), dx);
                        } else {
                          for (std::size_t r = 0; r < rows; ++r) {
                            kernels::axpy(1.0, dy.subspan(r * cols + off, extents[i]),
                                          dx.subspan(r * extents[i], extents[i]));
                          }
                        }
                      }
                      off += extents[i];
                    }
                  });
}

Var slice(Var x, int axis, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x, "slice");
  const Tensor& xv = x.value();
  require_rank2("slice", xv);
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  const std::size_t rows = xv.shape()[0], cols = xv.shape()[1];
  const std::size_t extent = xv.shape()[static_cast<std::size_t>(axis)];
  if (begin >= end || end > extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for shape " + shape_string(xv.shape()));
  }
  const std::size_t width = end - begin;
  Tensor out(axis == 0 ? Shape{width, cols} : Shape{rows, width});
  if (axis == 0) {
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * cols), width * cols, out.data().begin());
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(r * cols + begin), width,
                  out.data().begin() + static_cast<std::ptrdiff_t>(r * width));
    }
  }
  const std::uint32_t ix = x.id;
  return g.record(OpKind::Slice, {ix}, std::move(out), [ix, axis, begin, width, rows, cols](Graph& gr, std::uint32_t self) {
    auto dy = gr.grad_of(self);
    auto dx = gr.grad_buffer(ix);
    if (axis == 0) {
      kernels::axpy(1.0, dy, dx.subspan(begin * cols, width * cols));
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        kernels::axpy(1.0, dy.subspan(r * width, width), dx.subspan(r * cols + begin, width));
      }
    }
  });
}

Var reduce_sum(Var x) {
  Graph& g = graph_of(x, "reduce_sum");
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const std::uint32_t ix = x.id;
  return g.record(OpKind::ReduceSum, {ix}, Tensor::scalar(total), [ix](Graph& gr, std::uint32_t self) {
    const double d = gr.grad_of(self)[0];
    for (auto& v : gr.grad_buffer(ix)) v += d;
  });
}

Var reduce_mean(Var x) {
  Graph& g = graph_of(x, "reduce_mean");
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const double n = static_cast<double>(x.value().size());
  const std::uint32_t ix = x.id;
  return g.record(OpKind::ReduceMean, {ix}, Tensor::scalar(total / n), [ix, n](Graph& gr, std::uint32_t self) {
    const double d = gr.grad_of(self)[0] / n;
    for (auto& v : gr.grad_buffer(ix)) v += d;
  });
}

Var transpose(Var x) {
  Graph& g = graph_of(x, "transpose");
  const Tensor& xv = x.value();
  require_rank2("transpose", xv);
  const std::size_t rows = xv.shape()[0], cols = xv.shape()[1];
  Tensor out(Shape{cols, rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = xv[r * cols + c];
  }
  const std::uint32_t ix = x.id;
  return g.record(OpKind::Transpose, {ix}, std::move(out), [ix, rows, cols](Graph& gr, std::uint32_t self) {
    auto dy = gr.grad_of(self);
    auto dx = gr.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += dy[c * rows + r];
    }
  });
}

}  // namespace metaxp::ad
