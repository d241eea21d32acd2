#include "mmtm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmtm/errors.hpp"

namespace mmtm {

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("use of an unbound Var");
  return tape_->value(id_);
}

// ---- Tape ----------------------------------------------------------------

Var Tape::push(Node node) {
  if (backward_done_) throw UsageError("cannot record onto a tape after backward()");
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(Var v) const {
  if (v.tape() != this) throw UsageError("Var belongs to a different tape");
}

Var Tape::constant(Tensor value) { return push(Node{std::move(value), nullptr, false, {}}); }

Var Tape::constant_ref(const Tensor& value) { return push(Node{Tensor(), &value, false, {}}); }

Var Tape::leaf(Tensor value) { return push(Node{std::move(value), nullptr, true, {}}); }

Var Tape::parameter(const Tensor& value) { return push(Node{Tensor(), &value, true, {}}); }

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    check_owner(p);
    needs = needs || nodes_[p.id()].requires_grad;
  }
  Node node{std::move(value), nullptr, needs, {}};
  if (needs) node.backward = std::move(backward);
  return push(std::move(node));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.borrowed ? *n.borrowed : n.owned;
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return {};
  auto& g = grads_[id];
  if (g.empty()) g.assign(value(id).size(), 0.0);
  return g;
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (backward_done_) throw UsageError("backward() already ran on this tape; build a new tape per pass");
  if (loss.value().size() != 1) {
    throw UsageError("backward() needs a single-element loss, got shape " + shape_to_string(loss.shape()));
  }
  if (!nodes_[loss.id()].requires_grad) {
    throw UsageError("loss node is not reachable from any differentiable leaf");
  }
  backward_done_ = true;
  grads_.assign(nodes_.size(), {});
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || grads_[id].empty()) continue;
    // The closure may touch other buffers; keep a stable copy of this one.
    const std::vector<double> g = grads_[id];
    n.backward(g, *this);
  }
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  const Tensor& val = value(v.id());
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return Tensor(val.shape(), grads_[v.id()]);
  return Tensor(val.shape(), 0.0);
}

// ---- helpers -------------------------------------------------------------

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw UsageError("use of an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw UsageError("operands live on different tapes");
  return t;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_to_string(t.shape()));
  }
}

void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---- linear algebra ------------------------------------------------------

Var matmul(Var w, Var x) {
  Tape& t = tape_of(w, x);
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  require_rank("matmul", W, 2);
  require_rank("matmul", X, 1);
  const std::size_t out = W.shape()[0], in = W.shape()[1];
  if (X.shape()[0] != in) {
    throw DimensionError("matmul: inner extents differ, w " + shape_to_string(W.shape()) + " x " +
                         shape_to_string(X.shape()));
  }
  Tensor y({out});
  for (std::size_t o = 0; o < out; ++o) {
    double acc = 0.0;
    const double* row = W.data().data() + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * X[i];
    y[o] = acc;
  }
  const std::size_t wid = w.id(), xid = x.id();
  return t.record(std::move(y), {w, x}, [wid, xid, out, in](std::span<const double> g, Tape& tp) {
    const Tensor& W = tp.value(wid);
    const Tensor& X = tp.value(xid);
    if (auto gw = tp.grad_buffer(wid); !gw.empty()) {
      for (std::size_t o = 0; o < out; ++o)
        for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += g[o] * X[i];
    }
    if (auto gx = tp.grad_buffer(xid); !gx.empty()) {
      for (std::size_t o = 0; o < out; ++o)
        for (std::size_t i = 0; i < in; ++i) gx[i] += g[o] * W[o * in + i];
    }
  });
}

Var affine(Var w, Var x, Var b) {
  Tape& t = tape_of(w, x);
  tape_of(w, b);
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  require_rank("affine", B, 1);
  if (W.rank() == 2 && B.shape()[0] != W.shape()[0]) {
    throw DimensionError("affine: bias " + shape_to_string(B.shape()) + " does not match weight " +
                         shape_to_string(W.shape()));
  }
  // Fused for speed; equivalent to add(matmul(w, x), b).
  Var y = matmul(w, x);
  const Tensor& Y = y.value();
  Tensor out = Y;
  for (std::size_t o = 0; o < out.size(); ++o) out[o] += B[o];
  const std::size_t yid = y.id(), bid = b.id();
  return t.record(std::move(out), {y, b}, [yid, bid](std::span<const double> g, Tape& tp) {
    if (auto gy = tp.grad_buffer(yid); !gy.empty()) accumulate(gy, g);
    if (auto gb = tp.grad_buffer(bid); !gb.empty()) accumulate(gb, g);
  });
}

Var mean_over_non_channel(Var x) {
  Tape& t = tape_of(x);
  const Tensor& X = x.value();
  if (X.size() == 0) throw DomainError("mean_over_non_channel: tensor has a zero extent");
  if (X.rank() == 1) return x;
  const std::size_t c = X.channels(), n = X.positions();
  Tensor y({c});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k < c; ++k) y[k] += X[p * c + k];
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < c; ++k) y[k] *= inv;
  const std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid, c, n, inv](std::span<const double> g, Tape& tp) {
    auto gx = tp.grad_buffer(xid);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t k = 0; k < c; ++k) gx[p * c + k] += g[k] * inv;
  });
}

Var concat_channels(std::span<const Var> xs) {
  if (xs.empty()) throw UsageError("concat_channels: empty input list");
  Tape& t = tape_of(xs[0]);
  const Shape spatial = xs[0].value().spatial_shape();
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const auto& v : xs) {
    tape_of(xs[0], v);
    if (v.value().spatial_shape() != spatial) {
      throw DimensionError("concat_channels: non-channel shapes differ, " + shape_to_string(xs[0].shape()) + " vs " +
                           shape_to_string(v.shape()));
    }
    widths.push_back(v.value().channels());
    ids.push_back(v.id());
    total += widths.back();
  }
  const std::size_t positions = xs[0].value().positions();
  Shape shape = spatial;
  shape.push_back(total);
  Tensor y(shape);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& X = xs[i].value();
    for (std::size_t p = 0; p < positions; ++p)
      std::copy_n(X.data().data() + p * widths[i], widths[i], y.data().data() + p * total + offset);
    offset += widths[i];
  }
  return t.record(std::move(y), xs, [ids, widths, total, positions](std::span<const double> g, Tape& tp) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (auto gx = tp.grad_buffer(ids[i]); !gx.empty()) {
        for (std::size_t p = 0; p < positions; ++p)
          for (std::size_t k = 0; k < widths[i]; ++k) gx[p * widths[i] + k] += g[p * total + off + k];
      }
      off += widths[i];
    }
  });
}

Var slice_channels(Var x, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(x);
  const Tensor& X = x.value();
  const std::size_t c = X.channels();
  if (count == 0 || begin + count > c) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                         ") outside " + std::to_string(c) + " channels");
  }
  Shape shape = X.shape();
  shape.back() = count;
  Tensor y(shape);
  const std::size_t n = X.positions();
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k < count; ++k) y[p * count + k] = X[p * c + begin + k];
  const std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid, begin, count, c, n](std::span<const double> g, Tape& tp) {
    auto gx = tp.grad_buffer(xid);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t k = 0; k < count; ++k) gx[p * c + begin + k] += g[p * count + k];
  });
}

// ---- elementwise ---------------------------------------------------------

Var sigmoid(Var x) {
  Tape& t = tape_of(x);
  Tensor y = x.value();
  for (auto& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
  // The backward pass reads sigma(x) back from the node about to be recorded.
  const std::size_t xid = x.id(), yid = t.size();
  return t.record(std::move(y), {x}, [xid, yid](std::span<const double> g, Tape& tp) {
    const Tensor& Y = tp.value(yid);
    auto gx = tp.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * Y[i] * (1.0 - Y[i]);
  });
}

Var relu(Var x) {
  Tape& t = tape_of(x);
  Tensor y = x.value();
  for (auto& v : y.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  const std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid](std::span<const double> g, Tape& tp) {
    const Tensor& X = tp.value(xid);
    auto gx = tp.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (X[i] > 0.0) gx[i] += g[i];
  });
}

Var add(Var x, Var y) {
  Tape& t = tape_of(x, y);
  require_same_shape("add", x.value(), y.value());
  Tensor z = x.value();
  const Tensor& Y = y.value();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += Y[i];
  const std::size_t xid = x.id(), yid = y.id();
  return t.record(std::move(z), {x, y}, [xid, yid](std::span<const double> g, Tape& tp) {
    if (auto gx = tp.grad_buffer(xid); !gx.empty()) accumulate(gx, g);
    if (auto gy = tp.grad_buffer(yid); !gy.empty()) accumulate(gy, g);
  });
}

Var sub(Var x, Var y) {
  Tape& t = tape_of(x, y);
  require_same_shape("sub", x.value(), y.value());
  Tensor z = x.value();
  const Tensor& Y = y.value();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] -= Y[i];
  const std::size_t xid = x.id(), yid = y.id();
  return t.record(std::move(z), {x, y}, [xid, yid](std::span<const double> g, Tape& tp) {
    if (auto gx = tp.grad_buffer(xid); !gx.empty()) accumulate(gx, g);
    if (auto gy = tp.grad_buffer(yid); !gy.empty())
      for (std::size_t i = 0; i < gy.size(); ++i) gy[i] -= g[i];
  });
}

Var mul(Var x, Var y) {
  Tape& t = tape_of(x, y);
  require_same_shape("mul", x.value(), y.value());
  Tensor z = x.value();
  const Tensor& Y = y.value();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] *= Y[i];
  const std::size_t xid = x.id(), yid = y.id();
  return t.record(std::move(z), {x, y}, [xid, yid](std::span<const double> g, Tape& tp) {
    if (auto gx = tp.grad_buffer(xid); !gx.empty()) {
      const Tensor& Y = tp.value(yid);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * Y[i];
    }
    if (auto gy = tp.grad_buffer(yid); !gy.empty()) {
      const Tensor& X = tp.value(xid);
      for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += g[i] * X[i];
    }
  });
}

Var scale(Var x, double k) {
  Tape& t = tape_of(x);
  Tensor y = x.value();
  for (auto& v : y.data()) v *= k;
  const std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid, k](std::span<const double> g, Tape& tp) {
    auto gx = tp.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += k * g[i];
  });
}

Var log(Var x) {
  Tape& t = tape_of(x);
  Tensor y = x.value();
  for (auto& v : y.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
    v = std::log(v);
  }
  const std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid](std::span<const double> g, Tape& tp) {
    const Tensor& X = tp.value(xid);
    auto gx = tp.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] / X[i];
  });
}

Var channelwise_mul(Var gate, Var x) {
  Tape& t = tape_of(gate, x);
  const Tensor& G = gate.value();
  const Tensor& X = x.value();
  require_rank("channelwise_mul", G, 1);
  const std::size_t c = X.channels();
  if (G.size() != c) {
    throw DimensionError("channelwise_mul: gate " + shape_to_string(G.shape()) + " vs features " +
                         shape_to_string(X.shape()));
  }
  Tensor y = X;
  const std::size_t n = X.positions();
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k < c; ++k) y[p * c + k] *= G[k];
  const std::size_t gid = gate.id(), xid = x.id();
  return t.record(std::move(y), {gate, x}, [gid, xid, c, n](std::span<const double> g, Tape& tp) {
    if (auto gg = tp.grad_buffer(gid); !gg.empty()) {
      const Tensor& X = tp.value(xid);
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < c; ++k) gg[k] += g[p * c + k] * X[p * c + k];
    }
    if (auto gx = tp.grad_buffer(xid); !gx.empty()) {
      const Tensor& G = tp.value(gid);
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < c; ++k) gx[p * c + k] += g[p * c + k] * G[k];
    }
  });
}

Var channelwise_add(Var bias, Var x) {
  Tape& t = tape_of(bias, x);
  const Tensor& B = bias.value();
  const Tensor& X = x.value();
  require_rank("channelwise_add", B, 1);
  const std::size_t c = X.channels();
  if (B.size() != c) {
    throw DimensionError("channelwise_add: bias " + shape_to_string(B.shape()) + " vs features " +
                         shape_to_string(X.shape()));
  }
  Tensor y = X;
  const std::size_t n = X.positions();
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k < c; ++k) y[p * c + k] += B[k];
  const std::size_t bid = bias.id(), xid = x.id();
  return t.record(std::move(y), {bias, x}, [bid, xid, c, n](std::span<const double> g, Tape& tp) {
    if (auto gb = tp.grad_buffer(bid); !gb.empty())
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < c; ++k) gb[k] += g[p * c + k];
    if (auto gx = tp.grad_buffer(xid); !gx.empty()) accumulate(gx, g);
  });
}

// ---- convolution and pooling ---------------------------------------------

Var conv2d(Var x, Var kernels, std::size_t stride, Padding padding) {
  Tape& t = tape_of(x, kernels);
  const Tensor& X = x.value();
  const Tensor& K = kernels.value();
  require_rank("conv2d input", X, 3);
  require_rank("conv2d kernels", K, 4);
  if (stride == 0) throw DomainError("conv2d: stride must be positive");
  const std::size_t H = X.shape()[0], W = X.shape()[1], cin = X.shape()[2];
  const std::size_t kh = K.shape()[0], kw = K.shape()[1], cout = K.shape()[3];
  if (K.shape()[2] != cin) {
    throw DimensionError("conv2d: input " + shape_to_string(X.shape()) + " has " + std::to_string(cin) +
                         " channels but kernels " + shape_to_string(K.shape()) + " expect " +
                         std::to_string(K.shape()[2]));
  }
  std::size_t Ho, Wo, pad_top = 0, pad_left = 0;
  if (padding == Padding::Same) {
    Ho = (H + stride - 1) / stride;
    Wo = (W + stride - 1) / stride;
    const std::size_t need_h = (Ho - 1) * stride + kh, need_w = (Wo - 1) * stride + kw;
    pad_top = need_h > H ? (need_h - H) / 2 : 0;
    pad_left = need_w > W ? (need_w - W) / 2 : 0;
  } else {
    if (kh > H || kw > W) {
      throw DimensionError("conv2d: kernel " + shape_to_string(K.shape()) + " larger than input " +
                           shape_to_string(X.shape()));
    }
    Ho = (H - kh) / stride + 1;
    Wo = (W - kw) / stride + 1;
  }
  Tensor y({Ho, Wo, cout});
  const double* xd = X.data().data();
  const double* kd = K.data().data();
  double* yd = y.data().data();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      double* out = yd + (oy * Wo + ox) * cout;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad_top);
        if (iy < 0 || iy >= static_cast<long>(H)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad_left);
          if (ix < 0 || ix >= static_cast<long>(W)) continue;
          const double* in = xd + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin;
          const double* kp = kd + (ky * kw + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = in[ci];
            const double* krow = kp + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) out[co] += v * krow[co];
          }
        }
      }
    }
  }
  const std::size_t xid = x.id(), kid = kernels.id();
  return t.record(std::move(y), {x, kernels},
                  [=](std::span<const double> g, Tape& tp) {
                    const double* xd = tp.value(xid).data().data();
                    const double* kd = tp.value(kid).data().data();
                    auto gx = tp.grad_buffer(xid);
                    auto gk = tp.grad_buffer(kid);
                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                      for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const double* go = g.data() + (oy * Wo + ox) * cout;
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad_top);
                          if (iy < 0 || iy >= static_cast<long>(H)) continue;
                          for (std::size_t kx = 0; kx < kw; ++kx) {
                            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad_left);
                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                            const std::size_t in_off =
                                (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin;
                            const std::size_t k_off = (ky * kw + kx) * cin * cout;
                            for (std::size_t ci = 0; ci < cin; ++ci) {
                              const double* krow = kd + k_off + ci * cout;
                              if (!gx.empty()) {
                                double acc = 0.0;
                                for (std::size_t co = 0; co < cout; ++co) acc += go[co] * krow[co];
                                gx[in_off + ci] += acc;
                              }
                              if (!gk.empty()) {
                                const double v = xd[in_off + ci];
                                double* gkrow = gk.data() + k_off + ci * cout;
                                for (std::size_t co = 0; co < cout; ++co) gkrow[co] += v * go[co];
                              }
                            }
                          }
                        }
                      }
                    }
                  });
}

Var pointwise_affine(Var x, Var w, Var b) {
  Tape& t = tape_of(x, w);
  tape_of(x, b);
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  const Tensor& B = b.value();
  require_rank("pointwise_affine weight", Wt, 2);
  require_rank("pointwise_affine bias", B, 1);
  const std::size_t cout = Wt.shape()[0], cin = Wt.shape()[1];
  if (X.channels() != cin || B.size() != cout) {
    throw DimensionError("pointwise_affine: features " + shape_to_string(X.shape()) + ", weight " +
                         shape_to_string(Wt.shape()) + ", bias " + shape_to_string(B.shape()));
  }
  const std::size_t n = X.positions();
  Shape shape = X.shape();
  shape.back() = cout;
  Tensor y(shape);
  for (std::size_t p = 0; p < n; ++p) {
    const double* in = X.data().data() + p * cin;
    double* out = y.data().data() + p * cout;
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = B[o];
      const double* row = Wt.data().data() + o * cin;
      for (std::size_t i = 0; i < cin; ++i) acc += row[i] * in[i];
      out[o] = acc;
    }
  }
  const std::size_t xid = x.id(), wid = w.id(), bid = b.id();
  return t.record(std::move(y), {x, w, b}, [=](std::span<const double> g, Tape& tp) {
    const Tensor& X = tp.value(xid);
    const Tensor& Wt = tp.value(wid);
    auto gx = tp.grad_buffer(xid);
    auto gw = tp.grad_buffer(wid);
    auto gb = tp.grad_buffer(bid);
    for (std::size_t p = 0; p < n; ++p) {
      const double* go = g.data() + p * cout;
      for (std::size_t o = 0; o < cout; ++o) {
        if (!gb.empty()) gb[o] += go[o];
        for (std::size_t i = 0; i < cin; ++i) {
          if (!gw.empty()) gw[o * cin + i] += go[o] * X[p * cin + i];
          if (!gx.empty()) gx[p * cin + i] += go[o] * Wt[o * cin + i];
        }
      }
    }
  });
}

Var mean_pool2d(Var x, std::size_t factor) {
  Tape& t = tape_of(x);
  const Tensor& X = x.value();
  require_rank("mean_pool2d", X, 3);
  if (factor == 0) throw DomainError("mean_pool2d: factor must be positive");
  const std::size_t H = X.shape()[0], W = X.shape()[1], c = X.shape()[2];
  const std::size_t Ho = H / factor, Wo = W / factor;
  if (Ho == 0 || Wo == 0) {
    throw DimensionError("mean_pool2d: input " + shape_to_string(X.shape()) + " smaller than factor " +
                         std::to_string(factor));
  }
  const double inv = 1.0 / static_cast<double>(factor * factor);
  Tensor y({Ho, Wo, c});
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox)
      for (std::size_t dy = 0; dy < factor; ++dy)
        for (std::size_t dx = 0; dx < factor; ++dx) {
          const std::size_t in = ((oy * factor + dy) * W + ox * factor + dx) * c;
          for (std::size_t k = 0; k < c; ++k) y[(oy * Wo + ox) * c + k] += inv * X[in + k];
        }
  const std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [=](std::span<const double> g, Tape& tp) {
    auto gx = tp.grad_buffer(xid);
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox)
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx) {
            const std::size_t in = ((oy * factor + dy) * W + ox * factor + dx) * c;
            for (std::size_t k = 0; k < c; ++k) gx[in + k] += inv * g[(oy * Wo + ox) * c + k];
          }
  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of(x);
  Tensor y = x.value().reshaped(std::move(shape));
  const std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid](std::span<const double> g, Tape& tp) {
    accumulate(tp.grad_buffer(xid), g);
  });
}

Var flatten(Var x) {
  if (x.value().rank() == 1) return x;
  return reshape(x, {x.value().size()});
}

// ---- reductions and losses -----------------------------------------------

Var sum(Var x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t xid = x.id();
  return t.record(Tensor({1}, {s}), {x}, [xid](std::span<const double> g, Tape& tp) {
    for (auto& v : tp.grad_buffer(xid)) v += g[0];
  });
}

Var sum_squares(Var x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  const std::size_t xid = x.id();
  return t.record(Tensor({1}, {s}), {x}, [xid](std::span<const double> g, Tape& tp) {
    const Tensor& X = tp.value(xid);
    auto gx = tp.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * X[i] * g[0];
  });
}

namespace {
std::vector<double> stable_softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += (p[i] = std::exp(z[i] - m));
  for (auto& v : p) v /= total;
  return p;
}
}  // namespace

Var cross_entropy(Var logits, std::size_t label) {
  Tape& t = tape_of(logits);
  const Tensor& Z = logits.value();
  require_rank("cross_entropy", Z, 1);
  if (label >= Z.size()) {
    throw DomainError("cross_entropy: label " + std::to_string(label) + " outside " + std::to_string(Z.size()) +
                      " classes");
  }
  const double m = *std::max_element(Z.data().begin(), Z.data().end());
  double total = 0.0;
  for (double v : Z.data()) total += std::exp(v - m);
  const double loss = m + std::log(total) - Z[label];
  const std::size_t zid = logits.id();
  return t.record(Tensor({1}, {loss}), {logits}, [zid, label](std::span<const double> g, Tape& tp) {
    const auto p = stable_softmax(tp.value(zid).data());
    auto gz = tp.grad_buffer(zid);
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += g[0] * (p[i] - (i == label ? 1.0 : 0.0));
  });
}

Var softmax(Var x) {
  Tape& t = tape_of(x);
  require_rank("softmax", x.value(), 1);
  const auto p = stable_softmax(x.value().data());
  const std::size_t xid = x.id();
  return t.record(Tensor({p.size()}, p), {x}, [xid](std::span<const double> g, Tape& tp) {
    const auto p = stable_softmax(tp.value(xid).data());
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += g[i] * p[i];
    auto gx = tp.grad_buffer(xid);
    for (std::size_t i = 0; i < p.size(); ++i) gx[i] += p[i] * (g[i] - dot);
  });
}

Var mean_of(std::span<const Var> xs) {
  if (xs.empty()) throw UsageError("mean_of: empty input list");
  Var acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return xs.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(xs.size()));
}

}  // namespace mmtm
