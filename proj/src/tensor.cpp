#include "orpit/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <cstring>

namespace orpit {

namespace {

// Dot products in the weight-gradient kernels are the training hot spot.
// A single accumulator serializes on FP add latency and the compiler cannot
// reassociate FP sums on its own, so block the reduction explicitly with
// vector accumulators. The summation order is fixed, keeping results
// reproducible from run to run.
template <class S>
S dotp(const S* __restrict__ a, const S* __restrict__ b, int n) {
  typedef S vec __attribute__((vector_size(32)));
  constexpr int L = static_cast<int>(sizeof(vec) / sizeof(S));
  vec acc0 = {}, acc1 = {};
  int i = 0;
  for (; i + 2 * L <= n; i += 2 * L) {
    vec va0, vb0, va1, vb1;
    std::memcpy(&va0, a + i, sizeof(vec));
    std::memcpy(&vb0, b + i, sizeof(vec));
    std::memcpy(&va1, a + i + L, sizeof(vec));
    std::memcpy(&vb1, b + i + L, sizeof(vec));
    acc0 += va0 * vb0;
    acc1 += va1 * vb1;
  }
  const vec acc = acc0 + acc1;
  S lane[L];
  std::memcpy(lane, &acc, sizeof(vec));
  S s = 0;
  for (int l = 0; l < L; ++l) s += lane[l];
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class S>
S dotp_strided(const S* __restrict__ a, const S* __restrict__ b, int bstride, int n) {
  S s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[static_cast<std::size_t>(i) * bstride];
    s1 += a[i + 1] * b[static_cast<std::size_t>(i + 1) * bstride];
    s2 += a[i + 2] * b[static_cast<std::size_t>(i + 2) * bstride];
    s3 += a[i + 3] * b[static_cast<std::size_t>(i + 3) * bstride];
  }
  S acc = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) acc += a[i] * b[static_cast<std::size_t>(i) * bstride];
  return acc;
}

// A 1x1 kernel makes conv1d a channel matmul. Blocking four input rows per
// pass over each output row quarters the accumulator traffic. w(r, c) is read
// from wbase[r * wr + c * wc] so the same kernel serves the forward pass and
// its transpose.
template <class S>
void pointwise_accum(S* out, const S* wbase, std::ptrdiff_t wr, std::ptrdiff_t wc,
                     const S* in, int R, int C, int T) {
  for (int r = 0; r < R; ++r) {
    S* __restrict__ o = out + static_cast<std::size_t>(r) * T;
    int c = 0;
    for (; c + 4 <= C; c += 4) {
      const S w0 = wbase[r * wr + (c + 0) * wc];
      const S w1 = wbase[r * wr + (c + 1) * wc];
      const S w2 = wbase[r * wr + (c + 2) * wc];
      const S w3 = wbase[r * wr + (c + 3) * wc];
      const S* __restrict__ i0 = in + static_cast<std::size_t>(c + 0) * T;
      const S* __restrict__ i1 = in + static_cast<std::size_t>(c + 1) * T;
      const S* __restrict__ i2 = in + static_cast<std::size_t>(c + 2) * T;
      const S* __restrict__ i3 = in + static_cast<std::size_t>(c + 3) * T;
      for (int t = 0; t < T; ++t) o[t] += w0 * i0[t] + w1 * i1[t] + w2 * i2[t] + w3 * i3[t];
    }
    for (; c < C; ++c) {
      const S w = wbase[r * wr + c * wc];
      const S* __restrict__ i0 = in + static_cast<std::size_t>(c) * T;
      for (int t = 0; t < T; ++t) o[t] += w * i0[t];
    }
  }
}

template <class S>
S sum4(const S* __restrict__ a, int n) {
  S s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i];
    s1 += a[i + 1];
    s2 += a[i + 2];
    s3 += a[i + 3];
  }
  S acc = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) acc += a[i];
  return acc;
}

}  // namespace

template <class S>
std::size_t Tape<S>::shape_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw InvalidArgument("tensor shape must have rank >= 1");
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 1) throw InvalidArgument("tensor dimensions must be >= 1");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

template <class S>
int Tape<S>::check_id(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw InvalidArgument("tensor id does not belong to this tape");
  return id;
}

template <class S>
void Tape<S>::require_same_tape(const Tensor<S>& t, const char* op) const {
  if (t.tape() != this) throw InvalidArgument(std::string(op) + ": tensor from a different tape");
  check_id(t.id());
}

template <class S>
void Tape<S>::require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) const {
  if (a.shape() != b.shape())
    throw InvalidArgument(std::string(op) + ": operand shapes differ (no broadcasting)");
}

template <class S>
void Tape<S>::require_rank(const Tensor<S>& t, int rank, const char* op) const {
  if (static_cast<int>(t.shape().size()) != rank)
    throw InvalidArgument(std::string(op) + ": expected rank " + std::to_string(rank));
}

template <class S>
void Tape<S>::require_scalar(const Tensor<S>& t, const char* op) const {
  if (t.numel() != 1) throw InvalidArgument(std::string(op) + ": expected a scalar tensor");
}

template <class S>
int Tape<S>::push(std::vector<int> shape, std::vector<S> value, bool requires_grad,
                  std::function<void(Tape&)> backprop) {
  if (value.size() != shape_numel(shape))
    throw InvalidArgument("tensor data length does not match shape");
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <class S>
std::vector<S>& Tape<S>::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), S(0));
  return n.grad;
}

template <class S>
const std::vector<S>& Tape<S>::grad(int id) const {
  const Node& n = nodes_[check_id(id)];
  if (!backward_done_) throw InvalidArgument("gradients requested before backward()");
  if (n.grad.empty()) throw InvalidArgument("node has no gradient (requires_grad not set)");
  return n.grad;
}

template <class S>
Tensor<S> Tape<S>::input(std::vector<int> shape, std::vector<S> data, bool requires_grad) {
  return Tensor<S>(this, push(std::move(shape), std::move(data), requires_grad, nullptr));
}

template <class S>
Tensor<S> Tape<S>::zeros(std::vector<int> shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return input(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> Tape<S>::add(Tensor<S> a, Tensor<S> b) {
  require_same_tape(a, "add");
  require_same_tape(b, "add");
  require_same_shape(a, b, "add");
  const auto& av = value(a.id());
  const auto& bv = value(b.id());
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id(), ib = b.id();
  int id = push(a.shape(), std::move(out), rg, nullptr);
  nodes_[id].backprop = [ia, ib, id](Tape& t) {
    const auto& g = t.nodes_[id].grad;
    if (t.nodes_[ia].requires_grad) {
      auto& ga = t.grad_buf(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.nodes_[ib].requires_grad) {
      auto& gb = t.grad_buf(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::sub(Tensor<S> a, Tensor<S> b) {
  require_same_tape(a, "sub");
  require_same_tape(b, "sub");
  require_same_shape(a, b, "sub");
  const auto& av = value(a.id());
  const auto& bv = value(b.id());
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id(), ib = b.id();
  int id = push(a.shape(), std::move(out), rg, nullptr);
  nodes_[id].backprop = [ia, ib, id](Tape& t) {
    const auto& g = t.nodes_[id].grad;
    if (t.nodes_[ia].requires_grad) {
      auto& ga = t.grad_buf(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.nodes_[ib].requires_grad) {
      auto& gb = t.grad_buf(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::mul(Tensor<S> a, Tensor<S> b) {
  require_same_tape(a, "mul");
  require_same_tape(b, "mul");
  require_same_shape(a, b, "mul");
  const auto& av = value(a.id());
  const auto& bv = value(b.id());
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id(), ib = b.id();
  int id = push(a.shape(), std::move(out), rg, nullptr);
  nodes_[id].backprop = [ia, ib, id](Tape& t) {
    const auto& g = t.nodes_[id].grad;
    const auto& av = t.nodes_[ia].value;
    const auto& bv = t.nodes_[ib].value;
    if (t.nodes_[ia].requires_grad) {
      auto& ga = t.grad_buf(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.nodes_[ib].requires_grad) {
      auto& gb = t.grad_buf(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::cmul(Tensor<S> a, double c) {
  require_same_tape(a, "cmul");
  const auto& av = value(a.id());
  const S cs = static_cast<S>(c);
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * cs;
  int ia = a.id();
  int id = push(a.shape(), std::move(out), a.requires_grad(), nullptr);
  nodes_[id].backprop = [ia, id, cs](Tape& t) {
    if (!t.nodes_[ia].requires_grad) return;
    const auto& g = t.nodes_[id].grad;
    auto& ga = t.grad_buf(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * cs;
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::smul(Tensor<S> a, Tensor<S> scalar) {
  require_same_tape(a, "smul");
  require_same_tape(scalar, "smul");
  require_scalar(scalar, "smul");
  const auto& av = value(a.id());
  const S sv = value(scalar.id())[0];
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * sv;
  bool rg = a.requires_grad() || scalar.requires_grad();
  int ia = a.id(), is = scalar.id();
  int id = push(a.shape(), std::move(out), rg, nullptr);
  nodes_[id].backprop = [ia, is, id](Tape& t) {
    const auto& g = t.nodes_[id].grad;
    const auto& av = t.nodes_[ia].value;
    const S sv = t.nodes_[is].value[0];
    if (t.nodes_[ia].requires_grad) {
      auto& ga = t.grad_buf(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
    }
    if (t.nodes_[is].requires_grad) {
      S acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.grad_buf(is)[0] += acc;
    }
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::relu(Tensor<S> a) {
  require_same_tape(a, "relu");
  const auto& av = value(a.id());
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > S(0) ? av[i] : S(0);
  int ia = a.id();
  int id = push(a.shape(), std::move(out), a.requires_grad(), nullptr);
  nodes_[id].backprop = [ia, id](Tape& t) {
    if (!t.nodes_[ia].requires_grad) return;
    const auto& g = t.nodes_[id].grad;
    const auto& av = t.nodes_[ia].value;
    auto& ga = t.grad_buf(ia);
    // Subgradient at 0 is fixed to 0.
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += av[i] > S(0) ? g[i] : S(0);
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::sigmoid(Tensor<S> a) {
  require_same_tape(a, "sigmoid");
  const auto& av = value(a.id());
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    double v = static_cast<double>(av[i]);
    out[i] = static_cast<S>(1.0 / (1.0 + std::exp(-v)));
  }
  int ia = a.id();
  int id = push(a.shape(), std::move(out), a.requires_grad(), nullptr);
  nodes_[id].backprop = [ia, id](Tape& t) {
    if (!t.nodes_[ia].requires_grad) return;
    const auto& g = t.nodes_[id].grad;
    const auto& y = t.nodes_[id].value;
    auto& ga = t.grad_buf(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (S(1) - y[i]);
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::square(Tensor<S> a) {
  require_same_tape(a, "square");
  const auto& av = value(a.id());
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * av[i];
  int ia = a.id();
  int id = push(a.shape(), std::move(out), a.requires_grad(), nullptr);
  nodes_[id].backprop = [ia, id](Tape& t) {
    if (!t.nodes_[ia].requires_grad) return;
    const auto& g = t.nodes_[id].grad;
    const auto& av = t.nodes_[ia].value;
    auto& ga = t.grad_buf(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * S(2) * av[i];
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::log10_safe(Tensor<S> a) {
  require_same_tape(a, "log10_safe");
  const auto& av = value(a.id());
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i)
    out[i] = static_cast<S>(std::log10(static_cast<double>(av[i]) + kLogEps));
  int ia = a.id();
  int id = push(a.shape(), std::move(out), a.requires_grad(), nullptr);
  nodes_[id].backprop = [ia, id](Tape& t) {
    if (!t.nodes_[ia].requires_grad) return;
    const auto& g = t.nodes_[id].grad;
    const auto& av = t.nodes_[ia].value;
    auto& ga = t.grad_buf(ia);
    const double inv_ln10 = 1.0 / std::log(10.0);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += static_cast<S>(static_cast<double>(g[i]) * inv_ln10 /
                              (static_cast<double>(av[i]) + kLogEps));
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::bias_add(Tensor<S> x, Tensor<S> bias) {
  require_same_tape(x, "bias_add");
  require_same_tape(bias, "bias_add");
  require_rank(x, 2, "bias_add");
  require_rank(bias, 1, "bias_add");
  const int C = x.shape()[0];
  const int T = x.shape()[1];
  if (bias.shape()[0] != C) throw InvalidArgument("bias_add: bias length must equal channel count");
  const auto& xv = value(x.id());
  const auto& bv = value(bias.id());
  std::vector<S> out(xv.size());
  for (int c = 0; c < C; ++c) {
    const S b = bv[c];
    const S* xi = xv.data() + static_cast<std::size_t>(c) * T;
    S* oi = out.data() + static_cast<std::size_t>(c) * T;
    for (int t = 0; t < T; ++t) oi[t] = xi[t] + b;
  }
  bool rg = x.requires_grad() || bias.requires_grad();
  int ix = x.id(), ib = bias.id();
  int id = push(x.shape(), std::move(out), rg, nullptr);
  nodes_[id].backprop = [ix, ib, id, C, T](Tape& t) {
    const auto& g = t.nodes_[id].grad;
    if (t.nodes_[ix].requires_grad) {
      auto& gx = t.grad_buf(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.nodes_[ib].requires_grad) {
      auto& gb = t.grad_buf(ib);
      for (int c = 0; c < C; ++c) gb[c] += sum4(g.data() + static_cast<std::size_t>(c) * T, T);
    }
  };
  return Tensor<S>(this, id);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> Tape<S>::sum(Tensor<S> a) {
  require_same_tape(a, "sum");
  const auto& av = value(a.id());
  if (av.empty()) throw InvalidArgument("sum: empty input");
  S acc = 0;
  for (S v : av) acc += v;
  int ia = a.id();
  int id = push({1}, {acc}, a.requires_grad(), nullptr);
  nodes_[id].backprop = [ia, id](Tape& t) {
    if (!t.nodes_[ia].requires_grad) return;
    const S g = t.nodes_[id].grad[0];
    auto& ga = t.grad_buf(ia);
    for (auto& v : ga) v += g;
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::mean(Tensor<S> a) {
  require_same_tape(a, "mean");
  const auto& av = value(a.id());
  if (av.empty()) throw InvalidArgument("mean: empty input");
  S acc = 0;
  for (S v : av) acc += v;
  const S inv_n = S(1) / static_cast<S>(av.size());
  int ia = a.id();
  int id = push({1}, {static_cast<S>(acc * inv_n)}, a.requires_grad(), nullptr);
  nodes_[id].backprop = [ia, id, inv_n](Tape& t) {
    if (!t.nodes_[ia].requires_grad) return;
    const S g = t.nodes_[id].grad[0] * inv_n;
    auto& ga = t.grad_buf(ia);
    for (auto& v : ga) v += g;
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::dot(Tensor<S> a, Tensor<S> b) {
  require_same_tape(a, "dot");
  require_same_tape(b, "dot");
  if (a.numel() != b.numel()) throw InvalidArgument("dot: operand lengths differ");
  const auto& av = value(a.id());
  const auto& bv = value(b.id());
  if (av.empty()) throw InvalidArgument("dot: empty input");
  S acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  int ia = a.id(), ib = b.id();
  int id = push({1}, {acc}, rg, nullptr);
  nodes_[id].backprop = [ia, ib, id](Tape& t) {
    const S g = t.nodes_[id].grad[0];
    const auto& av = t.nodes_[ia].value;
    const auto& bv = t.nodes_[ib].value;
    if (t.nodes_[ia].requires_grad) {
      auto& ga = t.grad_buf(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i];
    }
    if (t.nodes_[ib].requires_grad) {
      auto& gb = t.grad_buf(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i];
    }
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::l2_norm_sq(Tensor<S> a) {
  require_same_tape(a, "l2_norm_sq");
  const auto& av = value(a.id());
  if (av.empty()) throw InvalidArgument("l2_norm_sq: empty input");
  S acc = 0;
  for (S v : av) acc += v * v;
  int ia = a.id();
  int id = push({1}, {acc}, a.requires_grad(), nullptr);
  nodes_[id].backprop = [ia, id](Tape& t) {
    if (!t.nodes_[ia].requires_grad) return;
    const S g = t.nodes_[id].grad[0];
    const auto& av = t.nodes_[ia].value;
    auto& ga = t.grad_buf(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * S(2) * av[i];
  };
  return Tensor<S>(this, id);
}

// ---------------------------------------------------------------------------
// Structured ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> Tape<S>::conv1d(Tensor<S> x, Tensor<S> k, int stride, int dilation) {
  require_same_tape(x, "conv1d");
  require_same_tape(k, "conv1d");
  require_rank(x, 2, "conv1d");
  require_rank(k, 3, "conv1d");
  if (stride < 1 || dilation < 1) throw InvalidArgument("conv1d: stride and dilation must be >= 1");
  const int Cin = x.shape()[0], T = x.shape()[1];
  const int Cout = k.shape()[0], KCin = k.shape()[1], K = k.shape()[2];
  if (KCin != Cin) throw InvalidArgument("conv1d: kernel input channels do not match input");
  const int span = dilation * (K - 1) + 1;
  if (T < span) throw InvalidArgument("conv1d: input shorter than effective kernel span");
  const int To = (T - span) / stride + 1;

  const auto& xv = value(x.id());
  const auto& kv = value(k.id());
  std::vector<S> out(static_cast<std::size_t>(Cout) * To, S(0));
  if (K == 1 && stride == 1 && dilation == 1) {
    pointwise_accum(out.data(), kv.data(), Cin, 1, xv.data(), Cout, Cin, T);
  } else {
    for (int co = 0; co < Cout; ++co) {
      S* __restrict__ o = out.data() + static_cast<std::size_t>(co) * To;
      for (int ci = 0; ci < Cin; ++ci) {
        const S* xi = xv.data() + static_cast<std::size_t>(ci) * T;
        const S* kk = kv.data() + (static_cast<std::size_t>(co) * Cin + ci) * K;
        for (int kt = 0; kt < K; ++kt) {
          const S w = kk[kt];
          const S* __restrict__ src = xi + kt * dilation;
          if (stride == 1) {
            for (int t = 0; t < To; ++t) o[t] += w * src[t];
          } else {
            for (int t = 0; t < To; ++t) o[t] += w * src[static_cast<std::size_t>(t) * stride];
          }
        }
      }
    }
  }

  int ix = x.id(), ik = k.id();
  int id = push({Cout, To}, std::move(out),
                x.requires_grad() || k.requires_grad(), nullptr);
  nodes_[id].backprop = [ix, ik, id, Cin, T, Cout, K, To, stride, dilation](Tape& t) {
    const auto& g = t.nodes_[id].grad;
    const auto& xv = t.nodes_[ix].value;
    const auto& kv = t.nodes_[ik].value;
    if (t.nodes_[ix].requires_grad) {
      auto& gx = t.grad_buf(ix);
      if (K == 1 && stride == 1 && dilation == 1) {
        pointwise_accum(gx.data(), kv.data(), 1, Cin, g.data(), Cin, Cout, To);
      } else {
        for (int co = 0; co < Cout; ++co) {
          const S* __restrict__ go = g.data() + static_cast<std::size_t>(co) * To;
          for (int ci = 0; ci < Cin; ++ci) {
            S* gxi = gx.data() + static_cast<std::size_t>(ci) * T;
            const S* kk = kv.data() + (static_cast<std::size_t>(co) * Cin + ci) * K;
            for (int kt = 0; kt < K; ++kt) {
              const S w = kk[kt];
              S* __restrict__ dst = gxi + kt * dilation;
              if (stride == 1) {
                for (int tt = 0; tt < To; ++tt) dst[tt] += w * go[tt];
              } else {
                for (int tt = 0; tt < To; ++tt) dst[static_cast<std::size_t>(tt) * stride] += w * go[tt];
              }
            }
          }
        }
      }
    }
    if (t.nodes_[ik].requires_grad) {
      auto& gk = t.grad_buf(ik);
      for (int co = 0; co < Cout; ++co) {
        const S* go = g.data() + static_cast<std::size_t>(co) * To;
        for (int ci = 0; ci < Cin; ++ci) {
          const S* xi = xv.data() + static_cast<std::size_t>(ci) * T;
          S* gkk = gk.data() + (static_cast<std::size_t>(co) * Cin + ci) * K;
          for (int kt = 0; kt < K; ++kt) {
            const S* src = xi + kt * dilation;
            if (stride == 1) {
              gkk[kt] += dotp(go, src, To);
            } else {
              gkk[kt] += dotp_strided(go, src, stride, To);
            }
          }
        }
      }
    }
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::conv1d_transpose(Tensor<S> x, Tensor<S> k, int stride) {
  require_same_tape(x, "conv1d_transpose");
  require_same_tape(k, "conv1d_transpose");
  require_rank(x, 2, "conv1d_transpose");
  require_rank(k, 3, "conv1d_transpose");
  if (stride < 1) throw InvalidArgument("conv1d_transpose: stride must be >= 1");
  const int Cin = x.shape()[0], T = x.shape()[1];
  const int KCin = k.shape()[0], Cout = k.shape()[1], K = k.shape()[2];
  if (KCin != Cin) throw InvalidArgument("conv1d_transpose: kernel input channels do not match input");
  const int To = (T - 1) * stride + K;

  const auto& xv = value(x.id());
  const auto& kv = value(k.id());
  std::vector<S> out(static_cast<std::size_t>(Cout) * To, S(0));
  for (int ci = 0; ci < Cin; ++ci) {
    const S* __restrict__ xi = xv.data() + static_cast<std::size_t>(ci) * T;
    for (int co = 0; co < Cout; ++co) {
      S* o = out.data() + static_cast<std::size_t>(co) * To;
      const S* kk = kv.data() + (static_cast<std::size_t>(ci) * Cout + co) * K;
      for (int kt = 0; kt < K; ++kt) {
        const S w = kk[kt];
        S* __restrict__ dst = o + kt;
        if (stride == 1) {
          for (int t = 0; t < T; ++t) dst[t] += w * xi[t];
        } else {
          for (int t = 0; t < T; ++t) dst[static_cast<std::size_t>(t) * stride] += w * xi[t];
        }
      }
    }
  }

  int ix = x.id(), ik = k.id();
  int id = push({Cout, To}, std::move(out),
                x.requires_grad() || k.requires_grad(), nullptr);
  nodes_[id].backprop = [ix, ik, id, Cin, T, Cout, K, To, stride](Tape& t) {
    const auto& g = t.nodes_[id].grad;
    const auto& xv = t.nodes_[ix].value;
    const auto& kv = t.nodes_[ik].value;
    if (t.nodes_[ix].requires_grad) {
      auto& gx = t.grad_buf(ix);
      for (int ci = 0; ci < Cin; ++ci) {
        S* __restrict__ gxi = gx.data() + static_cast<std::size_t>(ci) * T;
        for (int co = 0; co < Cout; ++co) {
          const S* go = g.data() + static_cast<std::size_t>(co) * To;
          const S* kk = kv.data() + (static_cast<std::size_t>(ci) * Cout + co) * K;
          for (int kt = 0; kt < K; ++kt) {
            const S w = kk[kt];
            const S* __restrict__ src = go + kt;
            if (stride == 1) {
              for (int tt = 0; tt < T; ++tt) gxi[tt] += w * src[tt];
            } else {
              for (int tt = 0; tt < T; ++tt) gxi[tt] += w * src[static_cast<std::size_t>(tt) * stride];
            }
          }
        }
      }
    }
    if (t.nodes_[ik].requires_grad) {
      auto& gk = t.grad_buf(ik);
      for (int ci = 0; ci < Cin; ++ci) {
        const S* xi = xv.data() + static_cast<std::size_t>(ci) * T;
        for (int co = 0; co < Cout; ++co) {
          const S* go = g.data() + static_cast<std::size_t>(co) * To;
          S* gkk = gk.data() + (static_cast<std::size_t>(ci) * Cout + co) * K;
          for (int kt = 0; kt < K; ++kt) {
            const S* src = go + kt;
            if (stride == 1) {
              gkk[kt] += dotp(xi, src, T);
            } else {
              gkk[kt] += dotp_strided(xi, src, stride, T);
            }
          }
        }
      }
    }
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::depthwise_conv1d(Tensor<S> x, Tensor<S> k, int dilation) {
  require_same_tape(x, "depthwise_conv1d");
  require_same_tape(k, "depthwise_conv1d");
  require_rank(x, 2, "depthwise_conv1d");
  require_rank(k, 2, "depthwise_conv1d");
  if (dilation < 1) throw InvalidArgument("depthwise_conv1d: dilation must be >= 1");
  const int C = x.shape()[0], T = x.shape()[1];
  const int KC = k.shape()[0], K = k.shape()[1];
  if (KC != C) throw InvalidArgument("depthwise_conv1d: one filter per channel required");
  const int span = dilation * (K - 1) + 1;
  if (T < span) throw InvalidArgument("depthwise_conv1d: input shorter than effective kernel span");
  const int To = T - span + 1;

  const auto& xv = value(x.id());
  const auto& kv = value(k.id());
  std::vector<S> out(static_cast<std::size_t>(C) * To, S(0));
  for (int c = 0; c < C; ++c) {
    const S* xi = xv.data() + static_cast<std::size_t>(c) * T;
    const S* kk = kv.data() + static_cast<std::size_t>(c) * K;
    S* __restrict__ o = out.data() + static_cast<std::size_t>(c) * To;
    for (int kt = 0; kt < K; ++kt) {
      const S w = kk[kt];
      const S* __restrict__ src = xi + kt * dilation;
      for (int t = 0; t < To; ++t) o[t] += w * src[t];
    }
  }

  int ix = x.id(), ik = k.id();
  int id = push({C, To}, std::move(out), x.requires_grad() || k.requires_grad(), nullptr);
  nodes_[id].backprop = [ix, ik, id, C, T, K, To, dilation](Tape& t) {
    const auto& g = t.nodes_[id].grad;
    const auto& xv = t.nodes_[ix].value;
    const auto& kv = t.nodes_[ik].value;
    if (t.nodes_[ix].requires_grad) {
      auto& gx = t.grad_buf(ix);
      for (int c = 0; c < C; ++c) {
        const S* __restrict__ go = g.data() + static_cast<std::size_t>(c) * To;
        const S* kk = kv.data() + static_cast<std::size_t>(c) * K;
        S* gxi = gx.data() + static_cast<std::size_t>(c) * T;
        for (int kt = 0; kt < K; ++kt) {
          const S w = kk[kt];
          S* __restrict__ dst = gxi + kt * dilation;
          for (int tt = 0; tt < To; ++tt) dst[tt] += w * go[tt];
        }
      }
    }
    if (t.nodes_[ik].requires_grad) {
      auto& gk = t.grad_buf(ik);
      for (int c = 0; c < C; ++c) {
        const S* go = g.data() + static_cast<std::size_t>(c) * To;
        const S* xi = xv.data() + static_cast<std::size_t>(c) * T;
        S* gkk = gk.data() + static_cast<std::size_t>(c) * K;
        for (int kt = 0; kt < K; ++kt) gkk[kt] += dotp(go, xi + kt * dilation, To);
      }
    }
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::avg_pool1d(Tensor<S> x, int width, int stride) {
  require_same_tape(x, "avg_pool1d");
  require_rank(x, 2, "avg_pool1d");
  if (width < 1 || stride < 1) throw InvalidArgument("avg_pool1d: width and stride must be >= 1");
  const int C = x.shape()[0], T = x.shape()[1];
  if (T < width) throw InvalidArgument("avg_pool1d: input shorter than pool width");
  const int To = (T - width) / stride + 1;
  const S inv_w = S(1) / static_cast<S>(width);

  const auto& xv = value(x.id());
  std::vector<S> out(static_cast<std::size_t>(C) * To);
  for (int c = 0; c < C; ++c) {
    const S* xi = xv.data() + static_cast<std::size_t>(c) * T;
    S* o = out.data() + static_cast<std::size_t>(c) * To;
    for (int t = 0; t < To; ++t) {
      S acc = 0;
      const S* src = xi + static_cast<std::size_t>(t) * stride;
      for (int w = 0; w < width; ++w) acc += src[w];
      o[t] = acc * inv_w;
    }
  }

  int ix = x.id();
  int id = push({C, To}, std::move(out), x.requires_grad(), nullptr);
  nodes_[id].backprop = [ix, id, C, T, To, width, stride, inv_w](Tape& t) {
    if (!t.nodes_[ix].requires_grad) return;
    const auto& g = t.nodes_[id].grad;
    auto& gx = t.grad_buf(ix);
    for (int c = 0; c < C; ++c) {
      const S* go = g.data() + static_cast<std::size_t>(c) * To;
      S* gxi = gx.data() + static_cast<std::size_t>(c) * T;
      for (int tt = 0; tt < To; ++tt) {
        const S gv = go[tt] * inv_w;
        S* dst = gxi + static_cast<std::size_t>(tt) * stride;
        for (int w = 0; w < width; ++w) dst[w] += gv;
      }
    }
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::pad_time(Tensor<S> x, int left, int right) {
  require_same_tape(x, "pad_time");
  require_rank(x, 2, "pad_time");
  if (left < 0 || right < 0) throw InvalidArgument("pad_time: negative padding");
  const int C = x.shape()[0], T = x.shape()[1];
  const int To = T + left + right;
  const auto& xv = value(x.id());
  std::vector<S> out(static_cast<std::size_t>(C) * To, S(0));
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < T; ++t)
      out[static_cast<std::size_t>(c) * To + left + t] = xv[static_cast<std::size_t>(c) * T + t];

  int ix = x.id();
  int id = push({C, To}, std::move(out), x.requires_grad(), nullptr);
  nodes_[id].backprop = [ix, id, C, T, To, left](Tape& t) {
    if (!t.nodes_[ix].requires_grad) return;
    const auto& g = t.nodes_[id].grad;
    auto& gx = t.grad_buf(ix);
    for (int c = 0; c < C; ++c)
      for (int tt = 0; tt < T; ++tt)
        gx[static_cast<std::size_t>(c) * T + tt] += g[static_cast<std::size_t>(c) * To + left + tt];
  };
  return Tensor<S>(this, id);
}

template <class S>
Tensor<S> Tape<S>::crop_time(Tensor<S> x, int start, int len) {
  require_same_tape(x, "crop_time");
  require_rank(x, 2, "crop_time");
  const int C = x.shape()[0], T = x.shape()[1];
  if (start < 0 || len < 1 || start + len > T) throw InvalidArgument("crop_time: range out of bounds");
  const auto& xv = value(x.id());
  std::vector<S> out(static_cast<std::size_t>(C) * len);
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < len; ++t)
      out[static_cast<std::size_t>(c) * len + t] = xv[static_cast<std::size_t>(c) * T + start + t];

  int ix = x.id();
  int id = push({C, len}, std::move(out), x.requires_grad(), nullptr);
  nodes_[id].backprop = [ix, id, C, T, len, start](Tape& t) {
    if (!t.nodes_[ix].requires_grad) return;
    const auto& g = t.nodes_[id].grad;
    auto& gx = t.grad_buf(ix);
    for (int c = 0; c < C; ++c)
      for (int tt = 0; tt < len; ++tt)
        gx[static_cast<std::size_t>(c) * T + start + tt] += g[static_cast<std::size_t>(c) * len + tt];
  };
  return Tensor<S>(this, id);
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

template <class S>
void Tape<S>::backward(Tensor<S> loss) {
  require_same_tape(loss, "backward");
  if (loss.numel() != 1) throw InvalidArgument("backward: loss must be a scalar");
  if (backward_done_) throw InvalidArgument("backward: tape already differentiated (rebuild the graph)");
  backward_done_ = true;
  // A loss that is all constants (every path capped, say) is legal: nothing
  // propagates and every tracked tensor reads back a zero gradient.
  if (nodes_[loss.id()].requires_grad) grad_buf(loss.id())[0] = S(1);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backprop) continue;
    n.backprop(*this);
  }
  for (Node& n : nodes_)
    if (n.requires_grad && n.grad.empty()) n.grad.assign(n.value.size(), S(0));
}

template class Tape<float>;
template class Tape<double>;

}  // namespace orpit
