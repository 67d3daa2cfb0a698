#include "tkvseg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>

namespace tkvseg {

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::parameter(ParamId id, const Tensor<T>& value) {
  if (auto it = param_nodes_.find(id); it != param_nodes_.end()) {
    return Var<T>(this, it->second);
  }
  nodes_.push_back(Node{value, {}, {}, true});
  const NodeId node = nodes_.size() - 1;
  param_nodes_.emplace(id, node);
  return Var<T>(this, node);
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::vector<NodeId> inputs, BackwardFn backward) {
  bool needs_grad = false;
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw ContractError("record: input node does not exist");
    needs_grad = needs_grad || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::move(inputs),
                        needs_grad ? std::move(backward) : BackwardFn{}, needs_grad});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
GradMap<T> Graph<T>::backward(Var<T> root) {
  if (&root.graph() != this) throw ContractError("backward: root belongs to another graph");
  if (backward_done_) throw ContractError("backward already ran on this graph; reset() first");
  const Tensor<T>& root_value = value(root.id());
  if (root_value.numel() != 1) {
    throw ContractError("backward: root must be scalar, got shape " +
                        shape_to_string(root_value.shape()));
  }
  backward_done_ = true;

  std::vector<std::optional<Tensor<T>>> grads(nodes_.size());
  grads[root.id()] = Tensor<T>(root_value.shape(), T(1));

  std::vector<bool> is_param(nodes_.size(), false);
  for (const auto& [pid, node] : param_nodes_) is_param[node] = true;

  std::vector<Tensor<T>*> accumulators;
  for (NodeId i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!grads[i] || !node.backward) continue;
    accumulators.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const NodeId in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (!grads[in]) grads[in] = Tensor<T>(nodes_[in].value.shape(), T(0));
      accumulators[k] = &*grads[in];
    }
    node.backward(*grads[i], accumulators);
    if (!is_param[i]) grads[i].reset();
  }

  GradMap<T> out;
  for (const auto& [pid, node] : param_nodes_) {
    if (grads[node]) {
      out.emplace(pid, std::move(*grads[node]));
    } else {
      out.emplace(pid, Tensor<T>(nodes_[node].value.shape(), T(0)));
    }
  }
  return out;
}

template <typename T>
void Graph<T>::reset() {
  nodes_.clear();
  param_nodes_.clear();
  backward_done_ = false;
}

template <typename T>
std::vector<ParamId> Graph<T>::parameter_ids() const {
  std::vector<ParamId> ids;
  ids.reserve(param_nodes_.size());
  for (const auto& [pid, node] : param_nodes_) ids.push_back(pid);
  return ids;
}

template class Graph<float>;
template class Graph<double>;

namespace {

template <typename T>
void require_same_graph(const Var<T>& a, const Var<T>& b, const char* op) {
  if (&a.graph() != &b.graph()) {
    throw ContractError(std::string(op) + ": operands recorded on different graphs");
  }
}

struct Dims5 {
  std::size_t b, c, z, y, x;
  std::size_t spatial() const { return z * y * x; }
};

Dims5 dims5(const Shape& s) { return {s[0], s[1], s[2], s[3], s[4]}; }

// Vectorizable dot product with a fixed summation tree.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename T>
double sum_span(std::span<const T> v) {
  double acc = 0;
  for (T x : v) acc += static_cast<double>(x);
  return acc;
}

// Geometry shared by the conv3d forward and both backward passes.
struct ConvGeometry {
  Dims5 in;
  std::size_t cout;
  std::size_t kz, ky, kx;
  std::size_t pz, py, px;
  std::size_t oz, oy, ox;
};

ConvGeometry conv_geometry(const Shape& in_shape, const Shape& k_shape, const Shape& b_shape,
                           Padding padding) {
  require_rank5(in_shape, "conv3d input");
  require_rank5(k_shape, "conv3d kernel");
  ConvGeometry g{};
  g.in = dims5(in_shape);
  g.cout = k_shape[0];
  if (k_shape[1] != g.in.c) {
    throw ShapeError("conv3d: kernel expects " + std::to_string(k_shape[1]) +
                     " input channels, input has " + std::to_string(g.in.c));
  }
  if (b_shape.size() != 1 || b_shape[0] != g.cout) {
    throw ShapeError("conv3d: bias shape " + shape_to_string(b_shape) + " does not match " +
                     std::to_string(g.cout) + " output channels");
  }
  g.kz = k_shape[2];
  g.ky = k_shape[3];
  g.kx = k_shape[4];
  if (padding == Padding::same) {
    if (g.kz % 2 == 0 || g.ky % 2 == 0 || g.kx % 2 == 0) {
      throw ShapeError("conv3d: same padding requires odd kernel extents, got " +
                       shape_to_string(k_shape));
    }
    g.pz = g.kz / 2;
    g.py = g.ky / 2;
    g.px = g.kx / 2;
  }
  if (g.in.z + 2 * g.pz < g.kz || g.in.y + 2 * g.py < g.ky || g.in.x + 2 * g.px < g.kx) {
    throw ShapeError("conv3d: kernel " + shape_to_string(k_shape) + " larger than input " +
                     shape_to_string(in_shape));
  }
  g.oz = g.in.z + 2 * g.pz - g.kz + 1;
  g.oy = g.in.y + 2 * g.py - g.ky + 1;
  g.ox = g.in.x + 2 * g.px - g.kx + 1;
  return g;
}

// Visits every (output row, input row, kernel tap row) triple of a conv3d. The functor
// receives the flat offsets of the rows plus the kernel offset of tap (kz, ky, 0) and the
// x-range of valid output positions per kx is derived by the caller.
template <typename F>
void for_each_conv_row(const ConvGeometry& g, F&& f) {
  const std::ptrdiff_t pz = static_cast<std::ptrdiff_t>(g.pz);
  const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(g.py);
  for (std::size_t b = 0; b < g.in.b; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      for (std::size_t oz = 0; oz < g.oz; ++oz) {
        for (std::size_t oy = 0; oy < g.oy; ++oy) {
          const std::size_t out_row = (((b * g.cout + co) * g.oz + oz) * g.oy + oy) * g.ox;
          for (std::size_t ci = 0; ci < g.in.c; ++ci) {
            for (std::size_t kz = 0; kz < g.kz; ++kz) {
              const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(oz + kz) - pz;
              if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.in.z)) continue;
              for (std::size_t ky = 0; ky < g.ky; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - py;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in.y)) continue;
                const std::size_t in_row =
                    (((b * g.in.c + ci) * g.in.z + static_cast<std::size_t>(iz)) * g.in.y +
                     static_cast<std::size_t>(iy)) *
                    g.in.x;
                const std::size_t k_row = (((co * g.in.c + ci) * g.kz + kz) * g.ky + ky) * g.kx;
                f(co, out_row, in_row, k_row);
              }
            }
          }
        }
      }
    }
  }
}

// Same-padded 3-tap row updates, the hot path of 3x3x3 convolutions. n >= 2.
template <typename T>
void taps3_forward(T* __restrict o, const T* __restrict in, std::size_t n, T w0, T w1, T w2) {
  o[0] += w1 * in[0] + w2 * in[1];
  for (std::size_t i = 1; i + 1 < n; ++i) o[i] += w0 * in[i - 1] + w1 * in[i] + w2 * in[i + 1];
  o[n - 1] += w0 * in[n - 2] + w1 * in[n - 1];
}

template <typename T>
void taps3_backward(T* __restrict gi, const T* __restrict go, std::size_t n, T w0, T w1, T w2) {
  gi[0] += w1 * go[0] + w0 * go[1];
  for (std::size_t i = 1; i + 1 < n; ++i) gi[i] += w2 * go[i - 1] + w1 * go[i] + w0 * go[i + 1];
  gi[n - 1] += w2 * go[n - 2] + w1 * go[n - 1];
}

// Kernel-gradient sums of one same-padded 3-tap row: s[k] = sum_x go[x] * in[x + k - 1].
template <typename T>
void taps3_kernel_grad(const T* __restrict go, const T* __restrict in, std::size_t n, T* s) {
  T a0[8] = {}, a1[8] = {}, a2[8] = {};
  std::size_t i = 1;
  for (; i + 8 < n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) {
      const T g = go[i + l];
      a0[l] += g * in[i + l - 1];
      a1[l] += g * in[i + l];
      a2[l] += g * in[i + l + 1];
    }
  }
  T t0 = 0, t1 = go[0] * in[0], t2 = go[0] * in[1];
  for (; i + 1 < n; ++i) {
    t0 += go[i] * in[i - 1];
    t1 += go[i] * in[i];
    t2 += go[i] * in[i + 1];
  }
  t0 += go[n - 1] * in[n - 2];
  t1 += go[n - 1] * in[n - 1];
  auto tree = [](const T* a) {
    return ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
  };
  s[0] += tree(a0) + t0;
  s[1] += tree(a1) + t1;
  s[2] += tree(a2) + t2;
}

// Valid output x-range [lo, hi) for kernel column kx; input index is ox + kx - px.
inline void x_range(const ConvGeometry& g, std::size_t kx, std::size_t& lo, std::size_t& hi) {
  lo = g.px > kx ? g.px - kx : 0;
  const std::size_t limit = g.in.x + g.px;  // ox + kx < in.x + px
  hi = limit > kx ? std::min(g.ox, limit - kx) : 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv3d(Var<T> input, Var<T> kernel, Var<T> bias, Padding padding) {
  require_same_graph(input, kernel, "conv3d");
  require_same_graph(input, bias, "conv3d");
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), bias.shape(), padding);
  const T* in = input.value().data().data();
  const T* k = kernel.value().data().data();
  const T* bv = bias.value().data().data();

  Tensor<T> out(Shape{g.in.b, g.cout, g.oz, g.oy, g.ox});
  T* o = out.data().data();
  const std::size_t out_plane = g.oz * g.oy * g.ox;
  for (std::size_t b = 0; b < g.in.b; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      std::fill_n(o + (b * g.cout + co) * out_plane, out_plane, bv[co]);
    }
  }
  const bool taps3 = g.kx == 3 && g.px == 1 && g.in.x >= 2;
  for_each_conv_row(g, [&](std::size_t, std::size_t out_row, std::size_t in_row,
                           std::size_t k_row) {
    T* orow = o + out_row;
    if (taps3) {
      taps3_forward(orow, in + in_row, g.ox, k[k_row], k[k_row + 1], k[k_row + 2]);
      return;
    }
    for (std::size_t kx = 0; kx < g.kx; ++kx) {
      const T w = k[k_row + kx];
      std::size_t lo, hi;
      x_range(g, kx, lo, hi);
      if (lo >= hi) continue;
      const T* irow = in + (in_row + lo + kx - g.px);  // input aligned with orow[lo]
      T* orun = orow + lo;
      for (std::size_t i = 0; i < hi - lo; ++i) orun[i] += w * irow[i];
    }
  });

  auto& graph = input.graph();
  const NodeId in_id = input.id(), k_id = kernel.id(), b_id = bias.id();
  return graph.record(
      std::move(out), {in_id, k_id, b_id},
      [&graph, g, taps3, in_id, k_id](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
        const T* go = grad_out.data().data();
        const T* in = graph.value(in_id).data().data();
        const T* k = graph.value(k_id).data().data();
        T* gin = grads[0] ? grads[0]->data().data() : nullptr;
        T* gk = grads[1] ? grads[1]->data().data() : nullptr;
        if (gin || gk) {
          for_each_conv_row(g, [&](std::size_t, std::size_t out_row, std::size_t in_row,
                                   std::size_t k_row) {
            const T* gorow = go + out_row;
            if (taps3) {
              const T* irow = in + in_row;
              if (gin) {
                taps3_backward(gin + in_row, gorow, g.ox, k[k_row], k[k_row + 1], k[k_row + 2]);
              }
              if (gk) {
                taps3_kernel_grad(gorow, irow, g.ox, gk + k_row);
              }
              return;
            }
            for (std::size_t kx = 0; kx < g.kx; ++kx) {
              std::size_t lo, hi;
              x_range(g, kx, lo, hi);
              if (lo >= hi) continue;
              const std::size_t start = in_row + lo + kx - g.px;  // input aligned with ox = lo
              const std::size_t n = hi - lo;
              if (gin) {
                const T w = k[k_row + kx];
                T* girun = gin + start;
                const T* gorun = gorow + lo;
                for (std::size_t i = 0; i < n; ++i) girun[i] += w * gorun[i];
              }
              if (gk) gk[k_row + kx] += dot(gorow + lo, in + start, n);
            }
          });
        }
        if (grads[2]) {
          const std::size_t plane = g.oz * g.oy * g.ox;
          for (std::size_t b = 0; b < g.in.b; ++b) {
            for (std::size_t co = 0; co < g.cout; ++co) {
              (*grads[2])[co] += static_cast<T>(
                  sum_span(std::span<const T>(go + (b * g.cout + co) * plane, plane)));
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// maxpool3d
// ---------------------------------------------------------------------------

template <typename T>
Var<T> maxpool3d(Var<T> input) {
  require_rank5(input.shape(), "maxpool3d");
  const Dims5 d = dims5(input.shape());
  const char* axis_names[] = {"z", "y", "x"};
  const std::size_t extents[] = {d.z, d.y, d.x};
  for (int a = 0; a < 3; ++a) {
    if (extents[a] % 2 != 0) {
      throw ShapeError(std::string("maxpool3d: extent of axis ") + axis_names[a] + " is odd (" +
                       std::to_string(extents[a]) + ")");
    }
  }
  const std::size_t oz = d.z / 2, oy = d.y / 2, ox = d.x / 2;
  Tensor<T> out(Shape{d.b, d.c, oz, oy, ox});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
  const T* in = input.value().data().data();
  T* o = out.data().data();
  std::size_t idx = 0;
  for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
    const std::size_t base = bc * d.spatial();
    for (std::size_t z = 0; z < oz; ++z) {
      for (std::size_t y = 0; y < oy; ++y) {
        for (std::size_t x = 0; x < ox; ++x, ++idx) {
          std::size_t best = base + ((2 * z) * d.y + 2 * y) * d.x + 2 * x;
          T best_v = in[best];
          for (std::size_t dz = 0; dz < 2; ++dz) {
            for (std::size_t dy = 0; dy < 2; ++dy) {
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t j = base + ((2 * z + dz) * d.y + 2 * y + dy) * d.x + 2 * x + dx;
                if (in[j] > best_v) {
                  best_v = in[j];
                  best = j;
                }
              }
            }
          }
          o[idx] = best_v;
          (*argmax)[idx] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return input.graph().record(
      std::move(out), {input.id()},
      [argmax](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
        if (!grads[0]) return;
        T* gin = grads[0]->data().data();
        const T* go = grad_out.data().data();
        for (std::size_t i = 0; i < argmax->size(); ++i) gin[(*argmax)[i]] += go[i];
      });
}

// ---------------------------------------------------------------------------
// upconv3d
// ---------------------------------------------------------------------------

template <typename T>
Var<T> upconv3d(Var<T> input, Var<T> kernel, Var<T> bias) {
  require_same_graph(input, kernel, "upconv3d");
  require_same_graph(input, bias, "upconv3d");
  require_rank5(input.shape(), "upconv3d input");
  require_rank5(kernel.shape(), "upconv3d kernel");
  const Dims5 d = dims5(input.shape());
  const Shape& ks = kernel.shape();
  if (ks[0] != d.c) {
    throw ShapeError("upconv3d: kernel expects " + std::to_string(ks[0]) +
                     " input channels, input has " + std::to_string(d.c));
  }
  if (ks[2] != 2 || ks[3] != 2 || ks[4] != 2) {
    throw ShapeError("upconv3d: kernel spatial extent must be 2x2x2, got " + shape_to_string(ks));
  }
  const std::size_t cout = ks[1];
  if (bias.shape().size() != 1 || bias.shape()[0] != cout) {
    throw ShapeError("upconv3d: bias shape " + shape_to_string(bias.shape()) +
                     " does not match " + std::to_string(cout) + " output channels");
  }
  const std::size_t OZ = 2 * d.z, OY = 2 * d.y, OX = 2 * d.x;
  Tensor<T> out(Shape{d.b, cout, OZ, OY, OX});
  const T* in = input.value().data().data();
  const T* k = kernel.value().data().data();
  const T* bv = bias.value().data().data();
  T* o = out.data().data();

  // Visits (output row, input row, kernel base) for every contributing pair.
  auto visit = [d, cout, OZ, OY, OX](auto&& f) {
    for (std::size_t b = 0; b < d.b; ++b) {
      for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t z = 0; z < d.z; ++z) {
          for (std::size_t dz = 0; dz < 2; ++dz) {
            for (std::size_t y = 0; y < d.y; ++y) {
              for (std::size_t dy = 0; dy < 2; ++dy) {
                const std::size_t out_row =
                    (((b * cout + co) * OZ + 2 * z + dz) * OY + 2 * y + dy) * OX;
                for (std::size_t ci = 0; ci < d.c; ++ci) {
                  const std::size_t in_row = (((b * d.c + ci) * d.z + z) * d.y + y) * d.x;
                  const std::size_t k_base = (((ci * cout + co) * 2 + dz) * 2 + dy) * 2;
                  f(co, out_row, in_row, k_base);
                }
              }
            }
          }
        }
      }
    }
  };

  const std::size_t plane = OZ * OY * OX;
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t co = 0; co < cout; ++co) std::fill_n(o + (b * cout + co) * plane, plane, bv[co]);
  }
  visit([&](std::size_t, std::size_t out_row, std::size_t in_row, std::size_t k_base) {
    T* orow = o + out_row;
    const T* irow = in + in_row;
    const T w0 = k[k_base], w1 = k[k_base + 1];
    for (std::size_t x = 0; x < d.x; ++x) {
      orow[2 * x] += w0 * irow[x];
      orow[2 * x + 1] += w1 * irow[x];
    }
  });

  auto& graph = input.graph();
  const NodeId in_id = input.id(), k_id = kernel.id();
  return graph.record(
      std::move(out), {in_id, k_id, bias.id()},
      [&graph, visit, in_id, k_id, d, cout, plane](const Tensor<T>& grad_out,
                                                   std::span<Tensor<T>* const> grads) {
        const T* go = grad_out.data().data();
        const T* in = graph.value(in_id).data().data();
        const T* k = graph.value(k_id).data().data();
        T* gin = grads[0] ? grads[0]->data().data() : nullptr;
        T* gk = grads[1] ? grads[1]->data().data() : nullptr;
        if (gin || gk) {
          visit([&](std::size_t, std::size_t out_row, std::size_t in_row, std::size_t k_base) {
            const T* gorow = go + out_row;
            if (gin) {
              const T w0 = k[k_base], w1 = k[k_base + 1];
              T* girow = gin + in_row;
              for (std::size_t x = 0; x < d.x; ++x) {
                girow[x] += w0 * gorow[2 * x] + w1 * gorow[2 * x + 1];
              }
            }
            if (gk) {
              const T* irow = in + in_row;
              T a0 = 0, a1 = 0;
              for (std::size_t x = 0; x < d.x; ++x) {
                a0 += irow[x] * gorow[2 * x];
                a1 += irow[x] * gorow[2 * x + 1];
              }
              gk[k_base] += a0;
              gk[k_base + 1] += a1;
            }
          });
        }
        if (grads[2]) {
          for (std::size_t b = 0; b < d.b; ++b) {
            for (std::size_t co = 0; co < cout; ++co) {
              (*grads[2])[co] += static_cast<T>(
                  sum_span(std::span<const T>(go + (b * cout + co) * plane, plane)));
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// batchnorm
// ---------------------------------------------------------------------------

template <typename T>
Var<T> batchnorm(Var<T> input, Var<T> gamma, Var<T> beta, Mode mode, BatchNormState<T>& state) {
  require_same_graph(input, gamma, "batchnorm");
  require_same_graph(input, beta, "batchnorm");
  require_rank5(input.shape(), "batchnorm");
  const Dims5 d = dims5(input.shape());
  if (gamma.value().numel() != d.c || beta.value().numel() != d.c) {
    throw ShapeError("batchnorm: gamma/beta must have " + std::to_string(d.c) + " entries");
  }
  const std::size_t count = d.b * d.spatial();
  if (count == 0) throw ShapeError("batchnorm: empty channel reduction");
  if (state.channels() != d.c) {
    throw ContractError("batchnorm: running statistics hold " + std::to_string(state.channels()) +
                        " channels, input has " + std::to_string(d.c));
  }

  const T* in = input.value().data().data();
  const T* gm = gamma.value().data().data();
  const T* bt = beta.value().data().data();
  const std::size_t S = d.spatial();

  auto xhat = std::make_shared<Tensor<T>>(input.shape());
  auto inv_std = std::make_shared<std::vector<T>>(d.c);
  Tensor<T> out(input.shape());
  T* xh = xhat->data().data();
  T* o = out.data().data();

  for (std::size_t c = 0; c < d.c; ++c) {
    T mean_c, var_c;
    if (mode == Mode::train) {
      double acc = 0;
      for (std::size_t b = 0; b < d.b; ++b) {
        acc += sum_span(std::span<const T>(in + (b * d.c + c) * S, S));
      }
      const double mean = acc / static_cast<double>(count);
      double sq = 0;
      for (std::size_t b = 0; b < d.b; ++b) {
        const T* p = in + (b * d.c + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          const double dv = static_cast<double>(p[i]) - mean;
          sq += dv * dv;
        }
      }
      const double var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      mean_c = static_cast<T>(mean);
      var_c = static_cast<T>(var);
      state.running_mean[c] =
          (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mean_c;
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] +
                             state.momentum * static_cast<T>(unbiased);
    } else {
      mean_c = state.running_mean[c];
      var_c = state.running_var[c];
    }
    const T istd = T(1) / std::sqrt(var_c + state.epsilon);
    (*inv_std)[c] = istd;
    for (std::size_t b = 0; b < d.b; ++b) {
      const std::size_t off = (b * d.c + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        const T n = (in[off + i] - mean_c) * istd;
        xh[off + i] = n;
        o[off + i] = gm[c] * n + bt[c];
      }
    }
  }

  auto& graph = input.graph();
  const NodeId g_id = gamma.id();
  return graph.record(
      std::move(out), {input.id(), g_id, beta.id()},
      [&graph, xhat, inv_std, d, S, count, mode, g_id](const Tensor<T>& grad_out,
                                                       std::span<Tensor<T>* const> grads) {
        const T* go = grad_out.data().data();
        const T* xh = xhat->data().data();
        const T* gm = graph.value(g_id).data().data();
        for (std::size_t c = 0; c < d.c; ++c) {
          double sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < d.b; ++b) {
            const std::size_t off = (b * d.c + c) * S;
            for (std::size_t i = 0; i < S; ++i) {
              sum_g += static_cast<double>(go[off + i]);
              sum_gx += static_cast<double>(go[off + i]) * static_cast<double>(xh[off + i]);
            }
          }
          if (grads[1]) (*grads[1])[c] += static_cast<T>(sum_gx);
          if (grads[2]) (*grads[2])[c] += static_cast<T>(sum_g);
          if (!grads[0]) continue;
          T* gin = grads[0]->data().data();
          const T scale_c = gm[c] * (*inv_std)[c];
          if (mode == Mode::train) {
            const T mean_g = static_cast<T>(sum_g / static_cast<double>(count));
            const T mean_gx = static_cast<T>(sum_gx / static_cast<double>(count));
            for (std::size_t b = 0; b < d.b; ++b) {
              const std::size_t off = (b * d.c + c) * S;
              for (std::size_t i = 0; i < S; ++i) {
                gin[off + i] += scale_c * (go[off + i] - mean_g - xh[off + i] * mean_gx);
              }
            }
          } else {
            for (std::size_t b = 0; b < d.b; ++b) {
              const std::size_t off = (b * d.c + c) * S;
              for (std::size_t i = 0; i < S; ++i) gin[off + i] += scale_c * go[off + i];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// elementwise and channel ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> relu(Var<T> input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] < T(0) ? T(0) : x[i];  // NaN passes through
  auto& graph = input.graph();
  const NodeId id = input.id();
  return graph.record(std::move(out), {id},
                      [&graph, id](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
                        if (!grads[0]) return;
                        const Tensor<T>& x = graph.value(id);
                        Tensor<T>& g = *grads[0];
                        for (std::size_t i = 0; i < x.numel(); ++i) {
                          if (x[i] > T(0)) g[i] += grad_out[i];
                        }
                      });
}

template <typename T>
Var<T> softmax_channel(Var<T> input) {
  require_rank5(input.shape(), "softmax_channel");
  const Dims5 d = dims5(input.shape());
  if (d.c < 2) throw ShapeError("softmax_channel: need at least 2 channels");
  const std::size_t S = d.spatial();
  const T* x = input.value().data().data();
  auto out = Tensor<T>(input.shape());
  T* p = out.data().data();
  for (std::size_t b = 0; b < d.b; ++b) {
    const std::size_t base = b * d.c * S;
    for (std::size_t i = 0; i < S; ++i) {
      T mx = x[base + i];
      for (std::size_t c = 1; c < d.c; ++c) mx = std::max(mx, x[base + c * S + i]);
      T total = 0;
      for (std::size_t c = 0; c < d.c; ++c) {
        const T e = std::exp(x[base + c * S + i] - mx);
        p[base + c * S + i] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t c = 0; c < d.c; ++c) p[base + c * S + i] *= inv;
    }
  }
  auto probs = std::make_shared<Tensor<T>>(out);
  return input.graph().record(
      std::move(out), {input.id()},
      [probs, d, S](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
        if (!grads[0]) return;
        const T* p = probs->data().data();
        const T* go = grad_out.data().data();
        T* gin = grads[0]->data().data();
        for (std::size_t b = 0; b < d.b; ++b) {
          const std::size_t base = b * d.c * S;
          for (std::size_t i = 0; i < S; ++i) {
            T dotv = 0;
            for (std::size_t c = 0; c < d.c; ++c) dotv += p[base + c * S + i] * go[base + c * S + i];
            for (std::size_t c = 0; c < d.c; ++c) {
              const std::size_t j = base + c * S + i;
              gin[j] += p[j] * (go[j] - dotv);
            }
          }
        }
      });
}

template <typename T>
Var<T> concat_channel(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "concat_channel");
  require_rank5(a.shape(), "concat_channel");
  require_rank5(b.shape(), "concat_channel");
  const Dims5 da = dims5(a.shape()), db = dims5(b.shape());
  if (da.b != db.b || da.z != db.z || da.y != db.y || da.x != db.x) {
    throw ShapeError("concat_channel: non-channel extents differ: " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
  const std::size_t S = da.spatial();
  const std::size_t C = da.c + db.c;
  Tensor<T> out(Shape{da.b, C, da.z, da.y, da.x});
  const T* pa = a.value().data().data();
  const T* pb = b.value().data().data();
  T* o = out.data().data();
  for (std::size_t n = 0; n < da.b; ++n) {
    std::copy_n(pa + n * da.c * S, da.c * S, o + n * C * S);
    std::copy_n(pb + n * db.c * S, db.c * S, o + n * C * S + da.c * S);
  }
  return a.graph().record(
      std::move(out), {a.id(), b.id()},
      [da, db, S, C](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
        const T* go = grad_out.data().data();
        for (std::size_t n = 0; n < da.b; ++n) {
          if (grads[0]) {
            T* g = grads[0]->data().data() + n * da.c * S;
            const T* src = go + n * C * S;
            for (std::size_t i = 0; i < da.c * S; ++i) g[i] += src[i];
          }
          if (grads[1]) {
            T* g = grads[1]->data().data() + n * db.c * S;
            const T* src = go + n * C * S + da.c * S;
            for (std::size_t i = 0; i < db.c * S; ++i) g[i] += src[i];
          }
        }
      });
}

template <typename T>
Var<T> slice_channel(Var<T> input, std::size_t begin, std::size_t count) {
  require_rank5(input.shape(), "slice_channel");
  const Dims5 d = dims5(input.shape());
  if (count == 0 || begin + count > d.c) {
    throw ShapeError("slice_channel: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + std::to_string(d.c) +
                     " channels");
  }
  const std::size_t S = d.spatial();
  Tensor<T> out(Shape{d.b, count, d.z, d.y, d.x});
  const T* x = input.value().data().data();
  for (std::size_t n = 0; n < d.b; ++n) {
    std::copy_n(x + (n * d.c + begin) * S, count * S, out.data().data() + n * count * S);
  }
  return input.graph().record(
      std::move(out), {input.id()},
      [d, S, begin, count](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
        if (!grads[0]) return;
        for (std::size_t n = 0; n < d.b; ++n) {
          T* g = grads[0]->data().data() + (n * d.c + begin) * S;
          const T* src = grad_out.data().data() + n * count * S;
          for (std::size_t i = 0; i < count * S; ++i) g[i] += src[i];
        }
      });
}

template <typename T>
Var<T> sum(Var<T> input) {
  const T total = static_cast<T>(sum_span(input.value().data()));
  return input.graph().record(Tensor<T>::scalar(total), {input.id()},
                              [](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
                                if (!grads[0]) return;
                                const T g = grad_out[0];
                                for (auto& v : grads[0]->data()) v += g;
                              });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "mul");
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes differ: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  const Tensor<T>& x = a.value();
  const Tensor<T>& y = b.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * y[i];
  auto& graph = a.graph();
  const NodeId ia = a.id(), ib = b.id();
  return graph.record(
      std::move(out), {ia, ib},
      [&graph, ia, ib](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
        const Tensor<T>& x = graph.value(ia);
        const Tensor<T>& y = graph.value(ib);
        if (grads[0]) {
          for (std::size_t i = 0; i < x.numel(); ++i) (*grads[0])[i] += grad_out[i] * y[i];
        }
        if (grads[1]) {
          for (std::size_t i = 0; i < x.numel(); ++i) (*grads[1])[i] += grad_out[i] * x[i];
        }
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "add");
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes differ: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  const Tensor<T>& x = a.value();
  const Tensor<T>& y = b.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + y[i];
  return a.graph().record(std::move(out), {a.id(), b.id()},
                          [](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
                            for (int k = 0; k < 2; ++k) {
                              if (!grads[k]) continue;
                              for (std::size_t i = 0; i < grad_out.numel(); ++i) {
                                (*grads[k])[i] += grad_out[i];
                              }
                            }
                          });
}

template <typename T>
Var<T> scale(Var<T> input, T factor) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * factor;
  return input.graph().record(
      std::move(out), {input.id()},
      [factor](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < grad_out.numel(); ++i) (*grads[0])[i] += grad_out[i] * factor;
      });
}

template <typename T>
Var<T> mean_of(std::span<const Var<T>> scalars) {
  if (scalars.empty()) throw ContractError("mean_of: no inputs");
  std::vector<NodeId> ids;
  T total = 0;
  for (const Var<T>& v : scalars) {
    require_same_graph(scalars.front(), v, "mean_of");
    if (v.value().numel() != 1) {
      throw ContractError("mean_of: input of shape " + shape_to_string(v.shape()) +
                          " is not scalar");
    }
    total += v.value()[0];
    ids.push_back(v.id());
  }
  const T n = static_cast<T>(scalars.size());
  return scalars.front().graph().record(
      Tensor<T>::scalar(total / n), std::move(ids),
      [n](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
        const T g = grad_out[0] / n;
        for (Tensor<T>* acc : grads) {
          if (acc) (*acc)[0] += g;
        }
      });
}

#define TKVSEG_INSTANTIATE_OPS(T)                                                        \
  template Var<T> conv3d<T>(Var<T>, Var<T>, Var<T>, Padding);                           \
  template Var<T> maxpool3d<T>(Var<T>);                                                  \
  template Var<T> upconv3d<T>(Var<T>, Var<T>, Var<T>);                                  \
  template Var<T> batchnorm<T>(Var<T>, Var<T>, Var<T>, Mode, BatchNormState<T>&);       \
  template Var<T> relu<T>(Var<T>);                                                       \
  template Var<T> softmax_channel<T>(Var<T>);                                            \
  template Var<T> concat_channel<T>(Var<T>, Var<T>);                                     \
  template Var<T> slice_channel<T>(Var<T>, std::size_t, std::size_t);                    \
  template Var<T> sum<T>(Var<T>);                                                        \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                \
  template Var<T> add<T>(Var<T>, Var<T>);                                                \
  template Var<T> scale<T>(Var<T>, T);                                                   \
  template Var<T> mean_of<T>(std::span<const Var<T>>);

TKVSEG_INSTANTIATE_OPS(float)
TKVSEG_INSTANTIATE_OPS(double)

#undef TKVSEG_INSTANTIATE_OPS

}  // namespace tkvseg
