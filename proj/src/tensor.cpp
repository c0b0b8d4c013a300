// Copyright 2026 The ftanet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

#include "error.hpp"

namespace ftanet {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename T>
Tensor<T>::Tensor(Shape d, std::vector<T> v) : dims(std::move(d)), values(std::move(v)) {
  require(values.size() == element_count(dims), ErrorCode::kShapeMismatch,
          "tensor value count does not match shape " + shape_string(dims));
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

template <typename T>
std::shared_ptr<Node<T>> new_node(Shape shape, std::vector<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Builds an op result. Parents and the backward closure are only retained
// when some parent takes part in differentiation.
template <typename T>
Var<T> make_op(Shape shape, std::vector<T> value, std::vector<Var<T>> parents, BackwardFn<T> fn) {
  auto n = new_node<T>(std::move(shape), std::move(value));
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward_fn = std::move(fn);
  }
  return Var<T>(std::move(n));
}

template <typename T>
bool wants_grad(const Node<T>& parent) {
  return parent.requires_grad;
}

void check(bool ok, const std::string& what) { require(ok, ErrorCode::kShapeMismatch, what); }

// Same-rank broadcasting, described as rows: the shape is coalesced so the
// innermost run is as long as possible, and each operand either walks that
// run (step 1) or repeats one element (step 0).
struct Broadcast {
  Shape out;
  Shape outer;                                // extents of the non-row axes
  std::vector<std::size_t> a_outer, b_outer;  // element strides of those axes
  std::size_t row = 1, a_step = 0, b_step = 0;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  check(a.size() == b.size(), std::string(op) + ": rank mismatch " + shape_string(a) + " vs " +
                                  shape_string(b));
  Broadcast p;
  const std::size_t r = a.size();
  p.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    check(a[i] == b[i] || a[i] == 1 || b[i] == 1,
          std::string(op) + ": incompatible shapes " + shape_string(a) + " vs " + shape_string(b));
    p.out[i] = std::max(a[i], b[i]);
  }
  // Per-axis strides (0 on broadcast axes); size-1 output axes are dropped.
  struct Axis {
    std::size_t n, sa, sb;
  };
  std::vector<Axis> axes;
  std::size_t sa = 1, sb = 1;
  for (std::size_t i = r; i-- > 0;) {
    if (p.out[i] != 1) axes.push_back({p.out[i], a[i] == 1 ? 0 : sa, b[i] == 1 ? 0 : sb});
    sa *= a[i];
    sb *= b[i];
  }
  // axes is innermost-first; merge neighbours that stay affine for both operands.
  std::vector<Axis> merged;
  for (const Axis& ax : axes) {
    if (!merged.empty()) {
      Axis& in = merged.back();
      if (ax.sa == in.sa * in.n && ax.sb == in.sb * in.n) {
        in.n *= ax.n;
        continue;
      }
    }
    merged.push_back(ax);
  }
  if (merged.empty()) merged.push_back({1, 1, 1});
  const Axis& inner = merged.front();
  p.row = inner.n;
  p.a_step = inner.sa == 0 ? 0 : 1;
  p.b_step = inner.sb == 0 ? 0 : 1;
  for (std::size_t i = merged.size(); i-- > 1;) {
    p.outer.push_back(merged[i].n);
    p.a_outer.push_back(merged[i].sa);
    p.b_outer.push_back(merged[i].sb);
  }
  return p;
}

// Calls f(out_offset, a_offset, b_offset) once per row.
template <typename F>
void for_each_row(const Broadcast& p, F&& f) {
  const std::size_t d = p.outer.size();
  const std::size_t rows = element_count(p.outer);
  std::vector<std::size_t> idx(d, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    f(r * p.row, ia, ib);
    for (std::size_t k = d; k-- > 0;) {
      ++idx[k];
      ia += p.a_outer[k];
      ib += p.b_outer[k];
      if (idx[k] < p.outer[k]) break;
      ia -= p.a_outer[k] * idx[k];
      ib -= p.b_outer[k] * idx[k];
      idx[k] = 0;
    }
  }
}

// Adds `sum_j src[j]` into one element when step is 0, elementwise otherwise.
template <typename T>
void accumulate_row(T* dst, std::size_t step, const T* src, std::size_t n) {
  if (step == 1) {
    for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
  } else {
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) total += src[j];
    *dst += total;
  }
}

// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

struct ConvGeometry {
  std::size_t h = 0, w = 0, cin = 0;
  std::size_t kh = 0, kw = 0, cout = 0;
  std::size_t sh = 1, sw = 1;
  std::size_t pad_h = 0, pad_w = 0;
  std::size_t ho = 0, wo = 0;

  std::size_t patch() const { return kh * kw * cin; }
  bool pointwise() const { return kh == 1 && kw == 1 && sh == 1 && sw == 1; }
};

std::size_t conv_extent(std::size_t n, std::size_t k, std::size_t s, std::size_t& pad,
                        const char* axis) {
  check(s >= 1, std::string("conv2d: stride along ") + axis + " must be >= 1");
  if (s == 1) {
    check(k % 2 == 1, std::string("conv2d: same padding needs an odd kernel along ") + axis);
    pad = (k - 1) / 2;
    return n;
  }
  check(k <= n, std::string("conv2d: kernel larger than input along ") + axis);
  check(s <= n, std::string("conv2d: stride larger than input along ") + axis);
  pad = 0;
  return (n - k) / s + 1;
}

ConvGeometry conv_geometry(const Shape& x, const Shape& k, const Shape& b, std::size_t sh,
                           std::size_t sw) {
  check(x.size() == 3, "conv2d: input must be H x W x Cin, got " + shape_string(x));
  check(k.size() == 4, "conv2d: kernel must be Kh x Kw x Cin x Cout, got " + shape_string(k));
  check(k[2] == x[2], "conv2d: kernel Cin " + std::to_string(k[2]) + " != input channels " +
                          std::to_string(x[2]));
  check(b.size() == 1 && b[0] == k[3], "conv2d: bias must have Cout elements");
  ConvGeometry g;
  g.h = x[0];
  g.w = x[1];
  g.cin = x[2];
  g.kh = k[0];
  g.kw = k[1];
  g.cout = k[3];
  g.sh = sh;
  g.sw = sw;
  g.ho = conv_extent(g.h, g.kh, sh, g.pad_h, "height");
  g.wo = conv_extent(g.w, g.kw, sw, g.pad_w, "width");
  return g;
}

constexpr std::size_t kIm2colBudget = std::size_t{1} << 20;  // elements per chunk

std::size_t rows_per_chunk(const ConvGeometry& g) {
  return std::max<std::size_t>(1, kIm2colBudget / std::max<std::size_t>(1, g.wo * g.patch()));
}

// Fills col for output rows [row0, row0 + rows): one row per output pixel,
// columns ordered (dy, dx, ci) to match the kernel layout.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, std::size_t row0, std::size_t rows, T* col) {
  const std::size_t patch = g.patch();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t oh = row0 + r;
    for (std::size_t ow = 0; ow < g.wo; ++ow) {
      T* dst = col + (r * g.wo + ow) * patch;
      for (std::size_t dy = 0; dy < g.kh; ++dy) {
        const long ih = static_cast<long>(oh * g.sh + dy) - static_cast<long>(g.pad_h);
        for (std::size_t dx = 0; dx < g.kw; ++dx, dst += g.cin) {
          const long iw = static_cast<long>(ow * g.sw + dx) - static_cast<long>(g.pad_w);
          if (ih < 0 || iw < 0 || ih >= static_cast<long>(g.h) || iw >= static_cast<long>(g.w)) {
            std::fill(dst, dst + g.cin, T(0));
          } else {
            const T* src = x + (static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw)) * g.cin;
            std::copy(src, src + g.cin, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, std::size_t row0, std::size_t rows, T* dx) {
  const std::size_t patch = g.patch();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t oh = row0 + r;
    for (std::size_t ow = 0; ow < g.wo; ++ow) {
      const T* src = col + (r * g.wo + ow) * patch;
      for (std::size_t dy = 0; dy < g.kh; ++dy) {
        const long ih = static_cast<long>(oh * g.sh + dy) - static_cast<long>(g.pad_h);
        for (std::size_t dxk = 0; dxk < g.kw; ++dxk, src += g.cin) {
          const long iw = static_cast<long>(ow * g.sw + dxk) - static_cast<long>(g.pad_w);
          if (ih < 0 || iw < 0 || ih >= static_cast<long>(g.h) || iw >= static_cast<long>(g.w)) continue;
          T* dst = dx + (static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw)) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// Stride-1 "same" convolution on channel-planar copies. The inner loops run
// along image rows so the compiler keeps whole SIMD registers of output
// pixels (forward) or of partial kernel-gradient sums in flight.
template <typename T>
struct Simd;
template <>
struct Simd<float> {
  typedef float type __attribute__((vector_size(64)));
  static constexpr std::size_t lanes = 16;
};
template <>
struct Simd<double> {
  typedef double type __attribute__((vector_size(64)));
  static constexpr std::size_t lanes = 8;
};

template <typename T>
inline typename Simd<T>::type load_simd(const T* p) {
  typename Simd<T>::type v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <typename T>
class PlanarConv {
 public:
  using V = typename Simd<T>::type;
  static constexpr std::size_t kLanes = Simd<T>::lanes;
  static constexpr std::size_t kCoutBlock = 4;
  static constexpr std::size_t kVecs = 2;  // SIMD registers per output row block
  static constexpr std::size_t kBlock = kLanes * kVecs;

  explicit PlanarConv(const ConvGeometry& g)
      : g_(g), wp_(g.w + g.kw - 1), hp_(g.h + g.kh - 1) {}

  // H x W x C (interleaved) -> C planes of hp x wp with zero borders.
  std::vector<T> padded_planes(const T* x, std::size_t c) const {
    std::vector<T> out(c * hp_ * wp_, T(0));
    const std::size_t top = (g_.kh - 1) / 2, left = (g_.kw - 1) / 2;
    for (std::size_t r = 0; r < g_.h; ++r) {
      for (std::size_t col = 0; col < g_.w; ++col) {
        const T* src = x + (r * g_.w + col) * c;
        T* dst = out.data() + (r + top) * wp_ + col + left;
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch * hp_ * wp_] = src[ch];
      }
    }
    return out;
  }

  std::vector<T> planes(const T* x, std::size_t c) const {
    const std::size_t n = g_.h * g_.w;
    std::vector<T> out(c * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) out[ch * n + i] = x[i * c + ch];
    }
    return out;
  }

  // Planar output (cout x H x W) of the padded planar input xp.
  std::vector<T> apply(const T* xp, std::size_t cin, const T* k, std::size_t cout) const {
    std::vector<T> out(cout * g_.h * g_.w);
    for (std::size_t co0 = 0; co0 < cout; co0 += kCoutBlock) {
      const std::size_t nc = std::min(kCoutBlock, cout - co0);
      for (std::size_t oh = 0; oh < g_.h; ++oh) {
        std::size_t ow0 = 0;
        if (nc == kCoutBlock) {
          for (; ow0 + kBlock <= g_.w; ow0 += kBlock) block(xp, cin, k, cout, co0, oh, ow0, out.data());
        }
        if (ow0 < g_.w) tail(xp, cin, k, cout, co0, nc, oh, ow0, out.data());
      }
    }
    return out;
  }

  // gk += correlation of the padded planar input with the planar output gradient g.
  void kernel_grad(const T* xp, std::size_t cin, const T* g, std::size_t cout, T* gk) const {
    switch (g_.kw) {
      case 1: kernel_grad_fixed<1>(xp, cin, g, cout, gk); break;
      case 3: kernel_grad_fixed<3>(xp, cin, g, cout, gk); break;
      case 5: kernel_grad_fixed<5>(xp, cin, g, cout, gk); break;
      default: kernel_grad_generic(xp, cin, g, cout, gk); break;
    }
  }

  // Spatially flipped, channel-transposed kernel: the input gradient is the
  // same-padded correlation of the output gradient with it.
  std::vector<T> flipped_kernel(const T* k) const {
    const std::size_t cin = g_.cin, cout = g_.cout;
    std::vector<T> flipped(g_.kh * g_.kw * cin * cout);
    for (std::size_t dy = 0; dy < g_.kh; ++dy) {
      for (std::size_t dx = 0; dx < g_.kw; ++dx) {
        const T* src = k + (dy * g_.kw + dx) * cin * cout;
        T* dst = flipped.data() + ((g_.kh - 1 - dy) * g_.kw + (g_.kw - 1 - dx)) * cout * cin;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t co = 0; co < cout; ++co) dst[co * cin + ci] = src[ci * cout + co];
        }
      }
    }
    return flipped;
  }

 private:
  void block(const T* xp, std::size_t cin, const T* k, std::size_t cout, std::size_t co0,
             std::size_t oh, std::size_t ow0, T* out) const {
    V acc[kCoutBlock][kVecs] = {};
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* plane = xp + ci * hp_ * wp_;
      for (std::size_t dy = 0; dy < g_.kh; ++dy) {
        const T* row = plane + (oh + dy) * wp_ + ow0;
        for (std::size_t dx = 0; dx < g_.kw; ++dx) {
          const T* kt = k + ((dy * g_.kw + dx) * cin + ci) * cout + co0;
          V xv[kVecs];
          for (std::size_t v = 0; v < kVecs; ++v) xv[v] = load_simd(row + dx + v * kLanes);
#pragma GCC unroll 8
          for (std::size_t c = 0; c < kCoutBlock; ++c) {
            const T kv = kt[c];
            for (std::size_t v = 0; v < kVecs; ++v) acc[c][v] += kv * xv[v];
          }
        }
      }
    }
    for (std::size_t c = 0; c < kCoutBlock; ++c) {
      T* dst = out + ((co0 + c) * g_.h + oh) * g_.w + ow0;
      for (std::size_t v = 0; v < kVecs; ++v) std::memcpy(dst + v * kLanes, &acc[c][v], sizeof(V));
    }
  }

  void tail(const T* xp, std::size_t cin, const T* k, std::size_t cout, std::size_t co0,
            std::size_t nc, std::size_t oh, std::size_t ow0, T* out) const {
    for (std::size_t c = 0; c < nc; ++c) {
      T* dst = out + ((co0 + c) * g_.h + oh) * g_.w;
      for (std::size_t ow = ow0; ow < g_.w; ++ow) {
        T acc = T(0);
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const T* plane = xp + ci * hp_ * wp_;
          for (std::size_t dy = 0; dy < g_.kh; ++dy) {
            const T* row = plane + (oh + dy) * wp_ + ow;
            for (std::size_t dx = 0; dx < g_.kw; ++dx) {
              acc += k[((dy * g_.kw + dx) * cin + ci) * cout + co0 + c] * row[dx];
            }
          }
        }
        dst[ow] = acc;
      }
    }
  }

  template <std::size_t KW>
  void kernel_grad_fixed(const T* xp, std::size_t cin, const T* g, std::size_t cout, T* gk) const {
    const std::size_t n = g_.h * g_.w;
    for (std::size_t co0 = 0; co0 < cout; co0 += kCoutBlock) {
      const std::size_t nc = std::min(kCoutBlock, cout - co0);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t dy = 0; dy < g_.kh; ++dy) {
          V acc[KW][kCoutBlock] = {};
          T rest[KW][kCoutBlock] = {};
          for (std::size_t oh = 0; oh < g_.h; ++oh) {
            const T* row = xp + ci * hp_ * wp_ + (oh + dy) * wp_;
            const T* grow = g + co0 * n + oh * g_.w;
            std::size_t ow = 0;
            if (nc == kCoutBlock) {
              for (; ow + kLanes <= g_.w; ow += kLanes) {
                V gv[kCoutBlock];
#pragma GCC unroll 8
                for (std::size_t c = 0; c < kCoutBlock; ++c) gv[c] = load_simd(grow + c * n + ow);
#pragma GCC unroll 8
                for (std::size_t dx = 0; dx < KW; ++dx) {
                  const V xv = load_simd(row + ow + dx);
#pragma GCC unroll 8
                  for (std::size_t c = 0; c < kCoutBlock; ++c) acc[dx][c] += xv * gv[c];
                }
              }
            }
            for (std::size_t c = 0; c < nc; ++c) {
              for (std::size_t dx = 0; dx < KW; ++dx) {
                for (std::size_t o = ow; o < g_.w; ++o) rest[dx][c] += row[o + dx] * grow[c * n + o];
              }
            }
          }
          for (std::size_t dx = 0; dx < KW; ++dx) {
            for (std::size_t c = 0; c < nc; ++c) {
              T total = rest[dx][c];
              for (std::size_t l = 0; l < kLanes; ++l) total += acc[dx][c][l];
              gk[((dy * KW + dx) * cin + ci) * cout + co0 + c] += total;
            }
          }
        }
      }
    }
  }

  void kernel_grad_generic(const T* xp, std::size_t cin, const T* g, std::size_t cout, T* gk) const {
    const std::size_t n = g_.h * g_.w;
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t dy = 0; dy < g_.kh; ++dy) {
          for (std::size_t dx = 0; dx < g_.kw; ++dx) {
            T total = T(0);
            for (std::size_t oh = 0; oh < g_.h; ++oh) {
              const T* row = xp + ci * hp_ * wp_ + (oh + dy) * wp_ + dx;
              const T* grow = g + co * n + oh * g_.w;
              for (std::size_t ow = 0; ow < g_.w; ++ow) total += row[ow] * grow[ow];
            }
            gk[((dy * g_.kw + dx) * cin + ci) * cout + co] += total;
          }
        }
      }
    }
  }

  ConvGeometry g_;
  std::size_t wp_, hp_;
};

bool use_planar(const ConvGeometry& g) { return g.sh == 1 && g.sw == 1 && !g.pointwise(); }

template <typename T>
std::vector<T> conv_forward(const ConvGeometry& g, const T* x, const T* k, const T* b) {
  std::vector<T> out(g.ho * g.wo * g.cout);
  ConstMapMat<T> kmat(k, static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.cout));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(b, static_cast<Eigen::Index>(g.cout));
  if (g.pointwise()) {
    const auto pixels = static_cast<Eigen::Index>(g.h * g.w);
    MapMat<T> o(out.data(), pixels, static_cast<Eigen::Index>(g.cout));
    o.noalias() = ConstMapMat<T>(x, pixels, static_cast<Eigen::Index>(g.cin)) * kmat;
    o.rowwise() += bias;
    return out;
  }
  if (use_planar(g)) {
    const PlanarConv<T> pc(g);
    const std::vector<T> planar = pc.apply(pc.padded_planes(x, g.cin).data(), g.cin, k, g.cout);
    const std::size_t n = g.h * g.w;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t co = 0; co < g.cout; ++co) out[i * g.cout + co] = planar[co * n + i] + b[co];
    }
    return out;
  }
  const std::size_t chunk = rows_per_chunk(g);
  std::vector<T> col(std::min(chunk, g.ho) * g.wo * g.patch());
  for (std::size_t row0 = 0; row0 < g.ho; row0 += chunk) {
    const std::size_t rows = std::min(chunk, g.ho - row0);
    const auto pixels = static_cast<Eigen::Index>(rows * g.wo);
    im2col(g, x, row0, rows, col.data());
    MapMat<T> o(out.data() + row0 * g.wo * g.cout, pixels, static_cast<Eigen::Index>(g.cout));
    o.noalias() = ConstMapMat<T>(col.data(), pixels, static_cast<Eigen::Index>(g.patch())) * kmat;
    o.rowwise() += bias;
  }
  return out;
}

// Accumulates input, kernel and bias gradients; null pointers are skipped.
template <typename T>
void conv_backward(const ConvGeometry& g, const T* x, const T* k, const T* gout, T* gx, T* gk, T* gb) {
  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto cout = static_cast<Eigen::Index>(g.cout);
  ConstMapMat<T> kmat(k, patch, cout);
  if (gb) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(gb, cout);
    db += ConstMapMat<T>(gout, static_cast<Eigen::Index>(g.ho * g.wo), cout).colwise().sum();
  }
  if (g.pointwise()) {
    const auto pixels = static_cast<Eigen::Index>(g.h * g.w);
    ConstMapMat<T> go(gout, pixels, cout);
    if (gk) MapMat<T>(gk, patch, cout).noalias() += ConstMapMat<T>(x, pixels, patch).transpose() * go;
    if (gx) MapMat<T>(gx, pixels, patch).noalias() += go * kmat.transpose();
    return;
  }
  if (use_planar(g)) {
    const PlanarConv<T> pc(g);
    if (gk) pc.kernel_grad(pc.padded_planes(x, g.cin).data(), g.cin, pc.planes(gout, g.cout).data(), g.cout, gk);
    if (gx) {
      const std::vector<T> planar =
          pc.apply(pc.padded_planes(gout, g.cout).data(), g.cout, pc.flipped_kernel(k).data(), g.cin);
      const std::size_t n = g.h * g.w;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ci = 0; ci < g.cin; ++ci) gx[i * g.cin + ci] += planar[ci * n + i];
      }
    }
    return;
  }
  const std::size_t chunk = rows_per_chunk(g);
  std::vector<T> col(std::min(chunk, g.ho) * g.wo * g.patch());
  for (std::size_t row0 = 0; row0 < g.ho; row0 += chunk) {
    const std::size_t rows = std::min(chunk, g.ho - row0);
    const auto pixels = static_cast<Eigen::Index>(rows * g.wo);
    ConstMapMat<T> go(gout + row0 * g.wo * g.cout, pixels, cout);
    if (gk) {
      im2col(g, x, row0, rows, col.data());
      MapMat<T>(gk, patch, cout).noalias() +=
          ConstMapMat<T>(col.data(), pixels, patch).transpose() * go;
    }
    if (gx) {
      MapMat<T>(col.data(), pixels, patch).noalias() = go * kmat.transpose();
      col2im_add(g, col.data(), row0, rows, gx);
    }
  }
}

}  // namespace

template <typename T>
Var<T> Var<T>::constant(Shape shape, std::vector<T> values) {
  Tensor<T> checked(std::move(shape), std::move(values));
  return Var(new_node<T>(std::move(checked.dims), std::move(checked.values)));
}

template <typename T>
Var<T> Var<T>::parameter(Shape shape, std::vector<T> values) {
  Var v = constant(std::move(shape), std::move(values));
  v.node_->requires_grad = true;
  return v;
}

template <typename T>
T Var<T>::item() const {
  require(size() == 1, ErrorCode::kShapeMismatch, "item() on a non-scalar " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
void backward(const Var<T>& loss) {
  require(loss.valid() && loss.size() == 1, ErrorCode::kShapeMismatch,
          "backward() needs a single-element loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Broadcast p = plan_broadcast(a.shape(), b.shape(), "add");
  std::vector<T> out(element_count(p.out));
  const T* av = a.value().data();
  const T* bv = b.value().data();
  for_each_row(p, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    for (std::size_t j = 0; j < p.row; ++j) out[o + j] = av[ia + j * p.a_step] + bv[ib + j * p.b_step];
  });
  return make_op<T>(p.out, std::move(out), {a, b}, [p](Node<T>& self) {
    Node<T>& na = *self.parents[0];
    Node<T>& nb = *self.parents[1];
    const T* g = self.grad.data();
    T* ga = wants_grad(na) ? na.grad_buffer() : nullptr;
    T* gb = wants_grad(nb) ? nb.grad_buffer() : nullptr;
    for_each_row(p, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) accumulate_row(ga + ia, p.a_step, g + o, p.row);
      if (gb) accumulate_row(gb + ib, p.b_step, g + o, p.row);
    });
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Broadcast p = plan_broadcast(a.shape(), b.shape(), "mul");
  std::vector<T> out(element_count(p.out));
  const T* av = a.value().data();
  const T* bv = b.value().data();
  for_each_row(p, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    for (std::size_t j = 0; j < p.row; ++j) out[o + j] = av[ia + j * p.a_step] * bv[ib + j * p.b_step];
  });
  return make_op<T>(p.out, std::move(out), {a, b}, [p](Node<T>& self) {
    Node<T>& na = *self.parents[0];
    Node<T>& nb = *self.parents[1];
    const T* g = self.grad.data();
    const T* av = na.value.data();
    const T* bv = nb.value.data();
    T* ga = wants_grad(na) ? na.grad_buffer() : nullptr;
    T* gb = wants_grad(nb) ? nb.grad_buffer() : nullptr;
    // d(a*b)/da = b with b's row step, and symmetrically for b.
    auto push = [&](T* dst, std::size_t dst_step, const T* other, std::size_t other_step, std::size_t o) {
      if (dst_step == 1) {
        for (std::size_t j = 0; j < p.row; ++j) dst[j] += g[o + j] * other[j * other_step];
      } else {
        T total = T(0);
        for (std::size_t j = 0; j < p.row; ++j) total += g[o + j] * other[j * other_step];
        *dst += total;
      }
    };
    for_each_row(p, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) push(ga + ia, p.a_step, bv + ib, p.b_step, o);
      if (gb) push(gb + ib, p.b_step, av + ia, p.a_step, o);
    });
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  std::vector<T> out(a.value().begin(), a.value().end());
  for (T& v : out) v *= factor;
  return make_op<T>(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    T* ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  std::vector<T> out(x.value().begin(), x.value().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  return make_op<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (self.value[i] > T(0)) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  std::vector<T> out(x.size());
  const auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    // Branches keep exp() from overflowing for large |v|.
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return make_op<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T y = self.value[i];
      gx[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  require(axis < x.rank(), ErrorCode::kInvalidArgument,
          "softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(x.shape()));
  const AxisSplit s = split_at(x.shape(), axis);
  const auto xv = x.value();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T peak = xv[base];
      for (std::size_t j = 1; j < s.extent; ++j) peak = std::max(peak, xv[base + j * s.inner]);
      // double accumulation keeps float columns summing to 1 over 321 rows
      double total = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const T e = std::exp(xv[base + j * s.inner] - peak);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) {
        out[base + j * s.inner] = static_cast<T>(out[base + j * s.inner] / total);
      }
    }
  }
  return make_op<T>(x.shape(), std::move(out), {x}, [s](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer();
    const T* y = self.value.data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) dot += static_cast<double>(g[base + j * s.inner]) * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t i = base + j * s.inner;
          gx[i] += static_cast<T>(y[i] * (g[i] - dot));
        }
      }
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias,
              std::pair<std::size_t, std::size_t> stride) {
  const ConvGeometry g = conv_geometry(x.shape(), kernel.shape(), bias.shape(), stride.first, stride.second);
  auto out = conv_forward(g, x.value().data(), kernel.value().data(), bias.value().data());
  return make_op<T>({g.ho, g.wo, g.cout}, std::move(out), {x, kernel, bias}, [g](Node<T>& self) {
    Node<T>& nx = *self.parents[0];
    Node<T>& nk = *self.parents[1];
    Node<T>& nb = *self.parents[2];
    conv_backward(g, nx.value.data(), nk.value.data(), self.grad.data(),
                  wants_grad(nx) ? nx.grad_buffer() : nullptr,
                  wants_grad(nk) ? nk.grad_buffer() : nullptr,
                  wants_grad(nb) ? nb.grad_buffer() : nullptr);
  });
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias) {
  check(x.rank() == 2, "conv1d: input must be L x Cin, got " + shape_string(x.shape()));
  check(kernel.rank() == 3, "conv1d: kernel must be K x Cin x Cout, got " + shape_string(kernel.shape()));
  // Run as a 1 x L image so the planar kernel vectorizes along L.
  const Shape xs{1, x.dim(0), x.dim(1)};
  const Shape ks{1, kernel.dim(0), kernel.dim(1), kernel.dim(2)};
  const ConvGeometry g = conv_geometry(xs, ks, bias.shape(), 1, 1);
  auto out = conv_forward(g, x.value().data(), kernel.value().data(), bias.value().data());
  return make_op<T>({g.wo, g.cout}, std::move(out), {x, kernel, bias}, [g](Node<T>& self) {
    Node<T>& nx = *self.parents[0];
    Node<T>& nk = *self.parents[1];
    Node<T>& nb = *self.parents[2];
    conv_backward(g, nx.value.data(), nk.value.data(), self.grad.data(),
                  wants_grad(nx) ? nx.grad_buffer() : nullptr,
                  wants_grad(nk) ? nk.grad_buffer() : nullptr,
                  wants_grad(nb) ? nb.grad_buffer() : nullptr);
  });
}

template <typename T>
Var<T> mean_axis(const Var<T>& x, std::size_t axis) {
  require(axis < x.rank(), ErrorCode::kInvalidArgument, "mean_axis: axis out of range");
  check(x.dim(axis) >= 1, "mean_axis: empty axis");
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<long>(axis));
  const auto xv = x.value();
  std::vector<T> out(s.outer * s.inner, T(0));
  const T inv = T(1) / static_cast<T>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.extent; ++j) {
      const T* src = xv.data() + (o * s.extent + j) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  for (T& v : out) v *= inv;
  return make_op<T>(std::move(shape), std::move(out), {x}, [s, inv](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      const T* g = self.grad.data() + o * s.inner;
      for (std::size_t j = 0; j < s.extent; ++j) {
        T* dst = gx + (o * s.extent + j) * s.inner;
        for (std::size_t in = 0; in < s.inner; ++in) dst[in] += g[in] * inv;
      }
    }
  });
}

template <typename T>
Var<T> row_avg_pool(const Var<T>& s) {
  check(s.rank() == 3, "row_avg_pool: expected F x T x C, got " + shape_string(s.shape()));
  return mean_axis(s, 1);
}

template <typename T>
Var<T> col_avg_pool(const Var<T>& s) {
  check(s.rank() == 3, "col_avg_pool: expected F x T x C, got " + shape_string(s.shape()));
  return mean_axis(s, 0);
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& s) {
  check(s.rank() == 3, "global_avg_pool: expected F x T x C, got " + shape_string(s.shape()));
  return mean_axis(mean_axis(s, 0), 0);
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  check(x.rank() == 1 && w.rank() == 2 && b.rank() == 1, "linear: expected x (N), w (N x M), b (M)");
  check(w.dim(0) == x.dim(0) && w.dim(1) == b.dim(0),
        "linear: shapes " + shape_string(x.shape()) + " " + shape_string(w.shape()) + " " +
            shape_string(b.shape()) + " do not chain");
  const std::size_t n = x.dim(0), m = w.dim(1);
  std::vector<T> out(b.value().begin(), b.value().end());
  const auto xv = x.value();
  const auto wv = w.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j] += xv[i] * wv[i * m + j];
  }
  return make_op<T>({m}, std::move(out), {x, w, b}, [n, m](Node<T>& self) {
    Node<T>& nx = *self.parents[0];
    Node<T>& nw = *self.parents[1];
    Node<T>& nb = *self.parents[2];
    const T* g = self.grad.data();
    if (wants_grad(nx)) {
      T* gx = nx.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gx[i] += nw.value[i * m + j] * g[j];
      }
    }
    if (wants_grad(nw)) {
      T* gw = nw.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gw[i * m + j] += nx.value[i] * g[j];
      }
    }
    if (wants_grad(nb)) {
      T* gb = nb.grad_buffer();
      for (std::size_t j = 0; j < m; ++j) gb[j] += g[j];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  check(element_count(shape) == x.size(),
        "reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  std::vector<T> out(x.value().begin(), x.value().end());
  return make_op<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  check(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), ErrorCode::kInvalidArgument, "concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    check(p.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      check(d == axis || p.dim(d) == first[d],
            "concat: shapes " + shape_string(first) + " and " + shape_string(p.shape()) + " differ off-axis");
    }
    extents.push_back(p.dim(axis));
    shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_at(shape, axis);
  std::vector<T> out(element_count(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].value();
    const std::size_t block = extents[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(v.data() + o * block, block, out.data() + o * s.extent * s.inner + offset * s.inner);
    }
    offset += extents[k];
  }
  return make_op<T>(std::move(shape), std::move(out), parts, [s, extents](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node<T>& p = *self.parents[k];
      const std::size_t block = extents[k] * s.inner;
      if (wants_grad(p)) {
        T* gp = p.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* g = self.grad.data() + o * s.extent * s.inner + offset * s.inner;
          for (std::size_t i = 0; i < block; ++i) gp[o * block + i] += g[i];
        }
      }
      offset += extents[k];
    }
  });
}

template <typename T>
Var<T> select(const Var<T>& x, std::size_t index) {
  check(x.rank() >= 1 && index < x.dim(0), "select: index out of range");
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t block = element_count(shape);
  std::vector<T> out(x.value().begin() + static_cast<long>(index * block),
                     x.value().begin() + static_cast<long>((index + 1) * block));
  return make_op<T>(std::move(shape), std::move(out), {x}, [index, block](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer() + index * block;
    for (std::size_t i = 0; i < block; ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = T(0);
  for (T v : x.value()) total += v;
  return make_op<T>({1}, {total}, {x}, [](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer();
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

template <typename T>
Var<T> bce_loss(const Var<T>& pred, const Var<T>& target) {
  check(pred.shape() == target.shape(),
        "bce_loss: pred " + shape_string(pred.shape()) + " vs target " + shape_string(target.shape()));
  check(pred.size() > 0, "bce_loss: empty input");
  const T eps = static_cast<T>(kBceEpsilon);
  const auto p = pred.value();
  const auto t = target.value();
  const std::size_t n = p.size();
  // Accumulate in double so the f32 loss does not drift with tensor size.
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pc = std::clamp(static_cast<double>(p[i]), kBceEpsilon, 1.0 - kBceEpsilon);
    total -= t[i] * std::log(pc) + (1.0 - t[i]) * std::log(1.0 - pc);
  }
  const T loss = static_cast<T>(total / static_cast<double>(n));
  return make_op<T>({1}, {loss}, {pred, target}, [n, eps](Node<T>& self) {
    Node<T>& np = *self.parents[0];
    if (!wants_grad(np)) return;
    const Node<T>& nt = *self.parents[1];
    T* gp = np.grad_buffer();
    const T scale_factor = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T pv = np.value[i];
      if (pv < eps || pv > T(1) - eps) continue;  // clamped region is flat
      const T tv = nt.value[i];
      gp[i] += scale_factor * (-tv / pv + (T(1) - tv) / (T(1) - pv));
    }
  });
}

template <typename T>
void adam_step(ParamSet<T>& params, AdamState<T>& state, const AdamConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, param] : params) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    const std::size_t n = param.size();
    if (m.empty()) m.assign(n, T(0));
    if (v.empty()) v.assign(n, T(0));
    require(m.size() == n && v.size() == n, ErrorCode::kShapeMismatch,
            "adam_step: optimizer state for " + name + " does not match the parameter shape");
    const auto g = param.grad();
    require(g.empty() || g.size() == n, ErrorCode::kShapeMismatch,
            "adam_step: gradient shape mismatch for " + name);
    auto w = param.mutable_value();
    for (std::size_t i = 0; i < n; ++i) {
      const T gi = g.empty() ? T(0) : g[i];
      m[i] = static_cast<T>(cfg.beta1) * m[i] + static_cast<T>(1.0 - cfg.beta1) * gi;
      v[i] = static_cast<T>(cfg.beta2) * v[i] + static_cast<T>(1.0 - cfg.beta2) * gi * gi;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] = static_cast<T>(w[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
}

#define FTANET_INSTANTIATE(T)                                                                  \
  template struct Tensor<T>;                                                                   \
  template class Var<T>;                                                                       \
  template void backward<T>(const Var<T>&);                                                    \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> scale<T>(const Var<T>&, T);                                                  \
  template Var<T> relu<T>(const Var<T>&);                                                      \
  template Var<T> sigmoid<T>(const Var<T>&);                                                   \
  template Var<T> softmax<T>(const Var<T>&, std::size_t);                                      \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&,                      \
                            std::pair<std::size_t, std::size_t>);                              \
  template Var<T> conv1d<T>(const Var<T>&, const Var<T>&, const Var<T>&);                      \
  template Var<T> mean_axis<T>(const Var<T>&, std::size_t);                                    \
  template Var<T> row_avg_pool<T>(const Var<T>&);                                              \
  template Var<T> col_avg_pool<T>(const Var<T>&);                                              \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                           \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                      \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                            \
  template Var<T> concat<T>(const std::vector<Var<T>>&, std::size_t);                          \
  template Var<T> select<T>(const Var<T>&, std::size_t);                                       \
  template Var<T> sum<T>(const Var<T>&);                                                       \
  template Var<T> bce_loss<T>(const Var<T>&, const Var<T>&);                                   \
  template void adam_step<T>(ParamSet<T>&, AdamState<T>&, const AdamConfig&);

FTANET_INSTANTIATE(float)
FTANET_INSTANTIATE(double)

#undef FTANET_INSTANTIATE

}  // namespace ftanet
