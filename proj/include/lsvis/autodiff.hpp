#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "lsvis/array.hpp"
#include "lsvis/gemm.hpp"
#include "lsvis/rng.hpp"

namespace lsvis::nd {

struct AutodiffError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Reverse-mode tape. Nodes are appended in topological order as the graph is
// built; backward() walks the tape in reverse and accumulates (sums) into
// parent gradients, so reusing a node in several places just works.
template <typename T>
class Tape {
public:
    using Id = int;

    struct Node {
        ArrayT<T> value;
        ArrayT<T> grad;
        bool requires_grad = false;
        std::function<void(Tape&, int)> backward;
    };

    Id push(ArrayT<T> v, bool requires_grad, std::function<void(Tape&, int)> bw = {}) {
        nodes_.push_back(Node{std::move(v), {}, requires_grad, std::move(bw)});
        return static_cast<Id>(nodes_.size() - 1);
    }

    const ArrayT<T>& val(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
    ArrayT<T>& val(Id id) { return nodes_[static_cast<size_t>(id)].value; }
    bool needs_grad(Id id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    // Gradient buffer of a node, or null when the node does not participate.
    ArrayT<T>* grad_if(Id id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        return n.requires_grad ? &n.grad : nullptr;
    }
    const ArrayT<T>& grad(Id id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad) throw AutodiffError("grad requested for non-differentiable node");
        return n.grad;
    }

    void backward(Id root) {
        Node& r = nodes_[static_cast<size_t>(root)];
        if (r.value.size() != 1) throw AutodiffError("backward root must be scalar");
        for (size_t i = 0; i <= static_cast<size_t>(root); ++i) {
            Node& n = nodes_[i];
            if (n.requires_grad) n.grad = ArrayT<T>::zeros(n.value.shape);
        }
        if (!r.requires_grad) return;
        r.grad[0] = T(1);
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.requires_grad && n.backward) n.backward(*this, i);
        }
    }

    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

template <typename T>
int leaf(Tape<T>& t, ArrayT<T> v, bool requires_grad = true) {
    return t.push(std::move(v), requires_grad);
}

template <typename T>
int constant(Tape<T>& t, ArrayT<T> v) {
    return t.push(std::move(v), false);
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
int binary_elementwise(Tape<T>& t, int a, int b, const char* name, Fwd fwd, Bwd bwd) {
    require_same_shape(t.val(a), t.val(b), name);
    const ArrayT<T>&va = t.val(a), &vb = t.val(b);
    ArrayT<T> out(va.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = fwd(va[i], vb[i]);
    bool req = t.needs_grad(a) || t.needs_grad(b);
    if (!req) return t.push(std::move(out), false);
    return t.push(std::move(out), true, [a, b, bwd](Tape<T>& t, int self) {
        const ArrayT<T>& g = t.grad(self);
        ArrayT<T>*ga = t.grad_if(a), *gb = t.grad_if(b);
        const ArrayT<T>&va = t.val(a), &vb = t.val(b);
        for (int64_t i = 0; i < g.size(); ++i) {
            auto [da, db] = bwd(va[i], vb[i]);
            if (ga) (*ga)[i] += g[i] * da;
            if (gb) (*gb)[i] += g[i] * db;
        }
    });
}

template <typename T, typename Fwd, typename Bwd>
int unary_elementwise(Tape<T>& t, int a, Fwd fwd, Bwd bwd) {
    const ArrayT<T>& va = t.val(a);
    ArrayT<T> out(va.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = fwd(va[i]);
    if (!t.needs_grad(a)) return t.push(std::move(out), false);
    return t.push(std::move(out), true, [a, bwd](Tape<T>& t, int self) {
        const ArrayT<T>& g = t.grad(self);
        ArrayT<T>& ga = *t.grad_if(a);
        const ArrayT<T>& va = t.val(a);
        const ArrayT<T>& vo = t.val(self);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd(va[i], vo[i]);
    });
}

template <typename T>
int add(Tape<T>& t, int a, int b) {
    return binary_elementwise(
        t, a, b, "add", [](T x, T y) { return x + y; },
        [](T, T) { return std::pair<T, T>(T(1), T(1)); });
}

template <typename T>
int sub(Tape<T>& t, int a, int b) {
    return binary_elementwise(
        t, a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T) { return std::pair<T, T>(T(1), T(-1)); });
}

template <typename T>
int mul(Tape<T>& t, int a, int b) {
    return binary_elementwise(
        t, a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y) { return std::pair<T, T>(y, x); });
}

template <typename T>
int div(Tape<T>& t, int a, int b) {
    return binary_elementwise(
        t, a, b, "div", [](T x, T y) { return x / y; },
        [](T x, T y) { return std::pair<T, T>(T(1) / y, -x / (y * y)); });
}

// elementwise max; ties route to the first argument
template <typename T>
int maximum(Tape<T>& t, int a, int b) {
    return binary_elementwise(
        t, a, b, "maximum", [](T x, T y) { return x >= y ? x : y; },
        [](T x, T y) {
            return x >= y ? std::pair<T, T>(T(1), T(0)) : std::pair<T, T>(T(0), T(1));
        });
}

template <typename T>
int add_scalar(Tape<T>& t, int a, T c) {
    return unary_elementwise(
        t, a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
int mul_scalar(Tape<T>& t, int a, T c) {
    return unary_elementwise(
        t, a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
int neg(Tape<T>& t, int a) {
    return mul_scalar(t, a, T(-1));
}

template <typename T>
int relu(Tape<T>& t, int a) {
    return unary_elementwise(
        t, a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
int exp_(Tape<T>& t, int a) {
    return unary_elementwise(
        t, a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
int log_(Tape<T>& t, int a) {
    return unary_elementwise(
        t, a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
int square(Tape<T>& t, int a) {
    return unary_elementwise(
        t, a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// sqrt(max(eps, x)): gradient is zero where the clamp is active
template <typename T>
int sqrt_eps(Tape<T>& t, int a, T eps) {
    return unary_elementwise(
        t, a, [eps](T x) { return std::sqrt(x > eps ? x : eps); },
        [eps](T x, T y) { return x > eps ? T(1) / (T(2) * y) : T(0); });
}

// ---------------------------------------------------------------------------
// shape / reduction ops
// ---------------------------------------------------------------------------

template <typename T>
int reshape(Tape<T>& t, int a, Shape shape) {
    if (numel(shape) != t.val(a).size())
        throw ShapeError("reshape: cannot view " + shape_str(t.val(a).shape) + " as " +
                         shape_str(shape));
    ArrayT<T> out(std::move(shape), t.val(a).data);
    if (!t.needs_grad(a)) return t.push(std::move(out), false);
    return t.push(std::move(out), true, [a](Tape<T>& t, int self) {
        const ArrayT<T>& g = t.grad(self);
        ArrayT<T>& ga = *t.grad_if(a);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <typename T>
int sum_all(Tape<T>& t, int a) {
    T s = 0;
    for (T v : t.val(a).data) s += v;
    ArrayT<T> out({1}, {s});
    if (!t.needs_grad(a)) return t.push(std::move(out), false);
    return t.push(std::move(out), true, [a](Tape<T>& t, int self) {
        T g = t.grad(self)[0];
        ArrayT<T>& ga = *t.grad_if(a);
        for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

template <typename T>
int mean_all(Tape<T>& t, int a) {
    return mul_scalar(t, sum_all(t, a), T(1) / static_cast<T>(t.val(a).size()));
}

// row-wise minimum of a [N,K] matrix -> [N]; gradient routes to the argmin
// (first minimum on ties)
template <typename T>
int row_min(Tape<T>& t, int a) {
    const ArrayT<T>& va = t.val(a);
    if (va.shape.size() != 2) throw ShapeError("row_min expects a matrix");
    int64_t n = va.shape[0], k = va.shape[1];
    ArrayT<T> out({n});
    auto argmin = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < k; ++j)
            if (va[i * k + j] < va[i * k + best]) best = j;
        (*argmin)[static_cast<size_t>(i)] = best;
        out[i] = va[i * k + best];
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false);
    return t.push(std::move(out), true, [a, argmin, k](Tape<T>& t, int self) {
        const ArrayT<T>& g = t.grad(self);
        ArrayT<T>& ga = *t.grad_if(a);
        for (int64_t i = 0; i < g.size(); ++i)
            ga[i * k + (*argmin)[static_cast<size_t>(i)]] += g[i];
    });
}

// mean over the spatial dimensions: [B,C,H,W] -> [B,C]
template <typename T>
int spatial_mean(Tape<T>& t, int a) {
    const ArrayT<T>& va = t.val(a);
    if (va.shape.size() != 4) throw ShapeError("spatial_mean expects [B,C,H,W]");
    int64_t b = va.shape[0], c = va.shape[1], hw = va.shape[2] * va.shape[3];
    ArrayT<T> out({b, c});
    for (int64_t i = 0; i < b * c; ++i) {
        T s = 0;
        for (int64_t j = 0; j < hw; ++j) s += va[i * hw + j];
        out[i] = s / static_cast<T>(hw);
    }
    if (!t.needs_grad(a)) return t.push(std::move(out), false);
    return t.push(std::move(out), true, [a, hw](Tape<T>& t, int self) {
        const ArrayT<T>& g = t.grad(self);
        ArrayT<T>& ga = *t.grad_if(a);
        for (int64_t i = 0; i < g.size(); ++i) {
            T gi = g[i] / static_cast<T>(hw);
            for (int64_t j = 0; j < hw; ++j) ga[i * hw + j] += gi;
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename T>
int matmul(Tape<T>& t, int a, int b) {
    const ArrayT<T>&va = t.val(a), &vb = t.val(b);
    if (va.shape.size() != 2 || vb.shape.size() != 2 || va.shape[1] != vb.shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(va.shape) + " x " +
                         shape_str(vb.shape));
    int64_t m = va.shape[0], k = va.shape[1], n = vb.shape[1];
    ArrayT<T> out({m, n});
    gemm(false, false, m, n, k, T(1), va.ptr(), vb.ptr(), T(0), out.ptr());
    bool req = t.needs_grad(a) || t.needs_grad(b);
    if (!req) return t.push(std::move(out), false);
    return t.push(std::move(out), true, [a, b, m, n, k](Tape<T>& t, int self) {
        const ArrayT<T>& g = t.grad(self);
        if (ArrayT<T>* ga = t.grad_if(a))
            gemm(false, true, m, k, n, T(1), g.ptr(), t.val(b).ptr(), T(1), ga->ptr());
        if (ArrayT<T>* gb = t.grad_if(b))
            gemm(true, false, k, n, m, T(1), t.val(a).ptr(), g.ptr(), T(1), gb->ptr());
    });
}

// y[i,j] = x[i,j] + v[j]
template <typename T>
int add_rowvec(Tape<T>& t, int a, int v) {
    const ArrayT<T>&va = t.val(a), &vv = t.val(v);
    if (va.shape.size() != 2 || vv.shape.size() != 1 || va.shape[1] != vv.shape[0])
        throw ShapeError("add_rowvec: incompatible shapes");
    int64_t m = va.shape[0], n = va.shape[1];
    ArrayT<T> out(va.shape);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[i * n + j] = va[i * n + j] + vv[j];
    bool req = t.needs_grad(a) || t.needs_grad(v);
    if (!req) return t.push(std::move(out), false);
    return t.push(std::move(out), true, [a, v, m, n](Tape<T>& t, int self) {
        const ArrayT<T>& g = t.grad(self);
        if (ArrayT<T>* ga = t.grad_if(a))
            for (int64_t i = 0; i < m * n; ++i) (*ga)[i] += g[i];
        if (ArrayT<T>* gv = t.grad_if(v))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) (*gv)[j] += g[i * n + j];
    });
}

// x[B,I] * W[I,O] + b[O]
template <typename T>
int linear(Tape<T>& t, int x, int w, int b) {
    return add_rowvec(t, matmul(t, x, w), b);
}

// ---------------------------------------------------------------------------
// convolutions (3x3 kernels, im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, int64_t batch, int64_t ci, int64_t h, int64_t w, int64_t ho, int64_t wo,
            int64_t stride, int64_t pad, T* col) {
    int64_t cols = batch * ho * wo;
    for (int64_t c = 0; c < ci; ++c)
        for (int64_t kh = 0; kh < 3; ++kh)
            for (int64_t kw = 0; kw < 3; ++kw) {
                T* row = col + ((c * 3 + kh) * 3 + kw) * cols;
                for (int64_t b = 0; b < batch; ++b) {
                    const T* xb = x + (b * ci + c) * h * w;
                    for (int64_t oh = 0; oh < ho; ++oh) {
                        int64_t ih = oh * stride + kh - pad;
                        T* dst = row + (b * ho + oh) * wo;
                        if (ih < 0 || ih >= h) {
                            std::fill(dst, dst + wo, T(0));
                            continue;
                        }
                        const T* src = xb + ih * w;
                        for (int64_t ow = 0; ow < wo; ++ow) {
                            int64_t iw = ow * stride + kw - pad;
                            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
                        }
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, int64_t batch, int64_t ci, int64_t h, int64_t w, int64_t ho,
                int64_t wo, int64_t stride, int64_t pad, T* gx) {
    int64_t cols = batch * ho * wo;
    for (int64_t c = 0; c < ci; ++c)
        for (int64_t kh = 0; kh < 3; ++kh)
            for (int64_t kw = 0; kw < 3; ++kw) {
                const T* row = col + ((c * 3 + kh) * 3 + kw) * cols;
                for (int64_t b = 0; b < batch; ++b) {
                    T* gb = gx + (b * ci + c) * h * w;
                    for (int64_t oh = 0; oh < ho; ++oh) {
                        int64_t ih = oh * stride + kh - pad;
                        if (ih < 0 || ih >= h) continue;
                        const T* src = row + (b * ho + oh) * wo;
                        T* dst = gb + ih * w;
                        for (int64_t ow = 0; ow < wo; ++ow) {
                            int64_t iw = ow * stride + kw - pad;
                            if (iw >= 0 && iw < w) dst[iw] += src[ow];
                        }
                    }
                }
            }
}

// [B,C,H,W] <-> [C, B*H*W] channel-major matrix
template <typename T>
void to_channel_major(const T* x, int64_t batch, int64_t c, int64_t hw, T* m) {
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t ch = 0; ch < c; ++ch)
            std::copy(x + (b * c + ch) * hw, x + (b * c + ch + 1) * hw,
                      m + ch * batch * hw + b * hw);
}

template <typename T>
void from_channel_major_add(const T* m, int64_t batch, int64_t c, int64_t hw, T* x) {
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
            const T* src = m + ch * batch * hw + b * hw;
            T* dst = x + (b * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
}

}  // namespace detail

// x[B,Ci,H,W] (*) kernels[Co,Ci,3,3] + bias[Co], stride in {1,2}, pad 1
template <typename T>
int conv2d(Tape<T>& t, int x, int k, int bias, int64_t stride, int64_t pad = 1) {
    const ArrayT<T>&vx = t.val(x), &vk = t.val(k), &vb = t.val(bias);
    if (vx.shape.size() != 4) throw ShapeError("conv2d: input must be [B,C,H,W]");
    if (vk.shape.size() != 4 || vk.shape[2] != 3 || vk.shape[3] != 3)
        throw ShapeError("conv2d: kernels must be [Co,Ci,3,3]");
    if (stride != 1 && stride != 2) throw AutodiffError("conv2d: stride must be 1 or 2");
    if (pad != 1) throw AutodiffError("conv2d: pad must be 1");
    if (vx.shape[1] != vk.shape[1])
        throw ShapeError("conv2d: input channels " + std::to_string(vx.shape[1]) +
                         " do not match kernel channels " + std::to_string(vk.shape[1]));
    int64_t batch = vx.shape[0], ci = vx.shape[1], h = vx.shape[2], w = vx.shape[3];
    int64_t co = vk.shape[0];
    if (vb.shape != Shape{co}) throw ShapeError("conv2d: bias must be [Co]");
    int64_t ho = (h + 2 * pad - 3) / stride + 1;
    int64_t wo = (w + 2 * pad - 3) / stride + 1;
    int64_t cols = batch * ho * wo;

    std::vector<T> col(static_cast<size_t>(ci * 9 * cols));
    detail::im2col(vx.ptr(), batch, ci, h, w, ho, wo, stride, pad, col.data());
    std::vector<T> om(static_cast<size_t>(co * cols));
    gemm(false, false, co, cols, ci * 9, T(1), vk.ptr(), col.data(), T(0), om.data());

    ArrayT<T> out({batch, co, ho, wo});
    int64_t hw = ho * wo;
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t c = 0; c < co; ++c) {
            const T* src = om.data() + c * cols + b * hw;
            T* dst = out.ptr() + (b * co + c) * hw;
            T bv = vb[c];
            for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] + bv;
        }

    bool req = t.needs_grad(x) || t.needs_grad(k) || t.needs_grad(bias);
    if (!req) return t.push(std::move(out), false);
    return t.push(std::move(out), true,
                  [x, k, bias, batch, ci, co, h, w, ho, wo, stride, pad](Tape<T>& t, int self) {
                      const ArrayT<T>& g = t.grad(self);
                      int64_t cols = batch * ho * wo, hw = ho * wo;
                      std::vector<T> gm(static_cast<size_t>(co * cols));
                      detail::to_channel_major(g.ptr(), batch, co, hw, gm.data());
                      if (ArrayT<T>* gb = t.grad_if(bias))
                          for (int64_t c = 0; c < co; ++c) {
                              T s = 0;
                              const T* row = gm.data() + c * cols;
                              for (int64_t i = 0; i < cols; ++i) s += row[i];
                              (*gb)[c] += s;
                          }
                      if (ArrayT<T>* gk = t.grad_if(k)) {
                          std::vector<T> col(static_cast<size_t>(ci * 9 * cols));
                          detail::im2col(t.val(x).ptr(), batch, ci, h, w, ho, wo, stride, pad,
                                         col.data());
                          gemm(false, true, co, ci * 9, cols, T(1), gm.data(), col.data(), T(1),
                               gk->ptr());
                      }
                      if (ArrayT<T>* gx = t.grad_if(x)) {
                          std::vector<T> gcol(static_cast<size_t>(ci * 9 * cols));
                          gemm(true, false, ci * 9, cols, co, T(1), t.val(k).ptr(), gm.data(),
                               T(0), gcol.data());
                          detail::col2im_add(gcol.data(), batch, ci, h, w, ho, wo, stride, pad,
                                             gx->ptr());
                      }
                  });
}

// x[B,Ci,H,W] transposed-conv with kernels[Ci,Co,3,3] + bias[Co];
// H_out = (H-1)*stride - 2*pad + 3 + out_pad
template <typename T>
int conv2d_transpose(Tape<T>& t, int x, int k, int bias, int64_t stride, int64_t out_pad_h,
                     int64_t out_pad_w, int64_t pad = 1) {
    const ArrayT<T>&vx = t.val(x), &vk = t.val(k), &vb = t.val(bias);
    if (vx.shape.size() != 4) throw ShapeError("conv2d_transpose: input must be [B,C,H,W]");
    if (vk.shape.size() != 4 || vk.shape[2] != 3 || vk.shape[3] != 3)
        throw ShapeError("conv2d_transpose: kernels must be [Ci,Co,3,3]");
    if (vx.shape[1] != vk.shape[0])
        throw ShapeError("conv2d_transpose: input channels " + std::to_string(vx.shape[1]) +
                         " do not match kernel channels " + std::to_string(vk.shape[0]));
    int64_t batch = vx.shape[0], ci = vx.shape[1], h = vx.shape[2], w = vx.shape[3];
    int64_t co = vk.shape[1];
    if (vb.shape != Shape{co}) throw ShapeError("conv2d_transpose: bias must be [Co]");
    int64_t ho = (h - 1) * stride - 2 * pad + 3 + out_pad_h;
    int64_t wo = (w - 1) * stride - 2 * pad + 3 + out_pad_w;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d_transpose: non-positive output size");
    int64_t cols = batch * h * w;

    // col[(co,kh,kw), (b,h,w)] = sum_ci K[ci,co,kh,kw] * x[b,ci,h,w]
    std::vector<T> xm(static_cast<size_t>(ci * cols));
    detail::to_channel_major(vx.ptr(), batch, ci, h * w, xm.data());
    std::vector<T> col(static_cast<size_t>(co * 9 * cols));
    gemm(true, false, co * 9, cols, ci, T(1), vk.ptr(), xm.data(), T(0), col.data());

    ArrayT<T> out({batch, co, ho, wo});
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t c = 0; c < co; ++c) {
            T* ob = out.ptr() + (b * co + c) * ho * wo;
            T bv = vb[c];
            for (int64_t i = 0; i < ho * wo; ++i) ob[i] = bv;
        }
    for (int64_t c = 0; c < co; ++c)
        for (int64_t kh = 0; kh < 3; ++kh)
            for (int64_t kw = 0; kw < 3; ++kw) {
                const T* row = col.data() + ((c * 3 + kh) * 3 + kw) * cols;
                for (int64_t b = 0; b < batch; ++b) {
                    T* ob = out.ptr() + (b * co + c) * ho * wo;
                    for (int64_t ih = 0; ih < h; ++ih) {
                        int64_t oh = ih * stride + kh - pad;
                        if (oh < 0 || oh >= ho) continue;
                        const T* src = row + (b * h + ih) * w;
                        T* dst = ob + oh * wo;
                        for (int64_t iw = 0; iw < w; ++iw) {
                            int64_t ow = iw * stride + kw - pad;
                            if (ow >= 0 && ow < wo) dst[ow] += src[iw];
                        }
                    }
                }
            }

    bool req = t.needs_grad(x) || t.needs_grad(k) || t.needs_grad(bias);
    if (!req) return t.push(std::move(out), false);
    return t.push(
        std::move(out), true,
        [x, k, bias, batch, ci, co, h, w, ho, wo, stride, pad](Tape<T>& t, int self) {
            const ArrayT<T>& g = t.grad(self);
            int64_t cols = batch * h * w;
            if (ArrayT<T>* gb = t.grad_if(bias))
                for (int64_t c = 0; c < co; ++c) {
                    T s = 0;
                    for (int64_t b = 0; b < batch; ++b) {
                        const T* gp = g.ptr() + (b * co + c) * ho * wo;
                        for (int64_t i = 0; i < ho * wo; ++i) s += gp[i];
                    }
                    (*gb)[c] += s;
                }
            // gather grad_out into col layout (adjoint of the forward scatter)
            std::vector<T> gcol(static_cast<size_t>(co * 9 * cols), T(0));
            for (int64_t c = 0; c < co; ++c)
                for (int64_t kh = 0; kh < 3; ++kh)
                    for (int64_t kw = 0; kw < 3; ++kw) {
                        T* row = gcol.data() + ((c * 3 + kh) * 3 + kw) * cols;
                        for (int64_t b = 0; b < batch; ++b) {
                            const T* gb2 = g.ptr() + (b * co + c) * ho * wo;
                            for (int64_t ih = 0; ih < h; ++ih) {
                                int64_t oh = ih * stride + kh - pad;
                                if (oh < 0 || oh >= ho) continue;
                                T* dst = row + (b * h + ih) * w;
                                const T* src = gb2 + oh * wo;
                                for (int64_t iw = 0; iw < w; ++iw) {
                                    int64_t ow = iw * stride + kw - pad;
                                    if (ow >= 0 && ow < wo) dst[iw] = src[ow];
                                }
                            }
                        }
                    }
            if (ArrayT<T>* gk = t.grad_if(k)) {
                std::vector<T> xm(static_cast<size_t>(ci * cols));
                detail::to_channel_major(t.val(x).ptr(), batch, ci, h * w, xm.data());
                gemm(false, true, ci, co * 9, cols, T(1), xm.data(), gcol.data(), T(1),
                     gk->ptr());
            }
            if (ArrayT<T>* gx = t.grad_if(x)) {
                std::vector<T> gxm(static_cast<size_t>(ci * cols));
                gemm(false, false, ci, cols, co * 9, T(1), t.val(k).ptr(), gcol.data(), T(0),
                     gxm.data());
                detail::from_channel_major_add(gxm.data(), batch, ci, h * w, gx->ptr());
            }
        });
}

// ---------------------------------------------------------------------------
// pairwise distances
// ---------------------------------------------------------------------------

// z[N,D] -> D[N,N], Euclidean with eps-stabilized square root so gradients
// stay finite at coincident points. Diagonal is exactly zero.
template <typename T>
int pairwise_distances(Tape<T>& t, int z, T eps = T(1e-12)) {
    const ArrayT<T>& vz = t.val(z);
    if (vz.shape.size() != 2) throw ShapeError("pairwise_distances expects [N,D]");
    int64_t n = vz.shape[0], d = vz.shape[1];
    ArrayT<T> out({n, n});
    std::vector<T> dots(static_cast<size_t>(n * n));
    gemm(false, true, n, n, d, T(1), vz.ptr(), vz.ptr(), T(0), dots.data());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            if (i == j) {
                out[i * n + j] = T(0);
                continue;
            }
            T sq = dots[i * n + i] + dots[j * n + j] - T(2) * dots[i * n + j];
            out[i * n + j] = std::sqrt(sq > eps ? sq : eps);
        }
    if (!t.needs_grad(z)) return t.push(std::move(out), false);
    return t.push(std::move(out), true, [z, n, d, eps](Tape<T>& t, int self) {
        const ArrayT<T>& g = t.grad(self);
        const ArrayT<T>& dist = t.val(self);
        const ArrayT<T>& vz = t.val(z);
        ArrayT<T>& gz = *t.grad_if(z);
        T floor_ = std::sqrt(eps);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) {
                if (i == j) continue;
                T gij = g[i * n + j];
                if (gij == T(0)) continue;
                T dij = dist[i * n + j];
                if (dij <= floor_) continue;  // clamped region: zero gradient
                T c = gij / dij;
                const T *zi = vz.ptr() + i * d, *zj = vz.ptr() + j * d;
                T *gi = gz.ptr() + i * d, *gj = gz.ptr() + j * d;
                for (int64_t k2 = 0; k2 < d; ++k2) {
                    T diff = c * (zi[k2] - zj[k2]);
                    gi[k2] += diff;
                    gj[k2] -= diff;
                }
            }
    });
}

// ---------------------------------------------------------------------------
// dropout and classification head
// ---------------------------------------------------------------------------

// Inverted dropout: scales kept units by 1/(1-p) at train time. Call sites
// skip this op entirely in eval mode.
template <typename T>
int dropout(Tape<T>& t, int a, double p, Rng& rng) {
    if (p <= 0.0) return a;
    const ArrayT<T>& va = t.val(a);
    auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(va.size()));
    T scale = static_cast<T>(1.0 / (1.0 - p));
    for (auto& m : *mask) m = rng.uniform() < p ? T(0) : scale;
    ArrayT<T> out(va.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] * (*mask)[static_cast<size_t>(i)];
    if (!t.needs_grad(a)) return t.push(std::move(out), false);
    return t.push(std::move(out), true, [a, mask](Tape<T>& t, int self) {
        const ArrayT<T>& g = t.grad(self);
        ArrayT<T>& ga = *t.grad_if(a);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[static_cast<size_t>(i)];
    });
}

// mean cross-entropy of logits[B,C] against integer labels
template <typename T>
int log_softmax_nll(Tape<T>& t, int logits, const std::vector<int>& labels) {
    const ArrayT<T>& vl = t.val(logits);
    if (vl.shape.size() != 2 || vl.shape[0] != static_cast<int64_t>(labels.size()))
        throw ShapeError("log_softmax_nll: logits/labels mismatch");
    int64_t b = vl.shape[0], c = vl.shape[1];
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(b * c));
    T loss = 0;
    for (int64_t i = 0; i < b; ++i) {
        const T* row = vl.ptr() + i * c;
        T mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T se = 0;
        for (int64_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
        T lse = mx + std::log(se);
        for (int64_t j = 0; j < c; ++j) (*probs)[static_cast<size_t>(i * c + j)] = std::exp(row[j] - lse);
        loss -= (row[labels[static_cast<size_t>(i)]] - lse);
    }
    ArrayT<T> out({1}, {loss / static_cast<T>(b)});
    if (!t.needs_grad(logits)) return t.push(std::move(out), false);
    auto lab = std::make_shared<std::vector<int>>(labels);
    return t.push(std::move(out), true, [logits, probs, lab, b, c](Tape<T>& t, int self) {
        T g = t.grad(self)[0] / static_cast<T>(b);
        ArrayT<T>& gl = *t.grad_if(logits);
        for (int64_t i = 0; i < b; ++i)
            for (int64_t j = 0; j < c; ++j) {
                T p = (*probs)[static_cast<size_t>(i * c + j)];
                T y = (*lab)[static_cast<size_t>(i)] == j ? T(1) : T(0);
                gl[i * c + j] += g * (p - y);
            }
    });
}

}  // namespace lsvis::nd
