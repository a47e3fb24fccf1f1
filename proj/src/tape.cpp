#include "swaplab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "swaplab/image_kernels.hpp"

namespace swaplab {

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Dense: return "dense";
        case OpKind::Upsample2x: return "upsample2x";
        case OpKind::LeakyRelu: return "leaky_relu";
        case OpKind::Tanh: return "tanh";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "pointwise_mul";
        case OpKind::ScalarMul: return "scalar_mul";
        case OpKind::AbsSum: return "abs_sum";
        case OpKind::SqSum: return "sq_sum";
        case OpKind::Mean: return "mean";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::ConcatChannels: return "concat_channels";
        case OpKind::Reshape: return "reshape";
        case OpKind::Clip: return "clip";
        case OpKind::AffineWarp: return "affine_warp";
    }
    return "?";
}

namespace {

#if defined(__GLIBC__)
#include <malloc.h>
// Training rebuilds the graph every step; without these thresholds glibc
// mmaps/munmaps every multi-MB tensor, costing thousands of page faults
// per step.
const int kMallocTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    return 0;
}();
#endif

// Reused scratch buffers for the conv lowering (hot path).
struct Scratch {
    std::vector<float> col, dcol, wt, bt, ct, pad;
};
Scratch& scratch() {
    thread_local Scratch s;
    return s;
}

float* grab(std::vector<float>& v, size_t n) {
    if (v.size() < n) v.resize(n);
    return v.data();
}

float* grab_zeroed(std::vector<float>& v, size_t n) {
    float* p = grab(v, n);
    std::fill_n(p, n, 0.0f);
    return p;
}

[[noreturn]] void shape_fail(OpKind op, const std::string& detail) {
    throw ShapeError(std::string(op_name(op)) + ": " + detail);
}

void require(bool ok, OpKind op, const std::string& detail) {
    if (!ok) shape_fail(op, detail);
}

// Register-tiled microkernels. Every C element still accumulates its K
// products in ascending k order (rows and columns are independent), so
// results are bit-identical to the naive triple loop. Explicit vector
// types keep the accumulators in registers; GCC's auto-vectorizer spills
// them for narrow tiles.

#if defined(__GNUC__)
#define SWAPLAB_VECTOR_KERNELS 1
typedef float vf16 __attribute__((vector_size(64)));

inline vf16 load16(const float* p) {
    vf16 v;
    __builtin_memcpy(&v, p, sizeof(v));
    return v;
}
inline void store16(float* p, vf16 v) { __builtin_memcpy(p, &v, sizeof(v)); }

// MR rows x (NV * 16) columns, accumulators pinned in registers.
template <int MR, int NV>
inline void gemm_tile(const float* __restrict a, const float* __restrict b, float* __restrict c, int k, int n) {
    vf16 acc[MR][NV];
    for (int r = 0; r < MR; ++r)
        for (int v = 0; v < NV; ++v) acc[r][v] = load16(c + static_cast<size_t>(r) * n + 16 * v);
    for (int p = 0; p < k; ++p) {
        const float* br = b + static_cast<size_t>(p) * n;
        vf16 bv[NV];
        for (int v = 0; v < NV; ++v) bv[v] = load16(br + 16 * v);
        for (int r = 0; r < MR; ++r) {
            const vf16 s = vf16{} + a[static_cast<size_t>(r) * k + p];
            for (int v = 0; v < NV; ++v) acc[r][v] += s * bv[v];
        }
    }
    for (int r = 0; r < MR; ++r)
        for (int v = 0; v < NV; ++v) store16(c + static_cast<size_t>(r) * n + 16 * v, acc[r][v]);
}

template <int NV>
void gemm_strip(const float* a, const float* b, float* c, int m, int k, int n) {
    int i = 0;
    for (; i + 4 <= m; i += 4) gemm_tile<4, NV>(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * n, k, n);
    for (; i < m; ++i) gemm_tile<1, NV>(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * n, k, n);
}
#endif

// C[M,N] += A[M,K] * B[K,N], all row-major.
void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    int j = 0;
#if defined(SWAPLAB_VECTOR_KERNELS)
    for (; j + 32 <= n; j += 32) gemm_strip<2>(a, b + j, c + j, m, k, n);
    for (; j + 16 <= n; j += 16) gemm_strip<1>(a, b + j, c + j, m, k, n);
#endif
    if (j < n) {
        const int rest = n - j;
        for (int i = 0; i < m; ++i) {
            const float* ai = a + static_cast<size_t>(i) * k;
            float* ci = c + static_cast<size_t>(i) * n + j;
            for (int p = 0; p < k; ++p) {
                const float s = ai[p];
                const float* br = b + static_cast<size_t>(p) * n + j;
                for (int q = 0; q < rest; ++q) ci[q] += s * br[q];
            }
        }
    }
}

// dst[K,M] = src[M,K], blocked for cache friendliness.
void transpose_f32(const float* src, float* dst, int m, int k) {
    constexpr int TB = 32;
    for (int i0 = 0; i0 < m; i0 += TB) {
        const int i1 = std::min(m, i0 + TB);
        for (int p0 = 0; p0 < k; p0 += TB) {
            const int p1 = std::min(k, p0 + TB);
            for (int i = i0; i < i1; ++i)
                for (int p = p0; p < p1; ++p)
                    dst[static_cast<size_t>(p) * m + i] = src[static_cast<size_t>(i) * k + p];
        }
    }
}

// C[K,N] += A^T[K,M] * B[M,N] with A given as [M,K], computed as
// (B^T * A)^T so only the small B matrix is transposed and A streams
// through the tiled kernel. Per-element accumulation order stays ascending
// in m.
void gemm_at_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    Scratch& s = scratch();
    float* bt = grab(s.bt, static_cast<size_t>(n) * m);
    transpose_f32(b, bt, m, n);
    float* ct = grab_zeroed(s.ct, static_cast<size_t>(n) * k);
    gemm_acc(bt, a, ct, n, m, k);
    for (int j = 0; j < n; ++j)
        for (int p = 0; p < k; ++p) c[static_cast<size_t>(p) * n + j] += ct[static_cast<size_t>(j) * k + p];
}

struct ConvDims {
    int n, h, w, cin, kh, kw, cout, oh, ow, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    require(x.ndim() == 4, OpKind::Conv2d, "input must be NxHxWxC, got " + x.shape_str());
    require(w.ndim() == 4, OpKind::Conv2d, "kernel must be KHxKWxCinxCout, got " + w.shape_str());
    require(b.ndim() == 1, OpKind::Conv2d, "bias must be 1-D, got " + b.shape_str());
    require(stride == 1 || stride == 2, OpKind::Conv2d, "stride must be 1 or 2");
    ConvDims d;
    d.n = x.dim(0), d.h = x.dim(1), d.w = x.dim(2), d.cin = x.dim(3);
    d.kh = w.dim(0), d.kw = w.dim(1), d.cout = w.dim(3);
    require(d.kh % 2 == 1 && d.kw % 2 == 1, OpKind::Conv2d, "kernel extents must be odd");
    require(w.dim(2) == d.cin, OpKind::Conv2d,
            "kernel expects " + std::to_string(w.dim(2)) + " input channels, input " + x.shape_str() + " has " +
                std::to_string(d.cin));
    require(b.dim(0) == d.cout, OpKind::Conv2d, "bias " + b.shape_str() + " vs " + std::to_string(d.cout) + " filters");
    d.pad = (d.kh - 1) / 2;
    d.oh = (d.h + 2 * d.pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * d.pad - d.kw) / stride + 1;
    return d;
}

// Gathers conv receptive fields into rows of [N*OH*OW, KH*KW*Cin].
// Out-of-image cells are written as zeros, so the buffer needs no
// pre-clearing.
void im2col(const Tensor& x, const ConvDims& d, int stride, float* col) {
    const int krow = d.kw * d.cin;
    const int cols = d.kh * krow;
    const float* src = x.data();
    float* dst = col;
    for (int n = 0; n < d.n; ++n) {
        const float* img = src + static_cast<size_t>(n) * d.h * d.w * d.cin;
        for (int oy = 0; oy < d.oh; ++oy) {
            for (int ox = 0; ox < d.ow; ++ox) {
                float* row = dst;
                dst += cols;
                const int iy0 = oy * stride - d.pad;
                const int ix0 = ox * stride - d.pad;
                for (int ky = 0; ky < d.kh; ++ky) {
                    const int iy = iy0 + ky;
                    float* rr = row + ky * krow;
                    if (iy < 0 || iy >= d.h) {
                        std::memset(rr, 0, sizeof(float) * krow);
                        continue;
                    }
                    const int kx_lo = ix0 < 0 ? -ix0 : 0;
                    const int kx_hi = ix0 + d.kw > d.w ? d.w - ix0 : d.kw;
                    if (kx_lo > 0) std::memset(rr, 0, sizeof(float) * kx_lo * d.cin);
                    if (kx_hi < d.kw) std::memset(rr + kx_hi * d.cin, 0, sizeof(float) * (d.kw - kx_hi) * d.cin);
                    if (kx_lo < kx_hi)
                        std::memcpy(rr + kx_lo * d.cin, img + (static_cast<size_t>(iy) * d.w + ix0 + kx_lo) * d.cin,
                                    static_cast<size_t>(kx_hi - kx_lo) * d.cin * sizeof(float));
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add column gradients back to image positions.
void col2im_acc(const float* col, const ConvDims& d, int stride, Tensor& dx) {
    const int krow = d.kw * d.cin;
    const int cols = d.kh * krow;
    const float* src = col;
    float* out = dx.data();
    for (int n = 0; n < d.n; ++n) {
        float* img = out + static_cast<size_t>(n) * d.h * d.w * d.cin;
        for (int oy = 0; oy < d.oh; ++oy) {
            for (int ox = 0; ox < d.ow; ++ox) {
                const float* row = src;
                src += cols;
                const int iy0 = oy * stride - d.pad;
                const int ix0 = ox * stride - d.pad;
                for (int ky = 0; ky < d.kh; ++ky) {
                    const int iy = iy0 + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < d.kw; ++kx) {
                        const int ix = ix0 + kx;
                        if (ix < 0 || ix >= d.w) continue;
                        float* px = img + (static_cast<size_t>(iy) * d.w + ix) * d.cin;
                        const float* cr = row + ky * krow + kx * d.cin;
                        for (int c = 0; c < d.cin; ++c) px[c] += cr[c];
                    }
                }
            }
        }
    }
}

} // namespace

void warp_bilinear(const float* src, float* dst, int h, int w, int c, const WarpCoeffs& inv) {
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sx = inv.a * x + inv.b * y + inv.c;
            double sy = inv.d * x + inv.e * y + inv.f;
            if (sx < 0) sx = 0;
            if (sx > w - 1) sx = w - 1;
            if (sy < 0) sy = 0;
            if (sy > h - 1) sy = h - 1;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const int x1 = x0 < w - 1 ? x0 + 1 : x0;
            const int y1 = y0 < h - 1 ? y0 + 1 : y0;
            const float fx = static_cast<float>(sx - x0);
            const float fy = static_cast<float>(sy - y0);
            const float w00 = (1.0f - fx) * (1.0f - fy);
            const float w10 = fx * (1.0f - fy);
            const float w01 = (1.0f - fx) * fy;
            const float w11 = fx * fy;
            const float* p00 = src + (static_cast<size_t>(y0) * w + x0) * c;
            const float* p10 = src + (static_cast<size_t>(y0) * w + x1) * c;
            const float* p01 = src + (static_cast<size_t>(y1) * w + x0) * c;
            const float* p11 = src + (static_cast<size_t>(y1) * w + x1) * c;
            float* q = dst + (static_cast<size_t>(y) * w + x) * c;
            for (int k = 0; k < c; ++k) q[k] = w00 * p00[k] + w10 * p10[k] + w01 * p01[k] + w11 * p11[k];
        }
    }
}

void warp_bilinear_grad(const float* dgrad, float* sgrad, int h, int w, int c, const WarpCoeffs& inv) {
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sx = inv.a * x + inv.b * y + inv.c;
            double sy = inv.d * x + inv.e * y + inv.f;
            if (sx < 0) sx = 0;
            if (sx > w - 1) sx = w - 1;
            if (sy < 0) sy = 0;
            if (sy > h - 1) sy = h - 1;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const int x1 = x0 < w - 1 ? x0 + 1 : x0;
            const int y1 = y0 < h - 1 ? y0 + 1 : y0;
            const float fx = static_cast<float>(sx - x0);
            const float fy = static_cast<float>(sy - y0);
            const float w00 = (1.0f - fx) * (1.0f - fy);
            const float w10 = fx * (1.0f - fy);
            const float w01 = (1.0f - fx) * fy;
            const float w11 = fx * fy;
            float* p00 = sgrad + (static_cast<size_t>(y0) * w + x0) * c;
            float* p10 = sgrad + (static_cast<size_t>(y0) * w + x1) * c;
            float* p01 = sgrad + (static_cast<size_t>(y1) * w + x0) * c;
            float* p11 = sgrad + (static_cast<size_t>(y1) * w + x1) * c;
            const float* g = dgrad + (static_cast<size_t>(y) * w + x) * c;
            for (int k = 0; k < c; ++k) {
                p00[k] += w00 * g[k];
                p10[k] += w10 * g[k];
                p01[k] += w01 * g[k];
                p11[k] += w11 * g[k];
            }
        }
    }
}

ValueId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

bool Tape::any_grad(ValueId a, ValueId b, ValueId c) const {
    return (a >= 0 && node(a).needs_grad) || (b >= 0 && node(b).needs_grad) || (c >= 0 && node(c).needs_grad);
}

ValueId Tape::leaf(Tensor t, bool needs_grad) {
    Node n;
    n.op = OpKind::Leaf;
    n.out = std::move(t);
    n.needs_grad = needs_grad;
    return push(std::move(n));
}

ValueId Tape::conv2d(ValueId x, ValueId w, ValueId b, int stride) {
    const Tensor& xt = val(x);
    const Tensor& wt = val(w);
    const Tensor& bt = val(b);
    ConvDims d = conv_dims(xt, wt, bt, stride);

    Node n;
    n.op = OpKind::Conv2d;
    n.in0 = x;
    n.in1 = w;
    n.in2 = b;
    n.stride = stride;
    n.needs_grad = any_grad(x, w, b);
    n.out = Tensor({d.n, d.oh, d.ow, d.cout});

    const int m = d.n * d.oh * d.ow;
    const int k = d.kh * d.kw * d.cin;
    Scratch& s = scratch();
    float* col = grab(s.col, static_cast<size_t>(m) * k);
    im2col(xt, d, stride, col);
    float* out = n.out.data();
    if (d.cout >= 16) {
        for (int i = 0; i < m; ++i)
            std::memcpy(out + static_cast<size_t>(i) * d.cout, bt.data(), sizeof(float) * d.cout);
        gemm_acc(col, wt.data(), out, m, k, d.cout);
    } else {
        // few filters (heads): run the kernel on zero-padded columns so the
        // wide tiles still apply; padded lanes never feed real outputs
        std::vector<float> wpad(static_cast<size_t>(k) * 16, 0.0f);
        for (int p = 0; p < k; ++p)
            std::memcpy(wpad.data() + static_cast<size_t>(p) * 16, wt.data() + static_cast<size_t>(p) * d.cout,
                        sizeof(float) * d.cout);
        float* opad = grab(s.pad, static_cast<size_t>(m) * 16);
        for (int i = 0; i < m; ++i)
            std::memcpy(opad + static_cast<size_t>(i) * 16, bt.data(), sizeof(float) * d.cout);
        gemm_acc(col, wpad.data(), opad, m, k, 16);
        for (int i = 0; i < m; ++i)
            std::memcpy(out + static_cast<size_t>(i) * d.cout, opad + static_cast<size_t>(i) * 16,
                        sizeof(float) * d.cout);
    }
    return push(std::move(n));
}

ValueId Tape::dense(ValueId x, ValueId w, ValueId b) {
    const Tensor& xt = val(x);
    const Tensor& wt = val(w);
    const Tensor& bt = val(b);
    require(xt.ndim() == 2, OpKind::Dense, "input must be NxF, got " + xt.shape_str());
    require(wt.ndim() == 2 && wt.dim(0) == xt.dim(1), OpKind::Dense,
            "weight " + wt.shape_str() + " incompatible with input " + xt.shape_str());
    require(bt.ndim() == 1 && bt.dim(0) == wt.dim(1), OpKind::Dense,
            "bias " + bt.shape_str() + " incompatible with weight " + wt.shape_str());

    Node n;
    n.op = OpKind::Dense;
    n.in0 = x;
    n.in1 = w;
    n.in2 = b;
    n.needs_grad = any_grad(x, w, b);
    const int m = xt.dim(0), k = xt.dim(1), o = wt.dim(1);
    n.out = Tensor({m, o});
    float* out = n.out.data();
    for (int i = 0; i < m; ++i) std::memcpy(out + static_cast<size_t>(i) * o, bt.data(), sizeof(float) * o);
    gemm_acc(xt.data(), wt.data(), out, m, k, o);
    return push(std::move(n));
}

ValueId Tape::upsample2x(ValueId x) {
    const Tensor& xt = val(x);
    require(xt.ndim() == 4, OpKind::Upsample2x, "input must be NxHxWxC, got " + xt.shape_str());
    const int nn = xt.dim(0), h = xt.dim(1), w = xt.dim(2), c = xt.dim(3);
    Node n;
    n.op = OpKind::Upsample2x;
    n.in0 = x;
    n.needs_grad = any_grad(x);
    n.out = Tensor({nn, 2 * h, 2 * w, c});
    const float* src = xt.data();
    float* dst = n.out.data();
    for (int b = 0; b < nn; ++b)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const float* p = src + ((static_cast<size_t>(b) * h + y) * w + xx) * c;
                for (int dy = 0; dy < 2; ++dy) {
                    float* q = dst + ((static_cast<size_t>(b) * 2 * h + 2 * y + dy) * 2 * w + 2 * xx) * c;
                    std::memcpy(q, p, sizeof(float) * c);
                    std::memcpy(q + c, p, sizeof(float) * c);
                }
            }
    return push(std::move(n));
}

ValueId Tape::leaky_relu(ValueId x, float slope) {
    const Tensor& xt = val(x);
    Node n;
    n.op = OpKind::LeakyRelu;
    n.in0 = x;
    n.attr0 = slope;
    n.needs_grad = any_grad(x);
    n.out = Tensor(xt.shape());
    const float* src = xt.data();
    float* dst = n.out.data();
    for (int64_t i = 0; i < xt.numel(); ++i) dst[i] = src[i] > 0.0f ? src[i] : slope * src[i];
    return push(std::move(n));
}

ValueId Tape::tanh_op(ValueId x) {
    const Tensor& xt = val(x);
    Node n;
    n.op = OpKind::Tanh;
    n.in0 = x;
    n.needs_grad = any_grad(x);
    n.out = Tensor(xt.shape());
    for (int64_t i = 0; i < xt.numel(); ++i) n.out[i] = std::tanh(xt[i]);
    return push(std::move(n));
}

ValueId Tape::sigmoid(ValueId x) {
    const Tensor& xt = val(x);
    Node n;
    n.op = OpKind::Sigmoid;
    n.in0 = x;
    n.needs_grad = any_grad(x);
    n.out = Tensor(xt.shape());
    for (int64_t i = 0; i < xt.numel(); ++i) n.out[i] = 1.0f / (1.0f + std::exp(-xt[i]));
    return push(std::move(n));
}

ValueId Tape::add(ValueId a, ValueId b) {
    const Tensor& at = val(a);
    const Tensor& bt = val(b);
    require(at.same_shape(bt), OpKind::Add, at.shape_str() + " vs " + bt.shape_str());
    Node n;
    n.op = OpKind::Add;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = any_grad(a, b);
    n.out = Tensor(at.shape());
    for (int64_t i = 0; i < at.numel(); ++i) n.out[i] = at[i] + bt[i];
    return push(std::move(n));
}

ValueId Tape::sub(ValueId a, ValueId b) {
    const Tensor& at = val(a);
    const Tensor& bt = val(b);
    require(at.same_shape(bt), OpKind::Sub, at.shape_str() + " vs " + bt.shape_str());
    Node n;
    n.op = OpKind::Sub;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = any_grad(a, b);
    n.out = Tensor(at.shape());
    for (int64_t i = 0; i < at.numel(); ++i) n.out[i] = at[i] - bt[i];
    return push(std::move(n));
}

ValueId Tape::pointwise_mul(ValueId a, ValueId b) {
    const Tensor& at = val(a);
    const Tensor& bt = val(b);
    require(at.same_shape(bt), OpKind::Mul, at.shape_str() + " vs " + bt.shape_str());
    Node n;
    n.op = OpKind::Mul;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = any_grad(a, b);
    n.out = Tensor(at.shape());
    for (int64_t i = 0; i < at.numel(); ++i) n.out[i] = at[i] * bt[i];
    return push(std::move(n));
}

ValueId Tape::scalar_mul(ValueId x, float s) {
    const Tensor& xt = val(x);
    Node n;
    n.op = OpKind::ScalarMul;
    n.in0 = x;
    n.attr0 = s;
    n.needs_grad = any_grad(x);
    n.out = Tensor(xt.shape());
    for (int64_t i = 0; i < xt.numel(); ++i) n.out[i] = s * xt[i];
    return push(std::move(n));
}

ValueId Tape::abs_sum(ValueId x) {
    const Tensor& xt = val(x);
    Node n;
    n.op = OpKind::AbsSum;
    n.in0 = x;
    n.needs_grad = any_grad(x);
    float acc = 0.0f;
    for (int64_t i = 0; i < xt.numel(); ++i) acc += std::fabs(xt[i]);
    n.out = Tensor::scalar(acc);
    return push(std::move(n));
}

ValueId Tape::sq_sum(ValueId x) {
    const Tensor& xt = val(x);
    Node n;
    n.op = OpKind::SqSum;
    n.in0 = x;
    n.needs_grad = any_grad(x);
    float acc = 0.0f;
    for (int64_t i = 0; i < xt.numel(); ++i) acc += xt[i] * xt[i];
    n.out = Tensor::scalar(acc);
    return push(std::move(n));
}

ValueId Tape::mean(ValueId x) {
    const Tensor& xt = val(x);
    Node n;
    n.op = OpKind::Mean;
    n.in0 = x;
    n.needs_grad = any_grad(x);
    float acc = 0.0f;
    for (int64_t i = 0; i < xt.numel(); ++i) acc += xt[i];
    n.out = Tensor::scalar(acc / static_cast<float>(xt.numel()));
    return push(std::move(n));
}

ValueId Tape::sqrt_op(ValueId x) {
    const Tensor& xt = val(x);
    Node n;
    n.op = OpKind::Sqrt;
    n.in0 = x;
    n.needs_grad = any_grad(x);
    n.out = Tensor(xt.shape());
    for (int64_t i = 0; i < xt.numel(); ++i) {
        require(xt[i] >= 0.0f, OpKind::Sqrt, "negative input");
        n.out[i] = std::sqrt(xt[i]);
    }
    return push(std::move(n));
}

ValueId Tape::concat_channels(ValueId a, ValueId b) {
    const Tensor& at = val(a);
    const Tensor& bt = val(b);
    require(at.ndim() == 4 && bt.ndim() == 4, OpKind::ConcatChannels,
            "inputs must be NxHxWxC, got " + at.shape_str() + " and " + bt.shape_str());
    require(at.dim(0) == bt.dim(0) && at.dim(1) == bt.dim(1) && at.dim(2) == bt.dim(2), OpKind::ConcatChannels,
            at.shape_str() + " vs " + bt.shape_str());
    const int nn = at.dim(0), h = at.dim(1), w = at.dim(2), ca = at.dim(3), cb = bt.dim(3);
    Node n;
    n.op = OpKind::ConcatChannels;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = any_grad(a, b);
    n.saved = {ca, cb};
    n.out = Tensor({nn, h, w, ca + cb});
    const int64_t px = static_cast<int64_t>(nn) * h * w;
    for (int64_t i = 0; i < px; ++i) {
        std::memcpy(n.out.data() + i * (ca + cb), at.data() + i * ca, sizeof(float) * ca);
        std::memcpy(n.out.data() + i * (ca + cb) + ca, bt.data() + i * cb, sizeof(float) * cb);
    }
    return push(std::move(n));
}

ValueId Tape::reshape(ValueId x, std::vector<int> new_shape) {
    const Tensor& xt = val(x);
    require(shape_numel(new_shape) == xt.numel(), OpKind::Reshape,
            xt.shape_str() + " cannot reshape to " + shape_to_string(new_shape));
    Node n;
    n.op = OpKind::Reshape;
    n.in0 = x;
    n.needs_grad = any_grad(x);
    n.saved = xt.shape();
    n.out = Tensor(std::move(new_shape), xt.storage());
    return push(std::move(n));
}

ValueId Tape::clip(ValueId x, float lo, float hi) {
    require(lo <= hi, OpKind::Clip, "lo > hi");
    const Tensor& xt = val(x);
    Node n;
    n.op = OpKind::Clip;
    n.in0 = x;
    n.attr0 = lo;
    n.attr1 = hi;
    n.needs_grad = any_grad(x);
    n.out = Tensor(xt.shape());
    for (int64_t i = 0; i < xt.numel(); ++i) n.out[i] = xt[i] < lo ? lo : (xt[i] > hi ? hi : xt[i]);
    return push(std::move(n));
}

ValueId Tape::affine_warp(ValueId x, const WarpCoeffs& inv) {
    const Tensor& xt = val(x);
    require(xt.ndim() == 3 || xt.ndim() == 4, OpKind::AffineWarp, "input must be HxWxC or NxHxWxC, got " + xt.shape_str());
    const bool batched = xt.ndim() == 4;
    const int nn = batched ? xt.dim(0) : 1;
    const int h = xt.dim(batched ? 1 : 0), w = xt.dim(batched ? 2 : 1), c = xt.dim(batched ? 3 : 2);
    Node n;
    n.op = OpKind::AffineWarp;
    n.in0 = x;
    n.warp = inv;
    n.needs_grad = any_grad(x);
    n.out = Tensor(xt.shape());
    const int64_t plane = static_cast<int64_t>(h) * w * c;
    for (int b = 0; b < nn; ++b) warp_bilinear(xt.data() + b * plane, n.out.data() + b * plane, h, w, c, inv);
    return push(std::move(n));
}

const Tensor& Tape::grad(ValueId id) const {
    const Node& n = node(id);
    if (!ran_backward_) throw std::logic_error("tape: grad() before backward()");
    if (!n.needs_grad) throw std::logic_error("tape: grad() on a node created with needs_grad=false");
    return n.grad;
}

void Tape::backward(ValueId loss) {
    Node& ln = node(loss);
    if (!ln.out.is_scalar())
        throw ShapeError("gradient: loss must be scalar, got " + ln.out.shape_str());
    for (Node& n : nodes_)
        if (n.needs_grad) n.grad = Tensor(n.out.shape());
    ran_backward_ = true;
    if (!ln.needs_grad) return; // nothing trainable reaches the loss
    ln.grad[0] = 1.0f;
    for (int id = loss; id >= 0; --id)
        if (nodes_[static_cast<size_t>(id)].needs_grad && nodes_[static_cast<size_t>(id)].op != OpKind::Leaf)
            backward_node(id);
}

void Tape::backward_node(int id) {
    Node& n = node(id);
    const Tensor& g = n.grad;
    auto in_grad = [&](int in) -> Tensor* {
        if (in < 0) return nullptr;
        Node& m = node(in);
        return m.needs_grad ? &m.grad : nullptr;
    };
    Tensor* g0 = in_grad(n.in0);
    Tensor* g1 = in_grad(n.in1);
    Tensor* g2 = in_grad(n.in2);

    switch (n.op) {
        case OpKind::Leaf:
            break;
        case OpKind::Conv2d: {
            const Tensor& xt = val(n.in0);
            const Tensor& wt = val(n.in1);
            const Tensor& bt = val(n.in2);
            ConvDims d = conv_dims(xt, wt, bt, n.stride);
            const int m = d.n * d.oh * d.ow;
            const int k = d.kh * d.kw * d.cin;
            Scratch& s = scratch();
            if (g1) {
                float* col = grab(s.col, static_cast<size_t>(m) * k);
                im2col(xt, d, n.stride, col);
                if (d.cout >= 16) {
                    gemm_at_acc(col, g.data(), g1->data(), m, k, d.cout);
                } else {
                    float* gpad = grab_zeroed(s.pad, static_cast<size_t>(m) * 16);
                    for (int i = 0; i < m; ++i)
                        std::memcpy(gpad + static_cast<size_t>(i) * 16, g.data() + static_cast<size_t>(i) * d.cout,
                                    sizeof(float) * d.cout);
                    std::vector<float> dwpad(static_cast<size_t>(k) * 16, 0.0f);
                    gemm_at_acc(col, gpad, dwpad.data(), m, k, 16);
                    float* dw = g1->data();
                    for (int p = 0; p < k; ++p)
                        for (int j = 0; j < d.cout; ++j)
                            dw[static_cast<size_t>(p) * d.cout + j] += dwpad[static_cast<size_t>(p) * 16 + j];
                }
            }
            if (g2) {
                float* db = g2->data();
                const float* gr = g.data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < d.cout; ++j) db[j] += gr[static_cast<size_t>(i) * d.cout + j];
            }
            if (g0) {
                // dcol = g * W^T; transpose W once so the inner loop is contiguous
                float* wt_t = grab(s.wt, static_cast<size_t>(d.cout) * k);
                const float* wp = wt.data();
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < d.cout; ++j)
                        wt_t[static_cast<size_t>(j) * k + p] = wp[static_cast<size_t>(p) * d.cout + j];
                float* dcol = grab_zeroed(s.dcol, static_cast<size_t>(m) * k);
                gemm_acc(g.data(), wt_t, dcol, m, d.cout, k);
                col2im_acc(dcol, d, n.stride, *g0);
            }
            break;
        }
        case OpKind::Dense: {
            const Tensor& xt = val(n.in0);
            const Tensor& wt = val(n.in1);
            const int m = xt.dim(0), k = xt.dim(1), o = wt.dim(1);
            if (g1) gemm_at_acc(xt.data(), g.data(), g1->data(), m, k, o);
            if (g2) {
                float* db = g2->data();
                const float* gr = g.data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < o; ++j) db[j] += gr[static_cast<size_t>(i) * o + j];
            }
            if (g0) {
                std::vector<float> wt_t(static_cast<size_t>(o) * k);
                const float* wp = wt.data();
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < o; ++j) wt_t[static_cast<size_t>(j) * k + p] = wp[static_cast<size_t>(p) * o + j];
                gemm_acc(g.data(), wt_t.data(), g0->data(), m, o, k);
            }
            break;
        }
        case OpKind::Upsample2x: {
            if (!g0) break;
            const Tensor& xt = val(n.in0);
            const int nn = xt.dim(0), h = xt.dim(1), w = xt.dim(2), c = xt.dim(3);
            const float* gr = g.data();
            float* dx = g0->data();
            for (int b = 0; b < nn; ++b)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        float* p = dx + ((static_cast<size_t>(b) * h + y) * w + xx) * c;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dxx = 0; dxx < 2; ++dxx) {
                                const float* q =
                                    gr + ((static_cast<size_t>(b) * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dxx) * c;
                                for (int ch = 0; ch < c; ++ch) p[ch] += q[ch];
                            }
                    }
            break;
        }
        case OpKind::LeakyRelu: {
            if (!g0) break;
            const Tensor& xt = val(n.in0);
            for (int64_t i = 0; i < xt.numel(); ++i) (*g0)[i] += xt[i] > 0.0f ? g[i] : n.attr0 * g[i];
            break;
        }
        case OpKind::Tanh: {
            if (!g0) break;
            for (int64_t i = 0; i < n.out.numel(); ++i) (*g0)[i] += (1.0f - n.out[i] * n.out[i]) * g[i];
            break;
        }
        case OpKind::Sigmoid: {
            if (!g0) break;
            for (int64_t i = 0; i < n.out.numel(); ++i) (*g0)[i] += n.out[i] * (1.0f - n.out[i]) * g[i];
            break;
        }
        case OpKind::Add: {
            if (g0)
                for (int64_t i = 0; i < g.numel(); ++i) (*g0)[i] += g[i];
            if (g1)
                for (int64_t i = 0; i < g.numel(); ++i) (*g1)[i] += g[i];
            break;
        }
        case OpKind::Sub: {
            if (g0)
                for (int64_t i = 0; i < g.numel(); ++i) (*g0)[i] += g[i];
            if (g1)
                for (int64_t i = 0; i < g.numel(); ++i) (*g1)[i] -= g[i];
            break;
        }
        case OpKind::Mul: {
            const Tensor& at = val(n.in0);
            const Tensor& bt = val(n.in1);
            if (g0)
                for (int64_t i = 0; i < g.numel(); ++i) (*g0)[i] += bt[i] * g[i];
            if (g1)
                for (int64_t i = 0; i < g.numel(); ++i) (*g1)[i] += at[i] * g[i];
            break;
        }
        case OpKind::ScalarMul: {
            if (!g0) break;
            for (int64_t i = 0; i < g.numel(); ++i) (*g0)[i] += n.attr0 * g[i];
            break;
        }
        case OpKind::AbsSum: {
            if (!g0) break;
            const Tensor& xt = val(n.in0);
            const float gs = g[0];
            for (int64_t i = 0; i < xt.numel(); ++i) {
                // subgradient convention: sign(0) = 0
                const float s = xt[i] > 0.0f ? 1.0f : (xt[i] < 0.0f ? -1.0f : 0.0f);
                (*g0)[i] += gs * s;
            }
            break;
        }
        case OpKind::SqSum: {
            if (!g0) break;
            const Tensor& xt = val(n.in0);
            const float gs = g[0];
            for (int64_t i = 0; i < xt.numel(); ++i) (*g0)[i] += gs * 2.0f * xt[i];
            break;
        }
        case OpKind::Mean: {
            if (!g0) break;
            const float gs = g[0] / static_cast<float>(g0->numel());
            for (int64_t i = 0; i < g0->numel(); ++i) (*g0)[i] += gs;
            break;
        }
        case OpKind::Sqrt: {
            if (!g0) break;
            for (int64_t i = 0; i < n.out.numel(); ++i)
                if (n.out[i] > 0.0f) (*g0)[i] += 0.5f / n.out[i] * g[i];
            break;
        }
        case OpKind::ConcatChannels: {
            const int ca = n.saved[0], cb = n.saved[1];
            const int64_t px = g.numel() / (ca + cb);
            if (g0)
                for (int64_t i = 0; i < px; ++i)
                    for (int ch = 0; ch < ca; ++ch) (*g0)[i * ca + ch] += g[i * (ca + cb) + ch];
            if (g1)
                for (int64_t i = 0; i < px; ++i)
                    for (int ch = 0; ch < cb; ++ch) (*g1)[i * cb + ch] += g[i * (ca + cb) + ca + ch];
            break;
        }
        case OpKind::Reshape: {
            if (!g0) break;
            for (int64_t i = 0; i < g.numel(); ++i) (*g0)[i] += g[i];
            break;
        }
        case OpKind::Clip: {
            if (!g0) break;
            const Tensor& xt = val(n.in0);
            for (int64_t i = 0; i < xt.numel(); ++i)
                if (xt[i] > n.attr0 && xt[i] < n.attr1) (*g0)[i] += g[i];
            break;
        }
        case OpKind::AffineWarp: {
            if (!g0) break;
            const Tensor& xt = val(n.in0);
            const bool batched = xt.ndim() == 4;
            const int nn = batched ? xt.dim(0) : 1;
            const int h = xt.dim(batched ? 1 : 0), w = xt.dim(batched ? 2 : 1), c = xt.dim(batched ? 3 : 2);
            const int64_t plane = static_cast<int64_t>(h) * w * c;
            for (int b = 0; b < nn; ++b)
                warp_bilinear_grad(g.data() + b * plane, g0->data() + b * plane, h, w, c, n.warp);
            break;
        }
    }
}

} // namespace swaplab
