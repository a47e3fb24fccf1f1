#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "swaplab/tensor.hpp"

namespace swaplab {

using ValueId = int;

enum class OpKind {
    Leaf,
    Conv2d,
    Dense,
    Upsample2x,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Add,
    Sub,
    Mul,
    ScalarMul,
    AbsSum,
    SqSum,
    Mean,
    Sqrt,
    ConcatChannels,
    Reshape,
    Clip,
    AffineWarp,
};

const char* op_name(OpKind k);

/// Inverse-map coefficients of a 2-D affine warp: the output pixel (x, y)
/// samples the input at (a*x + b*y + c, d*x + e*y + f), bilinear, with
/// sample coordinates clamped to the image rectangle.
struct WarpCoeffs {
    double a = 1, b = 0, c = 0, d = 0, e = 1, f = 0;
};

/// Recorded computation graph: forward ops record nodes, backward() replays
/// them in reverse for exact reverse-mode gradients. Single-threaded; all
/// reductions accumulate f32 left-to-right so replays are bit-identical.
class Tape {
public:
    ValueId leaf(Tensor t, bool needs_grad = false);

    /// 3x3-or-any-odd-kernel convolution, zero padding (k-1)/2, stride 1 or 2.
    /// w is [KH, KW, Cin, Cout], b is [Cout], x is [N, H, W, C].
    ValueId conv2d(ValueId x, ValueId w, ValueId b, int stride);
    /// x [N, In] * w [In, Out] + b [Out].
    ValueId dense(ValueId x, ValueId w, ValueId b);
    ValueId upsample2x(ValueId x); // nearest neighbor
    ValueId leaky_relu(ValueId x, float slope);
    ValueId tanh_op(ValueId x);
    ValueId sigmoid(ValueId x);
    ValueId add(ValueId a, ValueId b);
    ValueId sub(ValueId a, ValueId b);
    ValueId pointwise_mul(ValueId a, ValueId b);
    ValueId scalar_mul(ValueId x, float s);
    ValueId abs_sum(ValueId x); // sum |x_i|; subgradient sign(0) = 0
    ValueId sq_sum(ValueId x);  // sum x_i^2
    ValueId mean(ValueId x);
    ValueId sqrt_op(ValueId x); // elementwise; d/dx at 0 defined as 0
    ValueId concat_channels(ValueId a, ValueId b);
    ValueId reshape(ValueId x, std::vector<int> new_shape);
    /// Clamp to [lo, hi]; gradient passes only strictly inside the range.
    ValueId clip(ValueId x, float lo, float hi);
    /// Differentiable bilinear warp of [N, H, W, C] or [H, W, C] images.
    ValueId affine_warp(ValueId x, const WarpCoeffs& inv);

    const Tensor& val(ValueId id) const { return nodes_[static_cast<size_t>(id)].out; }
    bool needs_grad(ValueId id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    /// Reverse-mode sweep from a scalar loss. Gradients of every needs_grad
    /// node become readable; nodes the loss does not reach keep zero
    /// gradients (that is the documented contract, not an error).
    void backward(ValueId loss);
    const Tensor& grad(ValueId id) const;

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        OpKind op = OpKind::Leaf;
        int in0 = -1, in1 = -1, in2 = -1;
        Tensor out;
        Tensor grad;
        bool needs_grad = false;
        float attr0 = 0.0f, attr1 = 0.0f; // slope / scalar / clip lo,hi
        int stride = 1;
        WarpCoeffs warp;
        std::vector<int> saved; // reshape: input shape; concat: split point
    };

    ValueId push(Node n);
    Node& node(ValueId id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(ValueId id) const { return nodes_[static_cast<size_t>(id)]; }
    bool any_grad(ValueId a, ValueId b = -1, ValueId c = -1) const;
    void backward_node(int id);

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

} // namespace swaplab
