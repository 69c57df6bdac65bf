// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "crossmatch/common.hpp"

namespace crossmatch::ad {

using Shape = std::vector<long>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (long d : s) n *= static_cast<size_t>(d);
    return n;
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    size_t numel() const { return shape_numel(shape); }

    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
};

// Value-semantics handle to a graph node. Reverse-mode autodiff over dense
// double tensors; ops live in tensor.cpp.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double fill, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    long dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    size_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    std::vector<double>& values() { return node_->val; }
    const std::vector<double>& values() const { return node_->val; }
    std::vector<double>& grad() { node_->ensure_grad(); return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }

    double item() const {
        check_internal(numel() == 1, "item() on non-scalar tensor");
        return node_->val[0];
    }

    Tensor detach() const;

    // Scalar outputs only; zeroes graph grads, seeds with 1, runs reverse topo.
    void backward() const;

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// Elementwise (same shape unless noted).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor relu(const Tensor& a);
// y = a * scale + shift with constant per-element coefficients.
Tensor scale_shift(const Tensor& a, std::vector<double> scale, std::vector<double> shift);

// Structure.
Tensor concat_batch(const std::vector<Tensor>& parts);
Tensor slice_batch(const Tensor& x, long start, long count);
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Conv stack. x:[B,Cin,H,W]  w:[Cout,Cin,kh,kw]  b:[Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor maxpool2x2(const Tensor& x);
Tensor upsample_nearest2x(const Tensor& x);

// Normalization; gamma/beta are [C]. batch_norm always uses current-batch
// statistics (train-mode semantics).
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps = 1e-5);
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Channel-dim softmax family with temperature.
Tensor softmax_channel(const Tensor& x, double temperature = 1.0);
Tensor log_softmax_channel(const Tensor& x, double temperature = 1.0);

// Reductions.
Tensor sum_all(const Tensor& x);
Tensor sum_over_bhw(const Tensor& x);  // [B,C,H,W] -> [C]
Tensor mean_all(const Tensor& x);

}  // namespace crossmatch::ad
