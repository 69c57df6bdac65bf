// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace crossmatch::ad {

namespace {

// GEMM results must be bit-reproducible across runs and machines with the
// same binary; multi-threaded OpenBLAS reduction order is not.
const int force_single_thread = [] {
    openblas_set_num_threads(1);
    return 1;
}();

NodePtr make_node(Shape shape, std::vector<double> val, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = std::move(val);
    n->requires_grad = requires_grad;
    return n;
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
    for (auto* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check_internal(a.shape() == b.shape(), std::string(op) + ": shape mismatch");
}

struct Dims4 {
    long b, c, h, w;
};

Dims4 dims4(const Tensor& x, const char* op) {
    check_internal(x.shape().size() == 4, std::string(op) + ": expected 4-d tensor");
    return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(make_node(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad));
}

Tensor Tensor::full(const Shape& shape, double fill, bool requires_grad) {
    return Tensor(make_node(shape, std::vector<double>(shape_numel(shape), fill), requires_grad));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
    check_internal(data.size() == shape_numel(shape), "from_data: size mismatch");
    return Tensor(make_node(shape, std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v) { return from_data({}, {v}, false); }

Tensor Tensor::detach() const {
    return Tensor(make_node(node_->shape, node_->val, false));
}

void Tensor::backward() const {
    check_internal(numel() == 1, "backward() requires a scalar output");
    // Iterative post-order DFS for a deterministic topological order.
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : topo) {
        n->grad.assign(n->val.size(), 0.0);
    }
    node_->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    auto n = make_node(a.shape(), std::move(out), any_grad({&a, &b}));
    if (n->requires_grad) {
        n->parents = {a.node(), b.node()};
        NodePtr pa = a.node(), pb = b.node();
        n->backward_fn = [pa, pb](Node& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
            }
        };
    }
    return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    auto n = make_node(a.shape(), std::move(out), any_grad({&a, &b}));
    if (n->requires_grad) {
        n->parents = {a.node(), b.node()};
        NodePtr pa = a.node(), pb = b.node();
        n->backward_fn = [pa, pb](Node& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        };
    }
    return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    auto n = make_node(a.shape(), std::move(out), any_grad({&a, &b}));
    if (n->requires_grad) {
        n->parents = {a.node(), b.node()};
        NodePtr pa = a.node(), pb = b.node();
        n->backward_fn = [pa, pb](Node& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->val[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->val[i];
            }
        };
    }
    return Tensor(n);
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
    auto n = make_node(a.shape(), std::move(out), any_grad({&a, &b}));
    if (n->requires_grad) {
        n->parents = {a.node(), b.node()};
        NodePtr pa = a.node(), pb = b.node();
        n->backward_fn = [pa, pb](Node& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] / pb->val[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    pb->grad[i] -= self.grad[i] * pa->val[i] / (pb->val[i] * pb->val[i]);
            }
        };
    }
    return Tensor(n);
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + s;
    auto n = make_node(a.shape(), std::move(out), a.requires_grad());
    if (n->requires_grad) {
        n->parents = {a.node()};
        NodePtr pa = a.node();
        n->backward_fn = [pa](Node& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        };
    }
    return Tensor(n);
}

Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
    auto n = make_node(a.shape(), std::move(out), a.requires_grad());
    if (n->requires_grad) {
        n->parents = {a.node()};
        NodePtr pa = a.node();
        n->backward_fn = [pa, s](Node& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * s;
        };
    }
    return Tensor(n);
}

Tensor exp_t(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
    auto n = make_node(a.shape(), std::move(out), a.requires_grad());
    if (n->requires_grad) {
        n->parents = {a.node()};
        NodePtr pa = a.node();
        n->backward_fn = [pa](Node& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * self.val[i];
        };
    }
    return Tensor(n);
}

Tensor log_t(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.values()[i]);
    auto n = make_node(a.shape(), std::move(out), a.requires_grad());
    if (n->requires_grad) {
        n->parents = {a.node()};
        NodePtr pa = a.node();
        n->backward_fn = [pa](Node& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] / pa->val[i];
        };
    }
    return Tensor(n);
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
    auto n = make_node(a.shape(), std::move(out), a.requires_grad());
    if (n->requires_grad) {
        n->parents = {a.node()};
        NodePtr pa = a.node();
        n->backward_fn = [pa](Node& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (pa->val[i] > 0.0) pa->grad[i] += self.grad[i];
        };
    }
    return Tensor(n);
}

Tensor scale_shift(const Tensor& a, std::vector<double> scale, std::vector<double> shift) {
    check_internal(scale.size() == a.numel() && shift.size() == a.numel(), "scale_shift: size mismatch");
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * scale[i] + shift[i];
    auto n = make_node(a.shape(), std::move(out), a.requires_grad());
    if (n->requires_grad) {
        n->parents = {a.node()};
        NodePtr pa = a.node();
        auto sc = std::make_shared<std::vector<double>>(std::move(scale));
        n->backward_fn = [pa, sc](Node& self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * (*sc)[i];
        };
    }
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

Tensor concat_batch(const std::vector<Tensor>& parts) {
    check_internal(!parts.empty(), "concat_batch: empty input");
    Shape s = parts[0].shape();
    check_internal(s.size() == 4, "concat_batch: expected 4-d tensors");
    long total_b = 0;
    bool rg = false;
    for (const auto& p : parts) {
        check_internal(p.shape().size() == 4, "concat_batch: expected 4-d tensors");
        for (int d = 1; d < 4; ++d) check_internal(p.dim(d) == s[static_cast<size_t>(d)], "concat_batch: shape mismatch");
        total_b += p.dim(0);
        rg = rg || p.requires_grad();
    }
    Shape out_shape = {total_b, s[1], s[2], s[3]};
    std::vector<double> out;
    out.reserve(shape_numel(out_shape));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    auto n = make_node(out_shape, std::move(out), rg);
    if (rg) {
        std::vector<NodePtr> ps;
        for (const auto& p : parts) ps.push_back(p.node());
        n->parents = ps;
        n->backward_fn = [ps](Node& self) {
            size_t off = 0;
            for (const auto& p : ps) {
                const size_t cnt = p->val.size();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < cnt; ++i) p->grad[i] += self.grad[off + i];
                }
                off += cnt;
            }
        };
    }
    return Tensor(n);
}

Tensor slice_batch(const Tensor& x, long start, long count) {
    auto d = dims4(x, "slice_batch");
    check_internal(start >= 0 && count >= 0 && start + count <= d.b, "slice_batch: range out of bounds");
    const size_t stride = static_cast<size_t>(d.c) * d.h * d.w;
    std::vector<double> out(x.values().begin() + start * stride,
                            x.values().begin() + (start + count) * stride);
    auto n = make_node({count, d.c, d.h, d.w}, std::move(out), x.requires_grad());
    if (n->requires_grad) {
        n->parents = {x.node()};
        NodePtr px = x.node();
        const size_t off = static_cast<size_t>(start) * stride;
        n->backward_fn = [px, off](Node& self) {
            px->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) px->grad[off + i] += self.grad[i];
        };
    }
    return Tensor(n);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    auto da = dims4(a, "concat_channels");
    auto db = dims4(b, "concat_channels");
    check_internal(da.b == db.b && da.h == db.h && da.w == db.w, "concat_channels: shape mismatch");
    Shape out_shape = {da.b, da.c + db.c, da.h, da.w};
    std::vector<double> out(shape_numel(out_shape));
    const size_t hw = static_cast<size_t>(da.h) * da.w;
    const size_t sa = static_cast<size_t>(da.c) * hw, sb = static_cast<size_t>(db.c) * hw;
    for (long i = 0; i < da.b; ++i) {
        std::copy_n(a.values().data() + i * sa, sa, out.data() + i * (sa + sb));
        std::copy_n(b.values().data() + i * sb, sb, out.data() + i * (sa + sb) + sa);
    }
    auto n = make_node(out_shape, std::move(out), any_grad({&a, &b}));
    if (n->requires_grad) {
        n->parents = {a.node(), b.node()};
        NodePtr pa = a.node(), pb = b.node();
        n->backward_fn = [pa, pb, da, sa, sb](Node& self) {
            if (pa->requires_grad) pa->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            for (long i = 0; i < da.b; ++i) {
                const double* g = self.grad.data() + i * (sa + sb);
                if (pa->requires_grad)
                    for (size_t k = 0; k < sa; ++k) pa->grad[i * sa + k] += g[k];
                if (pb->requires_grad)
                    for (size_t k = 0; k < sb; ++k) pb->grad[i * sb + k] += g[sa + k];
            }
        };
    }
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// Convolution (per-sample im2col + GEMM). Per-sample accumulation keeps the
// arithmetic identical whether samples are processed alone or stacked in a
// batch, which the stacked/naive equivalence checks rely on.
// ---------------------------------------------------------------------------

namespace {

void im2col(const double* x, long C, long H, long W, int kh, int kw, int stride, int pad,
            long oh, long ow, double* col) {
    for (long c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* dst = col + ((c * kh + ky) * kw + kx) * oh * ow;
                for (long y = 0; y < oh; ++y) {
                    const long iy = y * stride + ky - pad;
                    if (iy < 0 || iy >= H) {
                        std::fill_n(dst + y * ow, ow, 0.0);
                        continue;
                    }
                    const double* src = x + (c * H + iy) * W;
                    for (long xo = 0; xo < ow; ++xo) {
                        const long ix = xo * stride + kx - pad;
                        dst[y * ow + xo] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accum(const double* col, long C, long H, long W, int kh, int kw, int stride, int pad,
                  long oh, long ow, double* dx) {
    for (long c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const double* src = col + ((c * kh + ky) * kw + kx) * oh * ow;
                for (long y = 0; y < oh; ++y) {
                    const long iy = y * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    double* dst = dx + (c * H + iy) * W;
                    for (long xo = 0; xo < ow; ++xo) {
                        const long ix = xo * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[y * ow + xo];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    auto d = dims4(x, "conv2d");
    check_internal(w.shape().size() == 4, "conv2d: weight must be 4-d");
    const long cout = w.dim(0), cin = w.dim(1);
    const int kh = static_cast<int>(w.dim(2)), kw = static_cast<int>(w.dim(3));
    check_internal(cin == d.c, "conv2d: channel mismatch");
    check_internal(b.shape().size() == 1 && b.dim(0) == cout, "conv2d: bias shape");
    const long oh = (d.h + 2 * pad - kh) / stride + 1;
    const long ow = (d.w + 2 * pad - kw) / stride + 1;
    check_internal(oh > 0 && ow > 0, "conv2d: empty output");

    const long K = cin * kh * kw;
    const long N = oh * ow;
    std::vector<double> out(static_cast<size_t>(d.b) * cout * N);
    std::vector<double> col(static_cast<size_t>(K) * N);
    for (long i = 0; i < d.b; ++i) {
        const double* xi = x.values().data() + i * d.c * d.h * d.w;
        im2col(xi, d.c, d.h, d.w, kh, kw, stride, pad, oh, ow, col.data());
        double* yi = out.data() + i * cout * N;
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(cout),
                    static_cast<int>(N), static_cast<int>(K), 1.0, w.values().data(),
                    static_cast<int>(K), col.data(), static_cast<int>(N), 0.0, yi,
                    static_cast<int>(N));
        for (long c = 0; c < cout; ++c) {
            const double bv = b.values()[c];
            double* row = yi + c * N;
            for (long k = 0; k < N; ++k) row[k] += bv;
        }
    }

    auto n = make_node({d.b, cout, oh, ow}, std::move(out), any_grad({&x, &w, &b}));
    if (n->requires_grad) {
        n->parents = {x.node(), w.node(), b.node()};
        NodePtr px = x.node(), pw = w.node(), pb = b.node();
        n->backward_fn = [px, pw, pb, d, cout, kh, kw, stride, pad, oh, ow, K, N](Node& self) {
            if (px->requires_grad) px->ensure_grad();
            if (pw->requires_grad) pw->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            std::vector<double> col(static_cast<size_t>(K) * N);
            std::vector<double> dcol(static_cast<size_t>(K) * N);
            for (long i = 0; i < d.b; ++i) {
                const double* gy = self.grad.data() + i * cout * N;
                if (px->requires_grad) {
                    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(K),
                                static_cast<int>(N), static_cast<int>(cout), 1.0,
                                pw->val.data(), static_cast<int>(K), gy, static_cast<int>(N),
                                0.0, dcol.data(), static_cast<int>(N));
                    col2im_accum(dcol.data(), d.c, d.h, d.w, kh, kw, stride, pad, oh, ow,
                                 px->grad.data() + i * d.c * d.h * d.w);
                }
                if (pw->requires_grad) {
                    const double* xi = px->val.data() + i * d.c * d.h * d.w;
                    im2col(xi, d.c, d.h, d.w, kh, kw, stride, pad, oh, ow, col.data());
                    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(cout),
                                static_cast<int>(K), static_cast<int>(N), 1.0, gy,
                                static_cast<int>(N), col.data(), static_cast<int>(N), 1.0,
                                pw->grad.data(), static_cast<int>(K));
                }
                if (pb->requires_grad) {
                    for (long c = 0; c < cout; ++c) {
                        double s = 0.0;
                        const double* row = gy + c * N;
                        for (long k = 0; k < N; ++k) s += row[k];
                        pb->grad[c] += s;
                    }
                }
            }
        };
    }
    return Tensor(n);
}

Tensor maxpool2x2(const Tensor& x) {
    auto d = dims4(x, "maxpool2x2");
    check_internal(d.h % 2 == 0 && d.w % 2 == 0, "maxpool2x2: odd spatial dims");
    const long oh = d.h / 2, ow = d.w / 2;
    std::vector<double> out(static_cast<size_t>(d.b) * d.c * oh * ow);
    auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
    for (long i = 0; i < d.b * d.c; ++i) {
        const double* src = x.values().data() + i * d.h * d.w;
        double* dst = out.data() + i * oh * ow;
        int64_t* am = argmax->data() + i * oh * ow;
        for (long y = 0; y < oh; ++y) {
            for (long xo = 0; xo < ow; ++xo) {
                const long base = (2 * y) * d.w + 2 * xo;
                long best = base;
                double bv = src[base];
                const long cands[3] = {base + 1, base + d.w, base + d.w + 1};
                for (long cand : cands)
                    if (src[cand] > bv) { bv = src[cand]; best = cand; }
                dst[y * ow + xo] = bv;
                am[y * ow + xo] = i * d.h * d.w + best;
            }
        }
    }
    auto n = make_node({d.b, d.c, oh, ow}, std::move(out), x.requires_grad());
    if (n->requires_grad) {
        n->parents = {x.node()};
        NodePtr px = x.node();
        n->backward_fn = [px, argmax](Node& self) {
            px->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) px->grad[(*argmax)[i]] += self.grad[i];
        };
    }
    return Tensor(n);
}

Tensor upsample_nearest2x(const Tensor& x) {
    auto d = dims4(x, "upsample_nearest2x");
    const long oh = d.h * 2, ow = d.w * 2;
    std::vector<double> out(static_cast<size_t>(d.b) * d.c * oh * ow);
    for (long i = 0; i < d.b * d.c; ++i) {
        const double* src = x.values().data() + i * d.h * d.w;
        double* dst = out.data() + i * oh * ow;
        for (long y = 0; y < oh; ++y)
            for (long xo = 0; xo < ow; ++xo) dst[y * ow + xo] = src[(y / 2) * d.w + (xo / 2)];
    }
    auto n = make_node({d.b, d.c, oh, ow}, std::move(out), x.requires_grad());
    if (n->requires_grad) {
        n->parents = {x.node()};
        NodePtr px = x.node();
        n->backward_fn = [px, d, oh, ow](Node& self) {
            px->ensure_grad();
            for (long i = 0; i < d.b * d.c; ++i) {
                const double* g = self.grad.data() + i * oh * ow;
                double* dx = px->grad.data() + i * d.h * d.w;
                for (long y = 0; y < oh; ++y)
                    for (long xo = 0; xo < ow; ++xo) dx[(y / 2) * d.w + (xo / 2)] += g[y * ow + xo];
            }
        };
    }
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace {

// Shared backward for normalization over an index set: for each reduction
// group, dx = (1/sigma) * (gy*gamma - mean(gy*gamma) - xhat * mean(gy*gamma*xhat)).
struct NormStats {
    std::vector<double> mean;
    std::vector<double> inv_std;
};

}  // namespace

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps) {
    auto d = dims4(x, "group_norm");
    check_internal(groups > 0 && d.c % groups == 0, "group_norm: groups must divide channels");
    check_internal(gamma.dim(0) == d.c && beta.dim(0) == d.c, "group_norm: affine shape");
    const long cpg = d.c / groups;
    const long gsz = cpg * d.h * d.w;
    auto stats = std::make_shared<NormStats>();
    stats->mean.resize(static_cast<size_t>(d.b) * groups);
    stats->inv_std.resize(static_cast<size_t>(d.b) * groups);
    std::vector<double> out(x.numel());
    const size_t hw = static_cast<size_t>(d.h) * d.w;
    for (long b = 0; b < d.b; ++b) {
        for (long g = 0; g < groups; ++g) {
            const double* src = x.values().data() + (b * d.c + g * cpg) * hw;
            double m = 0.0;
            for (long k = 0; k < gsz; ++k) m += src[k];
            m /= static_cast<double>(gsz);
            double var = 0.0;
            for (long k = 0; k < gsz; ++k) {
                const double t = src[k] - m;
                var += t * t;
            }
            var /= static_cast<double>(gsz);
            const double is = 1.0 / std::sqrt(var + eps);
            stats->mean[b * groups + g] = m;
            stats->inv_std[b * groups + g] = is;
            double* dst = out.data() + (b * d.c + g * cpg) * hw;
            for (long cc = 0; cc < cpg; ++cc) {
                const long c = g * cpg + cc;
                const double ga = gamma.values()[c], be = beta.values()[c];
                for (size_t k = 0; k < hw; ++k)
                    dst[cc * hw + k] = (src[cc * hw + k] - m) * is * ga + be;
            }
        }
    }
    auto n = make_node(x.shape(), std::move(out), any_grad({&x, &gamma, &beta}));
    if (n->requires_grad) {
        n->parents = {x.node(), gamma.node(), beta.node()};
        NodePtr px = x.node(), pg = gamma.node(), pb = beta.node();
        n->backward_fn = [px, pg, pb, stats, d, groups, cpg, gsz, hw](Node& self) {
            if (px->requires_grad) px->ensure_grad();
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            std::vector<double> xhat(static_cast<size_t>(gsz));
            std::vector<double> gg(static_cast<size_t>(gsz));
            for (long b = 0; b < d.b; ++b) {
                for (long g = 0; g < groups; ++g) {
                    const double m = stats->mean[b * groups + g];
                    const double is = stats->inv_std[b * groups + g];
                    const size_t off = (b * d.c + g * cpg) * hw;
                    const double* xv = px->val.data() + off;
                    const double* gy = self.grad.data() + off;
                    for (long cc = 0; cc < cpg; ++cc) {
                        const long c = g * cpg + cc;
                        const double ga = pg->val[c];
                        for (size_t k = 0; k < hw; ++k) {
                            const size_t idx = cc * hw + k;
                            xhat[idx] = (xv[idx] - m) * is;
                            gg[idx] = gy[idx] * ga;
                        }
                    }
                    if (pg->requires_grad || pb->requires_grad) {
                        for (long cc = 0; cc < cpg; ++cc) {
                            const long c = g * cpg + cc;
                            double dgam = 0.0, dbet = 0.0;
                            for (size_t k = 0; k < hw; ++k) {
                                dgam += gy[cc * hw + k] * xhat[cc * hw + k];
                                dbet += gy[cc * hw + k];
                            }
                            if (pg->requires_grad) pg->grad[c] += dgam;
                            if (pb->requires_grad) pb->grad[c] += dbet;
                        }
                    }
                    if (px->requires_grad) {
                        double sum_g = 0.0, sum_gx = 0.0;
                        for (long k = 0; k < gsz; ++k) {
                            sum_g += gg[k];
                            sum_gx += gg[k] * xhat[k];
                        }
                        const double mg = sum_g / static_cast<double>(gsz);
                        const double mgx = sum_gx / static_cast<double>(gsz);
                        double* dx = px->grad.data() + off;
                        for (long k = 0; k < gsz; ++k)
                            dx[k] += is * (gg[k] - mg - xhat[k] * mgx);
                    }
                }
            }
        };
    }
    return Tensor(n);
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    auto d = dims4(x, "batch_norm");
    check_internal(gamma.dim(0) == d.c && beta.dim(0) == d.c, "batch_norm: affine shape");
    const size_t hw = static_cast<size_t>(d.h) * d.w;
    const double cnt = static_cast<double>(d.b) * hw;
    auto stats = std::make_shared<NormStats>();
    stats->mean.resize(d.c);
    stats->inv_std.resize(d.c);
    std::vector<double> out(x.numel());
    for (long c = 0; c < d.c; ++c) {
        double m = 0.0;
        for (long b = 0; b < d.b; ++b) {
            const double* src = x.values().data() + (b * d.c + c) * hw;
            for (size_t k = 0; k < hw; ++k) m += src[k];
        }
        m /= cnt;
        double var = 0.0;
        for (long b = 0; b < d.b; ++b) {
            const double* src = x.values().data() + (b * d.c + c) * hw;
            for (size_t k = 0; k < hw; ++k) {
                const double t = src[k] - m;
                var += t * t;
            }
        }
        var /= cnt;
        const double is = 1.0 / std::sqrt(var + eps);
        stats->mean[c] = m;
        stats->inv_std[c] = is;
        const double ga = gamma.values()[c], be = beta.values()[c];
        for (long b = 0; b < d.b; ++b) {
            const double* src = x.values().data() + (b * d.c + c) * hw;
            double* dst = out.data() + (b * d.c + c) * hw;
            for (size_t k = 0; k < hw; ++k) dst[k] = (src[k] - m) * is * ga + be;
        }
    }
    auto n = make_node(x.shape(), std::move(out), any_grad({&x, &gamma, &beta}));
    if (n->requires_grad) {
        n->parents = {x.node(), gamma.node(), beta.node()};
        NodePtr px = x.node(), pg = gamma.node(), pb = beta.node();
        n->backward_fn = [px, pg, pb, stats, d, hw, cnt](Node& self) {
            if (px->requires_grad) px->ensure_grad();
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            for (long c = 0; c < d.c; ++c) {
                const double m = stats->mean[c], is = stats->inv_std[c];
                const double ga = pg->val[c];
                double sum_g = 0.0, sum_gx = 0.0, dgam = 0.0, dbet = 0.0;
                for (long b = 0; b < d.b; ++b) {
                    const size_t off = (b * d.c + c) * hw;
                    const double* xv = px->val.data() + off;
                    const double* gy = self.grad.data() + off;
                    for (size_t k = 0; k < hw; ++k) {
                        const double xh = (xv[k] - m) * is;
                        sum_g += gy[k];
                        sum_gx += gy[k] * xh;
                        dgam += gy[k] * xh;
                        dbet += gy[k];
                    }
                }
                if (pg->requires_grad) pg->grad[c] += dgam;
                if (pb->requires_grad) pb->grad[c] += dbet;
                if (px->requires_grad) {
                    const double mg = sum_g / cnt, mgx = sum_gx / cnt;
                    for (long b = 0; b < d.b; ++b) {
                        const size_t off = (b * d.c + c) * hw;
                        const double* xv = px->val.data() + off;
                        const double* gy = self.grad.data() + off;
                        double* dx = px->grad.data() + off;
                        for (size_t k = 0; k < hw; ++k) {
                            const double xh = (xv[k] - m) * is;
                            dx[k] += ga * is * (gy[k] - mg - xh * mgx);
                        }
                    }
                }
            }
        };
    }
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

Tensor softmax_channel(const Tensor& x, double temperature) {
    auto d = dims4(x, "softmax_channel");
    check_internal(temperature > 0.0, "softmax_channel: temperature must be positive");
    const size_t hw = static_cast<size_t>(d.h) * d.w;
    std::vector<double> out(x.numel());
    for (long b = 0; b < d.b; ++b) {
        for (size_t k = 0; k < hw; ++k) {
            const size_t base = b * d.c * hw + k;
            double mx = -1e300;
            for (long c = 0; c < d.c; ++c) mx = std::max(mx, x.values()[base + c * hw]);
            double z = 0.0;
            for (long c = 0; c < d.c; ++c) {
                const double e = std::exp((x.values()[base + c * hw] - mx) / temperature);
                out[base + c * hw] = e;
                z += e;
            }
            for (long c = 0; c < d.c; ++c) out[base + c * hw] /= z;
        }
    }
    auto n = make_node(x.shape(), std::move(out), x.requires_grad());
    if (n->requires_grad) {
        n->parents = {x.node()};
        NodePtr px = x.node();
        n->backward_fn = [px, d, hw, temperature](Node& self) {
            px->ensure_grad();
            for (long b = 0; b < d.b; ++b) {
                for (size_t k = 0; k < hw; ++k) {
                    const size_t base = b * d.c * hw + k;
                    double dot = 0.0;
                    for (long c = 0; c < d.c; ++c) dot += self.grad[base + c * hw] * self.val[base + c * hw];
                    for (long c = 0; c < d.c; ++c) {
                        const size_t i = base + c * hw;
                        px->grad[i] += self.val[i] * (self.grad[i] - dot) / temperature;
                    }
                }
            }
        };
    }
    return Tensor(n);
}

Tensor log_softmax_channel(const Tensor& x, double temperature) {
    auto d = dims4(x, "log_softmax_channel");
    check_internal(temperature > 0.0, "log_softmax_channel: temperature must be positive");
    const size_t hw = static_cast<size_t>(d.h) * d.w;
    std::vector<double> out(x.numel());
    for (long b = 0; b < d.b; ++b) {
        for (size_t k = 0; k < hw; ++k) {
            const size_t base = b * d.c * hw + k;
            double mx = -1e300;
            for (long c = 0; c < d.c; ++c) mx = std::max(mx, x.values()[base + c * hw] / temperature);
            double z = 0.0;
            for (long c = 0; c < d.c; ++c) z += std::exp(x.values()[base + c * hw] / temperature - mx);
            const double lse = mx + std::log(z);
            for (long c = 0; c < d.c; ++c)
                out[base + c * hw] = x.values()[base + c * hw] / temperature - lse;
        }
    }
    auto n = make_node(x.shape(), std::move(out), x.requires_grad());
    if (n->requires_grad) {
        n->parents = {x.node()};
        NodePtr px = x.node();
        n->backward_fn = [px, d, hw, temperature](Node& self) {
            px->ensure_grad();
            for (long b = 0; b < d.b; ++b) {
                for (size_t k = 0; k < hw; ++k) {
                    const size_t base = b * d.c * hw + k;
                    double gsum = 0.0;
                    for (long c = 0; c < d.c; ++c) gsum += self.grad[base + c * hw];
                    for (long c = 0; c < d.c; ++c) {
                        const size_t i = base + c * hw;
                        px->grad[i] += (self.grad[i] - std::exp(self.val[i]) * gsum) / temperature;
                    }
                }
            }
        };
    }
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto n = make_node({}, {s}, x.requires_grad());
    if (n->requires_grad) {
        n->parents = {x.node()};
        NodePtr px = x.node();
        n->backward_fn = [px](Node& self) {
            px->ensure_grad();
            const double g = self.grad[0];
            for (auto& gi : px->grad) gi += g;
        };
    }
    return Tensor(n);
}

Tensor sum_over_bhw(const Tensor& x) {
    auto d = dims4(x, "sum_over_bhw");
    const size_t hw = static_cast<size_t>(d.h) * d.w;
    std::vector<double> out(static_cast<size_t>(d.c), 0.0);
    for (long b = 0; b < d.b; ++b)
        for (long c = 0; c < d.c; ++c) {
            const double* src = x.values().data() + (b * d.c + c) * hw;
            double s = 0.0;
            for (size_t k = 0; k < hw; ++k) s += src[k];
            out[c] += s;
        }
    auto n = make_node({d.c}, std::move(out), x.requires_grad());
    if (n->requires_grad) {
        n->parents = {x.node()};
        NodePtr px = x.node();
        n->backward_fn = [px, d, hw](Node& self) {
            px->ensure_grad();
            for (long b = 0; b < d.b; ++b)
                for (long c = 0; c < d.c; ++c) {
                    double* dst = px->grad.data() + (b * d.c + c) * hw;
                    const double g = self.grad[c];
                    for (size_t k = 0; k < hw; ++k) dst[k] += g;
                }
        };
    }
    return Tensor(n);
}

Tensor mean_all(const Tensor& x) {
    return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

}  // namespace crossmatch::ad
