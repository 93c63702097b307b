// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <deque>
#include <vector>

#include <Eigen/Core>

#include "cgdrcn/errors.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

enum class OpKind {
    Input,
    Parameter,
    Conv2d,
    Relu,
    Sigmoid,
    MaxPool2d,
    Upsample2x,
    Concat,
    Add,
    Sub,
    Mul,
    Log,
    Sqrt,
    Scale,
    Clamp,
    SumAll,
    SumSquares,
    FrobeniusNorm,
};

/// Handle to a node of a Graph; `id` is the node's position in creation order.
struct Var {
    std::size_t id = std::numeric_limits<std::size_t>::max();
    bool valid() const noexcept { return id != std::numeric_limits<std::size_t>::max(); }
};

/// Define-by-run tape. Every op appends one record whose inputs were created earlier,
/// so reverse record order is a valid reverse topological order.
///
/// Leaves never write to tensors outside the graph: gradients of `parameter` leaves are
/// read back with `grad()`. Leaf gradients accumulate across repeated `backward` calls;
/// interior gradients are reset by each call.
///
/// A graph is confined to one thread. Borrowed parameter tensors must outlive it and
/// must not change while it is in use.
template <std::floating_point T>
class Graph {
public:
    struct Record {
        OpKind kind;
        std::vector<std::size_t> inputs;
        std::size_t output;
        std::function<void()> backward;
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var input(Tensor<T> value, bool requires_grad = false) {
        Node node;
        node.owned = std::move(value);
        node.requires_grad = requires_grad;
        nodes_.push_back(std::move(node));
        return Var{nodes_.size() - 1};
    }

    /// Borrows `p` without copying; the leaf always requires grad.
    Var parameter(const Tensor<T>& p) {
        Node node;
        node.borrowed = &p;
        node.requires_grad = true;
        nodes_.push_back(std::move(node));
        return Var{nodes_.size() - 1};
    }

    const Tensor<T>& value(Var v) const { return val(v.id); }
    const Shape& shape(Var v) const { return val(v.id).shape(); }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    bool is_leaf(Var v) const { return nodes_.at(v.id).leaf; }

    /// Empty span when nothing has flowed into this node yet.
    std::span<const T> grad(Var v) const { return nodes_.at(v.id).grad; }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    const std::vector<Record>& records() const noexcept { return records_; }

    // --- ops -------------------------------------------------------------------------

    Var conv2d(Var x, Var weight, Var bias, std::size_t stride = 1, std::size_t padding = 0) {
        const auto& in = val(x.id);
        const auto& w = val(weight.id);
        const auto& b = val(bias.id);
        if (in.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + to_string(in.shape()));
        if (w.rank() != 4 || w.dim(2) != w.dim(3))
            throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " + to_string(w.shape()));
        if (w.dim(1) != in.dim(0))
            throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, input has " +
                             std::to_string(in.dim(0)));
        if (b.size() != w.dim(0)) throw ShapeError("conv2d: bias size must equal output channels");
        if (stride == 0) throw ShapeError("conv2d: stride must be positive");

        const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
        const std::size_t cout = w.dim(0), k = w.dim(2);
        const auto span_h = static_cast<long>(h + 2 * padding) - static_cast<long>(k);
        const auto span_w = static_cast<long>(wd + 2 * padding) - static_cast<long>(k);
        if (span_h < 0 || span_w < 0) throw ShapeError("conv2d: non-positive output extent");
        const std::size_t ho = static_cast<std::size_t>(span_h) / stride + 1;
        const std::size_t wo = static_cast<std::size_t>(span_w) / stride + 1;
        const std::size_t kk = cin * k * k, pixels = ho * wo;

        const bool direct = (k == 1 && stride == 1 && padding == 0);
        auto cols = std::make_shared<std::vector<T>>();
        if (!direct) {
            cols->resize(kk * pixels);
            im2col(in.values().data(), cin, h, wd, k, stride, padding, ho, wo, cols->data());
        }
        const T* cols_ptr = direct ? in.values().data() : cols->data();

        Tensor<T> out({cout, ho, wo});
        MatMap<T>(out.values().data(), cout, pixels).noalias() =
            CMatMap<T>(w.values().data(), cout, kk) * CMatMap<T>(cols_ptr, kk, pixels);
        for (std::size_t c = 0; c < cout; ++c) {
            T* row = out.values().data() + c * pixels;
            const T bc = b[c];
            for (std::size_t p = 0; p < pixels; ++p) row[p] += bc;
        }

        const std::size_t o = push(std::move(out), OpKind::Conv2d, {x.id, weight.id, bias.id});
        const std::size_t xi = x.id, wi = weight.id, bi = bias.id;
        records_.back().backward = [=, this] {
            const T* g = nodes_[o].grad.data();
            CMatMap<T> gm(g, cout, pixels);
            if (nodes_[wi].requires_grad) {
                const T* cp = direct ? val(xi).values().data() : cols->data();
                MatMap<T>(gbuf(wi).data(), cout, kk).noalias() += gm * CMatMap<T>(cp, kk, pixels).transpose();
            }
            if (nodes_[bi].requires_grad) {
                auto& gb = gbuf(bi);
                for (std::size_t c = 0; c < cout; ++c) {
                    T acc = 0;
                    for (std::size_t p = 0; p < pixels; ++p) acc += g[c * pixels + p];
                    gb[c] += acc;
                }
            }
            if (nodes_[xi].requires_grad) {
                CMatMap<T> wm(val(wi).values().data(), cout, kk);
                if (direct) {
                    MatMap<T>(gbuf(xi).data(), kk, pixels).noalias() += wm.transpose() * gm;
                } else {
                    std::vector<T> dcols(kk * pixels);
                    MatMap<T>(dcols.data(), kk, pixels).noalias() = wm.transpose() * gm;
                    col2im(dcols.data(), cin, h, wd, k, stride, padding, ho, wo, gbuf(xi).data());
                }
            }
        };
        return Var{o};
    }

    Var relu(Var x) {
        const auto& in = val(x.id);
        Tensor<T> out(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
        const std::size_t o = push(std::move(out), OpKind::Relu, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const auto& xin = val(xi);
            const auto& g = nodes_[o].grad;
            auto& gx = gbuf(xi);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xin[i] > T{0}) gx[i] += g[i];
        };
        return Var{o};
    }

    Var sigmoid(Var x) {
        const auto& in = val(x.id);
        Tensor<T> out(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) {
            const T v = in[i];
            if (v >= T{0}) {
                out[i] = T{1} / (T{1} + std::exp(-v));
            } else {
                const T e = std::exp(v);
                out[i] = e / (T{1} + e);
            }
        }
        const std::size_t o = push(std::move(out), OpKind::Sigmoid, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const auto& y = val(o);
            const auto& g = nodes_[o].grad;
            auto& gx = gbuf(xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T{1} - y[i]);
        };
        return Var{o};
    }

    /// Ties go to the first maximum in row-major window order.
    Var maxpool2d(Var x, std::size_t window = 2, std::size_t stride = 2) {
        const auto& in = val(x.id);
        if (in.rank() != 3) throw ShapeError("maxpool2d: input must be [C,H,W]");
        if (window == 0 || stride == 0) throw ShapeError("maxpool2d: window and stride must be positive");
        const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
        if (h % stride != 0 || w % stride != 0 || h < window || w < window)
            throw ShapeError("maxpool2d: extents " + to_string(in.shape()) + " not divisible by stride " +
                             std::to_string(stride));
        const std::size_t ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
        Tensor<T> out({c, ho, wo});
        auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    std::size_t best = (ch * h + oy * stride) * w + ox * stride;
                    for (std::size_t ky = 0; ky < window; ++ky)
                        for (std::size_t kx = 0; kx < window; ++kx) {
                            const std::size_t idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                            if (in[idx] > in[best]) best = idx;
                        }
                    const std::size_t oi = (ch * ho + oy) * wo + ox;
                    out[oi] = in[best];
                    (*argmax)[oi] = best;
                }
        const std::size_t o = push(std::move(out), OpKind::MaxPool2d, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const auto& g = nodes_[o].grad;
            auto& gx = gbuf(xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
        };
        return Var{o};
    }

    /// Bilinear 2x upsampling with half-pixel centers and edge clamping. With
    /// `preserve_integral` every output is divided by 4, which makes the pixel sum
    /// invariant (the clamped taps give every input pixel a total weight of exactly 4).
    Var upsample2x(Var x, bool preserve_integral) {
        const auto& in = val(x.id);
        if (in.rank() != 3 || in.dim(1) == 0 || in.dim(2) == 0)
            throw ShapeError("upsample2x: input must be non-empty [C,H,W]");
        const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
        const std::size_t ho = 2 * h, wo = 2 * w;
        auto ty = std::make_shared<std::vector<Tap>>(upsample_taps(h));
        auto tx = std::make_shared<std::vector<Tap>>(upsample_taps(w));
        const T scale = preserve_integral ? T{0.25} : T{1};
        Tensor<T> out({c, ho, wo});
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* src = in.values().data() + ch * h * w;
            T* dst = out.values().data() + ch * ho * wo;
            for (std::size_t oy = 0; oy < ho; ++oy) {
                const Tap& a = (*ty)[oy];
                const T* r0 = src + a.i0 * w;
                const T* r1 = src + a.i1 * w;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    const Tap& b = (*tx)[ox];
                    const T top = T(b.w0) * r0[b.i0] + T(b.w1) * r0[b.i1];
                    const T bot = T(b.w0) * r1[b.i0] + T(b.w1) * r1[b.i1];
                    dst[oy * wo + ox] = scale * (T(a.w0) * top + T(a.w1) * bot);
                }
            }
        }
        const std::size_t o = push(std::move(out), OpKind::Upsample2x, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const auto& g = nodes_[o].grad;
            auto& gx = gbuf(xi);
            for (std::size_t ch = 0; ch < c; ++ch) {
                T* dst = gx.data() + ch * h * w;
                const T* src = g.data() + ch * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const Tap& a = (*ty)[oy];
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const Tap& b = (*tx)[ox];
                        const T gv = scale * src[oy * wo + ox];
                        dst[a.i0 * w + b.i0] += gv * T(a.w0) * T(b.w0);
                        dst[a.i0 * w + b.i1] += gv * T(a.w0) * T(b.w1);
                        dst[a.i1 * w + b.i0] += gv * T(a.w1) * T(b.w0);
                        dst[a.i1 * w + b.i1] += gv * T(a.w1) * T(b.w1);
                    }
                }
            }
        };
        return Var{o};
    }

    Var concat_channels(Var a, Var b) {
        const auto& ta = val(a.id);
        const auto& tb = val(b.id);
        if (ta.rank() != 3 || tb.rank() != 3 || ta.dim(1) != tb.dim(1) || ta.dim(2) != tb.dim(2))
            throw ShapeError("concat_channels: spatial mismatch " + to_string(ta.shape()) + " vs " +
                             to_string(tb.shape()));
        Tensor<T> out({ta.dim(0) + tb.dim(0), ta.dim(1), ta.dim(2)});
        std::copy(ta.values().begin(), ta.values().end(), out.values().begin());
        std::copy(tb.values().begin(), tb.values().end(), out.values().begin() + ta.size());
        const std::size_t ai = a.id, bi = b.id, na = ta.size();
        const std::size_t o = push(std::move(out), OpKind::Concat, {a.id, b.id});
        records_.back().backward = [=, this] {
            const auto& g = nodes_[o].grad;
            if (nodes_[ai].requires_grad) {
                auto& ga = gbuf(ai);
                for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
            }
            if (nodes_[bi].requires_grad) {
                auto& gb = gbuf(bi);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
            }
        };
        return Var{o};
    }

    Var add(Var a, Var b) { return binary(a, b, OpKind::Add); }
    Var sub(Var a, Var b) { return binary(a, b, OpKind::Sub); }
    Var mul(Var a, Var b) { return binary(a, b, OpKind::Mul); }

    Var scale(Var x, T factor) {
        const auto& in = val(x.id);
        Tensor<T> out(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = factor * in[i];
        const std::size_t o = push(std::move(out), OpKind::Scale, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const auto& g = nodes_[o].grad;
            auto& gx = gbuf(xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
        };
        return Var{o};
    }

    Var log(Var x) {
        const auto& in = val(x.id);
        Tensor<T> out(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (!(in[i] > T{0})) throw DomainError("log: non-positive value at index " + std::to_string(i));
            out[i] = std::log(in[i]);
        }
        const std::size_t o = push(std::move(out), OpKind::Log, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const auto& xin = val(xi);
            const auto& g = nodes_[o].grad;
            auto& gx = gbuf(xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xin[i];
        };
        return Var{o};
    }

    /// The derivative at 0 is taken as 0.
    Var sqrt(Var x) {
        const auto& in = val(x.id);
        Tensor<T> out(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i] < T{0}) throw DomainError("sqrt: negative value at index " + std::to_string(i));
            out[i] = std::sqrt(in[i]);
        }
        const std::size_t o = push(std::move(out), OpKind::Sqrt, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const auto& y = val(o);
            const auto& g = nodes_[o].grad;
            auto& gx = gbuf(xi);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (y[i] > T{0}) gx[i] += g[i] / (T{2} * y[i]);
        };
        return Var{o};
    }

    /// Gradient passes where lo <= x <= hi.
    Var clamp(Var x, T lo, T hi) {
        const auto& in = val(x.id);
        Tensor<T> out(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::clamp(in[i], lo, hi);
        const std::size_t o = push(std::move(out), OpKind::Clamp, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const auto& xin = val(xi);
            const auto& g = nodes_[o].grad;
            auto& gx = gbuf(xi);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xin[i] >= lo && xin[i] <= hi) gx[i] += g[i];
        };
        return Var{o};
    }

    Var sum_all(Var x) {
        const auto& in = val(x.id);
        T acc = 0;
        for (std::size_t i = 0; i < in.size(); ++i) acc += in[i];
        const std::size_t o = push(Tensor<T>({1}, acc), OpKind::SumAll, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const T g = nodes_[o].grad[0];
            for (auto& v : gbuf(xi)) v += g;
        };
        return Var{o};
    }

    Var sum_squares(Var x) {
        const auto& in = val(x.id);
        T acc = 0;
        for (std::size_t i = 0; i < in.size(); ++i) acc += in[i] * in[i];
        const std::size_t o = push(Tensor<T>({1}, acc), OpKind::SumSquares, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const auto& xin = val(xi);
            const T g = nodes_[o].grad[0];
            auto& gx = gbuf(xi);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T{2} * g * xin[i];
        };
        return Var{o};
    }

    /// sqrt(sum x^2). At the origin the zero subgradient is used.
    Var frobenius_norm(Var x) {
        const auto& in = val(x.id);
        T acc = 0;
        for (std::size_t i = 0; i < in.size(); ++i) acc += in[i] * in[i];
        const std::size_t o = push(Tensor<T>({1}, std::sqrt(acc)), OpKind::FrobeniusNorm, {x.id});
        const std::size_t xi = x.id;
        records_.back().backward = [=, this] {
            if (!nodes_[xi].requires_grad) return;
            const T norm = val(o)[0];
            if (norm == T{0}) return;
            const auto& xin = val(xi);
            const T g = nodes_[o].grad[0] / norm;
            auto& gx = gbuf(xi);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * xin[i];
        };
        return Var{o};
    }

    // --- backward --------------------------------------------------------------------

    void backward(Var root) {
        const auto& r = val(root.id);
        if (r.size() != 1) throw UsageError("backward: root must be a scalar, got shape " + to_string(r.shape()));
        for (auto& node : nodes_)
            if (!node.leaf) node.grad.clear();
        if (!nodes_[root.id].requires_grad) return;
        gbuf(root.id)[0] += T{1};
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            if (!nodes_[it->output].requires_grad || nodes_[it->output].grad.empty()) continue;
            it->backward();
        }
    }

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* borrowed = nullptr;
        std::vector<T> grad;
        bool requires_grad = false;
        bool leaf = true;
    };

    struct Tap {
        std::size_t i0, i1;
        double w0, w1;
    };

    template <typename U>
    using RowMat = Eigen::Matrix<U, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    template <typename U>
    using MatMap = Eigen::Map<RowMat<U>>;
    template <typename U>
    using CMatMap = Eigen::Map<const RowMat<U>>;

    const Tensor<T>& val(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.borrowed ? *n.borrowed : n.owned;
    }

    std::vector<T>& gbuf(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(val(id).size(), T{0});
        return n.grad;
    }

    std::size_t push(Tensor<T> out, OpKind kind, std::vector<std::size_t> inputs) {
        Node node;
        node.owned = std::move(out);
        node.leaf = false;
        for (auto i : inputs) node.requires_grad = node.requires_grad || nodes_[i].requires_grad;
        nodes_.push_back(std::move(node));
        const std::size_t id = nodes_.size() - 1;
        records_.push_back(Record{kind, std::move(inputs), id, {}});
        return id;
    }

    Var binary(Var a, Var b, OpKind kind) {
        const auto& ta = val(a.id);
        const auto& tb = val(b.id);
        if (ta.shape() != tb.shape())
            throw ShapeError("elementwise op: shape mismatch " + to_string(ta.shape()) + " vs " +
                             to_string(tb.shape()));
        Tensor<T> out(ta.shape());
        for (std::size_t i = 0; i < ta.size(); ++i) {
            switch (kind) {
            case OpKind::Add: out[i] = ta[i] + tb[i]; break;
            case OpKind::Sub: out[i] = ta[i] - tb[i]; break;
            default: out[i] = ta[i] * tb[i]; break;
            }
        }
        const std::size_t o = push(std::move(out), kind, {a.id, b.id});
        const std::size_t ai = a.id, bi = b.id;
        records_.back().backward = [=, this] {
            const auto& g = nodes_[o].grad;
            if (nodes_[ai].requires_grad) {
                auto& ga = gbuf(ai);
                if (kind == OpKind::Mul) {
                    const auto& vb = val(bi);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
            }
            if (nodes_[bi].requires_grad) {
                auto& gb = gbuf(bi);
                if (kind == OpKind::Mul) {
                    const auto& va = val(ai);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
                } else if (kind == OpKind::Sub) {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                }
            }
        };
        return Var{o};
    }

    static std::vector<Tap> upsample_taps(std::size_t n) {
        std::vector<Tap> taps(2 * n);
        const double hi = static_cast<double>(n - 1);
        for (std::size_t o = 0; o < 2 * n; ++o) {
            const double s = std::clamp((static_cast<double>(o) + 0.5) / 2.0 - 0.5, 0.0, hi);
            const auto i0 = static_cast<std::size_t>(std::floor(s));
            const std::size_t i1 = std::min(i0 + 1, n - 1);
            const double w1 = s - static_cast<double>(i0);
            taps[o] = Tap{i0, i1, 1.0 - w1, w1};
        }
        return taps;
    }

    // rows ordered (c, ky, kx), columns (oy, ox)
    static void im2col(const T* in, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                       std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                    T* row = cols + ((c * k + ky) * k + kx) * ho * wo;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                        T* dst = row + oy * wo;
                        if (iy < 0 || iy >= static_cast<long>(h)) {
                            std::fill(dst, dst + wo, T{0});
                            continue;
                        }
                        const T* src = in + (c * h + static_cast<std::size_t>(iy)) * w;
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                            dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? T{0} : src[ix];
                        }
                    }
                }
    }

    static void col2im(const T* cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
                       std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* out) {
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const T* row = cols + ((c * k + ky) * k + kx) * ho * wo;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        T* dst = out + (c * h + static_cast<std::size_t>(iy)) * w;
                        const T* src = row + oy * wo;
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                            if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
                        }
                    }
                }
    }

    std::deque<Node> nodes_;
    std::vector<Record> records_;
};

} // namespace cgdrcn
