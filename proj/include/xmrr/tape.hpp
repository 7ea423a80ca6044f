#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "xmrr/tensor.hpp"

namespace xmrr {

constexpr double kCosineEps = 1e-8;
constexpr double kLayerNormEps = 1e-5;
constexpr double kAttnMaskFill = -1e9;

// Handle into a Tape. Only valid for the tape that produced it.
struct Var {
    std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
    bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

// Reverse-mode tape over dense tensors. Nodes are recorded in construction
// order, which is a topological order, so the backward pass is a single
// reverse sweep that fires each node's closure exactly once. Gradients
// accumulate additively across uses. All kernels are sequential with a fixed
// reduction order, so forward results are bit-identical for fixed inputs.
template <typename T>
class Tape {
  public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }

    Var input(Tensor<T> value, bool requires_grad) {
        return push(std::move(value), requires_grad && grad_enabled_, nullptr);
    }

    Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

    // The returned reference is invalidated by the next op recorded on this
    // tape; copy the tensor before building further graph.
    const Tensor<T>& value(Var v) const { return node(v).value; }

    bool has_grad(Var v) const { return !node(v).grad.data.empty(); }

    // Gradient of the backward() root w.r.t. v; zeros if v was not on the path.
    Tensor<T> grad(Var v) const {
        const Node& n = node(v);
        if (n.grad.data.empty()) return Tensor<T>(n.value.shape);
        return n.grad;
    }

    // One backward pass per tape; a second sweep would accumulate on top of
    // the existing gradients.
    void backward(Var root) {
        Node& r = node(root);
        if (!r.value.is_scalar())
            throw std::runtime_error("backward: root must be scalar, got " + shape_str(r.value.shape));
        if (!grad_enabled_) throw std::runtime_error("backward: tape recorded without gradients");
        if (backward_done_) throw std::runtime_error("backward: already run on this tape");
        backward_done_ = true;
        if (!r.requires_grad) return;
        grad_buf(root.id).data[0] = T(1);
        for (std::uint32_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.back && !n.grad.data.empty()) n.back(*this);
        }
    }

    // ---- primitives -------------------------------------------------------

    Var add(Var a, Var b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(av.same_shape(bv), "add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        Tensor<T> out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
        return unary_or_binary(std::move(out), a, b, [](Tape& tp, std::uint32_t oid, std::uint32_t aid, std::uint32_t bid) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            tp.accum(aid, [&](Tensor<T>& ga) { axpy(g.numel(), T(1), g.data.data(), ga.data.data()); });
            tp.accum(bid, [&](Tensor<T>& gb) { axpy(g.numel(), T(1), g.data.data(), gb.data.data()); });
        });
    }

    Var sub(Var a, Var b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(av.same_shape(bv), "sub: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        Tensor<T> out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
        return unary_or_binary(std::move(out), a, b, [](Tape& tp, std::uint32_t oid, std::uint32_t aid, std::uint32_t bid) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            tp.accum(aid, [&](Tensor<T>& ga) { axpy(g.numel(), T(1), g.data.data(), ga.data.data()); });
            tp.accum(bid, [&](Tensor<T>& gb) { axpy(g.numel(), T(-1), g.data.data(), gb.data.data()); });
        });
    }

    Var mul(Var a, Var b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(av.same_shape(bv), "mul: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        Tensor<T> out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
        return unary_or_binary(std::move(out), a, b, [](Tape& tp, std::uint32_t oid, std::uint32_t aid, std::uint32_t bid) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            const Tensor<T>& av = tp.nodes_[aid].value;
            const Tensor<T>& bv = tp.nodes_[bid].value;
            tp.accum(aid, [&](Tensor<T>& ga) {
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
            });
            tp.accum(bid, [&](Tensor<T>& gb) {
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
            });
        });
    }

    Var scale(Var a, T s) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v *= s;
        bool rg = wants(a);
        return push(std::move(out), rg, !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id, s](Tape& tp) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            tp.accum(aid, [&](Tensor<T>& ga) { axpy(g.numel(), s, g.data.data(), ga.data.data()); });
        }));
    }

    Var add_scalar(Var a, T s) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v += s;
        bool rg = wants(a);
        return push(std::move(out), rg, !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id](Tape& tp) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            tp.accum(aid, [&](Tensor<T>& ga) { axpy(g.numel(), T(1), g.data.data(), ga.data.data()); });
        }));
    }

    // max(0, x)
    Var relu(Var a) {
        Tensor<T> out = value(a);
        for (auto& v : out.data)
            if (v < T(0)) v = T(0);
        bool rg = wants(a);
        return push(std::move(out), rg, !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id](Tape& tp) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            const Tensor<T>& x = tp.nodes_[aid].value;
            tp.accum(aid, [&](Tensor<T>& ga) {
                for (std::size_t i = 0; i < g.numel(); ++i)
                    if (x[i] > T(0)) ga[i] += g[i];
            });
        }));
    }

    // exact erf formulation
    Var gelu(Var a) {
        const T inv_sqrt2 = T(0.7071067811865475244);
        Tensor<T> out = value(a);
        for (auto& v : out.data) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
        bool rg = wants(a);
        return push(std::move(out), rg, !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id, inv_sqrt2](Tape& tp) {
            const T inv_sqrt2pi = T(0.3989422804014326779);
            const Tensor<T>& g = tp.nodes_[oid].grad;
            const Tensor<T>& x = tp.nodes_[aid].value;
            tp.accum(aid, [&](Tensor<T>& ga) {
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    const T xi = x[i];
                    const T cdf = T(0.5) * (T(1) + std::erf(xi * inv_sqrt2));
                    const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xi * xi);
                    ga[i] += g[i] * (cdf + xi * pdf);
                }
            });
        }));
    }

    Var matmul(Var a, Var b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.rows(),
                "matmul: incompatible " + shape_str(av.shape) + " x " + shape_str(bv.shape));
        Tensor<T> out({av.rows(), bv.cols()});
        gemm_nn(av.rows(), av.cols(), bv.cols(), av.data.data(), bv.data.data(), out.data.data(), false);
        return unary_or_binary(std::move(out), a, b, [](Tape& tp, std::uint32_t oid, std::uint32_t aid, std::uint32_t bid) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            const Tensor<T>& av = tp.nodes_[aid].value;
            const Tensor<T>& bv = tp.nodes_[bid].value;
            tp.accum(aid, [&](Tensor<T>& ga) {
                gemm_nt(g.rows(), g.cols(), av.cols(), g.data.data(), bv.data.data(), ga.data.data(), true);
            });
            tp.accum(bid, [&](Tensor<T>& gb) {
                gemm_tn(av.rows(), av.cols(), g.cols(), av.data.data(), g.data.data(), gb.data.data(), true);
            });
        });
    }

    // a (r x k) times b^T where b is stored (c x k)
    Var matmul_nt(Var a, Var b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.cols(),
                "matmul_nt: incompatible " + shape_str(av.shape) + " x " + shape_str(bv.shape) + "^T");
        Tensor<T> out({av.rows(), bv.rows()});
        gemm_nt(av.rows(), av.cols(), bv.rows(), av.data.data(), bv.data.data(), out.data.data(), false);
        return unary_or_binary(std::move(out), a, b, [](Tape& tp, std::uint32_t oid, std::uint32_t aid, std::uint32_t bid) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            const Tensor<T>& av = tp.nodes_[aid].value;
            const Tensor<T>& bv = tp.nodes_[bid].value;
            tp.accum(aid, [&](Tensor<T>& ga) {
                gemm_nn(g.rows(), g.cols(), bv.cols(), g.data.data(), bv.data.data(), ga.data.data(), true);
            });
            tp.accum(bid, [&](Tensor<T>& gb) {
                gemm_tn(av.rows(), g.cols(), av.cols(), g.data.data(), av.data.data(), gb.data.data(), true);
            });
        });
    }

    // Affine map. x may be a vector [n] or matrix [r x n]; w is [n x m], b is [m].
    Var linear(Var x, Var w, Var b) {
        const Tensor<T>& xv = value(x);
        const Tensor<T>& wv = value(w);
        const Tensor<T>& bv = value(b);
        require(wv.rank() == 2 && bv.rank() == 1 && bv.shape[0] == wv.cols(), "linear: bad w/b shapes");
        const std::size_t in = wv.rows(), out_dim = wv.cols();
        Tensor<T> out;
        if (xv.rank() == 1) {
            require(xv.shape[0] == in, "linear: input dim " + std::to_string(xv.shape[0]) +
                                           " != weight rows " + std::to_string(in));
            out = Tensor<T>({out_dim});
            gemm_nn(1, in, out_dim, xv.data.data(), wv.data.data(), out.data.data(), false);
            for (std::size_t j = 0; j < out_dim; ++j) out[j] += bv[j];
        } else {
            require(xv.rank() == 2 && xv.cols() == in, "linear: input " + shape_str(xv.shape) +
                                                           " incompatible with weight " + shape_str(wv.shape));
            out = Tensor<T>({xv.rows(), out_dim});
            gemm_nn(xv.rows(), in, out_dim, xv.data.data(), wv.data.data(), out.data.data(), false);
            for (std::size_t i = 0; i < xv.rows(); ++i)
                for (std::size_t j = 0; j < out_dim; ++j) out.at(i, j) += bv[j];
        }
        bool rg = wants(x) || wants(w) || wants(b);
        return push(std::move(out), rg,
                    !rg ? BackFn() : BackFn([oid = next_id(), xid = x.id, wid = w.id, bid = b.id](Tape& tp) {
                        const Tensor<T>& g = tp.nodes_[oid].grad;
                        const Tensor<T>& xv = tp.nodes_[xid].value;
                        const Tensor<T>& wv = tp.nodes_[wid].value;
                        const std::size_t in = wv.rows(), od = wv.cols();
                        const std::size_t rows = xv.rank() == 1 ? 1 : xv.rows();
                        tp.accum(xid, [&](Tensor<T>& gx) {
                            gemm_nt(rows, od, in, g.data.data(), wv.data.data(), gx.data.data(), true);
                        });
                        tp.accum(wid, [&](Tensor<T>& gw) {
                            gemm_tn(rows, in, od, xv.data.data(), g.data.data(), gw.data.data(), true);
                        });
                        tp.accum(bid, [&](Tensor<T>& gb) {
                            for (std::size_t i = 0; i < rows; ++i)
                                for (std::size_t j = 0; j < od; ++j) gb[j] += g.data[i * od + j];
                        });
                    }));
    }

    // Mean over rows, counting only positions where mask is true. Divides by
    // the mask count; with an all-true mask this is exactly the plain row mean.
    Var masked_mean_rows(Var a, std::vector<std::uint8_t> mask) {
        const Tensor<T>& av = value(a);
        require(av.rank() == 2, "masked_mean_rows: expected matrix, got " + shape_str(av.shape));
        require(mask.size() == av.rows(), "masked_mean_rows: mask size " + std::to_string(mask.size()) +
                                              " != rows " + std::to_string(av.rows()));
        std::size_t count = 0;
        for (auto m : mask) count += (m != 0);
        require(count > 0, "masked_mean_rows: empty mask");
        const std::size_t c = av.cols();
        Tensor<T> out({c});
        for (std::size_t i = 0; i < av.rows(); ++i) {
            if (!mask[i]) continue;
            for (std::size_t j = 0; j < c; ++j) out[j] += av.at(i, j);
        }
        const T inv = T(1) / T(count);
        for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
        bool rg = wants(a);
        return push(std::move(out), rg,
                    !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id, mask = std::move(mask), inv](Tape& tp) {
                        const Tensor<T>& g = tp.nodes_[oid].grad;
                        const std::size_t c = g.numel();
                        tp.accum(aid, [&](Tensor<T>& ga) {
                            for (std::size_t i = 0; i < mask.size(); ++i) {
                                if (!mask[i]) continue;
                                for (std::size_t j = 0; j < c; ++j) ga.data[i * c + j] += g[j] * inv;
                            }
                        });
                    }));
    }

    Var mean_rows(Var a) {
        return masked_mean_rows(a, std::vector<std::uint8_t>(value(a).rows(), 1));
    }

    // Sum of all elements into one scalar.
    Var sum_all(Var a) {
        const Tensor<T>& av = value(a);
        T acc = T(0);
        for (T v : av.data) acc += v;
        bool rg = wants(a);
        return push(Tensor<T>::scalar(acc), rg, !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id](Tape& tp) {
            const T g = tp.nodes_[oid].grad.data[0];
            tp.accum(aid, [&](Tensor<T>& ga) {
                for (auto& v : ga.data) v += g;
            });
        }));
    }

    // Sum of scalars into one scalar.
    Var sum(std::span<const Var> xs) {
        require(!xs.empty(), "sum: empty argument list");
        T acc = T(0);
        bool rg = false;
        std::vector<std::uint32_t> ids;
        ids.reserve(xs.size());
        for (Var v : xs) {
            acc += value(v).item();
            rg = rg || wants(v);
            ids.push_back(v.id);
        }
        return push(Tensor<T>::scalar(acc), rg,
                    !rg ? BackFn() : BackFn([oid = next_id(), ids = std::move(ids)](Tape& tp) {
                        const T g = tp.nodes_[oid].grad.data[0];
                        for (std::uint32_t id : ids)
                            tp.accum(id, [&](Tensor<T>& gi) { gi.data[0] += g; });
                    }));
    }

    Var mean(std::span<const Var> xs) { return scale(sum(xs), T(1) / T(xs.size())); }

    // Concatenation along the feature axis: 1-D vectors end to end, or 2-D
    // blocks side by side (same row count).
    Var concat(std::span<const Var> xs) {
        require(!xs.empty(), "concat: empty argument list");
        const std::size_t rank = value(xs[0]).rank();
        require(rank == 1 || rank == 2, "concat: rank must be 1 or 2");
        std::size_t rows = rank == 2 ? value(xs[0]).rows() : 1;
        std::size_t total = 0;
        bool rg = false;
        for (Var v : xs) {
            const Tensor<T>& t = value(v);
            require(t.rank() == rank && (rank == 1 || t.rows() == rows), "concat: inconsistent shapes");
            total += rank == 1 ? t.shape[0] : t.cols();
            rg = rg || wants(v);
        }
        Tensor<T> out(rank == 1 ? std::vector<std::size_t>{total} : std::vector<std::size_t>{rows, total});
        std::vector<std::uint32_t> ids;
        std::vector<std::size_t> offs;
        std::size_t off = 0;
        for (Var v : xs) {
            const Tensor<T>& t = value(v);
            const std::size_t w = rank == 1 ? t.shape[0] : t.cols();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < w; ++j) out.data[i * total + off + j] = t.data[i * w + j];
            ids.push_back(v.id);
            offs.push_back(off);
            off += w;
        }
        return push(std::move(out), rg,
                    !rg ? BackFn() : BackFn([oid = next_id(), ids = std::move(ids), offs = std::move(offs), rows,
                                             total](Tape& tp) {
                        const Tensor<T>& g = tp.nodes_[oid].grad;
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                            const Tensor<T>& t = tp.nodes_[ids[k]].value;
                            const std::size_t w = t.rank() == 1 ? t.shape[0] : t.cols();
                            tp.accum(ids[k], [&](Tensor<T>& gi) {
                                for (std::size_t i = 0; i < rows; ++i)
                                    for (std::size_t j = 0; j < w; ++j)
                                        gi.data[i * w + j] += g.data[i * total + offs[k] + j];
                            });
                        }
                    }));
    }

    // k vectors of dim c stacked into a (k x c) matrix.
    Var stack_rows(std::span<const Var> xs) {
        require(!xs.empty(), "stack_rows: empty argument list");
        const std::size_t c = value(xs[0]).shape[0];
        bool rg = false;
        Tensor<T> out({xs.size(), c});
        std::vector<std::uint32_t> ids;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const Tensor<T>& t = value(xs[k]);
            require(t.rank() == 1 && t.shape[0] == c, "stack_rows: inconsistent vector dims");
            for (std::size_t j = 0; j < c; ++j) out.at(k, j) = t[j];
            rg = rg || wants(xs[k]);
            ids.push_back(xs[k].id);
        }
        return push(std::move(out), rg,
                    !rg ? BackFn() : BackFn([oid = next_id(), ids = std::move(ids), c](Tape& tp) {
                        const Tensor<T>& g = tp.nodes_[oid].grad;
                        for (std::size_t k = 0; k < ids.size(); ++k)
                            tp.accum(ids[k], [&](Tensor<T>& gi) {
                                for (std::size_t j = 0; j < c; ++j) gi[j] += g.data[k * c + j];
                            });
                    }));
    }

    Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
        const Tensor<T>& av = value(a);
        require(av.rank() == 2 && r0 < r1 && r1 <= av.rows(), "slice_rows: bad range");
        const std::size_t c = av.cols();
        Tensor<T> out({r1 - r0, c});
        std::copy(av.data.begin() + r0 * c, av.data.begin() + r1 * c, out.data.begin());
        bool rg = wants(a);
        return push(std::move(out), rg, !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id, r0, c](Tape& tp) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            tp.accum(aid, [&](Tensor<T>& ga) {
                axpy(g.numel(), T(1), g.data.data(), ga.data.data() + r0 * c);
            });
        }));
    }

    Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
        const Tensor<T>& av = value(a);
        require(av.rank() == 2 && c0 < c1 && c1 <= av.cols(), "slice_cols: bad range");
        const std::size_t r = av.rows(), c = av.cols(), w = c1 - c0;
        Tensor<T> out({r, w});
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out.at(i, j) = av.data[i * c + c0 + j];
        bool rg = wants(a);
        return push(std::move(out), rg, !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id, c0, c, w](Tape& tp) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            const std::size_t r = g.rows();
            tp.accum(aid, [&](Tensor<T>& ga) {
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < w; ++j) ga.data[i * c + c0 + j] += g.data[i * w + j];
            });
        }));
    }

    // Embedding gather: rows of table selected by id. Backward scatter-adds.
    Var gather_rows(Var table, std::vector<std::int32_t> ids) {
        const Tensor<T>& tv = value(table);
        require(tv.rank() == 2, "gather_rows: table must be matrix");
        const std::size_t c = tv.cols();
        Tensor<T> out({ids.size(), c});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            require(ids[i] >= 0 && std::size_t(ids[i]) < tv.rows(),
                    "gather_rows: id " + std::to_string(ids[i]) + " out of range " + std::to_string(tv.rows()));
            for (std::size_t j = 0; j < c; ++j) out.at(i, j) = tv.at(std::size_t(ids[i]), j);
        }
        bool rg = wants(table);
        return push(std::move(out), rg,
                    !rg ? BackFn() : BackFn([oid = next_id(), tid = table.id, ids = std::move(ids), c](Tape& tp) {
                        const Tensor<T>& g = tp.nodes_[oid].grad;
                        tp.accum(tid, [&](Tensor<T>& gt) {
                            for (std::size_t i = 0; i < ids.size(); ++i)
                                for (std::size_t j = 0; j < c; ++j)
                                    gt.data[std::size_t(ids[i]) * c + j] += g.data[i * c + j];
                        });
                    }));
    }

    // Numerically stable row-wise softmax.
    Var softmax_rows(Var a) {
        const Tensor<T>& av = value(a);
        require(av.rank() == 2, "softmax_rows: expected matrix");
        const std::size_t r = av.rows(), c = av.cols();
        Tensor<T> out({r, c});
        for (std::size_t i = 0; i < r; ++i) {
            T mx = av.at(i, 0);
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, av.at(i, j));
            T denom = T(0);
            for (std::size_t j = 0; j < c; ++j) {
                const T e = std::exp(av.at(i, j) - mx);
                out.at(i, j) = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (std::size_t j = 0; j < c; ++j) out.at(i, j) *= inv;
        }
        bool rg = wants(a);
        return push(std::move(out), rg, !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id](Tape& tp) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            const Tensor<T>& y = tp.nodes_[oid].value;
            const std::size_t r = y.rows(), c = y.cols();
            tp.accum(aid, [&](Tensor<T>& ga) {
                for (std::size_t i = 0; i < r; ++i) {
                    T dot = T(0);
                    for (std::size_t j = 0; j < c; ++j) dot += g.data[i * c + j] * y.data[i * c + j];
                    for (std::size_t j = 0; j < c; ++j)
                        ga.data[i * c + j] += y.data[i * c + j] * (g.data[i * c + j] - dot);
                }
            });
        }));
    }

    // Row-wise layer normalization with learned gain/bias.
    Var layer_norm_rows(Var a, Var gain, Var bias, T eps = T(kLayerNormEps)) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& gv = value(gain);
        const Tensor<T>& bv = value(bias);
        require(av.rank() == 2, "layer_norm_rows: expected matrix");
        const std::size_t r = av.rows(), c = av.cols();
        require(gv.rank() == 1 && gv.shape[0] == c && bv.rank() == 1 && bv.shape[0] == c,
                "layer_norm_rows: gain/bias must be [" + std::to_string(c) + "]");
        Tensor<T> out({r, c});
        for (std::size_t i = 0; i < r; ++i) {
            T mean = T(0);
            for (std::size_t j = 0; j < c; ++j) mean += av.at(i, j);
            mean /= T(c);
            T var = T(0);
            for (std::size_t j = 0; j < c; ++j) {
                const T d = av.at(i, j) - mean;
                var += d * d;
            }
            var /= T(c);
            const T inv_std = T(1) / std::sqrt(var + eps);
            for (std::size_t j = 0; j < c; ++j)
                out.at(i, j) = (av.at(i, j) - mean) * inv_std * gv[j] + bv[j];
        }
        bool rg = wants(a) || wants(gain) || wants(bias);
        return push(std::move(out), rg,
                    !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id, gid = gain.id, bid = bias.id,
                                             eps](Tape& tp) {
                        const Tensor<T>& g = tp.nodes_[oid].grad;
                        const Tensor<T>& x = tp.nodes_[aid].value;
                        const Tensor<T>& gn = tp.nodes_[gid].value;
                        const std::size_t r = x.rows(), c = x.cols();
                        std::vector<T> xhat(c);
                        for (std::size_t i = 0; i < r; ++i) {
                            T mean = T(0);
                            for (std::size_t j = 0; j < c; ++j) mean += x.at(i, j);
                            mean /= T(c);
                            T var = T(0);
                            for (std::size_t j = 0; j < c; ++j) {
                                const T d = x.at(i, j) - mean;
                                var += d * d;
                            }
                            var /= T(c);
                            const T inv_std = T(1) / std::sqrt(var + eps);
                            for (std::size_t j = 0; j < c; ++j) xhat[j] = (x.at(i, j) - mean) * inv_std;
                            tp.accum(gid, [&](Tensor<T>& gg) {
                                for (std::size_t j = 0; j < c; ++j) gg[j] += g.data[i * c + j] * xhat[j];
                            });
                            tp.accum(bid, [&](Tensor<T>& gb) {
                                for (std::size_t j = 0; j < c; ++j) gb[j] += g.data[i * c + j];
                            });
                            tp.accum(aid, [&](Tensor<T>& ga) {
                                T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                                for (std::size_t j = 0; j < c; ++j) {
                                    const T dxh = g.data[i * c + j] * gn[j];
                                    sum_dxhat += dxh;
                                    sum_dxhat_xhat += dxh * xhat[j];
                                }
                                for (std::size_t j = 0; j < c; ++j) {
                                    const T dxh = g.data[i * c + j] * gn[j];
                                    ga.data[i * c + j] +=
                                        inv_std * (dxh - sum_dxhat / T(c) - xhat[j] * sum_dxhat_xhat / T(c));
                                }
                            });
                        }
                    }));
    }

    // v / (||v|| + eps) for a vector.
    Var l2_normalize(Var a) {
        const Tensor<T>& av = value(a);
        require(av.rank() == 1, "l2_normalize: expected vector, got " + shape_str(av.shape));
        T nrm = T(0);
        for (T v : av.data) nrm += v * v;
        nrm = std::sqrt(nrm);
        const T q = nrm + T(kCosineEps);
        Tensor<T> out = av;
        for (auto& v : out.data) v /= q;
        bool rg = wants(a);
        return push(std::move(out), rg, !rg ? BackFn() : BackFn([oid = next_id(), aid = a.id, nrm, q](Tape& tp) {
            const Tensor<T>& g = tp.nodes_[oid].grad;
            const Tensor<T>& x = tp.nodes_[aid].value;
            const std::size_t n = x.numel();
            T gdotx = T(0);
            for (std::size_t i = 0; i < n; ++i) gdotx += g[i] * x[i];
            const T r = std::max(nrm, T(1e-12));
            tp.accum(aid, [&](Tensor<T>& ga) {
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / q - x[i] * gdotx / (r * q * q);
            });
        }));
    }

    // c(u, v) = <u, v> / (||u|| ||v|| + eps), scalar output in [-1, 1].
    Var cosine_similarity(Var u, Var v) {
        const Tensor<T>& uv = value(u);
        const Tensor<T>& vv = value(v);
        require(uv.rank() == 1 && vv.rank() == 1 && uv.shape[0] == vv.shape[0],
                "cosine_similarity: need equal-length vectors, got " + shape_str(uv.shape) + " and " +
                    shape_str(vv.shape));
        const std::size_t n = uv.shape[0];
        T dot = T(0), nu = T(0), nv = T(0);
        for (std::size_t i = 0; i < n; ++i) {
            dot += uv[i] * vv[i];
            nu += uv[i] * uv[i];
            nv += vv[i] * vv[i];
        }
        nu = std::sqrt(nu);
        nv = std::sqrt(nv);
        const T p = nu * nv + T(kCosineEps);
        const T c = dot / p;
        bool rg = wants(u) || wants(v);
        return push(Tensor<T>::scalar(c), rg,
                    !rg ? BackFn() : BackFn([oid = next_id(), uid = u.id, vid = v.id, dot, nu, nv, p](Tape& tp) {
                        const T g = tp.nodes_[oid].grad.data[0];
                        const Tensor<T>& uv = tp.nodes_[uid].value;
                        const Tensor<T>& vv = tp.nodes_[vid].value;
                        const std::size_t n = uv.numel();
                        const T su = std::max(nu, T(1e-12));
                        const T sv = std::max(nv, T(1e-12));
                        tp.accum(uid, [&](Tensor<T>& gu) {
                            for (std::size_t i = 0; i < n; ++i)
                                gu[i] += g * (vv[i] / p - dot * nv * uv[i] / (su * p * p));
                        });
                        tp.accum(vid, [&](Tensor<T>& gv) {
                            for (std::size_t i = 0; i < n; ++i)
                                gv[i] += g * (uv[i] / p - dot * nu * vv[i] / (sv * p * p));
                        });
                    }));
    }

  private:
    using BackFn = std::function<void(Tape&)>;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad; // allocated lazily during backward
        bool requires_grad = false;
        BackFn back;
    };

    std::vector<Node> nodes_;
    bool grad_enabled_;
    bool backward_done_ = false;

    const Node& node(Var v) const {
        if (!v.valid() || v.id >= nodes_.size()) throw std::runtime_error("tape: invalid var");
        return nodes_[v.id];
    }
    Node& node(Var v) { return const_cast<Node&>(static_cast<const Tape*>(this)->node(v)); }

    std::uint32_t next_id() const { return std::uint32_t(nodes_.size()); }

    bool wants(Var v) const { return grad_enabled_ && node(v).requires_grad; }

    Var push(Tensor<T> value, bool requires_grad, BackFn back) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{std::uint32_t(nodes_.size() - 1)};
    }

    Tensor<T>& grad_buf(std::uint32_t id) {
        Node& n = nodes_[id];
        if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape);
        return n.grad;
    }

    // Run fn on the parent's gradient buffer if that parent participates.
    template <typename Fn>
    void accum(std::uint32_t id, Fn&& fn) {
        if (!nodes_[id].requires_grad) return;
        fn(grad_buf(id));
    }

    template <typename BinBack>
    Var unary_or_binary(Tensor<T> out, Var a, Var b, BinBack&& bb) {
        bool rg = wants(a) || wants(b);
        if (!rg) return push(std::move(out), false, nullptr);
        return push(std::move(out), true,
                    BackFn([oid = next_id(), aid = a.id, bid = b.id, bb = std::forward<BinBack>(bb)](Tape& tp) {
                        bb(tp, oid, aid, bid);
                    }));
    }

    static void require(bool cond, const std::string& msg) {
        if (!cond) throw std::runtime_error(msg);
    }
};

} // namespace xmrr
