#include "movgan/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "movgan/errors.hpp"

namespace movgan {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::make_node(Tensor value, std::vector<int> parents,
                    std::function<void(Tape&)> backward) {
    Node n;
    n.value = std::move(value);
    for (int p : parents)
        if (nodes_[static_cast<size_t>(p)].requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_live) {
        n.grad = Tensor(n.value.shape());
        n.grad_live = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(Var v) { return grad_buffer(v.id); }

void Tape::backward(Var output) {
    if (value(output).size() != 1)
        throw ConfigError("backward() without seed requires a scalar output");
    backward(output, Tensor::scalar(1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
    if (!value(output).same_shape(seed)) throw ConfigError("backward seed shape mismatch");
    Tensor& g = grad_buffer(output.id);
    for (int64_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    for (int i = output.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.grad_live && n.backward) n.backward(*this);
    }
}

void Tape::zero_grad() {
    for (Node& n : nodes_) {
        n.grad = Tensor();
        n.grad_live = false;
    }
}

namespace ad {

namespace {

// Accumulates into a parent's gradient only if that parent participates in
// differentiation.
void accum(Tape& t, int id, const std::function<void(Tensor&)>& fn) {
    // requires_grad is checked via node lookup through grad(): nodes that do
    // not require grad never get a backward call routed to them, but guard
    // anyway to avoid allocating dead buffers.
    Var v{&t, id};
    if (!t.requires_grad(v)) return;
    fn(t.grad_buffer(id));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw ConfigError(std::string(op) + ": shape mismatch " + a.value().shape_string() +
                          " vs " + b.value().shape_string());
}

Var unary(Var a, Tensor out, std::function<void(const Tensor&, Tensor&)> pull) {
    Tape& t = *a.tape;
    int aid = a.id;
    int oid = static_cast<int>(t.node_count());
    return t.make_node(std::move(out), {aid}, [aid, oid, pull](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        accum(tp, aid, [&](Tensor& ga) { pull(g, ga); });
    });
}

}  // namespace

Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Tape& t = *a.tape;
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    int aid = a.id, bid = b.id;
    int oid = static_cast<int>(t.node_count());
    return t.make_node(std::move(out), {aid, bid}, [aid, bid, oid](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        accum(tp, aid, [&](Tensor& ga) {
            for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
        accum(tp, bid, [&](Tensor& gb) {
            for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        });
    });
}

Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Tape& t = *a.tape;
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    int aid = a.id, bid = b.id;
    int oid = static_cast<int>(t.node_count());
    return t.make_node(std::move(out), {aid, bid}, [aid, bid, oid](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        accum(tp, aid, [&](Tensor& ga) {
            for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
        accum(tp, bid, [&](Tensor& gb) {
            for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        });
    });
}

Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Tape& t = *a.tape;
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    int aid = a.id, bid = b.id;
    int oid = static_cast<int>(t.node_count());
    return t.make_node(std::move(out), {aid, bid}, [aid, bid, oid](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        const Tensor& av = tp.value(Var{&tp, aid});
        const Tensor& bv2 = tp.value(Var{&tp, bid});
        accum(tp, aid, [&](Tensor& ga) {
            for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
        });
        accum(tp, bid, [&](Tensor& gb) {
            for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        });
    });
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
    return unary(a, std::move(out), [s](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Var add_scalar(Var a, double s) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] += s;
    return unary(a, std::move(out), [](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var sin_act(Var a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::sin(out[i]);
    Tensor xv = a.value();
    return unary(a, std::move(out), [xv](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += std::cos(xv[i]) * g[i];
    });
}

Var tanh_act(Var a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    Tensor yv = out;
    return unary(a, std::move(out), [yv](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += (1.0 - yv[i] * yv[i]) * g[i];
    });
}

Var leaky_relu(Var a, double slope) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i)
        if (out[i] < 0.0) out[i] *= slope;
    Tensor xv = a.value();
    return unary(a, std::move(out), [xv, slope](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += (xv[i] >= 0.0 ? 1.0 : slope) * g[i];
    });
}

Var softplus(Var a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) {
        double x = out[i];
        out[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    }
    Tensor xv = a.value();
    return unary(a, std::move(out), [xv](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < g.size(); ++i) {
            double x = xv[i];
            double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                  : std::exp(x) / (1.0 + std::exp(x));
            ga[i] += sig * g[i];
        }
    });
}

Var square(Var a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    Tensor xv = a.value();
    return unary(a, std::move(out), [xv](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * xv[i] * g[i];
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (int64_t i = 0; i < a.value().size(); ++i) s += a.value()[i];
    return unary(a, Tensor::scalar(s), [](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
    });
}

Var mean(Var a) {
    int64_t n = a.value().size();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += a.value()[i];
    double inv = 1.0 / static_cast<double>(n);
    return unary(a, Tensor::scalar(s * inv), [inv](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * inv;
    });
}

Var dot_const(Var a, const Tensor& weights) {
    if (a.value().size() != weights.size()) throw ConfigError("dot_const size mismatch");
    double s = 0.0;
    for (int64_t i = 0; i < weights.size(); ++i) s += a.value()[i] * weights[i];
    Tensor w = weights;
    return unary(a, Tensor::scalar(s), [w](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * w[i];
    });
}

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw ConfigError("matmul: incompatible shapes " + av.shape_string() + " x " +
                          bv.shape_string());
    const int r = av.dim(0), k = av.dim(1), c = bv.dim(1);
    Tensor out({r, c});
    {
        ConstMatMap A(av.data(), r, k), B(bv.data(), k, c);
        MatMap O(out.data(), r, c);
        O.noalias() = A * B;
    }
    Tape& t = *a.tape;
    int aid = a.id, bid = b.id;
    int oid = static_cast<int>(t.node_count());
    return t.make_node(std::move(out), {aid, bid}, [aid, bid, oid, r, k, c](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        ConstMatMap G(g.data(), r, c);
        const Tensor& av2 = tp.value(Var{&tp, aid});
        const Tensor& bv2 = tp.value(Var{&tp, bid});
        ConstMatMap A(av2.data(), r, k), B(bv2.data(), k, c);
        accum(tp, aid, [&](Tensor& ga) {
            MatMap GA(ga.data(), r, k);
            GA.noalias() += G * B.transpose();
        });
        accum(tp, bid, [&](Tensor& gb) {
            MatMap GB(gb.data(), k, c);
            GB.noalias() += A.transpose() * G;
        });
    });
}

Var add_rowvec(Var x, Var v) {
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    if (xv.rank() != 2 || vv.rank() != 1 || xv.dim(1) != vv.dim(0))
        throw ConfigError("add_rowvec: shapes " + xv.shape_string() + " + " + vv.shape_string());
    const int r = xv.dim(0), c = xv.dim(1);
    Tensor out = xv;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) += vv.at(j);
    Tape& t = *x.tape;
    int xid = x.id, vid = v.id;
    int oid = static_cast<int>(t.node_count());
    return t.make_node(std::move(out), {xid, vid}, [xid, vid, oid, r, c](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        accum(tp, xid, [&](Tensor& gx) {
            for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
        accum(tp, vid, [&](Tensor& gv) {
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gv[j] += g.at(i, j);
        });
    });
}

Var mul_rowvec(Var x, Var v) {
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    if (xv.rank() != 2 || vv.rank() != 1 || xv.dim(1) != vv.dim(0))
        throw ConfigError("mul_rowvec: shapes " + xv.shape_string() + " * " + vv.shape_string());
    const int r = xv.dim(0), c = xv.dim(1);
    Tensor out = xv;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) *= vv.at(j);
    Tape& t = *x.tape;
    int xid = x.id, vid = v.id;
    int oid = static_cast<int>(t.node_count());
    return t.make_node(std::move(out), {xid, vid}, [xid, vid, oid, r, c](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        const Tensor& xv2 = tp.value(Var{&tp, xid});
        const Tensor& vv2 = tp.value(Var{&tp, vid});
        accum(tp, xid, [&](Tensor& gx) {
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gx.at(i, j) += g.at(i, j) * vv2.at(j);
        });
        accum(tp, vid, [&](Tensor& gv) {
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gv[j] += g.at(i, j) * xv2.at(i, j);
        });
    });
}

Var reshape(Var a, std::vector<int> shape) {
    Tensor out = a.value().reshaped(shape);
    return unary(a, std::move(out), [](const Tensor& g, Tensor& ga) {
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw ConfigError("concat of zero tensors");
    const int rank = parts[0].value().rank();
    if (axis < 0 || axis >= rank) throw ConfigError("concat axis out of range");
    std::vector<int> out_shape = parts[0].value().shape();
    int axis_total = 0;
    for (const Var& p : parts) {
        const auto& s = p.value().shape();
        if (static_cast<int>(s.size()) != rank) throw ConfigError("concat rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis && s[d] != out_shape[d]) throw ConfigError("concat dim mismatch");
        axis_total += s[axis];
    }
    out_shape[axis] = axis_total;

    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[d];
    for (int d = axis + 1; d < rank; ++d) inner *= out_shape[d];

    Tensor out(out_shape);
    std::vector<int64_t> offsets;  // start of each part inside one outer row, in elements
    {
        int64_t off = 0;
        for (const Var& p : parts) {
            offsets.push_back(off);
            off += static_cast<int64_t>(p.value().dim(axis)) * inner;
        }
    }
    const int64_t row = static_cast<int64_t>(axis_total) * inner;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& pv = parts[pi].value();
        const int64_t block = static_cast<int64_t>(pv.dim(axis)) * inner;
        for (int64_t o = 0; o < outer; ++o)
            std::copy(pv.data() + o * block, pv.data() + (o + 1) * block,
                      out.data() + o * row + offsets[pi]);
    }

    Tape& t = *parts[0].tape;
    std::vector<int> pids;
    std::vector<int64_t> blocks;
    for (const Var& p : parts) {
        pids.push_back(p.id);
        blocks.push_back(static_cast<int64_t>(p.value().dim(axis)) * inner);
    }
    int oid = static_cast<int>(t.node_count());
    return t.make_node(std::move(out), pids,
                       [pids, offsets, blocks, outer, row, oid](Tape& tp) {
                           const Tensor& g = tp.grad_buffer(oid);
                           for (size_t pi = 0; pi < pids.size(); ++pi) {
                               accum(tp, pids[pi], [&](Tensor& gp) {
                                   for (int64_t o = 0; o < outer; ++o) {
                                       const double* src = g.data() + o * row + offsets[pi];
                                       double* dst = gp.data() + o * blocks[pi];
                                       for (int64_t i = 0; i < blocks[pi]; ++i) dst[i] += src[i];
                                   }
                               });
                           }
                       });
}

Var stack0(const std::vector<Var>& parts) {
    if (parts.empty()) throw ConfigError("stack0 of zero tensors");
    std::vector<int> shape = parts[0].value().shape();
    for (const Var& p : parts)
        if (p.value().shape() != shape) throw ConfigError("stack0 shape mismatch");
    std::vector<int> out_shape;
    out_shape.push_back(static_cast<int>(parts.size()));
    out_shape.insert(out_shape.end(), shape.begin(), shape.end());
    Tensor out(out_shape);
    const int64_t block = parts[0].value().size();
    for (size_t i = 0; i < parts.size(); ++i)
        std::copy(parts[i].value().data(), parts[i].value().data() + block,
                  out.data() + static_cast<int64_t>(i) * block);
    Tape& t = *parts[0].tape;
    std::vector<int> pids;
    for (const Var& p : parts) pids.push_back(p.id);
    int oid = static_cast<int>(t.node_count());
    return t.make_node(std::move(out), pids, [pids, block, oid](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        for (size_t i = 0; i < pids.size(); ++i) {
            accum(tp, pids[i], [&](Tensor& gp) {
                const double* src = g.data() + static_cast<int64_t>(i) * block;
                for (int64_t k = 0; k < block; ++k) gp[k] += src[k];
            });
        }
    });
}

Var slice0(Var a, int index) {
    const Tensor& av = a.value();
    if (av.rank() < 1) throw ConfigError("slice0 needs rank >= 1");
    if (index < 0 || index >= av.dim(0)) throw ConfigError("slice0 index out of range");
    std::vector<int> shape(av.shape().begin() + 1, av.shape().end());
    const int64_t block = Tensor::count(shape);
    Tensor out(shape);
    std::copy(av.data() + index * block, av.data() + (index + 1) * block, out.data());
    return unary(a, std::move(out), [index, block](const Tensor& g, Tensor& ga) {
        double* dst = ga.data() + index * block;
        for (int64_t i = 0; i < block; ++i) dst[i] += g[i];
    });
}

Var add_many(const std::vector<Var>& parts) {
    if (parts.empty()) throw ConfigError("add_many of zero tensors");
    Tensor out = parts[0].value();
    for (size_t i = 1; i < parts.size(); ++i) {
        check_same_shape(parts[0], parts[i], "add_many");
        const Tensor& pv = parts[i].value();
        for (int64_t k = 0; k < out.size(); ++k) out[k] += pv[k];
    }
    Tape& t = *parts[0].tape;
    std::vector<int> pids;
    for (const Var& p : parts) pids.push_back(p.id);
    int oid = static_cast<int>(t.node_count());
    return t.make_node(std::move(out), pids, [pids, oid](Tape& tp) {
        const Tensor& g = tp.grad_buffer(oid);
        for (int pid : pids) {
            accum(tp, pid, [&](Tensor& gp) {
                for (int64_t k = 0; k < g.size(); ++k) gp[k] += g[k];
            });
        }
    });
}

Var broadcast_rows(Var v, int rows) {
    const Tensor& vv = v.value();
    if (vv.rank() != 1) throw ConfigError("broadcast_rows expects a vector");
    const int c = vv.dim(0);
    Tensor out({rows, c});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) = vv.at(j);
    return unary(v, std::move(out), [rows, c](const Tensor& g, Tensor& gv) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < c; ++j) gv[j] += g.at(i, j);
    });
}

namespace {

void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int ho, int wo, RowMat& col) {
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    col.setZero(static_cast<Eigen::Index>(n) * ho * wo, static_cast<Eigen::Index>(ci) * kh * kw);
    for (int in = 0; in < n; ++in)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                const int64_t r = (static_cast<int64_t>(in) * ho + i) * wo + j;
                double* dst = col.data() + r * col.cols();
                for (int c = 0; c < ci; ++c)
                    for (int di = 0; di < kh; ++di) {
                        const int si = i * stride - pad + di;
                        if (si < 0 || si >= h) {
                            dst += kw;
                            continue;
                        }
                        for (int dj = 0; dj < kw; ++dj) {
                            const int sj = j * stride - pad + dj;
                            *dst++ = (sj < 0 || sj >= w) ? 0.0 : x.at(in, c, si, sj);
                        }
                    }
            }
}

void col2im_accum(const RowMat& col, int kh, int kw, int stride, int pad, int ho, int wo,
                  Tensor& dx) {
    const int n = dx.dim(0), ci = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
    for (int in = 0; in < n; ++in)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                const int64_t r = (static_cast<int64_t>(in) * ho + i) * wo + j;
                const double* src = col.data() + r * col.cols();
                for (int c = 0; c < ci; ++c)
                    for (int di = 0; di < kh; ++di) {
                        const int si = i * stride - pad + di;
                        if (si < 0 || si >= h) {
                            src += kw;
                            continue;
                        }
                        for (int dj = 0; dj < kw; ++dj) {
                            const int sj = j * stride - pad + dj;
                            double v = *src++;
                            if (sj >= 0 && sj < w) dx.at(in, c, si, sj) += v;
                        }
                    }
            }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 4 || wv.rank() != 4) throw ConfigError("conv2d expects [N,C,H,W] and [Co,Ci,kh,kw]");
    if (wv.dim(1) != xv.dim(1))
        throw ConfigError("conv2d channel mismatch: input " + xv.shape_string() + " weight " +
                          wv.shape_string());
    if (bv.rank() != 1 || bv.dim(0) != wv.dim(0)) throw ConfigError("conv2d bias shape");
    const int n = xv.dim(0), h = xv.dim(2), wd = xv.dim(3);
    const int co = wv.dim(0), ci = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ConfigError("conv2d output collapsed to zero size");

    RowMat col;
    im2col(xv, kh, kw, stride, pad, ho, wo, col);
    ConstMatMap wmat(wv.data(), co, static_cast<Eigen::Index>(ci) * kh * kw);
    RowMat ymat = col * wmat.transpose();  // [N*ho*wo, co]

    Tensor out({n, co, ho, wo});
    for (int in = 0; in < n; ++in)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                const int64_t r = (static_cast<int64_t>(in) * ho + i) * wo + j;
                for (int c = 0; c < co; ++c) out.at(in, c, i, j) = ymat(r, c) + bv.at(c);
            }

    Tape& t = *x.tape;
    int xid = x.id, wid = w.id, bid = b.id;
    int oid = static_cast<int>(t.node_count());
    return t.make_node(
        std::move(out), {xid, wid, bid},
        [=](Tape& tp) {
            const Tensor& g = tp.grad_buffer(oid);
            RowMat gmat(static_cast<Eigen::Index>(n) * ho * wo, co);
            for (int in = 0; in < n; ++in)
                for (int i = 0; i < ho; ++i)
                    for (int j = 0; j < wo; ++j) {
                        const int64_t r = (static_cast<int64_t>(in) * ho + i) * wo + j;
                        for (int c = 0; c < co; ++c) gmat(r, c) = g.at(in, c, i, j);
                    }
            accum(tp, bid, [&](Tensor& gb) {
                for (int c = 0; c < co; ++c) gb[c] += gmat.col(c).sum();
            });
            const Tensor& xv2 = tp.value(Var{&tp, xid});
            const Tensor& wv2 = tp.value(Var{&tp, wid});
            // col is recomputed here instead of captured: the graph holds many
            // conv nodes at once and the patch matrices dominate memory.
            RowMat col2;
            im2col(xv2, kh, kw, stride, pad, ho, wo, col2);
            accum(tp, wid, [&](Tensor& gw) {
                MatMap gwm(gw.data(), co, static_cast<Eigen::Index>(ci) * kh * kw);
                gwm.noalias() += gmat.transpose() * col2;
            });
            accum(tp, xid, [&](Tensor& gx) {
                ConstMatMap wm(wv2.data(), co, static_cast<Eigen::Index>(ci) * kh * kw);
                RowMat dcol = gmat * wm;
                col2im_accum(dcol, kh, kw, stride, pad, ho, wo, gx);
            });
        });
}

Var upsample2x(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ConfigError("upsample2x expects [N,C,H,W]");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor out({n, c, 2 * h, 2 * w});
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    double v = xv.at(in, ic, i, j);
                    out.at(in, ic, 2 * i, 2 * j) = v;
                    out.at(in, ic, 2 * i, 2 * j + 1) = v;
                    out.at(in, ic, 2 * i + 1, 2 * j) = v;
                    out.at(in, ic, 2 * i + 1, 2 * j + 1) = v;
                }
    return unary(x, std::move(out), [n, c, h, w](const Tensor& g, Tensor& gx) {
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                        gx.at(in, ic, i, j) += g.at(in, ic, 2 * i, 2 * j) +
                                               g.at(in, ic, 2 * i, 2 * j + 1) +
                                               g.at(in, ic, 2 * i + 1, 2 * j) +
                                               g.at(in, ic, 2 * i + 1, 2 * j + 1);
    });
}

Var avg_pool(Var x, int k) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ConfigError("avg_pool expects [N,C,H,W]");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (h % k != 0 || w % k != 0) throw ConfigError("avg_pool size not divisible by kernel");
    const int ho = h / k, wo = w / k;
    const double inv = 1.0 / (k * k);
    Tensor out({n, c, ho, wo});
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic)
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j) {
                    double s = 0.0;
                    for (int di = 0; di < k; ++di)
                        for (int dj = 0; dj < k; ++dj) s += xv.at(in, ic, i * k + di, j * k + dj);
                    out.at(in, ic, i, j) = s * inv;
                }
    return unary(x, std::move(out), [n, c, ho, wo, k, inv](const Tensor& g, Tensor& gx) {
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic)
                for (int i = 0; i < ho; ++i)
                    for (int j = 0; j < wo; ++j) {
                        double gv = g.at(in, ic, i, j) * inv;
                        for (int di = 0; di < k; ++di)
                            for (int dj = 0; dj < k; ++dj)
                                gx.at(in, ic, i * k + di, j * k + dj) += gv;
                    }
    });
}

Var global_avg_pool(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ConfigError("global_avg_pool expects [N,C,H,W]");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const double inv = 1.0 / (static_cast<double>(h) * w);
    Tensor out({n, c});
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            double s = 0.0;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) s += xv.at(in, ic, i, j);
            out.at(in, ic) = s * inv;
        }
    return unary(x, std::move(out), [n, c, h, w, inv](const Tensor& g, Tensor& gx) {
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                double gv = g.at(in, ic) * inv;
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) gx.at(in, ic, i, j) += gv;
            }
    });
}

Var select_rows(Var table, std::vector<int> ids) {
    const Tensor& tv = table.value();
    if (tv.rank() != 2) throw ConfigError("select_rows expects [C,E]");
    const int e = tv.dim(1);
    Tensor out({static_cast<int>(ids.size()), e});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tv.dim(0))
            throw ConfigError("select_rows id " + std::to_string(ids[i]) + " out of range");
        for (int j = 0; j < e; ++j) out.at(static_cast<int>(i), j) = tv.at(ids[i], j);
    }
    return unary(table, std::move(out), [ids, e](const Tensor& g, Tensor& gt) {
        for (size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < e; ++j) gt.at(ids[i], j) += g.at(static_cast<int>(i), j);
    });
}

Var rasterize(Var table, const FrameLayout& layout, int h, int w) {
    Tensor out = rasterize_layout(layout, table.value(), h, w);
    FrameLayout lay = layout;
    return unary(table, std::move(out), [lay, h, w](const Tensor& g, Tensor& gt) {
        const int e = gt.dim(1);
        for (int idx : canonical_order(lay)) {
            const LayoutInstance& inst = lay.instances[idx];
            auto [c0, c1] = coverage_range(inst.box.x0, inst.box.x1, w);
            auto [r0, r1] = coverage_range(inst.box.y0, inst.box.y1, h);
            for (int k = 0; k < e; ++k) {
                double acc = 0.0;
                for (int r = r0; r < r1; ++r)
                    for (int c = c0; c < c1; ++c) acc += g.at(k, r, c);
                gt.at(inst.category_id, k) += acc;
            }
        }
    });
}

Var stn_place(Var feature, const BoundingBox& box, int h, int w) {
    Tensor out = movgan::stn_place(feature.value(), box, h, w);
    BoundingBox b = box;
    return unary(feature, std::move(out), [b](const Tensor& g, Tensor& gf) {
        stn_place_backward(g, b, gf);
    });
}

Var stn_crop(Var image, const BoundingBox& box, int out_h, int out_w) {
    Tensor out = movgan::stn_crop(image.value(), box, out_h, out_w);
    BoundingBox b = box;
    return unary(image, std::move(out), [b](const Tensor& g, Tensor& gi) {
        stn_crop_backward(g, b, gi);
    });
}

}  // namespace ad

}  // namespace movgan
