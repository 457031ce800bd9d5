#pragma once

#include <Eigen/Core>
#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "efd/tensor.hpp"

namespace efd {

// Handle into a tape. Carries the owning tape's serial so cross-tape misuse
// is a structured error instead of silent garbage.
struct Val {
    std::int32_t id = -1;
    std::uint32_t tape = 0;
};

// Define-by-run reverse-mode tape. Every primitive records its output as a
// node; nodes are topologically ordered by construction. The tape is rebuilt
// each forward pass and confined to one execution context.
template <class S>
class Tape {
public:
    Tape() : serial_(next_serial()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- entering values ----------------------------------------------------

    Val leaf(const Tensor<S>& t) { return push(t.shape, t.data, t.requires_grad, "leaf", nullptr); }

    // Leaf bound to an external parameter: backward() accumulates the node
    // gradient into p->grad. The parameter is read-only during the pass.
    Val param(Tensor<S>* p) {
        Val v = push(p->shape, p->data, true, "param", p);
        return v;
    }

    Val constant(Shape sh, S fill = S(0)) {
        return push(sh, std::vector<S>(static_cast<size_t>(sh.numel()), fill), false, "const",
                    nullptr);
    }
    Val constant(Shape sh, std::vector<S> values) {
        if (static_cast<Index>(values.size()) != sh.numel())
            throw ShapeError("const: value count does not match " + sh.str());
        return push(sh, std::move(values), false, "const", nullptr);
    }

    // --- primitives ---------------------------------------------------------

    Val matmul(Val a, Val b) {
        const Node& A = node(a);
        const Node& B = node(b);
        if (A.shape.rank() != 2 || B.shape.rank() != 2)
            throw ShapeError("matmul: expects 2-d operands, got " + A.shape.str() + " and " +
                             B.shape.str());
        const Index m = A.shape[0], k = A.shape[1], k2 = B.shape[0], n = B.shape[1];
        if (k != k2)
            throw ShapeError("matmul: inner dims mismatch " + A.shape.str() + " vs " +
                             B.shape.str());
        std::vector<S> out(static_cast<size_t>(m * n));
        emap(out.data(), m, n) = cmap(A.value.data(), m, k) * cmap(B.value.data(), k, n);
        Val o = push({m, n}, std::move(out), A.requires_grad || B.requires_grad, "matmul", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, bi = b.id, oi = o.id, m, k, n](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& B = t.nodes_[bi];
                Node& O = t.nodes_[oi];
                if (A.requires_grad) {
                    t.ensure_grad(A);
                    emap(A.grad.data(), m, k) +=
                        cmap(O.grad.data(), m, n) * cmap(B.value.data(), k, n).transpose();
                }
                if (B.requires_grad) {
                    t.ensure_grad(B);
                    emap(B.grad.data(), k, n) +=
                        cmap(A.value.data(), m, k).transpose() * cmap(O.grad.data(), m, n);
                }
            };
        }
        return o;
    }

    Val add(Val a, Val b) { return binary_elementwise(a, b, "add"); }
    Val mul(Val a, Val b) { return binary_elementwise(a, b, "mul"); }

    Val scale(Val a, S c) { return affine_scalar(a, c, S(0)); }

    // y = mul*x + add, elementwise with scalar constants.
    Val affine_scalar(Val a, S mul, S add) {
        const Node& A = node(a);
        std::vector<S> out(A.value.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = mul * A.value[i] + add;
        Val o = push(A.shape, std::move(out), A.requires_grad, "affine_scalar", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, oi = o.id, mul](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& O = t.nodes_[oi];
                t.ensure_grad(A);
                for (size_t i = 0; i < A.grad.size(); ++i) A.grad[i] += mul * O.grad[i];
            };
        }
        return o;
    }

    Val concat(const std::vector<Val>& parts, int axis) {
        if (parts.empty()) throw ShapeError("concat: no inputs");
        const Node& first = node(parts[0]);
        const int rank = first.shape.rank();
        if (axis < 0) axis += rank;
        if (rank < 1 || rank > 2 || axis < 0 || axis >= rank)
            throw ShapeError("concat: unsupported rank/axis for " + first.shape.str());
        bool rg = false;
        Index total = 0;
        for (Val p : parts) {
            const Node& n = node(p);
            if (n.shape.rank() != rank)
                throw ShapeError("concat: rank mismatch " + n.shape.str() + " vs " +
                                 first.shape.str());
            for (int d = 0; d < rank; ++d)
                if (d != axis && n.shape[d] != first.shape[d])
                    throw ShapeError("concat: extent mismatch on axis " + std::to_string(d) +
                                     ": " + n.shape.str() + " vs " + first.shape.str());
            total += n.shape[axis];
            rg = rg || n.requires_grad;
        }
        Shape osh = first.shape;
        osh.dims[static_cast<size_t>(axis)] = total;
        std::vector<S> out(static_cast<size_t>(osh.numel()));
        if (rank == 1 || axis == 0) {
            size_t off = 0;
            for (Val p : parts) {
                const Node& n = node(p);
                std::memcpy(out.data() + off, n.value.data(), n.value.size() * sizeof(S));
                off += n.value.size();
            }
        } else {  // rank 2, axis 1
            const Index rows = first.shape[0];
            Index col_off = 0;
            for (Val p : parts) {
                const Node& n = node(p);
                const Index c = n.shape[1];
                for (Index r = 0; r < rows; ++r)
                    std::memcpy(out.data() + r * total + col_off, n.value.data() + r * c,
                                static_cast<size_t>(c) * sizeof(S));
                col_off += c;
            }
        }
        Val o = push(osh, std::move(out), rg, "concat", nullptr);
        if (rg) {
            std::vector<std::int32_t> ids;
            ids.reserve(parts.size());
            for (Val p : parts) ids.push_back(p.id);
            node(o).back = [ids, oi = o.id, axis, rank](Tape& t) {
                Node& O = t.nodes_[oi];
                if (rank == 1 || axis == 0) {
                    size_t off = 0;
                    for (auto id : ids) {
                        Node& P = t.nodes_[id];
                        if (P.requires_grad) {
                            t.ensure_grad(P);
                            for (size_t i = 0; i < P.value.size(); ++i)
                                P.grad[i] += O.grad[off + i];
                        }
                        off += P.value.size();
                    }
                } else {
                    const Index rows = O.shape[0], total = O.shape[1];
                    Index col_off = 0;
                    for (auto id : ids) {
                        Node& P = t.nodes_[id];
                        const Index c = P.shape[1];
                        if (P.requires_grad) {
                            t.ensure_grad(P);
                            for (Index r = 0; r < rows; ++r)
                                for (Index j = 0; j < c; ++j)
                                    P.grad[static_cast<size_t>(r * c + j)] +=
                                        O.grad[static_cast<size_t>(r * total + col_off + j)];
                        }
                        col_off += c;
                    }
                }
            };
        }
        return o;
    }

    Val slice(Val a, int axis, Index begin, Index end) {
        const Node& A = node(a);
        const int rank = A.shape.rank();
        if (axis < 0) axis += rank;
        if (rank < 1 || rank > 2 || axis < 0 || axis >= rank)
            throw ShapeError("slice: unsupported rank/axis for " + A.shape.str());
        if (begin < 0 || end > A.shape[axis] || begin >= end)
            throw ShapeError("slice: bounds [" + std::to_string(begin) + "," +
                             std::to_string(end) + ") invalid for " + A.shape.str());
        Shape osh = A.shape;
        osh.dims[static_cast<size_t>(axis)] = end - begin;
        std::vector<S> out(static_cast<size_t>(osh.numel()));
        const Index cols = rank == 2 ? A.shape[1] : 1;
        if (rank == 1 || axis == 0) {
            std::memcpy(out.data(), A.value.data() + begin * cols,
                        static_cast<size_t>((end - begin) * cols) * sizeof(S));
        } else {
            const Index rows = A.shape[0], w = end - begin;
            for (Index r = 0; r < rows; ++r)
                std::memcpy(out.data() + r * w, A.value.data() + r * cols + begin,
                            static_cast<size_t>(w) * sizeof(S));
        }
        Val o = push(osh, std::move(out), A.requires_grad, "slice", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, oi = o.id, axis, begin, rank](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& O = t.nodes_[oi];
                t.ensure_grad(A);
                const Index cols = rank == 2 ? A.shape[1] : 1;
                if (rank == 1 || axis == 0) {
                    for (size_t i = 0; i < O.grad.size(); ++i)
                        A.grad[static_cast<size_t>(begin * cols) + i] += O.grad[i];
                } else {
                    const Index rows = A.shape[0], w = O.shape[1];
                    for (Index r = 0; r < rows; ++r)
                        for (Index j = 0; j < w; ++j)
                            A.grad[static_cast<size_t>(r * cols + begin + j)] +=
                                O.grad[static_cast<size_t>(r * w + j)];
                }
            };
        }
        return o;
    }

    Val reshape(Val a, Shape sh) {
        const Node& A = node(a);
        if (sh.numel() != A.shape.numel())
            throw ShapeError("reshape: cannot view " + A.shape.str() + " as " + sh.str());
        Val o = push(sh, A.value, A.requires_grad, "reshape", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, oi = o.id](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& O = t.nodes_[oi];
                t.ensure_grad(A);
                for (size_t i = 0; i < A.grad.size(); ++i) A.grad[i] += O.grad[i];
            };
        }
        return o;
    }

    Val transpose(Val a) {
        const Node& A = node(a);
        if (A.shape.rank() != 2) throw ShapeError("transpose: expects 2-d, got " + A.shape.str());
        const Index r = A.shape[0], c = A.shape[1];
        std::vector<S> out(A.value.size());
        for (Index i = 0; i < r; ++i)
            for (Index j = 0; j < c; ++j)
                out[static_cast<size_t>(j * r + i)] = A.value[static_cast<size_t>(i * c + j)];
        Val o = push({c, r}, std::move(out), A.requires_grad, "transpose", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, oi = o.id, r, c](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& O = t.nodes_[oi];
                t.ensure_grad(A);
                for (Index i = 0; i < r; ++i)
                    for (Index j = 0; j < c; ++j)
                        A.grad[static_cast<size_t>(i * c + j)] +=
                            O.grad[static_cast<size_t>(j * r + i)];
            };
        }
        return o;
    }

    // Rows of a 2-d tensor by index; duplicates allowed (backward scatter-adds).
    Val gather_rows(Val a, std::vector<Index> idx) {
        const Node& A = node(a);
        if (A.shape.rank() != 2) throw ShapeError("gather_rows: expects 2-d, got " + A.shape.str());
        const Index rows = A.shape[0], cols = A.shape[1];
        for (Index i : idx)
            if (i < 0 || i >= rows)
                throw ShapeError("gather_rows: index " + std::to_string(i) + " out of " +
                                 A.shape.str());
        std::vector<S> out(idx.size() * static_cast<size_t>(cols));
        for (size_t r = 0; r < idx.size(); ++r)
            std::memcpy(out.data() + r * static_cast<size_t>(cols),
                        A.value.data() + static_cast<size_t>(idx[r] * cols),
                        static_cast<size_t>(cols) * sizeof(S));
        Val o = push({static_cast<Index>(idx.size()), cols}, std::move(out), A.requires_grad,
                     "gather_rows", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, oi = o.id, idx = std::move(idx), cols](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& O = t.nodes_[oi];
                t.ensure_grad(A);
                for (size_t r = 0; r < idx.size(); ++r)
                    for (Index j = 0; j < cols; ++j)
                        A.grad[static_cast<size_t>(idx[r] * cols + j)] +=
                            O.grad[r * static_cast<size_t>(cols) + static_cast<size_t>(j)];
            };
        }
        return o;
    }

    Val mean_all(Val a) {
        const Node& A = node(a);
        const S inv = S(1) / static_cast<S>(A.value.size());
        S acc = 0;
        for (S v : A.value) acc += v;
        Val o = push({1}, std::vector<S>{acc * inv}, A.requires_grad, "mean_all", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, oi = o.id, inv](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& O = t.nodes_[oi];
                t.ensure_grad(A);
                const S g = O.grad[0] * inv;
                for (size_t i = 0; i < A.grad.size(); ++i) A.grad[i] += g;
            };
        }
        return o;
    }

    // Mean over axis 0 of a 2-d tensor -> 1-d row.
    Val mean_rows(Val a) {
        const Node& A = node(a);
        if (A.shape.rank() != 2) throw ShapeError("mean_rows: expects 2-d, got " + A.shape.str());
        const Index rows = A.shape[0], cols = A.shape[1];
        const S inv = S(1) / static_cast<S>(rows);
        std::vector<S> out(static_cast<size_t>(cols), S(0));
        for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < cols; ++j) out[static_cast<size_t>(j)] += A.value[static_cast<size_t>(r * cols + j)];
        for (S& v : out) v *= inv;
        Val o = push({cols}, std::move(out), A.requires_grad, "mean_rows", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, oi = o.id, rows, cols, inv](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& O = t.nodes_[oi];
                t.ensure_grad(A);
                for (Index r = 0; r < rows; ++r)
                    for (Index j = 0; j < cols; ++j)
                        A.grad[static_cast<size_t>(r * cols + j)] +=
                            O.grad[static_cast<size_t>(j)] * inv;
            };
        }
        return o;
    }

    Val relu(Val a) {
        return unary(
            a, "relu", [](S x) { return x > S(0) ? x : S(0); },
            [](S x, S) { return x > S(0) ? S(1) : S(0); });
    }

    Val gelu(Val a) {
        // Exact erf form; smooth everywhere, which the finite-difference
        // suites rely on.
        return unary(
            a, "gelu",
            [](S x) {
                return S(0.5) * x * (S(1) + S(std::erf(static_cast<double>(x) / 1.4142135623730951)));
            },
            [](S x, S) {
                const double xd = static_cast<double>(x);
                const double phi = std::exp(-0.5 * xd * xd) * 0.3989422804014327;
                const double Phi = 0.5 * (1.0 + std::erf(xd / 1.4142135623730951));
                return S(Phi + xd * phi);
            });
    }

    Val sigmoid(Val a) {
        return unary(
            a, "sigmoid",
            [](S x) { return S(1) / (S(1) + S(std::exp(-static_cast<double>(x)))); },
            [](S, S y) { return y * (S(1) - y); });
    }

    Val tanh_op(Val a) {
        return unary(
            a, "tanh", [](S x) { return S(std::tanh(static_cast<double>(x))); },
            [](S, S y) { return S(1) - y * y; });
    }

    // Normalize over the last dim (mean 0, unit variance; affine is separate).
    Val layer_norm(Val a) {
        const Node& A = node(a);
        const auto [rows, cols] = rowcol(A.shape, "layer_norm");
        std::vector<S> out(A.value.size());
        std::vector<S> inv_std(static_cast<size_t>(rows));
        for (Index r = 0; r < rows; ++r) {
            const S* x = A.value.data() + r * cols;
            S mu = 0;
            for (Index j = 0; j < cols; ++j) mu += x[j];
            mu /= static_cast<S>(cols);
            S var = 0;
            for (Index j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
            var /= static_cast<S>(cols);
            const S istd = S(1) / S(std::sqrt(static_cast<double>(var) + ln_eps()));
            inv_std[static_cast<size_t>(r)] = istd;
            for (Index j = 0; j < cols; ++j) out[static_cast<size_t>(r * cols + j)] = (x[j] - mu) * istd;
        }
        Val o = push(A.shape, std::move(out), A.requires_grad, "layer_norm", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, oi = o.id, rows, cols,
                            inv_std = std::move(inv_std)](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& O = t.nodes_[oi];
                t.ensure_grad(A);
                for (Index r = 0; r < rows; ++r) {
                    const S* y = O.value.data() + r * cols;
                    const S* dy = O.grad.data() + r * cols;
                    S* dx = A.grad.data() + r * cols;
                    S mean_dy = 0, mean_dyy = 0;
                    for (Index j = 0; j < cols; ++j) {
                        mean_dy += dy[j];
                        mean_dyy += dy[j] * y[j];
                    }
                    mean_dy /= static_cast<S>(cols);
                    mean_dyy /= static_cast<S>(cols);
                    const S istd = inv_std[static_cast<size_t>(r)];
                    for (Index j = 0; j < cols; ++j)
                        dx[j] += istd * (dy[j] - mean_dy - y[j] * mean_dyy);
                }
            };
        }
        return o;
    }

    // Softmax over the last dim.
    Val softmax(Val a) {
        const Node& A = node(a);
        const auto [rows, cols] = rowcol(A.shape, "softmax");
        std::vector<S> out(A.value.size());
        for (Index r = 0; r < rows; ++r) {
            const S* x = A.value.data() + r * cols;
            S* y = out.data() + r * cols;
            S mx = x[0];
            for (Index j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
            S sum = 0;
            for (Index j = 0; j < cols; ++j) {
                y[j] = S(std::exp(static_cast<double>(x[j] - mx)));
                sum += y[j];
            }
            const S inv = S(1) / sum;
            for (Index j = 0; j < cols; ++j) y[j] *= inv;
        }
        Val o = push(A.shape, std::move(out), A.requires_grad, "softmax", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, oi = o.id, rows, cols](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& O = t.nodes_[oi];
                t.ensure_grad(A);
                for (Index r = 0; r < rows; ++r) {
                    const S* y = O.value.data() + r * cols;
                    const S* dy = O.grad.data() + r * cols;
                    S* dx = A.grad.data() + r * cols;
                    S dot = 0;
                    for (Index j = 0; j < cols; ++j) dot += dy[j] * y[j];
                    for (Index j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
                }
            };
        }
        return o;
    }

    // Mean |a - b| over all elements -> scalar.
    Val l1_distance(Val a, Val b) { return distance(a, b, /*squared=*/false); }
    // Mean (a - b)^2 over all elements -> scalar.
    Val sq_distance(Val a, Val b) { return distance(a, b, /*squared=*/true); }

    // Pass value through, cut the gradient path.
    Val detach(Val a) {
        const Node& A = node(a);
        return push(A.shape, A.value, false, "detach", nullptr);
    }

    // --- access ---------------------------------------------------------------

    std::span<const S> value(Val v) const { return node(v).value; }
    const Shape& shape(Val v) const { return node(v).shape; }
    S scalar(Val v) const {
        const Node& n = node(v);
        if (n.shape.numel() != 1)
            throw ShapeError("scalar: node has shape " + n.shape.str());
        return n.value[0];
    }
    std::span<const S> grad(Val v) const {
        const Node& n = node(v);
        return n.grad;
    }
    const char* op_name(Val v) const { return node(v).op; }
    std::size_t size() const { return nodes_.size(); }

    // --- backward ---------------------------------------------------------------

    // Seeds d(loss)/d(loss)=1 and walks the tape in reverse. Leaf gradients
    // are exact reverse-mode derivatives; repeated calls accumulate into the
    // bound parameters' grad buffers.
    void backward(Val loss) {
        const Node& L = node(loss);
        if (L.shape.numel() != 1)
            throw ShapeError("backward: loss must be scalar, got " + L.shape.str());
        for (auto& n : nodes_) n.grad.clear();
        Node& root = nodes_[static_cast<size_t>(loss.id)];
        ensure_grad(root);
        root.grad[0] = S(1);
        for (std::int32_t i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.requires_grad || n.grad.empty() || !n.back) continue;
            n.back(*this);
        }
        for (std::int32_t i = 0; i <= loss.id; ++i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.ext) continue;
            // A parameter the loss never touched still reads as zero grad.
            n.ext->ensure_grad();
            for (size_t j = 0; j < n.grad.size(); ++j) n.ext->grad[j] += n.grad[j];
        }
    }

    // First node holding a non-finite value, if any (NaN-loss diagnostics).
    struct NonFiniteInfo {
        std::int32_t id;
        const char* op;
        Shape shape;
    };
    std::optional<NonFiniteInfo> first_nonfinite() const {
        for (size_t i = 0; i < nodes_.size(); ++i)
            for (S v : nodes_[i].value)
                if (!std::isfinite(static_cast<double>(v)))
                    return NonFiniteInfo{static_cast<std::int32_t>(i), nodes_[i].op,
                                         nodes_[i].shape};
        return std::nullopt;
    }

    // Finite checks on every recorded output catch numeric blowups at the op
    // that produced them. Heavy sweeps may switch them off.
    void set_finite_checks(bool on) { finite_checks_ = on; }

private:
    struct Node {
        const char* op;
        Shape shape;
        std::vector<S> value;
        std::vector<S> grad;
        bool requires_grad = false;
        Tensor<S>* ext = nullptr;
        std::function<void(Tape&)> back;
    };

    using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    static Eigen::Map<EMat> emap(S* p, Index r, Index c) { return {p, r, c}; }
    static Eigen::Map<const EMat> cmap(const S* p, Index r, Index c) { return {p, r, c}; }

    static constexpr double ln_eps() { return sizeof(S) == 8 ? 1e-12 : 1e-6; }

    static std::uint32_t next_serial() {
        static std::atomic<std::uint32_t> counter{1};
        return counter.fetch_add(1);
    }

    static std::pair<Index, Index> rowcol(const Shape& sh, const char* op) {
        if (sh.rank() == 1) return {1, sh[0]};
        if (sh.rank() == 2) return {sh[0], sh[1]};
        throw ShapeError(std::string(op) + ": expects 1-d or 2-d, got " + sh.str());
    }

    const Node& node(Val v) const {
        if (v.tape != serial_ || v.id < 0 || v.id >= static_cast<std::int32_t>(nodes_.size()))
            throw ShapeError("tape: value handle does not belong to this tape");
        return nodes_[static_cast<size_t>(v.id)];
    }
    Node& node(Val v) { return const_cast<Node&>(static_cast<const Tape*>(this)->node(v)); }

    void ensure_grad(Node& n) {
        if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), S(0));
    }

    Val push(Shape sh, std::vector<S> value, bool requires_grad, const char* op, Tensor<S>* ext) {
        if (finite_checks_)
            for (S v : value)
                if (!std::isfinite(static_cast<double>(v)))
                    throw NumericError(std::string(op) + ": non-finite output at node " +
                                       std::to_string(nodes_.size()));
        Node n;
        n.op = op;
        n.shape = std::move(sh);
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.ext = ext;
        nodes_.push_back(std::move(n));
        return Val{static_cast<std::int32_t>(nodes_.size() - 1), serial_};
    }

    template <class F, class G>
    Val unary(Val a, const char* op, F fwd, G grad_fn) {
        const Node& A = node(a);
        std::vector<S> out(A.value.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(A.value[i]);
        Val o = push(A.shape, std::move(out), A.requires_grad, op, nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, oi = o.id, grad_fn](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& O = t.nodes_[oi];
                t.ensure_grad(A);
                for (size_t i = 0; i < A.grad.size(); ++i)
                    A.grad[i] += grad_fn(A.value[i], O.value[i]) * O.grad[i];
            };
        }
        return o;
    }

    // Elementwise add/mul. Shapes must match exactly, or b may omit the
    // leading dim of a (broadcast across rows) — the only broadcast allowed.
    Val binary_elementwise(Val a, Val b, const char* op) {
        const Node& A = node(a);
        const Node& B = node(b);
        const bool is_add = op[0] == 'a';
        bool bcast = false;
        if (A.shape == B.shape) {
            bcast = false;
        } else if (A.shape.rank() == 2 && B.shape.rank() == 1 && A.shape[1] == B.shape[0]) {
            bcast = true;
        } else {
            throw ShapeError(std::string(op) + ": shape mismatch " + A.shape.str() + " vs " +
                             B.shape.str() + " (only leading-dim broadcast supported)");
        }
        const Index rows = bcast ? A.shape[0] : 1;
        const Index cols = bcast ? A.shape[1] : static_cast<Index>(A.value.size());
        std::vector<S> out(A.value.size());
        for (Index r = 0; r < rows; ++r) {
            const S* pa = A.value.data() + r * cols;
            const S* pb = B.value.data();
            S* po = out.data() + r * cols;
            if (is_add)
                for (Index j = 0; j < cols; ++j) po[j] = pa[j] + pb[j];
            else
                for (Index j = 0; j < cols; ++j) po[j] = pa[j] * pb[j];
        }
        Val o = push(A.shape, std::move(out), A.requires_grad || B.requires_grad, op, nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, bi = b.id, oi = o.id, rows, cols, bcast, is_add](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& B = t.nodes_[bi];
                Node& O = t.nodes_[oi];
                if (A.requires_grad) {
                    t.ensure_grad(A);
                    for (Index r = 0; r < rows; ++r)
                        for (Index j = 0; j < cols; ++j) {
                            const size_t i = static_cast<size_t>(r * cols + j);
                            const size_t ib = bcast ? static_cast<size_t>(j) : i;
                            A.grad[i] += is_add ? O.grad[i] : O.grad[i] * B.value[ib];
                        }
                }
                if (B.requires_grad) {
                    t.ensure_grad(B);
                    for (Index r = 0; r < rows; ++r)
                        for (Index j = 0; j < cols; ++j) {
                            const size_t i = static_cast<size_t>(r * cols + j);
                            const size_t ib = bcast ? static_cast<size_t>(j) : i;
                            B.grad[ib] += is_add ? O.grad[i] : O.grad[i] * A.value[i];
                        }
                }
            };
        }
        return o;
    }

    Val distance(Val a, Val b, bool squared) {
        const Node& A = node(a);
        const Node& B = node(b);
        if (A.shape != B.shape)
            throw ShapeError(std::string(squared ? "sq_distance" : "l1_distance") +
                             ": shape mismatch " + A.shape.str() + " vs " + B.shape.str());
        const S inv = S(1) / static_cast<S>(A.value.size());
        S acc = 0;
        for (size_t i = 0; i < A.value.size(); ++i) {
            const S d = A.value[i] - B.value[i];
            acc += squared ? d * d : S(std::abs(static_cast<double>(d)));
        }
        Val o = push({1}, std::vector<S>{acc * inv}, A.requires_grad || B.requires_grad,
                     squared ? "sq_distance" : "l1_distance", nullptr);
        if (node(o).requires_grad) {
            node(o).back = [ai = a.id, bi = b.id, oi = o.id, inv, squared](Tape& t) {
                Node& A = t.nodes_[ai];
                Node& B = t.nodes_[bi];
                Node& O = t.nodes_[oi];
                const S g = O.grad[0] * inv;
                for (size_t i = 0; i < A.value.size(); ++i) {
                    const S d = A.value[i] - B.value[i];
                    // sign(0) = 0 for the L1 kink.
                    const S dd = squared ? S(2) * d : (d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0)));
                    if (A.requires_grad) {
                        t.ensure_grad(A);
                        A.grad[i] += g * dd;
                    }
                    if (B.requires_grad) {
                        t.ensure_grad(B);
                        B.grad[i] -= g * dd;
                    }
                }
            };
        }
        return o;
    }

    std::uint32_t serial_;
    bool finite_checks_ = true;
    std::vector<Node> nodes_;
};

}  // namespace efd
