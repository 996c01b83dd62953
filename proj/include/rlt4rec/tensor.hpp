#pragma once

// Reverse-mode differentiable tensors. Dense row-major storage, a fixed
// primitive set (matmul, transpose, add/mul with leading-axis broadcast,
// scale, embedding gather, softmax, fused cross-entropy, tanh, exact GELU,
// squared error, additive mask, data-movement ops) and a tape built through
// shared_ptr parent links. Templated on the scalar so the same graph code
// runs in float for training and double for gradient-check oracles.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rlt4rec/util.hpp"

namespace rlt4rec::diff {

template <typename S>
class TensorT;

template <typename S>
using TensorPtrT = std::shared_ptr<TensorT<S>>;

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            out += ",";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

template <typename S>
class TensorT {
public:
    std::vector<std::size_t> shape;
    std::vector<S> data;
    std::vector<S> grad;  // allocated by backward() for nodes that need it
    bool requires_grad = false;

    const char* op = "leaf";
    std::vector<TensorPtrT<S>> parents;
    std::function<void()> backward_fn;

    TensorT() = default;

    static TensorPtrT<S> make(std::vector<std::size_t> shp, bool req_grad = false) {
        auto t = std::make_shared<TensorT<S>>();
        t->shape = std::move(shp);
        t->data.assign(shape_numel(t->shape), S(0));
        t->requires_grad = req_grad;
        return t;
    }

    static TensorPtrT<S> constant(std::vector<std::size_t> shp, std::vector<S> values) {
        auto t = std::make_shared<TensorT<S>>();
        t->shape = std::move(shp);
        if (values.size() != shape_numel(t->shape)) {
            fail(cat("tensor constant: ", values.size(), " values for shape ", shape_str(t->shape)));
        }
        t->data = std::move(values);
        return t;
    }

    static TensorPtrT<S> scalar(S v) {
        return constant({1}, {v});
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape[i]; }

    // Leading extents collapsed into a row count; last extent is the column count.
    std::size_t rows() const {
        std::size_t n = 1;
        for (std::size_t i = 0; i + 1 < shape.size(); ++i) {
            n *= shape[i];
        }
        return n;
    }
    std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), S(0));
        }
    }
    void zero_grad() {
        grad.assign(data.size(), S(0));
    }
};

namespace detail {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Map = Eigen::Map<MatRM<S>>;
template <typename S>
using CMap = Eigen::Map<const MatRM<S>>;

template <typename S>
CMap<S> cmap(const S* p, std::size_t r, std::size_t c) {
    return CMap<S>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
template <typename S>
Map<S> map(S* p, std::size_t r, std::size_t c) {
    return Map<S>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename S>
bool any_requires(const std::vector<TensorPtrT<S>>& ps) {
    for (const auto& p : ps) {
        if (p->requires_grad) {
            return true;
        }
    }
    return false;
}

// True when b's shape is a strict suffix of a's (broadcast over leading axes)
// or the two shapes are identical.
inline bool suffix_shape(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    if (b.size() > a.size()) {
        return false;
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) {
            return false;
        }
    }
    return true;
}

}  // namespace detail

template <typename S>
TensorPtrT<S> matmul(const TensorPtrT<S>& a, const TensorPtrT<S>& b) {
    using namespace detail;
    const auto& sa = a->shape;
    const auto& sb = b->shape;
    auto bad = [&]() {
        fail(cat("matmul: incompatible shapes ", shape_str(sa), " x ", shape_str(sb)));
    };
    TensorPtrT<S> out;
    if (sa.size() == 2 && sb.size() == 2) {
        if (sa[1] != sb[0]) bad();
        out = TensorT<S>::make({sa[0], sb[1]});
        map(out->data.data(), sa[0], sb[1]).noalias() =
            cmap(a->data.data(), sa[0], sa[1]) * cmap(b->data.data(), sb[0], sb[1]);
    } else if (sa.size() == 3 && sb.size() == 2) {
        if (sa[2] != sb[0]) bad();
        out = TensorT<S>::make({sa[0], sa[1], sb[1]});
        std::size_t rows = sa[0] * sa[1];
        map(out->data.data(), rows, sb[1]).noalias() =
            cmap(a->data.data(), rows, sa[2]) * cmap(b->data.data(), sb[0], sb[1]);
    } else if (sa.size() == 3 && sb.size() == 3) {
        if (sa[0] != sb[0] || sa[2] != sb[1]) bad();
        out = TensorT<S>::make({sa[0], sa[1], sb[2]});
        std::size_t am = sa[1] * sa[2], bm = sb[1] * sb[2], om = sa[1] * sb[2];
        for (std::size_t i = 0; i < sa[0]; ++i) {
            map(out->data.data() + i * om, sa[1], sb[2]).noalias() =
                cmap(a->data.data() + i * am, sa[1], sa[2]) * cmap(b->data.data() + i * bm, sb[1], sb[2]);
        }
    } else {
        bad();
    }
    out->op = "matmul";
    out->parents = {a, b};
    out->requires_grad = a->requires_grad || b->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pa = a.get();
        TensorT<S>* pb = b.get();
        out->backward_fn = [o, pa, pb]() {
            const auto& sa = pa->shape;
            const auto& sb = pb->shape;
            if (sa.size() == 2 && sb.size() == 2) {
                if (pa->requires_grad) {
                    map(pa->grad.data(), sa[0], sa[1]).noalias() +=
                        cmap(o->grad.data(), sa[0], sb[1]) * cmap(pb->data.data(), sb[0], sb[1]).transpose();
                }
                if (pb->requires_grad) {
                    map(pb->grad.data(), sb[0], sb[1]).noalias() +=
                        cmap(pa->data.data(), sa[0], sa[1]).transpose() * cmap(o->grad.data(), sa[0], sb[1]);
                }
            } else if (sa.size() == 3 && sb.size() == 2) {
                std::size_t rows = sa[0] * sa[1];
                if (pa->requires_grad) {
                    map(pa->grad.data(), rows, sa[2]).noalias() +=
                        cmap(o->grad.data(), rows, sb[1]) * cmap(pb->data.data(), sb[0], sb[1]).transpose();
                }
                if (pb->requires_grad) {
                    map(pb->grad.data(), sb[0], sb[1]).noalias() +=
                        cmap(pa->data.data(), rows, sa[2]).transpose() * cmap(o->grad.data(), rows, sb[1]);
                }
            } else {
                std::size_t am = sa[1] * sa[2], bm = sb[1] * sb[2], om = sa[1] * sb[2];
                for (std::size_t i = 0; i < sa[0]; ++i) {
                    if (pa->requires_grad) {
                        map(pa->grad.data() + i * am, sa[1], sa[2]).noalias() +=
                            cmap(o->grad.data() + i * om, sa[1], sb[2]) *
                            cmap(pb->data.data() + i * bm, sb[1], sb[2]).transpose();
                    }
                    if (pb->requires_grad) {
                        map(pb->grad.data() + i * bm, sb[1], sb[2]).noalias() +=
                            cmap(pa->data.data() + i * am, sa[1], sa[2]).transpose() *
                            cmap(o->grad.data() + i * om, sa[1], sb[2]);
                    }
                }
            }
        };
    }
    return out;
}

// Swaps the last two axes.
template <typename S>
TensorPtrT<S> transpose(const TensorPtrT<S>& a) {
    const auto& sa = a->shape;
    if (sa.size() < 2) {
        fail(cat("transpose: needs rank >= 2, got ", shape_str(sa)));
    }
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) {
        batch *= sa[i];
    }
    std::size_t m = sa[sa.size() - 2], n = sa[sa.size() - 1];
    auto out_shape = sa;
    std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
    auto out = TensorT<S>::make(out_shape);
    for (std::size_t b = 0; b < batch; ++b) {
        const S* src = a->data.data() + b * m * n;
        S* dst = out->data.data() + b * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    out->op = "transpose";
    out->parents = {a};
    out->requires_grad = a->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pa = a.get();
        out->backward_fn = [o, pa, batch, m, n]() {
            for (std::size_t b = 0; b < batch; ++b) {
                const S* g = o->grad.data() + b * m * n;
                S* dst = pa->grad.data() + b * m * n;
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        dst[i * n + j] += g[j * m + i];
                    }
                }
            }
        };
    }
    return out;
}

namespace detail {

// Shared add/mul implementation: b broadcasts over a's leading axes.
template <typename S, bool kMul>
TensorPtrT<S> binary_broadcast(const char* name, const TensorPtrT<S>& a, const TensorPtrT<S>& b) {
    if (!suffix_shape(a->shape, b->shape)) {
        fail(cat(name, ": shape ", shape_str(b->shape), " does not broadcast over ", shape_str(a->shape)));
    }
    std::size_t nb = b->numel();
    if (nb == 0) {
        fail(cat(name, ": empty operand"));
    }
    auto out = TensorT<S>::make(a->shape);
    std::size_t na = a->numel();
    const S* ap = a->data.data();
    const S* bp = b->data.data();
    S* op_ = out->data.data();
    for (std::size_t i = 0; i < na; ++i) {
        if constexpr (kMul) {
            op_[i] = ap[i] * bp[i % nb];
        } else {
            op_[i] = ap[i] + bp[i % nb];
        }
    }
    out->op = name;
    out->parents = {a, b};
    out->requires_grad = a->requires_grad || b->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pa = a.get();
        TensorT<S>* pb = b.get();
        out->backward_fn = [o, pa, pb, na, nb]() {
            const S* g = o->grad.data();
            if (pa->requires_grad) {
                S* ga = pa->grad.data();
                if constexpr (kMul) {
                    const S* bp = pb->data.data();
                    for (std::size_t i = 0; i < na; ++i) {
                        ga[i] += g[i] * bp[i % nb];
                    }
                } else {
                    for (std::size_t i = 0; i < na; ++i) {
                        ga[i] += g[i];
                    }
                }
            }
            if (pb->requires_grad) {
                S* gb = pb->grad.data();
                if constexpr (kMul) {
                    const S* ap = pa->data.data();
                    for (std::size_t i = 0; i < na; ++i) {
                        gb[i % nb] += g[i] * ap[i];
                    }
                } else {
                    for (std::size_t i = 0; i < na; ++i) {
                        gb[i % nb] += g[i];
                    }
                }
            }
        };
    }
    return out;
}

}  // namespace detail

template <typename S>
TensorPtrT<S> add(const TensorPtrT<S>& a, const TensorPtrT<S>& b) {
    return detail::binary_broadcast<S, false>("add", a, b);
}

template <typename S>
TensorPtrT<S> mul(const TensorPtrT<S>& a, const TensorPtrT<S>& b) {
    return detail::binary_broadcast<S, true>("mul", a, b);
}

template <typename S>
TensorPtrT<S> scale(const TensorPtrT<S>& a, double c) {
    auto out = TensorT<S>::make(a->shape);
    const S sc = static_cast<S>(c);
    for (std::size_t i = 0; i < a->numel(); ++i) {
        out->data[i] = a->data[i] * sc;
    }
    out->op = "scale";
    out->parents = {a};
    out->requires_grad = a->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pa = a.get();
        out->backward_fn = [o, pa, sc]() {
            for (std::size_t i = 0; i < pa->grad.size(); ++i) {
                pa->grad[i] += o->grad[i] * sc;
            }
        };
    }
    return out;
}

// Gathers rows of a [N, D] table; backward scatter-adds.
template <typename S>
TensorPtrT<S> embedding_rows(const TensorPtrT<S>& table, std::vector<int> ids) {
    if (table->rank() != 2) {
        fail(cat("embedding_rows: table must be rank 2, got ", shape_str(table->shape)));
    }
    std::size_t n = table->dim(0), d = table->dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= n) {
            fail(cat("embedding_rows: row id ", id, " out of range [0,", n, ")"));
        }
    }
    auto out = TensorT<S>::make({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const S* src = table->data.data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, out->data.data() + i * d);
    }
    out->op = "embedding_rows";
    out->parents = {table};
    out->requires_grad = table->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pt = table.get();
        out->backward_fn = [o, pt, ids = std::move(ids), d]() {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const S* g = o->grad.data() + i * d;
                S* dst = pt->grad.data() + static_cast<std::size_t>(ids[i]) * d;
                for (std::size_t j = 0; j < d; ++j) {
                    dst[j] += g[j];
                }
            }
        };
    }
    return out;
}

// Softmax over the last axis, stable under -inf masked entries.
template <typename S>
TensorPtrT<S> softmax(const TensorPtrT<S>& a) {
    std::size_t rows = a->rows(), cols = a->cols();
    if (cols == 0) {
        fail("softmax: empty last axis");
    }
    auto out = TensorT<S>::make(a->shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* x = a->data.data() + r * cols;
        S* y = out->data.data() + r * cols;
        S m = x[0];
        for (std::size_t j = 1; j < cols; ++j) {
            m = std::max(m, x[j]);
        }
        S sum = S(0);
        for (std::size_t j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - m);
            sum += y[j];
        }
        for (std::size_t j = 0; j < cols; ++j) {
            y[j] /= sum;
        }
    }
    out->op = "softmax";
    out->parents = {a};
    out->requires_grad = a->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pa = a.get();
        out->backward_fn = [o, pa, rows, cols]() {
            for (std::size_t r = 0; r < rows; ++r) {
                const S* y = o->data.data() + r * cols;
                const S* g = o->grad.data() + r * cols;
                S* gx = pa->grad.data() + r * cols;
                S dot = S(0);
                for (std::size_t j = 0; j < cols; ++j) {
                    dot += g[j] * y[j];
                }
                for (std::size_t j = 0; j < cols; ++j) {
                    gx[j] += y[j] * (g[j] - dot);
                }
            }
        };
    }
    return out;
}

// Fused log-softmax + categorical cross-entropy against integer targets,
// averaged over rows.
template <typename S>
TensorPtrT<S> cross_entropy(const TensorPtrT<S>& logits, std::vector<int> targets) {
    if (logits->rank() != 2) {
        fail(cat("cross_entropy: logits must be rank 2, got ", shape_str(logits->shape)));
    }
    std::size_t n = logits->dim(0), v = logits->dim(1);
    if (targets.size() != n) {
        fail(cat("cross_entropy: ", targets.size(), " targets for ", n, " rows"));
    }
    for (int t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= v) {
            fail(cat("cross_entropy: target ", t, " out of range [0,", v, ")"));
        }
    }
    auto probs = std::make_shared<std::vector<S>>(n * v);
    S loss = S(0);
    for (std::size_t r = 0; r < n; ++r) {
        const S* x = logits->data.data() + r * v;
        S* p = probs->data() + r * v;
        S m = x[0];
        for (std::size_t j = 1; j < v; ++j) {
            m = std::max(m, x[j]);
        }
        S sum = S(0);
        for (std::size_t j = 0; j < v; ++j) {
            p[j] = std::exp(x[j] - m);
            sum += p[j];
        }
        for (std::size_t j = 0; j < v; ++j) {
            p[j] /= sum;
        }
        loss += m + std::log(sum) - x[static_cast<std::size_t>(targets[r])];
    }
    auto out = TensorT<S>::scalar(loss / static_cast<S>(n));
    out->op = "cross_entropy";
    out->parents = {logits};
    out->requires_grad = logits->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pl = logits.get();
        out->backward_fn = [o, pl, probs, targets = std::move(targets), n, v]() {
            const S g = o->grad[0] / static_cast<S>(n);
            for (std::size_t r = 0; r < n; ++r) {
                const S* p = probs->data() + r * v;
                S* gx = pl->grad.data() + r * v;
                for (std::size_t j = 0; j < v; ++j) {
                    gx[j] += g * p[j];
                }
                gx[static_cast<std::size_t>(targets[r])] -= g;
            }
        };
    }
    return out;
}

// Cross-entropy against soft target distributions (rows of `targets` sum to 1).
template <typename S>
TensorPtrT<S> cross_entropy_soft(const TensorPtrT<S>& logits, const TensorPtrT<S>& targets) {
    if (logits->rank() != 2 || logits->shape != targets->shape) {
        fail(cat("cross_entropy_soft: shape mismatch ", shape_str(logits->shape), " vs ",
                 shape_str(targets->shape)));
    }
    std::size_t n = logits->dim(0), v = logits->dim(1);
    auto probs = std::make_shared<std::vector<S>>(n * v);
    S loss = S(0);
    for (std::size_t r = 0; r < n; ++r) {
        const S* x = logits->data.data() + r * v;
        const S* t = targets->data.data() + r * v;
        S* p = probs->data() + r * v;
        S m = x[0];
        for (std::size_t j = 1; j < v; ++j) {
            m = std::max(m, x[j]);
        }
        S sum = S(0);
        for (std::size_t j = 0; j < v; ++j) {
            p[j] = std::exp(x[j] - m);
            sum += p[j];
        }
        S lse = m + std::log(sum);
        for (std::size_t j = 0; j < v; ++j) {
            p[j] /= sum;
            loss += t[j] * (lse - x[j]);
        }
    }
    auto out = TensorT<S>::scalar(loss / static_cast<S>(n));
    out->op = "cross_entropy_soft";
    out->parents = {logits, targets};
    out->requires_grad = logits->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pl = logits.get();
        TensorT<S>* pt = targets.get();
        out->backward_fn = [o, pl, pt, probs, n, v]() {
            const S g = o->grad[0] / static_cast<S>(n);
            for (std::size_t i = 0; i < n * v; ++i) {
                pl->grad[i] += g * ((*probs)[i] - pt->data[i]);
            }
        };
    }
    return out;
}

template <typename S>
TensorPtrT<S> tanh(const TensorPtrT<S>& a) {
    auto out = TensorT<S>::make(a->shape);
    for (std::size_t i = 0; i < a->numel(); ++i) {
        out->data[i] = std::tanh(a->data[i]);
    }
    out->op = "tanh";
    out->parents = {a};
    out->requires_grad = a->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pa = a.get();
        out->backward_fn = [o, pa]() {
            for (std::size_t i = 0; i < pa->grad.size(); ++i) {
                const S y = o->data[i];
                pa->grad[i] += o->grad[i] * (S(1) - y * y);
            }
        };
    }
    return out;
}

// Exact Gaussian-CDF GELU: x * Phi(x).
template <typename S>
TensorPtrT<S> gelu(const TensorPtrT<S>& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    auto out = TensorT<S>::make(a->shape);
    for (std::size_t i = 0; i < a->numel(); ++i) {
        const double x = static_cast<double>(a->data[i]);
        out->data[i] = static_cast<S>(x * 0.5 * (1.0 + std::erf(x * kInvSqrt2)));
    }
    out->op = "gelu";
    out->parents = {a};
    out->requires_grad = a->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pa = a.get();
        out->backward_fn = [o, pa]() {
            constexpr double kInvSqrt2Pi = 0.39894228040143267794;
            for (std::size_t i = 0; i < pa->grad.size(); ++i) {
                const double x = static_cast<double>(pa->data[i]);
                const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                pa->grad[i] += o->grad[i] * static_cast<S>(phi + x * pdf);
            }
        };
    }
    return out;
}

// Mean of (pred - target)^2 over all elements; target carries no gradient.
template <typename S>
TensorPtrT<S> squared_error(const TensorPtrT<S>& pred, const TensorPtrT<S>& target) {
    if (pred->shape != target->shape) {
        fail(cat("squared_error: shape mismatch ", shape_str(pred->shape), " vs ",
                 shape_str(target->shape)));
    }
    std::size_t n = pred->numel();
    if (n == 0) {
        fail("squared_error: empty input");
    }
    S loss = S(0);
    for (std::size_t i = 0; i < n; ++i) {
        const S d = pred->data[i] - target->data[i];
        loss += d * d;
    }
    auto out = TensorT<S>::scalar(loss / static_cast<S>(n));
    out->op = "squared_error";
    out->parents = {pred, target};
    out->requires_grad = pred->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pp = pred.get();
        TensorT<S>* pt = target.get();
        out->backward_fn = [o, pp, pt, n]() {
            const S g = o->grad[0] * S(2) / static_cast<S>(n);
            for (std::size_t i = 0; i < n; ++i) {
                pp->grad[i] += g * (pp->data[i] - pt->data[i]);
            }
        };
    }
    return out;
}

// Row-wise inner product of two [N, D] tensors -> [N].
template <typename S>
TensorPtrT<S> rowwise_dot(const TensorPtrT<S>& a, const TensorPtrT<S>& b) {
    if (a->rank() != 2 || a->shape != b->shape) {
        fail(cat("rowwise_dot: shape mismatch ", shape_str(a->shape), " vs ", shape_str(b->shape)));
    }
    std::size_t n = a->dim(0), d = a->dim(1);
    auto out = TensorT<S>::make({n});
    for (std::size_t i = 0; i < n; ++i) {
        const S* x = a->data.data() + i * d;
        const S* y = b->data.data() + i * d;
        S acc = S(0);
        for (std::size_t j = 0; j < d; ++j) {
            acc += x[j] * y[j];
        }
        out->data[i] = acc;
    }
    out->op = "rowwise_dot";
    out->parents = {a, b};
    out->requires_grad = a->requires_grad || b->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pa = a.get();
        TensorT<S>* pb = b.get();
        out->backward_fn = [o, pa, pb, n, d]() {
            for (std::size_t i = 0; i < n; ++i) {
                const S g = o->grad[i];
                if (pa->requires_grad) {
                    const S* y = pb->data.data() + i * d;
                    S* gx = pa->grad.data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[j] += g * y[j];
                    }
                }
                if (pb->requires_grad) {
                    const S* x = pa->data.data() + i * d;
                    S* gy = pb->grad.data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        gy[j] += g * x[j];
                    }
                }
            }
        };
    }
    return out;
}

// [B, T, D] -> [B*H, T, D/H]; column blocks become head batches.
template <typename S>
TensorPtrT<S> split_heads(const TensorPtrT<S>& x, std::size_t n_heads) {
    const auto& s = x->shape;
    if (s.size() != 3 || n_heads == 0 || s[2] % n_heads != 0) {
        fail(cat("split_heads: shape ", shape_str(s), " with ", n_heads, " heads"));
    }
    std::size_t b = s[0], t = s[1], d = s[2], hd = d / n_heads;
    auto out = TensorT<S>::make({b * n_heads, t, hd});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t r = 0; r < t; ++r) {
                const S* src = x->data.data() + (i * t + r) * d + h * hd;
                S* dst = out->data.data() + ((i * n_heads + h) * t + r) * hd;
                std::copy(src, src + hd, dst);
            }
        }
    }
    out->op = "split_heads";
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* px = x.get();
        out->backward_fn = [o, px, b, t, d, hd, n_heads]() {
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    for (std::size_t r = 0; r < t; ++r) {
                        const S* g = o->grad.data() + ((i * n_heads + h) * t + r) * hd;
                        S* dst = px->grad.data() + (i * t + r) * d + h * hd;
                        for (std::size_t j = 0; j < hd; ++j) {
                            dst[j] += g[j];
                        }
                    }
                }
            }
        };
    }
    return out;
}

// Inverse of split_heads: [B*H, T, Dh] -> [B, T, Dh*H].
template <typename S>
TensorPtrT<S> merge_heads(const TensorPtrT<S>& x, std::size_t n_heads) {
    const auto& s = x->shape;
    if (s.size() != 3 || n_heads == 0 || s[0] % n_heads != 0) {
        fail(cat("merge_heads: shape ", shape_str(s), " with ", n_heads, " heads"));
    }
    std::size_t b = s[0] / n_heads, t = s[1], hd = s[2], d = hd * n_heads;
    auto out = TensorT<S>::make({b, t, d});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t r = 0; r < t; ++r) {
                const S* src = x->data.data() + ((i * n_heads + h) * t + r) * hd;
                S* dst = out->data.data() + (i * t + r) * d + h * hd;
                std::copy(src, src + hd, dst);
            }
        }
    }
    out->op = "merge_heads";
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* px = x.get();
        out->backward_fn = [o, px, b, t, d, hd, n_heads]() {
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    for (std::size_t r = 0; r < t; ++r) {
                        const S* g = o->grad.data() + (i * t + r) * d + h * hd;
                        S* dst = px->grad.data() + ((i * n_heads + h) * t + r) * hd;
                        for (std::size_t j = 0; j < hd; ++j) {
                            dst[j] += g[j];
                        }
                    }
                }
            }
        };
    }
    return out;
}

// Interleaves timestep rows: out[b, 2i] = a[b, i], out[b, 2i+1] = c[b, i].
// a may have one more row than c (a trailing rating token).
template <typename S>
TensorPtrT<S> interleave_rows(const TensorPtrT<S>& a, const TensorPtrT<S>& c) {
    const auto& sa = a->shape;
    const auto& sc = c->shape;
    if (sa.size() != 3 || sc.size() != 3 || sa[0] != sc[0] || sa[2] != sc[2] ||
        (sa[1] != sc[1] && sa[1] != sc[1] + 1)) {
        fail(cat("interleave_rows: shapes ", shape_str(sa), " and ", shape_str(sc)));
    }
    std::size_t b = sa[0], ta = sa[1], tc = sc[1], d = sa[2], tt = ta + tc;
    auto out = TensorT<S>::make({b, tt, d});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t r = 0; r < ta; ++r) {
            std::copy(a->data.data() + (i * ta + r) * d, a->data.data() + (i * ta + r + 1) * d,
                      out->data.data() + (i * tt + 2 * r) * d);
        }
        for (std::size_t r = 0; r < tc; ++r) {
            std::copy(c->data.data() + (i * tc + r) * d, c->data.data() + (i * tc + r + 1) * d,
                      out->data.data() + (i * tt + 2 * r + 1) * d);
        }
    }
    out->op = "interleave_rows";
    out->parents = {a, c};
    out->requires_grad = a->requires_grad || c->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* pa = a.get();
        TensorT<S>* pc = c.get();
        out->backward_fn = [o, pa, pc, b, ta, tc, d, tt]() {
            for (std::size_t i = 0; i < b; ++i) {
                if (pa->requires_grad) {
                    for (std::size_t r = 0; r < ta; ++r) {
                        const S* g = o->grad.data() + (i * tt + 2 * r) * d;
                        S* dst = pa->grad.data() + (i * ta + r) * d;
                        for (std::size_t j = 0; j < d; ++j) {
                            dst[j] += g[j];
                        }
                    }
                }
                if (pc->requires_grad) {
                    for (std::size_t r = 0; r < tc; ++r) {
                        const S* g = o->grad.data() + (i * tt + 2 * r + 1) * d;
                        S* dst = pc->grad.data() + (i * tc + r) * d;
                        for (std::size_t j = 0; j < d; ++j) {
                            dst[j] += g[j];
                        }
                    }
                }
            }
        };
    }
    return out;
}

// Per-batch strided row selection: rows start, start+stride, ... (count rows).
template <typename S>
TensorPtrT<S> take_rows(const TensorPtrT<S>& x, std::size_t start, std::size_t stride, std::size_t count) {
    const auto& s = x->shape;
    if (s.size() != 3 || stride == 0 || (count > 0 && start + (count - 1) * stride >= s[1])) {
        fail(cat("take_rows: shape ", shape_str(s), " start ", start, " stride ", stride, " count ",
                 count));
    }
    std::size_t b = s[0], t = s[1], d = s[2];
    auto out = TensorT<S>::make({b, count, d});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t k = 0; k < count; ++k) {
            const S* src = x->data.data() + (i * t + start + k * stride) * d;
            std::copy(src, src + d, out->data.data() + (i * count + k) * d);
        }
    }
    out->op = "take_rows";
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* px = x.get();
        out->backward_fn = [o, px, b, t, d, start, stride, count]() {
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t k = 0; k < count; ++k) {
                    const S* g = o->grad.data() + (i * count + k) * d;
                    S* dst = px->grad.data() + (i * t + start + k * stride) * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        dst[j] += g[j];
                    }
                }
            }
        };
    }
    return out;
}

template <typename S>
TensorPtrT<S> reshape(const TensorPtrT<S>& x, std::vector<std::size_t> new_shape) {
    if (shape_numel(new_shape) != x->numel()) {
        fail(cat("reshape: ", shape_str(x->shape), " to ", shape_str(new_shape)));
    }
    auto out = TensorT<S>::make(new_shape);
    out->data = x->data;
    out->op = "reshape";
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* px = x.get();
        out->backward_fn = [o, px]() {
            for (std::size_t i = 0; i < px->grad.size(); ++i) {
                px->grad[i] += o->grad[i];
            }
        };
    }
    return out;
}

// Non-affine layer normalization over the last axis.
template <typename S>
TensorPtrT<S> layernorm(const TensorPtrT<S>& x, double eps = 1e-5) {
    std::size_t rows = x->rows(), cols = x->cols();
    if (cols == 0) {
        fail("layernorm: empty last axis");
    }
    auto out = TensorT<S>::make(x->shape);
    auto inv_sd = std::make_shared<std::vector<S>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* in = x->data.data() + r * cols;
        S* y = out->data.data() + r * cols;
        S mean = S(0);
        for (std::size_t j = 0; j < cols; ++j) {
            mean += in[j];
        }
        mean /= static_cast<S>(cols);
        S var = S(0);
        for (std::size_t j = 0; j < cols; ++j) {
            const S d = in[j] - mean;
            var += d * d;
        }
        var /= static_cast<S>(cols);
        const S isd = S(1) / std::sqrt(var + static_cast<S>(eps));
        (*inv_sd)[r] = isd;
        for (std::size_t j = 0; j < cols; ++j) {
            y[j] = (in[j] - mean) * isd;
        }
    }
    out->op = "layernorm";
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        TensorT<S>* o = out.get();
        TensorT<S>* px = x.get();
        out->backward_fn = [o, px, inv_sd, rows, cols]() {
            for (std::size_t r = 0; r < rows; ++r) {
                const S* y = o->data.data() + r * cols;
                const S* g = o->grad.data() + r * cols;
                S* gx = px->grad.data() + r * cols;
                S gm = S(0), gym = S(0);
                for (std::size_t j = 0; j < cols; ++j) {
                    gm += g[j];
                    gym += g[j] * y[j];
                }
                gm /= static_cast<S>(cols);
                gym /= static_cast<S>(cols);
                const S isd = (*inv_sd)[r];
                for (std::size_t j = 0; j < cols; ++j) {
                    gx[j] += isd * (g[j] - gm - y[j] * gym);
                }
            }
        };
    }
    return out;
}

// Additive causal mask constant: 0 on/below the diagonal, -inf above.
template <typename S>
TensorPtrT<S> causal_mask(std::size_t t) {
    auto m = TensorT<S>::make({t, t});
    const S neg_inf = -std::numeric_limits<S>::infinity();
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = i + 1; j < t; ++j) {
            m->data[i * t + j] = neg_inf;
        }
    }
    return m;
}

// Reverse-mode sweep from a scalar loss; returns the loss value. Gradients
// accumulate into every requires_grad node reachable from `loss`.
template <typename S>
S backward(const TensorPtrT<S>& loss) {
    if (loss->numel() != 1) {
        fail(cat("backward: loss must be scalar, got ", shape_str(loss->shape)));
    }
    std::vector<TensorT<S>*> order;
    std::unordered_set<TensorT<S>*> seen;
    std::vector<std::pair<TensorT<S>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorT<S>* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (TensorT<S>* node : order) {
        if (node->requires_grad) {
            node->ensure_grad();
        }
    }
    if (loss->requires_grad) {
        loss->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward_fn) {
                (*it)->backward_fn();
            }
        }
    }
    return loss->data[0];
}

}  // namespace rlt4rec::diff
