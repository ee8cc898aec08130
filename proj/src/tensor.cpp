#include "voltron/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "voltron/error.hpp"
#include "voltron/rng.hpp"

namespace voltron {

namespace {

Precision g_precision = Precision::f32;

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericsError(std::string("non-finite value produced by op '") +
                                op + "'");
        }
    }
}

std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << "[" << t.rows() << "x" << t.cols() << "]";
    return os.str();
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a) {
    throw ShapeError(std::string(op) + ": bad shape " + shape_str(a));
}

[[noreturn]] void shape_fail2(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                     " and " + shape_str(b));
}

}  // namespace

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

double quantize(double v) {
    if (g_precision == Precision::f32) return static_cast<double>(static_cast<float>(v));
    return v;
}

namespace detail {

std::vector<double>& Node::grad_buf() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

}  // namespace detail

// ---- Tensor basics ----

Tensor make_op_result(int rows, int cols, std::vector<double> value,
                      bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    n->rows = rows;
    n->cols = cols;
    if (g_precision == Precision::f32) {
        for (double& v : value) v = static_cast<double>(static_cast<float>(v));
    }
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    if (rows <= 0 || cols <= 0) throw ShapeError("zeros: dimensions must be positive");
    Tensor t = make_op_result(rows, cols, std::vector<double>(size_t(rows) * cols, 0.0),
                              requires_grad);
    return t;
}

Tensor Tensor::full(int rows, int cols, double v) {
    if (rows <= 0 || cols <= 0) throw ShapeError("full: dimensions must be positive");
    return make_op_result(rows, cols, std::vector<double>(size_t(rows) * cols, v), false);
}

Tensor Tensor::from_values(int rows, int cols, std::vector<double> v,
                           bool requires_grad) {
    if (rows <= 0 || cols <= 0) throw ShapeError("from_values: dimensions must be positive");
    if (v.size() != size_t(rows) * cols) {
        throw ShapeError("from_values: value count does not match shape");
    }
    check_finite(v, "from_values");
    return make_op_result(rows, cols, std::move(v), requires_grad);
}

Tensor Tensor::row(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return from_values(1, n, std::move(v), false);
}

int Tensor::rows() const { return node_ ? node_->rows : 0; }
int Tensor::cols() const { return node_ ? node_->cols : 0; }
int Tensor::size() const { return node_ ? static_cast<int>(node_->value.size()) : 0; }

double Tensor::at(int r, int c) const {
    if (!node_ || r < 0 || r >= node_->rows || c < 0 || c >= node_->cols) {
        throw ShapeError("at: index out of range");
    }
    return node_->value[size_t(r) * node_->cols + c];
}

double Tensor::item() const {
    if (!node_ || node_->value.size() != 1) throw ShapeError("item: tensor is not 1x1");
    return node_->value[0];
}

std::vector<double>& Tensor::values() {
    if (!node_) throw ContractError("values: tensor is undefined");
    return node_->value;
}

const std::vector<double>& Tensor::values() const {
    if (!node_) throw ContractError("values: tensor is undefined");
    return node_->value;
}

const std::vector<double>& Tensor::grad() const {
    if (!node_) throw ContractError("grad: tensor is undefined");
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::clear_grad() {
    if (node_) node_->grad.clear();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    if (!node_) throw ContractError("set_requires_grad: tensor is undefined");
    node_->requires_grad = v;
    return *this;
}

Tensor& Tensor::set_name(std::string name) {
    if (!node_) throw ContractError("set_name: tensor is undefined");
    node_->name = std::move(name);
    return *this;
}

const std::string& Tensor::name() const {
    static const std::string empty;
    return node_ ? node_->name : empty;
}

Tensor Tensor::detach() const {
    if (!node_) return Tensor();
    return make_op_result(node_->rows, node_->cols, node_->value, false);
}

Tensor Tensor::clone() const {
    if (!node_) return Tensor();
    return make_op_result(node_->rows, node_->cols, node_->value, node_->requires_grad);
}

void Tensor::load_values(const std::vector<double>& v) {
    if (!node_) throw ContractError("load_values: tensor is undefined");
    if (v.size() != node_->value.size()) {
        throw ShapeError("load_values: value count does not match shape");
    }
    check_finite(v, "load_values");
    for (size_t i = 0; i < v.size(); ++i) node_->value[i] = quantize(v[i]);
}

// ---- GradTape ----

namespace {
thread_local GradTape* g_tape = nullptr;
}

GradTape::GradTape() : prev_(g_tape) { g_tape = this; }

GradTape::~GradTape() { g_tape = prev_; }

GradTape* GradTape::current() { return g_tape; }

void GradTape::record(std::function<void()> fn,
                      std::vector<std::shared_ptr<detail::Node>> touched) {
    entries_.push_back({std::move(fn), std::move(touched)});
}

void GradTape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward: loss must be 1x1");
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss does not depend on any tracked parameter");
    }
    loss.node()->grad_buf()[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->fn();
        for (const auto& n : it->touched) {
            if (!n->grad.empty()) check_finite(n->grad, "backward");
        }
    }
}

void zero_grad(const std::vector<Tensor>& params) {
    for (const auto& p : params) p.node()->grad.clear();
}

// ---- op plumbing ----

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

bool tracked(const Tensor& t) { return t.requires_grad(); }

// Finalizes an op: quantize + finite-check the output, mark it tracked when
// any input is tracked and a tape is live, and record the backward closure.
// The closure sees `out->grad`; it must skip work when that is still empty.
Tensor finish(const char* op, int rows, int cols, std::vector<double> value,
              std::initializer_list<Tensor> inputs,
              const std::function<void(const NodePtr&)>& make_backward) {
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || tracked(in);
    needs_grad = needs_grad && GradTape::current() != nullptr;
    Tensor out = make_op_result(rows, cols, std::move(value), needs_grad);
    check_finite(out.values(), op);
    if (needs_grad) make_backward(out.node());
    return out;
}

void record(std::initializer_list<Tensor> inputs, const NodePtr& out,
            std::function<void()> fn) {
    std::vector<NodePtr> touched;
    for (const auto& in : inputs) {
        if (in.requires_grad()) touched.push_back(in.node());
    }
    touched.push_back(out);
    GradTape::current()->record(std::move(fn), std::move(touched));
}

}  // namespace

// ---- structural ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (!a.defined() || !b.defined() || a.cols() != b.rows()) shape_fail2("matmul", a, b);
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(size_t(m) * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            double aip = av[size_t(i) * k + p];
            if (aip == 0.0) continue;
            const double* brow = &bv[size_t(p) * n];
            double* orow = &out[size_t(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    return finish("matmul", m, n, std::move(out), {a, b}, [&](const NodePtr& o) {
        auto an = a.node(), bn = b.node();
        record({a, b}, o, [an, bn, o, m, k, n] {
            if (o->grad.empty()) return;
            const auto& g = o->grad;
            if (an->requires_grad) {
                auto& ga = an->grad_buf();
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) {
                        double gij = g[size_t(i) * n + j];
                        if (gij == 0.0) continue;
                        const double* brow = &bn->value[0];
                        for (int p = 0; p < k; ++p) {
                            ga[size_t(i) * k + p] += gij * brow[size_t(p) * n + j];
                        }
                    }
                }
            }
            if (bn->requires_grad) {
                auto& gb = bn->grad_buf();
                for (int i = 0; i < m; ++i) {
                    for (int p = 0; p < k; ++p) {
                        double aip = an->value[size_t(i) * k + p];
                        if (aip == 0.0) continue;
                        const double* grow = &o->grad[size_t(i) * n];
                        double* gbrow = &gb[size_t(p) * n];
                        for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                    }
                }
            }
        });
    });
}

Tensor transpose(const Tensor& a) {
    if (!a.defined()) shape_fail("transpose", a);
    const int r = a.rows(), c = a.cols();
    std::vector<double> out(size_t(r) * c);
    const auto& av = a.values();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[size_t(j) * r + i] = av[size_t(i) * c + j];
    return finish("transpose", c, r, std::move(out), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, r, c] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    ga[size_t(i) * c + j] += o->grad[size_t(j) * r + i];
        });
    });
}

Tensor reshape(const Tensor& a, int rows, int cols) {
    if (!a.defined() || rows <= 0 || cols <= 0 || rows * cols != a.size()) {
        shape_fail("reshape", a);
    }
    return finish("reshape", rows, cols, a.values(), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += o->grad[i];
        });
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const int c = parts[0].cols();
    int total = 0;
    for (const auto& p : parts) {
        if (!p.defined() || p.cols() != c) shape_fail2("concat_rows", parts[0], p);
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(size_t(total) * c);
    for (const auto& p : parts) {
        const auto& v = p.values();
        out.insert(out.end(), v.begin(), v.end());
    }
    bool needs = false;
    for (const auto& p : parts) needs = needs || tracked(p);
    needs = needs && GradTape::current() != nullptr;
    Tensor res = make_op_result(total, c, std::move(out), needs);
    check_finite(res.values(), "concat_rows");
    if (needs) {
        std::vector<NodePtr> nodes;
        std::vector<NodePtr> touched;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            if (p.requires_grad()) touched.push_back(p.node());
        }
        auto o = res.node();
        touched.push_back(o);
        GradTape::current()->record(
            [nodes, o, c] {
                if (o->grad.empty()) return;
                size_t off = 0;
                for (const auto& n : nodes) {
                    size_t cnt = n->value.size();
                    if (n->requires_grad) {
                        auto& g = n->grad_buf();
                        for (size_t i = 0; i < cnt; ++i) g[i] += o->grad[off + i];
                    }
                    off += cnt;
                }
            },
            std::move(touched));
    }
    return res;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const int r = parts[0].rows();
    int total = 0;
    for (const auto& p : parts) {
        if (!p.defined() || p.rows() != r) shape_fail2("concat_cols", parts[0], p);
        total += p.cols();
    }
    std::vector<double> out(size_t(r) * total);
    int off = 0;
    for (const auto& p : parts) {
        const auto& v = p.values();
        const int pc = p.cols();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j)
                out[size_t(i) * total + off + j] = v[size_t(i) * pc + j];
        off += pc;
    }
    bool needs = false;
    for (const auto& p : parts) needs = needs || tracked(p);
    needs = needs && GradTape::current() != nullptr;
    Tensor res = make_op_result(r, total, std::move(out), needs);
    check_finite(res.values(), "concat_cols");
    if (needs) {
        std::vector<NodePtr> nodes;
        std::vector<NodePtr> touched;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            if (p.requires_grad()) touched.push_back(p.node());
        }
        auto o = res.node();
        touched.push_back(o);
        GradTape::current()->record(
            [nodes, o, r, total] {
                if (o->grad.empty()) return;
                int off = 0;
                for (const auto& n : nodes) {
                    const int pc = n->cols;
                    if (n->requires_grad) {
                        auto& g = n->grad_buf();
                        for (int i = 0; i < r; ++i)
                            for (int j = 0; j < pc; ++j)
                                g[size_t(i) * pc + j] += o->grad[size_t(i) * total + off + j];
                    }
                    off += pc;
                }
            },
            std::move(touched));
    }
    return res;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    if (!a.defined() || r0 < 0 || r1 > a.rows() || r0 >= r1) shape_fail("slice_rows", a);
    const int c = a.cols();
    const auto& av = a.values();
    std::vector<double> out(av.begin() + size_t(r0) * c, av.begin() + size_t(r1) * c);
    return finish("slice_rows", r1 - r0, c, std::move(out), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, r0, c] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (size_t i = 0; i < o->grad.size(); ++i)
                ga[size_t(r0) * c + i] += o->grad[i];
        });
    });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    if (!a.defined() || c0 < 0 || c1 > a.cols() || c0 >= c1) shape_fail("slice_cols", a);
    const int r = a.rows(), c = a.cols(), w = c1 - c0;
    const auto& av = a.values();
    std::vector<double> out(size_t(r) * w);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j) out[size_t(i) * w + j] = av[size_t(i) * c + c0 + j];
    return finish("slice_cols", r, w, std::move(out), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, r, c, c0, w] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < w; ++j)
                    ga[size_t(i) * c + c0 + j] += o->grad[size_t(i) * w + j];
        });
    });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
    if (!a.defined()) shape_fail("gather_rows", a);
    const int c = a.cols(), n = static_cast<int>(idx.size());
    if (n == 0) throw ShapeError("gather_rows: empty index list");
    const auto& av = a.values();
    std::vector<double> out(size_t(n) * c, 0.0);
    for (int i = 0; i < n; ++i) {
        int src = idx[i];
        if (src == -1) continue;
        if (src < 0 || src >= a.rows()) throw ShapeError("gather_rows: index out of range");
        std::copy(av.begin() + size_t(src) * c, av.begin() + size_t(src + 1) * c,
                  out.begin() + size_t(i) * c);
    }
    return finish("gather_rows", n, c, std::move(out), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, idx, c, n] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (int i = 0; i < n; ++i) {
                int src = idx[i];
                if (src == -1) continue;
                for (int j = 0; j < c; ++j)
                    ga[size_t(src) * c + j] += o->grad[size_t(i) * c + j];
            }
        });
    });
}

Tensor take_per_row(const Tensor& a, const std::vector<int>& idx) {
    if (!a.defined() || static_cast<int>(idx.size()) != a.rows()) {
        shape_fail("take_per_row", a);
    }
    const int r = a.rows(), c = a.cols();
    const auto& av = a.values();
    std::vector<double> out(r);
    for (int i = 0; i < r; ++i) {
        if (idx[i] < 0 || idx[i] >= c) throw ShapeError("take_per_row: index out of range");
        out[i] = av[size_t(i) * c + idx[i]];
    }
    return finish("take_per_row", r, 1, std::move(out), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, idx, c, r] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (int i = 0; i < r; ++i) ga[size_t(i) * c + idx[i]] += o->grad[i];
        });
    });
}

// ---- elementwise binary ----

namespace {

template <class Fwd, class Bwd>
Tensor ew_binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    if (!a.defined() || !b.defined() || a.rows() != b.rows() || a.cols() != b.cols()) {
        shape_fail2(op, a, b);
    }
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return finish(op, a.rows(), a.cols(), std::move(out), {a, b}, [&](const NodePtr& o) {
        auto an = a.node(), bn = b.node();
        record({a, b}, o, [an, bn, o, bwd] {
            if (o->grad.empty()) return;
            const auto& g = o->grad;
            double* ga = an->requires_grad ? an->grad_buf().data() : nullptr;
            double* gb = bn->requires_grad ? bn->grad_buf().data() : nullptr;
            for (size_t i = 0; i < g.size(); ++i) {
                auto [da, db] = bwd(an->value[i], bn->value[i], o->value[i]);
                if (ga) ga[i] += g[i] * da;
                if (gb) gb[i] += g[i] * db;
            }
        });
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return ew_binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return ew_binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return ew_binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double) { return std::pair<double, double>{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return ew_binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double out) {
            return std::pair<double, double>{1.0 / y, -out / y};
        });
}

Tensor huber(const Tensor& a, const Tensor& b, double delta) {
    if (delta <= 0.0) throw ContractError("huber: delta must be positive");
    return ew_binary(
        "huber", a, b,
        [delta](double x, double y) {
            double e = x - y, ae = std::abs(e);
            return ae <= delta ? 0.5 * e * e : delta * (ae - 0.5 * delta);
        },
        [delta](double x, double y, double) {
            double d = std::clamp(x - y, -delta, delta);
            return std::pair<double, double>{d, -d};
        });
}

// ---- broadcast ops ----

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (!m.defined() || !v.defined() || v.rows() != 1 || v.cols() != m.cols()) {
        shape_fail2("add_rowvec", m, v);
    }
    const int r = m.rows(), c = m.cols();
    const auto& mv = m.values();
    const auto& vv = v.values();
    std::vector<double> out(mv.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[size_t(i) * c + j] = mv[size_t(i) * c + j] + vv[j];
    return finish("add_rowvec", r, c, std::move(out), {m, v}, [&](const NodePtr& o) {
        auto mn = m.node(), vn = v.node();
        record({m, v}, o, [mn, vn, o, r, c] {
            if (o->grad.empty()) return;
            const auto& g = o->grad;
            if (mn->requires_grad) {
                auto& gm = mn->grad_buf();
                for (size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
            }
            if (vn->requires_grad) {
                auto& gv = vn->grad_buf();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gv[j] += g[size_t(i) * c + j];
            }
        });
    });
}

Tensor mul_rowvec(const Tensor& m, const Tensor& v) {
    if (!m.defined() || !v.defined() || v.rows() != 1 || v.cols() != m.cols()) {
        shape_fail2("mul_rowvec", m, v);
    }
    const int r = m.rows(), c = m.cols();
    const auto& mv = m.values();
    const auto& vv = v.values();
    std::vector<double> out(mv.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[size_t(i) * c + j] = mv[size_t(i) * c + j] * vv[j];
    return finish("mul_rowvec", r, c, std::move(out), {m, v}, [&](const NodePtr& o) {
        auto mn = m.node(), vn = v.node();
        record({m, v}, o, [mn, vn, o, r, c] {
            if (o->grad.empty()) return;
            const auto& g = o->grad;
            if (mn->requires_grad) {
                auto& gm = mn->grad_buf();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        gm[size_t(i) * c + j] += g[size_t(i) * c + j] * vn->value[j];
            }
            if (vn->requires_grad) {
                auto& gv = vn->grad_buf();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        gv[j] += g[size_t(i) * c + j] * mn->value[size_t(i) * c + j];
            }
        });
    });
}

Tensor mul_colvec(const Tensor& m, const Tensor& v) {
    if (!m.defined() || !v.defined() || v.cols() != 1 || v.rows() != m.rows()) {
        shape_fail2("mul_colvec", m, v);
    }
    const int r = m.rows(), c = m.cols();
    const auto& mv = m.values();
    const auto& vv = v.values();
    std::vector<double> out(mv.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[size_t(i) * c + j] = mv[size_t(i) * c + j] * vv[i];
    return finish("mul_colvec", r, c, std::move(out), {m, v}, [&](const NodePtr& o) {
        auto mn = m.node(), vn = v.node();
        record({m, v}, o, [mn, vn, o, r, c] {
            if (o->grad.empty()) return;
            const auto& g = o->grad;
            if (mn->requires_grad) {
                auto& gm = mn->grad_buf();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        gm[size_t(i) * c + j] += g[size_t(i) * c + j] * vn->value[i];
            }
            if (vn->requires_grad) {
                auto& gv = vn->grad_buf();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        gv[i] += g[size_t(i) * c + j] * mn->value[size_t(i) * c + j];
            }
        });
    });
}

// ---- scalar / unary ----

namespace {

template <class Fwd, class Bwd>
Tensor ew_unary(const char* op, const Tensor& a, Fwd fwd, Bwd bwd) {
    if (!a.defined()) shape_fail(op, a);
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    return finish(op, a.rows(), a.cols(), std::move(out), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, bwd] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (size_t i = 0; i < ga.size(); ++i)
                ga[i] += o->grad[i] * bwd(an->value[i], o->value[i]);
        });
    });
}

}  // namespace

Tensor add_scalar(const Tensor& a, double s) {
    return ew_unary(
        "add_scalar", a, [s](double x) { return x + s; },
        [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
    return ew_unary(
        "scale", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor sin(const Tensor& a) {
    return ew_unary(
        "sin", a, [](double x) { return std::sin(x); },
        [](double x, double) { return std::cos(x); });
}

Tensor pow_scalar(const Tensor& a, double exponent) {
    return ew_unary(
        "pow_scalar", a, [exponent](double x) { return std::pow(x, exponent); },
        [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

Tensor exp(const Tensor& a) {
    return ew_unary(
        "exp", a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return ew_unary(
        "log", a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    return ew_unary(
        "sqrt", a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
    return ew_unary(
        "square", a, [](double x) { return x * x; },
        [](double x, double) { return 2.0 * x; });
}

Tensor reciprocal(const Tensor& a) {
    return ew_unary(
        "reciprocal", a, [](double x) { return 1.0 / x; },
        [](double, double y) { return -y * y; });
}

Tensor tanh(const Tensor& a) {
    return ew_unary(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return ew_unary(
        "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return ew_unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return ew_unary(
        "gelu", a,
        [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x, double) {
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Tensor swish(const Tensor& a) {
    return ew_unary(
        "swish", a,
        [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    if (!a.defined()) shape_fail("sum", a);
    double total = 0.0;
    for (double v : a.values()) total += v;
    return finish("sum", 1, 1, {total}, {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (double& g : ga) g += o->grad[0];
        });
    });
}

Tensor mean(const Tensor& a) {
    if (!a.defined()) shape_fail("mean", a);
    double total = 0.0;
    for (double v : a.values()) total += v;
    const double inv_n = 1.0 / a.size();
    return finish("mean", 1, 1, {total * inv_n}, {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, inv_n] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (double& g : ga) g += o->grad[0] * inv_n;
        });
    });
}

Tensor max_all(const Tensor& a) {
    if (!a.defined()) shape_fail("max_all", a);
    const auto& av = a.values();
    size_t best = 0;
    for (size_t i = 1; i < av.size(); ++i) {
        if (av[i] > av[best]) best = i;
    }
    return finish("max_all", 1, 1, {av[best]}, {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, best] {
            if (o->grad.empty()) return;
            an->grad_buf()[best] += o->grad[0];
        });
    });
}

Tensor mean_rows(const Tensor& a) {
    if (!a.defined()) shape_fail("mean_rows", a);
    const int r = a.rows(), c = a.cols();
    const double inv_r = 1.0 / r;
    const auto& av = a.values();
    std::vector<double> out(c, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[j] += av[size_t(i) * c + j];
    for (double& v : out) v *= inv_r;
    return finish("mean_rows", 1, c, std::move(out), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, r, c, inv_r] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga[size_t(i) * c + j] += o->grad[j] * inv_r;
        });
    });
}

// ---- fused row ops ----

Tensor softmax_rows(const Tensor& a) {
    if (!a.defined()) shape_fail("softmax_rows", a);
    const int r = a.rows(), c = a.cols();
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (int i = 0; i < r; ++i) {
        const double* x = &av[size_t(i) * c];
        double* y = &out[size_t(i) * c];
        double mx = x[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        double inv_z = 1.0 / z;
        for (int j = 0; j < c; ++j) y[j] *= inv_z;
    }
    return finish("softmax_rows", r, c, std::move(out), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, r, c] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (int i = 0; i < r; ++i) {
                const double* y = &o->value[size_t(i) * c];
                const double* g = &o->grad[size_t(i) * c];
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g[j] * y[j];
                for (int j = 0; j < c; ++j) ga[size_t(i) * c + j] += y[j] * (g[j] - dot);
            }
        });
    });
}

Tensor log_softmax_rows(const Tensor& a) {
    if (!a.defined()) shape_fail("log_softmax_rows", a);
    const int r = a.rows(), c = a.cols();
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (int i = 0; i < r; ++i) {
        const double* x = &av[size_t(i) * c];
        double* y = &out[size_t(i) * c];
        double mx = x[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(x[j] - mx);
        double lse = mx + std::log(z);
        for (int j = 0; j < c; ++j) y[j] = x[j] - lse;
    }
    return finish("log_softmax_rows", r, c, std::move(out), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, r, c] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (int i = 0; i < r; ++i) {
                const double* y = &o->value[size_t(i) * c];
                const double* g = &o->grad[size_t(i) * c];
                double gsum = 0.0;
                for (int j = 0; j < c; ++j) gsum += g[j];
                for (int j = 0; j < c; ++j)
                    ga[size_t(i) * c + j] += g[j] - std::exp(y[j]) * gsum;
            }
        });
    });
}

Tensor rmsnorm_rows(const Tensor& a, double eps) {
    if (!a.defined()) shape_fail("rmsnorm_rows", a);
    if (eps <= 0.0) throw ContractError("rmsnorm_rows: eps must be positive");
    const int r = a.rows(), c = a.cols();
    const auto& av = a.values();
    std::vector<double> out(av.size());
    std::vector<double> inv_rms(r);
    for (int i = 0; i < r; ++i) {
        const double* x = &av[size_t(i) * c];
        double ms = 0.0;
        for (int j = 0; j < c; ++j) ms += x[j] * x[j];
        ms /= c;
        inv_rms[i] = 1.0 / std::sqrt(ms + eps);
        for (int j = 0; j < c; ++j) out[size_t(i) * c + j] = x[j] * inv_rms[i];
    }
    return finish("rmsnorm_rows", r, c, std::move(out), {a}, [&](const NodePtr& o) {
        auto an = a.node();
        record({a}, o, [an, o, inv_rms, r, c] {
            if (o->grad.empty()) return;
            auto& ga = an->grad_buf();
            for (int i = 0; i < r; ++i) {
                const double* x = &an->value[size_t(i) * c];
                const double* g = &o->grad[size_t(i) * c];
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g[j] * x[j];
                double ir = inv_rms[i];
                double coef = ir * ir * ir * dot / c;
                for (int j = 0; j < c; ++j)
                    ga[size_t(i) * c + j] += g[j] * ir - coef * x[j];
            }
        });
    });
}

// ---- gradient checking ----

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& params, double eps,
                           int samples_per_param, Rng& rng) {
    if (params.empty()) throw ContractError("grad_check: no parameters");
    // Analytic pass.
    std::vector<std::vector<double>> analytic;
    {
        zero_grad(params);
        GradTape tape;
        Tensor loss = f();
        tape.backward(loss);
        for (const auto& p : params) analytic.push_back(p.grad());
        zero_grad(params);
    }
    auto eval = [&]() {
        Tensor loss = f();  // no tape active: pure forward
        return loss.item();
    };
    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        auto& v = p.values();
        int n = static_cast<int>(v.size());
        int samples = std::min(samples_per_param, n);
        for (int s = 0; s < samples; ++s) {
            int i = (samples == n) ? s : static_cast<int>(rng.uniform_int(n));
            double saved = v[i];
            v[i] = saved + eps;
            double up = eval();
            v[i] = saved - eps;
            double down = eval();
            v[i] = saved;
            double numeric = (up - down) / (2.0 * eps);
            double a = analytic[pi][i];
            // The floor must sit above the differencing noise ulp(loss)/eps,
            // or unresolvable near-zero gradients dominate the report.
            double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            double rel = std::abs(a - numeric) / denom;
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.entries_checked;
        }
    }
    return report;
}

}  // namespace voltron
