#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace voltron {

class Rng;

// Numeric precision for forward values and optimizer state. Storage is always
// double; in f32 mode every op output and every optimizer write is rounded
// through IEEE float, so runs match a float32 implementation bit for bit while
// gradient checking can still run in full double precision.
enum class Precision { f32, f64 };

Precision precision();
void set_precision(Precision p);

// Rounds v through float when the global mode is f32, identity otherwise.
double quantize(double v);

namespace detail {

struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::string name;

    std::vector<double>& grad_buf();  // allocates zeros on first use
};

}  // namespace detail

// A 2-D matrix with shared storage. Copies alias the same node, like a
// reference-counted view; use detach() or clone() to break the link.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor full(int rows, int cols, double v);
    static Tensor from_values(int rows, int cols, std::vector<double> v,
                              bool requires_grad = false);
    static Tensor row(std::vector<double> v);

    bool defined() const { return node_ != nullptr; }
    int rows() const;
    int cols() const;
    int size() const;

    double at(int r, int c) const;
    double item() const;  // 1x1 only

    std::vector<double>& values();
    const std::vector<double>& values() const;
    const std::vector<double>& grad() const;
    bool has_grad() const;
    void clear_grad();

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    Tensor& set_name(std::string name);
    const std::string& name() const;

    // New node, copied values, no grad tracking.
    Tensor detach() const;
    // New node, copied values, same requires_grad.
    Tensor clone() const;

    // Overwrites values in place (shape must match); quantizes in f32 mode.
    void load_values(const std::vector<double>& v);

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op_result(int rows, int cols, std::vector<double> value,
                                 bool requires_grad);
};

// Records backward closures as ops execute; replays them in reverse on
// backward(). Exactly one tape may be active at a time (RAII scoped). Ops run
// without an active tape do plain forward math.
class GradTape {
public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    // Seeds d(loss)/d(loss) = 1 and runs the tape backwards. loss must be 1x1.
    void backward(const Tensor& loss);

    static GradTape* current();
    void record(std::function<void()> fn,
                std::vector<std::shared_ptr<detail::Node>> touched);

private:
    struct Entry {
        std::function<void()> fn;
        std::vector<std::shared_ptr<detail::Node>> touched;
    };
    std::vector<Entry> entries_;
    GradTape* prev_ = nullptr;
};

// ---- ops ----
// Every op validates shapes (ShapeError) and checks its output for NaN/Inf
// (NumericsError) so poisoned values fail at the op that produced them.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, int rows, int cols);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
// out[i] = a[idx[i]]; idx[i] == -1 yields a zero row (and routes no gradient).
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
// out[i] = a[i, idx[i]] as a rows x 1 column.
Tensor take_per_row(const Tensor& a, const std::vector<int>& idx);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& m, const Tensor& v);  // v is 1 x cols
Tensor mul_rowvec(const Tensor& m, const Tensor& v);  // v is 1 x cols
Tensor mul_colvec(const Tensor& m, const Tensor& v);  // v is rows x 1
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);

Tensor neg(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double exponent);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);   // exact erf form
Tensor swish(const Tensor& a);  // x * sigmoid(x)

// Elementwise Huber on (a - b): quadratic inside |e| <= delta, linear outside.
Tensor huber(const Tensor& a, const Tensor& b, double delta);

Tensor sum(const Tensor& a);   // 1x1
Tensor mean(const Tensor& a);  // 1x1
Tensor max_all(const Tensor& a);    // 1x1; grad routes to the first max (row-major)
Tensor mean_rows(const Tensor& a);  // 1 x cols, mean over rows

Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
// x / sqrt(mean(x^2) + eps) per row; learned gain goes through mul_rowvec.
Tensor rmsnorm_rows(const Tensor& a, double eps);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

void zero_grad(const std::vector<Tensor>& params);

struct GradCheckReport {
    double max_rel_err = 0.0;
    int entries_checked = 0;
};

// Central-difference check of d(f())/d(param) for randomly sampled entries of
// each param. f must rebuild the graph from the current param values and
// return a 1x1 loss. Relative error uses |a - n| / max(|a|, |n|, 1e-6); the
// floor absorbs central-difference noise on near-zero gradients.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& params, double eps,
                           int samples_per_param, Rng& rng);

}  // namespace voltron
