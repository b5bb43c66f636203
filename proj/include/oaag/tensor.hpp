#ifndef OAAG_TENSOR_HPP
#define OAAG_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace oaag {

// Numeric mode for stored values: f64 everywhere by default; f32 rounds every
// op output through float. Gradient accumulation stays in double either way.
enum class Precision { f64, f32 };
void set_precision(Precision p);
Precision precision();

namespace hooks {
// Multiplier applied inside tanh's backward rule. Tests set this away from 1
// to confirm that grad_check detects a broken gradient. Leave at 1.0.
extern double tanh_backward_scale;
}  // namespace hooks

// Dense multi-dimensional array of doubles with an optional same-shape
// gradient buffer. Copies share storage (shared_ptr semantics), which is what
// the tape relies on to reach operand gradients during backward.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int> shape, double fill, bool requires_grad = false);
    Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const;
    int ndim() const;
    int dim(int i) const;
    std::int64_t size() const;

    // Tensor is a shared handle onto its storage, so access is shallow-const:
    // a const handle still reaches mutable values and grads.
    std::vector<double>& values() const;

    // Gradient buffer, zero-allocated on first access.
    std::vector<double>& grad() const;
    bool grad_allocated() const;
    void zero_grad() const;

    bool requires_grad() const;
    void set_requires_grad(bool rg);

    double item() const;  // value of a single-element tensor
    double at(const std::vector<int>& index) const;

    const void* id() const;  // storage identity, for aliasing checks

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    Impl& ref() const;
};

// Ordered record of executed operations. backward() seeds d(loss)=1 and
// replays the record in exact reverse order. Grads of recorded op results are
// cleared before each replay, so repeated calls accumulate exactly one full
// derivative into every leaf per call.
class Tape {
public:
    void record(Tensor result, std::function<void()> backward_step);
    void backward(const Tensor& loss);
    std::size_t size() const { return steps_.size(); }

private:
    std::vector<std::pair<Tensor, std::function<void()>>> steps_;
};

// Installs a tape as the thread-local active tape for its scope. Ops record
// onto the active tape; with no active tape they run forward-only.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();
void backward(const Tensor& loss);

// ---- forward ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// add broadcasts b over a's leading dims when b's shape equals a trailing
// suffix of a's shape (or b is a single element).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// elementwise; b may be a single-element tensor (broadcast).
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// (L x d) matrix with row j scaled by weights[j].
Tensor scale_rows(const Tensor& matrix, const Tensor& row_weights);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor recip(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor, long* clamp_events = nullptr);
// Masked positions get probability exactly 0; the rest renormalize.
Tensor softmax(const Tensor& a, int axis, const Tensor& mask = Tensor());
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor stack_rows(const std::vector<Tensor>& rows);
Tensor row(const Tensor& matrix, int index);
Tensor mean(const Tensor& a, int axis);
// Ties route to the lowest index; argmax positions are recorded for backward.
Tensor max(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor slice(const Tensor& vec, int start, int length);
Tensor select(const Tensor& vec, int index);
Tensor gather(const Tensor& vec, const std::vector<int>& indices);
Tensor scatter_add(const Tensor& weights, const std::vector<int>& indices, int out_size);
Tensor pad_to(const Tensor& vec, int new_size);
// ids at or beyond the table size read the UNK row (row 1).
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor dropout(const Tensor& a, double p, bool train, std::mt19937_64* rng);
// Standard four-gate LSTM; packed weight layout is [input; forget; cell; output].
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                                    const Tensor& w_input, const Tensor& w_hidden, const Tensor& bias);

// Max over all coordinates of |analytic - central difference| relative error,
// for a scalar-valued function of the given input tensors.
double grad_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& inputs,
                  double eps = 1e-5);

// uniform double in [0,1) drawn portably from a mersenne stream
double uniform01(std::mt19937_64& rng);
double uniform_in(std::mt19937_64& rng, double lo, double hi);

}  // namespace oaag

#endif
