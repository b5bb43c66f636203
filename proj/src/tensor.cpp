#include "oaag/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace oaag {

namespace {
Precision g_precision = Precision::f64;
thread_local Tape* g_active_tape = nullptr;

std::int64_t numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

[[noreturn]] void fail(const std::string& op, const std::string& what) {
    throw std::runtime_error(op + ": " + what);
}

void check_defined(const char* op, std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (!t->defined()) fail(op, "undefined tensor operand");
}
}  // namespace

namespace hooks {
double tanh_backward_scale = 1.0;
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

struct Tensor::Impl {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    bool grad_allocated = false;
};

Tensor::Tensor(std::vector<int> shape, double fill, bool requires_grad) {
    for (int d : shape)
        if (d < 0) fail("tensor", "negative dimension in shape " + shape_str(shape));
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->values.assign(static_cast<std::size_t>(numel(impl_->shape)), fill);
    impl_->requires_grad = requires_grad;
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(values.size()))
        fail("tensor", "value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return Tensor(std::move(shape), 0.0, requires_grad);
}

Tensor::Impl& Tensor::ref() const {
    if (!impl_) throw std::runtime_error("tensor: use of undefined tensor");
    return *impl_;
}

const std::vector<int>& Tensor::shape() const { return ref().shape; }
int Tensor::ndim() const { return static_cast<int>(ref().shape.size()); }
int Tensor::dim(int i) const { return ref().shape.at(static_cast<std::size_t>(i)); }
std::int64_t Tensor::size() const { return static_cast<std::int64_t>(ref().values.size()); }

std::vector<double>& Tensor::values() const { return ref().values; }

std::vector<double>& Tensor::grad() const {
    Impl& im = ref();
    if (!im.grad_allocated) {
        im.grad.assign(im.values.size(), 0.0);
        im.grad_allocated = true;
    }
    return im.grad;
}

bool Tensor::grad_allocated() const { return ref().grad_allocated; }

void Tensor::zero_grad() const {
    Impl& im = ref();
    if (im.grad_allocated) std::fill(im.grad.begin(), im.grad.end(), 0.0);
}

bool Tensor::requires_grad() const { return ref().requires_grad; }
void Tensor::set_requires_grad(bool rg) { ref().requires_grad = rg; }

double Tensor::item() const {
    const Impl& im = ref();
    if (im.values.size() != 1)
        fail("item", "tensor of shape " + shape_str(im.shape) + " is not a single element");
    return im.values[0];
}

double Tensor::at(const std::vector<int>& index) const {
    const Impl& im = ref();
    if (index.size() != im.shape.size())
        fail("at", "index rank mismatch for shape " + shape_str(im.shape));
    std::int64_t flat = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= im.shape[i])
            fail("at", "index out of range for shape " + shape_str(im.shape));
        flat = flat * im.shape[i] + index[i];
    }
    return im.values[static_cast<std::size_t>(flat)];
}

const void* Tensor::id() const { return impl_.get(); }

void Tape::record(Tensor result, std::function<void()> backward_step) {
    steps_.emplace_back(std::move(result), std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        fail("backward", "loss must be a scalar tensor, got shape " +
                             (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (steps_.empty()) fail("backward", "empty tape");
    for (auto& [result, step] : steps_) result.zero_grad();
    loss.grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->second();
}

TapeScope::TapeScope(Tape& tape) {
    previous_ = g_active_tape;
    g_active_tape = &tape;
}
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
    if (!g_active_tape) fail("backward", "no active tape");
    g_active_tape->backward(loss);
}

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform_in(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

namespace {

// Every op's output passes through here: enforces the all-finite invariant
// and applies the f32 rounding mode.
void finalize(Tensor& out, const char* op) {
    std::vector<double>& v = out.values();
    if (g_precision == Precision::f32)
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    for (double x : v)
        if (!std::isfinite(x)) fail(op, "non-finite value in result");
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

// Marks the result differentiable and records the backward step when a tape
// is active. The step is skipped at replay time if no gradient ever reached
// the result.
void wire(Tensor& out, std::initializer_list<const Tensor*> operands,
          std::function<void(Tensor&)> backward_step) {
    if (!any_requires_grad(operands)) return;
    out.set_requires_grad(true);
    if (!g_active_tape) return;
    g_active_tape->record(out, [out, step = std::move(backward_step)]() mutable {
        if (!out.grad_allocated()) return;
        step(out);
    });
}

void require_ndim(const char* op, const Tensor& t, int nd) {
    if (t.ndim() != nd)
        fail(op, "expected " + std::to_string(nd) + "-d tensor, got shape " + shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined("matmul", {&a, &b});
    const int and_ = a.ndim(), bnd = b.ndim();
    if (and_ == 2 && bnd == 2) {
        const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
        if (k != k2)
            fail("matmul", "shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
        Tensor out({m, n}, 0.0);
        const auto& av = a.values();
        const auto& bv = b.values();
        auto& ov = out.values();
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const double aip = av[static_cast<std::size_t>(i) * k + p];
                if (aip == 0.0) continue;
                const double* brow = &bv[static_cast<std::size_t>(p) * n];
                double* orow = &ov[static_cast<std::size_t>(i) * n];
                for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
            }
        finalize(out, "matmul");
        wire(out, {&a, &b}, [a, b, m, k, n](Tensor& o) mutable {
            const auto& g = o.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                const auto& bv = b.values();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = &g[static_cast<std::size_t>(i) * n];
                        const double* brow = &bv[static_cast<std::size_t>(p) * n];
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[static_cast<std::size_t>(i) * k + p] += acc;
                    }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                const auto& av = a.values();
                for (int p = 0; p < k; ++p)
                    for (int i = 0; i < m; ++i) {
                        const double aip = av[static_cast<std::size_t>(i) * k + p];
                        if (aip == 0.0) continue;
                        const double* grow = &g[static_cast<std::size_t>(i) * n];
                        double* gbrow = &gb[static_cast<std::size_t>(p) * n];
                        for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                    }
            }
        });
        return out;
    }
    if (and_ == 2 && bnd == 1) {
        const int m = a.dim(0), k = a.dim(1);
        if (k != b.dim(0))
            fail("matmul", "shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
        Tensor out({m}, 0.0);
        const auto& av = a.values();
        const auto& bv = b.values();
        auto& ov = out.values();
        for (int i = 0; i < m; ++i) {
            double acc = 0.0;
            const double* arow = &av[static_cast<std::size_t>(i) * k];
            for (int j = 0; j < k; ++j) acc += arow[j] * bv[j];
            ov[i] = acc;
        }
        finalize(out, "matmul");
        wire(out, {&a, &b}, [a, b, m, k](Tensor& o) mutable {
            const auto& g = o.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                const auto& bv = b.values();
                for (int i = 0; i < m; ++i) {
                    double* garow = &ga[static_cast<std::size_t>(i) * k];
                    for (int j = 0; j < k; ++j) garow[j] += g[i] * bv[j];
                }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                const auto& av = a.values();
                for (int i = 0; i < m; ++i) {
                    const double* arow = &av[static_cast<std::size_t>(i) * k];
                    for (int j = 0; j < k; ++j) gb[j] += g[i] * arow[j];
                }
            }
        });
        return out;
    }
    if (and_ == 1 && bnd == 2) {
        const int k = a.dim(0), n = b.dim(1);
        if (k != b.dim(0))
            fail("matmul", "shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
        Tensor out({n}, 0.0);
        const auto& av = a.values();
        const auto& bv = b.values();
        auto& ov = out.values();
        for (int j = 0; j < k; ++j) {
            const double aj = av[j];
            if (aj == 0.0) continue;
            const double* brow = &bv[static_cast<std::size_t>(j) * n];
            for (int i = 0; i < n; ++i) ov[i] += aj * brow[i];
        }
        finalize(out, "matmul");
        wire(out, {&a, &b}, [a, b, k, n](Tensor& o) mutable {
            const auto& g = o.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                const auto& bv = b.values();
                for (int j = 0; j < k; ++j) {
                    double acc = 0.0;
                    const double* brow = &bv[static_cast<std::size_t>(j) * n];
                    for (int i = 0; i < n; ++i) acc += g[i] * brow[i];
                    ga[j] += acc;
                }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                const auto& av = a.values();
                for (int j = 0; j < k; ++j) {
                    const double aj = av[j];
                    if (aj == 0.0) continue;
                    double* gbrow = &gb[static_cast<std::size_t>(j) * n];
                    for (int i = 0; i < n; ++i) gbrow[i] += aj * g[i];
                }
            }
        });
        return out;
    }
    fail("matmul", "unsupported ranks for shapes " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
}

Tensor transpose(const Tensor& a) {
    check_defined("transpose", {&a});
    require_ndim("transpose", a, 2);
    const int m = a.dim(0), n = a.dim(1);
    Tensor out({n, m}, 0.0);
    const auto& av = a.values();
    auto& ov = out.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            ov[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
    finalize(out, "transpose");
    wire(out, {&a}, [a, m, n](Tensor& o) mutable {
        if (!a.requires_grad()) return;
        const auto& g = o.grad();
        auto& ga = a.grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    });
    return out;
}

namespace {

// True when b's shape is a trailing suffix of a's shape (or b has one element).
bool broadcast_ok(const Tensor& a, const Tensor& b) {
    if (b.size() == 1) return true;
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (bs.size() > as.size()) return false;
    for (std::size_t i = 0; i < bs.size(); ++i)
        if (bs[bs.size() - 1 - i] != as[as.size() - 1 - i]) return false;
    return true;
}

Tensor add_impl(const Tensor& a, const Tensor& b, double sign, const char* op) {
    check_defined(op, {&a, &b});
    if (!broadcast_ok(a, b))
        fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t nb = static_cast<std::size_t>(b.size());
    Tensor out(a.shape(), 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + sign * bv[i % nb];
    finalize(out, op);
    wire(out, {&a, &b}, [a, b, sign, nb](Tensor& o) mutable {
        const auto& g = o.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += sign * g[i];
        }
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_impl(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_impl(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
    check_defined("mul", {&a, &b});
    const bool scalar_b = b.size() == 1;
    if (!scalar_b && a.shape() != b.shape())
        fail("mul", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape(), 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    if (scalar_b) {
        const double s = bv[0];
        for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * s;
    } else {
        for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
    }
    finalize(out, "mul");
    wire(out, {&a, &b}, [a, b, scalar_b](Tensor& o) mutable {
        const auto& g = o.grad();
        const auto& av = a.values();
        const auto& bv = b.values();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            if (scalar_b)
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[0];
            else
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            if (scalar_b) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
                gb[0] += acc;
            } else {
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double factor) {
    check_defined("scale", {&a});
    Tensor out(a.shape(), 0.0);
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * factor;
    finalize(out, "scale");
    wire(out, {&a}, [a, factor](Tensor& o) mutable {
        if (!a.requires_grad()) return;
        const auto& g = o.grad();
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
    return out;
}

Tensor scale_rows(const Tensor& matrix, const Tensor& row_weights) {
    check_defined("scale_rows", {&matrix, &row_weights});
    require_ndim("scale_rows", matrix, 2);
    require_ndim("scale_rows", row_weights, 1);
    const int L = matrix.dim(0), d = matrix.dim(1);
    if (row_weights.dim(0) != L)
        fail("scale_rows", "shape mismatch " + shape_str(matrix.shape()) + " vs " +
                               shape_str(row_weights.shape()));
    Tensor out({L, d}, 0.0);
    const auto& mv = matrix.values();
    const auto& wv = row_weights.values();
    auto& ov = out.values();
    for (int j = 0; j < L; ++j) {
        const double w = wv[j];
        const double* mrow = &mv[static_cast<std::size_t>(j) * d];
        double* orow = &ov[static_cast<std::size_t>(j) * d];
        for (int i = 0; i < d; ++i) orow[i] = mrow[i] * w;
    }
    finalize(out, "scale_rows");
    wire(out, {&matrix, &row_weights}, [matrix, row_weights, L, d](Tensor& o) mutable {
        const auto& g = o.grad();
        if (matrix.requires_grad()) {
            auto& gm = matrix.grad();
            const auto& wv = row_weights.values();
            for (int j = 0; j < L; ++j) {
                const double w = wv[j];
                const double* grow = &g[static_cast<std::size_t>(j) * d];
                double* gmrow = &gm[static_cast<std::size_t>(j) * d];
                for (int i = 0; i < d; ++i) gmrow[i] += grow[i] * w;
            }
        }
        if (row_weights.requires_grad()) {
            auto& gw = row_weights.grad();
            const auto& mv = matrix.values();
            for (int j = 0; j < L; ++j) {
                double acc = 0.0;
                const double* grow = &g[static_cast<std::size_t>(j) * d];
                const double* mrow = &mv[static_cast<std::size_t>(j) * d];
                for (int i = 0; i < d; ++i) acc += grow[i] * mrow[i];
                gw[j] += acc;
            }
        }
    });
    return out;
}

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* op, Fwd fwd, Bwd bwd) {
    check_defined(op, {&a});
    Tensor out(a.shape(), 0.0);
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
    finalize(out, op);
    wire(out, {&a}, [a, bwd](Tensor& o) mutable {
        if (!a.requires_grad()) return;
        const auto& g = o.grad();
        const auto& av = a.values();
        const auto& ov = o.values();
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += bwd(av[i], ov[i]) * g[i];
    });
    return out;
}

}  // namespace

Tensor tanh(const Tensor& a) {
    return unary_op(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return (1.0 - y * y) * hooks::tanh_backward_scale; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, "log", [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor recip(const Tensor& a) {
    return unary_op(
        a, "recip", [](double x) { return 1.0 / x; },
        [](double, double y) { return -y * y; });
}

Tensor clamp_min(const Tensor& a, double floor, long* clamp_events) {
    check_defined("clamp_min", {&a});
    Tensor out(a.shape(), 0.0);
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (av[i] < floor) {
            ov[i] = floor;
            if (clamp_events) ++*clamp_events;
        } else {
            ov[i] = av[i];
        }
    }
    finalize(out, "clamp_min");
    wire(out, {&a}, [a, floor](Tensor& o) mutable {
        if (!a.requires_grad()) return;
        const auto& g = o.grad();
        const auto& av = a.values();
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] >= floor) ga[i] += g[i];
    });
    return out;
}

namespace {

struct AxisSpan {
    std::int64_t outer, n, inner;
};

AxisSpan axis_span(const char* op, const Tensor& a, int axis) {
    if (axis < 0 || axis >= a.ndim())
        fail(op, "axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(a.shape()));
    AxisSpan s{1, a.dim(axis), 1};
    for (int i = 0; i < axis; ++i) s.outer *= a.dim(i);
    for (int i = axis + 1; i < a.ndim(); ++i) s.inner *= a.dim(i);
    return s;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis, const Tensor& mask) {
    check_defined("softmax", {&a});
    const AxisSpan sp = axis_span("softmax", a, axis);
    const bool masked = mask.defined();
    if (masked) {
        if (mask.shape() != a.shape())
            fail("softmax", "mask shape " + shape_str(mask.shape()) + " does not match input " +
                                shape_str(a.shape()));
        for (double m : mask.values())
            if (m != 0.0 && m != 1.0) fail("softmax", "mask entries must be 0 or 1");
    }
    Tensor out(a.shape(), 0.0);
    const auto& av = a.values();
    const double* mv = masked ? mask.values().data() : nullptr;
    auto& ov = out.values();
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            const auto at = [&](std::int64_t j) {
                return static_cast<std::size_t>((o * sp.n + j) * sp.inner + in);
            };
            double mx = 0.0;
            bool any = false;
            for (std::int64_t j = 0; j < sp.n; ++j) {
                if (mv && mv[at(j)] == 0.0) continue;
                if (!any || av[at(j)] > mx) mx = av[at(j)];
                any = true;
            }
            if (!any) fail("softmax", "all positions masked");
            double sum = 0.0;
            for (std::int64_t j = 0; j < sp.n; ++j) {
                if (mv && mv[at(j)] == 0.0) {
                    ov[at(j)] = 0.0;
                    continue;
                }
                const double e = std::exp(av[at(j)] - mx);
                ov[at(j)] = e;
                sum += e;
            }
            for (std::int64_t j = 0; j < sp.n; ++j) ov[at(j)] /= sum;
        }
    finalize(out, "softmax");
    wire(out, {&a}, [a, sp](Tensor& o) mutable {
        if (!a.requires_grad()) return;
        const auto& g = o.grad();
        const auto& ov = o.values();
        auto& ga = a.grad();
        for (std::int64_t outer = 0; outer < sp.outer; ++outer)
            for (std::int64_t in = 0; in < sp.inner; ++in) {
                const auto at = [&](std::int64_t j) {
                    return static_cast<std::size_t>((outer * sp.n + j) * sp.inner + in);
                };
                double dot = 0.0;
                for (std::int64_t j = 0; j < sp.n; ++j) dot += g[at(j)] * ov[at(j)];
                for (std::int64_t j = 0; j < sp.n; ++j)
                    ga[at(j)] += ov[at(j)] * (g[at(j)] - dot);
            }
    });
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) fail("concat", "no tensors given");
    for (const Tensor& p : parts) check_defined("concat", {&p});
    const int nd = parts[0].ndim();
    if (axis < 0 || axis >= nd) fail("concat", "axis out of range");
    std::vector<int> out_shape = parts[0].shape();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != nd) fail("concat", "rank mismatch");
        for (int i = 0; i < nd; ++i)
            if (i != axis && p.dim(i) != out_shape[i])
                fail("concat", "shape mismatch " + shape_str(p.shape()) + " vs " +
                                   shape_str(parts[0].shape()));
        total += p.dim(axis);
    }
    out_shape[axis] = total;
    Tensor out(out_shape, 0.0);
    AxisSpan osp = axis_span("concat", out, axis);
    auto& ov = out.values();
    std::vector<std::int64_t> offsets(parts.size());
    std::int64_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        offsets[pi] = off;
        const Tensor& p = parts[pi];
        const std::int64_t pn = p.dim(axis);
        const auto& pv = p.values();
        for (std::int64_t o = 0; o < osp.outer; ++o)
            for (std::int64_t j = 0; j < pn; ++j)
                for (std::int64_t in = 0; in < osp.inner; ++in)
                    ov[static_cast<std::size_t>((o * osp.n + off + j) * osp.inner + in)] =
                        pv[static_cast<std::size_t>((o * pn + j) * osp.inner + in)];
        off += pn;
    }
    bool needs = false;
    for (const Tensor& p : parts) needs = needs || p.requires_grad();
    finalize(out, "concat");
    if (needs) {
        out.set_requires_grad(true);
        if (g_active_tape) {
            std::vector<Tensor> held = parts;
            g_active_tape->record(out, [out, held = std::move(held), offsets, osp]() mutable {
                if (!out.grad_allocated()) return;
                const auto& g = out.grad();
                for (std::size_t pi = 0; pi < held.size(); ++pi) {
                    Tensor& p = held[pi];
                    if (!p.requires_grad()) continue;
                    // recover the part's extent along the concat axis
                    const std::int64_t pn =
                        (pi + 1 < held.size() ? offsets[pi + 1] : osp.n) - offsets[pi];
                    auto& gp = p.grad();
                    for (std::int64_t o = 0; o < osp.outer; ++o)
                        for (std::int64_t j = 0; j < pn; ++j)
                            for (std::int64_t in = 0; in < osp.inner; ++in)
                                gp[static_cast<std::size_t>((o * pn + j) * osp.inner + in)] +=
                                    g[static_cast<std::size_t>(
                                        (o * osp.n + offsets[pi] + j) * osp.inner + in)];
                }
            });
        }
    }
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) fail("stack_rows", "no tensors given");
    const int d = rows[0].dim(0);
    for (const Tensor& r : rows) {
        check_defined("stack_rows", {&r});
        require_ndim("stack_rows", r, 1);
        if (r.dim(0) != d)
            fail("stack_rows", "shape mismatch " + shape_str(r.shape()) + " vs " +
                                   shape_str(rows[0].shape()));
    }
    const int K = static_cast<int>(rows.size());
    Tensor out({K, d}, 0.0);
    auto& ov = out.values();
    for (int k = 0; k < K; ++k) {
        const auto& rv = rows[k].values();
        std::copy(rv.begin(), rv.end(), ov.begin() + static_cast<std::size_t>(k) * d);
    }
    bool needs = false;
    for (const Tensor& r : rows) needs = needs || r.requires_grad();
    finalize(out, "stack_rows");
    if (needs) {
        out.set_requires_grad(true);
        if (g_active_tape) {
            std::vector<Tensor> held = rows;
            g_active_tape->record(out, [out, held = std::move(held), d]() mutable {
                if (!out.grad_allocated()) return;
                const auto& g = out.grad();
                for (std::size_t k = 0; k < held.size(); ++k) {
                    if (!held[k].requires_grad()) continue;
                    auto& gr = held[k].grad();
                    for (int i = 0; i < d; ++i) gr[i] += g[k * static_cast<std::size_t>(d) + i];
                }
            });
        }
    }
    return out;
}

Tensor row(const Tensor& matrix, int index) {
    check_defined("row", {&matrix});
    require_ndim("row", matrix, 2);
    const int m = matrix.dim(0), d = matrix.dim(1);
    if (index < 0 || index >= m)
        fail("row", "row " + std::to_string(index) + " out of range for shape " +
                        shape_str(matrix.shape()));
    Tensor out({d}, 0.0);
    const auto& mv = matrix.values();
    std::copy(mv.begin() + static_cast<std::size_t>(index) * d,
              mv.begin() + static_cast<std::size_t>(index + 1) * d, out.values().begin());
    finalize(out, "row");
    wire(out, {&matrix}, [matrix, index, d](Tensor& o) mutable {
        if (!matrix.requires_grad()) return;
        const auto& g = o.grad();
        auto& gm = matrix.grad();
        for (int i = 0; i < d; ++i) gm[static_cast<std::size_t>(index) * d + i] += g[i];
    });
    return out;
}

namespace {

std::vector<int> drop_axis(const std::vector<int>& shape, int axis) {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(shape.size()); ++i)
        if (i != axis) out.push_back(shape[i]);
    if (out.empty()) out.push_back(1);
    return out;
}

}  // namespace

Tensor mean(const Tensor& a, int axis) {
    check_defined("mean", {&a});
    const AxisSpan sp = axis_span("mean", a, axis);
    if (sp.n == 0) fail("mean", "mean over empty axis");
    Tensor out(drop_axis(a.shape(), axis), 0.0);
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < sp.n; ++j)
                acc += av[static_cast<std::size_t>((o * sp.n + j) * sp.inner + in)];
            ov[static_cast<std::size_t>(o * sp.inner + in)] = acc / static_cast<double>(sp.n);
        }
    finalize(out, "mean");
    wire(out, {&a}, [a, sp](Tensor& o) mutable {
        if (!a.requires_grad()) return;
        const auto& g = o.grad();
        auto& ga = a.grad();
        const double inv = 1.0 / static_cast<double>(sp.n);
        for (std::int64_t outer = 0; outer < sp.outer; ++outer)
            for (std::int64_t in = 0; in < sp.inner; ++in) {
                const double gi = g[static_cast<std::size_t>(outer * sp.inner + in)] * inv;
                for (std::int64_t j = 0; j < sp.n; ++j)
                    ga[static_cast<std::size_t>((outer * sp.n + j) * sp.inner + in)] += gi;
            }
    });
    return out;
}

Tensor max(const Tensor& a, int axis) {
    check_defined("max", {&a});
    const AxisSpan sp = axis_span("max", a, axis);
    if (sp.n == 0) fail("max", "max over empty axis");
    Tensor out(drop_axis(a.shape(), axis), 0.0);
    const auto& av = a.values();
    auto& ov = out.values();
    auto argmax = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(sp.outer * sp.inner), 0);
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            double best = av[static_cast<std::size_t>(o * sp.n * sp.inner + in)];
            std::int64_t best_j = 0;
            for (std::int64_t j = 1; j < sp.n; ++j) {
                const double v = av[static_cast<std::size_t>((o * sp.n + j) * sp.inner + in)];
                if (v > best) {  // strict: ties keep the lowest index
                    best = v;
                    best_j = j;
                }
            }
            ov[static_cast<std::size_t>(o * sp.inner + in)] = best;
            (*argmax)[static_cast<std::size_t>(o * sp.inner + in)] = best_j;
        }
    finalize(out, "max");
    wire(out, {&a}, [a, sp, argmax](Tensor& o) mutable {
        if (!a.requires_grad()) return;
        const auto& g = o.grad();
        auto& ga = a.grad();
        for (std::int64_t outer = 0; outer < sp.outer; ++outer)
            for (std::int64_t in = 0; in < sp.inner; ++in) {
                const std::size_t lane = static_cast<std::size_t>(outer * sp.inner + in);
                const std::int64_t j = (*argmax)[lane];
                ga[static_cast<std::size_t>((outer * sp.n + j) * sp.inner + in)] += g[lane];
            }
    });
    return out;
}

Tensor sum_all(const Tensor& a) {
    check_defined("sum_all", {&a});
    double acc = 0.0;
    for (double x : a.values()) acc += x;
    Tensor out = Tensor::scalar(acc);
    finalize(out, "sum_all");
    wire(out, {&a}, [a](Tensor& o) mutable {
        if (!a.requires_grad()) return;
        const double g = o.grad()[0];
        auto& ga = a.grad();
        for (double& x : ga) x += g;
    });
    return out;
}

Tensor slice(const Tensor& vec, int start, int length) {
    check_defined("slice", {&vec});
    require_ndim("slice", vec, 1);
    if (start < 0 || length < 0 || start + length > vec.dim(0))
        fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                          ") out of bounds for shape " + shape_str(vec.shape()));
    Tensor out({length}, 0.0);
    const auto& v = vec.values();
    std::copy(v.begin() + start, v.begin() + start + length, out.values().begin());
    finalize(out, "slice");
    wire(out, {&vec}, [vec, start, length](Tensor& o) mutable {
        if (!vec.requires_grad()) return;
        const auto& g = o.grad();
        auto& gv = vec.grad();
        for (int i = 0; i < length; ++i) gv[static_cast<std::size_t>(start + i)] += g[i];
    });
    return out;
}

Tensor select(const Tensor& vec, int index) {
    check_defined("select", {&vec});
    require_ndim("select", vec, 1);
    if (index < 0 || index >= vec.dim(0))
        fail("select", "index " + std::to_string(index) + " out of range for shape " +
                           shape_str(vec.shape()));
    Tensor out = Tensor::scalar(vec.values()[static_cast<std::size_t>(index)]);
    finalize(out, "select");
    wire(out, {&vec}, [vec, index](Tensor& o) mutable {
        if (!vec.requires_grad()) return;
        vec.grad()[static_cast<std::size_t>(index)] += o.grad()[0];
    });
    return out;
}

Tensor gather(const Tensor& vec, const std::vector<int>& indices) {
    check_defined("gather", {&vec});
    require_ndim("gather", vec, 1);
    const int n = vec.dim(0);
    Tensor out({static_cast<int>(indices.size())}, 0.0);
    auto& ov = out.values();
    const auto& v = vec.values();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= n)
            fail("gather", "index " + std::to_string(indices[i]) + " out of range for shape " +
                               shape_str(vec.shape()));
        ov[i] = v[static_cast<std::size_t>(indices[i])];
    }
    finalize(out, "gather");
    wire(out, {&vec}, [vec, indices](Tensor& o) mutable {
        if (!vec.requires_grad()) return;
        const auto& g = o.grad();
        auto& gv = vec.grad();
        for (std::size_t i = 0; i < indices.size(); ++i)
            gv[static_cast<std::size_t>(indices[i])] += g[i];
    });
    return out;
}

Tensor scatter_add(const Tensor& weights, const std::vector<int>& indices, int out_size) {
    check_defined("scatter_add", {&weights});
    require_ndim("scatter_add", weights, 1);
    if (static_cast<std::size_t>(weights.dim(0)) != indices.size())
        fail("scatter_add", "weight count " + std::to_string(weights.dim(0)) +
                                " does not match index count " + std::to_string(indices.size()));
    Tensor out({out_size}, 0.0);
    auto& ov = out.values();
    const auto& wv = weights.values();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= out_size)
            fail("scatter_add", "index " + std::to_string(indices[i]) +
                                    " out of range for output size " + std::to_string(out_size));
        ov[static_cast<std::size_t>(indices[i])] += wv[i];
    }
    finalize(out, "scatter_add");
    wire(out, {&weights}, [weights, indices](Tensor& o) mutable {
        if (!weights.requires_grad()) return;
        const auto& g = o.grad();
        auto& gw = weights.grad();
        for (std::size_t i = 0; i < indices.size(); ++i)
            gw[i] += g[static_cast<std::size_t>(indices[i])];
    });
    return out;
}

Tensor pad_to(const Tensor& vec, int new_size) {
    check_defined("pad_to", {&vec});
    require_ndim("pad_to", vec, 1);
    const int n = vec.dim(0);
    if (new_size < n)
        fail("pad_to", "target size " + std::to_string(new_size) + " smaller than input " +
                           std::to_string(n));
    Tensor out({new_size}, 0.0);
    const auto& v = vec.values();
    std::copy(v.begin(), v.end(), out.values().begin());
    finalize(out, "pad_to");
    wire(out, {&vec}, [vec, n](Tensor& o) mutable {
        if (!vec.requires_grad()) return;
        const auto& g = o.grad();
        auto& gv = vec.grad();
        for (int i = 0; i < n; ++i) gv[i] += g[i];
    });
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    check_defined("embedding_lookup", {&table});
    require_ndim("embedding_lookup", table, 2);
    const int V = table.dim(0), d = table.dim(1);
    auto resolved = std::make_shared<std::vector<int>>();
    resolved->reserve(ids.size());
    for (int id : ids) {
        if (id < 0) fail("embedding_lookup", "negative token id " + std::to_string(id));
        resolved->push_back(id < V ? id : 1);  // extended-vocabulary ids embed as UNK
    }
    Tensor out({static_cast<int>(ids.size()), d}, 0.0);
    const auto& tv = table.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < resolved->size(); ++i)
        std::copy(tv.begin() + static_cast<std::size_t>((*resolved)[i]) * d,
                  tv.begin() + static_cast<std::size_t>((*resolved)[i] + 1) * d,
                  ov.begin() + i * static_cast<std::size_t>(d));
    finalize(out, "embedding_lookup");
    wire(out, {&table}, [table, resolved, d](Tensor& o) mutable {
        if (!table.requires_grad()) return;
        const auto& g = o.grad();
        auto& gt = table.grad();
        for (std::size_t i = 0; i < resolved->size(); ++i) {
            double* trow = &gt[static_cast<std::size_t>((*resolved)[i]) * d];
            const double* grow = &g[i * static_cast<std::size_t>(d)];
            for (int j = 0; j < d; ++j) trow[j] += grow[j];
        }
    });
    return out;
}

Tensor dropout(const Tensor& a, double p, bool train, std::mt19937_64* rng) {
    check_defined("dropout", {&a});
    if (p < 0.0 || p >= 1.0) fail("dropout", "rate must be in [0, 1), got " + std::to_string(p));
    if (!train || p == 0.0) return a;
    if (!rng) fail("dropout", "active dropout needs a random stream");
    auto keep = std::make_shared<std::vector<double>>(a.values().size());
    const double scale_up = 1.0 / (1.0 - p);
    for (double& k : *keep) k = (uniform01(*rng) >= p) ? scale_up : 0.0;
    Tensor out(a.shape(), 0.0);
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * (*keep)[i];
    finalize(out, "dropout");
    wire(out, {&a}, [a, keep](Tensor& o) mutable {
        if (!a.requires_grad()) return;
        const auto& g = o.grad();
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*keep)[i];
    });
    return out;
}

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                                    const Tensor& w_input, const Tensor& w_hidden,
                                    const Tensor& bias) {
    check_defined("lstm_cell", {&x, &h_prev, &c_prev, &w_input, &w_hidden, &bias});
    require_ndim("lstm_cell", x, 1);
    require_ndim("lstm_cell", h_prev, 1);
    const int H = h_prev.dim(0);
    if (w_input.ndim() != 2 || w_input.dim(0) != 4 * H || w_input.dim(1) != x.dim(0) ||
        w_hidden.ndim() != 2 || w_hidden.dim(0) != 4 * H || w_hidden.dim(1) != H ||
        bias.dim(0) != 4 * H || c_prev.dim(0) != H)
        fail("lstm_cell", "inconsistent shapes: x " + shape_str(x.shape()) + ", h " +
                              shape_str(h_prev.shape()) + ", w_input " +
                              shape_str(w_input.shape()) + ", w_hidden " +
                              shape_str(w_hidden.shape()));
    Tensor z = add(add(matmul(w_input, x), matmul(w_hidden, h_prev)), bias);
    Tensor gate_in = sigmoid(slice(z, 0, H));
    Tensor gate_forget = sigmoid(slice(z, H, H));
    Tensor gate_cell = tanh(slice(z, 2 * H, H));
    Tensor gate_out = sigmoid(slice(z, 3 * H, H));
    Tensor c_next = add(mul(gate_forget, c_prev), mul(gate_in, gate_cell));
    Tensor h_next = mul(gate_out, tanh(c_next));
    return {h_next, c_next};
}

namespace {
// Detaches from any enclosing tape for the duration of a grad check so the
// repeated forward evaluations don't pollute the caller's record.
struct NoTapeScope {
    Tape* saved;
    NoTapeScope() : saved(g_active_tape) { g_active_tape = nullptr; }
    ~NoTapeScope() { g_active_tape = saved; }
};
}  // namespace

double grad_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& inputs,
                  double eps) {
    NoTapeScope detach;
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        for (const Tensor& t : inputs) t.zero_grad();
        Tensor out = fn();
        if (out.size() != 1) fail("grad_check", "function must return a scalar");
        if (!std::isfinite(out.item())) fail("grad_check", "non-finite function output");
        tape.backward(out);
        for (const Tensor& t : inputs) analytic.push_back(t.grad());
    }
    const auto eval = [&]() {
        Tensor out = fn();
        const double v = out.item();
        if (!std::isfinite(v)) fail("grad_check", "non-finite function output");
        return v;
    };
    double worst = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& vals = inputs[ti].values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + eps;
            const double up = eval();
            vals[i] = saved - eps;
            const double down = eval();
            vals[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[ti][i];
            const double err =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace oaag
