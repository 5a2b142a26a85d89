#include "mpfgvc/tensor.hpp"

#include <atomic>
#include <sstream>

namespace mpfgvc {

namespace {
std::atomic<Precision> g_precision{Precision::f32};
thread_local Tape* t_active_tape = nullptr;
}  // namespace

Precision default_precision() { return g_precision.load(std::memory_order_relaxed); }

void set_default_precision(Precision p) { g_precision.store(p, std::memory_order_relaxed); }

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    std::vector<double> v(static_cast<std::size_t>(n), value);
    return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto d : shape)
        if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    const auto n = shape_numel(shape);
    if (values.empty()) values.assign(static_cast<std::size_t>(n), 0.0);
    if (static_cast<std::int64_t>(values.size()) != n)
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match " +
                         shape_str(shape));
    const Precision p = default_precision();
    if (p == Precision::f32)
        for (auto& x : values) x = quantized(x, p);
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->v = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

Tensor Tensor::row(const std::vector<double>& values, bool requires_grad) {
    return from({static_cast<std::int64_t>(values.size())}, values, requires_grad);
}

Tensor Tensor::matrix(std::int64_t rows, std::int64_t cols, std::vector<double> values,
                      bool requires_grad) {
    return from({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!d_) throw ContractError("use of undefined tensor");
    return d_->shape;
}

std::int64_t Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[static_cast<std::size_t>(axis)];
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

std::vector<double>& Tensor::values() const {
    if (!d_) throw ContractError("use of undefined tensor");
    return d_->v;
}

bool Tensor::requires_grad() const { return d_ && d_->requires_grad; }

void Tensor::set_requires_grad(bool rg) const {
    if (!d_) throw ContractError("use of undefined tensor");
    d_->requires_grad = rg;
    if (!rg) d_->g.clear();
}

bool Tensor::has_grad() const { return d_ && !d_->g.empty(); }

std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient buffer");
    return d_->g;
}

void Tensor::ensure_grad() const {
    if (!d_) throw ContractError("use of undefined tensor");
    if (d_->g.empty()) d_->g.assign(d_->v.size(), 0.0);
}

void Tensor::clear_grad() const {
    if (d_) d_->g.clear();
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return values()[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
    const auto& s = shape();
    if (idx.size() != s.size())
        throw IndexError("index rank " + std::to_string(idx.size()) + " vs " + shape_str(s));
    std::int64_t flat = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
        if (i < 0 || i >= s[axis]) throw IndexError("index out of range in axis " + std::to_string(axis));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return values()[static_cast<std::size_t>(flat)];
}

std::int64_t Tensor::node_id() const { return d_ ? d_->node_id : -1; }

void Tensor::set_node_id(std::int64_t id) const {
    if (d_) d_->node_id = id;
}

Tensor Tensor::clone() const {
    if (!d_) return {};
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = d_->shape;
    t.d_->v = d_->v;
    t.d_->requires_grad = false;
    return t;
}

Tape* Tape::current() { return t_active_tape; }

void Tape::record(TapeNode node) {
    node.output.set_node_id(static_cast<std::int64_t>(nodes_.size()));
    nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward() requires a scalar loss");
    // Zero-init grads for every requires-grad tensor that touched the tape so
    // unreachable-but-recorded tensors report zeros rather than stale values.
    for (auto& n : nodes_) {
        if (n.output.requires_grad()) n.output.ensure_grad();
        for (auto& in : n.inputs)
            if (in.requires_grad()) in.ensure_grad();
    }
    Tensor seed = loss;
    seed.ensure_grad();
    seed.grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output.requires_grad()) continue;
        it->backward();
    }
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }

TapeScope::~TapeScope() { t_active_tape = previous_; }

void grad_accumulate(std::vector<double>& dst, const std::vector<double>& src) {
    const Precision p = default_precision();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = quantized(dst[i] + src[i], p);
}

}  // namespace mpfgvc
