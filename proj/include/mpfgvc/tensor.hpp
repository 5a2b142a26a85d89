#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "mpfgvc/errors.hpp"

namespace mpfgvc {

// Storage precision. Values are carried in doubles; in f32 mode every stored
// element is rounded through IEEE float so the state space is exactly the
// 32-bit one while gradient-check runs can switch to full doubles.
enum class Precision { f32, f64 };

Precision default_precision();
void set_default_precision(Precision p);

inline double quantized(double x, Precision p) {
    return p == Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x;
}

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense tensor handle. Copying shares storage; ops create fresh tensors.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor row(const std::vector<double>& values, bool requires_grad = false);
    static Tensor matrix(std::int64_t rows, std::int64_t cols, std::vector<double> values,
                         bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const;
    std::int64_t dim(int axis) const;
    int rank() const;
    std::int64_t numel() const;

    // Handle semantics: a const Tensor is a const handle to shared storage,
    // so value/grad buffers stay mutable through it.
    std::vector<double>& values() const;

    bool requires_grad() const;
    void set_requires_grad(bool rg) const;

    bool has_grad() const;
    std::vector<double>& grad() const;
    void ensure_grad() const;  // allocates zeros if absent
    void clear_grad() const;   // drops the buffer

    double item() const;  // scalar tensors only
    double at(std::initializer_list<std::int64_t> idx) const;

    std::int64_t node_id() const;
    void set_node_id(std::int64_t id) const;

    // Stable identity of the underlying storage.
    const void* id() const { return d_.get(); }

    // Deep copy with detached storage (no grad, no tape linkage).
    Tensor clone() const;

private:
    struct Data {
        Shape shape;
        std::vector<double> v;
        std::vector<double> g;  // empty == absent
        bool requires_grad = false;
        std::int64_t node_id = -1;
    };
    std::shared_ptr<Data> d_;
};

// One recorded operation. `backward` reads output.grad() and accumulates into
// the grads of inputs that require them.
struct TapeNode {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
};

// Reverse-mode tape. Forward ops append nodes in execution order; backward()
// replays them reversed, which is a valid topological order by construction.
class Tape {
public:
    static Tape* current();

    void record(TapeNode node);
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and propagates. Loss must be scalar.
    void backward(const Tensor& loss);

private:
    friend class TapeScope;
    std::vector<TapeNode> nodes_;
};

// RAII activation of a tape on the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// Accumulate src into dst honoring the active precision.
void grad_accumulate(std::vector<double>& dst, const std::vector<double>& src);

}  // namespace mpfgvc
