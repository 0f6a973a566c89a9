#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vlkd/errors.hpp"
#include "vlkd/rng.hpp"

namespace vlkd {

using Shape = std::vector<int>;

inline int numel_of(const Shape& s) {
    int n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor. The scalar type is a template parameter: training
// runs use float, gradient-check oracles instantiate double.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> v; // values, row-major
    std::vector<T> g; // gradient, allocated lazily; same length as v when present
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), v(static_cast<size_t>(numel_of(shape)), fill) {}

    int numel() const { return static_cast<int>(v.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() >= 2 ? shape[1] : 1; }
    bool is_scalar() const { return numel() == 1; }

    T& at(int i, int j) { return v[static_cast<size_t>(i) * cols() + j]; }
    T at(int i, int j) const { return v[static_cast<size_t>(i) * cols() + j]; }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), T(0));
    }
    void zero_grad() {
        if (!g.empty()) g.assign(g.size(), T(0));
    }
    bool grad_all_zero() const {
        for (T x : g)
            if (x != T(0)) return false;
        return true;
    }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(Shape shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>(std::move(shape));
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

template <typename T>
TensorPtr<T> tensor_from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (static_cast<int>(values.size()) != numel_of(shape))
        throw ShapeError("tensor_from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    t->v = std::move(values);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

template <typename T>
TensorPtr<T> scalar_tensor(T value, bool requires_grad = false) {
    return tensor_from<T>({1}, {value}, requires_grad);
}

// Gaussian-initialized trainable parameter.
template <typename T>
TensorPtr<T> param_tensor(Shape shape, Rng& rng, double stddev) {
    auto t = make_tensor<T>(std::move(shape), true);
    for (auto& x : t->v) x = static_cast<T>(rng.normal() * stddev);
    return t;
}

// Record of executed primitives. Operations are appended in execution order,
// which is a topological order of the data flow; the backward pass replays
// the local-gradient closures exactly once in reverse.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_fn, TensorPtr<T> output) {
        steps_.push_back(Step{std::move(backward_fn), std::move(output)});
    }

    size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad tensor.
    // Gradients of tensors produced by this tape are reset first, so repeated
    // calls accumulate only into leaf tensors (parameters and inputs).
    void backward(const TensorPtr<T>& loss) {
        if (!loss) throw ContractError("backward: null loss tensor");
        if (!loss->is_scalar())
            throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
        for (auto& s : steps_)
            if (s.output) s.output->zero_grad();
        if (!loss->requires_grad) return; // constant graph, nothing to do
        loss->ensure_grad();
        loss->g[0] = T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->fn();
    }

private:
    struct Step {
        std::function<void()> fn;
        TensorPtr<T> output;
    };
    std::vector<Step> steps_;
};

// Forward the values, sever the gradient flow. The result is a constant as
// far as any later backward pass is concerned.
template <typename T>
TensorPtr<T> stop_gradient(const TensorPtr<T>& x) {
    auto out = std::make_shared<Tensor<T>>();
    out->shape = x->shape;
    out->v = x->v;
    out->requires_grad = false;
    return out;
}

} // namespace vlkd
