#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dml {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Number of threads kernels may use. Read from DML_THREADS once (default 1).
int kernel_threads();

struct TensorData {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until a backward pass touches it
    bool requires_grad = false;

    void ensure_grad();
};

// Value-semantic handle onto a shared buffer. Copying a Tensor aliases the
// storage; deep copies go through clone().
class Tensor {
public:
    Tensor() : d_(std::make_shared<TensorData>()) {}
    explicit Tensor(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    const Shape& shape() const { return d_->shape; }
    int rank() const { return int(d_->shape.size()); }
    int64_t numel() const { return int64_t(d_->data.size()); }
    int64_t dim(int axis) const { return d_->shape[size_t(axis)]; }
    // rank-2 helpers
    int64_t rows() const { return d_->shape[0]; }
    int64_t cols() const { return d_->shape[1]; }

    std::span<float> data() { return d_->data; }
    std::span<const float> data() const { return d_->data; }
    std::span<float> grad() { return d_->grad; }
    std::span<const float> grad() const { return d_->grad; }
    float item() const;

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) { d_->requires_grad = b; }
    void ensure_grad() { d_->ensure_grad(); }
    void zero_grad();

    Tensor clone() const;
    bool same_storage(const Tensor& o) const { return d_ == o.d_; }

    TensorData* node() const { return d_.get(); }

private:
    std::shared_ptr<TensorData> d_;
};

[[noreturn]] void kernel_error(const std::string& kernel, const std::string& what);
void check_finite(const Tensor& t, const char* kernel);

// Reverse-mode tape. Kernels append a backward closure per differentiable
// node; backward() replays them in exact reverse insertion order.
class Graph {
public:
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor add(const Tensor& a, const Tensor& b);  // same shape, or bias over last axis
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, float s);
    Tensor concat(const std::vector<Tensor>& parts, int axis);
    Tensor slice(const Tensor& a, int axis, int64_t start, int64_t end);
    Tensor transpose(const Tensor& a);
    Tensor reshape(const Tensor& a, Shape shape);
    Tensor softmax(const Tensor& a, int axis);
    Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);
    Tensor relu(const Tensor& a);
    Tensor gelu(const Tensor& a);
    Tensor sigmoid(const Tensor& a);
    Tensor tanh(const Tensor& a);
    Tensor l2_normalize(const Tensor& a, int axis, float eps);
    Tensor log1p_exp_sum(const Tensor& a);  // scalar log(1 + sum_i exp(a_i))
    Tensor mean(const Tensor& a, int axis);
    Tensor stop_gradient(const Tensor& a);
    Tensor stack_rows(const std::vector<Tensor>& rows);  // rank-1 xE -> NxE

    // for fused ops defined outside this module (loss kernels)
    void push_backward(std::function<void()> fn);
    bool wants_grad(std::initializer_list<Tensor> inputs) const;

    void backward(const Tensor& loss);
    size_t node_count() const { return tape_.size(); }

private:
    std::vector<std::function<void()>> tape_;
};

// Serial reference matmul, kept independent of the OpenMP path for tests and
// the kernel benchmark. C = A(MxK) * B(KxN), f64 accumulation.
void matmul_reference(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n);

constexpr float kLayerNormEps = 1e-6f;
constexpr float kL2NormEps = 1e-12f;

}  // namespace dml
