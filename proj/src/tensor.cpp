#include "dml/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dml {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

int kernel_threads() {
    static int n = [] {
        const char* env = std::getenv("DML_THREADS");
        if (!env) return 1;
        int v = std::atoi(env);
        return v >= 1 ? v : 1;
    }();
    return n;
}

void TensorData::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

Tensor::Tensor(Shape shape, bool requires_grad) : d_(std::make_shared<TensorData>()) {
    for (int64_t d : shape) {
        if (d <= 0) kernel_error("tensor", "non-positive dimension in shape " + shape_str(shape));
    }
    if (shape.size() > 4) kernel_error("tensor", "rank > 4 unsupported: " + shape_str(shape));
    d_->shape = std::move(shape);
    d_->data.assign(size_t(shape_numel(d_->shape)), 0.0f);
    d_->requires_grad = requires_grad;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    if (int64_t(values.size()) != t.numel())
        kernel_error("tensor", "value count " + std::to_string(values.size()) +
                                   " does not match shape " + shape_str(t.shape()));
    t.d_->data = std::move(values);
    return t;
}

Tensor Tensor::scalar(float v) { return from({1}, {v}); }

float Tensor::item() const {
    if (numel() != 1) kernel_error("item", "tensor is not scalar: " + shape_str(shape()));
    return d_->data[0];
}

void Tensor::zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->data = d_->data;
    t.d_->requires_grad = d_->requires_grad;
    return t;
}

void kernel_error(const std::string& kernel, const std::string& what) {
    throw std::runtime_error(kernel + ": " + what);
}

void check_finite(const Tensor& t, const char* kernel) {
#ifndef NDEBUG
    for (float v : t.data()) {
        if (!std::isfinite(v)) kernel_error(kernel, "non-finite value in output");
    }
#else
    (void)t;
    (void)kernel;
#endif
}

namespace {

void require_rank2(const Tensor& t, const char* kernel) {
    if (t.rank() != 2) kernel_error(kernel, "expected rank-2 tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* kernel) {
    if (a.shape() != b.shape())
        kernel_error(kernel, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Treat a rank-N tensor as (rows x cols) with the reduced axis laid out either
// contiguously (last axis) or strided (axis 0 of rank 2).
struct AxisView {
    int64_t outer;   // number of independent lines
    int64_t len;     // elements along the axis
    int64_t stride;  // stride between consecutive elements of a line
    int64_t pitch;   // stride between line starts
};

AxisView axis_view(const Tensor& t, int axis, const char* kernel) {
    if (axis < 0 || axis >= t.rank())
        kernel_error(kernel, "axis " + std::to_string(axis) + " out of range for " + shape_str(t.shape()));
    if (t.rank() == 1) return {1, t.dim(0), 1, 0};
    if (t.rank() == 2) {
        if (axis == 1) return {t.rows(), t.cols(), 1, t.cols()};
        return {t.cols(), t.rows(), t.cols(), 1};
    }
    kernel_error(kernel, "rank > 2 unsupported for axis reduction: " + shape_str(t.shape()));
}

}  // namespace

void Graph::push_backward(std::function<void()> fn) { tape_.push_back(std::move(fn)); }

bool Graph::wants_grad(std::initializer_list<Tensor> inputs) const {
    for (const Tensor& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

void Graph::backward(const Tensor& loss) {
    if (loss.numel() != 1) kernel_error("backward", "loss is not scalar: " + shape_str(loss.shape()));
    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0f;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

void matmul_reference(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += double(a[i * k + p]) * double(b[p * n + j]);
            c[i * n + j] = float(acc);
        }
    }
}

namespace {

// Row-parallel matmul with per-row f64 accumulators. Each output row is owned
// by one thread, so results are bit-identical for any thread count.
void matmul_rows(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    int threads = kernel_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1 && m > 1)
#endif
    for (int64_t i = 0; i < m; ++i) {
        std::vector<double> acc(size_t(n), 0.0);
        const float* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            double av = arow[p];
            const float* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) acc[size_t(j)] += av * double(brow[j]);
        }
        float* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] = float(acc[size_t(j)]);
    }
}

// C += A^T * B where A is (m x k), B is (m x n), C is (k x n); used by matmul backward.
void matmul_at_b_accum(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t j = 0; j < k; ++j) {
        std::vector<double> acc(size_t(n), 0.0);
        for (int64_t i = 0; i < m; ++i) {
            double av = a[i * k + j];
            const float* brow = b + i * n;
            for (int64_t t = 0; t < n; ++t) acc[size_t(t)] += av * double(brow[t]);
        }
        float* crow = c + j * n;
        for (int64_t t = 0; t < n; ++t) crow[t] += float(acc[size_t(t)]);
    }
}

// C += A * B^T where A is (m x k), B is (n x k), C is (m x n).
void matmul_a_bt_accum(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const float* brow = b + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += double(arow[p]) * double(brow[p]);
            c[i * n + j] += float(acc);
        }
    }
}

}  // namespace

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows())
        kernel_error("matmul", "inner dims differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out({a.rows(), b.cols()});
    matmul_rows(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
    check_finite(out, "matmul");
    if (wants_grad({a, b})) {
        out.set_requires_grad(true);
        push_backward([a, b, out] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            int64_t m = a.rows(), k = a.cols(), n = b.cols();
            if (a.requires_grad()) {
                a.node()->ensure_grad();
                matmul_a_bt_accum(og.data(), b.data().data(), a.node()->grad.data(), m, n, k);
            }
            if (b.requires_grad()) {
                b.node()->ensure_grad();
                matmul_at_b_accum(a.data().data(), og.data(), b.node()->grad.data(), m, k, n);
            }
        });
    }
    return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    bool bias = a.shape() != b.shape();
    if (bias) {
        // only broadcast allowed: rank-1 b over the last axis of a
        if (b.rank() != 1 || a.rank() < 1 || a.shape().back() != b.dim(0))
            kernel_error("add", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out(a.shape());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    if (!bias) {
        for (int64_t i = 0; i < a.numel(); ++i) od[size_t(i)] = ad[size_t(i)] + bd[size_t(i)];
    } else {
        int64_t d = b.dim(0);
        for (int64_t i = 0; i < a.numel(); ++i) od[size_t(i)] = ad[size_t(i)] + bd[size_t(i % d)];
    }
    check_finite(out, "add");
    if (wants_grad({a, b})) {
        out.set_requires_grad(true);
        push_backward([a, b, out, bias] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            if (a.requires_grad()) {
                a.node()->ensure_grad();
                auto& ag = a.node()->grad;
                for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
            }
            if (b.requires_grad()) {
                b.node()->ensure_grad();
                auto& bg = b.node()->grad;
                if (!bias) {
                    for (size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
                } else {
                    size_t d = bg.size();
                    for (size_t i = 0; i < og.size(); ++i) bg[i % d] += og[i];
                }
            }
        });
    }
    return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    check_finite(out, "mul");
    if (wants_grad({a, b})) {
        out.set_requires_grad(true);
        push_backward([a, b, out] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            if (a.requires_grad()) {
                a.node()->ensure_grad();
                auto& ag = a.node()->grad;
                auto bd = b.data();
                for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * bd[i];
            }
            if (b.requires_grad()) {
                b.node()->ensure_grad();
                auto& bg = b.node()->grad;
                auto ad = a.data();
                for (size_t i = 0; i < og.size(); ++i) bg[i] += og[i] * ad[i];
            }
        });
    }
    return out;
}

Tensor Graph::scale(const Tensor& a, float s) {
    Tensor out(a.shape());
    auto ad = a.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * s;
    check_finite(out, "scale");
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        push_backward([a, out, s] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            a.node()->ensure_grad();
            auto& ag = a.node()->grad;
            for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * s;
        });
    }
    return out;
}

Tensor Graph::concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) kernel_error("concat", "no inputs");
    int rank = parts[0].rank();
    if (axis < 0 || axis >= rank) kernel_error("concat", "axis " + std::to_string(axis) + " out of range");
    Shape shape = parts[0].shape();
    int64_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != rank) kernel_error("concat", "rank mismatch");
        for (int d = 0; d < rank; ++d) {
            if (d != axis && p.dim(d) != shape[size_t(d)])
                kernel_error("concat", "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
        }
        total += p.dim(axis);
    }
    shape[size_t(axis)] = total;
    Tensor out(shape);
    // copy blocks; for rank-2 axis-0 this is contiguous, axis-1 is row-strided
    bool grad = false;
    for (const Tensor& p : parts) grad = grad || p.requires_grad();
    auto od = out.data();
    if (rank == 1 || axis == 0) {
        size_t off = 0;
        for (const Tensor& p : parts) {
            auto pd = p.data();
            std::copy(pd.begin(), pd.end(), od.begin() + long(off));
            off += pd.size();
        }
    } else {  // rank 2, axis 1
        int64_t rows = shape[0], ocols = shape[1];
        int64_t coff = 0;
        for (const Tensor& p : parts) {
            auto pd = p.data();
            int64_t pc = p.cols();
            for (int64_t r = 0; r < rows; ++r)
                std::copy(pd.begin() + r * pc, pd.begin() + (r + 1) * pc, od.begin() + r * ocols + coff);
            coff += pc;
        }
    }
    if (grad) {
        out.set_requires_grad(true);
        push_backward([parts, out, axis, rank] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            if (rank == 1 || axis == 0) {
                size_t off = 0;
                for (const Tensor& p : parts) {
                    size_t n = size_t(p.numel());
                    if (p.requires_grad()) {
                        p.node()->ensure_grad();
                        auto& pg = p.node()->grad;
                        for (size_t i = 0; i < n; ++i) pg[i] += og[off + i];
                    }
                    off += n;
                }
            } else {
                int64_t rows = out.rows(), ocols = out.cols();
                int64_t coff = 0;
                for (const Tensor& p : parts) {
                    int64_t pc = p.cols();
                    if (p.requires_grad()) {
                        p.node()->ensure_grad();
                        auto& pg = p.node()->grad;
                        for (int64_t r = 0; r < rows; ++r)
                            for (int64_t c = 0; c < pc; ++c) pg[size_t(r * pc + c)] += og[size_t(r * ocols + coff + c)];
                    }
                    coff += pc;
                }
            }
        });
    }
    return out;
}

Tensor Graph::slice(const Tensor& a, int axis, int64_t start, int64_t end) {
    if (axis < 0 || axis >= a.rank())
        kernel_error("slice", "axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
    if (start < 0 || end > a.dim(axis) || start >= end)
        kernel_error("slice", "bad range [" + std::to_string(start) + "," + std::to_string(end) + ") on " +
                                  shape_str(a.shape()));
    Shape shape = a.shape();
    shape[size_t(axis)] = end - start;
    Tensor out(shape);
    auto ad = a.data();
    auto od = out.data();
    if (a.rank() == 1 || axis == 0) {
        int64_t pitch = a.numel() / a.dim(0);
        std::copy(ad.begin() + start * pitch, ad.begin() + end * pitch, od.begin());
    } else {  // rank 2, axis 1
        int64_t rows = a.rows(), ac = a.cols(), oc = end - start;
        for (int64_t r = 0; r < rows; ++r)
            std::copy(ad.begin() + r * ac + start, ad.begin() + r * ac + end, od.begin() + r * oc);
    }
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        push_backward([a, out, axis, start, end] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            a.node()->ensure_grad();
            auto& ag = a.node()->grad;
            if (a.rank() == 1 || axis == 0) {
                int64_t pitch = a.numel() / a.dim(0);
                size_t off = size_t(start * pitch);
                for (size_t i = 0; i < og.size(); ++i) ag[off + i] += og[i];
            } else {
                int64_t rows = a.rows(), ac = a.cols(), oc = end - start;
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < oc; ++c) ag[size_t(r * ac + start + c)] += og[size_t(r * oc + c)];
            }
        });
    }
    return out;
}

Tensor Graph::transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    Tensor out({a.cols(), a.rows()});
    auto ad = a.data();
    auto od = out.data();
    int64_t r = a.rows(), c = a.cols();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) od[size_t(j * r + i)] = ad[size_t(i * c + j)];
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        push_backward([a, out] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            a.node()->ensure_grad();
            auto& ag = a.node()->grad;
            int64_t r = a.rows(), c = a.cols();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) ag[size_t(i * c + j)] += og[size_t(j * r + i)];
        });
    }
    return out;
}

Tensor Graph::reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        kernel_error("reshape", "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    Tensor out(shape);
    auto ad = a.data();
    std::copy(ad.begin(), ad.end(), out.data().begin());
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        push_backward([a, out] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            a.node()->ensure_grad();
            auto& ag = a.node()->grad;
            for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
        });
    }
    return out;
}

Tensor Graph::softmax(const Tensor& a, int axis) {
    AxisView v = axis_view(a, axis, "softmax");
    Tensor out(a.shape());
    auto ad = a.data();
    auto od = out.data();
    for (int64_t line = 0; line < v.outer; ++line) {
        const float* x = ad.data() + line * v.pitch;
        float* y = od.data() + line * v.pitch;
        double mx = -1e300;
        for (int64_t i = 0; i < v.len; ++i) mx = std::max(mx, double(x[i * v.stride]));
        double sum = 0.0;
        for (int64_t i = 0; i < v.len; ++i) {
            double e = std::exp(double(x[i * v.stride]) - mx);
            y[i * v.stride] = float(e);
            sum += e;
        }
        for (int64_t i = 0; i < v.len; ++i) y[i * v.stride] = float(double(y[i * v.stride]) / sum);
    }
    check_finite(out, "softmax");
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        push_backward([a, out, v] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            a.node()->ensure_grad();
            auto& ag = a.node()->grad;
            auto yd = out.data();
            for (int64_t line = 0; line < v.outer; ++line) {
                const float* y = yd.data() + line * v.pitch;
                const float* gy = og.data() + line * v.pitch;
                float* gx = ag.data() + line * v.pitch;
                double dot = 0.0;
                for (int64_t i = 0; i < v.len; ++i) dot += double(gy[i * v.stride]) * double(y[i * v.stride]);
                for (int64_t i = 0; i < v.len; ++i)
                    gx[i * v.stride] += float(double(y[i * v.stride]) * (double(gy[i * v.stride]) - dot));
            }
        });
    }
    return out;
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    if (eps <= 0) kernel_error("layer_norm", "eps must be positive");
    int64_t d = x.shape().back();
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
        kernel_error("layer_norm", "gamma/beta shape mismatch for " + shape_str(x.shape()));
    int64_t rows = x.numel() / d;
    Tensor out(x.shape());
    // cached per-row stats for backward
    auto stats = std::make_shared<std::vector<double>>(size_t(rows) * 2);
    auto xd = x.data();
    auto gd = gamma.data(), bd = beta.data();
    auto od = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = xd.data() + r * d;
        float* yr = od.data() + r * d;
        double mu = 0.0;
        for (int64_t i = 0; i < d; ++i) mu += xr[i];
        mu /= double(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            double t = xr[i] - mu;
            var += t * t;
        }
        var /= double(d);
        double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[size_t(r) * 2] = mu;
        (*stats)[size_t(r) * 2 + 1] = inv;
        for (int64_t i = 0; i < d; ++i) yr[i] = float((xr[i] - mu) * inv * gd[size_t(i)] + bd[size_t(i)]);
    }
    check_finite(out, "layer_norm");
    if (wants_grad({x, gamma, beta})) {
        out.set_requires_grad(true);
        push_backward([x, gamma, beta, out, stats, d, rows] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            auto xd = x.data();
            auto gd = gamma.data();
            for (int64_t r = 0; r < rows; ++r) {
                const float* xr = xd.data() + r * d;
                const float* gy = og.data() + r * d;
                double mu = (*stats)[size_t(r) * 2];
                double inv = (*stats)[size_t(r) * 2 + 1];
                if (gamma.requires_grad() || beta.requires_grad()) {
                    if (gamma.requires_grad()) gamma.node()->ensure_grad();
                    if (beta.requires_grad()) beta.node()->ensure_grad();
                    for (int64_t i = 0; i < d; ++i) {
                        double xhat = (xr[i] - mu) * inv;
                        if (gamma.requires_grad()) gamma.node()->grad[size_t(i)] += float(gy[i] * xhat);
                        if (beta.requires_grad()) beta.node()->grad[size_t(i)] += gy[i];
                    }
                }
                if (x.requires_grad()) {
                    x.node()->ensure_grad();
                    float* gx = x.node()->grad.data() + r * d;
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t i = 0; i < d; ++i) {
                        double dxhat = double(gy[i]) * double(gd[size_t(i)]);
                        double xhat = (xr[i] - mu) * inv;
                        m1 += dxhat;
                        m2 += dxhat * xhat;
                    }
                    m1 /= double(d);
                    m2 /= double(d);
                    for (int64_t i = 0; i < d; ++i) {
                        double dxhat = double(gy[i]) * double(gd[size_t(i)]);
                        double xhat = (xr[i] - mu) * inv;
                        gx[i] += float(inv * (dxhat - m1 - xhat * m2));
                    }
                }
            }
        });
    }
    return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(Graph& g, const Tensor& a, const char* name, Fwd fwd, Bwd dydx) {
    Tensor out(a.shape());
    auto ad = a.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = float(fwd(double(ad[i])));
    check_finite(out, name);
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        g.push_backward([a, out, dydx] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            a.node()->ensure_grad();
            auto& ag = a.node()->grad;
            auto ad = a.data();
            auto od = out.data();
            for (size_t i = 0; i < og.size(); ++i) ag[i] += float(double(og[i]) * dydx(double(ad[i]), double(od[i])));
        });
    }
    return out;
}

}  // namespace

Tensor Graph::relu(const Tensor& a) {
    return unary_op(
        *this, a, "relu", [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor Graph::gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865476;
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    return unary_op(
        *this, a, "gelu", [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x, double) {
            double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            return phi + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}

Tensor Graph::sigmoid(const Tensor& a) {
    return unary_op(
        *this, a, "sigmoid",
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor Graph::tanh(const Tensor& a) {
    return unary_op(
        *this, a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor Graph::l2_normalize(const Tensor& a, int axis, float eps) {
    if (eps <= 0) kernel_error("l2_normalize", "eps must be positive");
    AxisView v = axis_view(a, axis, "l2_normalize");
    Tensor out(a.shape());
    auto norms = std::make_shared<std::vector<double>>(size_t(v.outer));
    auto ad = a.data();
    auto od = out.data();
    for (int64_t line = 0; line < v.outer; ++line) {
        const float* x = ad.data() + line * v.pitch;
        float* y = od.data() + line * v.pitch;
        double ss = 0.0;
        for (int64_t i = 0; i < v.len; ++i) ss += double(x[i * v.stride]) * double(x[i * v.stride]);
        double n = std::max(std::sqrt(ss), double(eps));
        (*norms)[size_t(line)] = n;
        for (int64_t i = 0; i < v.len; ++i) y[i * v.stride] = float(double(x[i * v.stride]) / n);
    }
    check_finite(out, "l2_normalize");
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        push_backward([a, out, v, norms] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            a.node()->ensure_grad();
            auto& ag = a.node()->grad;
            auto yd = out.data();
            for (int64_t line = 0; line < v.outer; ++line) {
                const float* y = yd.data() + line * v.pitch;
                const float* gy = og.data() + line * v.pitch;
                float* gx = ag.data() + line * v.pitch;
                double n = (*norms)[size_t(line)];
                double dot = 0.0;
                for (int64_t i = 0; i < v.len; ++i) dot += double(gy[i * v.stride]) * double(y[i * v.stride]);
                for (int64_t i = 0; i < v.len; ++i)
                    gx[i * v.stride] += float((double(gy[i * v.stride]) - dot * double(y[i * v.stride])) / n);
            }
        });
    }
    return out;
}

Tensor Graph::log1p_exp_sum(const Tensor& a) {
    // log(1 + sum_i exp(a_i)) over all elements; empty input gives log(1) = 0
    auto ad = a.data();
    double mx = 0.0;  // the implicit "1" term is exp(0)
    for (float x : ad) mx = std::max(mx, double(x));
    double sum = std::exp(-mx);
    for (float x : ad) sum += std::exp(double(x) - mx);
    Tensor out = Tensor::scalar(float(mx + std::log(sum)));
    check_finite(out, "log1p_exp_sum");
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        double denom = sum;
        push_backward([a, out, mx, denom] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            a.node()->ensure_grad();
            auto& ag = a.node()->grad;
            auto ad = a.data();
            for (size_t i = 0; i < ag.size(); ++i)
                ag[i] += float(double(og[0]) * std::exp(double(ad[i]) - mx) / denom);
        });
    }
    return out;
}

Tensor Graph::mean(const Tensor& a, int axis) {
    AxisView v = axis_view(a, axis, "mean");
    Shape oshape;
    if (a.rank() == 1)
        oshape = {1};
    else
        oshape = {axis == 1 ? a.rows() : a.cols()};
    Tensor out(oshape);
    auto ad = a.data();
    auto od = out.data();
    for (int64_t line = 0; line < v.outer; ++line) {
        const float* x = ad.data() + line * v.pitch;
        double s = 0.0;
        for (int64_t i = 0; i < v.len; ++i) s += double(x[i * v.stride]);
        od[size_t(line)] = float(s / double(v.len));
    }
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        push_backward([a, out, v] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            a.node()->ensure_grad();
            auto& ag = a.node()->grad;
            for (int64_t line = 0; line < v.outer; ++line) {
                float g = og[size_t(line)] / float(v.len);
                float* gx = ag.data() + line * v.pitch;
                for (int64_t i = 0; i < v.len; ++i) gx[i * v.stride] += g;
            }
        });
    }
    return out;
}

Tensor Graph::stop_gradient(const Tensor& a) {
    Tensor out = a.clone();
    out.set_requires_grad(false);
    return out;
}

Tensor Graph::stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) kernel_error("stack_rows", "no inputs");
    int64_t d = rows[0].numel();
    std::vector<Tensor> views;
    views.reserve(rows.size());
    for (const Tensor& r : rows) {
        if (r.rank() != 1 || r.dim(0) != d)
            kernel_error("stack_rows", "expected rank-1 length " + std::to_string(d) + ", got " + shape_str(r.shape()));
        views.push_back(reshape(r, {1, d}));
    }
    return concat(views, 0);
}

}  // namespace dml
