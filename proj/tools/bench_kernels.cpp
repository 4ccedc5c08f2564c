// Benchmark of the parallel matmul against the serial reference path.
// Set DML_THREADS to control the parallel side; both paths must agree
// bit-for-bit because accumulation order is per-row either way.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "dml/rng.hpp"
#include "dml/tensor.hpp"

using namespace dml;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warmup
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
    std::printf("DML_THREADS=%d\n", kernel_threads());
    std::printf("%8s %12s %12s %10s %8s\n", "size", "parallel_ms", "serial_ms", "speedup", "match");
    Rng rng(42, 0xBE);
    for (int n : {32, 64, 128, 256, 384}) {
        Tensor a({n, n}), b({n, n});
        for (float& v : a.data()) v = float(rng.uniform(-1.0, 1.0));
        for (float& v : b.data()) v = float(rng.uniform(-1.0, 1.0));
        Graph g;
        Tensor c;
        double par = time_ms([&] { c = g.matmul(a, b); }, n <= 128 ? 20 : 5);
        std::vector<float> ref(size_t(n) * n);
        double ser = time_ms([&] { matmul_reference(a.data().data(), b.data().data(), ref.data(), n, n, n); },
                             n <= 128 ? 20 : 5);
        bool match = true;
        for (size_t i = 0; i < ref.size(); ++i)
            if (ref[i] != c.data()[i]) {
                match = false;
                break;
            }
        std::printf("%8d %12.3f %12.3f %10.2fx %8s\n", n, par, ser, ser / par, match ? "yes" : "NO");
        if (!match) return 1;
    }
    return 0;
}
