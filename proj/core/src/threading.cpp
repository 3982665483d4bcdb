#include "fb/threading.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace fb {

int thread_count() {
    static int cached = [] {
        if (const char *env = std::getenv("FB_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc > 0 ? static_cast<int>(hc) : 1;
    }();
    return cached;
}

static void run_chunks(int64_t n, int64_t chunk, const std::function<void(int64_t, int64_t)> &chunk_fn) {
    int64_t chunks = (n + chunk - 1) / chunk;
    int workers = thread_count();
    if (workers == 1 || chunks == 1) {
        for (int64_t c = 0; c < chunks; ++c) chunk_fn(c * chunk, std::min(c * chunk + chunk, n));
        return;
    }
    std::atomic<int64_t> next{0};
    auto work = [&] {
        for (;;) {
            int64_t c = next.fetch_add(1, std::memory_order_relaxed);
            if (c >= chunks) return;
            chunk_fn(c * chunk, std::min(c * chunk + chunk, n));
        }
    };
    int spawn = static_cast<int>(std::min<int64_t>(workers, chunks));
    std::vector<std::thread> threads;
    threads.reserve(spawn);
    for (int i = 0; i < spawn; ++i) threads.emplace_back(work);
    for (auto &t : threads) t.join();
}

void parallel_for(int64_t n, const std::function<void(int64_t)> &fn) {
    if (n <= 0) return;
    // Each index writes only its own state, so chunking cannot affect results
    // and may adapt to the worker count.
    int64_t chunk = std::max<int64_t>(1, n / (static_cast<int64_t>(thread_count()) * 4));
    run_chunks(n, chunk, [&fn](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) fn(i);
    });
}

double ordered_reduce(int64_t n, const std::function<double(int64_t)> &fn) {
    if (n <= 0) return 0.0;
    // Fixed chunk width: partial-sum boundaries depend only on n, so the float
    // rounding of the combined result is identical for any FB_THREADS value.
    constexpr int64_t k_chunk = 64;
    std::vector<double> partial(static_cast<size_t>((n + k_chunk - 1) / k_chunk), 0.0);
    run_chunks(n, k_chunk, [&fn, &partial](int64_t lo, int64_t hi) {
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) acc += fn(i);
        partial[static_cast<size_t>(lo / k_chunk)] = acc;
    });
    double acc = 0.0;
    for (double p : partial) acc += p;
    return acc;
}

}  // namespace fb
