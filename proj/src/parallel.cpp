#include "dprgmi/parallel.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace dprgmi {

namespace {
std::atomic<unsigned> g_threads{1};
}

void set_worker_threads(unsigned n) { g_threads.store(n == 0 ? 1 : n); }

unsigned worker_threads() { return g_threads.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    unsigned k = g_threads.load();
    if (k <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (k > n) k = static_cast<unsigned>(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(k - 1);
    for (unsigned t = 0; t + 1 < k; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
}

}  // namespace dprgmi
