#include "haht/threads.hpp"

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace haht {

int worker_count() {
    const char* env = std::getenv("HAHT_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    try {
        int n = std::stoi(env);
        return n < 1 ? 1 : n;
    } catch (...) {
        return 1;
    }
}

std::size_t chunk_begin(std::size_t n, int workers, int w) {
    return n * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
}

std::size_t chunk_end(std::size_t n, int workers, int w) {
    return n * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) {
        const std::size_t lo = chunk_begin(n, workers, w);
        const std::size_t hi = chunk_end(n, workers, w);
        if (lo >= hi) continue;
        threads.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : threads) t.join();
}

}  // namespace haht
