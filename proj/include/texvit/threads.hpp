#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace texvit {

// Persistent worker pool shared by all tensor kernels. TEXVIT_THREADS caps
// the worker count; 1 forces fully serial execution. Work is split into fixed
// contiguous index ranges and every output element is reduced serially inside
// one worker, so results are bitwise identical for any thread count. Nested
// calls from inside a worker run serial. Idle workers sleep on a condition
// variable.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            shutdown_ = true;
        }
        cv_work_.notify_all();
        for (auto& t : workers_) t.join();
    }

    int threads() const { return n_threads_; }

    // For tests; takes effect on the next parallel_for call.
    void set_threads(int n) { n_threads_ = n < 1 ? 1 : n; }

    void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
        if (n <= 0) return;
        int want = n_threads_;
        if (want > n) want = static_cast<int>(n);
        if (want <= 1 || in_worker()) {
            body(0, n);
            return;
        }
        ensure_workers(want - 1);
        const int64_t chunk = (n + want - 1) / want;
        {
            std::lock_guard<std::mutex> lock(mu_);
            body_ = &body;
            total_ = n;
            chunk_ = chunk;
            participants_ = want - 1;
            remaining_ = want - 1;
            ++generation_;
        }
        cv_work_.notify_all();
        {
            // the dispatching thread is inside the region too: nested
            // parallel_for calls from its chunk must run serial
            struct RegionFlag {
                RegionFlag() { worker_flag() = true; }
                ~RegionFlag() { worker_flag() = false; }
            } flag;
            body(0, std::min<int64_t>(chunk, n));
        }
        std::unique_lock<std::mutex> lock(mu_);
        cv_done_.wait(lock, [&] { return remaining_ == 0; });
        body_ = nullptr;
    }

private:
    ThreadPool() {
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (n < 1) n = 1;
        if (const char* env = std::getenv("TEXVIT_THREADS")) {
            char* end = nullptr;
            long v = std::strtol(env, &end, 10);
            if (end != env && v >= 1 && v < 1024) n = static_cast<int>(v);
        }
        n_threads_ = n;
    }

    static bool& worker_flag() {
        thread_local bool is_worker = false;
        return is_worker;
    }
    static bool in_worker() { return worker_flag(); }

    void ensure_workers(int count) {
        std::lock_guard<std::mutex> lock(mu_);
        while (static_cast<int>(workers_.size()) < count) {
            const int id = static_cast<int>(workers_.size()) + 1;
            workers_.emplace_back([this, id] { worker_loop(id); });
        }
    }

    void worker_loop(int id) {
        worker_flag() = true;
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int64_t, int64_t)>* body = nullptr;
            int64_t lo = 0, hi = 0;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_work_.wait(lock, [&] { return shutdown_ || generation_ != seen; });
                if (shutdown_) return;
                seen = generation_;
                if (id <= participants_ && body_ != nullptr) {
                    body = body_;
                    lo = chunk_ * id;
                    hi = std::min<int64_t>(lo + chunk_, total_);
                }
            }
            if (body != nullptr) {
                if (lo < hi) (*body)(lo, hi);
                std::lock_guard<std::mutex> lock(mu_);
                if (--remaining_ == 0) cv_done_.notify_one();
            }
        }
    }

    std::mutex mu_;
    std::condition_variable cv_work_;
    std::condition_variable cv_done_;
    std::vector<std::thread> workers_;
    const std::function<void(int64_t, int64_t)>* body_ = nullptr;
    int64_t total_ = 0;
    int64_t chunk_ = 0;
    int participants_ = 0;
    int remaining_ = 0;
    uint64_t generation_ = 0;
    bool shutdown_ = false;
    int n_threads_ = 1;
};

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    ThreadPool::instance().parallel_for(n, body);
}

// Dispatch helper: go parallel only when the estimated scalar-op count
// justifies waking workers.
inline void parallel_for_work(int64_t n, int64_t approx_ops,
                              const std::function<void(int64_t, int64_t)>& body) {
    if (approx_ops < (1 << 16)) {
        body(0, n);
        return;
    }
    parallel_for(n, body);
}

} // namespace texvit
