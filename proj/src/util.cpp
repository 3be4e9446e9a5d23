#include "drum/common.hpp"
#include "drum/rng.hpp"

#include <atomic>
#include <charconv>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

namespace drum {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Pool {
public:
    Pool() { resize(static_cast<int>(std::thread::hardware_concurrency())); }

    ~Pool() { stop(); }

    void resize(int n) {
        if (n < 1) n = 1;
        std::unique_lock lk(mu_);
        if (n == size_) return;
        stop_locked(lk);
        size_ = n;
        done_ = false;
        for (int i = 0; i < n - 1; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    int size() {
        std::unique_lock lk(mu_);
        return size_;
    }

    // Executes tasks 0..count-1 via fn; the caller participates. Blocks until all done.
    void run(long count, const std::function<void(long)>& fn) {
        if (count <= 0) return;
        std::shared_ptr<Job> job = std::make_shared<Job>();
        job->fn = &fn;
        job->count = count;
        {
            std::unique_lock lk(mu_);
            jobs_.push_back(job);
        }
        cv_.notify_all();
        work_on(*job);
        std::unique_lock lk(job->mu);
        job->cv.wait(lk, [&] { return job->active == 0 && job->next >= job->count; });
    }

private:
    struct Job {
        const std::function<void(long)>* fn = nullptr;
        long count = 0;
        std::atomic<long> next{0};
        std::atomic<int> active{0};
        std::mutex mu;
        std::condition_variable cv;
    };

    void work_on(Job& job) {
        job.active.fetch_add(1);
        for (;;) {
            long i = job.next.fetch_add(1);
            if (i >= job.count) break;
            (*job.fn)(i);
        }
        if (job.active.fetch_sub(1) == 1) {
            std::unique_lock lk(job.mu);
            job.cv.notify_all();
        }
    }

    void worker_loop() {
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock lk(mu_);
                cv_.wait(lk, [&] { return done_ || !jobs_.empty(); });
                if (done_) return;
                job = jobs_.front();
                if (job->next.load() >= job->count) {
                    jobs_.pop_front();
                    continue;
                }
            }
            work_on(*job);
        }
    }

    void stop() {
        std::unique_lock lk(mu_);
        stop_locked(lk);
    }

    void stop_locked(std::unique_lock<std::mutex>& lk) {
        done_ = true;
        cv_.notify_all();
        std::vector<std::thread> ws;
        ws.swap(workers_);
        lk.unlock();
        for (auto& w : ws) w.join();
        lk.lock();
    }

    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::shared_ptr<Job>> jobs_;
    std::vector<std::thread> workers_;
    int size_ = 0;
    bool done_ = false;
};

Pool& pool() {
    static Pool p;
    return p;
}

// BLAS must stay single-threaded: parallelism is explicit and chunked so that
// results do not depend on the worker count.
extern "C" void openblas_set_num_threads(int) __attribute__((weak));

struct BlasInit {
    BlasInit() {
        if (openblas_set_num_threads) openblas_set_num_threads(1);
    }
} blas_init;

}  // namespace

std::uint64_t stream_key(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    std::uint64_t k = splitmix64(seed ^ 0x6a09e667f3bcc908ULL);
    k = splitmix64(k ^ fnv1a(tag));
    k = splitmix64(k ^ (index * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL));
    return k;
}

void set_thread_count(int n) { pool().resize(n); }

int thread_count() { return pool().size(); }

void parallel_for(long n, const std::function<void(long)>& fn) {
    if (n <= 0) return;
    if (n == 1 || thread_count() == 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    pool().run(n, fn);
}

void parallel_chunks(long n, long chunk, const std::function<void(long, long, long)>& fn) {
    if (n <= 0) return;
    long n_chunks = (n + chunk - 1) / chunk;
    parallel_for(n_chunks, [&](long c) {
        long begin = c * chunk;
        long end = std::min(n, begin + chunk);
        fn(c, begin, end);
    });
}

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4), enough for artifact hashing.

namespace {

struct Sha256 {
    std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                          0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    unsigned char buf[64];
    std::uint64_t total = 0;
    std::size_t fill = 0;

    static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

    void block(const unsigned char* p) {
        static const std::uint32_t k[64] = {
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
            0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
            0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
            0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
            0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
            0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
            0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
            0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
        std::uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
                   (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
        for (int i = 16; i < 64; ++i) {
            std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], hh = h[7];
        for (int i = 0; i < 64; ++i) {
            std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            std::uint32_t ch = (e & f) ^ (~e & g);
            std::uint32_t t1 = hh + s1 + ch + k[i] + w[i];
            std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            std::uint32_t t2 = s0 + maj;
            hh = g; g = f; f = e; e = d + t1; d = c; c = b; b = a; a = t1 + t2;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d;
        h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
    }

    void update(const unsigned char* p, std::size_t n) {
        total += n;
        while (n > 0) {
            std::size_t take = std::min(n, 64 - fill);
            std::memcpy(buf + fill, p, take);
            fill += take;
            p += take;
            n -= take;
            if (fill == 64) {
                block(buf);
                fill = 0;
            }
        }
    }

    std::string finish() {
        std::uint64_t bits = total * 8;
        unsigned char pad = 0x80;
        update(&pad, 1);
        unsigned char zero = 0;
        while (fill != 56) update(&zero, 1);
        unsigned char len[8];
        for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
        update(len, 8);
        static const char* hex = "0123456789abcdef";
        std::string out(64, '0');
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 4; ++j) {
                unsigned char byte = static_cast<unsigned char>(h[i] >> (24 - 8 * j));
                out[8 * i + 2 * j] = hex[byte >> 4];
                out[8 * i + 2 * j + 1] = hex[byte & 0xf];
            }
        return out;
    }
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    Sha256 s;
    s.update(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
    return s.finish();
}

std::string sha256_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open file for hashing: " + path);
    Sha256 s;
    char chunk[1 << 16];
    while (in) {
        in.read(chunk, sizeof(chunk));
        s.update(reinterpret_cast<const unsigned char*>(chunk), static_cast<std::size_t>(in.gcount()));
    }
    return s.finish();
}

std::string format_double(double v) {
    char b[40];
    auto r = std::to_chars(b, b + sizeof(b), v);
    return std::string(b, r.ptr);
}

}  // namespace drum
