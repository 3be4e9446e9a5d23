#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace drum {

// Row-major throughout: rows are samples, cblas can work on .data() directly.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& what) : std::runtime_error(what) {}
};

struct SolverError : std::runtime_error {
    explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

// Training loss went non-finite; carries the step index where it happened.
struct DivergenceError : std::runtime_error {
    long step;
    DivergenceError(const std::string& what, long step_index)
        : std::runtime_error(what + " (step " + std::to_string(step_index) + ")"), step(step_index) {}
};

// Process-wide worker count for chunk/task parallelism. BLAS stays single-threaded;
// all parallelism is explicit so results do not depend on the thread count.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for i in [0, n). Work is split into fixed-size chunks so floating-point
// results are identical regardless of how many workers execute them.
void parallel_for(long n, const std::function<void(long)>& fn);

// Runs fn(chunk_index, begin, end) over [0, n) in chunks of `chunk` rows.
// Chunk boundaries depend only on (n, chunk), never on the worker count.
void parallel_chunks(long n, long chunk,
                     const std::function<void(long, long, long)>& fn);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file_hex(const std::string& path);

// Shortest round-trip decimal form (std::to_chars); used for CSV so files are
// byte-stable across runs.
std::string format_double(double v);

}  // namespace drum
