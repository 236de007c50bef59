#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace driftlab {

enum class ErrorKind {
    domain,
    configuration,
    numerical,
    shape,
    gate_refused,
    divergence,
    schema,
    io,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::domain: return "domain";
        case ErrorKind::configuration: return "configuration";
        case ErrorKind::numerical: return "numerical";
        case ErrorKind::shape: return "shape";
        case ErrorKind::gate_refused: return "gate_refused";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::schema: return "schema";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, ErrorKind kind, const std::string& what) {
    if (!ok) fail(kind, what);
}

inline constexpr int kMaxDim = 6;

/// Small fixed-capacity vector used for points and field values.
struct Vec {
    std::array<double, kMaxDim> v{};
    int n = 0;

    Vec() = default;
    explicit Vec(int dim) : n(dim) {
        require(dim >= 1 && dim <= kMaxDim, ErrorKind::configuration,
                "dimension must lie in [1, " + std::to_string(kMaxDim) + "]");
    }
    Vec(std::initializer_list<double> xs) : Vec(static_cast<int>(xs.size())) {
        std::copy(xs.begin(), xs.end(), v.begin());
    }
    static Vec from(const std::vector<double>& xs) {
        Vec out(static_cast<int>(xs.size()));
        std::copy(xs.begin(), xs.end(), out.v.begin());
        return out;
    }
    std::vector<double> to_vector() const { return {v.begin(), v.begin() + n}; }

    int size() const { return n; }
    double& operator[](int i) { return v[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return v[static_cast<std::size_t>(i)]; }

    double norm2() const {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += v[i] * v[i];
        return s;
    }
    double norm() const { return std::sqrt(norm2()); }

    Vec& operator+=(const Vec& o) {
        for (int i = 0; i < n; ++i) v[i] += o.v[i];
        return *this;
    }
    Vec& operator-=(const Vec& o) {
        for (int i = 0; i < n; ++i) v[i] -= o.v[i];
        return *this;
    }
    Vec& operator*=(double c) {
        for (int i = 0; i < n; ++i) v[i] *= c;
        return *this;
    }
    friend Vec operator+(Vec a, const Vec& b) { return a += b; }
    friend Vec operator-(Vec a, const Vec& b) { return a -= b; }
    friend Vec operator*(double c, Vec a) { return a *= c; }
    friend bool operator==(const Vec& a, const Vec& b) {
        if (a.n != b.n) return false;
        for (int i = 0; i < a.n; ++i)
            if (a.v[i] != b.v[i]) return false;
        return true;
    }
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (int i = 0; i < a.n; ++i) s += a[i] * b[i];
    return s;
}

inline Vec zeros(int dim) { return Vec(dim); }

/// Worker count from DRIFTLAB_WORKERS, default 1.
inline int worker_count() {
    if (const char* env = std::getenv("DRIFTLAB_WORKERS")) {
        int w = std::atoi(env);
        if (w >= 1) return std::min(w, 256);
    }
    return 1;
}

/// Runs fn(i) for i in [0, n) on worker_count() threads with static chunking.
/// Callers write results by index, so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(worker_count());
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

/// Pairwise summation; the order depends only on the input length.
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t h = n / 2;
    return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

inline double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

/// 64-bit FNV-1a, used for config hashes and cache fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ull) {
    return fnv1a(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

inline double ball_volume(int d, double r) {
    return std::pow(std::numbers::pi, 0.5 * d) * std::pow(r, d) / std::tgamma(0.5 * d + 1.0);
}

}  // namespace driftlab
