#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "driftlab/core.hpp"
#include "driftlab/lattice.hpp"

namespace driftlab::spectral {

/// Orthonormal real Fourier basis of the periodic n-point axis.
///
/// Index 0 is the constant mode, 2k-1 and 2k are cos and sin of frequency k,
/// and for even n the last index is the alternating mode.
struct AxisBasis {
    int n = 0;
    double dx = 0.0;
    std::vector<double> forward;   // [k * n + j]
    std::vector<int> freq;         // frequency k of each index
    std::vector<double> mu;        // eigenvalue of minus the 3-point Laplacian
    std::vector<double> kappa;     // spectral derivative multiplier
    std::vector<int> partner;      // cos <-> sin partner, -1 when none
    std::vector<int> sign;         // +1 on cos indices, -1 on sin indices, 0 otherwise

    AxisBasis(int n_, double dx_) : n(n_), dx(dx_) {
        const auto N = static_cast<std::size_t>(n);
        forward.assign(N * N, 0.0);
        freq.assign(N, 0);
        mu.assign(N, 0.0);
        kappa.assign(N, 0.0);
        partner.assign(N, -1);
        sign.assign(N, 0);
        const double c0 = 1.0 / std::sqrt(static_cast<double>(n));
        const double c1 = std::sqrt(2.0 / n);
        for (int j = 0; j < n; ++j) forward[static_cast<std::size_t>(j)] = c0;
        for (int k = 1; 2 * k < n; ++k) {
            const auto ic = static_cast<std::size_t>(2 * k - 1), is = static_cast<std::size_t>(2 * k);
            for (int j = 0; j < n; ++j) {
                const double th = 2.0 * std::numbers::pi * k * j / n;
                forward[ic * N + static_cast<std::size_t>(j)] = c1 * std::cos(th);
                forward[is * N + static_cast<std::size_t>(j)] = c1 * std::sin(th);
            }
            freq[ic] = freq[is] = k;
            partner[ic] = 2 * k;
            partner[is] = 2 * k - 1;
            sign[ic] = 1;
            sign[is] = -1;
        }
        if (n % 2 == 0) {
            const auto iy = N - 1;
            for (int j = 0; j < n; ++j) forward[iy * N + static_cast<std::size_t>(j)] = (j % 2 ? -c0 : c0);
            freq[iy] = n / 2;
        }
        for (std::size_t i = 0; i < N; ++i) {
            const double s = std::sin(std::numbers::pi * freq[i] / n);
            mu[i] = 4.0 / (dx * dx) * s * s;
            if (partner[i] >= 0) kappa[i] = 2.0 * std::numbers::pi * freq[i] / (n * dx);
        }
    }
};

inline std::shared_ptr<const AxisBasis> axis_basis(int n, double dx) {
    static std::mutex mu;
    static std::map<std::pair<int, double>, std::shared_ptr<const AxisBasis>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[{n, dx}];
    if (!slot) slot = std::make_shared<const AxisBasis>(n, dx);
    return slot;
}

/// Tensor-product transforms of one spatial slice.
class TorusTransform {
public:
    explicit TorusTransform(const LatticeGrid& g)
        : dim_(g.dim), n_(g.nodes_per_axis()), basis_(axis_basis(g.nodes_per_axis(), g.dx)) {
        size_ = 1;
        for (int a = 0; a < dim_; ++a) size_ *= static_cast<std::size_t>(n_);
    }

    std::size_t size() const { return size_; }
    int dim() const { return dim_; }
    int n() const { return n_; }
    const AxisBasis& basis() const { return *basis_; }

    void to_modes(double* data) const { apply(data, false); }
    void to_nodes(double* data) const { apply(data, true); }

    /// Multi-index of coefficient position c.
    std::array<int, kMaxDim> index(std::size_t c) const {
        std::array<int, kMaxDim> idx{};
        for (int a = dim_ - 1; a >= 0; --a) {
            idx[static_cast<std::size_t>(a)] = static_cast<int>(c % static_cast<std::size_t>(n_));
            c /= static_cast<std::size_t>(n_);
        }
        return idx;
    }

    /// Eigenvalue of minus the discrete Laplacian on coefficient c.
    double mu(std::size_t c) const {
        const auto idx = index(c);
        double s = 0.0;
        for (int a = 0; a < dim_; ++a) s += basis_->mu[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
        return s;
    }

    /// Spectral derivative along `axis`, in coefficient space, from `in` to `out`.
    void derivative(const double* in, double* out, int axis) const {
        const auto stride = stride_of(axis);
        const auto N = static_cast<std::size_t>(n_);
        for (std::size_t c = 0; c < size_; ++c) {
            const auto k = (c / stride) % N;
            const int p = basis_->partner[k];
            if (p < 0) {
                out[c] = 0.0;
                continue;
            }
            const std::size_t cp = c - k * stride + static_cast<std::size_t>(p) * stride;
            // d/dx (a cos + b sin) = kappa (b cos - a sin)
            out[c] = basis_->sign[k] * basis_->kappa[k] * in[cp];
        }
    }

private:
    std::size_t stride_of(int axis) const {
        std::size_t s = 1;
        for (int a = dim_ - 1; a > axis; --a) s *= static_cast<std::size_t>(n_);
        return s;
    }

    void apply(double* data, bool inverse) const {
        const auto N = static_cast<std::size_t>(n_);
        std::vector<double> line(N), res(N);
        const auto& B = basis_->forward;
        for (int axis = 0; axis < dim_; ++axis) {
            const std::size_t stride = stride_of(axis);
            const std::size_t outer = size_ / (N * stride);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < stride; ++in) {
                    double* base = data + o * N * stride + in;
                    for (std::size_t j = 0; j < N; ++j) line[j] = base[j * stride];
                    if (!inverse) {
                        for (std::size_t k = 0; k < N; ++k) {
                            double s = 0.0;
                            const double* row = B.data() + k * N;
                            for (std::size_t j = 0; j < N; ++j) s += row[j] * line[j];
                            res[k] = s;
                        }
                    } else {
                        std::fill(res.begin(), res.end(), 0.0);
                        for (std::size_t k = 0; k < N; ++k) {
                            const double ck = line[k];
                            const double* row = B.data() + k * N;
                            for (std::size_t j = 0; j < N; ++j) res[j] += row[j] * ck;
                        }
                    }
                    for (std::size_t j = 0; j < N; ++j) base[j * stride] = res[j];
                }
        }
    }

    int dim_;
    int n_;
    std::shared_ptr<const AxisBasis> basis_;
    std::size_t size_;
};

}  // namespace driftlab::spectral
