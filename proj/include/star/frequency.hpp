#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "star/metrics.hpp"
#include "star/tensor.hpp"

namespace star {

using Complex = std::complex<double>;

enum class DftPath {
    automatic,  // radix-2 FFT along power-of-two axes, direct sums elsewhere
    direct,     // direct O(N^2) sums along every axis
};

/// Per-frame, per-channel 2-D spectrum of a [T,C,H,W] video.
struct Spectrum {
    Shape shape;  // T, C, H, W
    std::vector<Complex> bins;

    std::size_t plane_size() const { return shape[2] * shape[3]; }
    Complex& at(std::size_t t, std::size_t c, std::size_t u, std::size_t v) {
        return bins[((t * shape[1] + c) * shape[2] + u) * shape[3] + v];
    }
    const Complex& at(std::size_t t, std::size_t c, std::size_t u, std::size_t v) const {
        return bins[((t * shape[1] + c) * shape[2] + u) * shape[3] + v];
    }

    /// Sum of squared magnitudes over all bins.
    double energy() const {
        double e = 0.0;
        for (const auto& z : bins) e += std::norm(z);
        return e;
    }
};

namespace detail {

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

// In-place 1-D transform of `n` elements spaced `stride` apart.
// sign = -1 forward, +1 inverse (unscaled).
inline void dft1d(Complex* data, std::size_t n, std::size_t stride, int sign, DftPath path,
                  std::vector<Complex>& scratch) {
    scratch.resize(n);
    for (std::size_t i = 0; i < n; ++i) scratch[i] = data[i * stride];
    if (path == DftPath::automatic && is_pow2(n)) {
        // Iterative radix-2 Cooley-Tukey.
        for (std::size_t i = 1, j = 0; i < n; ++i) {
            std::size_t bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j ^= bit;
            if (i < j) std::swap(scratch[i], scratch[j]);
        }
        for (std::size_t len = 2; len <= n; len <<= 1) {
            const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
            for (std::size_t i = 0; i < n; i += len)
                for (std::size_t k = 0; k < len / 2; ++k) {
                    const Complex w = std::polar(1.0, ang * static_cast<double>(k));
                    const Complex a = scratch[i + k];
                    const Complex b = scratch[i + k + len / 2] * w;
                    scratch[i + k] = a + b;
                    scratch[i + k + len / 2] = a - b;
                }
        }
        for (std::size_t i = 0; i < n; ++i) data[i * stride] = scratch[i];
        return;
    }
    for (std::size_t k = 0; k < n; ++k) {
        Complex acc{0.0, 0.0};
        for (std::size_t m = 0; m < n; ++m) {
            // Reduce the index product mod n before forming the angle.
            const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * m) % n) /
                               static_cast<double>(n);
            acc += scratch[m] * Complex(std::cos(ang), std::sin(ang));
        }
        data[k * stride] = acc;
    }
}

}  // namespace detail

/// Unscaled in-place 2-D transform over an H x W row-major plane.
inline void transform_plane(std::span<Complex> plane, std::size_t H, std::size_t W, bool inverse,
                            DftPath path = DftPath::automatic) {
    const int sign = inverse ? +1 : -1;
    std::vector<Complex> scratch;
    for (std::size_t r = 0; r < H; ++r) detail::dft1d(plane.data() + r * W, W, 1, sign, path, scratch);
    for (std::size_t c = 0; c < W; ++c) detail::dft1d(plane.data() + c, H, W, sign, path, scratch);
}

/// Unnormalized forward DFT of every frame and channel.
template <class S>
Spectrum dft2(const Tensor<S>& video, DftPath path = DftPath::automatic) {
    require_rank(video.shape(), 4, "dft2");
    const std::size_t H = video.dim(2), W = video.dim(3);
    if (H < 2 || W < 2) throw ShapeError("dft2: frames must be at least 2x2");
    Spectrum spec{video.shape(), std::vector<Complex>(video.size())};
    for (std::size_t i = 0; i < video.size(); ++i) spec.bins[i] = Complex(static_cast<double>(video[i]), 0.0);
    const std::size_t planes = video.dim(0) * video.dim(1);
    for (std::size_t p = 0; p < planes; ++p)
        transform_plane(std::span<Complex>(spec.bins).subspan(p * H * W, H * W), H, W, false, path);
    return spec;
}

/// Inverse DFT with 1/(H*W) scaling; keeps the real part.
template <class S = float>
Tensor<S> idft2(const Spectrum& spec, DftPath path = DftPath::automatic) {
    require_rank(spec.shape, 4, "idft2");
    const std::size_t H = spec.shape[2], W = spec.shape[3];
    std::vector<Complex> work = spec.bins;
    const std::size_t planes = spec.shape[0] * spec.shape[1];
    for (std::size_t p = 0; p < planes; ++p)
        transform_plane(std::span<Complex>(work).subspan(p * H * W, H * W), H, W, true, path);
    Tensor<S> out(spec.shape);
    const double scale = 1.0 / static_cast<double>(H * W);
    for (std::size_t i = 0; i < work.size(); ++i) out[i] = static_cast<S>(work[i].real() * scale);
    return out;
}

/// Binary low-pass mask psi over an H x W spectrum in unshifted storage order.
struct FilterMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<unsigned char> pass;  // 1 = low band

    bool operator()(std::size_t u, std::size_t v) const { return pass[u * width + v] != 0; }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto p : pass) n += p;
        return n;
    }
};

/// Signed frequency index of bin u in an axis of length n (Nyquist stays positive).
inline double centered_index(std::size_t u, std::size_t n) {
    return u <= n / 2 ? static_cast<double>(u) : static_cast<double>(u) - static_cast<double>(n);
}

/// Radial ideal low-pass. A bin passes when its normalized radius is <= rho,
/// where radius 1 is the corner Nyquist bin, so rho = 1 passes everything.
inline FilterMask make_lowpass(std::size_t H, std::size_t W, double rho) {
    if (H < 2 || W < 2) throw std::invalid_argument("make_lowpass: extents must be >= 2");
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("make_lowpass: rho must lie in (0, 1]");
    FilterMask m{H, W, std::vector<unsigned char>(H * W, 0)};
    const double hn = static_cast<double>(H / 2), wn = static_cast<double>(W / 2);
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            const double a = centered_index(u, H) / hn, b = centered_index(v, W) / wn;
            m.pass[u * W + v] = (a * a + b * b) <= 2.0 * rho * rho ? 1 : 0;
        }
    return m;
}

struct BandSpectra {
    Spectrum low;
    Spectrum high;
};

/// Partition a spectrum into psi-masked and complement-masked parts.
inline BandSpectra split_spectrum(const Spectrum& full, const FilterMask& psi) {
    if (full.shape[2] != psi.height || full.shape[3] != psi.width)
        throw ShapeError("split_bands: mask " + std::to_string(psi.height) + "x" + std::to_string(psi.width) +
                         " does not match frames of " + shape_str(full.shape));
    BandSpectra out{full, full};
    const std::size_t plane = psi.height * psi.width;
    for (std::size_t i = 0; i < full.bins.size(); ++i) {
        if (psi.pass[i % plane])
            out.high.bins[i] = Complex{};
        else
            out.low.bins[i] = Complex{};
    }
    return out;
}

template <class S>
BandSpectra split_bands(const Tensor<S>& x, const FilterMask& psi) {
    return split_spectrum(dft2(x), psi);
}

struct BandPsnr {
    double low = 0.0;
    double high = 0.0;
};

/// Per-band PSNR (peak 1) between spatial band images of x and ref, averaged over frames.
template <class S>
BandPsnr band_psnr(const Tensor<S>& x, const Tensor<S>& ref, const FilterMask& psi) {
    require_same_shape(x.shape(), ref.shape(), "band_psnr");
    const auto bx = split_bands(x, psi);
    const auto br = split_bands(ref, psi);
    const auto lx = idft2<double>(bx.low), lr = idft2<double>(br.low);
    const auto hx = idft2<double>(bx.high), hr = idft2<double>(br.high);
    BandPsnr out;
    const std::size_t T = x.dim(0);
    for (std::size_t t = 0; t < T; ++t) {
        out.low += psnr(frame_of(lx, t), frame_of(lr, t));
        out.high += psnr(frame_of(hx, t), frame_of(hr, t));
    }
    out.low /= static_cast<double>(T);
    out.high /= static_cast<double>(T);
    return out;
}

}  // namespace star
