// SPDX-License-Identifier: Apache-2.0
#pragma once

// Level-of-detail filtering. Each primitive carries a small Gaussian mixture
// over the log sampling rate with three heads: covariance inflation, opacity
// residual and color residual. The fixed 3D smoothing filter and the per
// primitive maximal sampling rate it depends on live here too.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "lodgs/core.hpp"

namespace lodgs {

/// Per-primitive mixture parameters. Centers and widths are shared by the
/// scale, opacity and color heads. `weights_color` is l x 3, row major.
template <typename T>
struct LodBasis {
    std::vector<T> centers;
    std::vector<T> log_widths;
    std::vector<T> weights_scale;
    std::vector<T> weights_opacity;
    std::vector<T> weights_color;

    std::size_t size() const { return centers.size(); }

    bool consistent() const
    {
        const std::size_t l = centers.size();
        return log_widths.size() == l && weights_scale.size() == l && weights_opacity.size() == l &&
               weights_color.size() == 3 * l;
    }

    template <typename U> LodBasis<U> cast() const
    {
        auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
        return {conv(centers), conv(log_widths), conv(weights_scale), conv(weights_opacity), conv(weights_color)};
    }
};

/// Default range of the normalized log2 sampling rate covered by the basis.
inline constexpr double kLodRangeLow = -4.0;
inline constexpr double kLodRangeHigh = 1.0;

/// Centers evenly spaced over [-4, 1], widths such that neighbours cross at
/// half height, all weights zero.
template <typename T>
LodBasis<T> make_initial_basis(std::size_t l)
{
    LodBasis<T> b;
    b.centers.resize(l);
    b.log_widths.resize(l);
    b.weights_scale.assign(l, T(0));
    b.weights_opacity.assign(l, T(0));
    b.weights_color.assign(3 * l, T(0));
    if (l == 0)
        return b;
    const T lo = T(kLodRangeLow), hi = T(kLodRangeHigh);
    const T spacing = l > 1 ? (hi - lo) / T(l - 1) : (hi - lo);
    // FWHM equal to the spacing.
    const T sigma = spacing / (T(2) * std::sqrt(T(2) * std::numbers::ln2_v<T>));
    for (std::size_t i = 0; i < l; ++i) {
        b.centers[i] = l > 1 ? lo + spacing * T(i) : (lo + hi) / T(2);
        b.log_widths[i] = softplus_inverse(sigma);
    }
    return b;
}

/// F(x) = sum_i w_i exp(-(x - mu_i)^2 / (2 sigma_i^2)).
template <typename T>
T gmm_eval(std::span<const T> centers, std::span<const T> widths, std::span<const T> weights, T x)
{
    T sum = T(0);
    for (std::size_t i = 0; i < centers.size(); ++i) {
        const T d = x - centers[i];
        sum += weights[i] * std::exp(-d * d / (T(2) * widths[i] * widths[i]));
    }
    return sum;
}

/// log2(nu / nu_ref).
template <typename T>
T normalize_rate(T nu, T nu_ref)
{
    if (!(nu > T(0)) || !(nu_ref > T(0)))
        throw DomainError("sampling rate must be positive");
    return std::log2(nu / nu_ref);
}

template <typename T>
struct FilteredGaussian {
    Mat3<T> cov3d_filtered;
    T opacity_filtered;
    Vec3<T> color_filtered;
};

/// Everything the forward LOD evaluation computes, for reuse in backward.
template <typename T>
struct LodEvaluation {
    T x = T(0);                     // normalized log2 rate
    std::vector<T> widths;          // softplus(log_widths)
    std::vector<T> bumps;           // exp(-(x-mu)^2 / 2 sigma^2)
    T scale_raw = T(0);             // F_s before the softplus shift
    T inflation = T(0);
    bool inflation_active = false;  // scale_raw >= 0, gradient flows
    T opacity_raw = T(0);           // alpha + F_alpha before clamping
    Vec3<T> color_raw = Vec3<T>::Zero();
    FilteredGaussian<T> out;
};

template <typename T>
LodEvaluation<T> evaluate_lod(const GaussianPrimitive<T>& g, const Mat3<T>& cov3d, const LodBasis<T>& basis, T nu,
                              T nu_ref)
{
    LodEvaluation<T> e;
    e.x = normalize_rate(nu, nu_ref);
    const std::size_t l = basis.size();
    e.widths.resize(l);
    e.bumps.resize(l);
    T fs = T(0), fa = T(0);
    Vec3<T> fc = Vec3<T>::Zero();
    for (std::size_t i = 0; i < l; ++i) {
        const T sigma = softplus(basis.log_widths[i]);
        const T d = e.x - basis.centers[i];
        const T b = std::exp(-d * d / (T(2) * sigma * sigma));
        e.widths[i] = sigma;
        e.bumps[i] = b;
        fs += basis.weights_scale[i] * b;
        fa += basis.weights_opacity[i] * b;
        for (int c = 0; c < 3; ++c)
            fc[c] += basis.weights_color[3 * i + c] * b;
    }
    e.scale_raw = fs;
    const T shifted = softplus(fs) - softplus(T(0));
    e.inflation_active = fs >= T(0);
    e.inflation = std::max(shifted, T(0));

    e.opacity_raw = g.opacity() + fa;
    e.color_raw = g.color + fc;

    e.out.cov3d_filtered = cov3d;
    e.out.cov3d_filtered.diagonal().array() += e.inflation;
    e.out.opacity_filtered = std::clamp(e.opacity_raw, T(0), T(1));
    e.out.color_filtered = e.color_raw.cwiseMax(T(0)).cwiseMin(T(1));
    return e;
}

/// Rate-dependent filter: Sigma + F_s(nu) I, alpha + F_alpha(nu), c + F_c(nu).
template <typename T>
FilteredGaussian<T> lod_filter(const GaussianPrimitive<T>& g, const Mat3<T>& cov3d, const LodBasis<T>& basis, T nu,
                               T nu_ref)
{
    return evaluate_lod(g, cov3d, basis, nu, nu_ref).out;
}

template <typename T>
struct SmoothedGaussian {
    Mat3<T> cov;
    T opacity;
    T factor;  // sqrt(det Sigma / det Sigma~)
};

/// Fixed 3D smoothing: Sigma + (s / nu_max) I with the opacity scaled by
/// sqrt(det Sigma / det Sigma~) so that the integral is preserved.
template <typename T>
SmoothedGaussian<T> mip_smoothing_filter(const Mat3<T>& cov3d, T opacity, T nu_max, T s)
{
    SmoothedGaussian<T> out{cov3d, opacity, T(1)};
    if (s == T(0))
        return out;
    out.cov.diagonal().array() += s / nu_max;
    out.factor = std::sqrt(cov3d.determinant() / out.cov.determinant());
    out.opacity = opacity * out.factor;
    return out;
}

/// max over cameras of sampling_rate; cameras with the position behind the
/// near plane are skipped.
template <typename T>
T max_sampling_rate(const Vec3<T>& position, std::span<const Camera<T>> cameras)
{
    T best = T(0);
    bool any = false;
    for (const auto& cam : cameras) {
        const Vec3<T> t = cam.to_camera(position);
        if (!(t.z() > cam.near))
            continue;
        const T nu = cam.focal() / t.norm();
        if (!any || nu > best)
            best = nu;
        any = true;
    }
    if (!any)
        throw NoVisibleView();
    return best;
}

/// Sampling rate of every position for one camera, one pass. Positions behind
/// the near plane yield 0.
template <typename T>
std::vector<T> sampling_rate_pass(const Camera<T>& cam, std::span<const Vec3<T>> positions)
{
    std::vector<T> rates(positions.size());
    const T f = cam.focal();
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const Vec3<T> t = cam.to_camera(positions[i]);
        rates[i] = t.z() > cam.near ? f / t.norm() : T(0);
    }
    return rates;
}

}  // namespace lodgs
