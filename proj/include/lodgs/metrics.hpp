// SPDX-License-Identifier: Apache-2.0
#pragma once

// PSNR and SSIM (11x11 Gaussian window, sigma 1.5, valid region only), with
// the SSIM gradient needed by the photometric loss.

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "lodgs/image.hpp"

namespace lodgs {

/// PSNR of identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

inline bool psnr_identical(double psnr) { return std::isinf(psnr) && psnr > 0; }

/// 10 log10(1 / MSE) over all channels; kPsnrIdentical when MSE == 0.
template <typename T>
double metric_psnr(const Image<T>& a, const Image<T>& b)
{
    require_same_shape(a, b);
    if (a.empty())
        throw ShapeMismatch("empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        sum += d * d;
    }
    if (sum == 0.0)
        return kPsnrIdentical;
    return -10.0 * std::log10(sum / static_cast<double>(a.size()));
}

namespace ssim_detail {

inline constexpr int kWindow = 11;
inline constexpr int kRadius = kWindow / 2;
inline constexpr double kSigma = 1.5;
inline constexpr double kC1 = 0.01 * 0.01;
inline constexpr double kC2 = 0.03 * 0.03;

inline const std::array<double, kWindow>& kernel()
{
    static const std::array<double, kWindow> k = [] {
        std::array<double, kWindow> w{};
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            const double d = i - kRadius;
            w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
            sum += w[i];
        }
        for (auto& v : w)
            v /= sum;
        return w;
    }();
    return k;
}

/// Separable valid-mode filtering of a w x h plane; output (w-10) x (h-10).
inline std::vector<double> filter_valid(const std::vector<double>& src, int w, int h)
{
    const auto& k = kernel();
    const int ow = w - kWindow + 1, oh = h - kWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kWindow; ++i)
                s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kWindow; ++i)
                s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

/// Adjoint of filter_valid: scatters an (w-10) x (h-10) map back to w x h.
inline std::vector<double> filter_valid_adjoint(const std::vector<double>& m, int w, int h)
{
    const auto& k = kernel();
    const int ow = w - kWindow + 1, oh = h - kWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double v = m[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < kWindow; ++i)
                tmp[static_cast<std::size_t>(y + i) * ow + x] += k[i] * v;
        }
    std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            const double v = tmp[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < kWindow; ++i)
                out[static_cast<std::size_t>(y) * w + x + i] += k[i] * v;
        }
    return out;
}

template <typename T>
std::vector<double> plane(const Image<T>& img, int c)
{
    std::vector<double> p(static_cast<std::size_t>(img.width()) * img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            p[static_cast<std::size_t>(y) * img.width() + x] = static_cast<double>(img(x, y, c));
    return p;
}

}  // namespace ssim_detail

/// Mean SSIM over valid window positions and channels. When `grad_a` is
/// non-null it receives dSSIM/da.
template <typename T>
double ssim_with_grad(const Image<T>& a, const Image<T>& b, Image<T>* grad_a)
{
    using namespace ssim_detail;
    require_same_shape(a, b);
    const int w = a.width(), h = a.height();
    if (w < kWindow || h < kWindow)
        throw TooSmall("SSIM needs images of at least 11 x 11 pixels");
    const int ow = w - kWindow + 1, oh = h - kWindow + 1;
    const std::size_t n = static_cast<std::size_t>(ow) * oh;
    const double norm = 1.0 / (static_cast<double>(n) * a.channels());
    if (grad_a)
        *grad_a = Image<T>(w, h, a.channels());

    double total = 0.0;
    for (int c = 0; c < a.channels(); ++c) {
        const auto x = plane(a, c), y = plane(b, c);
        std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, w, h), my = filter_valid(y, w, h);
        const auto exx = filter_valid(xx, w, h), eyy = filter_valid(yy, w, h), exy = filter_valid(xy, w, h);

        std::vector<double> d_mu, d_xx, d_xy;
        if (grad_a) {
            d_mu.resize(n);
            d_xx.resize(n);
            d_xy.resize(n);
        }
        for (std::size_t p = 0; p < n; ++p) {
            const double vx = exx[p] - mx[p] * mx[p];
            const double vy = eyy[p] - my[p] * my[p];
            const double cxy = exy[p] - mx[p] * my[p];
            const double a1 = 2.0 * mx[p] * my[p] + kC1, a2 = 2.0 * cxy + kC2;
            const double b1 = mx[p] * mx[p] + my[p] * my[p] + kC1, b2 = vx + vy + kC2;
            // Luminance and contrast-structure factors kept apart so that the
            // gradient cancels exactly for identical inputs.
            const double lum = a1 / b1, cs = a2 / b2;
            const double s = lum * cs;
            total += s;
            if (grad_a) {
                const double ds_dvx = -s / b2;
                const double ds_dcxy = 2.0 * lum / b2;
                const double ds_dmx = cs * 2.0 * (my[p] - lum * mx[p]) / b1;
                d_mu[p] = norm * (ds_dmx - 2.0 * mx[p] * ds_dvx - my[p] * ds_dcxy);
                d_xx[p] = norm * ds_dvx;
                d_xy[p] = norm * ds_dcxy;
            }
        }
        if (grad_a) {
            const auto g_mu = filter_valid_adjoint(d_mu, w, h);
            const auto g_xx = filter_valid_adjoint(d_xx, w, h);
            const auto g_xy = filter_valid_adjoint(d_xy, w, h);
            for (int py = 0; py < h; ++py)
                for (int px = 0; px < w; ++px) {
                    const std::size_t i = static_cast<std::size_t>(py) * w + px;
                    (*grad_a)(px, py, c) = static_cast<T>(g_mu[i] + 2.0 * x[i] * g_xx[i] + y[i] * g_xy[i]);
                }
        }
    }
    return total * norm;
}

template <typename T>
double metric_ssim(const Image<T>& a, const Image<T>& b)
{
    return ssim_with_grad<T>(a, b, nullptr);
}

}  // namespace lodgs
