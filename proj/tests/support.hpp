// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scene and camera fixtures shared by the test binaries.

#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "lodgs/lodgs.hpp"

namespace lodgs::testing {

/// n random primitives in front of `front_camera()`, with a random LOD basis
/// of size l (weights small enough to stay away from the clamps).
inline Scene<double> random_scene(int n, std::uint64_t seed, std::size_t l = 4, bool random_basis = true)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> normal;
    std::vector<GaussianPrimitive<double>> prims;
    for (int i = 0; i < n; ++i) {
        GaussianPrimitive<double> g;
        g.position = {0.9 * (2 * u(rng) - 1), 0.9 * (2 * u(rng) - 1), 0.6 * (2 * u(rng) - 1)};
        g.rotation = Vec4<double>(normal(rng), normal(rng), normal(rng), normal(rng)).normalized();
        for (int a = 0; a < 3; ++a)
            g.log_scales[a] = std::log(0.08 + 0.17 * u(rng));
        g.opacity_logit = logit(0.25 + 0.55 * u(rng));
        for (int c = 0; c < 3; ++c)
            g.color[c] = 0.2 + 0.6 * u(rng);
        prims.push_back(g);
    }
    Scene<double> s = make_scene(std::move(prims), l, 10.0);
    if (random_basis)
        for (auto& b : s.bases) {
            for (auto& c : b.centers)
                c += 0.3 * normal(rng);
            for (auto& w : b.log_widths)
                w += 0.2 * normal(rng);
            for (auto& w : b.weights_scale)
                w = 0.004 * normal(rng);
            for (auto& w : b.weights_opacity)
                w = 0.05 * normal(rng);
            for (auto& w : b.weights_color)
                w = 0.05 * normal(rng);
        }
    return s;
}

/// Camera on the -z side looking at the origin, distance 4, square image.
inline Camera<double> front_camera(int size = 16, double focal = 0.0)
{
    const double f = focal > 0.0 ? focal : 1.1 * size;
    return look_at<double>(Vec3<double>(0.3, -4.0, 0.8), Vec3<double>::Zero(), f, size, size, 0.1);
}

/// Identity camera: world frame = camera frame, principal point at the center.
inline Camera<double> axis_camera(double f, int w, int h)
{
    Camera<double> c;
    c.fx = c.fy = f;
    c.cx = w / 2.0;
    c.cy = h / 2.0;
    c.width = w;
    c.height = h;
    c.near = 0.1;
    return c;
}

inline Image<double> random_image(int w, int h, std::uint64_t seed, int channels = 3)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image<double> img(w, h, channels);
    for (auto& v : img.data())
        v = u(rng);
    return img;
}

inline double max_abs_diff(const Image<double>& a, const Image<double>& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline bool bit_equal(const Image<double>& a, const Image<double>& b)
{
    if (!a.same_shape(b))
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a.data()[i]) != std::bit_cast<std::uint64_t>(b.data()[i]))
            return false;
    return true;
}

/// Sum over pixels of the alpha footprint, weighted by pixel area in world
/// units at unit depth (1 / f^2), for a single splat rendered with colors 1
/// over a black background.
inline double alpha_mass(const Scene<double>& s, const Camera<double>& cam, const RenderConfig<double>& cfg)
{
    const auto out = render(s, cam, cfg);
    double sum = 0.0;
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            sum += 1.0 - out.final_transmittance(x, y);
    return sum / (cam.fx * cam.fy);
}

/// SSIM by direct 2D Gaussian windowing at every valid position.
inline double ssim_direct(const Image<double>& a, const Image<double>& b)
{
    double w[11][11], sum = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
            sum += w[i][j];
        }
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0.0;
    int count = 0;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = 0; y + 11 <= a.height(); ++y)
            for (int x = 0; x + 11 <= a.width(); ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const double k = w[i][j] / sum, p = a(x + j, y + i, c), q = b(x + j, y + i, c);
                        mx += k * p;
                        my += k * q;
                        sxx += k * p * p;
                        syy += k * q * q;
                        sxy += k * p * q;
                    }
                const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
                total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    return total / count;
}

}  // namespace lodgs::testing
