// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward splatting renderer: per-primitive covariance, 3D filter (LOD or the
// fixed smoothing filter), projection, 2D filter (EWA or dilation), culling,
// global depth sort and front-to-back compositing over pixel tiles.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "lodgs/core.hpp"
#include "lodgs/image.hpp"
#include "lodgs/lod.hpp"
#include "lodgs/parallel.hpp"
#include "lodgs/scene.hpp"

namespace lodgs {

enum class Mode2D { ewa, dilation, none };
enum class Mode3D { lod, mip_fixed, none };

template <typename T>
struct RenderConfig {
    Mode2D mode_2d = Mode2D::ewa;
    Mode3D mode_3d = Mode3D::lod;
    T s2d = T(0.1);                  // pixel^2
    T s3d = T(0.005);                // fixed smoothing filter size
    T alpha_cutoff = T(1) / T(255);
    T transmittance_floor = T(1e-4);
    T sigma_cutoff = T(3);
    Vec3<T> background = Vec3<T>::Zero();
    unsigned threads = 1;            // 0 = hardware concurrency
    int tile_size = 16;

    bool valid() const
    {
        return s2d >= T(0) && s3d >= T(0) && transmittance_floor > T(0) && transmittance_floor < T(1) &&
               sigma_cutoff >= T(1) && tile_size >= 1;
    }
};

template <typename T>
struct RenderOutput {
    Image<T> image;                // H x W x 3
    Image<T> final_transmittance;  // H x W x 1
    std::size_t splat_count = 0;   // splats surviving culling
};

template <typename T>
struct FilteredSplat2D {
    Mat2<T> cov;
    T opacity;
    T factor;  // opacity multiplier applied by the filter
};

/// cov + s I with the opacity scaled by sqrt(det cov / det cov').
template <typename T>
FilteredSplat2D<T> ewa_2d(const Mat2<T>& cov2d, T opacity, T s2d)
{
    FilteredSplat2D<T> out{cov2d, opacity, T(1)};
    if (s2d == T(0))
        return out;
    out.cov(0, 0) += s2d;
    out.cov(1, 1) += s2d;
    out.factor = std::sqrt(cov2d.determinant() / out.cov.determinant());
    out.opacity = opacity * out.factor;
    return out;
}

/// cov + s I, opacity untouched.
template <typename T>
FilteredSplat2D<T> dilation_2d(const Mat2<T>& cov2d, T opacity, T s2d)
{
    FilteredSplat2D<T> out{cov2d, opacity, T(1)};
    out.cov(0, 0) += s2d;
    out.cov(1, 1) += s2d;
    return out;
}

/// Per-primitive forward record.
template <typename T>
struct PreparedSplat {
    bool visible = false;
    CovarianceParts<T> cov_parts;
    T rate = T(0);                  // nu of the current camera (lod) or nu_max (mip)
    LodEvaluation<T> lod;           // mode_3d == lod
    T mip_factor = T(1);            // mode_3d == mip_fixed
    Mat3<T> cov3d = Mat3<T>::Zero();  // after the 3D filter
    T opacity3d = T(0);
    Vec3<T> color = Vec3<T>::Zero();
    Projection<T> proj{};
    Mat2<T> cov2d = Mat2<T>::Zero();  // after the 2D filter
    Mat2<T> conic = Mat2<T>::Zero();  // inverse of cov2d
    T factor2d = T(1);
    T opacity = T(0);               // final peak opacity
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bbox
};

/// Forward state consumed by backward().
template <typename T>
struct ForwardState {
    bool valid = false;
    std::uint64_t fingerprint = 0;
    std::vector<PreparedSplat<T>> splats;
    std::vector<std::uint32_t> order;                // visible splats, front to back
    std::vector<std::vector<std::uint32_t>> tiles;   // per tile, front to back
    int tiles_x = 0, tiles_y = 0;
};

namespace detail {

inline void fnv_mix(std::uint64_t& h, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= 1099511628211ull;
    }
}

template <typename T> std::uint64_t bits_of(T v)
{
    if constexpr (sizeof(T) == 8)
        return std::bit_cast<std::uint64_t>(v);
    else
        return std::bit_cast<std::uint32_t>(v);
}

}  // namespace detail

/// Hash of every input that influences a render.
template <typename T>
std::uint64_t render_fingerprint(const Scene<T>& scene, const Camera<T>& cam, const RenderConfig<T>& cfg)
{
    using detail::bits_of;
    std::uint64_t h = 1469598103934665603ull;
    detail::fnv_mix(h, scene.size());
    detail::fnv_mix(h, scene.basis_count());
    for_each_param([&](ParamGroup, const T& v) { detail::fnv_mix(h, bits_of(v)); }, scene);
    detail::fnv_mix(h, bits_of(scene.nu_ref));
    for (T r : scene.max_rates)
        detail::fnv_mix(h, bits_of(r));
    for (int i = 0; i < 9; ++i)
        detail::fnv_mix(h, bits_of(cam.rotation(i / 3, i % 3)));
    for (int i = 0; i < 3; ++i)
        detail::fnv_mix(h, bits_of(cam.translation[i]));
    for (T v : {cam.fx, cam.fy, cam.cx, cam.cy, cam.near})
        detail::fnv_mix(h, bits_of(v));
    detail::fnv_mix(h, static_cast<std::uint64_t>(cam.width));
    detail::fnv_mix(h, static_cast<std::uint64_t>(cam.height));
    detail::fnv_mix(h, static_cast<std::uint64_t>(cfg.mode_2d));
    detail::fnv_mix(h, static_cast<std::uint64_t>(cfg.mode_3d));
    for (T v : {cfg.s2d, cfg.s3d, cfg.alpha_cutoff, cfg.transmittance_floor, cfg.sigma_cutoff})
        detail::fnv_mix(h, bits_of(v));
    for (int i = 0; i < 3; ++i)
        detail::fnv_mix(h, bits_of(cfg.background[i]));
    detail::fnv_mix(h, static_cast<std::uint64_t>(cfg.tile_size));
    return h;
}

/// Runs the per-primitive part of the pipeline for primitive k.
template <typename T>
PreparedSplat<T> prepare_splat(const Scene<T>& scene, std::size_t k, const Camera<T>& cam,
                               const RenderConfig<T>& cfg, T rate)
{
    PreparedSplat<T> s;
    const auto& g = scene.primitives[k];
    const Vec3<T> t = cam.to_camera(g.position);
    if (!(t.z() > cam.near))
        return s;

    s.cov_parts = covariance_parts(g);
    switch (cfg.mode_3d) {
    case Mode3D::lod:
        s.rate = rate;
        s.lod = evaluate_lod(g, s.cov_parts.cov, scene.bases[k], rate, scene.nu_ref);
        s.cov3d = s.lod.out.cov3d_filtered;
        s.opacity3d = s.lod.out.opacity_filtered;
        s.color = s.lod.out.color_filtered;
        break;
    case Mode3D::mip_fixed: {
        s.rate = scene.max_rates[k];
        const auto sm = mip_smoothing_filter(s.cov_parts.cov, g.opacity(), s.rate, cfg.s3d);
        s.cov3d = sm.cov;
        s.opacity3d = sm.opacity;
        s.mip_factor = sm.factor;
        s.color = g.color;
        break;
    }
    case Mode3D::none:
        s.cov3d = s.cov_parts.cov;
        s.opacity3d = g.opacity();
        s.color = g.color;
        break;
    }

    s.proj = project(g.position, s.cov3d, cam);
    FilteredSplat2D<T> f2{s.proj.cov2d, s.opacity3d, T(1)};
    switch (cfg.mode_2d) {
    case Mode2D::ewa: f2 = ewa_2d(s.proj.cov2d, s.opacity3d, cfg.s2d); break;
    case Mode2D::dilation: f2 = dilation_2d(s.proj.cov2d, s.opacity3d, cfg.s2d); break;
    case Mode2D::none: f2 = {s.proj.cov2d, s.opacity3d, T(1)}; break;
    }
    s.cov2d = f2.cov;
    s.factor2d = f2.factor;
    s.opacity = f2.opacity;

    const T det = s.cov2d.determinant();
    if (!(det > T(0)) || !std::isfinite(det) || !(s.opacity >= cfg.alpha_cutoff))
        return s;
    s.conic << s.cov2d(1, 1) / det, -s.cov2d(0, 1) / det, -s.cov2d(0, 1) / det, s.cov2d(0, 0) / det;

    const T rx = cfg.sigma_cutoff * std::sqrt(s.cov2d(0, 0));
    const T ry = cfg.sigma_cutoff * std::sqrt(s.cov2d(1, 1));
    const T mx = s.proj.mean2d.x(), my = s.proj.mean2d.y();
    // Pixel centers i + 0.5 inside [m - r, m + r].
    const T fx0 = std::ceil(mx - rx - T(0.5)), fx1 = std::floor(mx + rx - T(0.5));
    const T fy0 = std::ceil(my - ry - T(0.5)), fy1 = std::floor(my + ry - T(0.5));
    if (!(fx1 >= T(0) && fy1 >= T(0) && fx0 <= T(cam.width - 1) && fy0 <= T(cam.height - 1)))
        return s;
    s.x0 = static_cast<int>(std::max(fx0, T(0)));
    s.x1 = static_cast<int>(std::min(fx1, T(cam.width - 1)));
    s.y0 = static_cast<int>(std::max(fy0, T(0)));
    s.y1 = static_cast<int>(std::min(fy1, T(cam.height - 1)));
    s.visible = s.x0 <= s.x1 && s.y0 <= s.y1;
    return s;
}

/// Contribution of splat `s` at pixel (px, py); returns its alpha and fills
/// the Gaussian value and offset from the mean.
template <typename T>
inline T splat_alpha(const PreparedSplat<T>& s, int px, int py, T& gauss, Vec2<T>& d)
{
    d = Vec2<T>(T(px) + T(0.5) - s.proj.mean2d.x(), T(py) + T(0.5) - s.proj.mean2d.y());
    const T q = s.conic(0, 0) * d.x() * d.x() + T(2) * s.conic(0, 1) * d.x() * d.y() + s.conic(1, 1) * d.y() * d.y();
    gauss = std::exp(T(-0.5) * q);
    return s.opacity * gauss;
}

template <typename T>
inline bool covers(const PreparedSplat<T>& s, int px, int py)
{
    return px >= s.x0 && px <= s.x1 && py >= s.y0 && py <= s.y1;
}

/// Renders `scene` from `cam`. When `state` is given, it receives everything
/// backward() needs.
template <typename T>
RenderOutput<T> render(const Scene<T>& scene, const Camera<T>& cam, const RenderConfig<T>& cfg,
                       ForwardState<T>* state = nullptr)
{
    if (!cfg.valid())
        throw DomainError("invalid render configuration");
    if (cfg.mode_3d == Mode3D::lod && scene.bases.size() != scene.size())
        throw DomainError("lod mode requires one basis per primitive");
    if (cfg.mode_3d == Mode3D::mip_fixed && scene.max_rates.size() != scene.size())
        throw DomainError("mip_fixed mode requires per-primitive maximal sampling rates");

    ForwardState<T> local;
    ForwardState<T>& st = state ? *state : local;
    st = ForwardState<T>{};
    const std::size_t K = scene.size();

    std::vector<T> rates;
    if (cfg.mode_3d == Mode3D::lod) {
        const auto pos = scene.positions();
        rates = sampling_rate_pass(cam, std::span<const Vec3<T>>(pos));
    }

    st.splats.resize(K);
    parallel_for(K, cfg.threads, [&](std::size_t k) {
        st.splats[k] = prepare_splat(scene, k, cam, cfg, rates.empty() ? T(0) : rates[k]);
    });

    for (std::size_t k = 0; k < K; ++k)
        if (st.splats[k].visible)
            st.order.push_back(static_cast<std::uint32_t>(k));
    std::stable_sort(st.order.begin(), st.order.end(), [&](std::uint32_t a, std::uint32_t b) {
        const T da = st.splats[a].proj.depth, db = st.splats[b].proj.depth;
        return da < db || (da == db && a < b);
    });

    const int ts = cfg.tile_size;
    st.tiles_x = (cam.width + ts - 1) / ts;
    st.tiles_y = (cam.height + ts - 1) / ts;
    st.tiles.assign(static_cast<std::size_t>(st.tiles_x) * st.tiles_y, {});
    for (std::uint32_t k : st.order) {
        const auto& s = st.splats[k];
        for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty)
            for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx)
                st.tiles[static_cast<std::size_t>(ty) * st.tiles_x + tx].push_back(k);
    }

    RenderOutput<T> out;
    out.image = Image<T>(cam.width, cam.height, 3);
    out.final_transmittance = Image<T>(cam.width, cam.height, 1);
    out.splat_count = st.order.size();

    parallel_for(st.tiles.size(), cfg.threads, [&](std::size_t tile) {
        const int tx = static_cast<int>(tile % st.tiles_x), ty = static_cast<int>(tile / st.tiles_x);
        const auto& list = st.tiles[tile];
        for (int py = ty * ts; py < std::min(cam.height, (ty + 1) * ts); ++py)
            for (int px = tx * ts; px < std::min(cam.width, (tx + 1) * ts); ++px) {
                T trans = T(1);
                Vec3<T> c = Vec3<T>::Zero();
                for (std::uint32_t k : list) {
                    const auto& s = st.splats[k];
                    if (!covers(s, px, py))
                        continue;
                    T gauss;
                    Vec2<T> d;
                    const T a = splat_alpha(s, px, py, gauss, d);
                    if (a < cfg.alpha_cutoff)
                        continue;
                    c += (a * trans) * s.color;
                    trans *= T(1) - a;
                    if (trans < cfg.transmittance_floor)
                        break;
                }
                c += trans * cfg.background;
                for (int ch = 0; ch < 3; ++ch)
                    out.image(px, py, ch) = c[ch];
                out.final_transmittance(px, py) = trans;
            }
    });

    st.valid = true;
    st.fingerprint = render_fingerprint(scene, cam, cfg);
    return out;
}

/// Anti-aliasing reference: unfiltered render at `factor` x resolution,
/// box-averaged back down.
template <typename T>
RenderOutput<T> supersample_render(const Scene<T>& scene, const Camera<T>& cam, RenderConfig<T> cfg, int factor)
{
    if (factor < 1)
        throw DomainError("supersampling factor must be >= 1");
    cfg.mode_2d = Mode2D::none;
    cfg.mode_3d = Mode3D::none;
    const Camera<T> big = cam.scaled(T(factor), cam.width * factor, cam.height * factor);
    RenderOutput<T> hi = render(scene, big, cfg);
    if (factor == 1)
        return hi;
    RenderOutput<T> out;
    out.image = box_downsample(hi.image, factor);
    out.final_transmittance = box_downsample(hi.final_transmittance, factor);
    out.splat_count = hi.splat_count;
    return out;
}

}  // namespace lodgs
