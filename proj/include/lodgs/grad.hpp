// SPDX-License-Identifier: Apache-2.0
#pragma once

// Hand-written reverse pass through compositing, the 2D filter, projection,
// the 3D filter (LOD mixture or fixed smoothing) and the covariance
// factorization, plus a central-difference checker for it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "lodgs/raster.hpp"

namespace lodgs {

/// Gradient of the loss with respect to one screen-space splat.
template <typename T>
struct SplatGradient {
    Vec2<T> mean = Vec2<T>::Zero();
    Mat2<T> conic = Mat2<T>::Zero();  // full-matrix gradient, symmetric
    T opacity = T(0);
    Vec3<T> color = Vec3<T>::Zero();

    SplatGradient& operator+=(const SplatGradient& o)
    {
        mean += o.mean;
        conic += o.conic;
        opacity += o.opacity;
        color += o.color;
        return *this;
    }
};

namespace detail {

template <typename T>
Mat2<T> inverse2(const Mat2<T>& m)
{
    const T det = m.determinant();
    Mat2<T> inv;
    inv << m(1, 1) / det, -m(0, 1) / det, -m(1, 0) / det, m(0, 0) / det;
    return inv;
}

template <typename T>
Vec4<T> rotation_backward(const Vec4<T>& q, const Mat3<T>& gr)
{
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4<T> gq;
    gq[0] = T(2) * (z * (gr(1, 0) - gr(0, 1)) + y * (gr(0, 2) - gr(2, 0)) + x * (gr(2, 1) - gr(1, 2)));
    gq[1] = T(2) * (y * (gr(1, 0) + gr(0, 1)) + z * (gr(2, 0) + gr(0, 2)) + w * (gr(2, 1) - gr(1, 2))) -
            T(4) * x * (gr(1, 1) + gr(2, 2));
    gq[2] = T(2) * (x * (gr(1, 0) + gr(0, 1)) + w * (gr(0, 2) - gr(2, 0)) + z * (gr(2, 1) + gr(1, 2))) -
            T(4) * y * (gr(0, 0) + gr(2, 2));
    gq[3] = T(2) * (w * (gr(1, 0) - gr(0, 1)) + x * (gr(2, 0) + gr(0, 2)) + y * (gr(2, 1) + gr(1, 2))) -
            T(4) * z * (gr(0, 0) + gr(1, 1));
    return gq;
}

/// A clamp to [0, 1] passes the gradient on the closed interval.
template <typename T> inline bool clamp_passes(T raw) { return raw >= T(0) && raw <= T(1); }

/// Chain rule from screen-space gradients back to the parameters of primitive k.
template <typename T>
void backward_primitive(const Scene<T>& scene, std::size_t k, const Camera<T>& cam, const RenderConfig<T>& cfg,
                        const PreparedSplat<T>& s, const SplatGradient<T>& gs, GradientBundle<T>& out)
{
    const auto& g = scene.primitives[k];
    auto& og = out.primitives[k];

    // 2D filter.
    T g_op3 = gs.opacity * s.factor2d;
    Mat2<T> g_cov2d_f = -s.conic * gs.conic * s.conic;
    Mat2<T> g_cov2d = g_cov2d_f;
    if (cfg.mode_2d == Mode2D::ewa && cfg.s2d != T(0)) {
        const T g_factor = gs.opacity * s.opacity3d;
        g_cov2d += (g_factor * T(0.5) * s.factor2d) * (inverse2(s.proj.cov2d) - s.conic);
    }

    // Projection: cov2d = M Sigma_f M^T with M = J W.
    const Mat23<T>& m = s.proj.jw;
    const Mat3<T> g_cov3d_f = m.transpose() * g_cov2d * m;
    const Mat23<T> g_m = T(2) * g_cov2d * m * s.cov3d;
    const Mat23<T> g_j = g_m * cam.rotation.transpose();
    const Vec3<T>& t = s.proj.t_cam;
    const T iz = T(1) / t.z(), iz2 = iz * iz, iz3 = iz2 * iz;
    Vec3<T> g_t = Vec3<T>::Zero();
    g_t.x() += gs.mean.x() * cam.fx * iz;
    g_t.y() += gs.mean.y() * cam.fy * iz;
    g_t.z() += -gs.mean.x() * cam.fx * t.x() * iz2 - gs.mean.y() * cam.fy * t.y() * iz2;
    g_t.x() += g_j(0, 2) * (-cam.fx * iz2);
    g_t.y() += g_j(1, 2) * (-cam.fy * iz2);
    g_t.z() += g_j(0, 0) * (-cam.fx * iz2) + g_j(0, 2) * (T(2) * cam.fx * t.x() * iz3) +
               g_j(1, 1) * (-cam.fy * iz2) + g_j(1, 2) * (T(2) * cam.fy * t.y() * iz3);

    // 3D filter.
    Mat3<T> g_cov3d = g_cov3d_f;
    T g_alpha = T(0);
    Vec3<T> g_color = Vec3<T>::Zero();
    switch (cfg.mode_3d) {
    case Mode3D::none:
        g_alpha = g_op3;
        g_color = gs.color;
        break;
    case Mode3D::mip_fixed:
        g_alpha = g_op3 * s.mip_factor;
        g_color = gs.color;
        if (cfg.s3d != T(0)) {
            const T g_factor = g_op3 * g.opacity();
            g_cov3d += (g_factor * T(0.5) * s.mip_factor) *
                       (s.cov_parts.cov.inverse() - s.cov3d.inverse());
        }
        break;
    case Mode3D::lod: {
        const auto& e = s.lod;
        const auto& basis = scene.bases[k];
        auto& ob = out.bases[k];
        const T g_infl = g_cov3d_f.trace();
        const T g_fs = e.inflation_active ? g_infl * sigmoid(e.scale_raw) : T(0);
        const T g_fa = clamp_passes(e.opacity_raw) ? g_op3 : T(0);
        Vec3<T> g_fc;
        for (int c = 0; c < 3; ++c)
            g_fc[c] = clamp_passes(e.color_raw[c]) ? gs.color[c] : T(0);
        g_alpha = g_fa;
        g_color = g_fc;

        T g_x = T(0);
        for (std::size_t i = 0; i < basis.size(); ++i) {
            const T b = e.bumps[i];
            ob.weights_scale[i] += g_fs * b;
            ob.weights_opacity[i] += g_fa * b;
            T g_b = g_fs * basis.weights_scale[i] + g_fa * basis.weights_opacity[i];
            for (int c = 0; c < 3; ++c) {
                ob.weights_color[3 * i + c] += g_fc[c] * b;
                g_b += g_fc[c] * basis.weights_color[3 * i + c];
            }
            const T sigma = e.widths[i];
            const T d = e.x - basis.centers[i];
            const T s2 = sigma * sigma;
            const T gb_b = g_b * b;
            ob.centers[i] += gb_b * d / s2;
            ob.log_widths[i] += gb_b * d * d / (s2 * sigma) * sigmoid(basis.log_widths[i]);
            g_x -= gb_b * d / s2;
        }
        // x = log2(f / |t|)
        g_t += (-g_x / (t.squaredNorm() * std::numbers::ln2_v<T>)) * t;
        break;
    }
    }

    og.position += cam.rotation.transpose() * g_t;
    const T alpha = g.opacity();
    og.opacity_logit += g_alpha * alpha * (T(1) - alpha);
    og.color += g_color;

    // Sigma = (R S)(R S)^T.
    const auto& cp = s.cov_parts;
    const Mat3<T> g_sym = T(0.5) * (g_cov3d + g_cov3d.transpose());
    const Mat3<T> g_rs = T(2) * g_sym * cp.rs;
    Mat3<T> g_r;
    for (int j = 0; j < 3; ++j)
        g_r.col(j) = g_rs.col(j) * cp.scales[j];
    for (int j = 0; j < 3; ++j)
        og.log_scales[j] += cp.rotation.col(j).dot(g_rs.col(j)) * cp.scales[j];
    const Vec4<T> g_qn = rotation_backward(cp.unit_rotation, g_r);
    const T qnorm = g.rotation.norm();
    og.rotation += (g_qn - cp.unit_rotation * cp.unit_rotation.dot(g_qn)) / qnorm;
}

}  // namespace detail

/// Reverse pass of render(). `loss_grad` is dL/d(image) (H x W x 3);
/// `transmittance_grad`, when given, is dL/d(final transmittance) (H x W x 1).
/// Throws MismatchedForward unless `state` came from render() with the same
/// scene, camera and configuration.
template <typename T>
GradientBundle<T> backward(const Scene<T>& scene, const Camera<T>& cam, const RenderConfig<T>& cfg,
                           const ForwardState<T>& state, const Image<T>& loss_grad,
                           const Image<T>* transmittance_grad = nullptr)
{
    if (!state.valid || state.fingerprint != render_fingerprint(scene, cam, cfg))
        throw MismatchedForward("no forward state for this scene, camera and configuration");
    if (loss_grad.width() != cam.width || loss_grad.height() != cam.height || loss_grad.channels() != 3)
        throw ShapeMismatch("loss gradient does not match the render size");
    if (transmittance_grad &&
        (transmittance_grad->width() != cam.width || transmittance_grad->height() != cam.height))
        throw ShapeMismatch("transmittance gradient does not match the render size");

    struct Contribution {
        std::uint32_t slot;
        T alpha, trans, gauss;
        Vec2<T> d;
    };

    const int ts = cfg.tile_size;
    std::vector<std::vector<SplatGradient<T>>> tile_grads(state.tiles.size());
    parallel_for(state.tiles.size(), cfg.threads, [&](std::size_t tile) {
        const auto& list = state.tiles[tile];
        auto& acc = tile_grads[tile];
        acc.assign(list.size(), SplatGradient<T>{});
        if (list.empty())
            return;
        std::vector<Contribution> contrib;
        const int tx = static_cast<int>(tile % state.tiles_x), ty = static_cast<int>(tile / state.tiles_x);
        for (int py = ty * ts; py < std::min(cam.height, (ty + 1) * ts); ++py)
            for (int px = tx * ts; px < std::min(cam.width, (tx + 1) * ts); ++px) {
                contrib.clear();
                T trans = T(1);
                for (std::uint32_t slot = 0; slot < list.size(); ++slot) {
                    const auto& s = state.splats[list[slot]];
                    if (!covers(s, px, py))
                        continue;
                    Contribution c;
                    c.slot = slot;
                    c.alpha = splat_alpha(s, px, py, c.gauss, c.d);
                    if (c.alpha < cfg.alpha_cutoff)
                        continue;
                    c.trans = trans;
                    contrib.push_back(c);
                    trans *= T(1) - c.alpha;
                    if (trans < cfg.transmittance_floor)
                        break;
                }
                const Vec3<T> gpix(loss_grad(px, py, 0), loss_grad(px, py, 1), loss_grad(px, py, 2));
                const T gtrans = transmittance_grad ? (*transmittance_grad)(px, py) : T(0);
                // Color and transmittance of everything behind the current splat.
                Vec3<T> behind = cfg.background;
                T behind_trans = T(1);
                for (auto it = contrib.rbegin(); it != contrib.rend(); ++it) {
                    const auto& s = state.splats[list[it->slot]];
                    auto& ga = acc[it->slot];
                    const T a = it->alpha;
                    ga.color += (a * it->trans) * gpix;
                    const T g_a = it->trans * (gpix.dot(s.color - behind) - gtrans * behind_trans);
                    behind = a * s.color + (T(1) - a) * behind;
                    behind_trans *= T(1) - a;

                    ga.opacity += g_a * it->gauss;
                    const T g_q = T(-0.5) * g_a * a;
                    ga.conic += g_q * (it->d * it->d.transpose());
                    ga.mean += (T(-2) * g_q) * (s.conic * it->d);
                }
            }
    });

    // Fixed-order reduction over tiles.
    std::vector<SplatGradient<T>> splat_grads(scene.size());
    for (std::size_t tile = 0; tile < state.tiles.size(); ++tile)
        for (std::size_t slot = 0; slot < state.tiles[tile].size(); ++slot)
            splat_grads[state.tiles[tile][slot]] += tile_grads[tile][slot];

    GradientBundle<T> grads = scene.zeros_like();
    parallel_for(state.order.size(), cfg.threads, [&](std::size_t i) {
        const std::uint32_t k = state.order[i];
        detail::backward_primitive(scene, k, cam, cfg, state.splats[k], splat_grads[k], grads);
    });
    return grads;
}

/// Scalar loss of a rendered image; fills dL/d(image) when `grad` is non-null.
template <typename T>
using ImageLoss = std::function<T(const Image<T>& rendered, Image<T>* grad)>;

/// Sum of squared differences against `target`.
template <typename T>
ImageLoss<T> squared_error_loss(Image<T> target)
{
    return [target = std::move(target)](const Image<T>& img, Image<T>* grad) {
        require_same_shape(img, target);
        if (grad)
            *grad = Image<T>(img.width(), img.height(), img.channels());
        T sum = T(0);
        for (std::size_t i = 0; i < img.size(); ++i) {
            const T d = img.data()[i] - target.data()[i];
            sum += d * d;
            if (grad)
                grad->data()[i] = T(2) * d;
        }
        return sum;
    };
}

struct FdGroupStats {
    std::size_t sampled = 0;
    std::size_t excluded = 0;
    std::size_t passed = 0;
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
};

struct FdReport {
    double h = 0.0;
    double tolerance = 0.0;
    std::array<FdGroupStats, kParamGroupCount> groups{};
    std::size_t sampled = 0;
    std::size_t excluded = 0;
    std::size_t passed = 0;

    std::size_t checked() const { return sampled - excluded; }
    double pass_fraction() const { return checked() ? double(passed) / double(checked()) : 0.0; }
    double excluded_fraction() const { return sampled ? double(excluded) / double(sampled) : 0.0; }
};

/// Compares backward() with central differences on a stratified random
/// subsample of `samples` parameters (every parameter when samples == 0).
/// Parameters whose one-sided differences disagree sit on a kink or jump of
/// the forward map and are excluded.
template <typename T>
FdReport fd_check(const Scene<T>& scene, const Camera<T>& cam, const RenderConfig<T>& cfg, const ImageLoss<T>& loss,
                  T h, std::size_t samples = 200, std::uint64_t seed = 0, T tolerance = T(1e-4))
{
    if (!(h > T(0)))
        throw DomainError("finite-difference step must be positive");

    ForwardState<T> state;
    const auto base = render(scene, cam, cfg, &state);
    Image<T> dimg;
    const T l0 = loss(base.image, &dimg);
    const auto grads = backward(scene, cam, cfg, state, dimg);

    Scene<T> work = scene;
    std::vector<T*> params;
    std::vector<const T*> analytic;
    std::vector<ParamGroup> groups;
    for_each_param(
        [&](ParamGroup gr, T& p, const T& gp) {
            params.push_back(&p);
            analytic.push_back(&gp);
            groups.push_back(gr);
        },
        work, grads);

    // Stratified choice: an equal share from every non-empty group.
    std::array<std::vector<std::size_t>, kParamGroupCount> by_group;
    for (std::size_t i = 0; i < params.size(); ++i)
        by_group[static_cast<std::size_t>(groups[i])].push_back(i);
    std::vector<std::size_t> chosen;
    if (samples == 0 || samples >= params.size()) {
        for (std::size_t i = 0; i < params.size(); ++i)
            chosen.push_back(i);
    } else {
        std::mt19937_64 rng(seed);
        std::size_t nonempty = 0;
        for (auto& v : by_group) {
            std::shuffle(v.begin(), v.end(), rng);
            nonempty += !v.empty();
        }
        std::array<std::size_t, kParamGroupCount> taken{};
        while (chosen.size() < samples) {
            bool progressed = false;
            for (std::size_t g = 0; g < kParamGroupCount && chosen.size() < samples; ++g)
                if (taken[g] < by_group[g].size()) {
                    chosen.push_back(by_group[g][taken[g]++]);
                    progressed = true;
                }
            if (!progressed)
                break;
        }
        std::sort(chosen.begin(), chosen.end());
    }

    auto eval = [&]() { return loss(render(work, cam, cfg).image, nullptr); };

    FdReport rep;
    rep.h = static_cast<double>(h);
    rep.tolerance = static_cast<double>(tolerance);
    for (std::size_t idx : chosen) {
        T* p = params[idx];
        const T orig = *p;
        *p = orig + h;
        const T lp = eval();
        *p = orig - h;
        const T lm = eval();
        *p = orig;

        auto& gs = rep.groups[static_cast<std::size_t>(groups[idx])];
        ++gs.sampled;
        ++rep.sampled;

        const T fwd = (lp - l0) / h, bwd = (l0 - lm) / h;
        const T noise = T(64) * std::numeric_limits<T>::epsilon() * std::max(T(1), std::abs(l0)) / h;
        if (std::abs(fwd - bwd) > T(0.05) * std::max(std::abs(fwd), std::abs(bwd)) + noise) {
            ++gs.excluded;
            ++rep.excluded;
            continue;
        }
        const T numeric = (lp - lm) / (T(2) * h);
        const T a = *analytic[idx];
        const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-8)});
        const double rel = static_cast<double>(std::abs(a - numeric) / denom);
        gs.max_rel_error = std::max(gs.max_rel_error, rel);
        gs.mean_rel_error += rel;
        if (rel < static_cast<double>(tolerance)) {
            ++gs.passed;
            ++rep.passed;
        }
    }
    for (auto& gs : rep.groups)
        if (gs.sampled > gs.excluded)
            gs.mean_rel_error /= double(gs.sampled - gs.excluded);
    return rep;
}

}  // namespace lodgs
