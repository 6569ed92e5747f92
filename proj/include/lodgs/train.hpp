// SPDX-License-Identifier: Apache-2.0
#pragma once

// Photometric loss, Adam and the training loop. Every iteration draws one
// training view (any scale or level), recomputes the sampling rates for that
// camera inside render(), and takes one optimizer step.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "lodgs/dataset.hpp"
#include "lodgs/grad.hpp"
#include "lodgs/metrics.hpp"

namespace lodgs {

template <typename T>
struct LossResult {
    T value = T(0);
    Image<T> grad;
};

/// (1 - lambda) mean|r - t| + lambda (1 - SSIM(r, t)) and its gradient.
/// Images below the SSIM window size use the L1 term alone.
template <typename T>
LossResult<T> photometric_loss(const Image<T>& rendered, const Image<T>& target, T lambda_ssim)
{
    require_same_shape(rendered, target);
    if (rendered.empty())
        throw ShapeMismatch("empty image");
    LossResult<T> out;
    out.grad = Image<T>(rendered.width(), rendered.height(), rendered.channels());
    const bool use_ssim = lambda_ssim > T(0) && rendered.width() >= ssim_detail::kWindow &&
                          rendered.height() >= ssim_detail::kWindow;
    const T w1 = use_ssim ? T(1) - lambda_ssim : T(1);
    const T inv_n = T(1) / static_cast<T>(rendered.size());

    T l1 = T(0);
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const T d = rendered.data()[i] - target.data()[i];
        l1 += std::abs(d);
        out.grad.data()[i] = w1 * inv_n * (d > T(0) ? T(1) : d < T(0) ? T(-1) : T(0));
    }
    out.value = w1 * l1 * inv_n;
    if (use_ssim) {
        Image<T> gs;
        const T ssim = static_cast<T>(ssim_with_grad(rendered, target, &gs));
        out.value += lambda_ssim * (T(1) - ssim);
        for (std::size_t i = 0; i < rendered.size(); ++i)
            out.grad.data()[i] -= lambda_ssim * gs.data()[i];
    }
    return out;
}

/// Per-group learning rates, indexed by ParamGroup.
template <typename T>
struct LearningRates {
    std::array<T, kParamGroupCount> rate{};

    T& operator[](ParamGroup g) { return rate[static_cast<std::size_t>(g)]; }
    T operator[](ParamGroup g) const { return rate[static_cast<std::size_t>(g)]; }

    void set_lod_weights(T v)
    {
        (*this)[ParamGroup::lod_weights_scale] = v;
        (*this)[ParamGroup::lod_weights_opacity] = v;
        (*this)[ParamGroup::lod_weights_color] = v;
    }

    void set_lod_geometry(T centers, T widths)
    {
        (*this)[ParamGroup::lod_centers] = centers;
        (*this)[ParamGroup::lod_widths] = widths;
    }
};

template <typename T>
LearningRates<T> default_learning_rates(T scene_extent)
{
    LearningRates<T> lr;
    lr[ParamGroup::position] = T(1.6e-4) * scene_extent;
    lr[ParamGroup::rotation] = T(1e-3);
    lr[ParamGroup::log_scales] = T(5e-3);
    lr[ParamGroup::opacity_logit] = T(5e-2);
    lr[ParamGroup::color] = T(2.5e-3);
    lr.set_lod_weights(T(1e-3));
    lr.set_lod_geometry(T(1e-4), T(1e-4));
    return lr;
}

/// First and second moments, shaped like the scene.
template <typename T>
struct AdamState {
    Scene<T> m, v;
    std::uint64_t step = 0;

    AdamState() = default;
    explicit AdamState(const Scene<T>& params) : m(params.zeros_like()), v(params.zeros_like()) {}

    void erase(std::size_t k)
    {
        m.erase(k);
        v.erase(k);
    }
};

/// One bias-corrected Adam step on every parameter.
template <typename T>
void adam_step(Scene<T>& params, const GradientBundle<T>& grads, AdamState<T>& state, const LearningRates<T>& lr,
               T beta1, T beta2, T eps)
{
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeMismatch("optimizer state does not match the parameters");
    ++state.step;
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(state.step));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(state.step));
    for_each_param(
        [&](ParamGroup group, T& p, const T& g, T& m, T& v) {
            m = beta1 * m + (T(1) - beta1) * g;
            v = beta2 * v + (T(1) - beta2) * g * g;
            const T rate = lr[group];
            if (rate == T(0))
                return;
            p -= rate * (m / bc1) / (std::sqrt(v / bc2) + eps);
        },
        params, grads, state.m, state.v);
}

enum class Ablation { full, no_lod, no_ewa };

template <typename T>
struct TrainConfig {
    int iterations = 2000;
    T lambda_ssim = T(0.2);
    LearningRates<T> learning_rates = default_learning_rates(T(1));
    T adam_beta1 = T(0.9);
    T adam_beta2 = T(0.999);
    T adam_eps = T(1e-15);
    T prune_opacity_threshold = T(0.005);
    int prune_interval = 0;  // 0 disables pruning
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::full;
    RenderConfig<T> render;     // modes here are the full configuration
    int mip_refresh_interval = 100;  // recomputation period of max rates (mip_fixed)
    int eval_interval = 0;      // 0 disables periodic evaluation
    std::function<double(const Scene<T>&)> evaluate;  // called at eval intervals

    bool valid() const
    {
        if (iterations < 0 || !(lambda_ssim >= T(0) && lambda_ssim <= T(1)) || prune_interval < 0)
            return false;
        return std::all_of(learning_rates.rate.begin(), learning_rates.rate.end(),
                           [](T r) { return r >= T(0); });
    }

    /// Render configuration after applying the ablation.
    RenderConfig<T> effective_render() const
    {
        RenderConfig<T> cfg = render;
        if (ablation == Ablation::no_lod && cfg.mode_3d == Mode3D::lod)
            cfg.mode_3d = Mode3D::none;
        if (ablation == Ablation::no_ewa)
            cfg.mode_2d = Mode2D::dilation;
        return cfg;
    }
};

struct LossRecord {
    int iteration = 0;
    double loss = 0.0;
    std::optional<double> eval_psnr;
};

template <typename T>
struct TrainResult {
    Scene<T> scene;
    std::vector<LossRecord> history;
    std::size_t pruned = 0;
};

/// Per-primitive maximal sampling rate over `cameras`. Primitives no camera
/// sees get nu_ref.
template <typename T>
std::vector<T> compute_max_rates(const Scene<T>& scene, std::span<const Camera<T>> cameras)
{
    std::vector<T> rates(scene.size());
    for (std::size_t k = 0; k < scene.size(); ++k) {
        try {
            rates[k] = max_sampling_rate(scene.primitives[k].position, cameras);
        } catch (const NoVisibleView&) {
            rates[k] = scene.nu_ref;
        }
    }
    return rates;
}

/// Removes primitives whose opacity is below `threshold`; returns the count.
template <typename T>
std::size_t prune_transparent(Scene<T>& scene, AdamState<T>& state, T threshold)
{
    std::size_t removed = 0;
    for (std::size_t k = scene.size(); k-- > 0;)
        if (scene.primitives[k].opacity() < threshold) {
            scene.erase(k);
            state.erase(k);
            ++removed;
        }
    return removed;
}

template <typename T>
TrainResult<T> train(const Scene<T>& scene0, std::span<const LoadedView<T>> views, const TrainConfig<T>& config)
{
    if (!config.valid())
        throw DomainError("invalid training configuration");
    std::vector<const LoadedView<T>*> pool;
    std::vector<Camera<T>> cameras;
    for (const auto& v : views)
        if (v.split == Split::train) {
            pool.push_back(&v);
            cameras.push_back(v.camera);
        }
    if (pool.empty())
        throw DomainError("no training views");

    TrainResult<T> result;
    result.scene = scene0;
    if (config.iterations == 0)
        return result;

    Scene<T>& scene = result.scene;
    const RenderConfig<T> cfg = config.effective_render();
    if (cfg.mode_3d == Mode3D::lod && scene.bases.size() != scene.size())
        throw DomainError("lod training requires one basis per primitive");
    AdamState<T> adam(scene);
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    ForwardState<T> state;

    for (int it = 0; it < config.iterations; ++it) {
        if (cfg.mode_3d == Mode3D::mip_fixed &&
            (it % std::max(config.mip_refresh_interval, 1) == 0 || scene.max_rates.size() != scene.size()))
            scene.max_rates = compute_max_rates(scene, std::span<const Camera<T>>(cameras));

        const LoadedView<T>& view = *pool[pick(rng)];
        const RenderOutput<T> out = render(scene, view.camera, cfg, &state);
        const LossResult<T> loss = photometric_loss(out.image, view.image, config.lambda_ssim);
        const GradientBundle<T> grads = backward(scene, view.camera, cfg, state, loss.grad);
        adam_step(scene, grads, adam, config.learning_rates, config.adam_beta1, config.adam_beta2, config.adam_eps);
        for (auto& g : scene.primitives)
            g.color = g.color.cwiseMax(T(0)).cwiseMin(T(1));

        if (config.prune_interval > 0 && (it + 1) % config.prune_interval == 0)
            result.pruned += prune_transparent(scene, adam, config.prune_opacity_threshold);

        LossRecord rec{it, static_cast<double>(loss.value), std::nullopt};
        if (config.evaluate && config.eval_interval > 0 &&
            ((it + 1) % config.eval_interval == 0 || it + 1 == config.iterations))
            rec.eval_psnr = config.evaluate(scene);
        result.history.push_back(rec);
    }
    return result;
}

}  // namespace lodgs
