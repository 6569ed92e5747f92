// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

#include "lodgs/core.hpp"
#include "lodgs/lod.hpp"

namespace lodgs {

/// Learnable scene: primitives, their LOD bases and the rate normalizer.
/// `max_rates` holds the per-primitive maximal training sampling rate used by
/// the fixed smoothing filter; it is derived data and never serialized.
template <typename T>
struct Scene {
    std::vector<GaussianPrimitive<T>> primitives;
    std::vector<LodBasis<T>> bases;
    T nu_ref = T(1);
    std::vector<T> max_rates;

    std::size_t size() const { return primitives.size(); }
    std::size_t basis_count() const { return bases.empty() ? 0 : bases.front().size(); }

    std::vector<Vec3<T>> positions() const
    {
        std::vector<Vec3<T>> out;
        out.reserve(primitives.size());
        for (const auto& g : primitives)
            out.push_back(g.position);
        return out;
    }

    void erase(std::size_t k)
    {
        primitives.erase(primitives.begin() + static_cast<std::ptrdiff_t>(k));
        bases.erase(bases.begin() + static_cast<std::ptrdiff_t>(k));
        if (k < max_rates.size())
            max_rates.erase(max_rates.begin() + static_cast<std::ptrdiff_t>(k));
    }

    /// Same shape with every parameter set to zero.
    Scene zeros_like() const
    {
        Scene z;
        z.nu_ref = nu_ref;
        z.primitives.resize(primitives.size());
        for (auto& g : z.primitives) {
            g.rotation.setZero();
            g.color.setZero();
        }
        z.bases.reserve(bases.size());
        for (const auto& b : bases) {
            const std::size_t l = b.size();
            z.bases.push_back({std::vector<T>(l), std::vector<T>(l), std::vector<T>(l), std::vector<T>(l),
                               std::vector<T>(3 * l)});
        }
        return z;
    }

    template <typename U> Scene<U> cast() const
    {
        Scene<U> s;
        s.nu_ref = static_cast<U>(nu_ref);
        for (const auto& g : primitives)
            s.primitives.push_back(g.template cast<U>());
        for (const auto& b : bases)
            s.bases.push_back(b.template cast<U>());
        s.max_rates.assign(max_rates.begin(), max_rates.end());
        return s;
    }
};

/// Gradient of a scalar loss with respect to every learnable parameter; same
/// shape as the scene it was computed for.
template <typename T> using GradientBundle = Scene<T>;

enum class ParamGroup : int {
    position,
    rotation,
    log_scales,
    opacity_logit,
    color,
    lod_centers,
    lod_widths,
    lod_weights_scale,
    lod_weights_opacity,
    lod_weights_color,
};

inline constexpr std::size_t kParamGroupCount = 10;

inline constexpr std::array<std::string_view, kParamGroupCount> kParamGroupNames = {
    "position",   "rotation",          "log_scales",          "opacity_logit",      "color",
    "lod_centers", "lod_widths", "lod_weights_scale", "lod_weights_opacity", "lod_weights_color",
};

inline std::string_view group_name(ParamGroup g) { return kParamGroupNames[static_cast<std::size_t>(g)]; }

inline bool is_lod_group(ParamGroup g) { return static_cast<int>(g) >= static_cast<int>(ParamGroup::lod_centers); }

namespace detail {

template <typename F, typename... S>
void visit_vector(ParamGroup group, F& fn, std::size_t n, S&... v)
{
    for (std::size_t i = 0; i < n; ++i)
        fn(group, v[i]...);
}

}  // namespace detail

/// Calls fn(group, p_0, p_1, ...) for every scalar parameter, walking any
/// number of identically shaped scenes in lockstep. Order: per primitive, the
/// Gaussian fields, then the basis fields.
template <typename F, typename First, typename... Rest>
void for_each_param(F&& fn, First& first, Rest&... rest)
{
    for (std::size_t k = 0; k < first.primitives.size(); ++k) {
        detail::visit_vector(ParamGroup::position, fn, 3, first.primitives[k].position, rest.primitives[k].position...);
        detail::visit_vector(ParamGroup::rotation, fn, 4, first.primitives[k].rotation, rest.primitives[k].rotation...);
        detail::visit_vector(ParamGroup::log_scales, fn, 3, first.primitives[k].log_scales,
                             rest.primitives[k].log_scales...);
        fn(ParamGroup::opacity_logit, first.primitives[k].opacity_logit, rest.primitives[k].opacity_logit...);
        detail::visit_vector(ParamGroup::color, fn, 3, first.primitives[k].color, rest.primitives[k].color...);
        if (k < first.bases.size()) {
            const std::size_t l = first.bases[k].size();
            detail::visit_vector(ParamGroup::lod_centers, fn, l, first.bases[k].centers, rest.bases[k].centers...);
            detail::visit_vector(ParamGroup::lod_widths, fn, l, first.bases[k].log_widths, rest.bases[k].log_widths...);
            detail::visit_vector(ParamGroup::lod_weights_scale, fn, l, first.bases[k].weights_scale,
                                 rest.bases[k].weights_scale...);
            detail::visit_vector(ParamGroup::lod_weights_opacity, fn, l, first.bases[k].weights_opacity,
                                 rest.bases[k].weights_opacity...);
            detail::visit_vector(ParamGroup::lod_weights_color, fn, 3 * l, first.bases[k].weights_color,
                                 rest.bases[k].weights_color...);
        }
    }
}

template <typename T>
std::size_t parameter_count(const Scene<T>& s)
{
    std::size_t n = 0;
    for_each_param([&](ParamGroup, const T&) { ++n; }, s);
    return n;
}

/// Scene with `count` primitives, each with a freshly initialized basis.
template <typename T>
Scene<T> make_scene(std::vector<GaussianPrimitive<T>> prims, std::size_t basis_size, T nu_ref)
{
    Scene<T> s;
    s.nu_ref = nu_ref;
    s.bases.assign(prims.size(), make_initial_basis<T>(basis_size));
    s.primitives = std::move(prims);
    return s;
}

}  // namespace lodgs
