// SPDX-License-Identifier: Apache-2.0
#pragma once

// Desk-scale synthetic data: toy scenes, orbiting camera rigs and the
// multi-scale (focal downscaling) and multi-level (camera distance) datasets
// whose ground truth comes from the supersampling renderer.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "lodgs/raster.hpp"

namespace lodgs {

enum class SceneKind { checker_plane, ring, random };
enum class Split { train, test };

struct ViewRecord {
    int view = 0;  // index within the camera rig
    Camera<double> camera;
    std::string image_path;  // relative to the manifest
    int scale = 1;           // focal/resolution divisor
    int level = 1;           // camera-distance level, 1 = nearest
    Split split = Split::train;
};

struct DatasetManifest {
    std::vector<ViewRecord> views;
    double scene_extent = 1.0;
    double nu_ref = 1.0;

    bool multilevel() const
    {
        return std::any_of(views.begin(), views.end(), [](const ViewRecord& v) { return v.level != 1; });
    }
};

/// Manifest plus ground-truth images, index-aligned with manifest.views.
struct GeneratedDataset {
    DatasetManifest manifest;
    std::vector<Image<double>> images;
};

/// A view with its image loaded, in the working precision.
template <typename T>
struct LoadedView {
    Camera<T> camera;
    Image<T> image;
    int view = 0;
    int scale = 1;
    int level = 1;
    Split split = Split::train;
};

/// Rounds every parameter through f32 so that a scene survives the on-disk
/// format unchanged.
template <typename T>
void round_to_float(Scene<T>& s)
{
    for_each_param([](ParamGroup, T& v) { v = static_cast<T>(static_cast<float>(v)); }, s);
    s.nu_ref = static_cast<T>(static_cast<float>(s.nu_ref));
}

/// checker_plane: n x n isotropic Gaussians on the z = 0 square [-1, 1]^2 with
/// alternating colors. ring: n Gaussians on a circle of radius 0.8 with scales
/// graded from 0.01 to 0.1. random: n seeded placements in [-0.5, 0.5]^3.
inline std::vector<GaussianPrimitive<double>> build_toy_scene(SceneKind kind, int n, std::uint64_t seed)
{
    if (n < 1)
        throw DomainError("toy scene needs n >= 1");
    std::vector<GaussianPrimitive<double>> prims;
    std::mt19937_64 rng(seed);
    switch (kind) {
    case SceneKind::checker_plane: {
        const double spacing = 2.0 / n;
        const Vec3<double> ca(0.85, 0.75, 0.15), cb(0.15, 0.25, 0.8);
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                GaussianPrimitive<double> g;
                g.position = {-1.0 + spacing * (i + 0.5), -1.0 + spacing * (j + 0.5), 0.0};
                g.log_scales.setConstant(std::log(0.3 * spacing));
                g.opacity_logit = logit(0.9);
                g.color = (i + j) % 2 == 0 ? ca : cb;
                prims.push_back(g);
            }
        break;
    }
    case SceneKind::ring: {
        for (int i = 0; i < n; ++i) {
            const double t = n > 1 ? double(i) / (n - 1) : 0.0;
            const double az = 2.0 * std::numbers::pi * i / n;
            GaussianPrimitive<double> g;
            g.position = {0.8 * std::cos(az), 0.8 * std::sin(az), 0.0};
            g.log_scales.setConstant(std::log(0.01) + t * std::log(10.0));
            g.opacity_logit = logit(0.85);
            g.color = {0.15 + 0.7 * t, 0.5, 0.85 - 0.7 * t};
            prims.push_back(g);
        }
        break;
    }
    case SceneKind::random: {
        std::uniform_real_distribution<double> pos(-0.5, 0.5), unit(0.0, 1.0);
        std::normal_distribution<double> normal;
        for (int i = 0; i < n; ++i) {
            GaussianPrimitive<double> g;
            g.position = {pos(rng), pos(rng), pos(rng)};
            Vec4<double> q(normal(rng), normal(rng), normal(rng), normal(rng));
            g.rotation = q.normalized();
            for (int a = 0; a < 3; ++a)
                g.log_scales[a] = std::log(0.04) + std::log(2.5) * (2.0 * unit(rng) - 1.0);
            g.opacity_logit = logit(0.5 + 0.45 * unit(rng));
            for (int c = 0; c < 3; ++c)
                g.color[c] = 0.1 + 0.8 * unit(rng);
            prims.push_back(g);
        }
        break;
    }
    }
    return prims;
}

/// `count` cameras evenly spaced in azimuth at `elevation` radians, all at
/// distance `radius` and looking at the origin. Square images.
inline std::vector<Camera<double>> orbit_cameras(int count, double radius, double focal, int resolution,
                                                 double elevation)
{
    if (count < 1 || !(radius > 0.0))
        throw DomainError("orbit needs count >= 1 and radius > 0");
    std::vector<Camera<double>> cams;
    for (int i = 0; i < count; ++i) {
        const double az = 2.0 * std::numbers::pi * i / count;
        const Vec3<double> eye(radius * std::cos(elevation) * std::cos(az),
                               radius * std::cos(elevation) * std::sin(az), radius * std::sin(elevation));
        cams.push_back(look_at<double>(eye, Vec3<double>::Zero(), focal, resolution, resolution, 0.05));
    }
    return cams;
}

inline bool is_test_view(int view) { return view % 8 == 0; }

inline double scene_extent(const std::vector<GaussianPrimitive<double>>& prims)
{
    double r = 0.0;
    for (const auto& g : prims)
        r = std::max(r, g.position.norm());
    return r;
}

namespace detail {

inline double median(std::vector<double> v)
{
    if (v.empty())
        throw DomainError("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline std::string image_name(int view, const char* tag, int value)
{
    return "images/v" + std::to_string(view / 100 % 10) + std::to_string(view / 10 % 10) +
           std::to_string(view % 10) + "_" + tag + std::to_string(value) + ".pfm";
}

inline RenderConfig<double> ground_truth_config()
{
    RenderConfig<double> cfg;
    cfg.mode_2d = Mode2D::none;
    cfg.mode_3d = Mode3D::none;
    return cfg;
}

}  // namespace detail

/// Median sampling rate at the origin over training cameras.
inline double reference_rate(const std::vector<Camera<double>>& cams)
{
    std::vector<double> rates;
    for (std::size_t i = 0; i < cams.size(); ++i)
        if (!is_test_view(static_cast<int>(i)))
            rates.push_back(sampling_rate(cams[i], Vec3<double>(Vec3<double>::Zero())));
    if (rates.empty())
        rates.push_back(sampling_rate(cams.front(), Vec3<double>(Vec3<double>::Zero())));
    return detail::median(std::move(rates));
}

/// Every view at every focal/resolution divisor in `factors`, ground truth by
/// supersampling at `ss_factor`. Views with index % 8 == 0 are held out.
inline GeneratedDataset make_multiscale(const std::vector<Camera<double>>& views, const Scene<double>& gt_scene,
                                        const std::vector<int>& factors, int ss_factor)
{
    if (ss_factor < 1)
        throw DomainError("supersampling factor must be >= 1");
    GeneratedDataset ds;
    ds.manifest.scene_extent = scene_extent(gt_scene.primitives);
    ds.manifest.nu_ref = reference_rate(views);
    const auto cfg = detail::ground_truth_config();
    for (std::size_t i = 0; i < views.size(); ++i)
        for (int k : factors) {
            const auto& base = views[i];
            if (k < 1 || base.width % k != 0 || base.height % k != 0)
                throw DomainError("downscale factor must divide the image size");
            ViewRecord rec;
            rec.view = static_cast<int>(i);
            rec.camera = base.scaled(1.0 / k, base.width / k, base.height / k);
            rec.scale = k;
            rec.level = 1;
            rec.split = is_test_view(rec.view) ? Split::test : Split::train;
            rec.image_path = detail::image_name(rec.view, "s", k);
            ds.images.push_back(supersample_render(gt_scene, rec.camera, cfg, ss_factor).image);
            ds.manifest.views.push_back(std::move(rec));
        }
    return ds;
}

/// Three orbits at increasing `radii` with identical focal length and
/// resolution; level 1 is the nearest.
inline GeneratedDataset make_multilevel(const Scene<double>& gt_scene, const std::vector<double>& radii, double focal,
                                        int count, int resolution, double elevation, int ss_factor)
{
    if (radii.size() != 3 || !(radii[0] < radii[1] && radii[1] < radii[2]))
        throw DomainError("multilevel needs three strictly increasing radii");
    GeneratedDataset ds;
    ds.manifest.scene_extent = scene_extent(gt_scene.primitives);
    const auto cfg = detail::ground_truth_config();
    for (int level = 1; level <= 3; ++level) {
        const auto cams = orbit_cameras(count, radii[level - 1], focal, resolution, elevation);
        if (level == 1)
            ds.manifest.nu_ref = reference_rate(cams);
        for (int i = 0; i < count; ++i) {
            ViewRecord rec;
            rec.view = i;
            rec.camera = cams[i];
            rec.scale = 1;
            rec.level = level;
            rec.split = is_test_view(i) ? Split::test : Split::train;
            rec.image_path = detail::image_name(i, "l", level);
            ds.images.push_back(supersample_render(gt_scene, rec.camera, cfg, ss_factor).image);
            ds.manifest.views.push_back(std::move(rec));
        }
    }
    return ds;
}

/// Gaussian noise on positions (std `position_sigma`) and colors (std
/// `color_sigma`, result kept inside [0.02, 0.98]).
template <typename T>
Scene<T> perturb_scene(const Scene<T>& scene, double position_sigma, double color_sigma, std::uint64_t seed)
{
    Scene<T> out = scene;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (auto& g : out.primitives) {
        for (int a = 0; a < 3; ++a)
            g.position[a] += static_cast<T>(position_sigma * normal(rng));
        for (int c = 0; c < 3; ++c)
            g.color[c] = std::clamp(g.color[c] + static_cast<T>(color_sigma * normal(rng)), T(0.02), T(0.98));
    }
    return out;
}

template <typename T>
std::vector<LoadedView<T>> to_loaded_views(const GeneratedDataset& ds)
{
    std::vector<LoadedView<T>> out;
    for (std::size_t i = 0; i < ds.manifest.views.size(); ++i) {
        const auto& v = ds.manifest.views[i];
        out.push_back({v.camera.template cast<T>(), ds.images[i].template cast<T>(), v.view, v.scale, v.level,
                       v.split});
    }
    return out;
}

}  // namespace lodgs
