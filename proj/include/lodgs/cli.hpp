// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage error, 2 data error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lodgs/io.hpp"
#include "lodgs/train.hpp"

namespace lodgs {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Bad flag value detected after parsing.
class UsageError : public Error {
public:
    using Error::Error;
};

namespace cli_detail {

namespace fs = std::filesystem;

inline const std::map<std::string, Mode2D> kMode2D = {
    {"ewa", Mode2D::ewa}, {"dilation", Mode2D::dilation}, {"none", Mode2D::none}};
inline const std::map<std::string, Mode3D> kMode3D = {
    {"lod", Mode3D::lod}, {"mip", Mode3D::mip_fixed}, {"none", Mode3D::none}};
inline const std::map<std::string, Ablation> kAblation = {
    {"full", Ablation::full}, {"no_lod", Ablation::no_lod}, {"no_ewa", Ablation::no_ewa}};
inline const std::map<std::string, SceneKind> kKind = {
    {"checker_plane", SceneKind::checker_plane}, {"ring", SceneKind::ring}, {"random", SceneKind::random}};

template <typename E>
std::vector<std::string> keys(const std::map<std::string, E>& m)
{
    std::vector<std::string> out;
    for (const auto& [k, v] : m)
        out.push_back(k);
    return out;
}

/// Number formatting shared by every report: fixed digits, "inf" for the
/// identical-image sentinel.
inline std::string fmt(double v, int digits)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    if (std::isnan(v))
        return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

/// Rendering options shared by render, eval and gradcheck.
struct RenderFlags {
    std::string mode2d = "ewa";
    std::string mode3d = "lod";
    std::string ablation = "full";
    double s2d = 0.1;
    double s3d = RenderConfig<double>{}.s3d;
    unsigned threads = 1;

    void add(CLI::App* app, bool with_ablation)
    {
        app->add_option("--mode2d", mode2d, "2D filter")->check(CLI::IsMember(keys(kMode2D)));
        app->add_option("--mode3d", mode3d, "3D filter")->check(CLI::IsMember(keys(kMode3D)));
        if (with_ablation)
            app->add_option("--ablation", ablation, "ablation applied on top of the modes")
                ->check(CLI::IsMember(keys(kAblation)));
        app->add_option("--s2d", s2d, "2D filter size in pixels^2")->check(CLI::NonNegativeNumber);
        app->add_option("--s3d", s3d, "3D smoothing filter scale")->check(CLI::NonNegativeNumber);
        app->add_option("--threads", threads, "worker threads (0 = all cores)");
    }

    template <typename T>
    RenderConfig<T> config() const
    {
        TrainConfig<T> tc;
        tc.render.mode_2d = kMode2D.at(mode2d);
        tc.render.mode_3d = kMode3D.at(mode3d);
        tc.render.s2d = static_cast<T>(s2d);
        tc.render.s3d = static_cast<T>(s3d);
        tc.render.threads = threads;
        tc.ablation = kAblation.at(ablation);
        return tc.effective_render();
    }
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<LoadedView<double>> views;
};

inline Dataset load_dataset(const fs::path& manifest_path)
{
    Dataset d;
    d.manifest = load_manifest(manifest_path);
    d.views = load_views<double>(d.manifest, manifest_path.parent_path());
    return d;
}

template <typename T>
std::vector<Camera<T>> training_cameras(const DatasetManifest& m)
{
    std::vector<Camera<T>> cams;
    for (const auto& v : m.views)
        if (v.split == Split::train)
            cams.push_back(v.camera.template cast<T>());
    if (cams.empty())
        throw DataError("manifest has no training views");
    return cams;
}

/// Adds per-primitive maximal rates when the configuration needs them.
template <typename T>
void prepare_scene(Scene<T>& scene, const RenderConfig<T>& cfg, const DatasetManifest& m)
{
    if (cfg.mode_3d == Mode3D::mip_fixed) {
        const auto cams = training_cameras<T>(m);
        scene.max_rates = compute_max_rates(scene, std::span<const Camera<T>>(cams));
    }
    if (cfg.mode_3d == Mode3D::lod && scene.bases.size() != scene.size())
        throw DataError("scene has no LOD basis; use --mode3d none or mip");
}

/// Render used by eval and render: the supersampling oracle when factor > 0.
inline Image<double> render_view(const Scene<double>& scene, const Camera<double>& cam,
                                 const RenderConfig<double>& cfg, int supersample)
{
    if (supersample > 0)
        return supersample_render(scene, cam, cfg, supersample).image;
    return render(scene, cam, cfg).image;
}

/// Images are compared at the f32 precision they are stored with.
inline Image<double> storage_precision(const Image<double>& img) { return img.cast<float>().cast<double>(); }

// ---------------------------------------------------------------- generate

struct GenerateOptions {
    std::string kind = "checker_plane";
    int n = 16;
    int views = 10;
    std::vector<int> scales;
    std::vector<double> levels;
    std::string out;
    std::uint64_t seed = 0;
    int resolution = 128;
    double focal = 0.0;       // 0 = resolution
    double radius = 0.0;      // multiples of the scene extent, 0 = 3
    double elevation = 30.0;  // degrees
    int ss = 8;
    int basis = 20;
    double init_position_noise = 0.02;  // fraction of the scene extent
    double init_color_noise = 0.1;
};

inline int run_generate(const GenerateOptions& o)
{
    if (!o.scales.empty() && !o.levels.empty())
        throw UsageError("--scales and --levels are mutually exclusive");
    if (o.n < 1 || o.views < 1 || o.resolution < 1 || o.ss < 1)
        throw UsageError("--n, --views, --resolution and --ss must be positive");

    Scene<double> gt = make_scene(build_toy_scene(kKind.at(o.kind), o.n, o.seed),
                                  static_cast<std::size_t>(o.basis), 1.0);
    round_to_float(gt);
    const double extent = std::max(scene_extent(gt.primitives), 1e-6);
    const double focal = o.focal > 0.0 ? o.focal : static_cast<double>(o.resolution);
    const double elevation = o.elevation * std::numbers::pi / 180.0;

    GeneratedDataset ds;
    if (!o.levels.empty()) {
        if (o.levels.size() != 3)
            throw UsageError("--levels needs exactly three radii");
        std::vector<double> radii;
        for (double r : o.levels)
            radii.push_back(r * extent);
        ds = make_multilevel(gt, radii, focal, o.views, o.resolution, elevation, o.ss);
    } else {
        const std::vector<int> factors = o.scales.empty() ? std::vector<int>{1, 2, 4, 8} : o.scales;
        const double radius = (o.radius > 0.0 ? o.radius : 3.0) * extent;
        ds = make_multiscale(orbit_cameras(o.views, radius, focal, o.resolution, elevation), gt, factors, o.ss);
    }
    ds.manifest.nu_ref = static_cast<double>(static_cast<float>(ds.manifest.nu_ref));
    gt.nu_ref = ds.manifest.nu_ref;

    const fs::path dir(o.out);
    write_dataset(dir, ds);
    save_scene(dir / "gt_scene.lodgs", gt);
    Scene<double> init = perturb_scene(gt, o.init_position_noise * extent, o.init_color_noise, o.seed + 1);
    save_scene(dir / "init_scene.lodgs", init);
    std::cout << "wrote " << ds.manifest.views.size() << " views, " << gt.size() << " primitives to " << dir.string()
              << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------- train

struct TrainOptions {
    std::string data, init, out, history;
    int iters = 2000;
    std::uint64_t seed = 0;
    std::string precision = "f64";
    double lambda = 0.2;
    int prune_interval = 0;
    double prune_threshold = 0.005;
    int basis = 0;  // > 0 reinitializes the LOD basis with this many components
    int eval_interval = 0;
    RenderFlags render;
    std::map<std::string, double> lr;  // flag name -> value, only those given
};

template <typename T>
int run_train_typed(const TrainOptions& o)
{
    const Dataset data = load_dataset(o.data);
    Scene<T> scene = load_scene<T>(o.init);
    if (o.basis > 0)
        scene.bases.assign(scene.size(), make_initial_basis<T>(static_cast<std::size_t>(o.basis)));
    if (scene.bases.empty())
        scene.bases.assign(scene.size(), make_initial_basis<T>(0));

    std::vector<LoadedView<T>> views;
    for (const auto& v : data.views)
        views.push_back({v.camera.template cast<T>(), v.image.template cast<T>(), v.view, v.scale, v.level, v.split});

    TrainConfig<T> cfg;
    cfg.iterations = o.iters;
    cfg.seed = o.seed;
    cfg.lambda_ssim = static_cast<T>(o.lambda);
    cfg.prune_interval = o.prune_interval;
    cfg.prune_opacity_threshold = static_cast<T>(o.prune_threshold);
    cfg.learning_rates = default_learning_rates(static_cast<T>(data.manifest.scene_extent));
    for (const auto& [name, value] : o.lr) {
        const T v = static_cast<T>(value);
        if (name == "lod-weights")
            cfg.learning_rates.set_lod_weights(v);
        else if (name == "lod-centers")
            cfg.learning_rates[ParamGroup::lod_centers] = v;
        else if (name == "lod-widths")
            cfg.learning_rates[ParamGroup::lod_widths] = v;
        else if (name == "position")
            cfg.learning_rates[ParamGroup::position] = v;
        else if (name == "rotation")
            cfg.learning_rates[ParamGroup::rotation] = v;
        else if (name == "log-scales")
            cfg.learning_rates[ParamGroup::log_scales] = v;
        else if (name == "opacity")
            cfg.learning_rates[ParamGroup::opacity_logit] = v;
        else if (name == "color")
            cfg.learning_rates[ParamGroup::color] = v;
    }
    cfg.render.mode_2d = kMode2D.at(o.render.mode2d);
    cfg.render.mode_3d = kMode3D.at(o.render.mode3d);
    cfg.render.s2d = static_cast<T>(o.render.s2d);
    cfg.render.s3d = static_cast<T>(o.render.s3d);
    cfg.render.threads = o.render.threads;
    cfg.ablation = kAblation.at(o.render.ablation);
    if (!cfg.valid())
        throw UsageError("invalid training configuration (check --lambda and --lr-*)");

    if (o.eval_interval > 0) {
        cfg.eval_interval = o.eval_interval;
        const RenderConfig<T> rc = cfg.effective_render();
        const auto cams = training_cameras<T>(data.manifest);
        cfg.evaluate = [&views, rc, cams](const Scene<T>& s) {
            Scene<T> work = s;
            if (rc.mode_3d == Mode3D::mip_fixed)
                work.max_rates = compute_max_rates(work, std::span<const Camera<T>>(cams));
            double sum = 0.0;
            int count = 0;
            for (const auto& v : views)
                if (v.split == Split::test && v.scale == 1 && v.level == 1) {
                    sum += metric_psnr(render(work, v.camera, rc).image, v.image);
                    ++count;
                }
            return count ? sum / count : 0.0;
        };
    }

    const TrainResult<T> result = train(scene, std::span<const LoadedView<T>>(views), cfg);
    save_scene(o.out, result.scene);
    if (!o.history.empty()) {
        std::ofstream h(o.history);
        if (!h)
            throw DataError("cannot write " + o.history);
        h << "iteration,loss,eval_psnr\n";
        for (const auto& r : result.history)
            h << r.iteration << "," << fmt(r.loss, 10) << "," << (r.eval_psnr ? fmt(*r.eval_psnr, 6) : "") << "\n";
    }
    if (!result.history.empty())
        std::cout << "final loss " << fmt(result.history.back().loss, 6) << ", " << result.scene.size()
                  << " primitives (" << result.pruned << " pruned)\n";
    return kExitOk;
}

inline int run_train(const TrainOptions& o)
{
    return o.precision == "f32" ? run_train_typed<float>(o) : run_train_typed<double>(o);
}

// ------------------------------------------------------------------ render

struct RenderOptions {
    std::string scene, data, out;
    int camera_index = 0;
    int supersample = 0;
    RenderFlags render;
};

inline int run_render(const RenderOptions& o)
{
    const DatasetManifest m = load_manifest(o.data);
    if (o.camera_index < 0 || static_cast<std::size_t>(o.camera_index) >= m.views.size())
        throw UsageError("--camera-index out of range (manifest has " + std::to_string(m.views.size()) + " views)");
    Scene<double> scene = load_scene<double>(o.scene);
    const auto cfg = o.render.config<double>();
    if (o.supersample <= 0)
        prepare_scene(scene, cfg, m);
    const Image<double> img = render_view(scene, m.views[o.camera_index].camera, cfg, o.supersample);
    if (fs::path(o.out).extension() == ".ppm")
        write_ppm(o.out, img);
    else
        write_pfm(o.out, img);
    return kExitOk;
}

// -------------------------------------------------------------------- eval

struct EvalOptions {
    std::string scene, data, out;
    std::string split = "test";
    int supersample = 0;
    RenderFlags render;
};

struct EvalRow {
    std::string group;  // "scale" or "level"
    int value = 0;
    int views = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

/// One row per scale (or level) plus an "avg" row; PSNR and SSIM averaged
/// over views, the average row over groups. SSIM is nan for images smaller
/// than its window and left out of the average.
inline std::vector<EvalRow> evaluate(const Scene<double>& scene_in, const Dataset& data,
                                     const RenderConfig<double>& cfg, Split split, int supersample)
{
    Scene<double> scene = scene_in;
    if (supersample <= 0)
        prepare_scene(scene, cfg, data.manifest);
    const bool by_level = data.manifest.multilevel();
    std::map<int, EvalRow> rows;
    for (const auto& v : data.views) {
        if (v.split != split)
            continue;
        const Image<double> img = storage_precision(render_view(scene, v.camera, cfg, supersample));
        auto& row = rows[by_level ? v.level : v.scale];
        row.group = by_level ? "level" : "scale";
        row.value = by_level ? v.level : v.scale;
        ++row.views;
        row.psnr += metric_psnr(img, v.image);
        const bool fits = img.width() >= ssim_detail::kWindow && img.height() >= ssim_detail::kWindow;
        row.ssim += fits ? metric_ssim(img, v.image) : std::numeric_limits<double>::quiet_NaN();
    }
    if (rows.empty())
        throw DataError("no views in the requested split");
    std::vector<EvalRow> out;
    EvalRow avg{"avg", 0, 0, 0.0, 0.0};
    int ssim_rows = 0;
    for (auto& [key, row] : rows) {
        row.psnr /= row.views;
        row.ssim /= row.views;
        avg.views += row.views;
        avg.psnr += row.psnr;
        if (!std::isnan(row.ssim)) {
            avg.ssim += row.ssim;
            ++ssim_rows;
        }
        out.push_back(row);
    }
    avg.psnr /= static_cast<double>(rows.size());
    avg.ssim = ssim_rows ? avg.ssim / ssim_rows : std::numeric_limits<double>::quiet_NaN();
    out.push_back(avg);
    return out;
}

inline std::string eval_csv(const std::vector<EvalRow>& rows)
{
    std::ostringstream s;
    s << "group,value,views,psnr,ssim\n";
    for (const auto& r : rows)
        s << r.group << "," << (r.group == "avg" ? std::string() : std::to_string(r.value)) << "," << r.views << ","
          << fmt(r.psnr, 6) << "," << fmt(r.ssim, 8) << "\n";
    return s.str();
}

inline int run_eval(const EvalOptions& o)
{
    const Dataset data = load_dataset(o.data);
    const Scene<double> scene = load_scene<double>(o.scene);
    const auto rows = evaluate(scene, data, o.render.config<double>(),
                               o.split == "train" ? Split::train : Split::test, o.supersample);
    const std::string csv = eval_csv(rows);
    if (o.out.empty() || o.out == "-") {
        std::cout << csv;
    } else {
        std::ofstream f(o.out);
        if (!f)
            throw DataError("cannot write " + o.out);
        f << csv;
    }
    return kExitOk;
}

// --------------------------------------------------------------- gradcheck

struct GradcheckOptions {
    std::string scene, data;
    double h = 1e-5;
    int samples = 200;
    int camera_index = 0;
    std::uint64_t seed = 0;
    double tol = 1e-4;
    RenderFlags render;
};

inline int run_gradcheck(const GradcheckOptions& o)
{
    const Dataset data = load_dataset(o.data);
    if (o.camera_index < 0 || static_cast<std::size_t>(o.camera_index) >= data.views.size())
        throw UsageError("--camera-index out of range");
    if (!(o.h > 0.0) || o.samples < 1)
        throw UsageError("--h and --samples must be positive");
    Scene<double> scene = load_scene<double>(o.scene);
    const auto cfg = o.render.config<double>();
    prepare_scene(scene, cfg, data.manifest);
    const auto& view = data.views[o.camera_index];
    const FdReport rep = fd_check(scene, view.camera, cfg, squared_error_loss(view.image), o.h,
                                  static_cast<std::size_t>(o.samples), o.seed, o.tol);
    std::cout << "group,sampled,excluded,passed,max_rel_error\n";
    for (std::size_t g = 0; g < kParamGroupCount; ++g) {
        const auto& s = rep.groups[g];
        std::cout << kParamGroupNames[g] << "," << s.sampled << "," << s.excluded << "," << s.passed << ","
                  << fmt(s.max_rel_error, 10) << "\n";
    }
    std::cout << "pass_fraction " << fmt(rep.pass_fraction(), 4) << ", excluded_fraction "
              << fmt(rep.excluded_fraction(), 4) << "\n";
    return kExitOk;
}

}  // namespace cli_detail

/// Entry point of the lodgs tool.
inline int cli_main(int argc, const char* const* argv)
{
    using namespace cli_detail;
    CLI::App app{"Level-of-detail Gaussian splatting toolkit"};
    app.require_subcommand(1);

    GenerateOptions gen;
    auto* g = app.add_subcommand("generate", "synthesize a toy dataset with ground truth");
    g->add_option("--kind", gen.kind, "scene kind")->check(CLI::IsMember(keys(kKind)));
    g->add_option("--n", gen.n, "scene size parameter");
    g->add_option("--views", gen.views, "cameras per orbit");
    g->add_option("--scales", gen.scales, "downscale factors, e.g. 1,2,4,8")->delimiter(',');
    g->add_option("--levels", gen.levels, "three orbit radii in scene extents, e.g. 2,4,8")->delimiter(',');
    g->add_option("--out", gen.out, "output directory")->required();
    g->add_option("--seed", gen.seed);
    g->add_option("--resolution", gen.resolution, "full-scale image size");
    g->add_option("--focal", gen.focal, "full-scale focal length in pixels (default: resolution)");
    g->add_option("--radius", gen.radius, "multi-scale orbit radius in scene extents");
    g->add_option("--elevation", gen.elevation, "orbit elevation in degrees");
    g->add_option("--ss", gen.ss, "supersampling factor of the ground truth");
    g->add_option("--basis", gen.basis, "LOD basis size written to the scene files");
    g->add_option("--init-position-noise", gen.init_position_noise, "init scene noise, fraction of extent");
    g->add_option("--init-color-noise", gen.init_color_noise, "init scene color noise");

    TrainOptions tr;
    auto* t = app.add_subcommand("train", "optimize a scene against a dataset");
    t->add_option("--data", tr.data, "manifest")->required();
    t->add_option("--init", tr.init, "initial scene")->required();
    t->add_option("--out", tr.out, "output scene")->required();
    t->add_option("--iters", tr.iters)->check(CLI::NonNegativeNumber);
    t->add_option("--seed", tr.seed);
    t->add_option("--precision", tr.precision)->check(CLI::IsMember({"f32", "f64"}));
    t->add_option("--lambda", tr.lambda, "D-SSIM weight");
    t->add_option("--prune-interval", tr.prune_interval)->check(CLI::NonNegativeNumber);
    t->add_option("--prune-threshold", tr.prune_threshold);
    t->add_option("--basis", tr.basis, "reinitialize the LOD basis with this many components");
    t->add_option("--history", tr.history, "loss history CSV");
    t->add_option("--eval-interval", tr.eval_interval, "held-out PSNR every N iterations");
    tr.render.add(t, true);
    std::map<std::string, double> lr_values;
    const std::vector<std::string> lr_names = {"position", "rotation",  "log-scales",  "opacity",
                                               "color",    "lod-weights", "lod-centers", "lod-widths"};
    for (const auto& name : lr_names)
        t->add_option_function<double>(
            "--lr-" + name, [&lr_values, name](double v) { lr_values[name] = v; }, "learning rate");

    RenderOptions rn;
    auto* r = app.add_subcommand("render", "render one manifest camera");
    r->add_option("--scene", rn.scene)->required();
    r->add_option("--data", rn.data, "manifest")->required();
    r->add_option("--camera-index", rn.camera_index);
    r->add_option("--out", rn.out, ".pfm or .ppm")->required();
    r->add_option("--supersample", rn.supersample, "render the supersampling oracle at this factor");
    rn.render.add(r, true);

    EvalOptions ev;
    auto* e = app.add_subcommand("eval", "per-scale or per-level PSNR/SSIM table");
    e->add_option("--scene", ev.scene)->required();
    e->add_option("--data", ev.data, "manifest")->required();
    e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "test"}));
    e->add_option("--out", ev.out, "CSV path, - for stdout");
    e->add_option("--supersample", ev.supersample, "evaluate the supersampling oracle at this factor");
    ev.render.add(e, true);

    GradcheckOptions gc;
    auto* c = app.add_subcommand("gradcheck", "compare analytic and central-difference gradients");
    c->set_help_flag("--help", "print this help message and exit");
    c->add_option("--scene", gc.scene)->required();
    c->add_option("--data", gc.data, "manifest")->required();
    c->add_option("--h", gc.h);
    c->add_option("--samples", gc.samples);
    c->add_option("--camera-index", gc.camera_index);
    c->add_option("--seed", gc.seed);
    c->add_option("--tol", gc.tol);
    gc.render.add(c, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*g)
            return run_generate(gen);
        if (*t) {
            tr.lr = lr_values;
            return run_train(tr);
        }
        if (*r)
            return run_render(rn);
        if (*e)
            return run_eval(ev);
        if (*c)
            return run_gradcheck(gc);
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace lodgs
