// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion. Optional arguments select
// criteria by number.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"

using namespace lodgs;
using namespace lodgs::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Training budgets and dataset settings.
constexpr int kAntialiasIters = 3000;
constexpr int kRecoveryIters = 2000;
constexpr int kDeterminismIters = 200;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string f(double v, int digits = 2)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string e(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const fs::path& workdir()
{
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "lodgs_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// cli_main with stdout swallowed.
int cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "lodgs");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream sink;
    auto* old = std::cout.rdbuf(sink.rdbuf());
    const int rc = cli_main(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old);
    return rc;
}

void must(int rc, const std::string& what)
{
    if (rc != 0)
        throw std::runtime_error(what + " exited with " + std::to_string(rc));
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// group value -> psnr; the avg row is keyed 0.
std::map<int, double> read_eval(const fs::path& csv)
{
    std::map<int, double> out;
    std::istringstream in(slurp(csv));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');)
            cells.push_back(c);
        if (cells.size() < 4)
            continue;
        out[cells[0] == "avg" ? 0 : std::stoi(cells[1])] = cells[3] == "inf" ? kPsnrIdentical : std::stod(cells[3]);
    }
    return out;
}

// Generates a dataset once per name.
fs::path dataset(const std::string& name, const std::vector<std::string>& args)
{
    const fs::path dir = workdir() / name;
    if (!fs::exists(dir / "manifest.json")) {
        std::vector<std::string> a = {"generate", "--out", dir.string()};
        a.insert(a.end(), args.begin(), args.end());
        must(cli(a), "generate " + name);
    }
    return dir;
}

fs::path checker_ms() { return dataset("checker_ms", {"--kind", "checker_plane", "--n", "16", "--seed", "3"}); }
fs::path checker_ml()
{
    return dataset("checker_ml", {"--kind", "checker_plane", "--n", "16", "--levels", "2,4,8", "--seed", "3"});
}

struct Method {
    std::string name;
    std::vector<std::string> flags;  // shared by train and eval
};

const std::vector<Method>& methods()
{
    static const std::vector<Method> m = {
        {"full", {}},
        {"mip", {"--mode3d", "mip"}},
        {"dilation", {"--mode3d", "none", "--ablation", "no_ewa"}},
    };
    return m;
}

fs::path trained(const fs::path& data, const Method& m, int iters)
{
    const fs::path out = data / (m.name + "_" + std::to_string(iters) + ".lodgs");
    if (!fs::exists(out)) {
        std::vector<std::string> a = {"train",   "--data", (data / "manifest.json").string(), "--init",
                                      (data / "init_scene.lodgs").string(), "--out", out.string(),
                                      "--iters", std::to_string(iters), "--seed", "1"};
        a.insert(a.end(), m.flags.begin(), m.flags.end());
        must(cli(a), "train " + m.name);
    }
    return out;
}

std::map<int, double> evaluate(const fs::path& data, const fs::path& scene, const std::vector<std::string>& flags,
                               const std::string& tag)
{
    const fs::path csv = data / (tag + ".csv");
    std::vector<std::string> a = {"eval", "--scene", scene.string(), "--data", (data / "manifest.json").string(),
                                  "--out", csv.string()};
    a.insert(a.end(), flags.begin(), flags.end());
    must(cli(a), "eval " + tag);
    return read_eval(csv);
}

// ---------------------------------------------------------------- criteria

Outcome gradient_correctness()
{
    const auto t0 = Clock::now();
    const auto s = random_scene(20, 2024, 4, true);
    const auto cam = front_camera(16);
    const RenderConfig<double> cfg;  // ewa + lod
    const auto rep = fd_check(s, cam, cfg, squared_error_loss(random_image(16, 16, 77)), 1e-5, 250, 5);
    const double secs = seconds_since(t0);
    std::size_t groups = 0;
    for (const auto& g : rep.groups)
        groups += g.sampled > 0;
    const bool ok = rep.sampled >= 200 && groups == kParamGroupCount && rep.pass_fraction() >= 0.95 &&
                    rep.excluded_fraction() < 0.05 && secs < 60.0;
    return {ok, std::to_string(rep.passed) + "/" + std::to_string(rep.checked()) + " within 1e-4 (" +
                    f(100 * rep.pass_fraction(), 1) + "%), " + std::to_string(rep.excluded) + " excluded (" +
                    f(100 * rep.excluded_fraction(), 1) + "%), " + std::to_string(groups) + "/10 groups, " +
                    f(secs, 2) + " s"};
}

Outcome partition_of_unity()
{
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto s = random_scene(40, 1000 + seed);
        for (auto& g : s.primitives)
            g.color.setOnes();
        for (auto& b : s.bases)
            std::fill(b.weights_color.begin(), b.weights_color.end(), 0.0);
        RenderConfig<double> cfg;
        cfg.background.setZero();
        const auto out = render(s, front_camera(24), cfg);
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x)
                worst = std::max(worst, std::abs(out.image(x, y, 0) + out.final_transmittance(x, y) - 1.0));
    }
    return {worst <= 1e-12, "max |sum w + T - 1| = " + e(worst) + " over 100 seeds"};
}

Outcome ewa_energy()
{
    GaussianPrimitive<double> g;
    g.log_scales.setConstant(std::log(0.06));
    g.opacity_logit = logit(0.8);
    g.color.setOnes();
    const auto s = make_scene<double>({g}, 0, 1.0);
    RenderConfig<double> ewa;
    ewa.mode_3d = Mode3D::none;
    auto dil = ewa;
    dil.mode_2d = Mode2D::dilation;
    const auto full = front_camera(64, 128.0);
    const auto quarter = full.scaled(0.25, 16, 16);
    const double de = alpha_mass(s, quarter, ewa) / alpha_mass(s, full, ewa) - 1.0;
    const double dd = alpha_mass(s, quarter, dil) / alpha_mass(s, full, dil) - 1.0;
    return {std::abs(de) < 0.05 && dd > 0.20,
            "alpha mass change at 1/4 res: ewa " + f(100 * de, 2) + "%, dilation " + f(100 * dd, 2) + "%"};
}

Outcome identity_ablation()
{
    double worst = 0.0;
    bool bits = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = random_scene(50, 500 + seed, 20, false);
        for (double focal : {10.0, 40.0, 160.0}) {
            const auto cam = front_camera(32, focal);
            RenderConfig<double> lod;
            auto none = lod;
            none.mode_3d = Mode3D::none;
            const auto a = render(s, cam, lod).image, b = render(s, cam, none).image;
            worst = std::max(worst, max_abs_diff(a, b));
            bits = bits && bit_equal(a, b);
        }
    }
    return {worst <= 1e-12, std::string(bits ? "bit-identical" : "not bit-identical") + ", max diff " + e(worst) +
                                " over 60 renders"};
}

Outcome antialiasing()
{
    const auto data = checker_ms();
    const auto t0 = Clock::now();
    const auto scene = trained(data, methods()[0], kAntialiasIters);
    const double secs = seconds_since(t0);
    const auto full = evaluate(data, scene, {}, "c5_full");
    const auto raw = evaluate(data, scene, {"--mode2d", "none", "--mode3d", "none"}, "c5_unfiltered");
    const double p = full.at(8), u = raw.at(8);
    return {p >= 30.0 && p >= u + 3.0, "scale-8 PSNR " + f(p) + " dB vs oracle, unfiltered " + f(u) + " dB (gap " +
                                           f(p - u) + "), " + std::to_string(kAntialiasIters) + " iters, " +
                                           f(secs, 0) + " s"};
}

Outcome ordering()
{
    std::string detail;
    bool ok = true;
    for (const auto& [label, data] : {std::pair{"multi-scale", checker_ms()}, std::pair{"multi-level", checker_ml()}}) {
        std::vector<double> avg;
        for (const auto& m : methods())
            avg.push_back(evaluate(data, trained(data, m, kAntialiasIters), m.flags, "c6_" + m.name).at(0));
        ok = ok && avg[0] > avg[1] && avg[1] > avg[2];
        detail += std::string(detail.empty() ? "" : "; ") + label + " full " + f(avg[0]) + " / mip " + f(avg[1]) +
                  " / dilation " + f(avg[2]) + " dB";
    }
    return {ok, detail};
}

Outcome recovery()
{
    const auto data = dataset("random_ms", {"--kind", "random", "--n", "64", "--seed", "5", "--scales", "1,2,4"});
    const auto t0 = Clock::now();
    const auto scene = trained(data, methods()[0], kRecoveryIters);
    const double secs = seconds_since(t0);
    const auto init = evaluate(data, data / "init_scene.lodgs", {}, "c7_init");
    const auto res = evaluate(data, scene, {}, "c7_trained");
    const double p = res.at(1);
    return {p >= 35.0 && secs < 600.0, "held-out scale-1 PSNR " + f(init.at(1)) + " -> " + f(p) + " dB after " +
                                           std::to_string(kRecoveryIters) + " iters, " + f(secs, 0) + " s"};
}

template <typename F>
double best_time(F&& fn, int reps)
{
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

Outcome complexity()
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Vec3<double>> pos(20000);
    for (auto& p : pos)
        p = {u(rng), u(rng), u(rng)};
    const auto cam = front_camera(64);
    volatile double sink = 0.0;
    auto pass = [&](std::size_t k) {
        return best_time(
            [&] {
                const auto r = sampling_rate_pass(cam, std::span<const Vec3<double>>(pos.data(), k));
                sink = sink + r.back();
            },
            200);
    };
    const double t1 = pass(10000), t2 = pass(20000);
    const double rk = t2 / t1;

    const auto cams = orbit_cameras(400, 4.0, 64.0, 64, 0.3);
    auto max_rates = [&](std::size_t n) {
        return best_time(
            [&] {
                double acc = 0.0;
                for (std::size_t k = 0; k < 2000; ++k)
                    acc += max_sampling_rate(pos[k], std::span<const Camera<double>>(cams.data(), n));
                sink = sink + acc;
            },
            15);
    };
    const double n1 = max_rates(100), n2 = max_rates(200), n4 = max_rates(400);
    const double rn1 = n2 / n1, rn2 = n4 / n2;
    const bool ok = rk >= 1.6 && rk <= 2.6 && rn1 >= 1.6 && rn1 <= 2.6 && rn2 >= 1.6 && rn2 <= 2.6;
    return {ok, "sampling_rate_pass t(2e4)/t(1e4) = " + f(rk) + "; max_sampling_rate t(200)/t(100) = " + f(rn1) +
                    ", t(400)/t(200) = " + f(rn2)};
}

Outcome metrics()
{
    const auto a = random_image(64, 48, 1), b = random_image(64, 48, 2);
    const double self = metric_ssim(a, a);
    auto noisy = a;
    std::mt19937_64 rng(9);
    const double delta = 0.04;
    std::uniform_real_distribution<double> u(-delta, delta);
    for (auto& v : noisy.data())
        v += u(rng);
    const double psnr = metric_psnr(a, noisy), closed = -10.0 * std::log10(delta * delta / 3.0);
    const auto c = random_image(16, 16, 3), d = random_image(16, 16, 4);
    const double oracle_gap = std::max(std::abs(metric_ssim(c, d) - ssim_direct(c, d)),
                                       std::abs(metric_ssim(a, b) - ssim_direct(a, b)));
    const bool ok = std::abs(self - 1.0) <= 1e-12 && std::abs(psnr - closed) < 0.1 && oracle_gap < 1e-8;
    return {ok, "SSIM(a,a) - 1 = " + e(self - 1.0) + ", noise PSNR " + f(psnr, 3) + " vs " + f(closed, 3) +
                    " dB, SSIM oracle gap " + e(oracle_gap)};
}

Outcome serialization()
{
    auto s = random_scene(40, 42, 20, true);
    round_to_float(s);
    const fs::path dir = workdir() / "serial";
    fs::create_directories(dir);
    save_scene(dir / "s.lodgs", s);
    const auto back = load_scene<double>(dir / "s.lodgs");
    bool exact = back.size() == s.size() && back.nu_ref == s.nu_ref;
    for_each_param([&](ParamGroup, const double& x, const double& y) { exact = exact && x == y; }, back, s);
    save_scene(dir / "t.lodgs", back);
    exact = exact && slurp(dir / "s.lodgs") == slurp(dir / "t.lodgs");

    const auto data = dataset("tiny", {"--kind", "ring", "--n", "8", "--views", "3", "--scales", "1", "--resolution",
                                       "16", "--ss", "2"});
    auto bytes = slurp(data / "gt_scene.lodgs");
    const int clean = cli({"eval", "--scene", (data / "gt_scene.lodgs").string(), "--data",
                           (data / "manifest.json").string(), "--out", (dir / "e.csv").string()});
    bytes[bytes.size() - 1] ^= 0x5a;
    std::ofstream(dir / "bad.lodgs", std::ios::binary) << bytes;
    std::ostringstream err;
    auto* old = std::cerr.rdbuf(err.rdbuf());
    const int rc = cli({"eval", "--scene", (dir / "bad.lodgs").string(), "--data", (data / "manifest.json").string(),
                        "--out", (dir / "e2.csv").string()});
    std::cerr.rdbuf(old);
    return {exact && clean == 0 && rc == kExitData,
            std::string(exact ? "round trip bit-exact" : "round trip differs") + ", corrupted checksum exit code " +
                std::to_string(rc)};
}

Outcome determinism()
{
    const auto data = checker_ms();
    auto run = [&](const std::string& tag, const std::string& threads) {
        const fs::path out = data / ("det_" + tag + ".lodgs"), hist = data / ("det_" + tag + ".csv");
        must(cli({"train", "--data", (data / "manifest.json").string(), "--init", (data / "init_scene.lodgs").string(),
                  "--out", out.string(), "--iters", std::to_string(kDeterminismIters), "--seed", "11", "--history",
                  hist.string(), "--eval-interval", "50", "--threads", threads}),
             "train " + tag);
        const fs::path ev = data / ("det_" + tag + "_eval.csv");
        must(cli({"eval", "--scene", out.string(), "--data", (data / "manifest.json").string(), "--out", ev.string(),
                  "--threads", threads}),
             "eval " + tag);
        return std::tuple{slurp(hist), slurp(ev), slurp(out)};
    };
    const auto a = run("a", "1"), b = run("b", "1"), c = run("c", "4");
    const bool same_ab = a == b, same_ac = a == c;
    return {same_ab && same_ac, std::string("repeat run ") + (same_ab ? "identical" : "differs") +
                                    ", 4-thread run " + (same_ac ? "identical" : "differs") +
                                    " (history, eval CSV, scene bytes)"};
}

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradient_correctness},
        {"partition of unity", partition_of_unity},
        {"EWA vs dilation energy", ewa_energy},
        {"identity ablation", identity_ablation},
        {"anti-aliasing vs supersampling oracle", antialiasing},
        {"ordering full > mip > dilation", ordering},
        {"recovery from perturbed scene", recovery},
        {"sampling-rate complexity", complexity},
        {"metrics self-consistency", metrics},
        {"serialization", serialization},
        {"determinism", determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i)
        only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id))
            continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& ex) {
            o = {false, std::string("error: ") + ex.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
