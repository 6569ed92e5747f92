// SPDX-License-Identifier: Apache-2.0
#pragma once

// On-disk formats: the binary scene file, PFM/PPM images and the JSON
// dataset manifest.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <boost/crc.hpp>
#include <json.hpp>

#include "lodgs/dataset.hpp"

namespace lodgs {

namespace io_detail {

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f32(std::vector<unsigned char>& buf, float v) { put_u32(buf, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(const unsigned char* p)
{
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::uint32_t crc32(const unsigned char* data, std::size_t n)
{
    boost::crc_32_type crc;
    crc.process_bytes(data, n);
    return crc.checksum();
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw DataError("write failed for " + path.string());
}

}  // namespace io_detail

// Scene file: "LODGS", u32 version, u32 K, u32 l, K records of (14 + 7l) f32,
// f32 nu_ref, u32 CRC-32 of every preceding byte. Little-endian throughout.
inline constexpr char kSceneMagic[5] = {'L', 'O', 'D', 'G', 'S'};
inline constexpr std::uint32_t kSceneVersion = 1;
inline constexpr std::size_t kSceneHeaderBytes = 5 + 3 * 4;
inline constexpr std::size_t kSceneFooterBytes = 2 * 4;

inline std::size_t scene_record_bytes(std::size_t l) { return (14 + 7 * l) * 4; }

template <typename T>
std::vector<unsigned char> encode_scene(const Scene<T>& scene)
{
    const std::size_t l = scene.basis_count();
    if (!scene.bases.empty() && scene.bases.size() != scene.size())
        throw DomainError("scene needs one basis per primitive or none");
    for (const auto& b : scene.bases)
        if (b.size() != l || !b.consistent())
            throw DomainError("all bases must have the same size");
    std::vector<unsigned char> buf;
    buf.reserve(kSceneHeaderBytes + scene.size() * scene_record_bytes(l) + kSceneFooterBytes);
    buf.insert(buf.end(), std::begin(kSceneMagic), std::end(kSceneMagic));
    io_detail::put_u32(buf, kSceneVersion);
    io_detail::put_u32(buf, static_cast<std::uint32_t>(scene.size()));
    io_detail::put_u32(buf, static_cast<std::uint32_t>(l));
    // for_each_param walks exactly the record layout.
    for_each_param([&](ParamGroup, const T& v) { io_detail::put_f32(buf, static_cast<float>(v)); }, scene);
    io_detail::put_f32(buf, static_cast<float>(scene.nu_ref));
    io_detail::put_u32(buf, io_detail::crc32(buf.data(), buf.size()));
    return buf;
}

template <typename T>
Scene<T> decode_scene(const std::vector<unsigned char>& buf)
{
    if (buf.size() < kSceneHeaderBytes + kSceneFooterBytes || std::memcmp(buf.data(), kSceneMagic, 5) != 0)
        throw DataError("not a scene file");
    const std::uint32_t version = io_detail::get_u32(buf.data() + 5);
    if (version != kSceneVersion)
        throw DataError("unsupported scene file version " + std::to_string(version));
    const std::size_t K = io_detail::get_u32(buf.data() + 9);
    const std::size_t l = io_detail::get_u32(buf.data() + 13);
    const std::size_t expected = kSceneHeaderBytes + K * scene_record_bytes(l) + kSceneFooterBytes;
    if (buf.size() != expected)
        throw DataError("scene file size does not match its header");
    const std::uint32_t stored = io_detail::get_u32(buf.data() + buf.size() - 4);
    if (stored != io_detail::crc32(buf.data(), buf.size() - 4))
        throw DataError("scene file checksum mismatch");

    Scene<T> scene;
    scene.primitives.resize(K);
    scene.bases.assign(K, make_initial_basis<T>(l));
    const unsigned char* p = buf.data() + kSceneHeaderBytes;
    for_each_param(
        [&](ParamGroup, T& v) {
            v = static_cast<T>(io_detail::get_f32(p));
            p += 4;
        },
        scene);
    scene.nu_ref = static_cast<T>(io_detail::get_f32(p));
    return scene;
}

template <typename T>
void save_scene(const std::filesystem::path& path, const Scene<T>& scene)
{
    io_detail::write_bytes(path, encode_scene(scene));
}

template <typename T>
Scene<T> load_scene(const std::filesystem::path& path)
{
    return decode_scene<T>(io_detail::read_bytes(path));
}

/// PFM, float32 little-endian, rows stored bottom to top.
template <typename T>
void write_pfm(const std::filesystem::path& path, const Image<T>& img)
{
    if (img.channels() != 3 && img.channels() != 1)
        throw DomainError("PFM needs 1 or 3 channels");
    std::string header = std::string(img.channels() == 3 ? "PF" : "Pf") + "\n" + std::to_string(img.width()) +
                         " " + std::to_string(img.height()) + "\n-1.0\n";
    std::vector<unsigned char> buf(header.begin(), header.end());
    for (int y = img.height() - 1; y >= 0; --y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                io_detail::put_f32(buf, static_cast<float>(img(x, y, c)));
    io_detail::write_bytes(path, buf);
}

template <typename T>
Image<T> read_pfm(const std::filesystem::path& path)
{
    const auto buf = io_detail::read_bytes(path);
    std::size_t pos = 0;
    auto token = [&] {
        while (pos < buf.size() && std::isspace(buf[pos]))
            ++pos;
        std::string t;
        while (pos < buf.size() && !std::isspace(buf[pos]))
            t.push_back(static_cast<char>(buf[pos++]));
        return t;
    };
    const std::string magic = token();
    if (magic != "PF" && magic != "Pf")
        throw DataError(path.string() + " is not a PFM file");
    const int channels = magic == "PF" ? 3 : 1;
    int w = 0, h = 0;
    double scale = 0.0;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        scale = std::stod(token());
    } catch (const std::exception&) {
        throw DataError("malformed PFM header in " + path.string());
    }
    ++pos;  // single whitespace before the raster
    if (w <= 0 || h <= 0 || scale >= 0.0)
        throw DataError("unsupported PFM header in " + path.string());
    const std::size_t need = static_cast<std::size_t>(w) * h * channels * 4;
    if (buf.size() < pos || buf.size() - pos != need)
        throw DataError("truncated PFM raster in " + path.string());
    Image<T> img(w, h, channels);
    const unsigned char* p = buf.data() + pos;
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c, p += 4)
                img(x, y, c) = static_cast<T>(io_detail::get_f32(p));
    return img;
}

/// 8-bit binary PPM preview, values clamped to [0, 1].
template <typename T>
void write_ppm(const std::filesystem::path& path, const Image<T>& img)
{
    std::string header = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    std::vector<unsigned char> buf(header.begin(), header.end());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = static_cast<double>(img(x, y, std::min(c, img.channels() - 1)));
                buf.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
            }
    io_detail::write_bytes(path, buf);
}

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline nlohmann::json manifest_to_json(const DatasetManifest& m)
{
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : m.views) {
        std::vector<double> w2c(16, 0.0);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c)
                w2c[4 * r + c] = v.camera.rotation(r, c);
            w2c[4 * r + 3] = v.camera.translation[r];
        }
        w2c[15] = 1.0;
        views.push_back({{"view", v.view},
                         {"scale", v.scale},
                         {"level", v.level},
                         {"split", to_string(v.split)},
                         {"image", v.image_path},
                         {"camera",
                          {{"world_to_camera", w2c},
                           {"fx", v.camera.fx},
                           {"fy", v.camera.fy},
                           {"cx", v.camera.cx},
                           {"cy", v.camera.cy},
                           {"width", v.camera.width},
                           {"height", v.camera.height},
                           {"near", v.camera.near}}}});
    }
    return {{"scene_extent", m.scene_extent}, {"nu_ref", m.nu_ref}, {"views", views}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j)
{
    DatasetManifest m;
    try {
        m.scene_extent = j.at("scene_extent").get<double>();
        m.nu_ref = j.at("nu_ref").get<double>();
        for (const auto& v : j.at("views")) {
            ViewRecord r;
            r.view = v.at("view").get<int>();
            r.scale = v.at("scale").get<int>();
            r.level = v.at("level").get<int>();
            const auto split = v.at("split").get<std::string>();
            if (split != "train" && split != "test")
                throw DataError("unknown split '" + split + "'");
            r.split = split == "train" ? Split::train : Split::test;
            r.image_path = v.at("image").get<std::string>();
            const auto& c = v.at("camera");
            const auto w2c = c.at("world_to_camera").get<std::vector<double>>();
            if (w2c.size() != 16)
                throw DataError("world_to_camera needs 16 values");
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b)
                    r.camera.rotation(a, b) = w2c[4 * a + b];
                r.camera.translation[a] = w2c[4 * a + 3];
            }
            r.camera.fx = c.at("fx").get<double>();
            r.camera.fy = c.at("fy").get<double>();
            r.camera.cx = c.at("cx").get<double>();
            r.camera.cy = c.at("cy").get<double>();
            r.camera.width = c.at("width").get<int>();
            r.camera.height = c.at("height").get<int>();
            r.camera.near = c.value("near", 0.01);
            if (!r.camera.valid())
                throw DataError("invalid camera for view " + std::to_string(r.view));
            m.views.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
    if (!(m.nu_ref > 0.0))
        throw DataError("manifest nu_ref must be positive");
    return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return manifest_from_json(j);
}

/// Writes manifest.json, images/*.pfm and matching *.ppm previews under `dir`.
inline void write_dataset(const std::filesystem::path& dir, const GeneratedDataset& ds, bool previews = true)
{
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const auto path = dir / ds.manifest.views[i].image_path;
        write_pfm(path, ds.images[i]);
        if (previews)
            write_ppm(std::filesystem::path(path).replace_extension(".ppm"), ds.images[i]);
    }
    std::ofstream out(dir / "manifest.json");
    if (!out)
        throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest_to_json(ds.manifest).dump(2) << "\n";
}

/// Loads every image of `manifest` (paths relative to `base_dir`) and checks
/// its size against the camera.
template <typename T>
std::vector<LoadedView<T>> load_views(const DatasetManifest& manifest, const std::filesystem::path& base_dir)
{
    std::vector<LoadedView<T>> out;
    for (const auto& v : manifest.views) {
        Image<T> img = read_pfm<T>(base_dir / v.image_path);
        if (img.width() != v.camera.width || img.height() != v.camera.height || img.channels() != 3)
            throw DataError(v.image_path + " does not match its camera size");
        out.push_back({v.camera.template cast<T>(), std::move(img), v.view, v.scale, v.level, v.split});
    }
    return out;
}

}  // namespace lodgs
