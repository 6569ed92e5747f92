// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace lodgs;
using namespace lodgs::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("lodgs_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(SceneFile, RoundTripIsBitExact)
{
    auto s = random_scene(17, 3, 5);
    round_to_float(s);
    const auto bytes = encode_scene(s);
    const auto back = decode_scene<double>(bytes);
    ASSERT_EQ(back.size(), s.size());
    EXPECT_EQ(back.nu_ref, s.nu_ref);
    for_each_param([](ParamGroup, const double& a, const double& b) { EXPECT_EQ(a, b); }, back, s);
    EXPECT_EQ(encode_scene(back), bytes);
    const auto f = decode_scene<float>(bytes);
    EXPECT_EQ(encode_scene(f), bytes);
}

TEST(SceneFile, SizeFollowsLayout)
{
    for (std::size_t l : {0u, 1u, 4u, 20u}) {
        const auto s = random_scene(9, 1, l, false);
        EXPECT_EQ(encode_scene(s).size(), 17u + 9u * (14 + 7 * l) * 4 + 8u);
    }
    EXPECT_EQ(encode_scene(Scene<double>{}).size(), 25u);
}

TEST(SceneFile, CorruptionIsDetected)
{
    const auto bytes = encode_scene(random_scene(5, 2, 3));
    for (std::size_t at : {std::size_t(0), std::size_t(6), std::size_t(40), bytes.size() - 6, bytes.size() - 1}) {
        auto bad = bytes;
        bad[at] ^= 0x10;
        EXPECT_THROW(decode_scene<double>(bad), DataError) << "byte " << at;
    }
    auto truncated = bytes;
    truncated.pop_back();
    EXPECT_THROW(decode_scene<double>(truncated), DataError);
    auto longer = bytes;
    longer.push_back(0);
    EXPECT_THROW(decode_scene<double>(longer), DataError);
    EXPECT_THROW(decode_scene<double>({}), DataError);
}

TEST(SceneFile, SaveAndLoad)
{
    const auto dir = scratch("scene");
    auto s = random_scene(6, 4, 2);
    round_to_float(s);
    save_scene(dir / "a.lodgs", s);
    const auto back = load_scene<double>(dir / "a.lodgs");
    EXPECT_EQ(encode_scene(back), encode_scene(s));
    EXPECT_THROW(load_scene<double>(dir / "missing.lodgs"), DataError);
}

TEST(Pfm, RoundTrip)
{
    const auto dir = scratch("pfm");
    auto img = random_image(7, 5, 3);
    img = img.cast<float>().cast<double>();
    write_pfm(dir / "c.pfm", img);
    EXPECT_EQ(read_pfm<double>(dir / "c.pfm"), img);
    EXPECT_EQ(fs::file_size(dir / "c.pfm"), std::string("PF\n7 5\n-1.0\n").size() + 7 * 5 * 3 * 4);
    auto gray = random_image(4, 6, 4, 1).cast<float>().cast<double>();
    write_pfm(dir / "g.pfm", gray);
    EXPECT_EQ(read_pfm<double>(dir / "g.pfm"), gray);
}

TEST(Pfm, BottomRowComesFirst)
{
    const auto dir = scratch("pfm_order");
    Image<double> img(1, 2, 1);
    img(0, 0) = 0.25;
    img(0, 1) = 0.75;
    write_pfm(dir / "o.pfm", img);
    std::ifstream f(dir / "o.pfm", std::ios::binary);
    std::string a, b, c;
    f >> a >> b >> c >> c;
    f.get();
    float first = 0.0f;
    f.read(reinterpret_cast<char*>(&first), 4);
    EXPECT_EQ(first, 0.75f);
}

TEST(Pfm, RejectsGarbage)
{
    const auto dir = scratch("pfm_bad");
    std::ofstream(dir / "x.pfm") << "P6\n2 2\n255\n";
    EXPECT_THROW(read_pfm<double>(dir / "x.pfm"), DataError);
    std::ofstream(dir / "y.pfm") << "PF\n4 4\n-1.0\n1234";
    EXPECT_THROW(read_pfm<double>(dir / "y.pfm"), DataError);
}

TEST(Manifest, JsonRoundTrip)
{
    const auto s = make_scene(build_toy_scene(SceneKind::ring, 6, 0), 0, 1.0);
    const auto ds = make_multiscale(orbit_cameras(3, 3.0, 16.0, 16, 0.4), s, {1, 2}, 1);
    const auto back = manifest_from_json(manifest_to_json(ds.manifest));
    ASSERT_EQ(back.views.size(), ds.manifest.views.size());
    EXPECT_EQ(back.nu_ref, ds.manifest.nu_ref);
    EXPECT_EQ(back.scene_extent, ds.manifest.scene_extent);
    for (std::size_t i = 0; i < back.views.size(); ++i) {
        const auto &a = back.views[i], &b = ds.manifest.views[i];
        EXPECT_EQ(a.camera.rotation, b.camera.rotation);
        EXPECT_EQ(a.camera.translation, b.camera.translation);
        EXPECT_EQ(a.camera.fx, b.camera.fx);
        EXPECT_EQ(a.camera.cx, b.camera.cx);
        EXPECT_EQ(a.camera.width, b.camera.width);
        EXPECT_EQ(a.scale, b.scale);
        EXPECT_EQ(a.split, b.split);
        EXPECT_EQ(a.image_path, b.image_path);
    }
}

TEST(Manifest, MalformedInput)
{
    EXPECT_THROW(manifest_from_json(nlohmann::json::parse("{}")), DataError);
    EXPECT_THROW(manifest_from_json(nlohmann::json::parse(R"({"views": 3, "nu_ref": 1, "scene_extent": 1})")),
                 DataError);
    EXPECT_THROW(manifest_from_json(nlohmann::json::parse(R"({"views": [], "nu_ref": -1, "scene_extent": 1})")),
                 DataError);
}

TEST(Dataset, WriteAndLoadViews)
{
    const auto dir = scratch("dataset");
    const auto s = make_scene(build_toy_scene(SceneKind::checker_plane, 4, 0), 0, 1.0);
    const auto ds = make_multiscale(orbit_cameras(2, 3.0, 16.0, 16, 0.4), s, {1, 4}, 2);
    write_dataset(dir, ds);
    EXPECT_TRUE(fs::exists(dir / "manifest.json"));
    const auto m = load_manifest(dir / "manifest.json");
    const auto views = load_views<double>(m, dir);
    ASSERT_EQ(views.size(), 4u);
    for (std::size_t i = 0; i < views.size(); ++i)
        EXPECT_EQ(views[i].image, ds.images[i].cast<float>().cast<double>());
    fs::remove(dir / ds.manifest.views[1].image_path);
    EXPECT_THROW(load_views<double>(m, dir), DataError);
}
