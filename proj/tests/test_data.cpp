#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "dgad/data.hpp"

using namespace dgad;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("dgad_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string str() const { return path.string(); }
};

// Independent compositor: rasterizes the transformed object over the
// background with the same 4x4 supersample convention, written as one direct
// per-subsample loop.
Tensor32 reference_composite(const CompositeSample& s) {
    Tensor32 out = s.bg;
    const int size = s.bg.dim(1);
    const double theta = s.theta_deg * 3.14159265358979323846 / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cx = 0.5 * (s.box.x0 + s.box.x1);
    const double cy = 0.5 * (s.box.y0 + s.box.y1);
    for (int y = s.box.y0; y < s.box.y1; ++y)
        for (int x = s.box.x0; x < s.box.x1; ++x) {
            double rgb[3] = {0, 0, 0};
            int hits = 0;
            for (int sub = 0; sub < 16; ++sub) {
                const double px = x + ((sub % 4) + 0.5) / 4.0;
                const double py = y + ((sub / 4) + 0.5) / 4.0;
                // inverse rotation of the pixel offset
                const double dx = (px - cx) / s.kappa;
                const double dy = (py - cy) / s.kappa;
                const double u = ct * dx + st * dy;
                const double v = -st * dx + ct * dy;
                if (!s.spec.contains(u, v)) continue;
                const auto col = s.spec.color_at(u, v);
                rgb[0] += col[0];
                rgb[1] += col[1];
                rgb[2] += col[2];
                ++hits;
            }
            if (!hits) continue;
            for (int c = 0; c < 3; ++c) {
                float& dst = out.data[(static_cast<std::size_t>(c) * size + y) * size + x];
                dst = static_cast<float>(rgb[c] / 16.0 + (1.0 - hits / 16.0) * dst);
            }
        }
    return out;
}

}  // namespace

TEST_CASE("generate_sample deterministic and background-preserving") {
    DataCfg cfg;
    auto a = generate_sample(77, cfg);
    auto b = generate_sample(77, cfg);
    CHECK(a.obj.data == b.obj.data);
    CHECK(a.bg.data == b.bg.data);
    CHECK(a.tgt.data == b.tgt.data);
    CHECK(a.box.x0 == b.box.x0);
    CHECK(a.theta_deg == b.theta_deg);

    // outside the box the target is the background, bit for bit
    const int s = cfg.image_size;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                if (x >= a.box.x0 && x < a.box.x1 && y >= a.box.y0 && y < a.box.y1) continue;
                CHECK(a.tgt.data[(static_cast<std::size_t>(c) * s + y) * s + x] ==
                      a.bg.data[(static_cast<std::size_t>(c) * s + y) * s + x]);
            }
}

TEST_CASE("sample invariants: box bounds, area, transform ranges, looseness") {
    DataCfg cfg;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        auto s = generate_sample(seed, cfg);
        CHECK(s.box.x0 >= 0);
        CHECK(s.box.y0 >= 0);
        CHECK(s.box.x1 <= cfg.image_size);
        CHECK(s.box.y1 <= cfg.image_size);
        CHECK(s.box.area() >= 16);
        CHECK(s.box.area() <= 0.6 * cfg.image_size * cfg.image_size);
        CHECK(s.theta_deg >= -45.0);
        CHECK(s.theta_deg <= 45.0);
        CHECK(s.scale >= 0.6);
        CHECK(s.scale <= 1.0);

        // mask looseness: box area >= 1.2x the transformed bounding box
        double hx, hy;
        s.spec.extents(s.theta_deg * 3.14159265358979323846 / 180.0, hx, hy);
        const double bbox_area = (2.0 * s.kappa * hx) * (2.0 * s.kappa * hy);
        CHECK(static_cast<double>(s.box.area()) >= 1.2 * bbox_area);

        // silhouette strictly inside: the border ring of the box carries no
        // object (equals background)
        const int size = cfg.image_size;
        bool border_clean = true;
        for (int x = s.box.x0; x < s.box.x1; ++x)
            for (int y : {s.box.y0, s.box.y1 - 1})
                for (int c = 0; c < 3; ++c)
                    border_clean = border_clean &&
                                   s.tgt.data[(static_cast<std::size_t>(c) * size + y) * size + x] ==
                                       s.bg.data[(static_cast<std::size_t>(c) * size + y) * size + x];
        CHECK(border_clean);
    }
}

TEST_CASE("composite matches the independent reference compositor") {
    DataCfg cfg;
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        auto s = generate_sample(seed, cfg);
        auto ref = reference_composite(s);
        for (std::size_t i = 0; i < ref.numel(); ++i) {
            const int qa = quantize8(s.tgt.data[i]);
            const int qb = quantize8(ref.data[i]);
            CHECK(std::abs(qa - qb) <= 1);  // within one quantization step
        }
    }
}

TEST_CASE("identity transform equals a pure paste of the object canvas") {
    DataCfg cfg;
    cfg.force_identity = true;
    auto s = generate_sample(31337, cfg);
    CHECK(s.theta_deg == 0.0);
    CHECK(s.scale == 1.0);

    // box center aligns to the pixel grid with the canvas center, so the
    // composite equals pasting obj (through its alpha) at an integer offset
    const int size = cfg.image_size;
    const int off_x = (s.box.x0 + s.box.x1) / 2 - size / 2;
    const int off_y = (s.box.y0 + s.box.y1) / 2 - size / 2;
    auto ref = reference_composite(s);
    for (std::size_t i = 0; i < ref.numel(); ++i)
        CHECK(quantize8(ref.data[i]) == quantize8(s.tgt.data[i]));

    // pixels fully covered by the object match the canvas render exactly
    int compared = 0;
    for (int y = s.box.y0 + 1; y < s.box.y1 - 1; ++y)
        for (int x = s.box.x0 + 1; x < s.box.x1 - 1; ++x) {
            const int cy = y - off_y, cx = x - off_x;
            // use the canvas alpha proxy: the canvas pixel differs from the
            // gray background only where the object covers it; require the
            // 3x3 neighborhood on canvas to be non-gray to ensure full cover
            bool interior = true;
            for (int dy = -1; dy <= 1 && interior; ++dy)
                for (int dx = -1; dx <= 1 && interior; ++dx) {
                    bool gray = true;
                    for (int c = 0; c < 3; ++c)
                        gray = gray && std::fabs(s.obj.data[(static_cast<std::size_t>(c) * size + cy + dy) * size +
                                                            cx + dx] - 0.82f) < 1e-6f;
                    interior = !gray;
                }
            if (!interior) continue;
            for (int c = 0; c < 3; ++c)
                CHECK(s.tgt.data[(static_cast<std::size_t>(c) * size + y) * size + x] ==
                      s.obj.data[(static_cast<std::size_t>(c) * size + cy) * size + cx]);
            ++compared;
        }
    CHECK(compared > 50);
}

TEST_CASE("ppm round trip is lossless after quantization") {
    TempDir tmp;
    DataCfg cfg;
    auto s = generate_sample(5, cfg);
    const std::string path = tmp.str() + "/img.ppm";
    write_ppm(path, s.tgt);
    auto back = read_ppm(path);
    REQUIRE(back.shape == s.tgt.shape);
    for (std::size_t i = 0; i < back.numel(); ++i)
        CHECK(quantize8(back.data[i]) == quantize8(s.tgt.data[i]));
    // a second write is byte-identical
    write_ppm(tmp.str() + "/img2.ppm", back);
    std::ifstream a(path, std::ios::binary), b(tmp.str() + "/img2.ppm", std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}

TEST_CASE("pgm canonical fixture and truncation errors") {
    TempDir tmp;
    // hand-written 2x2 P5 fixture: payload bytes 0x00 0x7F 0x80 0xFF
    const std::string fixture = std::string("P5\n2 2\n255\n") + '\x00' + '\x7F' + '\x80' + '\xFF';
    const std::string path = tmp.str() + "/fix.pgm";
    {
        std::ofstream out(path, std::ios::binary);
        out.write(fixture.data(), static_cast<std::streamsize>(fixture.size()));
    }
    auto mask = read_pgm(path);
    REQUIRE(mask.shape == std::vector<int>({1, 2, 2}));
    CHECK(mask.data[0] == doctest::Approx(0.0f));
    CHECK(mask.data[1] == doctest::Approx(127.0f / 255.0f));
    CHECK(mask.data[2] == doctest::Approx(128.0f / 255.0f));
    CHECK(mask.data[3] == doctest::Approx(1.0f));

    // writing a binary mask reproduces canonical bytes
    Tensor32 m({1, 1, 2});
    m.data = {0.0f, 1.0f};
    m.shape = {1, 1, 2};
    write_pgm(tmp.str() + "/m.pgm", m);
    std::ifstream in(tmp.str() + "/m.pgm", std::ios::binary);
    std::string written((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(written == std::string("P5\n2 1\n255\n") + '\x00' + '\xFF');

    // truncated payload reports the byte offset and returns nothing
    const std::string trunc = fixture.substr(0, fixture.size() - 2);
    {
        std::ofstream out(tmp.str() + "/trunc.pgm", std::ios::binary);
        out.write(trunc.data(), static_cast<std::streamsize>(trunc.size()));
    }
    bool threw = false;
    try {
        (void)read_pgm(tmp.str() + "/trunc.pgm");
    } catch (const std::runtime_error& e) {
        threw = true;
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
    CHECK(threw);
    CHECK_THROWS_AS((void)read_ppm(path), std::runtime_error);  // P5 opened as P6
}

TEST_CASE("sample write/read round trip preserves metadata") {
    TempDir tmp;
    DataCfg cfg;
    auto s = generate_sample(99, cfg);
    write_sample(tmp.str() + "/s", s);
    auto back = read_sample(tmp.str() + "/s");
    CHECK(back.seed == s.seed);
    CHECK(back.box.x0 == s.box.x0);
    CHECK(back.box.y1 == s.box.y1);
    CHECK(back.theta_deg == doctest::Approx(s.theta_deg).epsilon(1e-6));
    CHECK(back.scale == doctest::Approx(s.scale).epsilon(1e-6));
    for (std::size_t i = 0; i < s.tgt.numel(); ++i)
        CHECK(quantize8(back.tgt.data[i]) == quantize8(s.tgt.data[i]));

    auto mask = read_pgm(tmp.str() + "/s/mask.pgm");
    for (int y = 0; y < cfg.image_size; ++y)
        for (int x = 0; x < cfg.image_size; ++x) {
            const bool inside = x >= s.box.x0 && x < s.box.x1 && y >= s.box.y0 && y < s.box.y1;
            CHECK(mask.data[static_cast<std::size_t>(y) * cfg.image_size + x] == (inside ? 1.0f : 0.0f));
        }
}

TEST_CASE("build_dataset splits, manifest round trip, reproducibility") {
    TempDir tmp;
    DataCfg cfg;
    auto manifest = build_dataset(20, 500, tmp.str() + "/d1", false, cfg);
    CHECK(manifest.split("train").size() == 18);
    CHECK(manifest.split("val").size() == 1);
    CHECK(manifest.split("test").size() == 1);

    auto parsed = read_manifest(tmp.str() + "/d1");
    CHECK(parsed.n == 20);
    CHECK(parsed.seed == 500);
    REQUIRE(parsed.entries.size() == 20);
    for (std::size_t i = 0; i < parsed.entries.size(); ++i) {
        CHECK(parsed.entries[i].index == manifest.entries[i].index);
        CHECK(parsed.entries[i].split == manifest.entries[i].split);
        CHECK(parsed.entries[i].seed == manifest.entries[i].seed);
        CHECK(parsed.entries[i].dir == manifest.entries[i].dir);
        CHECK(fs::exists(tmp.path / "d1" / parsed.entries[i].dir / "tgt.ppm"));
    }

    // byte-identical rebuild
    build_dataset(20, 500, tmp.str() + "/d2", false, cfg);
    CHECK(manifest_hash(tmp.str() + "/d1") == manifest_hash(tmp.str() + "/d2"));
    for (const auto& e : parsed.entries)
        for (const char* f : {"obj.ppm", "bg.ppm", "tgt.ppm", "mask.pgm", "meta.txt"}) {
            std::ifstream a(tmp.path / "d1" / e.dir / f, std::ios::binary);
            std::ifstream b(tmp.path / "d2" / e.dir / f, std::ios::binary);
            std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
            std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
            CHECK(sa == sb);
        }

    // refuses to clobber without force
    CHECK_THROWS_AS((void)build_dataset(5, 1, tmp.str() + "/d1", false, cfg), std::runtime_error);
    CHECK_NOTHROW((void)build_dataset(5, 1, tmp.str() + "/d1", true, cfg));
}

TEST_CASE("untransformed paste differs from rotated target") {
    DataCfg cfg;
    // find a sample with substantial rotation
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto s = generate_sample(seed, cfg);
        if (std::fabs(s.theta_deg) < 25.0) continue;
        auto paste = render_untransformed_paste(s, cfg);
        double diff = 0;
        for (std::size_t i = 0; i < paste.numel(); ++i)
            diff += std::fabs(static_cast<double>(paste.data[i]) - s.tgt.data[i]);
        CHECK(diff > 1.0);
        return;
    }
    FAIL("no rotated sample found in seed range");
}
