#include "dgad/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dgad/ops.hpp"
#include "dgad/rng.hpp"

namespace fs = std::filesystem;

namespace dgad {

// ---------------------------------------------------------------------------
// object spec
// ---------------------------------------------------------------------------

bool ObjectSpec::contains(double u, double v) const {
    if (is_ellipse) {
        const double a = u / ex, b = v / ey;
        return a * a + b * b <= 1.0;
    }
    const std::size_t n = verts.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p0 = verts[i];
        const auto& p1 = verts[(i + 1) % n];
        const double cross = (p1[0] - p0[0]) * (v - p0[1]) - (p1[1] - p0[1]) * (u - p0[0]);
        if (cross < 0.0) return false;  // CCW polygon
    }
    return true;
}

std::array<double, 3> ObjectSpec::color_at(double u, double v) const {
    const double c = std::cos(tex_angle), s = std::sin(tex_angle);
    const double tu = c * u + s * v;
    const double tv = -s * u + c * v;
    long long k;
    if (is_stripes) {
        k = static_cast<long long>(std::floor(tu * tex_freq + tex_phase));
    } else {
        k = static_cast<long long>(std::floor(tu * tex_freq + tex_phase)) +
            static_cast<long long>(std::floor(tv * tex_freq + tex_phase));
    }
    return (k % 2 + 2) % 2 == 0 ? color_a : color_b;
}

void ObjectSpec::extents(double theta, double& hx, double& hy) const {
    const double c = std::cos(theta), s = std::sin(theta);
    if (is_ellipse) {
        hx = std::sqrt(ex * ex * c * c + ey * ey * s * s);
        hy = std::sqrt(ex * ex * s * s + ey * ey * c * c);
        return;
    }
    hx = 0.0;
    hy = 0.0;
    for (const auto& p : verts) {
        const double rx = c * p[0] - s * p[1];
        const double ry = s * p[0] + c * p[1];
        hx = std::max(hx, std::fabs(rx));
        hy = std::max(hy, std::fabs(ry));
    }
}

void DataCfg::validate() const {
    if (image_size < 8 || image_size % 4 != 0)
        throw std::invalid_argument("data: image_size must be a multiple of 4, >= 8");
    if (box_min < 4 || box_max <= box_min || box_max > image_size)
        throw std::invalid_argument("data: bad box size range");
    const double max_area = static_cast<double>(box_max) * box_max;
    if (max_area > 0.6 * image_size * image_size)
        throw std::invalid_argument("data: box_max violates the 60% area bound");
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLoose = 1.2;        // box area >= kLoose * transformed bbox area
constexpr double kMargin = 1.5;       // silhouette stays this far inside the box
constexpr double kNaturalScale = 20.0;  // object canvas pixels per unit
constexpr double kCanvasGray = 0.82;

double loose_fit(const ObjectSpec& spec, double theta, int bw, int bh) {
    double hx, hy;
    spec.extents(theta, hx, hy);
    const double margin = std::min(kMargin, 0.25 * std::min(bw, bh));
    const double sq = std::sqrt(kLoose);
    const double kx = (bw / 2.0 - margin) / (hx * sq);
    const double ky = (bh / 2.0 - margin) / (hy * sq);
    return std::min(kx, ky);
}

// 4x4 supersampled evaluation of the transformed object over a pixel span.
// out must be [3,S,S]; only pixels inside the span are touched.
void splat_object(Tensor32& out, const ObjectSpec& spec, double cx, double cy, double theta,
                  double kappa, int x0, int y0, int x1, int y1) {
    const int s = out.dim(1);
    const double ct = std::cos(-theta), st = std::sin(-theta);
    for (int y = std::max(0, y0); y < std::min(s, y1); ++y)
        for (int x = std::max(0, x0); x < std::min(s, x1); ++x) {
            double acc[3] = {0, 0, 0};
            double cover = 0;
            for (int sy = 0; sy < 4; ++sy)
                for (int sx = 0; sx < 4; ++sx) {
                    const double px = x + (sx + 0.5) / 4.0;
                    const double py = y + (sy + 0.5) / 4.0;
                    const double dx = (px - cx) / kappa;
                    const double dy = (py - cy) / kappa;
                    const double u = ct * dx - st * dy;
                    const double v = st * dx + ct * dy;
                    if (!spec.contains(u, v)) continue;
                    const auto col = spec.color_at(u, v);
                    acc[0] += col[0];
                    acc[1] += col[1];
                    acc[2] += col[2];
                    cover += 1.0;
                }
            if (cover == 0.0) continue;
            for (int c = 0; c < 3; ++c) {
                float& dst = out.data[(static_cast<std::size_t>(c) * s + y) * s + x];
                dst = static_cast<float>(acc[c] / 16.0 + (1.0 - cover / 16.0) * dst);
            }
        }
}

std::array<double, 3> sample_object_color(SplitMix64& rng, int dominant) {
    std::array<double, 3> c{};
    for (int j = 0; j < 3; ++j)
        c[static_cast<std::size_t>(j)] = j == dominant ? rng.uniform(0.0, 0.9) : rng.uniform(-1.0, -0.3);
    return c;
}

ObjectSpec sample_object(SplitMix64& rng) {
    ObjectSpec spec;
    spec.is_ellipse = rng.uniform() < 0.5;
    spec.ex = 1.0;
    spec.ey = rng.uniform(0.45, 0.9);
    if (!spec.is_ellipse) {
        const int k = rng.uniform_int(5, 8);
        for (int i = 0; i < k; ++i) {
            const double jitter = rng.uniform(0.25, 0.75);
            const double a = 2.0 * kPi * (i + jitter) / k;
            spec.verts.push_back({spec.ex * std::cos(a), spec.ey * std::sin(a)});
        }
    }
    spec.is_stripes = rng.uniform() < 0.5;
    spec.tex_freq = rng.uniform(0.9, 1.8);
    spec.tex_phase = rng.uniform(0.0, 1.0);
    spec.tex_angle = rng.uniform(0.0, kPi);
    const int dom = rng.uniform_int(0, 2);
    spec.color_a = sample_object_color(rng, dom);
    for (int attempt = 0; attempt < 6; ++attempt) {
        spec.color_b = sample_object_color(rng, attempt < 3 ? dom : (dom + 1) % 3);
        double dist = 0;
        for (int j = 0; j < 3; ++j) dist += std::fabs(spec.color_a[static_cast<std::size_t>(j)] -
                                                      spec.color_b[static_cast<std::size_t>(j)]);
        if (dist >= 0.8) break;
    }
    return spec;
}

Tensor32 sample_background(SplitMix64& rng, int s) {
    // bilinear corner gradient plus low-frequency bicubic noise
    double corners[4][3];
    for (auto& corner : corners)
        for (double& ch : corner) ch = rng.uniform(0.35, 0.95);
    Tensor32 noise_grid({1, 3, 4, 4});
    for (auto& v : noise_grid.data) v = static_cast<float>(0.08 * rng.normal());
    Tensor32 noise = bicubic_resize(noise_grid, s, s);

    Tensor32 bg({3, s, s});
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double fy = (y + 0.5) / s, fx = (x + 0.5) / s;
            for (int c = 0; c < 3; ++c) {
                const double top = corners[0][c] * (1 - fx) + corners[1][c] * fx;
                const double bot = corners[2][c] * (1 - fx) + corners[3][c] * fx;
                double v = top * (1 - fy) + bot * fy +
                           noise.data[(static_cast<std::size_t>(c) * s + y) * s + x];
                bg.data[(static_cast<std::size_t>(c) * s + y) * s + x] =
                    static_cast<float>(std::min(1.0, std::max(-1.0, v)));
            }
        }
    return bg;
}

}  // namespace

CompositeSample generate_sample(std::uint64_t seed, const DataCfg& cfg) {
    cfg.validate();
    const int s = cfg.image_size;
    SplitMix64 rng(seed);

    CompositeSample out;
    out.seed = seed;
    out.spec = sample_object(rng);
    out.bg = sample_background(rng, s);

    double hx0, hy0;
    out.spec.extents(0.0, hx0, hy0);
    const double natural_kappa = kNaturalScale / std::max(hx0, hy0);

    if (cfg.force_identity) {
        out.theta_deg = 0.0;
        out.scale = 1.0;
        out.kappa = natural_kappa;
        const double sq = std::sqrt(kLoose);
        const int bw = 2 * static_cast<int>(std::ceil(out.kappa * hx0 * sq + 2.0));
        const int bh = 2 * static_cast<int>(std::ceil(out.kappa * hy0 * sq + 2.0));
        if (bw > s || bh > s) throw std::invalid_argument("data: identity box does not fit the image");
        out.box.x0 = rng.uniform_int(0, s - bw);
        out.box.y0 = rng.uniform_int(0, s - bh);
        out.box.x1 = out.box.x0 + bw;
        out.box.y1 = out.box.y0 + bh;
    } else {
        const int bw = rng.uniform_int(cfg.box_min, cfg.box_max);
        const int bh = rng.uniform_int(cfg.box_min, cfg.box_max);
        out.box.x0 = rng.uniform_int(0, s - bw);
        out.box.y0 = rng.uniform_int(0, s - bh);
        out.box.x1 = out.box.x0 + bw;
        out.box.y1 = out.box.y0 + bh;

        // The transform is a deterministic function of the observable box:
        // rotation follows the horizontal box position, scale follows the box
        // area. The model can therefore infer both from the mask alone, which
        // keeps pixel-space metrics meaningful while the loose box still
        // withholds the silhouette.
        const double bcx = 0.5 * (out.box.x0 + out.box.x1);
        const double rel = ((bcx - s / 2.0) / (s / 2.0)) / 0.7;
        out.theta_deg = 45.0 * std::min(1.0, std::max(-1.0, rel));
        const double amin = static_cast<double>(cfg.box_min) * cfg.box_min;
        const double amax = static_cast<double>(cfg.box_max) * cfg.box_max;
        const double t = (static_cast<double>(out.box.area()) - amin) / (amax - amin);
        out.scale = std::min(1.0, std::max(0.6, 0.6 + 0.4 * t));
        out.kappa = out.scale * loose_fit(out.spec, out.theta_deg * kPi / 180.0, bw, bh);
    }

    // object canvas: untransformed render centered at natural scale
    out.obj = Tensor32({3, s, s});
    std::fill(out.obj.data.begin(), out.obj.data.end(), static_cast<float>(kCanvasGray));
    splat_object(out.obj, out.spec, s / 2.0, s / 2.0, 0.0, natural_kappa, 0, 0, s, s);

    // target: background with the transformed object composited inside the box
    out.tgt = out.bg;
    const double bcx = 0.5 * (out.box.x0 + out.box.x1);
    const double bcy = 0.5 * (out.box.y0 + out.box.y1);
    splat_object(out.tgt, out.spec, bcx, bcy, out.theta_deg * kPi / 180.0, out.kappa, out.box.x0,
                 out.box.y0, out.box.x1, out.box.y1);
    return out;
}

Tensor32 render_untransformed_paste(const CompositeSample& sample, const DataCfg& cfg) {
    Tensor32 out = sample.bg;
    double kappa;
    if (cfg.force_identity) {
        kappa = sample.kappa;
    } else {
        kappa = loose_fit(sample.spec, 0.0, sample.box.width(), sample.box.height());
    }
    const double bcx = 0.5 * (sample.box.x0 + sample.box.x1);
    const double bcy = 0.5 * (sample.box.y0 + sample.box.y1);
    splat_object(out, sample.spec, bcx, bcy, 0.0, kappa, sample.box.x0, sample.box.y0,
                 sample.box.x1, sample.box.y1);
    return out;
}

// ---------------------------------------------------------------------------
// PPM / PGM
// ---------------------------------------------------------------------------

namespace {

struct PnmHeader {
    int w = 0, h = 0, maxval = 0;
    std::size_t payload_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& path, const std::string& blob, const char* magic) {
    std::size_t pos = 0;
    auto fail = [&](const std::string& why) {
        throw std::runtime_error(path + ": " + why + " at byte " + std::to_string(pos));
    };
    auto skip_space = [&] {
        while (pos < blob.size()) {
            if (std::isspace(static_cast<unsigned char>(blob[pos]))) {
                ++pos;
            } else if (blob[pos] == '#') {
                while (pos < blob.size() && blob[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() {
        skip_space();
        if (pos >= blob.size() || !std::isdigit(static_cast<unsigned char>(blob[pos])))
            fail("expected integer");
        int v = 0;
        while (pos < blob.size() && std::isdigit(static_cast<unsigned char>(blob[pos]))) {
            v = v * 10 + (blob[pos] - '0');
            ++pos;
        }
        return v;
    };

    if (blob.size() < 2 || blob[0] != magic[0] || blob[1] != magic[1]) fail("bad magic");
    pos = 2;
    PnmHeader h;
    h.w = read_int();
    h.h = read_int();
    h.maxval = read_int();
    if (h.maxval != 255) fail("unsupported maxval");
    if (pos >= blob.size() || !std::isspace(static_cast<unsigned char>(blob[pos])))
        fail("expected whitespace before payload");
    ++pos;
    h.payload_offset = pos;
    return h;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& blob) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open for write");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace

void write_ppm(const std::string& path, const Tensor32& image) {
    if (image.ndim() != 3 || image.dim(0) != 3) throw std::invalid_argument("write_ppm: expects [3,H,W]");
    const int h = image.dim(1), w = image.dim(2);
    std::string blob = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    blob.reserve(blob.size() + static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                blob.push_back(static_cast<char>(
                    quantize8(image.data[(static_cast<std::size_t>(c) * h + y) * w + x])));
    write_file(path, blob);
}

Tensor32 read_ppm(const std::string& path) {
    const std::string blob = read_file(path);
    const PnmHeader h = parse_pnm_header(path, blob, "P6");
    const std::size_t need = static_cast<std::size_t>(h.w) * h.h * 3;
    if (blob.size() - h.payload_offset < need)
        throw std::runtime_error(path + ": truncated payload at byte " + std::to_string(blob.size()));
    Tensor32 img({3, h.h, h.w});
    const unsigned char* p = reinterpret_cast<const unsigned char*>(blob.data() + h.payload_offset);
    for (int y = 0; y < h.h; ++y)
        for (int x = 0; x < h.w; ++x)
            for (int c = 0; c < 3; ++c)
                img.data[(static_cast<std::size_t>(c) * h.h + y) * h.w + x] =
                    dequantize8(p[(static_cast<std::size_t>(y) * h.w + x) * 3 + c]);
    return img;
}

void write_pgm(const std::string& path, const Tensor32& mask) {
    if (mask.ndim() != 3 || mask.dim(0) != 1) throw std::invalid_argument("write_pgm: expects [1,H,W]");
    const int h = mask.dim(1), w = mask.dim(2);
    std::string blob = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float v = mask.data[static_cast<std::size_t>(y) * w + x];
            const auto q = static_cast<unsigned char>(
                std::min(255.0f, std::max(0.0f, std::round(v * 255.0f))));
            blob.push_back(static_cast<char>(q));
        }
    write_file(path, blob);
}

Tensor32 read_pgm(const std::string& path) {
    const std::string blob = read_file(path);
    const PnmHeader h = parse_pnm_header(path, blob, "P5");
    const std::size_t need = static_cast<std::size_t>(h.w) * h.h;
    if (blob.size() - h.payload_offset < need)
        throw std::runtime_error(path + ": truncated payload at byte " + std::to_string(blob.size()));
    Tensor32 mask({1, h.h, h.w});
    const unsigned char* p = reinterpret_cast<const unsigned char*>(blob.data() + h.payload_offset);
    for (std::size_t i = 0; i < need; ++i) mask.data[i] = static_cast<float>(p[i]) / 255.0f;
    return mask;
}

// ---------------------------------------------------------------------------
// sample and manifest IO
// ---------------------------------------------------------------------------

void write_sample(const std::string& dir, const CompositeSample& sample) {
    fs::create_directories(dir);
    write_ppm(dir + "/obj.ppm", sample.obj);
    write_ppm(dir + "/bg.ppm", sample.bg);
    write_ppm(dir + "/tgt.ppm", sample.tgt);

    const int s = sample.bg.dim(1);
    Tensor32 mask({1, s, s});
    for (int y = sample.box.y0; y < sample.box.y1; ++y)
        for (int x = sample.box.x0; x < sample.box.x1; ++x)
            mask.data[static_cast<std::size_t>(y) * s + x] = 1.0f;
    write_pgm(dir + "/mask.pgm", mask);

    std::ostringstream meta;
    meta.precision(17);
    meta << "seed=" << sample.seed << '\n'
         << "box=" << sample.box.x0 << ',' << sample.box.y0 << ',' << sample.box.x1 << ','
         << sample.box.y1 << '\n'
         << "theta_deg=" << sample.theta_deg << '\n'
         << "scale=" << sample.scale << '\n'
         << "kappa=" << sample.kappa << '\n';
    write_file(dir + "/meta.txt", meta.str());
}

CompositeSample read_sample(const std::string& dir) {
    CompositeSample s;
    s.obj = read_ppm(dir + "/obj.ppm");
    s.bg = read_ppm(dir + "/bg.ppm");
    s.tgt = read_ppm(dir + "/tgt.ppm");

    const std::string meta = read_file(dir + "/meta.txt");
    std::istringstream ms(meta);
    std::string line;
    while (std::getline(ms, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "seed") {
            s.seed = std::stoull(val);
        } else if (key == "theta_deg") {
            s.theta_deg = std::stod(val);
        } else if (key == "scale") {
            s.scale = std::stod(val);
        } else if (key == "kappa") {
            s.kappa = std::stod(val);
        } else if (key == "box") {
            std::istringstream bs(val);
            std::string tok;
            int vals[4], i = 0;
            while (std::getline(bs, tok, ',') && i < 4) vals[i++] = std::stoi(tok);
            if (i != 4) throw std::runtime_error(dir + "/meta.txt: malformed box");
            s.box = {vals[0], vals[1], vals[2], vals[3]};
        }
    }
    return s;
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& name) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == name) out.push_back(&e);
    return out;
}

DatasetManifest build_dataset(int n, std::uint64_t seed, const std::string& out_dir, bool force,
                              const DataCfg& cfg) {
    if (n < 3) throw std::invalid_argument("build_dataset: need n >= 3 for non-empty splits");
    cfg.validate();
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
        throw std::runtime_error("build_dataset: output directory not empty (use force): " + out_dir);
    fs::create_directories(out_dir);

    const int n_val = std::max(1, n / 20);
    const int n_test = std::max(1, n / 20);
    const int n_train = n - n_val - n_test;

    DatasetManifest manifest;
    manifest.n = n;
    manifest.image_size = cfg.image_size;
    manifest.seed = seed;

    char idx_buf[16];
    for (int i = 0; i < n; ++i) {
        ManifestEntry e;
        e.index = i;
        e.seed = seed + static_cast<std::uint64_t>(i);
        e.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        std::snprintf(idx_buf, sizeof(idx_buf), "%06d", i);
        e.dir = e.split + "/" + idx_buf;
        write_sample(out_dir + "/" + e.dir, generate_sample(e.seed, cfg));
        manifest.entries.push_back(std::move(e));
    }

    std::ostringstream ms;
    ms << "format=dgad-manifest-v1\n"
       << "n=" << n << '\n'
       << "image_size=" << cfg.image_size << '\n'
       << "seed=" << seed << '\n'
       << "train=" << n_train << '\n'
       << "val=" << n_val << '\n'
       << "test=" << n_test << '\n';
    for (const auto& e : manifest.entries)
        ms << "sample idx=" << e.index << " split=" << e.split << " seed=" << e.seed
           << " dir=" << e.dir << '\n';
    write_file(out_dir + "/manifest.txt", ms.str());
    return manifest;
}

DatasetManifest read_manifest(const std::string& dataset_dir) {
    const std::string blob = read_file(dataset_dir + "/manifest.txt");
    std::istringstream is(blob);
    std::string line;
    DatasetManifest m;
    bool format_ok = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line.rfind("sample ", 0) == 0) {
            ManifestEntry e;
            std::istringstream ls(line.substr(7));
            std::string tok;
            while (ls >> tok) {
                const auto eq = tok.find('=');
                if (eq == std::string::npos)
                    throw std::runtime_error("manifest: malformed sample line: " + line);
                const std::string key = tok.substr(0, eq);
                const std::string val = tok.substr(eq + 1);
                if (key == "idx") e.index = std::stoi(val);
                else if (key == "split") e.split = val;
                else if (key == "seed") e.seed = std::stoull(val);
                else if (key == "dir") e.dir = val;
            }
            if (e.split.empty() || e.dir.empty())
                throw std::runtime_error("manifest: incomplete sample line: " + line);
            m.entries.push_back(std::move(e));
        } else {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw std::runtime_error("manifest: malformed line: " + line);
            const std::string key = line.substr(0, eq);
            const std::string val = line.substr(eq + 1);
            if (key == "format") format_ok = val == "dgad-manifest-v1";
            else if (key == "n") m.n = std::stoi(val);
            else if (key == "image_size") m.image_size = std::stoi(val);
            else if (key == "seed") m.seed = std::stoull(val);
        }
    }
    if (!format_ok) throw std::runtime_error("manifest: unknown format in " + dataset_dir);
    if (static_cast<int>(m.entries.size()) != m.n)
        throw std::runtime_error("manifest: entry count mismatch");
    return m;
}

std::uint64_t manifest_hash(const std::string& dataset_dir) {
    const std::string blob = read_file(dataset_dir + "/manifest.txt");
    return fnv1a(blob.data(), blob.size());
}

}  // namespace dgad
