#include "aau/stereo_io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace aau {

namespace {

constexpr std::int64_t kMaxPixels = 1 << 26; // parser guard against absurd headers

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "io-error", "cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "io-error", "cannot write " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(f.good(), "io-error", "short write to " + path);
}

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

// PNM-style token scan: skips whitespace and '#' comments.
bool next_token(const std::string& s, std::size_t& pos, std::string& tok) {
    while (pos < s.size()) {
        if (is_ws(s[pos])) {
            ++pos;
        } else if (s[pos] == '#') {
            while (pos < s.size() && s[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    if (pos >= s.size()) return false;
    tok.clear();
    while (pos < s.size() && !is_ws(s[pos])) tok.push_back(s[pos++]);
    return true;
}

std::int64_t parse_dim(const std::string& tok) {
    if (tok.empty() || tok.size() > 9) fail("bad-header", "unparseable dimension '" + tok + "'");
    std::int64_t v = 0;
    for (char c : tok) {
        if (c < '0' || c > '9') fail("bad-header", "unparseable dimension '" + tok + "'");
        v = v * 10 + (c - '0');
    }
    require(v > 0, "bad-header", "dimension must be positive");
    return v;
}

float load_f32(const char* p, bool big_endian) {
    unsigned char b[4];
    std::memcpy(b, p, 4);
    if (big_endian) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
    float f;
    std::memcpy(&f, b, 4);
    return f;
}

} // namespace

// ---------------------------------------------------------------------------
// PFM

void pfm_write(const std::string& path, const TensorF& data) {
    require(data.rank() == 2 || (data.rank() == 3 && data.dim(2) == 3), "shape-mismatch",
            "pfm_write expects (H,W) or (H,W,3)");
    const bool color = data.rank() == 3;
    const std::int64_t H = data.dim(0), W = data.dim(1);
    const std::int64_t ch = color ? 3 : 1;
    std::string out;
    out += color ? "PF" : "Pf";
    out += "\n" + std::to_string(W) + " " + std::to_string(H) + "\n-1.0\n";
    // rows bottom-to-top
    for (std::int64_t y = H - 1; y >= 0; --y) {
        for (std::int64_t x = 0; x < W * ch; ++x) {
            const float f = static_cast<float>(data[(y * W * ch) + x]);
            char b[4];
            std::memcpy(b, &f, 4);
            out.append(b, 4);
        }
    }
    write_file(path, out);
}

TensorF pfm_parse(const std::string& bytes) {
    std::size_t pos = 0;
    std::string tok;
    require(next_token(bytes, pos, tok), "bad-magic", "empty PFM stream");
    bool color;
    if (tok == "PF") {
        color = true;
    } else if (tok == "Pf") {
        color = false;
    } else {
        fail("bad-magic", "not a PFM stream (magic '" + tok + "')");
    }
    require(next_token(bytes, pos, tok), "bad-header", "missing width");
    const std::int64_t W = parse_dim(tok);
    require(next_token(bytes, pos, tok), "bad-header", "missing height");
    const std::int64_t H = parse_dim(tok);
    require(next_token(bytes, pos, tok), "bad-header", "missing scale");
    double scale = 0.0;
    try {
        std::size_t used = 0;
        scale = std::stod(tok, &used);
        require(used == tok.size(), "bad-header", "unparseable scale '" + tok + "'");
    } catch (const Error&) {
        throw;
    } catch (...) {
        fail("bad-header", "unparseable scale '" + tok + "'");
    }
    require(scale != 0.0 && std::isfinite(scale), "bad-header", "scale must be finite non-zero");
    const bool big_endian = scale > 0.0;
    const std::int64_t ch = color ? 3 : 1;
    require(H * W <= kMaxPixels, "bad-header", "image dimensions too large");
    // exactly one whitespace byte separates the header from the raster
    const std::size_t data_start = pos;
    const std::int64_t need = H * W * ch * 4;
    require(static_cast<std::int64_t>(bytes.size()) - static_cast<std::int64_t>(data_start) >= need,
            "truncated", "PFM payload smaller than header promises");

    TensorF out(color ? Shape{H, W, 3} : Shape{H, W});
    for (std::int64_t y = 0; y < H; ++y) {
        const std::int64_t src_row = H - 1 - y; // stored bottom-to-top
        const char* p = bytes.data() + data_start + src_row * W * ch * 4;
        for (std::int64_t x = 0; x < W * ch; ++x)
            out[y * W * ch + x] = static_cast<double>(load_f32(p + x * 4, big_endian));
    }
    return out;
}

TensorF pfm_read(const std::string& path) { return pfm_parse(read_file(path)); }

// ---------------------------------------------------------------------------
// PPM / PGM

namespace {

std::string pnm_serialize(const TensorF& img, bool color) {
    const std::int64_t H = img.dim(0), W = img.dim(1);
    const std::int64_t ch = color ? 3 : 1;
    std::string out;
    out += color ? "P6" : "P5";
    out += "\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    for (std::int64_t i = 0; i < H * W * ch; ++i) {
        const double v = std::round(img[i] * 255.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::min(255.0, std::max(0.0, v)))));
    }
    return out;
}

} // namespace

void ppm_write(const std::string& path, const TensorF& image) {
    require(image.rank() == 3 && image.dim(2) == 3, "shape-mismatch", "ppm_write expects (H,W,3)");
    write_file(path, pnm_serialize(image, true));
}

void pgm_write(const std::string& path, const TensorF& gray) {
    require(gray.rank() == 2, "shape-mismatch", "pgm_write expects (H,W)");
    write_file(path, pnm_serialize(gray, false));
}

TensorF pnm_parse(const std::string& bytes) {
    std::size_t pos = 0;
    std::string tok;
    require(next_token(bytes, pos, tok), "bad-magic", "empty PNM stream");
    bool color;
    if (tok == "P6") {
        color = true;
    } else if (tok == "P5") {
        color = false;
    } else {
        fail("bad-magic", "not a binary PNM stream (magic '" + tok + "')");
    }
    require(next_token(bytes, pos, tok), "bad-header", "missing width");
    const std::int64_t W = parse_dim(tok);
    require(next_token(bytes, pos, tok), "bad-header", "missing height");
    const std::int64_t H = parse_dim(tok);
    require(next_token(bytes, pos, tok), "bad-header", "missing maxval");
    const std::int64_t maxval = parse_dim(tok);
    require(maxval == 255, "unsupported-maxval", "only maxval 255 is supported, got " + tok);
    require(H * W <= kMaxPixels, "bad-header", "image dimensions too large");
    const std::int64_t ch = color ? 3 : 1;
    const std::size_t data_start = pos;
    require(static_cast<std::int64_t>(bytes.size()) - static_cast<std::int64_t>(data_start) >= H * W * ch,
            "truncated", "PNM payload smaller than header promises");

    TensorF out(color ? Shape{H, W, 3} : Shape{H, W});
    for (std::int64_t i = 0; i < H * W * ch; ++i)
        out[i] = static_cast<double>(static_cast<unsigned char>(bytes[data_start + static_cast<std::size_t>(i)])) / 255.0;
    return out;
}

TensorF ppm_read(const std::string& path) {
    TensorF t = pnm_parse(read_file(path));
    if (t.rank() == 3) return t;
    // replicate gray to 3 channels
    const std::int64_t H = t.dim(0), W = t.dim(1);
    TensorF out(Shape{H, W, 3});
    for (std::int64_t i = 0; i < H * W; ++i)
        out[i * 3] = out[i * 3 + 1] = out[i * 3 + 2] = t[i];
    return out;
}

TensorF pgm_read(const std::string& path) {
    TensorF t = pnm_parse(read_file(path));
    require(t.rank() == 2, "bad-magic", "expected a P5 stream in " + path);
    return t;
}

// ---------------------------------------------------------------------------
// Random-dot stereogram

void RdsSpec::validate() const {
    require(h >= 1 && w >= 1, "bad-config", "RDS dims must be positive");
    require(d_background >= 0, "bad-config", "background disparity must be >= 0");
    require(d_foreground >= d_background, "bad-config", "foreground disparity must be >= background");
    require(d_foreground < w / 4, "bad-config", "disparity too large for image width");
    require(x0 >= 0 && y0 >= 0 && x1 > x0 && y1 > y0 && x1 <= w && y1 <= h, "bad-config",
            "foreground rectangle must lie inside the image");
}

StereoSample synth_rds(const RdsSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::int64_t H = spec.h, W = spec.w;

    StereoSample s;
    s.name = "rds";
    s.left = TensorF(Shape{H, W, 3});
    s.right = TensorF(Shape{H, W, 3});
    s.d_gt = TensorF(Shape{H, W});
    s.occ_gt = TensorF(Shape{H, W});

    auto in_rect = [&](std::int64_t x, std::int64_t y) {
        return x >= spec.x0 && x < spec.x1 && y >= spec.y0 && y < spec.y1;
    };

    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
            const double g = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
            for (int c = 0; c < 3; ++c) s.left.at(y, x, c) = g;
            s.d_gt.at(y, x) = static_cast<double>(in_rect(x, y) ? spec.d_foreground : spec.d_background);
        }

    // forward warp with z-ordering: larger disparity (nearer) wins
    for (std::int64_t y = 0; y < H; ++y) {
        std::vector<std::int64_t> winner(static_cast<std::size_t>(W), -1); // disparity of source
        for (std::int64_t x = 0; x < W; ++x) {
            const auto d = static_cast<std::int64_t>(s.d_gt.at(y, x));
            const std::int64_t xr = x - d;
            if (xr < 0) {
                s.occ_gt.at(y, x) = 1.0;
                continue;
            }
            if (d > winner[static_cast<std::size_t>(xr)]) winner[static_cast<std::size_t>(xr)] = d;
        }
        for (std::int64_t x = 0; x < W; ++x) {
            const auto d = static_cast<std::int64_t>(s.d_gt.at(y, x));
            const std::int64_t xr = x - d;
            if (xr < 0) continue;
            if (winner[static_cast<std::size_t>(xr)] == d) {
                for (int c = 0; c < 3; ++c) s.right.at(y, xr, c) = s.left.at(y, x, c);
            } else {
                s.occ_gt.at(y, x) = 1.0; // covered by a nearer pixel
            }
        }
        // right-view holes get fresh noise
        std::vector<bool> filled(static_cast<std::size_t>(W), false);
        for (std::int64_t x = 0; x < W; ++x) {
            const auto d = static_cast<std::int64_t>(s.d_gt.at(y, x));
            const std::int64_t xr = x - d;
            if (xr >= 0 && winner[static_cast<std::size_t>(xr)] == d) filled[static_cast<std::size_t>(xr)] = true;
        }
        for (std::int64_t x = 0; x < W; ++x)
            if (!filled[static_cast<std::size_t>(x)]) {
                const double g = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
                for (int c = 0; c < 3; ++c) s.right.at(y, x, c) = g;
            }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Affine warp

TensorF apply_affine(const TensorF& image, const std::array<double, 6>& m) {
    require(image.rank() == 3 || image.rank() == 2, "shape-mismatch",
            "apply_affine expects (H,W) or (H,W,C)");
    const std::int64_t H = image.dim(0), W = image.dim(1);
    const std::int64_t C = image.rank() == 3 ? image.dim(2) : 1;
    const double det = m[0] * m[4] - m[1] * m[3];
    require(std::abs(det) > 1e-12, "singular-affine", "affine 2x2 part is singular");
    const double ia = m[4] / det, ib = -m[1] / det, ic = -m[3] / det, id = m[0] / det;

    TensorF out(image.shape);
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
            const double rx = static_cast<double>(x) - m[2];
            const double ry = static_cast<double>(y) - m[5];
            const double sx = ia * rx + ib * ry;
            const double sy = ic * rx + id * ry;
            const auto x0 = static_cast<std::int64_t>(std::floor(sx));
            const auto y0 = static_cast<std::int64_t>(std::floor(sy));
            const double fx = sx - static_cast<double>(x0);
            const double fy = sy - static_cast<double>(y0);
            for (std::int64_t c = 0; c < C; ++c) {
                auto sample = [&](std::int64_t yy, std::int64_t xx) -> double {
                    if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
                    return image[(yy * W + xx) * C + c];
                };
                const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                                 fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
                out[(y * W + x) * C + c] = v;
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset directory layout

void save_sample(const std::string& dir, const StereoSample& s) {
    std::filesystem::create_directories(dir);
    ppm_write(dir + "/left.ppm", s.left);
    ppm_write(dir + "/right.ppm", s.right);
    if (s.d_gt.numel()) pfm_write(dir + "/disp.pfm", s.d_gt);
    if (s.occ_gt.numel()) pgm_write(dir + "/occ.pgm", s.occ_gt);
}

StereoSample load_sample(const std::string& dir) {
    StereoSample s;
    s.name = std::filesystem::path(dir).filename().string();
    require(std::filesystem::exists(dir + "/left.ppm") && std::filesystem::exists(dir + "/right.ppm"),
            "io-error", "sample directory " + dir + " is missing left.ppm/right.ppm");
    s.left = ppm_read(dir + "/left.ppm");
    s.right = ppm_read(dir + "/right.ppm");
    if (std::filesystem::exists(dir + "/disp.pfm")) s.d_gt = pfm_read(dir + "/disp.pfm");
    if (std::filesystem::exists(dir + "/occ.pgm")) {
        TensorF occ = pgm_read(dir + "/occ.pgm");
        for (auto& v : occ.data) v = v > 0.5 ? 1.0 : 0.0;
        s.occ_gt = std::move(occ);
    }
    return s;
}

} // namespace aau
