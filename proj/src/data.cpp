#include "dab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dab/rng.hpp"

namespace dab {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Canvas {
    float* pixels;
    int size;

    void plot(int x, int y) {
        if (x >= 0 && x < size && y >= 0 && y < size)
            pixels[y * size + x] = 1.0f;
    }
};

void draw_line(Canvas& c, double x0, double y0, double x1, double y1) {
    int ix0 = int(std::lround(x0)), iy0 = int(std::lround(y0));
    int ix1 = int(std::lround(x1)), iy1 = int(std::lround(y1));
    int dx = std::abs(ix1 - ix0), dy = -std::abs(iy1 - iy0);
    int sx = ix0 < ix1 ? 1 : -1, sy = iy0 < iy1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        c.plot(ix0, iy0);
        if (ix0 == ix1 && iy0 == iy1) break;
        int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            ix0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            iy0 += sy;
        }
    }
}

void draw_circle(Canvas& c, double cx, double cy, double radius) {
    int xc = int(std::lround(cx)), yc = int(std::lround(cy));
    int r = std::max(2, int(std::lround(radius)));
    int x = 0, y = r;
    int d = 3 - 2 * r;
    while (x <= y) {
        c.plot(xc + x, yc + y);
        c.plot(xc - x, yc + y);
        c.plot(xc + x, yc - y);
        c.plot(xc - x, yc - y);
        c.plot(xc + y, yc + x);
        c.plot(xc - y, yc + x);
        c.plot(xc + y, yc - x);
        c.plot(xc - y, yc - x);
        if (d < 0) {
            d += 4 * x + 6;
        } else {
            d += 4 * (x - y) + 10;
            --y;
        }
        ++x;
    }
}

void draw_polygon(Canvas& c, const std::vector<std::pair<double, double>>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto [x0, y0] = v[i];
        auto [x1, y1] = v[(i + 1) % v.size()];
        draw_line(c, x0, y0, x1, y1);
    }
}

std::pair<double, double> rotated(double x, double y, double angle) {
    double ca = std::cos(angle), sa = std::sin(angle);
    return {x * ca - y * sa, x * sa + y * ca};
}

void draw_sketch(Canvas& c, int class_id, std::mt19937& gen) {
    double s = c.size;
    // Jitter discipline: |offset| (<= 0.12s) plus the shape's largest vertex
    // distance from its center (<= 0.32s) stays under 0.45s, so strokes
    // never clip at the canvas edge even after rounding. Difficulty comes
    // from orientation, which is drawn over each shape's full symmetry
    // range; size ranges are kept tight so the per-class stroke budget is
    // a stable cue rather than another nuisance dimension.
    double cx = s / 2.0 + uniform_float(gen, -0.12f, 0.12f) * s;
    double cy = s / 2.0 + uniform_float(gen, -0.12f, 0.12f) * s;

    switch (class_id) {
        case 0: { // line: any orientation, length 0.48s..0.58s
            double angle = uniform_float(gen, 0.0f, float(kPi));
            double r = s * (0.24 + 0.05 * uniform_float(gen, 0.0f, 1.0f));
            auto [dx, dy] = rotated(r, 0.0, angle);
            draw_line(c, cx - dx, cy - dy, cx + dx, cy + dy);
            break;
        }
        case 1: { // circle: radius 0.20s..0.26s
            double r = s * (0.20 + 0.06 * uniform_float(gen, 0.0f, 1.0f));
            draw_circle(c, cx, cy, r);
            break;
        }
        case 2: { // rectangle: tilt spans 90 degrees, aspect drawn too
            double diag = s * (0.26 + 0.06 * uniform_float(gen, 0.0f, 1.0f));
            double aspect = 0.60 + 0.25 * uniform_float(gen, 0.0f, 1.0f);
            double tilt = uniform_float(gen, float(-kPi / 4), float(kPi / 4));
            double hw = diag / std::sqrt(1.0 + aspect * aspect);
            double hh = hw * aspect;
            std::vector<std::pair<double, double>> corners;
            for (auto [px, py] : {std::pair{-hw, -hh}, {hw, -hh},
                                  {hw, hh}, {-hw, hh}}) {
                auto [qx, qy] = rotated(px, py, tilt);
                corners.emplace_back(cx + qx, cy + qy);
            }
            draw_polygon(c, corners);
            break;
        }
        case 3: { // triangle: wide tilt, vertices individually pulled in/out
            double r = s * (0.22 + 0.05 * uniform_float(gen, 0.0f, 1.0f));
            double tilt = uniform_float(gen, float(-kPi / 3), float(kPi / 3));
            std::vector<std::pair<double, double>> verts;
            for (int k = 0; k < 3; ++k) {
                double ang = -kPi / 2.0 + tilt + k * 2.0 * kPi / 3.0;
                double vr = r * (0.90 + 0.16 * uniform_float(gen, 0.0f, 1.0f));
                verts.emplace_back(cx + vr * std::cos(ang),
                                   cy + vr * std::sin(ang));
            }
            draw_polygon(c, verts);
            break;
        }
        default:
            fail(ErrorKind::Config, "unknown sketch class id");
    }
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    if (off + 4 > b.size())
        fail(ErrorKind::Format, "truncated IDX header");
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    char buf[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(buf, 4);
}

} // namespace

Dataset generate_sketches(const std::vector<std::string>& classes,
                          std::size_t per_class, std::size_t size,
                          std::uint32_t seed) {
    if (size < 16) fail(ErrorKind::Config, "image size must be at least 16");
    if (per_class < 1) fail(ErrorKind::Config, "per_class must be at least 1");
    if (classes.empty()) fail(ErrorKind::Config, "no classes requested");

    std::vector<int> class_ids;
    for (const std::string& name : classes) {
        const auto& names = sketch_class_names();
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end())
            fail(ErrorKind::Config, "unknown sketch class: " + name);
        class_ids.push_back(int(it - names.begin()));
    }

    std::size_t n = classes.size() * per_class;
    Dataset ds;
    ds.images = RealTensor({n, 1, size, size});
    ds.labels.resize(n);
    ds.class_count = int(classes.size());

    std::mt19937 gen(seed);
    std::size_t img = 0;
    for (std::size_t c = 0; c < classes.size(); ++c)
        for (std::size_t i = 0; i < per_class; ++i, ++img) {
            Canvas canvas{ds.images.ptr() + img * size * size, int(size)};
            draw_sketch(canvas, class_ids[c], gen);
            ds.labels[img] = int(c);
        }
    return ds;
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
    std::vector<std::uint8_t> ib = read_file_bytes(images_path);
    if (read_be32(ib, 0) != 0x00000803u)
        fail(ErrorKind::Format, "bad IDX image magic in " + images_path);
    std::size_t n = read_be32(ib, 4);
    std::size_t h = read_be32(ib, 8);
    std::size_t w = read_be32(ib, 12);
    if (ib.size() != 16 + n * h * w)
        fail(ErrorKind::Format, "IDX image payload length mismatch");

    std::vector<std::uint8_t> lb = read_file_bytes(labels_path);
    if (read_be32(lb, 0) != 0x00000801u)
        fail(ErrorKind::Format, "bad IDX label magic in " + labels_path);
    std::size_t ln = read_be32(lb, 4);
    if (ln != n) fail(ErrorKind::Format, "IDX image/label counts differ");
    if (lb.size() != 8 + ln)
        fail(ErrorKind::Format, "IDX label payload length mismatch");

    Dataset ds;
    ds.images = RealTensor({n, 1, h, w});
    for (std::size_t i = 0; i < n * h * w; ++i)
        ds.images.data[i] = float(ib[16 + i]) / 255.0f;
    ds.labels.resize(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lb[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.class_count = max_label + 1;
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
    Shape4 s = as_shape4(ds.images);
    if (s.c != 1) fail(ErrorKind::Input, "IDX stores single-channel images");

    std::ofstream io(images_path, std::ios::binary);
    if (!io) fail(ErrorKind::Io, "cannot write " + images_path);
    write_be32(io, 0x00000803u);
    write_be32(io, std::uint32_t(s.n));
    write_be32(io, std::uint32_t(s.h));
    write_be32(io, std::uint32_t(s.w));
    for (float v : ds.images.data) {
        auto byte = std::uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        io.put(char(byte));
    }
    if (!io) fail(ErrorKind::Io, "short write to " + images_path);

    std::ofstream lo(labels_path, std::ios::binary);
    if (!lo) fail(ErrorKind::Io, "cannot write " + labels_path);
    write_be32(lo, 0x00000801u);
    write_be32(lo, std::uint32_t(ds.labels.size()));
    for (int l : ds.labels) lo.put(char(std::uint8_t(l)));
    if (!lo) fail(ErrorKind::Io, "short write to " + labels_path);
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch,
                             std::uint32_t shuffle_seed)
    : ds_(&ds), batch_(batch) {
    if (batch < 1) fail(ErrorKind::Input, "batch size must be at least 1");
    if (ds.size() == 0) fail(ErrorKind::Input, "empty dataset");
    reset(shuffle_seed);
}

void BatchIterator::reset(std::uint32_t shuffle_seed) {
    std::size_t n = ds_->size();
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    std::mt19937 gen(shuffle_seed);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = uniform_u32(gen, std::uint32_t(i));
        std::swap(order_[i - 1], order_[j]);
    }
    cursor_ = 0;
}

std::size_t BatchIterator::batch_count() const {
    return (ds_->size() + batch_ - 1) / batch_;
}

bool BatchIterator::next(Batch& out) {
    std::size_t n = ds_->size();
    if (cursor_ >= n) return false;
    std::size_t count = std::min(batch_, n - cursor_);

    Shape4 s = as_shape4(ds_->images);
    std::size_t pix = s.c * s.h * s.w;
    out.images = RealTensor({count, s.c, s.h, s.w});
    out.labels.resize(count);
    for (std::size_t b = 0; b < count; ++b) {
        std::size_t src = order_[cursor_ + b];
        std::copy_n(ds_->images.ptr() + src * pix, pix,
                    out.images.ptr() + b * pix);
        out.labels[b] = ds_->labels[src];
    }
    cursor_ += count;
    return true;
}

BatchIterator split_and_batch(const Dataset& ds, std::size_t batch,
                              std::uint32_t shuffle_seed) {
    return BatchIterator(ds, batch, shuffle_seed);
}

} // namespace dab
