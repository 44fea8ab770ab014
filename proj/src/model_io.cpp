#include "dab/model_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace dab {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int bit = 0; bit < 8; ++bit)
            c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

struct Writer {
    std::vector<std::uint8_t> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) {
        bytes.push_back(std::uint8_t(v));
        bytes.push_back(std::uint8_t(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void floats(const RealTensor& t) {
        for (float v : t.data) f32(v);
    }
};

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t at = 0;

    void need(std::size_t n) const {
        if (at + n > bytes.size())
            fail(ErrorKind::Format, "model file is truncated");
    }
    std::uint8_t u8() {
        need(1);
        return bytes[at++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = std::uint16_t(bytes[at]) |
                          std::uint16_t(bytes[at + 1]) << 8;
        at += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[at + i]) << (8 * i);
        at += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    void floats(RealTensor& t) {
        for (float& v : t.data) v = f32();
    }
};

std::size_t filter_bits(const LayerState& L) {
    if (L.spec.kind == LayerKind::Conv2d)
        return L.in_c * std::size_t(L.spec.kernel) * std::size_t(L.spec.kernel);
    return L.in_c * L.in_h * L.in_w;
}

void write_filter(Writer& w, const BinarizedFilter& f) {
    w.u32(std::uint32_t(f.k));
    w.f32(f.alpha);
    w.f32(f.beta);
    std::size_t nbytes = (f.n + 7) / 8;
    for (std::size_t b = 0; b < nbytes; ++b) {
        std::uint64_t word = f.mask.raw()[b >> 3];
        w.u8(std::uint8_t(word >> (8 * (b & 7))));
    }
}

BinarizedFilter read_filter(Reader& r, std::size_t n, Scheme scheme) {
    BinarizedFilter f;
    f.n = n;
    f.k = r.u32();
    f.alpha = r.f32();
    f.beta = r.f32();
    if (!std::isfinite(f.alpha) || !std::isfinite(f.beta))
        fail(ErrorKind::Format, "non-finite binarization levels");
    if (scheme == Scheme::Dab && (f.k < 1 || f.k > n - 1))
        fail(ErrorKind::Format, "stored k outside [1, n-1]");
    if (f.k > n) fail(ErrorKind::Format, "stored k exceeds the filter length");

    f.mask = PackedBits(n);
    std::size_t nbytes = (n + 7) / 8;
    std::size_t ones = 0;
    for (std::size_t b = 0; b < nbytes; ++b) {
        std::uint8_t byte = r.u8();
        for (int bit = 0; bit < 8; ++bit) {
            std::size_t idx = b * 8 + std::size_t(bit);
            if (byte >> bit & 1u) {
                if (idx >= n)
                    fail(ErrorKind::Format, "mask padding bits must be zero");
                f.mask.set(idx, true);
                ++ones;
            }
        }
    }
    if (ones != f.k)
        fail(ErrorKind::Format, "mask population does not match stored k");
    return f;
}

} // namespace

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes) {
    static const auto table = make_crc_table();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::uint8_t b : bytes) c = table[(c ^ b) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::size_t save_model(const NetworkConfig& config, const TrainState& state,
                       const std::string& path) {
    validate_config(config);
    if (state.layers.size() != config.layers.size())
        fail(ErrorKind::State, "state does not match the config");

    Writer w;
    w.bytes.reserve(1024);
    w.u8('D');
    w.u8('A');
    w.u8('B');
    w.u8('N');
    w.u16(kModelFormatVersion);

    w.u8(std::uint8_t(config.input_shape.size()));
    for (std::size_t d : config.input_shape) w.u32(std::uint32_t(d));
    w.u32(std::uint32_t(config.class_count));
    w.u32(std::uint32_t(config.layers.size()));
    for (const LayerSpec& spec : config.layers) {
        w.u8(std::uint8_t(spec.kind));
        w.u8(std::uint8_t(spec.bin_mode));
        w.u8(std::uint8_t(spec.scheme));
        w.u8(spec.bias ? 1 : 0);
        w.u32(std::uint32_t(spec.units));
        w.u16(std::uint16_t(spec.kernel));
        w.u16(std::uint16_t(spec.stride));
        w.u16(std::uint16_t(spec.pad));
        w.u16(0);
    }

    for (const LayerState& L : state.layers) {
        const LayerSpec& spec = L.spec;
        if (is_binarized_layer(spec)) {
            if (L.filters.size() != spec.units)
                fail(ErrorKind::State,
                     "binarized layer has no filters to store; refresh first");
            std::size_t n = filter_bits(L);
            for (const BinarizedFilter& f : L.filters) {
                if (f.n != n)
                    fail(ErrorKind::State, "filter length mismatch");
                write_filter(w, f);
            }
        } else if (spec.kind == LayerKind::Conv2d ||
                   spec.kind == LayerKind::Dense) {
            if (L.w.numel() != spec.units * filter_bits(L))
                fail(ErrorKind::State, "layer weights are missing");
            w.floats(L.w);
            if (spec.bias) w.floats(L.b);
        } else if (spec.kind == LayerKind::BatchNorm) {
            if (L.bn_gamma.numel() != L.in_c)
                fail(ErrorKind::State, "batch norm parameters are missing");
            w.floats(L.bn_gamma);
            w.floats(L.bn_beta);
            w.floats(L.bn_mean);
            w.floats(L.bn_var);
        }
    }

    w.u32(crc32_ieee(w.bytes));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(w.bytes.data()),
              std::streamsize(w.bytes.size()));
    if (!out) fail(ErrorKind::Io, "short write to " + path);
    return w.bytes.size();
}

LoadedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());

    if (bytes.size() < 10) fail(ErrorKind::Format, "model file is truncated");
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= std::uint32_t(bytes[bytes.size() - 4 + i]) << (8 * i);
    std::uint32_t actual =
        crc32_ieee({bytes.data(), bytes.size() - 4});
    if (stored != actual) fail(ErrorKind::Format, "checksum mismatch");

    Reader r{{bytes.data(), bytes.size() - 4}, 0};
    char magic[4];
    for (char& c : magic) c = char(r.u8());
    if (std::memcmp(magic, "DABN", 4) != 0)
        fail(ErrorKind::Format, "not a model file (bad magic)");
    std::uint16_t version = r.u16();
    if (version != kModelFormatVersion)
        fail(ErrorKind::Format,
             "unsupported format version " + std::to_string(version));

    LoadedModel m;
    std::size_t rank = r.u8();
    if (rank != 1 && rank != 3)
        fail(ErrorKind::Format, "input rank must be 1 or 3");
    for (std::size_t i = 0; i < rank; ++i)
        m.config.input_shape.push_back(r.u32());
    m.config.class_count = int(r.u32());
    std::size_t layer_count = r.u32();
    if (layer_count > 1024) fail(ErrorKind::Format, "implausible layer count");

    for (std::size_t i = 0; i < layer_count; ++i) {
        LayerSpec spec;
        std::uint8_t kind = r.u8(), mode = r.u8(), scheme = r.u8(),
                     bias = r.u8();
        if (kind > std::uint8_t(LayerKind::SoftmaxXent) || mode > 2 ||
            scheme > 2 || bias > 1)
            fail(ErrorKind::Format, "unknown layer field value");
        spec.kind = LayerKind(kind);
        spec.bin_mode = BinMode(mode);
        spec.scheme = Scheme(scheme);
        spec.bias = bias == 1;
        spec.units = r.u32();
        spec.kernel = int(r.u16());
        spec.stride = int(r.u16());
        spec.pad = int(r.u16());
        r.u16(); // reserved
        m.config.layers.push_back(spec);
    }

    try {
        m.state = skeleton_state(m.config);
    } catch (const Error& e) {
        fail(ErrorKind::Format,
             std::string("stored config is invalid: ") + e.what());
    }

    for (LayerState& L : m.state.layers) {
        const LayerSpec& spec = L.spec;
        if (is_binarized_layer(spec)) {
            std::size_t n = filter_bits(L);
            L.filters.reserve(spec.units);
            for (std::size_t f = 0; f < spec.units; ++f)
                L.filters.push_back(read_filter(r, n, spec.scheme));
        } else if (spec.kind == LayerKind::Conv2d ||
                   spec.kind == LayerKind::Dense) {
            if (spec.kind == LayerKind::Conv2d) {
                std::size_t k = std::size_t(spec.kernel);
                L.w = RealTensor({spec.units, L.in_c, k, k});
            } else {
                L.w = RealTensor({spec.units, L.in_c * L.in_h * L.in_w});
            }
            r.floats(L.w);
            if (spec.bias) {
                L.b = RealTensor({spec.units});
                r.floats(L.b);
            }
        } else if (spec.kind == LayerKind::BatchNorm) {
            L.bn_gamma = RealTensor({L.in_c});
            L.bn_beta = RealTensor({L.in_c});
            L.bn_mean = RealTensor({L.in_c});
            L.bn_var = RealTensor({L.in_c});
            r.floats(L.bn_gamma);
            r.floats(L.bn_beta);
            r.floats(L.bn_mean);
            r.floats(L.bn_var);
        }
    }

    if (r.at != r.bytes.size())
        fail(ErrorKind::Format, "trailing bytes after the last payload");
    return m;
}

} // namespace dab
