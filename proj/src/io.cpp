#include "iid/io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>

#include "iid/error.hpp"

namespace iid {

namespace {

constexpr char kMagic[4] = {'A', 'T', 'N', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr int kMaxRank = 8;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::uint64_t TensorData::element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

void write_tensor(const std::string& path, const TensorData& t) {
    if (t.dims.empty() || t.dims.size() > kMaxRank)
        throw InvalidValue("tensor rank must be between 1 and 8");
    std::uint64_t n = 1;
    for (std::uint64_t d : t.dims) {
        if (d == 0) throw InvalidValue("tensor dims must be positive");
        if (__builtin_mul_overflow(n, d, &n)) throw InvalidValue("tensor dims overflow");
    }
    if (t.dtype == Dtype::F32) {
        if (t.f32.size() != n) throw ShapeMismatch("f32 payload does not match dims");
    } else if (t.dtype == Dtype::U8) {
        if (t.u8.size() != n) throw ShapeMismatch("u8 payload does not match dims");
    } else {
        throw UnsupportedDtype("unknown dtype code");
    }

    std::string buf;
    buf.reserve(14 + 8 * t.dims.size() + n * 4);
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    buf.push_back(static_cast<char>(t.dtype));
    buf.push_back(static_cast<char>(t.dims.size()));
    for (std::uint64_t d : t.dims) put_u64(buf, d);
    if (t.dtype == Dtype::F32) {
        for (float f : t.f32) put_u32(buf, std::bit_cast<std::uint32_t>(f));
    } else {
        buf.append(reinterpret_cast<const char*>(t.u8.data()), t.u8.size());
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path);
}

TensorData read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
    const std::size_t size = buf.size();

    if (size < 4 || buf.compare(0, 4, kMagic, 4) != 0)
        throw NotATensorFile("missing ATNS magic: " + path);
    if (size < 10) throw CorruptFile("truncated header: " + path);
    const std::uint32_t version = get_u32(p + 4);
    if (version != kVersion) throw CorruptFile("unsupported version: " + path);
    const std::uint8_t dtype_code = p[8];
    if (dtype_code != static_cast<std::uint8_t>(Dtype::F32) &&
        dtype_code != static_cast<std::uint8_t>(Dtype::U8))
        throw UnsupportedDtype("unknown dtype code in: " + path);
    const int ndim = p[9];
    if (ndim < 1 || ndim > kMaxRank) throw CorruptFile("bad rank: " + path);
    if (size < 10 + static_cast<std::size_t>(ndim) * 8)
        throw CorruptFile("truncated header: " + path);

    TensorData t;
    t.dtype = static_cast<Dtype>(dtype_code);
    std::uint64_t n = 1;
    for (int i = 0; i < ndim; ++i) {
        const std::uint64_t d = get_u64(p + 10 + static_cast<std::size_t>(i) * 8);
        if (d == 0) throw CorruptFile("zero dim: " + path);
        if (__builtin_mul_overflow(n, d, &n)) throw CorruptFile("dims overflow: " + path);
        t.dims.push_back(d);
    }
    const std::size_t offset = 10 + static_cast<std::size_t>(ndim) * 8;
    const std::uint64_t esize = t.dtype == Dtype::F32 ? 4 : 1;
    std::uint64_t need = 0;
    if (__builtin_mul_overflow(n, esize, &need) || need > size - offset)
        throw CorruptFile("truncated payload: " + path);
    if (size - offset != need) throw CorruptFile("trailing bytes after payload: " + path);

    if (t.dtype == Dtype::F32) {
        t.f32.resize(n);
        for (std::uint64_t i = 0; i < n; ++i)
            t.f32[i] = std::bit_cast<float>(get_u32(p + offset + i * 4));
    } else {
        t.u8.assign(p + offset, p + offset + n);
    }
    return t;
}

namespace {

void write_pgm_bytes(int width, int height, const std::vector<std::uint8_t>& bytes,
                     const std::string& path) {
    if (width <= 0 || height <= 0 || width > 65535 || height > 65535)
        throw InvalidValue("pgm dims must be in [1, 65535]");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

std::uint8_t grid_byte(double v) {
    double scaled = std::floor(v * 255.0 + 0.5);  // round-half-up
    if (scaled < 0.0) scaled = 0.0;
    if (scaled > 255.0) scaled = 255.0;
    return static_cast<std::uint8_t>(scaled);
}

struct PgmImage {
    int width = 0, height = 0;
    std::vector<std::uint8_t> bytes;
};

PgmImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw IoError("not a binary PGM: " + path);

    auto next_int = [&](const char* what) {
        // header tokens may be separated by whitespace or # comments
        for (;;) {
            int ch = in.peek();
            if (ch == '#') {
                std::string line;
                std::getline(in, line);
            } else if (ch != std::char_traits<char>::eof() &&
                       std::isspace(static_cast<unsigned char>(ch))) {
                in.get();
            } else {
                break;
            }
        }
        long v = -1;
        in >> v;
        if (!in || v < 0) throw IoError(std::string("bad PGM header field: ") + what);
        return static_cast<int>(v);
    };
    PgmImage img;
    img.width = next_int("width");
    img.height = next_int("height");
    const int maxval = next_int("maxval");
    if (img.width <= 0 || img.height <= 0 || maxval != 255)
        throw IoError("unsupported PGM header: " + path);
    in.get();  // single whitespace byte before the raster
    img.bytes.resize(static_cast<std::size_t>(img.width) * img.height);
    in.read(reinterpret_cast<char*>(img.bytes.data()),
            static_cast<std::streamsize>(img.bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.bytes.size()))
        throw IoError("truncated PGM raster: " + path);
    return img;
}

}  // namespace

void export_pgm(const BinaryMask& mask, const std::string& path) {
    std::vector<std::uint8_t> bytes(mask.bits.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.bits[i] ? 255 : 0;
    write_pgm_bytes(mask.width, mask.height, bytes, path);
}

void export_pgm(const Grid2D& grid, const std::string& path) {
    std::vector<std::uint8_t> bytes(grid.values.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = grid_byte(grid.values[i]);
    write_pgm_bytes(grid.width, grid.height, bytes, path);
}

BinaryMask read_pgm_mask(const std::string& path) {
    const PgmImage img = read_pgm(path);
    BinaryMask m = make_mask(img.height, img.width);
    for (std::size_t i = 0; i < img.bytes.size(); ++i) m.bits[i] = img.bytes[i] != 0;
    return m;
}

Grid2D read_pgm_grid(const std::string& path) {
    const PgmImage img = read_pgm(path);
    Grid2D g = make_grid(img.height, img.width);
    for (std::size_t i = 0; i < img.bytes.size(); ++i) g.values[i] = img.bytes[i] / 255.0;
    return g;
}

TensorData tensor_from_grid(const Grid2D& g) {
    TensorData t;
    t.dtype = Dtype::F32;
    t.dims = {static_cast<std::uint64_t>(g.height), static_cast<std::uint64_t>(g.width)};
    t.f32.reserve(g.values.size());
    for (double v : g.values) t.f32.push_back(static_cast<float>(v));
    return t;
}

TensorData tensor_from_mask(const BinaryMask& m) {
    TensorData t;
    t.dtype = Dtype::U8;
    t.dims = {static_cast<std::uint64_t>(m.height), static_cast<std::uint64_t>(m.width)};
    t.u8 = m.bits;
    return t;
}

TensorData tensor_from_latent(const LatentImage& z) {
    TensorData t;
    t.dtype = Dtype::F32;
    t.dims = {static_cast<std::uint64_t>(z.channels), static_cast<std::uint64_t>(z.height),
              static_cast<std::uint64_t>(z.width)};
    t.f32.reserve(z.values.size());
    for (double v : z.values) t.f32.push_back(static_cast<float>(v));
    return t;
}

TensorData tensor_from_stack(const HeadMapStack& s) {
    if (s.heads() == 0) throw InvalidValue("empty stack");
    TensorData t;
    t.dtype = Dtype::F32;
    t.dims = {static_cast<std::uint64_t>(s.heads()), static_cast<std::uint64_t>(s.height()),
              static_cast<std::uint64_t>(s.width())};
    for (const Grid2D& g : s.maps)
        for (double v : g.values) t.f32.push_back(static_cast<float>(v));
    return t;
}

TensorData tensor_from_attention(const RawAttention& a) {
    TensorData t;
    t.dtype = Dtype::F32;
    t.dims = {static_cast<std::uint64_t>(a.heads), static_cast<std::uint64_t>(a.rows),
              static_cast<std::uint64_t>(a.cols)};
    t.f32.reserve(a.weights.size());
    for (double v : a.weights) t.f32.push_back(static_cast<float>(v));
    return t;
}

namespace {

void want_rank(const TensorData& t, std::size_t rank, const char* what) {
    if (t.dims.size() != rank) throw ShapeMismatch(std::string("expected rank for ") + what);
}

int as_int(std::uint64_t d) {
    if (d > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
        throw ShapeMismatch("dimension too large");
    return static_cast<int>(d);
}

}  // namespace

Grid2D grid_from_tensor(const TensorData& t) {
    want_rank(t, 2, "grid");
    if (t.dtype != Dtype::F32) throw UnsupportedDtype("grid tensors must be f32");
    Grid2D g = make_grid(as_int(t.dims[0]), as_int(t.dims[1]));
    for (std::size_t i = 0; i < t.f32.size(); ++i) g.values[i] = t.f32[i];
    return g;
}

BinaryMask mask_from_tensor(const TensorData& t) {
    want_rank(t, 2, "mask");
    if (t.dtype != Dtype::U8) throw UnsupportedDtype("mask tensors must be u8");
    BinaryMask m = make_mask(as_int(t.dims[0]), as_int(t.dims[1]));
    for (std::size_t i = 0; i < t.u8.size(); ++i) m.bits[i] = t.u8[i] != 0;
    return m;
}

LatentImage latent_from_tensor(const TensorData& t) {
    want_rank(t, 3, "latent");
    if (t.dtype != Dtype::F32) throw UnsupportedDtype("latent tensors must be f32");
    LatentImage z = make_latent(as_int(t.dims[1]), as_int(t.dims[2]), as_int(t.dims[0]));
    for (std::size_t i = 0; i < t.f32.size(); ++i) z.values[i] = t.f32[i];
    return z;
}

HeadMapStack stack_from_tensor(const TensorData& t) {
    want_rank(t, 3, "stack");
    if (t.dtype != Dtype::F32) throw UnsupportedDtype("stack tensors must be f32");
    const int heads = as_int(t.dims[0]);
    const int h = as_int(t.dims[1]);
    const int w = as_int(t.dims[2]);
    HeadMapStack s;
    s.maps.reserve(heads);
    std::size_t idx = 0;
    for (int j = 0; j < heads; ++j) {
        Grid2D g = make_grid(h, w);
        for (double& v : g.values) v = t.f32[idx++];
        s.maps.push_back(std::move(g));
    }
    return s;
}

RawAttention attention_from_tensor(const TensorData& t) {
    want_rank(t, 3, "attention");
    if (t.dtype != Dtype::F32) throw UnsupportedDtype("attention tensors must be f32");
    RawAttention a = make_raw_attention(as_int(t.dims[0]), as_int(t.dims[1]), as_int(t.dims[2]));
    for (std::size_t i = 0; i < t.f32.size(); ++i) a.weights[i] = t.f32[i];
    validate_raw_attention(a);
    return a;
}

}  // namespace iid
