#include "seqseg/volume.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace seqseg {

Tensor slice_triplet(const Volume& v, int tau) {
    if (tau < 0 || tau >= v.dims[0])
        throw InputError("slice_triplet: slice " + std::to_string(tau) + " out of range [0," +
                         std::to_string(v.dims[0]) + ")");
    const int h = v.dims[1], w = v.dims[2];
    Tensor t({3, h, w});
    for (int ch = 0; ch < 3; ++ch) {
        const int z = std::clamp(tau + ch - 1, 0, v.dims[0] - 1);
        std::memcpy(&t.data[static_cast<std::size_t>(ch) * h * w],
                    &v.voxels[static_cast<std::size_t>(z) * h * w],
                    static_cast<std::size_t>(h) * w * sizeof(double));
    }
    return t;
}

Tensor mask_slice(const MaskVolume& m, int tau) {
    if (tau < 0 || tau >= m.dims[0])
        throw InputError("mask_slice: slice out of range");
    const int h = m.dims[1], w = m.dims[2];
    Tensor t({1, h, w});
    for (int i = 0; i < h * w; ++i)
        t.data[static_cast<std::size_t>(i)] =
            m.voxels[static_cast<std::size_t>(tau) * h * w + i] != 0 ? 1.0 : 0.0;
    return t;
}

namespace {

constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kDtypeF64 = 1;
constexpr std::uint16_t kDtypeU8 = 2;

void put_u16(std::string& b, std::uint16_t v) {
    b.push_back(static_cast<char>(v & 0xff));
    b.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& b, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

struct Reader {
    std::string bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > bytes.size())
            throw FormatError("svol: truncated " + std::string(what) + " at offset " +
                              std::to_string(pos));
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        pos += 2;
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        pos += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    double f64(const char* what) {
        need(8, what);
        auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
};

struct Header {
    std::uint16_t dtype;
    std::array<int, 3> dims;
    std::array<double, 3> spacing;
    std::uint32_t crc;
};

Header read_header(Reader& r) {
    r.need(4, "magic");
    if (r.bytes.compare(0, 4, "SVOL") != 0)
        throw FormatError("svol: bad magic at offset 0");
    r.pos = 4;
    const std::uint16_t version = r.u16("version");
    if (version != kVersion)
        throw FormatError("svol: unsupported version " + std::to_string(version) +
                          " at offset 4");
    Header h;
    h.dtype = r.u16("dtype");
    if (h.dtype != kDtypeF64 && h.dtype != kDtypeU8)
        throw FormatError("svol: unknown dtype tag " + std::to_string(h.dtype) +
                          " at offset 6");
    for (int i = 0; i < 3; ++i) {
        const std::uint32_t d = r.u32("dims");
        if (d == 0 || d > (1u << 24))
            throw FormatError("svol: bad dim at offset " + std::to_string(r.pos - 4));
        h.dims[static_cast<std::size_t>(i)] = static_cast<int>(d);
    }
    for (int i = 0; i < 3; ++i) {
        h.spacing[static_cast<std::size_t>(i)] = r.f64("spacing");
        if (!(h.spacing[static_cast<std::size_t>(i)] > 0.0))
            throw FormatError("svol: non-positive spacing at offset " + std::to_string(r.pos - 8));
    }
    h.crc = r.u32("crc32");
    return h;
}

void check_payload(Reader& r, const Header& h, std::size_t elem_size) {
    const std::size_t n = static_cast<std::size_t>(h.dims[0]) * h.dims[1] * h.dims[2];
    const std::size_t expect = n * elem_size;
    if (r.bytes.size() - r.pos != expect)
        throw FormatError("svol: payload length " + std::to_string(r.bytes.size() - r.pos) +
                          " != dims product " + std::to_string(expect) + " at offset " +
                          std::to_string(r.pos));
    const auto crc = static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(r.bytes.data() + r.pos),
              static_cast<uInt>(expect)));
    if (crc != h.crc)
        throw FormatError("svol: checksum mismatch at offset " + std::to_string(r.pos));
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("svol: cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InputError("svol: write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("svol: cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

std::string header_bytes(std::uint16_t dtype, const std::array<int, 3>& dims,
                         const std::array<double, 3>& spacing, std::uint32_t crc) {
    std::string b = "SVOL";
    put_u16(b, kVersion);
    put_u16(b, dtype);
    for (int d : dims) put_u32(b, static_cast<std::uint32_t>(d));
    for (double s : spacing) put_f64(b, s);
    put_u32(b, crc);
    return b;
}

}  // namespace

void write_volume(const std::string& path, const Volume& v) {
    v.check();
    std::string payload;
    payload.reserve(v.voxels.size() * 8);
    for (double x : v.voxels) put_f64(payload, x);
    const auto crc = static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    write_file(path, header_bytes(kDtypeF64, v.dims, v.spacing_mm, crc) + payload);
}

void write_volume(const std::string& path, const MaskVolume& m) {
    std::string payload(m.voxels.size(), '\0');
    for (std::size_t i = 0; i < m.voxels.size(); ++i) {
        if (m.voxels[i] > 1) throw InputError("svol: mask voxel not binary");
        payload[i] = static_cast<char>(m.voxels[i]);
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    write_file(path, header_bytes(kDtypeU8, m.dims, m.spacing_mm, crc) + payload);
}

Volume read_volume_f64(const std::string& path) {
    Reader r{read_file(path)};
    const Header h = read_header(r);
    if (h.dtype != kDtypeF64)
        throw FormatError("svol: expected f64 payload, got dtype " + std::to_string(h.dtype));
    check_payload(r, h, 8);
    Volume v(h.dims, h.spacing);
    for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = r.f64("payload");
    return v;
}

MaskVolume read_volume_mask(const std::string& path) {
    Reader r{read_file(path)};
    const Header h = read_header(r);
    if (h.dtype != kDtypeU8)
        throw FormatError("svol: expected u8 payload, got dtype " + std::to_string(h.dtype));
    check_payload(r, h, 1);
    MaskVolume m(h.dims, h.spacing);
    for (std::size_t i = 0; i < m.voxels.size(); ++i) {
        const auto b = static_cast<std::uint8_t>(r.bytes[r.pos + i]);
        if (b > 1)
            throw FormatError("svol: non-binary mask voxel at offset " +
                              std::to_string(r.pos + i));
        m.voxels[i] = b;
    }
    return m;
}

int read_volume_dtype(const std::string& path) {
    Reader r{read_file(path)};
    return read_header(r).dtype;
}

}  // namespace seqseg
