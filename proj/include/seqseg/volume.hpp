#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "seqseg/tensor.hpp"

namespace seqseg {

// 3D scalar image with per-axis physical spacing, dims ordered (D,H,W),
// voxels row-major with W fastest.
struct Volume {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::vector<double> voxels;

    Volume() = default;
    Volume(std::array<int, 3> d, std::array<double, 3> s)
        : dims(d), spacing_mm(s) {
        check();
        voxels.assign(static_cast<std::size_t>(count()), 0.0);
    }

    std::int64_t count() const {
        return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
    }
    double& at(int z, int y, int x) {
        return voxels[static_cast<std::size_t>((static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x)];
    }
    double at(int z, int y, int x) const {
        return voxels[static_cast<std::size_t>((static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x)];
    }
    void check() const {
        for (int d : dims)
            if (d < 1) throw ShapeError("volume: non-positive dim");
        for (double s : spacing_mm)
            if (!(s > 0.0)) throw ShapeError("volume: non-positive spacing");
    }
};

struct MaskVolume {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> voxels;

    MaskVolume() = default;
    MaskVolume(std::array<int, 3> d, std::array<double, 3> s)
        : dims(d), spacing_mm(s) {
        voxels.assign(static_cast<std::size_t>(count()), 0);
    }

    std::int64_t count() const {
        return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
    }
    std::uint8_t& at(int z, int y, int x) {
        return voxels[static_cast<std::size_t>((static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x)];
    }
    std::uint8_t at(int z, int y, int x) const {
        return voxels[static_cast<std::size_t>((static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x)];
    }
    std::int64_t foreground_count() const {
        std::int64_t n = 0;
        for (std::uint8_t v : voxels) n += v != 0;
        return n;
    }
};

// 3-channel slab (slices tau-1, tau, tau+1) with edge replication.
Tensor slice_triplet(const Volume& v, int tau);

// Extract one z-slice of a mask as a [1,H,W] binary tensor.
Tensor mask_slice(const MaskVolume& m, int tau);

// SVOL container: magic 'SVOL', version u16, dtype u16 (f64=1, u8=2),
// dims 3xu32, spacing 3xf64, payload CRC32, little-endian payload.
void write_volume(const std::string& path, const Volume& v);
void write_volume(const std::string& path, const MaskVolume& m);
Volume read_volume_f64(const std::string& path);
MaskVolume read_volume_mask(const std::string& path);
// Peek at the dtype tag without reading the payload.
int read_volume_dtype(const std::string& path);

}  // namespace seqseg
