#include "seqseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace seqseg {

GenConfig mri_like_config() {
    GenConfig c;
    c.spacing_mm = {7.0, 1.0, 1.0};
    return c;
}

namespace {

void stamp_disc(MaskVolume& m, int z, double cy, double cx, double r) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(m.dims[1] - 1, static_cast<int>(std::ceil(cy + r)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(m.dims[2] - 1, static_cast<int>(std::ceil(cx + r)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dy = y - cy, dx = x - cx;
            if (dy * dy + dx * dx <= r * r) m.at(z, y, x) = 1;
        }
}

bool near_mask(const MaskVolume& m, int z, int y, int x, int margin) {
    for (int dz = -margin; dz <= margin; ++dz)
        for (int dy = -margin; dy <= margin; ++dy)
            for (int dx = -margin; dx <= margin; ++dx) {
                const int zz = z + dz, yy = y + dy, xx = x + dx;
                if (zz < 0 || zz >= m.dims[0] || yy < 0 || yy >= m.dims[1] || xx < 0 ||
                    xx >= m.dims[2])
                    continue;
                if (m.at(zz, yy, xx)) return true;
            }
    return false;
}

}  // namespace

SynthCase generate_case(const GenConfig& config) {
    const auto [d, h, w] = config.dims;
    if (config.radius_max_vox < config.radius_min_vox || config.radius_min_vox <= 0.0)
        throw InputError("generate_case: bad radius range");
    if (2.0 * config.radius_max_vox + 8.0 > std::min(h, w) || d < 2)
        throw InputError("generate_case: tube cannot fit in dims");
    if (config.noise_sigma < 0.0) throw InputError("generate_case: negative noise sigma");

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    MaskVolume mask(config.dims, config.spacing_mm);

    // Walk steps are per 2.5 mm of slice thickness: thick-slice volumes
    // drift more per slice, matching how anatomy changes between cuts.
    const double zscale = config.spacing_mm[0] / 2.5;
    const double margin = config.radius_max_vox + 2.0;
    double y = h / 2.0 + (unif(rng) - 0.5) * (h - 2.0 * margin) * 0.5;
    double x = w / 2.0 + (unif(rng) - 0.5) * (w - 2.0 * margin) * 0.5;
    double vy = 0.0, vx = 0.0;
    double r = config.radius_min_vox +
               unif(rng) * (config.radius_max_vox - config.radius_min_vox);

    for (int z = 0; z < d; ++z) {
        stamp_disc(mask, z, y, x, r);
        vy = 0.7 * vy + gauss(rng) * config.center_step_vox * zscale;
        vx = 0.7 * vx + gauss(rng) * config.center_step_vox * zscale;
        y = std::clamp(y + vy, margin, h - margin);
        x = std::clamp(x + vx, margin, w - margin);
        r = std::clamp(r + gauss(rng) * config.radius_step_vox * zscale,
                       config.radius_min_vox, config.radius_max_vox);
    }

    SynthCase out;
    out.mask = mask;
    out.image = Volume(config.dims, config.spacing_mm);
    for (std::size_t i = 0; i < out.image.voxels.size(); ++i)
        out.image.voxels[i] = mask.voxels[i] ? config.fg_mean : config.bg_mean;

    // Distractor blobs share the foreground intensity but never touch the
    // tube, so intensity alone cannot separate the classes.
    std::uniform_int_distribution<int> pz(1, d - 2), py(4, h - 5), px(4, w - 5);
    for (int blob = 0; blob < config.distractor_count; ++blob) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            const int cz = pz(rng), cy = py(rng), cx = px(rng);
            const double az = 0.8 + unif(rng) * 0.8;  // axial semi-axis, voxels
            const double ay = 2.0 + unif(rng) * 2.0;
            const double ax = 2.0 + unif(rng) * 2.0;
            std::vector<std::array<int, 3>> vox;
            bool ok = true;
            for (int zz = std::max(0, cz - 3); ok && zz <= std::min(d - 1, cz + 3); ++zz)
                for (int yy = std::max(0, cy - 5); ok && yy <= std::min(h - 1, cy + 5); ++yy)
                    for (int xx = std::max(0, cx - 5); xx <= std::min(w - 1, cx + 5); ++xx) {
                        const double q = (zz - cz) * (zz - cz) / (az * az) +
                                         (yy - cy) * (yy - cy) / (ay * ay) +
                                         (xx - cx) * (xx - cx) / (ax * ax);
                        if (q > 1.0) continue;
                        if (near_mask(mask, zz, yy, xx, 2)) {
                            ok = false;
                            break;
                        }
                        vox.push_back({zz, yy, xx});
                    }
            if (!ok || vox.empty()) continue;
            for (const auto& [zz, yy, xx] : vox) out.image.at(zz, yy, xx) = config.fg_mean;
            break;
        }
    }

    if (config.noise_sigma > 0.0)
        for (double& v : out.image.voxels)
            v = std::clamp(v + gauss(rng) * config.noise_sigma, 0.0, 1.0);
    return out;
}

std::vector<Tensor> perturb_sequence(const std::vector<Tensor>& prob,
                                     const std::vector<int>& drop_indices,
                                     PerturbMode mode) {
    std::vector<Tensor> out = prob;
    for (int idx : drop_indices) {
        if (idx < 0 || idx >= static_cast<int>(prob.size()))
            throw InputError("perturb_sequence: index " + std::to_string(idx) +
                             " out of range");
        for (double& v : out[static_cast<std::size_t>(idx)].data)
            v = mode == PerturbMode::Zero ? 0.0 : 0.5 * v;
    }
    return out;
}

}  // namespace seqseg
