#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "seqseg/volume.hpp"

namespace seqseg {

// Procedural pancreas-like case: an axial tube built as one disc per
// slice whose center and radius follow damped random walks (step sizes
// scale with slice thickness, so thick-slice volumes change more
// between slices), two-level intensities, distractor ellipsoids at
// foreground intensity, and Gaussian noise.
struct GenConfig {
    std::array<int, 3> dims{16, 64, 64};          // (D,H,W)
    std::array<double, 3> spacing_mm{2.5, 1.0, 1.0};
    double center_step_vox = 0.35;  // per 2.5 mm of slice thickness
    double radius_step_vox = 0.18;
    double radius_min_vox = 4.0;  // in-plane voxels
    double radius_max_vox = 7.0;
    double fg_mean = 0.75;
    double bg_mean = 0.25;
    double noise_sigma = 0.04;
    int distractor_count = 3;
    std::uint64_t seed = 0;
};

// MRI-like variant: thicker slices, larger inter-slice shape change.
GenConfig mri_like_config();

struct SynthCase {
    Volume image;
    MaskVolume mask;
};

SynthCase generate_case(const GenConfig& config);

enum class PerturbMode { Zero, Halve };

// Zero or halve the listed slices of a per-slice probability sequence.
std::vector<Tensor> perturb_sequence(const std::vector<Tensor>& prob,
                                     const std::vector<int>& drop_indices,
                                     PerturbMode mode);

}  // namespace seqseg
