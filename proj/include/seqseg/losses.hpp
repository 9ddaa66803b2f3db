#pragma once

#include <vector>

#include "seqseg/tensor.hpp"

namespace seqseg {

enum class LossKind { Jac, Ce, Cbce };

struct LossResult {
    double value = 0.0;
    Tensor grad;
    bool empty_foreground = false;
};

// 1 - sum_f(pred_f) / (|Y+| + sum_b(pred_b)), with the analytic gradient
// of the relaxed form. Empty-foreground slices keep a +1 denominator
// guard so background is still pushed down.
LossResult jaccard_loss(const Tensor& pred, const Tensor& truth);

LossResult cross_entropy_loss(const Tensor& pred, const Tensor& truth);

// Class-balanced CE: foreground terms weighted |Y-|/|Y|, background
// terms |Y+|/|Y|, mean over pixels.
LossResult cbce_loss(const Tensor& pred, const Tensor& truth);

LossResult segmentation_loss(LossKind kind, const Tensor& pred, const Tensor& truth);

// Deep-supervision objective: L(yhat, Y) + sum_k L(U_k, Y). Gradients are
// returned per map so each unit receives its own flow.
struct DeepSupervisionResult {
    double value = 0.0;
    Tensor grad_yhat;
    std::vector<Tensor> grad_units;
};
DeepSupervisionResult deep_supervision_objective(const std::vector<Tensor>& units,
                                                 const Tensor& yhat,
                                                 const Tensor& truth, LossKind kind);

struct ThresholdDsc {
    double threshold;
    double dsc;
};
// Binarize a probability volume at each threshold and score DSC against
// the truth volume. Inputs are flat voxel arrays of equal length.
std::vector<ThresholdDsc> threshold_sweep(const std::vector<double>& pred_voxels,
                                          const std::vector<std::uint8_t>& truth_voxels,
                                          const std::vector<double>& thresholds);

}  // namespace seqseg
