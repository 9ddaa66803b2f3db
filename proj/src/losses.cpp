#include "seqseg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace seqseg {

namespace {

constexpr double kCeClamp = 1e-7;

void check_pair(const Tensor& pred, const Tensor& truth, const char* what) {
    if (!pred.same_shape(truth))
        throw ShapeError(std::string(what) + ": pred " + shape_str(pred.shape) +
                         " vs truth " + shape_str(truth.shape));
    for (double y : truth.data)
        if (y != 0.0 && y != 1.0)
            throw InputError(std::string(what) + ": truth is not binary");
}

}  // namespace

LossResult jaccard_loss(const Tensor& pred, const Tensor& truth) {
    check_pair(pred, truth, "jaccard_loss");
    double fg_count = 0.0, fg_sum = 0.0, bg_sum = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double p = std::clamp(pred.data[i], 0.0, 1.0);
        if (truth.data[i] == 1.0) {
            fg_count += 1.0;
            fg_sum += p;
        } else {
            bg_sum += p;
        }
    }

    LossResult r;
    r.grad = Tensor(pred.shape);
    if (fg_count == 0.0) {
        // +1 denominator guard; value is the derivative-consistent form
        const double denom = 1.0 + bg_sum;
        r.value = bg_sum / denom;
        r.empty_foreground = true;
        const double gb = 1.0 / (denom * denom);
        for (std::size_t i = 0; i < pred.data.size(); ++i) r.grad.data[i] = gb;
        return r;
    }

    const double denom = fg_count + bg_sum;
    r.value = 1.0 - fg_sum / denom;
    const double gf = -1.0 / denom;
    const double gb = fg_sum / (denom * denom);
    for (std::size_t i = 0; i < pred.data.size(); ++i)
        r.grad.data[i] = truth.data[i] == 1.0 ? gf : gb;
    return r;
}

LossResult cross_entropy_loss(const Tensor& pred, const Tensor& truth) {
    check_pair(pred, truth, "cross_entropy_loss");
    const double n = static_cast<double>(pred.data.size());
    LossResult r;
    r.grad = Tensor(pred.shape);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double p = std::clamp(pred.data[i], kCeClamp, 1.0 - kCeClamp);
        const double y = truth.data[i];
        sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        // gradient is zero where the clamp is active
        const bool clamped = pred.data[i] < kCeClamp || pred.data[i] > 1.0 - kCeClamp;
        r.grad.data[i] = clamped ? 0.0 : (p - y) / (p * (1.0 - p)) / n;
    }
    r.value = sum / n;
    return r;
}

LossResult cbce_loss(const Tensor& pred, const Tensor& truth) {
    check_pair(pred, truth, "cbce_loss");
    const double n = static_cast<double>(pred.data.size());
    double fg = 0.0;
    for (double y : truth.data) fg += y;
    const double beta = (n - fg) / n;  // |Y-| / |Y|, weight on foreground terms

    LossResult r;
    r.grad = Tensor(pred.shape);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double p = std::clamp(pred.data[i], kCeClamp, 1.0 - kCeClamp);
        const bool clamped = pred.data[i] < kCeClamp || pred.data[i] > 1.0 - kCeClamp;
        if (truth.data[i] == 1.0) {
            sum += -beta * std::log(p);
            r.grad.data[i] = clamped ? 0.0 : -beta / p / n;
        } else {
            sum += -(1.0 - beta) * std::log(1.0 - p);
            r.grad.data[i] = clamped ? 0.0 : (1.0 - beta) / (1.0 - p) / n;
        }
    }
    r.value = sum / n;
    return r;
}

LossResult segmentation_loss(LossKind kind, const Tensor& pred, const Tensor& truth) {
    switch (kind) {
        case LossKind::Jac: return jaccard_loss(pred, truth);
        case LossKind::Ce: return cross_entropy_loss(pred, truth);
        case LossKind::Cbce: return cbce_loss(pred, truth);
    }
    throw InputError("segmentation_loss: unknown kind");
}

DeepSupervisionResult deep_supervision_objective(const std::vector<Tensor>& units,
                                                 const Tensor& yhat,
                                                 const Tensor& truth, LossKind kind) {
    DeepSupervisionResult r;
    LossResult top = segmentation_loss(kind, yhat, truth);
    r.value = top.value;
    r.grad_yhat = std::move(top.grad);
    r.grad_units.reserve(units.size());
    for (const Tensor& u : units) {
        LossResult lk = segmentation_loss(kind, u, truth);
        r.value += lk.value;
        r.grad_units.push_back(std::move(lk.grad));
    }
    return r;
}

std::vector<ThresholdDsc> threshold_sweep(const std::vector<double>& pred_voxels,
                                          const std::vector<std::uint8_t>& truth_voxels,
                                          const std::vector<double>& thresholds) {
    if (thresholds.empty()) throw InputError("threshold_sweep: empty threshold list");
    if (pred_voxels.size() != truth_voxels.size())
        throw ShapeError("threshold_sweep: pred/truth length mismatch");
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (thresholds[i] <= thresholds[i - 1])
            throw InputError("threshold_sweep: thresholds not ascending");

    std::vector<ThresholdDsc> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) {
        double inter = 0.0, pred_n = 0.0, truth_n = 0.0;
        for (std::size_t i = 0; i < pred_voxels.size(); ++i) {
            const bool p = pred_voxels[i] > t;
            const bool y = truth_voxels[i] != 0;
            if (p) pred_n += 1.0;
            if (y) truth_n += 1.0;
            if (p && y) inter += 1.0;
        }
        const double dsc = (pred_n + truth_n) == 0.0 ? 1.0 : 2.0 * inter / (pred_n + truth_n);
        out.push_back({t, dsc});
    }
    return out;
}

}  // namespace seqseg
