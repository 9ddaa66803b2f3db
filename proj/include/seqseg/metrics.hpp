#pragma once

#include <optional>
#include <string>
#include <vector>

#include "seqseg/volume.hpp"

namespace seqseg {

double dsc(const MaskVolume& a, const MaskVolume& b);
double jaccard_index(const MaskVolume& a, const MaskVolume& b);

struct PrecisionRecall {
    double precision;
    double recall;
};
PrecisionRecall precision_recall(const MaskVolume& pred, const MaskVolume& truth);

// Boundary voxels under face connectivity (out-of-bounds counts as
// background), physical mm coordinates.
std::vector<std::array<double, 3>> surface_points(const MaskVolume& m);

enum class AvdVariant {
    MeanOfMeans,  // symmetric average of directed mean surface distances
    MaxOfMeans,   // max of the two directed means, for sensitivity analysis
};

double avd(const MaskVolume& a, const MaskVolume& b,
           AvdVariant variant = AvdVariant::MeanOfMeans);
// O(n^2) reference path, used as the oracle for the KD-tree path.
double avd_bruteforce(const MaskVolume& a, const MaskVolume& b,
                      AvdVariant variant = AvdVariant::MeanOfMeans);

struct VolumeRegression {
    double r_squared;
    double error_variance;  // variance of (auto - manual), ml^2
    double slope;
    double intercept;
    std::vector<std::size_t> outliers;  // beyond +/-15% of manual volume
};
VolumeRegression volume_regression(
    const std::vector<std::pair<double, double>>& manual_auto_ml);

struct ShapeChangeReport {
    std::vector<int> abnormal;           // AVD between tau and tau-1 above threshold
    std::vector<int> empty_transitions;  // one side of the pair has no surface
};
ShapeChangeReport abnormal_shape_changes(const MaskVolume& m,
                                         double threshold_mm = 0.5);

// Mean in-plane AVD between consecutive nonempty slices, the generator
// calibration statistic.
double mean_interslice_avd(const MaskVolume& m);

struct CaseMetrics {
    std::string case_id;
    double dsc = 0.0;
    double ji = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    std::optional<double> avd_mm;  // absent when a mask is empty
};

struct MetricsReport {
    std::vector<CaseMetrics> cases;

    struct Aggregate {
        double mean, stdev, min, max;
    };
    Aggregate aggregate(double CaseMetrics::* field) const;
    std::optional<Aggregate> aggregate_avd() const;

    std::string to_csv() const;   // case_id,dsc,ji,precision,recall,avd_mm
    std::string to_text() const;
};

CaseMetrics evaluate_case(const std::string& case_id, const MaskVolume& pred,
                          const MaskVolume& truth);

}  // namespace seqseg
