#include "seqseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace seqseg {

namespace {

void check_same(const MaskVolume& a, const MaskVolume& b, const char* what) {
    if (a.dims != b.dims)
        throw ShapeError(std::string(what) + ": dims mismatch");
}

struct Overlap {
    double na = 0.0, nb = 0.0, inter = 0.0;
};

Overlap overlap(const MaskVolume& a, const MaskVolume& b) {
    Overlap o;
    for (std::size_t i = 0; i < a.voxels.size(); ++i) {
        const bool va = a.voxels[i] != 0, vb = b.voxels[i] != 0;
        if (va) o.na += 1.0;
        if (vb) o.nb += 1.0;
        if (va && vb) o.inter += 1.0;
    }
    return o;
}

// Exact nearest-neighbour over 3D points; splits on the widest axis.
class KdTree {
public:
    explicit KdTree(std::vector<std::array<double, 3>> pts) : pts_(std::move(pts)) {
        idx_.resize(pts_.size());
        std::iota(idx_.begin(), idx_.end(), std::size_t{0});
        nodes_.reserve(pts_.size());
        root_ = build(0, pts_.size());
    }

    double nearest_sq(const std::array<double, 3>& q) const {
        double best = std::numeric_limits<double>::infinity();
        search(root_, q, best);
        return best;
    }

private:
    struct Node {
        int axis;
        double split;
        std::size_t begin, end;  // leaf range when axis < 0
        int left = -1, right = -1;
    };

    static double sq_dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
        const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
        return dx * dx + dy * dy + dz * dz;
    }

    int build(std::size_t begin, std::size_t end) {
        Node n;
        n.begin = begin;
        n.end = end;
        if (end - begin <= 8) {
            n.axis = -1;
            nodes_.push_back(n);
            return static_cast<int>(nodes_.size() - 1);
        }
        std::array<double, 3> lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
        for (std::size_t i = begin; i < end; ++i)
            for (int a = 0; a < 3; ++a) {
                lo[static_cast<std::size_t>(a)] = std::min(lo[static_cast<std::size_t>(a)], pts_[idx_[i]][static_cast<std::size_t>(a)]);
                hi[static_cast<std::size_t>(a)] = std::max(hi[static_cast<std::size_t>(a)], pts_[idx_[i]][static_cast<std::size_t>(a)]);
            }
        int axis = 0;
        for (int a = 1; a < 3; ++a)
            if (hi[static_cast<std::size_t>(a)] - lo[static_cast<std::size_t>(a)] >
                hi[static_cast<std::size_t>(axis)] - lo[static_cast<std::size_t>(axis)])
                axis = a;
        const std::size_t mid = (begin + end) / 2;
        std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(begin),
                         idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                         idx_.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::size_t x, std::size_t y) {
                             return pts_[x][static_cast<std::size_t>(axis)] <
                                    pts_[y][static_cast<std::size_t>(axis)];
                         });
        n.axis = axis;
        n.split = pts_[idx_[mid]][static_cast<std::size_t>(axis)];
        nodes_.push_back(n);
        const int self = static_cast<int>(nodes_.size() - 1);
        const int l = build(begin, mid);
        const int r = build(mid, end);
        nodes_[static_cast<std::size_t>(self)].left = l;
        nodes_[static_cast<std::size_t>(self)].right = r;
        return self;
    }

    void search(int node, const std::array<double, 3>& q, double& best) const {
        const Node& n = nodes_[static_cast<std::size_t>(node)];
        if (n.axis < 0) {
            for (std::size_t i = n.begin; i < n.end; ++i)
                best = std::min(best, sq_dist(q, pts_[idx_[i]]));
            return;
        }
        const double d = q[static_cast<std::size_t>(n.axis)] - n.split;
        const int near = d < 0.0 ? n.left : n.right;
        const int far = d < 0.0 ? n.right : n.left;
        search(near, q, best);
        if (d * d < best) search(far, q, best);
    }

    std::vector<std::array<double, 3>> pts_;
    std::vector<std::size_t> idx_;
    std::vector<Node> nodes_;
    int root_;
};

double combine_directed(double dab, double dba, AvdVariant variant) {
    return variant == AvdVariant::MeanOfMeans ? 0.5 * (dab + dba) : std::max(dab, dba);
}

}  // namespace

double dsc(const MaskVolume& a, const MaskVolume& b) {
    check_same(a, b, "dsc");
    const Overlap o = overlap(a, b);
    if (o.na == 0.0 && o.nb == 0.0) return 1.0;
    return 2.0 * o.inter / (o.na + o.nb);
}

double jaccard_index(const MaskVolume& a, const MaskVolume& b) {
    check_same(a, b, "jaccard_index");
    const Overlap o = overlap(a, b);
    const double uni = o.na + o.nb - o.inter;
    if (uni == 0.0) return 1.0;
    return o.inter / uni;
}

PrecisionRecall precision_recall(const MaskVolume& pred, const MaskVolume& truth) {
    check_same(pred, truth, "precision_recall");
    const Overlap o = overlap(pred, truth);
    PrecisionRecall pr;
    pr.precision = o.na == 0.0 ? 1.0 : o.inter / o.na;
    pr.recall = o.nb == 0.0 ? 1.0 : o.inter / o.nb;
    return pr;
}

std::vector<std::array<double, 3>> surface_points(const MaskVolume& m) {
    std::vector<std::array<double, 3>> pts;
    const int d = m.dims[0], h = m.dims[1], w = m.dims[2];
    const bool flat = d == 1;  // 2D mask: ignore the z neighbours
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!m.at(z, y, x)) continue;
                const bool boundary =
                    (!flat && (z == 0 || !m.at(z - 1, y, x))) ||
                    (!flat && (z == d - 1 || !m.at(z + 1, y, x))) ||
                    y == 0 || !m.at(z, y - 1, x) || y == h - 1 || !m.at(z, y + 1, x) ||
                    x == 0 || !m.at(z, y, x - 1) || x == w - 1 || !m.at(z, y, x + 1);
                if (boundary)
                    pts.push_back({z * m.spacing_mm[0], y * m.spacing_mm[1],
                                   x * m.spacing_mm[2]});
            }
    return pts;
}

double avd(const MaskVolume& a, const MaskVolume& b, AvdVariant variant) {
    check_same(a, b, "avd");
    auto sa = surface_points(a);
    auto sb = surface_points(b);
    if (sa.empty() || sb.empty())
        throw InputError("avd: undefined for an empty mask");
    KdTree ta(sa), tb(sb);
    double dab = 0.0, dba = 0.0;
    for (const auto& p : sa) dab += std::sqrt(tb.nearest_sq(p));
    for (const auto& p : sb) dba += std::sqrt(ta.nearest_sq(p));
    dab /= static_cast<double>(sa.size());
    dba /= static_cast<double>(sb.size());
    return combine_directed(dab, dba, variant);
}

double avd_bruteforce(const MaskVolume& a, const MaskVolume& b, AvdVariant variant) {
    check_same(a, b, "avd");
    auto sa = surface_points(a);
    auto sb = surface_points(b);
    if (sa.empty() || sb.empty())
        throw InputError("avd: undefined for an empty mask");
    auto directed = [](const std::vector<std::array<double, 3>>& from,
                       const std::vector<std::array<double, 3>>& to) {
        double sum = 0.0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) {
                const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
                best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
            sum += std::sqrt(best);
        }
        return sum / static_cast<double>(from.size());
    };
    return combine_directed(directed(sa, sb), directed(sb, sa), variant);
}

VolumeRegression volume_regression(
    const std::vector<std::pair<double, double>>& manual_auto_ml) {
    const std::size_t n = manual_auto_ml.size();
    if (n < 3) throw InputError("volume_regression: need at least 3 pairs");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [m, a] : manual_auto_ml) {
        sx += m;
        sy += a;
        sxx += m * m;
        sxy += m * a;
    }
    const double nn = static_cast<double>(n);
    const double denom = nn * sxx - sx * sx;
    if (denom == 0.0) throw InputError("volume_regression: degenerate manual volumes");
    VolumeRegression r;
    r.slope = (nn * sxy - sx * sy) / denom;
    r.intercept = (sy - r.slope * sx) / nn;

    const double ybar = sy / nn;
    double ss_res = 0.0, ss_tot = 0.0, err_sum = 0.0, err_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& [m, a] = manual_auto_ml[i];
        const double fit = r.slope * m + r.intercept;
        ss_res += (a - fit) * (a - fit);
        ss_tot += (a - ybar) * (a - ybar);
        const double e = a - m;
        err_sum += e;
        err_sq += e * e;
        if (std::abs(e) > 0.15 * std::abs(m)) r.outliers.push_back(i);
    }
    r.r_squared = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
    r.error_variance = err_sq / nn - (err_sum / nn) * (err_sum / nn);
    return r;
}

namespace {

MaskVolume extract_slice(const MaskVolume& m, int z) {
    MaskVolume s({1, m.dims[1], m.dims[2]},
                 {m.spacing_mm[0], m.spacing_mm[1], m.spacing_mm[2]});
    const std::size_t base = static_cast<std::size_t>(z) * m.dims[1] * m.dims[2];
    std::copy(m.voxels.begin() + static_cast<std::ptrdiff_t>(base),
              m.voxels.begin() + static_cast<std::ptrdiff_t>(base + s.voxels.size()),
              s.voxels.begin());
    return s;
}

}  // namespace

ShapeChangeReport abnormal_shape_changes(const MaskVolume& m, double threshold_mm) {
    if (m.dims[0] < 2) throw InputError("abnormal_shape_changes: need at least 2 slices");
    ShapeChangeReport rep;
    for (int z = 1; z < m.dims[0]; ++z) {
        const MaskVolume prev = extract_slice(m, z - 1);
        const MaskVolume cur = extract_slice(m, z);
        const bool pe = prev.foreground_count() == 0, ce = cur.foreground_count() == 0;
        if (pe || ce) {
            if (pe != ce) rep.empty_transitions.push_back(z);
            continue;
        }
        if (avd(prev, cur) > threshold_mm) rep.abnormal.push_back(z);
    }
    return rep;
}

double mean_interslice_avd(const MaskVolume& m) {
    double sum = 0.0;
    int n = 0;
    for (int z = 1; z < m.dims[0]; ++z) {
        const MaskVolume prev = extract_slice(m, z - 1);
        const MaskVolume cur = extract_slice(m, z);
        if (prev.foreground_count() == 0 || cur.foreground_count() == 0) continue;
        sum += avd(prev, cur);
        ++n;
    }
    if (n == 0) throw InputError("mean_interslice_avd: no nonempty slice pairs");
    return sum / n;
}

MetricsReport::Aggregate MetricsReport::aggregate(double CaseMetrics::* field) const {
    if (cases.empty()) throw InputError("metrics: empty report");
    Aggregate a{0.0, 0.0, 1e300, -1e300};
    for (const CaseMetrics& c : cases) {
        const double v = c.*field;
        a.mean += v;
        a.min = std::min(a.min, v);
        a.max = std::max(a.max, v);
    }
    a.mean /= static_cast<double>(cases.size());
    for (const CaseMetrics& c : cases) {
        const double d = c.*field - a.mean;
        a.stdev += d * d;
    }
    a.stdev = std::sqrt(a.stdev / static_cast<double>(cases.size()));
    return a;
}

std::optional<MetricsReport::Aggregate> MetricsReport::aggregate_avd() const {
    Aggregate a{0.0, 0.0, 1e300, -1e300};
    int n = 0;
    for (const CaseMetrics& c : cases) {
        if (!c.avd_mm) continue;
        a.mean += *c.avd_mm;
        a.min = std::min(a.min, *c.avd_mm);
        a.max = std::max(a.max, *c.avd_mm);
        ++n;
    }
    if (n == 0) return std::nullopt;
    a.mean /= n;
    for (const CaseMetrics& c : cases)
        if (c.avd_mm) a.stdev += (*c.avd_mm - a.mean) * (*c.avd_mm - a.mean);
    a.stdev = std::sqrt(a.stdev / n);
    return a;
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "case_id,dsc,ji,precision,recall,avd_mm\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    for (const CaseMetrics& c : cases) {
        os << c.case_id << ',' << c.dsc << ',' << c.ji << ',' << c.precision << ','
           << c.recall << ',';
        if (c.avd_mm)
            os << *c.avd_mm;
        else
            os << "nan";
        os << '\n';
    }
    return os.str();
}

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    auto line = [&](const char* name, const Aggregate& a) {
        os << name << ": mean " << a.mean << "  stdev " << a.stdev << "  min " << a.min
           << "  max " << a.max << '\n';
    };
    os << "cases: " << cases.size() << '\n';
    line("dsc", aggregate(&CaseMetrics::dsc));
    line("ji", aggregate(&CaseMetrics::ji));
    line("precision", aggregate(&CaseMetrics::precision));
    line("recall", aggregate(&CaseMetrics::recall));
    if (auto a = aggregate_avd())
        line("avd_mm", *a);
    else
        os << "avd_mm: undefined (empty masks)\n";
    return os.str();
}

CaseMetrics evaluate_case(const std::string& case_id, const MaskVolume& pred,
                          const MaskVolume& truth) {
    CaseMetrics c;
    c.case_id = case_id;
    c.dsc = dsc(pred, truth);
    c.ji = jaccard_index(pred, truth);
    const PrecisionRecall pr = precision_recall(pred, truth);
    c.precision = pr.precision;
    c.recall = pr.recall;
    if (pred.foreground_count() > 0 && truth.foreground_count() > 0)
        c.avd_mm = avd(pred, truth);
    return c;
}

}  // namespace seqseg
