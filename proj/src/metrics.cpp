#include "texstat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace texstat {

template <typename T>
Confusion confusion(const Tensor<T>& pred_mask, const Tensor<T>& gt_mask) {
    if (pred_mask.shape() != gt_mask.shape())
        throw ShapeError("confusion: shape mismatch " + shape_str(pred_mask.shape()) + " vs " +
                         shape_str(gt_mask.shape()));
    const T* p = pred_mask.data();
    const T* g = gt_mask.data();
    Confusion c;
    for (std::int64_t i = 0; i < pred_mask.numel(); ++i) {
        if ((p[i] != 0 && p[i] != 1) || (g[i] != 0 && g[i] != 1))
            throw DataError("confusion: masks must be strictly binary (flat index " +
                            std::to_string(i) + ")");
        const bool pp = p[i] != 0, gg = g[i] != 0;
        if (pp && gg)
            ++c.tp;
        else if (pp && !gg)
            ++c.fp;
        else if (!pp && gg)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

namespace {

double safe_ratio(std::int64_t num, std::int64_t den, bool* vacuous) {
    if (den == 0) {
        if (vacuous) *vacuous = true;
        return 1.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double dice(const Confusion& c, bool* vacuous) {
    return safe_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, vacuous);
}

double jaccard(const Confusion& c, bool* vacuous) {
    return safe_ratio(c.tp, c.tp + c.fp + c.fn, vacuous);
}

double miou(const Confusion& c, bool* vacuous) {
    const double fg = safe_ratio(c.tp, c.tp + c.fp + c.fn, vacuous);
    const double bg = safe_ratio(c.tn, c.tn + c.fp + c.fn, vacuous);
    return 0.5 * (fg + bg);
}

double accuracy(const Confusion& c, bool* vacuous) {
    return safe_ratio(c.tp + c.tn, c.total(), vacuous);
}

double ge(const Confusion& c, bool geometric, bool* vacuous) {
    const double sens = safe_ratio(c.tp, c.tp + c.fn, vacuous);
    const double spec = safe_ratio(c.tn, c.tn + c.fp, vacuous);
    return geometric ? std::sqrt(sens * spec) : 0.5 * (sens + spec);
}

namespace {

template <typename T>
void mask_extent(const Tensor<T>& mask, std::int64_t& h, std::int64_t& w) {
    if (mask.rank() == 2) {
        h = mask.dim(0);
        w = mask.dim(1);
    } else if (mask.rank() == 3 && mask.dim(0) == 1) {
        h = mask.dim(1);
        w = mask.dim(2);
    } else {
        throw ShapeError("expected a [H x W] or [1 x H x W] mask, got " +
                         shape_str(mask.shape()));
    }
}

constexpr double kFar = 1e18;

// 1D lower envelope of parabolas rooted at (i, f[i]); the workhorse of the
// exact two-pass squared distance transform.  Empty cells carry the large
// sentinel kFar; their parabolas are popped by any finite one inside the
// grid range, so no special-casing is needed.
void edt_1d(const double* f, double* d, std::int64_t n, std::int64_t* v, double* z) {
    auto intersect = [&](std::int64_t q, std::int64_t p) {
        return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
               (2.0 * static_cast<double>(q - p));
    };
    std::int64_t k = 0;
    v[0] = 0;
    z[0] = -kFar;
    z[1] = kFar;
    for (std::int64_t q = 1; q < n; ++q) {
        double s = intersect(q, v[k]);
        while (s <= z[k]) {
            --k;
            s = intersect(q, v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kFar;
    }
    k = 0;
    for (std::int64_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const std::int64_t p = v[k];
        const double dq = static_cast<double>(q - p);
        d[q] = dq * dq + f[p];
    }
}

}  // namespace

std::vector<double> squared_distance_transform(std::int64_t h, std::int64_t w,
                                               const std::vector<std::int64_t>& sites) {
    std::vector<double> grid(static_cast<std::size_t>(h * w), kFar);
    for (std::int64_t s : sites) grid[static_cast<std::size_t>(s)] = 0.0;

    const std::int64_t n = std::max(h, w);
    std::vector<double> f(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n));
    std::vector<std::int64_t> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n + 1));

    for (std::int64_t y = 0; y < h; ++y) {  // along rows first
        edt_1d(grid.data() + y * w, d.data(), w, v.data(), z.data());
        std::copy(d.begin(), d.begin() + w, grid.begin() + y * w);
    }
    for (std::int64_t x = 0; x < w; ++x) {  // then along columns
        for (std::int64_t y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y * w + x)];
        edt_1d(f.data(), d.data(), h, v.data(), z.data());
        for (std::int64_t y = 0; y < h; ++y) grid[static_cast<std::size_t>(y * w + x)] = d[static_cast<std::size_t>(y)];
    }
    return grid;
}

template <typename T>
std::vector<std::int64_t> boundary_pixels(const Tensor<T>& mask) {
    std::int64_t h = 0, w = 0;
    mask_extent(mask, h, w);
    const T* m = mask.data();
    std::vector<std::int64_t> out;
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const T val = m[y * w + x];
            if (val != 0 && val != 1) throw DataError("boundary_pixels: mask must be binary");
            if (val == 0) continue;
            const bool edge = y == 0 || y == h - 1 || x == 0 || x == w - 1;
            const bool touches_bg = (y > 0 && m[(y - 1) * w + x] == 0) ||
                                    (y < h - 1 && m[(y + 1) * w + x] == 0) ||
                                    (x > 0 && m[y * w + x - 1] == 0) ||
                                    (x < w - 1 && m[y * w + x + 1] == 0);
            if (edge || touches_bg) out.push_back(y * w + x);
        }
    return out;
}

namespace {

double nearest_rank_p95(std::vector<double>& values) {
    std::sort(values.begin(), values.end());
    const std::int64_t n = static_cast<std::int64_t>(values.size());
    const std::int64_t idx = static_cast<std::int64_t>(
                                 std::ceil(0.95 * static_cast<double>(n))) - 1;
    return values[static_cast<std::size_t>(std::clamp<std::int64_t>(idx, 0, n - 1))];
}

double directed_p95(const std::vector<std::int64_t>& from, const std::vector<double>& sq_to) {
    std::vector<double> d;
    d.reserve(from.size());
    for (std::int64_t p : from) d.push_back(std::sqrt(sq_to[static_cast<std::size_t>(p)]));
    return nearest_rank_p95(d);
}

}  // namespace

template <typename T>
std::optional<double> hd95(const Tensor<T>& pred_mask, const Tensor<T>& gt_mask) {
    if (pred_mask.shape() != gt_mask.shape())
        throw ShapeError("hd95: shape mismatch " + shape_str(pred_mask.shape()) + " vs " +
                         shape_str(gt_mask.shape()));
    std::int64_t h = 0, w = 0;
    mask_extent(pred_mask, h, w);
    const auto a = boundary_pixels(pred_mask);
    const auto b = boundary_pixels(gt_mask);
    if (a.empty() || b.empty()) return std::nullopt;
    const auto sq_to_b = squared_distance_transform(h, w, b);
    const auto sq_to_a = squared_distance_transform(h, w, a);
    return std::max(directed_p95(a, sq_to_b), directed_p95(b, sq_to_a));
}

template <typename T>
EvalRow evaluate_sample(const std::string& id, const Tensor<T>& pred_mask,
                        const Tensor<T>& gt_mask, bool geometric_ge) {
    const Confusion c = confusion(pred_mask, gt_mask);
    EvalRow r;
    r.id = id;
    r.dice = dice(c);
    r.miou = miou(c);
    r.ja = jaccard(c);
    r.ac = accuracy(c);
    r.ge = ge(c, geometric_ge);
    r.hd95 = hd95(pred_mask, gt_mask);
    return r;
}

EvalReport summarize(std::vector<EvalRow> rows) {
    EvalReport rep;
    rep.mean.id = "mean";
    double hd_sum = 0.0;
    std::int64_t hd_n = 0;
    for (const auto& r : rows) {
        rep.mean.dice += r.dice;
        rep.mean.miou += r.miou;
        rep.mean.ja += r.ja;
        rep.mean.ac += r.ac;
        rep.mean.ge += r.ge;
        if (r.hd95) {
            hd_sum += *r.hd95;
            ++hd_n;
        } else {
            ++rep.hd95_undefined;
        }
    }
    const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
    rep.mean.dice /= n;
    rep.mean.miou /= n;
    rep.mean.ja /= n;
    rep.mean.ac /= n;
    rep.mean.ge /= n;
    if (hd_n > 0) rep.mean.hd95 = hd_sum / static_cast<double>(hd_n);
    rep.rows = std::move(rows);
    return rep;
}

namespace {

void csv_row(std::ostringstream& os, const EvalRow& r) {
    os << r.id << "," << r.dice << "," << r.miou << "," << r.ja << "," << r.ac << "," << r.ge
       << ",";
    if (r.hd95)
        os << *r.hd95;
    else
        os << "undefined";
    os << "\n";
}

}  // namespace

std::string report_to_csv(const EvalReport& report) {
    std::ostringstream os;
    os.precision(9);
    os << "id,dice,miou,ja,ac,ge,hd95\n";
    for (const auto& r : report.rows) csv_row(os, r);
    csv_row(os, report.mean);
    return os.str();
}

#define TEXSTAT_INSTANTIATE_METRICS(T)                                                         \
    template Confusion confusion<T>(const Tensor<T>&, const Tensor<T>&);                       \
    template std::optional<double> hd95<T>(const Tensor<T>&, const Tensor<T>&);                \
    template std::vector<std::int64_t> boundary_pixels<T>(const Tensor<T>&);                   \
    template EvalRow evaluate_sample<T>(const std::string&, const Tensor<T>&, const Tensor<T>&, \
                                        bool);

TEXSTAT_INSTANTIATE_METRICS(float)
TEXSTAT_INSTANTIATE_METRICS(double)

#undef TEXSTAT_INSTANTIATE_METRICS

}  // namespace texstat
