#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "texstat/common.hpp"
#include "texstat/tensor.hpp"

namespace texstat {

// Pixel-level counts comparing a predicted binary mask against ground truth.
struct Confusion {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
};

// Counts exact agreement; both tensors must be the same shape and contain
// only the values 0 and 1.
template <typename T>
Confusion confusion(const Tensor<T>& pred_mask, const Tensor<T>& gt_mask);

// Overlap rates.  Division-by-zero cases all have numerator zero as well
// and are defined as 1 (vacuously perfect); when that happens and
// `vacuous` is non-null it is set to true.
double dice(const Confusion& c, bool* vacuous = nullptr);
double jaccard(const Confusion& c, bool* vacuous = nullptr);
double miou(const Confusion& c, bool* vacuous = nullptr);
double accuracy(const Confusion& c, bool* vacuous = nullptr);
// Mean of sensitivity and specificity; arithmetic by default with a
// geometric-mean variant behind the flag.
double ge(const Confusion& c, bool geometric = false, bool* vacuous = nullptr);

// 95th-percentile symmetric Hausdorff distance between mask boundaries in
// Euclidean pixels.  A boundary pixel is a foreground pixel 4-adjacent to
// background or on the image edge.  Directed distances from every boundary
// pixel of one mask to the nearest boundary pixel of the other are reduced
// by the nearest-rank 95th percentile; the result is the max over the two
// directions.  Empty masks make the distance undefined (nullopt).
template <typename T>
std::optional<double> hd95(const Tensor<T>& pred_mask, const Tensor<T>& gt_mask);

// Exact squared Euclidean distance transform of a point set on an H x W
// grid (Felzenszwalb-Huttenlocher).  Exposed for testing; sites gives
// flattened y*w+x indices.  Cells with no site anywhere get a huge value.
std::vector<double> squared_distance_transform(std::int64_t h, std::int64_t w,
                                               const std::vector<std::int64_t>& sites);

// Flattened boundary pixel indices (y*w+x) of a [1 x H x W] or [H x W]
// binary mask.
template <typename T>
std::vector<std::int64_t> boundary_pixels(const Tensor<T>& mask);

struct EvalRow {
    std::string id;
    double dice = 0, miou = 0, ja = 0, ac = 0, ge = 0;
    std::optional<double> hd95;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    EvalRow mean;                        // id == "mean"; hd95 averaged over defined rows
    std::int64_t hd95_undefined = 0;     // rows where either mask was empty
};

template <typename T>
EvalRow evaluate_sample(const std::string& id, const Tensor<T>& pred_mask,
                        const Tensor<T>& gt_mask, bool geometric_ge = false);

EvalReport summarize(std::vector<EvalRow> rows);

// Comma-separated rows (id,dice,miou,ja,ac,ge,hd95) plus the mean row;
// undefined hd95 prints as "undefined".
std::string report_to_csv(const EvalReport& report);

}  // namespace texstat
