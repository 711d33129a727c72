#include "texstat/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>

#include "texstat/image_io.hpp"
#include "texstat/ops.hpp"

namespace texstat {

namespace fs = std::filesystem;

void SynthParams::validate() const {
    if (count < 1) throw ConfigError("synth: count must be positive");
    if (size < 16 || size % 16 != 0)
        throw ConfigError("synth: size must be a positive multiple of 16 so the samples can "
                          "feed any supported model geometry");
    if (blobs_min < 1 || blobs_max < blobs_min)
        throw ConfigError("synth: blob count range must satisfy 1 <= min <= max");
    if (boundary_roughness < 0.0 || boundary_roughness >= 1.0)
        throw ConfigError("synth: boundary_roughness must be in [0,1)");
    if (contrast < 0.0 || contrast > 1.0) throw ConfigError("synth: contrast must be in [0,1]");
    if (tail_weight < 0.0 || tail_weight > 1.0)
        throw ConfigError("synth: tail_weight must be in [0,1]");
}

namespace {

// Deterministic draws built directly on the raw 64-bit stream so the
// generated bytes do not depend on the standard library's distribution
// implementations.
struct Rand {
    std::mt19937_64 eng;
    bool has_spare = false;
    double spare = 0.0;

    explicit Rand(std::uint64_t seed) : eng(seed) {}

    double u01() { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    std::int64_t below(std::int64_t n) { return static_cast<std::int64_t>(eng() % static_cast<std::uint64_t>(n)); }

    double normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u = u01(), v = u01();
        while (u <= 1e-300) u = u01();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double a = 2.0 * 3.14159265358979323846 * v;
        spare = r * std::sin(a);
        has_spare = true;
        return r * std::cos(a);
    }
};

struct Blob {
    double cy, cx, ry, rx, theta;
    double ch[4], sh[4];  // harmonic coefficients of the radius perturbation
};

// Signed membership test: inside when the scaled squared radius is below
// the perturbed boundary radius for the pixel's polar angle.
bool inside_blob(const Blob& b, double roughness, double y, double x) {
    const double dy = y - b.cy, dx = x - b.cx;
    const double c = std::cos(b.theta), s = std::sin(b.theta);
    const double rx = c * dx + s * dy;
    const double ry = -s * dx + c * dy;
    const double phi = std::atan2(ry, rx);
    double p = 0.0;
    for (int k = 0; k < 4; ++k)
        p += b.ch[k] * std::cos((k + 1) * phi) + b.sh[k] * std::sin((k + 1) * phi);
    const double rho = 1.0 + roughness * p;
    const double q = (rx / b.rx) * (rx / b.rx) + (ry / b.ry) * (ry / b.ry);
    return q <= rho * rho;
}

template <typename T>
Tensor<T> image_from_u8(const ImageU8& img) {
    Tensor<T> t = Tensor<T>::zeros({3, img.height, img.width});
    T* d = t.data();
    const std::int64_t hw = img.height * img.width;
    for (std::int64_t i = 0; i < hw; ++i)
        for (std::int64_t c = 0; c < 3; ++c)
            d[c * hw + i] =
                static_cast<T>(img.pixels[static_cast<std::size_t>(3 * i + c)]) / static_cast<T>(255);
    return t;
}

// Nearest-neighbor index map with pixel-center alignment, matching the
// convention of the bilinear resize used for images.
std::int64_t nearest_src(std::int64_t i, std::int64_t out, std::int64_t in) {
    const double src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                       static_cast<double>(out);
    auto idx = static_cast<std::int64_t>(src);
    return std::min(idx, in - 1);
}

bool has_image_ext(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e == ".png" || e == ".jpg" || e == ".jpeg";
}

std::map<std::string, fs::path> stems_in(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !has_image_ext(entry.path())) continue;
        const std::string stem = entry.path().stem().string();
        if (!out.emplace(stem, entry.path()).second)
            throw DataError("duplicate stem '" + stem + "' in " + dir);
    }
    return out;
}

}  // namespace

template <typename T>
std::vector<SamplePair<T>> load_dir(const std::string& images_path, const std::string& masks_path,
                                    std::int64_t target_h, std::int64_t target_w) {
    if (target_h < 1 || target_w < 1) throw ConfigError("load_dir: target size must be positive");
    const auto images = stems_in(images_path);
    const auto masks = stems_in(masks_path);
    for (const auto& [stem, path] : images)
        if (!masks.count(stem)) throw DataError("image '" + stem + "' has no mask counterpart");
    for (const auto& [stem, path] : masks)
        if (!images.count(stem)) throw DataError("mask '" + stem + "' has no image counterpart");

    std::vector<SamplePair<T>> out;
    out.reserve(images.size());
    for (const auto& [stem, ipath] : images) {  // std::map iterates stems in sorted order
        SamplePair<T> s;
        s.id = stem;
        const ImageU8 rgb = to_rgb(read_image(ipath.string()), ipath.string());
        s.image = resize_bilinear(image_from_u8<T>(rgb), target_h, target_w);

        const ImageU8 gray = to_gray(read_image(masks.at(stem).string()), masks.at(stem).string());
        s.mask = Tensor<T>::zeros({1, target_h, target_w});
        T* md = s.mask.data();
        for (std::int64_t y = 0; y < target_h; ++y) {
            const std::int64_t sy = nearest_src(y, target_h, gray.height);
            for (std::int64_t x = 0; x < target_w; ++x) {
                const std::int64_t sx = nearest_src(x, target_w, gray.width);
                const unsigned char v =
                    gray.pixels[static_cast<std::size_t>(sy * gray.width + sx)];
                md[y * target_w + x] = v > 127 ? static_cast<T>(1) : static_cast<T>(0);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

template <typename T>
std::vector<SamplePair<T>> synth(const SynthParams& params) {
    params.validate();
    Rand rng(params.seed);
    const std::int64_t n = params.size;
    const double fn = static_cast<double>(n);

    std::vector<SamplePair<T>> out;
    out.reserve(static_cast<std::size_t>(params.count));
    for (std::int64_t s = 0; s < params.count; ++s) {
        double bg_base[3], fg_base[3];
        const double bg_mean[3] = {0.62, 0.48, 0.50};
        const double fg_drop[3] = {0.45, 0.50, 0.35};
        for (int c = 0; c < 3; ++c) {
            bg_base[c] = bg_mean[c] + 0.05 * (2.0 * rng.u01() - 1.0);
            fg_base[c] = std::clamp(bg_base[c] - params.contrast * fg_drop[c], 0.02, 0.98);
        }

        std::vector<unsigned char> mask(static_cast<std::size_t>(n * n));
        std::int64_t fg_count = 0;
        for (int attempt = 0;; ++attempt) {
            if (attempt == 100)
                throw DataError("synth: could not draw a mask with both regions nonempty");
            const std::int64_t blobs =
                params.blobs_min + rng.below(params.blobs_max - params.blobs_min + 1);
            std::vector<Blob> bs(static_cast<std::size_t>(blobs));
            for (auto& b : bs) {
                b.cy = rng.uniform(0.30, 0.70) * fn;
                b.cx = rng.uniform(0.30, 0.70) * fn;
                b.ry = rng.uniform(0.10, 0.22) * fn;
                b.rx = rng.uniform(0.10, 0.22) * fn;
                b.theta = rng.uniform(0.0, 3.14159265358979323846);
                for (int k = 0; k < 4; ++k) {
                    b.ch[k] = (2.0 * rng.u01() - 1.0) / (2.0 * (k + 1));
                    b.sh[k] = (2.0 * rng.u01() - 1.0) / (2.0 * (k + 1));
                }
            }
            fg_count = 0;
            for (std::int64_t y = 0; y < n; ++y)
                for (std::int64_t x = 0; x < n; ++x) {
                    bool in = false;
                    for (const auto& b : bs)
                        if (inside_blob(b, params.boundary_roughness,
                                        static_cast<double>(y) + 0.5,
                                        static_cast<double>(x) + 0.5)) {
                            in = true;
                            break;
                        }
                    mask[static_cast<std::size_t>(y * n + x)] = in ? 1 : 0;
                    fg_count += in ? 1 : 0;
                }
            if (fg_count > 0 && fg_count < n * n) break;
        }

        SamplePair<T> sp;
        sp.id = [&] {
            std::ostringstream os;
            os << "synth-";
            os.width(4);
            os.fill('0');
            os << s;
            return os.str();
        }();
        sp.mask = Tensor<T>::zeros({1, n, n});
        sp.image = Tensor<T>::zeros({3, n, n});
        T* md = sp.mask.data();
        T* id = sp.image.data();
        const std::int64_t hw = n * n;
        for (std::int64_t i = 0; i < hw; ++i) {
            const bool fg = mask[static_cast<std::size_t>(i)] != 0;
            md[i] = fg ? static_cast<T>(1) : static_cast<T>(0);
            double sigma;
            if (fg)
                sigma = rng.u01() < params.tail_weight ? 0.08 : 0.02;
            else
                sigma = 0.03;
            const double noise = rng.normal() * sigma;
            const double* base = fg ? fg_base : bg_base;
            for (int c = 0; c < 3; ++c)
                id[c * hw + i] = static_cast<T>(std::clamp(base[c] + noise, 0.0, 1.0));
        }
        out.push_back(std::move(sp));
    }
    return out;
}

template <typename T>
std::array<std::vector<SamplePair<T>>, 3> split(const std::vector<SamplePair<T>>& samples,
                                                const std::array<double, 3>& fractions,
                                                std::uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw ConfigError("split: fractions must be nonnegative");
        sum += f;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");

    const std::int64_t n = static_cast<std::int64_t>(samples.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rand rng(seed);
    for (std::int64_t i = n - 1; i > 0; --i)
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(rng.below(i + 1))]);

    std::int64_t counts[3];
    counts[0] = static_cast<std::int64_t>(std::llround(fractions[0] * static_cast<double>(n)));
    counts[1] = std::min(
        static_cast<std::int64_t>(std::llround(fractions[1] * static_cast<double>(n))),
        n - counts[0]);
    counts[2] = n - counts[0] - counts[1];
    for (int p = 0; p < 3; ++p)
        if (fractions[static_cast<std::size_t>(p)] > 0.0 && counts[p] == 0)
            throw DataError("split: partition " + std::to_string(p) +
                            " is empty despite a positive fraction");

    std::array<std::vector<SamplePair<T>>, 3> out;
    std::int64_t pos = 0;
    for (int p = 0; p < 3; ++p) {
        out[static_cast<std::size_t>(p)].reserve(static_cast<std::size_t>(counts[p]));
        for (std::int64_t i = 0; i < counts[p]; ++i)
            out[static_cast<std::size_t>(p)].push_back(
                samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(pos++)])]);
    }
    return out;
}

#define TEXSTAT_INSTANTIATE_DATA(T)                                                              \
    template std::vector<SamplePair<T>> load_dir<T>(const std::string&, const std::string&,      \
                                                    std::int64_t, std::int64_t);                 \
    template std::vector<SamplePair<T>> synth<T>(const SynthParams&);                            \
    template std::array<std::vector<SamplePair<T>>, 3> split<T>(                                 \
        const std::vector<SamplePair<T>>&, const std::array<double, 3>&, std::uint64_t);

TEXSTAT_INSTANTIATE_DATA(float)
TEXSTAT_INSTANTIATE_DATA(double)

#undef TEXSTAT_INSTANTIATE_DATA

}  // namespace texstat
