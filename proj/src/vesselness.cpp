#include "fundus/vesselness.hpp"

#include "fundus/error.hpp"

#include <algorithm>
#include <cmath>

namespace fundus::vessels {

using imaging::FovMask;
using imaging::GrayImage;

namespace {

// Eigenvalue norms below this (0..255 scale) are rounding residue of the
// zero-sum derivative kernels on flat regions.
constexpr double kFlatNorm = 1e-6;

struct Kernels {
    int radius;
    std::vector<double> smooth;
    std::vector<double> first;
    std::vector<double> second;
};

Kernels make_kernels(double sigma) {
    Kernels k;
    k.radius = static_cast<int>(std::ceil(4.0 * sigma));
    const std::size_t n = static_cast<std::size_t>(2 * k.radius + 1);
    k.smooth.resize(n);
    k.first.resize(n);
    k.second.resize(n);
    const double s2 = sigma * sigma;
    double total = 0.0;
    for (int i = -k.radius; i <= k.radius; ++i) {
        const double g = std::exp(-(i * i) / (2.0 * s2));
        k.smooth[static_cast<std::size_t>(i + k.radius)] = g;
        total += g;
    }
    for (int i = -k.radius; i <= k.radius; ++i) {
        const auto idx = static_cast<std::size_t>(i + k.radius);
        const double g = k.smooth[idx] / total;
        k.smooth[idx] = g;
        k.second[idx] = (i * i / (s2 * s2) - 1.0 / s2) * g;
    }
    // Odd kernel built from the positive half so it is exactly antisymmetric.
    for (int i = 0; i <= k.radius; ++i) {
        const double v = -(i / s2) * k.smooth[static_cast<std::size_t>(i + k.radius)];
        k.first[static_cast<std::size_t>(k.radius + i)] = v;
        k.first[static_cast<std::size_t>(k.radius - i)] = -v;
    }
    double mean = 0.0;
    for (double v : k.second) mean += v;
    mean /= static_cast<double>(n);
    for (double& v : k.second) v -= mean;
    return k;
}

int mirror(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

Plane<double> filter_rows(const Plane<double>& in, const std::vector<double>& kernel, int radius) {
    Plane<double> out(in.width(), in.height());
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < in.width(); ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<std::size_t>(i + radius)] * in(mirror(x + i, in.width()), y);
            out(x, y) = acc;
        }
    return out;
}

Plane<double> filter_cols(const Plane<double>& in, const std::vector<double>& kernel, int radius) {
    Plane<double> out(in.width(), in.height());
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < in.width(); ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<std::size_t>(i + radius)] * in(x, mirror(y + i, in.height()));
            out(x, y) = acc;
        }
    return out;
}

VesselnessMap compute(const GrayImage& gray, const VesselnessParams& params, const FovMask* fov) {
    params.validate();
    if (fov && (fov->width() != gray.width() || fov->height() != gray.height()))
        throw Error(ErrorCode::BadParams, "FOV mask dimensions do not match the image");

    VesselnessMap out(gray.width(), gray.height(), 0.0);
    const double two_beta2 = 2.0 * params.beta * params.beta;
    const double two_c2 = 2.0 * params.c * params.c;
    for (double sigma : params.scales) {
        HessianEigen eig = hessian_eigen_at_scale(gray, sigma);
        for (std::size_t i = 0; i < out.size(); ++i) {
            double l1 = eig.small.values()[i];
            double l2 = eig.large.values()[i];
            if (params.invert) {
                l1 = -l1;
                l2 = -l2;
            }
            if (l2 > 0.0) continue;
            const double s = 255.0 * std::sqrt(l1 * l1 + l2 * l2);
            if (s < kFlatNorm) continue;
            const double rb = std::abs(l1) / std::abs(l2);
            const double v = std::exp(-rb * rb / two_beta2) * (1.0 - std::exp(-s * s / two_c2));
            out.values()[i] = std::max(out.values()[i], v);
        }
    }
    double peak = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (fov && !fov->values()[i]) out.values()[i] = 0.0;
        peak = std::max(peak, out.values()[i]);
    }
    if (peak > 0.0)
        for (double& v : out.values()) v /= peak;
    return out;
}

} // namespace

void VesselnessParams::validate() const {
    if (scales.empty()) throw Error(ErrorCode::BadParams, "vesselness needs at least one scale");
    for (double s : scales)
        if (!(s >= 0.5)) throw Error(ErrorCode::BadParams, "vesselness scales must be >= 0.5");
    if (!(beta > 0.0)) throw Error(ErrorCode::BadParams, "beta must be positive");
    if (!(c > 0.0)) throw Error(ErrorCode::BadParams, "c must be positive");
}

HessianEigen hessian_eigen_at_scale(const GrayImage& gray, double sigma) {
    if (!(sigma >= 0.5)) throw Error(ErrorCode::BadParams, "sigma must be >= 0.5");
    if (gray.width() < 4.0 * sigma || gray.height() < 4.0 * sigma)
        throw Error(ErrorCode::BadParams, "image is smaller than 4 sigma");

    const Kernels k = make_kernels(sigma);
    const Plane<double> dxx = filter_cols(filter_rows(gray, k.second, k.radius), k.smooth, k.radius);
    const Plane<double> dyy = filter_cols(filter_rows(gray, k.smooth, k.radius), k.second, k.radius);
    const Plane<double> dxy = filter_cols(filter_rows(gray, k.first, k.radius), k.first, k.radius);

    const double norm = sigma * sigma;
    HessianEigen eig{Plane<double>(gray.width(), gray.height()),
                     Plane<double>(gray.width(), gray.height())};
    for (std::size_t i = 0; i < gray.size(); ++i) {
        const double a = dxx.values()[i] * norm;
        const double b = dxy.values()[i] * norm;
        const double d = dyy.values()[i] * norm;
        const double root = std::sqrt((a - d) * (a - d) + 4.0 * b * b);
        const double mu1 = 0.5 * (a + d + root);
        const double mu2 = 0.5 * (a + d - root);
        const bool swap = std::abs(mu1) > std::abs(mu2);
        eig.small.values()[i] = swap ? mu2 : mu1;
        eig.large.values()[i] = swap ? mu1 : mu2;
    }
    return eig;
}

VesselnessMap vesselness(const GrayImage& gray, const VesselnessParams& params) {
    return compute(gray, params, nullptr);
}

VesselnessMap vesselness(const GrayImage& gray, const VesselnessParams& params, const FovMask& fov) {
    return compute(gray, params, &fov);
}

BinarizeMethod BinarizeMethod::fixed(double t) {
    if (!(t > 0.0 && t < 1.0)) throw Error(ErrorCode::BadParams, "fixed threshold must lie in (0, 1)");
    return BinarizeMethod(false, t);
}

int histogram_bin(double value) noexcept {
    return std::clamp(static_cast<int>(std::floor(value * kHistogramBins)), 0, kHistogramBins - 1);
}

int otsu_bin(const VesselnessMap& map, const FovMask* fov) {
    std::vector<long long> hist(kHistogramBins, 0);
    long long n = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double v = map.values()[i];
        if (v <= 0.0 || (fov && !fov->values()[i])) continue;
        ++hist[static_cast<std::size_t>(histogram_bin(v))];
        ++n;
    }
    if (n == 0) return -1;
    long long total_sum = 0;
    for (int b = 0; b < kHistogramBins; ++b) total_sum += hist[static_cast<std::size_t>(b)] * b;

    // sigma_B^2 is proportional to (s0 n1 - s1 n0)^2 / (n0 n1); identical
    // partitions give bit-identical scores, so ties go to the lowest bin.
    int best = 0;
    double best_score = -1.0;
    long long n0 = 0;
    long long s0 = 0;
    for (int k = 0; k < kHistogramBins - 1; ++k) {
        n0 += hist[static_cast<std::size_t>(k)];
        s0 += hist[static_cast<std::size_t>(k)] * k;
        const long long n1 = n - n0;
        const long long s1 = total_sum - s0;
        double score = 0.0;
        if (n0 > 0 && n1 > 0) {
            const double diff = static_cast<double>(s0 * n1 - s1 * n0);
            score = diff * diff / (static_cast<double>(n0) * static_cast<double>(n1));
        }
        if (score > best_score) {
            best_score = score;
            best = k;
        }
    }
    return best;
}

namespace {

VesselMask binarize_impl(const VesselnessMap& map, const BinarizeMethod& method, const FovMask* fov) {
    if (fov && (fov->width() != map.width() || fov->height() != map.height()))
        throw Error(ErrorCode::BadParams, "FOV mask dimensions do not match the map");
    VesselMask mask(map.width(), map.height(), 0);
    if (method.is_otsu()) {
        const int k = otsu_bin(map, fov);
        if (k < 0) return mask;
        for (std::size_t i = 0; i < map.size(); ++i) {
            const double v = map.values()[i];
            mask.values()[i] = v > 0.0 && histogram_bin(v) > k && (!fov || fov->values()[i]);
        }
    } else {
        for (std::size_t i = 0; i < map.size(); ++i)
            mask.values()[i] = map.values()[i] > method.threshold() && (!fov || fov->values()[i]);
    }
    return mask;
}

} // namespace

VesselMask binarize(const VesselnessMap& map, const BinarizeMethod& method) {
    return binarize_impl(map, method, nullptr);
}

VesselMask binarize(const VesselnessMap& map, const BinarizeMethod& method, const FovMask& fov) {
    return binarize_impl(map, method, &fov);
}

VesselMask cleanup(const VesselMask& mask, int min_component_px) {
    if (min_component_px < 1) throw Error(ErrorCode::BadParams, "min_component_px must be >= 1");
    Plane<int> labels;
    const int n = label_components(mask, true, labels);
    std::vector<int> area(static_cast<std::size_t>(n) + 1, 0);
    for (int id : labels.values()) ++area[static_cast<std::size_t>(id)];

    VesselMask out(mask.width(), mask.height(), 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const int id = labels.values()[i];
        out.values()[i] = id != 0 && area[static_cast<std::size_t>(id)] >= min_component_px;
    }

    // Filled pixels can complete a neighbouring hole, so repeat to a fixed point.
    for (bool changed = true; changed;) {
        changed = false;
        std::vector<Point> fill;
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x)
                if (!out(x, y) && neighbor_count(out, x, y) >= 7) fill.push_back({x, y});
        for (const Point& p : fill) out[p] = 1;
        changed = !fill.empty();
    }
    return out;
}

int default_min_component_px(int image_width) {
    return std::max(1, static_cast<int>(std::lround(30.0 * image_width / 512.0)));
}

} // namespace fundus::vessels
