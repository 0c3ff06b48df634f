#pragma once

#include "fundus/imaging.hpp"
#include "fundus/raster.hpp"

#include <cstdint>
#include <vector>

namespace fundus::vessels {

struct VesselTag;
struct VesselnessTag;

using VesselMask = Plane<std::uint8_t, VesselTag>;
using VesselnessMap = Plane<double, VesselnessTag>;

struct VesselnessParams {
    std::vector<double> scales{1.0, 2.0, 3.0, 4.0};
    double beta = 0.5;
    double c = 15.0;
    /// Vessels are darker than the background (fundus photographs).
    bool invert = true;

    /// Throws BadParams.
    void validate() const;
};

/// Per-pixel Hessian eigenvalues ordered so that |small| <= |large|.
struct HessianEigen {
    Plane<double> small;
    Plane<double> large;
};

/// Eigenvalues of the Gaussian-derivative Hessian at `sigma`, multiplied by
/// sigma^2. Kernels are truncated at 4 sigma with mirrored borders.
/// Throws BadParams for sigma < 0.5 or an image smaller than 4 sigma.
HessianEigen hessian_eigen_at_scale(const imaging::GrayImage& gray, double sigma);

/// Multiscale ridge response, rescaled so the image maximum is 1.
///
/// With `invert` the eigenvalues are negated first, so dark vessels look like
/// bright ridges; a pixel whose larger eigenvalue is then positive scores 0.
/// Otherwise V = exp(-Rb^2 / 2 beta^2) * (1 - exp(-S^2 / 2 c^2)), with
/// Rb = |l1| / |l2| and S the Frobenius norm measured on a 0..255 intensity
/// scale. The response is the maximum over scales.
VesselnessMap vesselness(const imaging::GrayImage& gray, const VesselnessParams& params);
VesselnessMap vesselness(const imaging::GrayImage& gray, const VesselnessParams& params,
                         const imaging::FovMask& fov);

class BinarizeMethod {
public:
    static BinarizeMethod otsu() { return BinarizeMethod(true, 0.0); }
    /// Throws BadParams unless t lies in (0, 1).
    static BinarizeMethod fixed(double t);

    [[nodiscard]] bool is_otsu() const noexcept { return otsu_; }
    [[nodiscard]] double threshold() const noexcept { return threshold_; }

private:
    BinarizeMethod(bool otsu, double t) : otsu_(otsu), threshold_(t) {}
    bool otsu_;
    double threshold_;
};

inline constexpr int kHistogramBins = 256;

/// Histogram bin of a value in [0, 1].
int histogram_bin(double value) noexcept;

/// Otsu split over a 256-bin histogram of the map's nonzero values (inside
/// `fov` when given). Returns the lowest bin k maximising between-class
/// variance; pixels in bins above k are foreground. Returns -1 when there are
/// no nonzero values.
int otsu_bin(const VesselnessMap& map, const imaging::FovMask* fov = nullptr);

/// Otsu: on iff histogram_bin(v) > otsu_bin. Fixed: on iff v > t.
VesselMask binarize(const VesselnessMap& map, const BinarizeMethod& method);
VesselMask binarize(const VesselnessMap& map, const BinarizeMethod& method,
                    const imaging::FovMask& fov);

/// Drops 8-connected components smaller than `min_component_px`, then fills
/// off pixels having at least 7 of 8 on neighbours until none remain.
/// Throws BadParams for min_component_px < 1.
VesselMask cleanup(const VesselMask& mask, int min_component_px);

/// 30 px at 512 px width, scaled linearly.
int default_min_component_px(int image_width);

} // namespace fundus::vessels
