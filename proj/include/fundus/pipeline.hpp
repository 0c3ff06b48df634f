#pragma once

#include "fundus/adapter.hpp"
#include "fundus/imaging.hpp"
#include "fundus/metrics.hpp"
#include "fundus/skeleton.hpp"
#include "fundus/vesselness.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fundus::pipeline {

struct PipelineConfig {
    double fov_threshold = imaging::kDefaultFovThreshold;
    int clahe_tile = 32;
    double clahe_clip = 2.0;
    vessels::VesselnessParams vesselness;
    /// Otsu when unset.
    std::optional<double> fixed_threshold;
    /// Scaled from the image width when unset.
    std::optional<int> min_component_px;
    std::optional<double> min_arc_px;
};

struct VesselAnalysis {
    imaging::FovMask fov;
    vessels::VesselnessMap vesselness;
    vessels::VesselMask mask;
    skeleton::Skeleton skeleton;
    skeleton::SkeletonGraph graph;
    skeleton::TortuosityReport report;
    /// "builtin", or the id of the adapter that supplied the mask.
    std::string mask_source = "builtin";
};

/// green channel -> illumination normalisation -> vesselness inside the FOV
/// -> binarize -> cleanup -> skeleton -> graph -> tortuosity report.
/// An `external_mask` replaces the vesselness and binarisation stages.
VesselAnalysis analyze_vessels(const imaging::FundusImage& image, const PipelineConfig& config,
                               const vessels::VesselMask* external_mask = nullptr);

struct ScanAnalysis {
    VesselAnalysis vessels;
    grading::GradingMetrics grading;
    [[nodiscard]] grading::ScanMetrics metrics() const {
        return {grading, grading::summarize(vessels.report)};
    }
};

/// Tries the grading adapters among `adapter_ids` in order and returns the
/// first output that validates; vessel-mask adapters are skipped. Throws as
/// analyze_scan does.
grading::GradingMetrics grade_image(const imaging::FundusImage& image, const std::filesystem::path& image_path,
                                    const grading::AdapterRegistry& adapters,
                                    const std::vector<std::string>& adapter_ids);

/// Runs the pipeline plus the listed adapters in order. The first adapter whose
/// output validates supplies the grading; "stub" is built in. Vessel-mask
/// adapters, when listed, replace built-in segmentation; if they fail the
/// built-in path is used.
///
/// Throws the first validation error (OutOfRange / MissingField) if no grading
/// adapter succeeded but at least one produced invalid output, otherwise
/// AdapterCrashed / AdapterTimeout / AdapterBadOutput from the last failure.
ScanAnalysis analyze_scan(const imaging::FundusImage& image, const std::filesystem::path& image_path,
                          const PipelineConfig& config, const grading::AdapterRegistry& adapters,
                          const std::vector<std::string>& adapter_ids);

/// Full JSON document for one analysed image (used by the CLI).
grading::json analysis_document(const imaging::FundusImage& image, const ScanAnalysis& analysis,
                                const grading::TortuosityThresholds& thresholds = {});

/// {"metric": "severity"} for every graded metric with a value.
grading::json severity_document(const grading::ScanMetrics& metrics,
                                const grading::TortuosityThresholds& thresholds = {});

} // namespace fundus::pipeline
