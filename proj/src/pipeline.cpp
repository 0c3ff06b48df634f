#include "fundus/pipeline.hpp"

#include "fundus/error.hpp"

#include <optional>

namespace fundus::pipeline {

using grading::json;

namespace {

bool is_validation_error(const Error& e) {
    return e.code() == ErrorCode::OutOfRange || e.code() == ErrorCode::MissingField;
}

bool is_mask_adapter(const grading::AdapterSpec& spec) {
    return spec.expected_kinds.count(grading::AdapterKind::vessel_mask) &&
           !spec.expected_kinds.count(grading::AdapterKind::grading);
}

} // namespace

VesselAnalysis analyze_vessels(const imaging::FundusImage& image, const PipelineConfig& config,
                               const vessels::VesselMask* external_mask) {
    VesselAnalysis out;
    out.fov = imaging::detect_fov_mask(image, config.fov_threshold);
    const int min_component = config.min_component_px.value_or(vessels::default_min_component_px(image.width));
    const double min_arc = config.min_arc_px.value_or(skeleton::default_min_arc_px(image.width));

    vessels::VesselMask raw;
    if (external_mask) {
        if (external_mask->width() != image.width || external_mask->height() != image.height)
            throw Error(ErrorCode::BadParams, "external vessel mask size does not match the image");
        raw = *external_mask;
        out.vesselness = vessels::VesselnessMap(image.width, image.height, 0.0);
    } else {
        const auto gray = imaging::normalize_illumination(imaging::extract_green_channel(image),
                                                          config.clahe_tile, config.clahe_clip);
        out.vesselness = vessels::vesselness(gray, config.vesselness, out.fov);
        const auto method = config.fixed_threshold ? vessels::BinarizeMethod::fixed(*config.fixed_threshold)
                                                   : vessels::BinarizeMethod::otsu();
        raw = vessels::binarize(out.vesselness, method, out.fov);
    }
    out.mask = vessels::cleanup(raw, min_component);
    // Hole filling may touch the FOV rim.
    for (std::size_t i = 0; i < out.mask.size(); ++i)
        if (!out.fov.values()[i]) out.mask.values()[i] = 0;

    out.skeleton = skeleton::skeletonize(out.mask);
    out.graph = skeleton::extract_graph(out.skeleton);
    out.report = skeleton::tortuosity_report(out.graph, min_arc);
    return out;
}

grading::GradingMetrics grade_image(const imaging::FundusImage& image, const std::filesystem::path& image_path,
                                    const grading::AdapterRegistry& adapters,
                                    const std::vector<std::string>& adapter_ids) {
    std::vector<const grading::AdapterSpec*> graders;
    bool stub_listed = false;
    for (const auto& id : adapter_ids) {
        if (id == grading::kStubAdapterId) {
            stub_listed = true;
            graders.push_back(nullptr);
            continue;
        }
        const auto* spec = adapters.find(id);
        if (!spec) throw Error(ErrorCode::BadParams, "unknown adapter " + id);
        if (!is_mask_adapter(*spec)) graders.push_back(spec);
    }
    if (graders.empty() && !stub_listed) throw Error(ErrorCode::BadParams, "no grading adapter configured");

    std::optional<Error> invalid;
    std::optional<Error> failure;
    for (const auto* spec : graders) {
        if (!spec) return grading::stub_adapter(image);
        try {
            auto metrics = grading::validate_metrics(adapters.run(*spec, image_path));
            metrics.produced_by = spec->id;
            return metrics;
        } catch (const Error& e) {
            if (is_validation_error(e)) {
                if (!invalid) invalid = e;
            } else {
                failure = e;
            }
        }
    }
    if (invalid) throw *invalid;
    throw failure.value_or(Error(ErrorCode::AdapterCrashed, "all adapters failed"));
}

ScanAnalysis analyze_scan(const imaging::FundusImage& image, const std::filesystem::path& image_path,
                          const PipelineConfig& config, const grading::AdapterRegistry& adapters,
                          const std::vector<std::string>& adapter_ids) {
    std::optional<vessels::VesselMask> external;
    std::string mask_source = "builtin";
    bool has_grader = false;
    for (const auto& id : adapter_ids) {
        if (id == grading::kStubAdapterId) {
            has_grader = true;
            continue;
        }
        const auto* spec = adapters.find(id);
        if (!spec) throw Error(ErrorCode::BadParams, "unknown adapter " + id);
        if (!is_mask_adapter(*spec)) {
            has_grader = true;
        } else if (!external) {
            try {
                external = grading::decode_vessel_mask(adapters.run(*spec, image_path), image.width, image.height);
                mask_source = spec->id;
            } catch (const Error&) {
                // fall back to built-in segmentation
            }
        }
    }
    if (!has_grader) throw Error(ErrorCode::BadParams, "no grading adapter configured");

    ScanAnalysis analysis;
    analysis.vessels = analyze_vessels(image, config, external ? &*external : nullptr);
    analysis.vessels.mask_source = mask_source;
    analysis.grading = grade_image(image, image_path, adapters, adapter_ids);
    return analysis;
}

json severity_document(const grading::ScanMetrics& metrics, const grading::TortuosityThresholds& thresholds) {
    json out = json::object();
    for (const auto& mv : grading::flatten(metrics)) {
        if (!mv.value || !grading::has_severity(mv.name)) continue;
        out[std::string(mv.name)] = grading::to_string(grading::severity_level(mv.name, *mv.value, thresholds));
    }
    return out;
}

json analysis_document(const imaging::FundusImage& image, const ScanAnalysis& analysis,
                       const grading::TortuosityThresholds& thresholds) {
    const auto metrics = analysis.metrics();
    json segments = json::array();
    for (const auto& s : analysis.vessels.report.per_segment)
        segments.push_back({{"segment_id", s.segment_id},
                            {"arc_length", s.arc_length},
                            {"chord_length", s.chord_length},
                            {"tortuosity", s.tortuosity}});
    json tort = grading::to_json(metrics.tortuosity);
    tort["min_arc_px"] = analysis.vessels.report.min_arc_px;
    tort["length_weighted_tortuosity"] = analysis.vessels.report.length_weighted_tortuosity
                                             ? json(*analysis.vessels.report.length_weighted_tortuosity)
                                             : json(nullptr);
    tort["per_segment"] = std::move(segments);
    return {
        {"image", {{"source_id", image.source_id}, {"width", image.width}, {"height", image.height}}},
        {"tortuosity", std::move(tort)},
        {"metrics", grading::to_json(analysis.grading)},
        {"severity", severity_document(metrics, thresholds)},
        {"vessel_mask_source", analysis.vessels.mask_source},
    };
}

} // namespace fundus::pipeline
