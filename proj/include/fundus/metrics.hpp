#pragma once

#include "fundus/imaging.hpp"
#include "fundus/skeleton.hpp"
#include "fundus/time.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fundus::grading {

using json = nlohmann::json;

struct AmdMetrics {
    int drusen_score = 0;               // 0-2
    int pigmentary_abnormalities = 0;   // 0/1
    int late_amd = 0;                   // 0/1
    int geographic_atrophy = 0;         // 0/1
    int central_geographic_atrophy = 0; // 0/1, implies geographic_atrophy
    int amd_grade = 0;                  // 0-5
    /// The adapter sent no AMD block and zeros were substituted.
    bool defaulted = false;

    friend bool operator==(const AmdMetrics&, const AmdMetrics&) = default;
};

struct GradingMetrics {
    int retinopathy_grade = 0; // 0-3
    int edema_risk = 0;        // 0-2
    int glaucoma_score = 0;    // 0/1
    AmdMetrics amd;
    std::string produced_by;
    std::optional<Timestamp> produced_at;
    /// Unrecognised top-level fields from the adapter document.
    json extras = json::object();

    friend bool operator==(const GradingMetrics&, const GradingMetrics&) = default;
};

/// Headline tortuosity numbers carried with every scan.
struct TortuositySummary {
    std::optional<double> avg_tortuosity;
    std::optional<double> max_tortuosity;
    int segments_used = 0;

    friend bool operator==(const TortuositySummary&, const TortuositySummary&) = default;
};

TortuositySummary summarize(const skeleton::TortuosityReport& report);

struct ScanMetrics {
    GradingMetrics grading;
    TortuositySummary tortuosity;
};

enum class Severity { none = 0, low = 1, moderate = 2, high = 3 };

std::string_view to_string(Severity s) noexcept;
std::optional<Severity> parse_severity(std::string_view s) noexcept;

/// Boundaries between none/low, low/moderate and moderate/high.
struct TortuosityThresholds {
    double low = 1.10;
    double moderate = 1.25;
    double high = 1.45;
};

/// Every metric a scan reports, in report order.
inline constexpr std::array<std::string_view, 12> kMetricNames{
    "avg_tortuosity",
    "max_tortuosity",
    "segments_used",
    "retinopathy_grade",
    "edema_risk",
    "glaucoma_score",
    "drusen_score",
    "pigmentary_abnormalities",
    "late_amd",
    "geographic_atrophy",
    "central_geographic_atrophy",
    "amd_grade",
};

/// False for counts such as segments_used that carry no severity.
bool has_severity(std::string_view metric_name) noexcept;

/// Fixed per-metric mapping. Throws UnknownMetric for names without a
/// severity, OutOfRange for values outside a graded metric's range.
Severity severity_level(std::string_view metric_name, double value,
                        const TortuosityThresholds& thresholds = {});

struct MetricValue {
    std::string_view name;
    /// Absent for tortuosity when no segment qualified.
    std::optional<double> value;
};

std::vector<MetricValue> flatten(const ScanMetrics& metrics);

/// Worst severity across all graded metrics that have a value.
Severity worst_severity(const ScanMetrics& metrics, const TortuosityThresholds& thresholds = {});

/// Enforces the wire schema. Throws MissingField for any of the three core
/// scores, OutOfRange (with field()) for values outside their range or of the
/// wrong type. A missing `amd` block becomes zeros with `defaulted` set.
GradingMetrics validate_metrics(const json& raw);

/// Wire form accepted back by validate_metrics.
json to_json(const GradingMetrics& metrics);
json to_json(const TortuositySummary& summary);
TortuositySummary tortuosity_from_json(const json& j);

/// Deterministic stand-in model: every field is derived from the image's
/// content hash and reduced into its legal range.
GradingMetrics stub_adapter(const imaging::FundusImage& image);

} // namespace fundus::grading
