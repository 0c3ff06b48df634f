#include "fundus/metrics.hpp"

#include "fundus/error.hpp"
#include "fundus/hash.hpp"

#include <algorithm>
#include <cmath>

namespace fundus::grading {

namespace {

struct IntRange {
    std::string_view field;
    int lo;
    int hi;
};

constexpr std::array<IntRange, 3> kCoreFields{{
    {"retinopathy_grade", 0, 3},
    {"edema_risk", 0, 2},
    {"glaucoma_score", 0, 1},
}};

constexpr std::array<IntRange, 6> kAmdFields{{
    {"drusen_score", 0, 2},
    {"pigmentary_abnormalities", 0, 1},
    {"late_amd", 0, 1},
    {"geographic_atrophy", 0, 1},
    {"central_geographic_atrophy", 0, 1},
    {"amd_grade", 0, 5},
}};

constexpr std::array<std::string_view, 7> kKnownTopLevel{
    "retinopathy_grade", "edema_risk", "glaucoma_score", "amd", "produced_by", "produced_at", "kind",
};

std::string describe(const json& v) { return v.dump(); }

int read_int(const json& v, const IntRange& range, const std::string& path) {
    long long n = 0;
    if (v.is_number_integer()) {
        n = v.get<long long>();
    } else if (v.is_number_float() && std::isfinite(v.get<double>()) &&
               std::floor(v.get<double>()) == v.get<double>() && std::abs(v.get<double>()) < 1e9) {
        n = static_cast<long long>(v.get<double>());
    } else {
        throw Error(ErrorCode::OutOfRange, path + " must be an integer, got " + describe(v), path);
    }
    if (n < range.lo || n > range.hi)
        throw Error(ErrorCode::OutOfRange,
                    path + " = " + std::to_string(n) + " outside " + std::to_string(range.lo) + "-" +
                        std::to_string(range.hi),
                    path);
    return static_cast<int>(n);
}

int& amd_field(AmdMetrics& amd, std::string_view name) {
    if (name == "drusen_score") return amd.drusen_score;
    if (name == "pigmentary_abnormalities") return amd.pigmentary_abnormalities;
    if (name == "late_amd") return amd.late_amd;
    if (name == "geographic_atrophy") return amd.geographic_atrophy;
    if (name == "central_geographic_atrophy") return amd.central_geographic_atrophy;
    return amd.amd_grade;
}

int& core_field(GradingMetrics& m, std::string_view name) {
    if (name == "retinopathy_grade") return m.retinopathy_grade;
    if (name == "edema_risk") return m.edema_risk;
    return m.glaucoma_score;
}

Severity discrete_severity(std::string_view name, double value) {
    if (std::floor(value) != value)
        throw Error(ErrorCode::OutOfRange, std::string(name) + " must be an integer", std::string(name));
    const int v = static_cast<int>(value);
    auto table = [&](std::initializer_list<Severity> levels) {
        if (v < 0 || v >= static_cast<int>(levels.size()))
            throw Error(ErrorCode::OutOfRange,
                        std::string(name) + " = " + std::to_string(v) + " is outside its range",
                        std::string(name));
        return *(levels.begin() + v);
    };
    using S = Severity;
    if (name == "retinopathy_grade") return table({S::none, S::low, S::moderate, S::high});
    if (name == "edema_risk") return table({S::none, S::moderate, S::high});
    if (name == "glaucoma_score") return table({S::none, S::high});
    if (name == "drusen_score") return table({S::none, S::low, S::moderate});
    if (name == "pigmentary_abnormalities") return table({S::none, S::moderate});
    if (name == "late_amd") return table({S::none, S::high});
    if (name == "geographic_atrophy") return table({S::none, S::high});
    if (name == "central_geographic_atrophy") return table({S::none, S::high});
    if (name == "amd_grade") return table({S::none, S::low, S::low, S::moderate, S::moderate, S::high});
    throw Error(ErrorCode::UnknownMetric, "unknown metric " + std::string(name), std::string(name));
}

} // namespace

TortuositySummary summarize(const skeleton::TortuosityReport& report) {
    return {report.average_tortuosity, report.max_tortuosity, report.segments_used};
}

std::string_view to_string(Severity s) noexcept {
    switch (s) {
    case Severity::none: return "none";
    case Severity::low: return "low";
    case Severity::moderate: return "moderate";
    case Severity::high: return "high";
    }
    return "none";
}

std::optional<Severity> parse_severity(std::string_view s) noexcept {
    for (auto level : {Severity::none, Severity::low, Severity::moderate, Severity::high})
        if (to_string(level) == s) return level;
    return std::nullopt;
}

bool has_severity(std::string_view metric_name) noexcept {
    return metric_name != "segments_used" &&
           std::find(kMetricNames.begin(), kMetricNames.end(), metric_name) != kMetricNames.end();
}

Severity severity_level(std::string_view metric_name, double value,
                        const TortuosityThresholds& thresholds) {
    if (!has_severity(metric_name))
        throw Error(ErrorCode::UnknownMetric, "no severity for metric " + std::string(metric_name),
                    std::string(metric_name));
    if (!std::isfinite(value))
        throw Error(ErrorCode::OutOfRange, "non-finite metric value", std::string(metric_name));
    if (metric_name == "avg_tortuosity" || metric_name == "max_tortuosity") {
        if (value >= thresholds.high) return Severity::high;
        if (value >= thresholds.moderate) return Severity::moderate;
        if (value >= thresholds.low) return Severity::low;
        return Severity::none;
    }
    return discrete_severity(metric_name, value);
}

std::vector<MetricValue> flatten(const ScanMetrics& m) {
    const GradingMetrics& g = m.grading;
    return {
        {"avg_tortuosity", m.tortuosity.avg_tortuosity},
        {"max_tortuosity", m.tortuosity.max_tortuosity},
        {"segments_used", static_cast<double>(m.tortuosity.segments_used)},
        {"retinopathy_grade", g.retinopathy_grade},
        {"edema_risk", g.edema_risk},
        {"glaucoma_score", g.glaucoma_score},
        {"drusen_score", g.amd.drusen_score},
        {"pigmentary_abnormalities", g.amd.pigmentary_abnormalities},
        {"late_amd", g.amd.late_amd},
        {"geographic_atrophy", g.amd.geographic_atrophy},
        {"central_geographic_atrophy", g.amd.central_geographic_atrophy},
        {"amd_grade", g.amd.amd_grade},
    };
}

Severity worst_severity(const ScanMetrics& metrics, const TortuosityThresholds& thresholds) {
    Severity worst = Severity::none;
    for (const auto& mv : flatten(metrics)) {
        if (!mv.value || !has_severity(mv.name)) continue;
        worst = std::max(worst, severity_level(mv.name, *mv.value, thresholds));
    }
    return worst;
}

GradingMetrics validate_metrics(const json& raw) {
    if (!raw.is_object()) throw Error(ErrorCode::MissingField, "metrics document is not an object");
    GradingMetrics m;
    for (const auto& f : kCoreFields) {
        const std::string key(f.field);
        if (!raw.contains(key) || raw.at(key).is_null())
            throw Error(ErrorCode::MissingField, "missing required field " + key, key);
        core_field(m, f.field) = read_int(raw.at(key), f, key);
    }

    if (!raw.contains("amd") || raw.at("amd").is_null()) {
        m.amd.defaulted = true;
    } else {
        const json& amd = raw.at("amd");
        if (!amd.is_object()) throw Error(ErrorCode::OutOfRange, "amd must be an object", "amd");
        for (const auto& f : kAmdFields) {
            const std::string key(f.field);
            if (amd.contains(key) && !amd.at(key).is_null())
                amd_field(m.amd, f.field) = read_int(amd.at(key), f, "amd." + key);
        }
        if (amd.contains("provenance")) {
            const json& p = amd.at("provenance");
            if (!p.is_string() || (p != "defaulted" && p != "adapter"))
                throw Error(ErrorCode::OutOfRange, "amd.provenance must be \"adapter\" or \"defaulted\"",
                            "amd.provenance");
            m.amd.defaulted = p == "defaulted";
        }
        if (m.amd.central_geographic_atrophy == 1 && m.amd.geographic_atrophy != 1)
            throw Error(ErrorCode::OutOfRange,
                        "amd.central_geographic_atrophy = 1 requires amd.geographic_atrophy = 1",
                        "amd.central_geographic_atrophy");
    }

    if (raw.contains("produced_by")) {
        if (!raw.at("produced_by").is_string())
            throw Error(ErrorCode::OutOfRange, "produced_by must be a string", "produced_by");
        m.produced_by = raw.at("produced_by").get<std::string>();
    }
    if (raw.contains("produced_at") && !raw.at("produced_at").is_null()) {
        const json& t = raw.at("produced_at");
        auto parsed = t.is_string() ? parse_timestamp(t.get<std::string>()) : std::nullopt;
        if (!parsed) throw Error(ErrorCode::OutOfRange, "produced_at must be an ISO-8601 UTC time", "produced_at");
        m.produced_at = *parsed;
    }

    for (const auto& [key, value] : raw.items())
        if (std::find(kKnownTopLevel.begin(), kKnownTopLevel.end(), key) == kKnownTopLevel.end())
            m.extras[key] = value;
    return m;
}

json to_json(const GradingMetrics& m) {
    json j = m.extras.is_object() ? m.extras : json::object();
    j["retinopathy_grade"] = m.retinopathy_grade;
    j["edema_risk"] = m.edema_risk;
    j["glaucoma_score"] = m.glaucoma_score;
    j["amd"] = {
        {"drusen_score", m.amd.drusen_score},
        {"pigmentary_abnormalities", m.amd.pigmentary_abnormalities},
        {"late_amd", m.amd.late_amd},
        {"geographic_atrophy", m.amd.geographic_atrophy},
        {"central_geographic_atrophy", m.amd.central_geographic_atrophy},
        {"amd_grade", m.amd.amd_grade},
        {"provenance", m.amd.defaulted ? "defaulted" : "adapter"},
    };
    j["produced_by"] = m.produced_by;
    if (m.produced_at) j["produced_at"] = format_timestamp(*m.produced_at);
    return j;
}

json to_json(const TortuositySummary& s) {
    json j;
    j["avg_tortuosity"] = s.avg_tortuosity ? json(*s.avg_tortuosity) : json(nullptr);
    j["max_tortuosity"] = s.max_tortuosity ? json(*s.max_tortuosity) : json(nullptr);
    j["segments_used"] = s.segments_used;
    return j;
}

TortuositySummary tortuosity_from_json(const json& j) {
    TortuositySummary s;
    if (j.contains("avg_tortuosity") && !j.at("avg_tortuosity").is_null())
        s.avg_tortuosity = j.at("avg_tortuosity").get<double>();
    if (j.contains("max_tortuosity") && !j.at("max_tortuosity").is_null())
        s.max_tortuosity = j.at("max_tortuosity").get<double>();
    s.segments_used = j.value("segments_used", 0);
    return s;
}

GradingMetrics stub_adapter(const imaging::FundusImage& image) {
    std::string digest = image.source_id;
    if (digest.size() < 16) {
        std::vector<std::uint8_t> content(image.pixels);
        for (int v : {image.width, image.height})
            for (int shift = 0; shift < 32; shift += 8)
                content.push_back(static_cast<std::uint8_t>((v >> shift) & 0xFF));
        digest = sha256_hex(content);
    }
    auto byte_at = [&](std::size_t i) {
        return std::stoi(digest.substr((2 * i) % (digest.size() - 1), 2), nullptr, 16);
    };
    GradingMetrics m;
    m.retinopathy_grade = byte_at(0) % 4;
    m.edema_risk = byte_at(1) % 3;
    m.glaucoma_score = byte_at(2) % 2;
    m.amd.drusen_score = byte_at(3) % 3;
    m.amd.pigmentary_abnormalities = byte_at(4) % 2;
    m.amd.late_amd = byte_at(5) % 2;
    m.amd.geographic_atrophy = byte_at(6) % 2;
    m.amd.central_geographic_atrophy = m.amd.geographic_atrophy ? byte_at(7) % 2 : 0;
    m.amd.amd_grade = byte_at(8) % 6;
    m.produced_by = "stub";
    return m;
}

} // namespace fundus::grading
