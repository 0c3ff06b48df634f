#include "fundus/interpretation.hpp"

#include "fundus/disclaimer.hpp"
#include "fundus/error.hpp"

#include <httplib.h>

#include <chrono>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <sstream>
#include <thread>

namespace fundus::interpret {

namespace {

using grading::json;
using grading::Severity;

std::string value_text(double v) {
    if (std::floor(v) == v && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
    std::ostringstream out;
    out.precision(4);
    out << std::fixed << v;
    return out.str();
}

std::string severity_of(const grading::MetricValue& mv, const grading::TortuosityThresholds& thresholds) {
    if (!grading::has_severity(mv.name) || !mv.value) return "n/a";
    return std::string(grading::to_string(grading::severity_level(mv.name, *mv.value, thresholds)));
}

std::string metric_line(const grading::MetricValue& mv, const grading::TortuosityThresholds& thresholds) {
    return std::string(mv.name) + ": " + (mv.value ? value_text(*mv.value) : "not measured") + " (" +
           severity_of(mv, thresholds) + ")";
}

bool usable_locale(std::string_view locale) {
    static const std::regex tag("[A-Za-z]{2,8}([-_][A-Za-z0-9]{1,8})*");
    return locale.size() <= 35 && std::regex_match(locale.begin(), locale.end(), tag);
}

struct ParsedUrl {
    std::string origin;
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    static const std::regex pattern(R"((https?)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:]+\])(:[0-9]{1,5})?(/[^\s]*)?)");
    std::smatch m;
    if (!std::regex_match(url, m, pattern))
        throw Error(ErrorCode::BadParams, "interpretation endpoint is not an http(s) URL", "url");
    return {m[1].str() + "://" + m[2].str() + m[3].str(), m[4].matched ? m[4].str() : "/"};
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size()))
        ++n;
    return n;
}

std::string_view condition_sentence(std::string_view metric) {
    if (metric == "retinopathy_grade")
        return "Diabetic retinopathy: damage to the small blood vessels of the retina associated with diabetes.";
    if (metric == "edema_risk")
        return "Macular edema: fluid collecting in the central retina, which can blur central vision.";
    if (metric == "glaucoma_score")
        return "Glaucoma: damage to the optic nerve, often linked to raised pressure inside the eye.";
    if (metric == "drusen_score")
        return "Drusen: deposits beneath the retina that are an early marker of age-related macular degeneration.";
    if (metric == "pigmentary_abnormalities")
        return "Pigmentary changes: irregular retinal pigment, a risk marker for age-related macular degeneration.";
    if (metric == "late_amd")
        return "Late age-related macular degeneration: an advanced stage that can affect central vision.";
    if (metric == "geographic_atrophy")
        return "Geographic atrophy: loss of retinal cells in patches, a form of advanced macular degeneration.";
    if (metric == "central_geographic_atrophy")
        return "Central geographic atrophy: cell loss that involves the centre of the macula.";
    if (metric == "amd_grade")
        return "Age-related macular degeneration: the overall grade points to changes in the macula.";
    return "Vessel tortuosity: unusually curved retinal vessels, which have been associated with high blood "
           "pressure, diabetes and other vascular conditions.";
}

std::string_view action_text(Severity worst) {
    switch (worst) {
    case Severity::none:
        return "Continue routine monitoring: repeat the scan at your usual interval and keep regular eye "
               "examinations.";
    case Severity::low:
        return "Continue routine monitoring, and mention these results at your next regular eye examination.";
    case Severity::moderate:
        return "Arrange an appointment with an eye care professional in the coming weeks to review these "
               "results.";
    case Severity::high:
        return "Contact an eye care professional promptly to review these results, and seek urgent care if your "
               "vision changes suddenly.";
    }
    return "";
}

} // namespace

std::string_view to_string(Source s) noexcept { return s == Source::remote ? "remote" : "fallback"; }

std::string build_prompt(const grading::ScanMetrics& metrics, std::string_view locale,
                         const grading::TortuosityThresholds& thresholds) {
    const std::string_view lang = usable_locale(locale) ? locale : "en";
    std::string out =
        "You are helping a person understand the results of an automated analysis of a photograph of the back "
        "of their eye. Each result below is given as name: value (severity).\n\nResults:\n";
    for (const auto& mv : grading::flatten(metrics)) out += "- " + metric_line(mv, thresholds) + "\n";
    out += "\nRespond in exactly three parts, in this order:\n"
           "1. A bullet point summary interpreting each result.\n"
           "2. A brief summary of the pertinent medical conditions.\n"
           "3. Suggested courses of action.\n\n"
           "Write for a reader without medical training, in the language with locale tag ";
    out.append(lang);
    out += ". Do not present yourself as a medical professional.\n";
    return out;
}

InterpretationRequest make_request(const grading::ScanMetrics& metrics, std::string_view locale,
                                   const grading::TortuosityThresholds& thresholds) {
    return {metrics, usable_locale(locale) ? std::string(locale) : "en", build_prompt(metrics, locale, thresholds)};
}

std::string ensure_disclaimer(std::string text) {
    if (count_occurrences(text, kDisclaimer) == 1) return text;
    for (auto pos = text.find(kDisclaimer); pos != std::string::npos; pos = text.find(kDisclaimer))
        text.erase(pos, kDisclaimer.size());
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
    if (!text.empty()) text += "\n\n";
    text.append(kDisclaimer);
    return text;
}

void Endpoint::validate() const {
    parse_url(url);
    if (model.empty()) throw Error(ErrorCode::BadParams, "model name is empty", "model");
    if (!(timeout_seconds > 0.0) || timeout_seconds > 600.0)
        throw Error(ErrorCode::BadParams, "timeout must lie in (0, 600] seconds", "timeout");
    if (max_retries < 0 || max_retries > 2) throw Error(ErrorCode::BadParams, "retries must lie in 0-2", "retries");
    if (max_in_flight < 1) throw Error(ErrorCode::BadParams, "in-flight cap must be at least 1", "max_in_flight");
}

InterpretationResult request_interpretation(const Endpoint& endpoint, const InterpretationRequest& request) {
    endpoint.validate();
    if (request.prompt_text.empty()) throw Error(ErrorCode::BadParams, "prompt is empty", "prompt_text");
    const ParsedUrl url = parse_url(endpoint.url);
    const json body = {{"model", endpoint.model},
                       {"messages", json::array({{{"role", "user"}, {"content", request.prompt_text}}})}};
    httplib::Headers headers;
    if (!endpoint.credential_env.empty())
        if (const char* key = std::getenv(endpoint.credential_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);

    const auto timeout = std::chrono::duration<double>(endpoint.timeout_seconds);
    const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
    Error last(ErrorCode::EndpointUnreachable, "no attempt made");
    for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 * attempt));
        httplib::Client client(url.origin);
        client.set_connection_timeout(timeout_us);
        client.set_read_timeout(timeout_us);
        client.set_write_timeout(timeout_us);
        const auto start = std::chrono::steady_clock::now();
        const auto res = client.Post(url.path, headers, body.dump(), "application/json");
        if (!res) {
            const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                                   std::chrono::steady_clock::now() - start >= timeout * 0.95;
            last = timed_out ? Error(ErrorCode::Timeout, "interpretation endpoint timed out")
                             : Error(ErrorCode::EndpointUnreachable,
                                     "interpretation endpoint unreachable: " + httplib::to_string(res.error()));
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            last = Error(ErrorCode::EndpointError, "interpretation endpoint returned " + std::to_string(res->status));
            if (res->status >= 400 && res->status < 500 && res->status != 429) break;
            continue;
        }
        std::string text;
        try {
            text = json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception&) {
            throw Error(ErrorCode::EndpointError, "interpretation response carries no completion text");
        }
        if (text.empty()) throw Error(ErrorCode::EndpointError, "interpretation completion is empty");
        return {ensure_disclaimer(std::move(text)), Source::remote, true, {}};
    }
    throw last;
}

InterpretationResult fallback_interpretation(const grading::ScanMetrics& metrics,
                                             const grading::TortuosityThresholds& thresholds) {
    const auto values = grading::flatten(metrics);
    std::string out = "Your scan results:\n";
    std::string conditions;
    bool tortuosity_noted = false;
    for (const auto& mv : values) {
        out += "- " + std::string(mv.name) + ": ";
        if (!mv.value) {
            out += "not measured.\n";
            continue;
        }
        out += value_text(*mv.value);
        if (!grading::has_severity(mv.name)) {
            out += " (vessel segments measured).\n";
            continue;
        }
        const Severity s = grading::severity_level(mv.name, *mv.value, thresholds);
        out += ", severity " + std::string(grading::to_string(s)) + ".\n";
        if (s < Severity::moderate) continue;
        const bool tortuosity = mv.name.find("tortuosity") != std::string_view::npos;
        if (tortuosity && tortuosity_noted) continue;
        tortuosity_noted = tortuosity_noted || tortuosity;
        conditions += "- ";
        conditions.append(condition_sentence(mv.name));
        conditions += "\n";
    }
    out += "\nConditions to be aware of:\n";
    out += conditions.empty() ? "- No result reached a moderate or high level.\n" : conditions;
    out += "\nSuggested next steps:\n- ";
    out.append(action_text(grading::worst_severity(metrics, thresholds)));
    out += "\n";
    return {ensure_disclaimer(std::move(out)), Source::fallback, true, {}};
}

InterpretationClient::InterpretationClient(std::optional<Endpoint> endpoint, grading::TortuosityThresholds thresholds)
    : endpoint_(std::move(endpoint)), thresholds_(thresholds), gate_(std::make_unique<Gate>()) {
    if (endpoint_) {
        endpoint_->validate();
        gate_->available = endpoint_->max_in_flight;
    }
}

InterpretationResult InterpretationClient::interpret(const grading::ScanMetrics& metrics,
                                                     std::string_view locale) const {
    if (!endpoint_) {
        auto result = fallback_interpretation(metrics, thresholds_);
        result.fallback_reason = "no interpretation endpoint configured";
        return result;
    }
    {
        std::unique_lock lock(gate_->mutex);
        gate_->cv.wait(lock, [&] { return gate_->available > 0; });
        --gate_->available;
    }
    struct Release {
        Gate& g;
        ~Release() {
            {
                std::lock_guard lock(g.mutex);
                ++g.available;
            }
            g.cv.notify_one();
        }
    } release{*gate_};
    try {
        return request_interpretation(*endpoint_, make_request(metrics, locale, thresholds_));
    } catch (const Error& e) {
        auto result = fallback_interpretation(metrics, thresholds_);
        result.fallback_reason = std::string(fundus::to_string(e.code())) + ": " + e.what();
        return result;
    }
}

} // namespace fundus::interpret
