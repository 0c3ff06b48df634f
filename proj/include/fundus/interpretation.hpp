#pragma once

#include "fundus/metrics.hpp"

#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace fundus::interpret {

enum class Source { remote, fallback };

std::string_view to_string(Source s) noexcept;

struct InterpretationRequest {
    grading::ScanMetrics metrics;
    std::string locale = "en";
    std::string prompt_text;
};

struct InterpretationResult {
    std::string text;
    Source source = Source::fallback;
    bool disclaimer_included = true;
    /// Why the remote endpoint was not used; empty for remote results.
    std::string fallback_reason;
};

/// Three-part prompt with one "name: value (severity)" line per metric.
/// An unusable locale tag is replaced by "en".
std::string build_prompt(const grading::ScanMetrics& metrics, std::string_view locale = "en",
                         const grading::TortuosityThresholds& thresholds = {});

InterpretationRequest make_request(const grading::ScanMetrics& metrics, std::string_view locale = "en",
                                   const grading::TortuosityThresholds& thresholds = {});

/// Returns `text` containing the disclaimer exactly once, appended at the end
/// unless it already appears exactly once.
std::string ensure_disclaimer(std::string text);

struct Endpoint {
    /// "http://host:port/path" or "https://...".
    std::string url;
    std::string model = "deepseek-chat";
    /// Environment variable holding the bearer credential; unset means none.
    std::string credential_env = "FUNDUS_INTERPRETATION_KEY";
    double timeout_seconds = 20.0;
    /// Retries after the first attempt, at most 2.
    int max_retries = 2;
    int max_in_flight = 4;

    /// Throws BadParams for a malformed URL or out-of-range limits.
    void validate() const;
};

/// Posts {model, messages:[{role:"user", content}]} and returns the first
/// completion. Throws EndpointUnreachable, EndpointError (non-2xx or a body
/// without a completion) or Timeout after the last attempt. Client errors
/// (4xx) are not retried.
InterpretationResult request_interpretation(const Endpoint& endpoint, const InterpretationRequest& request);

/// Deterministic rule-based summary used when no endpoint answers.
InterpretationResult fallback_interpretation(const grading::ScanMetrics& metrics,
                                             const grading::TortuosityThresholds& thresholds = {});

/// Remote interpretation with fallback and a per-endpoint in-flight cap.
class InterpretationClient {
public:
    explicit InterpretationClient(std::optional<Endpoint> endpoint = std::nullopt,
                                  grading::TortuosityThresholds thresholds = {});

    /// Never throws for endpoint failures; they produce a fallback result.
    [[nodiscard]] InterpretationResult interpret(const grading::ScanMetrics& metrics,
                                                 std::string_view locale = "en") const;

    [[nodiscard]] const std::optional<Endpoint>& endpoint() const noexcept { return endpoint_; }

private:
    struct Gate {
        std::mutex mutex;
        std::condition_variable cv;
        int available = 0;
    };

    std::optional<Endpoint> endpoint_;
    grading::TortuosityThresholds thresholds_;
    std::unique_ptr<Gate> gate_;
};

} // namespace fundus::interpret
