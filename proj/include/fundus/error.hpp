#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fundus {

enum class ErrorCode {
    UnsupportedFormat,
    CorruptData,
    TooSmall,
    BadParams,
    DegenerateChord,
    AdapterTimeout,
    AdapterCrashed,
    AdapterBadOutput,
    OutOfRange,
    MissingField,
    UnknownMetric,
    UnknownUser,
    UnknownScan,
    DuplicateScan,
    EndpointUnreachable,
    EndpointError,
    Timeout,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Library-wide exception. `field` is filled for validation failures.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string field = {})
        : std::runtime_error(message), code_(code), field_(std::move(field)) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }
    [[nodiscard]] const std::string& field() const noexcept { return field_; }

private:
    ErrorCode code_;
    std::string field_;
};

} // namespace fundus
