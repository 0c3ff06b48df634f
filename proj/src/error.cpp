#include "fundus/error.hpp"

namespace fundus {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptData: return "CorruptData";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::DegenerateChord: return "DegenerateChord";
    case ErrorCode::AdapterTimeout: return "AdapterTimeout";
    case ErrorCode::AdapterCrashed: return "AdapterCrashed";
    case ErrorCode::AdapterBadOutput: return "AdapterBadOutput";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::UnknownMetric: return "UnknownMetric";
    case ErrorCode::UnknownUser: return "UnknownUser";
    case ErrorCode::UnknownScan: return "UnknownScan";
    case ErrorCode::DuplicateScan: return "DuplicateScan";
    case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::EndpointError: return "EndpointError";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

} // namespace fundus
