#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace fundus {

/// All persisted and compared times are UTC with one-second resolution.
using Timestamp = std::chrono::sys_seconds;

/// "2026-03-01T08:30:00Z"
std::string format_timestamp(Timestamp t);

/// Accepts "YYYY-MM-DDTHH:MM:SSZ" (a trailing "+00:00" is also accepted).
std::optional<Timestamp> parse_timestamp(std::string_view text);

Timestamp now_utc();

} // namespace fundus
