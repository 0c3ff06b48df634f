#pragma once

#include <string_view>

namespace fundus {

inline constexpr std::string_view kDisclaimer =
    "This interpretation is automatically generated and does not represent a medical professional. "
    "Consult a qualified clinician for diagnosis.";

} // namespace fundus
