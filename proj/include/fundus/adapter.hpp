#pragma once

#include "fundus/metrics.hpp"
#include "fundus/vesselness.hpp"

#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace fundus::grading {

enum class AdapterKind { grading, vessel_mask };

std::string_view to_string(AdapterKind kind) noexcept;

/// An external model process. Each `command` element may contain the
/// placeholder "{image}", replaced by the image path at launch. The process
/// must print one JSON document on stdout and exit 0.
struct AdapterSpec {
    std::string id;
    std::vector<std::string> command;
    double timeout_seconds = 60.0;
    std::set<AdapterKind> expected_kinds{AdapterKind::grading};
    int max_concurrency = 2;

    /// Throws BadParams: empty id or command, timeout outside [1, 600].
    void validate() const;
};

/// Id of the built-in deterministic adapter.
inline constexpr std::string_view kStubAdapterId = "stub";

/// Launches the adapter and returns its parsed stdout. The child runs in its
/// own process group, which is killed once the timeout elapses.
/// Throws AdapterTimeout, AdapterCrashed (non-zero exit or failed exec),
/// AdapterBadOutput (stdout is not a single JSON document), Io (missing image).
json run_adapter(const AdapterSpec& spec, const std::filesystem::path& image_path);

/// Decodes a {"kind": "vessel_mask", "mask_png_base64": ...} response.
/// Throws AdapterBadOutput on a malformed payload or a size mismatch.
vessels::VesselMask decode_vessel_mask(const json& response, int width, int height);

/// Runs configured adapters with a per-adapter cap on concurrent launches.
class AdapterRegistry {
public:
    AdapterRegistry() = default;
    explicit AdapterRegistry(std::vector<AdapterSpec> specs);

    [[nodiscard]] const std::vector<AdapterSpec>& specs() const noexcept { return specs_; }
    [[nodiscard]] const AdapterSpec* find(std::string_view id) const;

    /// run_adapter gated by the adapter's max_concurrency.
    json run(const AdapterSpec& spec, const std::filesystem::path& image_path) const;

private:
    struct Gate {
        std::mutex mutex;
        std::condition_variable cv;
        int available = 0;
    };

    std::vector<AdapterSpec> specs_;
    std::map<std::string, std::unique_ptr<Gate>, std::less<>> gates_;
};

} // namespace fundus::grading
