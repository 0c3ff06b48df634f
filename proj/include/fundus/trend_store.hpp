#pragma once

#include "fundus/error.hpp"
#include "fundus/metrics.hpp"
#include "fundus/time.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace fundus::trend {

using grading::json;

struct UserProfile {
    std::string user_id;
    std::string display_name;
    Timestamp created_at;

    friend bool operator==(const UserProfile&, const UserProfile&) = default;
};

struct NoteEntry {
    std::string note_id;
    Timestamp at;
    std::string text;

    friend bool operator==(const NoteEntry&, const NoteEntry&) = default;
};

/// In Unicode code points.
inline constexpr std::size_t kMaxNoteLength = 4096;

/// Code points in `text`, or nullopt when it is not valid UTF-8.
std::optional<std::size_t> utf8_length(std::string_view text) noexcept;

struct ScanRecord {
    /// Assigned by the store; derived from (user_id, image_ref, captured_at).
    std::string scan_id;
    std::string user_id;
    Timestamp captured_at;
    /// Content hash of the uploaded image.
    std::string image_ref;
    grading::GradingMetrics metrics;
    grading::TortuositySummary tortuosity;
    std::vector<NoteEntry> notes;
    /// Optional client-chosen retry key.
    std::optional<std::string> idempotency_key;
    Timestamp stored_at;

    [[nodiscard]] grading::ScanMetrics scan_metrics() const { return {metrics, tortuosity}; }
    friend bool operator==(const ScanRecord&, const ScanRecord&) = default;
};

json to_json(const UserProfile& profile);
json to_json(const NoteEntry& note);
json to_json(const ScanRecord& record);
/// Throws CorruptData on a malformed document.
ScanRecord scan_from_json(const json& j);

struct TrendPoint {
    Timestamp at;
    double value = 0.0;
    std::string scan_id;
};

/// Points in strictly increasing time order.
struct TrendSeries {
    std::string metric_name;
    std::vector<TrendPoint> points;
};

enum class Direction { up, down };

struct TrendAlert {
    std::string metric_name;
    Timestamp at;
    double baseline = 0.0;
    double observed = 0.0;
    /// observed - baseline
    double delta = 0.0;
    Direction direction = Direction::up;
    std::string scan_id;
};

json to_json(const TrendAlert& alert);

struct ChangePolicy {
    /// Absolute-delta threshold per metric; metrics not listed never alert.
    std::map<std::string, double, std::less<>> thresholds;
    int baseline_window = 3;

    /// 0.15 for the tortuosity summaries, 1 for every graded score.
    static ChangePolicy defaults();
    /// Throws BadParams for a threshold <= 0 or a window < 1.
    void validate() const;
};

/// For each point after the first, baseline = mean of up to baseline_window
/// immediately preceding values; an alert is raised iff |observed - baseline|
/// >= the metric's threshold.
std::vector<TrendAlert> detect_changes(const TrendSeries& series, const ChangePolicy& policy);

struct DaySummary {
    int day = 0;
    int scan_count = 0;
    grading::Severity worst = grading::Severity::none;
    int alert_count = 0;
};

enum class ReportFormat { json, csv, markdown };

std::optional<ReportFormat> parse_report_format(std::string_view s) noexcept;

/// Thrown by append_scan for a record that is already stored.
class DuplicateScanError : public Error {
public:
    explicit DuplicateScanError(std::string existing_scan_id)
        : Error(ErrorCode::DuplicateScan, "scan already stored as " + existing_scan_id),
          existing_(std::move(existing_scan_id)) {}
    [[nodiscard]] const std::string& existing_scan_id() const noexcept { return existing_; }

private:
    std::string existing_;
};

/// Per-user scan history backed by append-only JSON-lines logs in one
/// directory (users.jsonl, scans.jsonl, notes.jsonl). Every mutation is
/// flushed to disk before it returns. Writers are serialised; readers see a
/// consistent snapshot.
class TrendStore {
public:
    using Clock = std::function<Timestamp()>;

    /// Opens or creates the store. A torn final line (crash mid-append) is
    /// dropped; any other malformed line throws CorruptData.
    explicit TrendStore(std::filesystem::path directory, Clock clock = now_utc);
    ~TrendStore();
    TrendStore(const TrendStore&) = delete;
    TrendStore& operator=(const TrendStore&) = delete;

    /// A random id is generated when `user_id` is empty. Throws BadParams for
    /// an empty or non-UTF-8 display name or a taken id.
    UserProfile create_user(const std::string& display_name, const std::string& credential_hash = {},
                            const std::string& user_id = {});
    [[nodiscard]] std::optional<UserProfile> find_user(std::string_view user_id) const;
    /// Throws UnknownUser.
    [[nodiscard]] std::string credential_hash(std::string_view user_id) const;

    /// Validates and durably stores the record; returns its scan_id.
    /// Throws UnknownUser, OutOfRange (metrics, or captured_at in the future),
    /// DuplicateScanError for a repeated (image_ref, captured_at) or
    /// idempotency key of the same user.
    std::string append_scan(std::string_view user_id, ScanRecord record);

    /// Throws UnknownScan.
    [[nodiscard]] ScanRecord get_scan(std::string_view scan_id) const;

    /// Id of the user's scan stored under a client retry key.
    [[nodiscard]] std::optional<std::string> find_by_idempotency_key(std::string_view user_id,
                                                                     std::string_view key) const;

    /// from <= captured_at <= to, ascending by captured_at then scan_id.
    /// Throws UnknownUser, BadParams when from > to.
    [[nodiscard]] std::vector<ScanRecord> get_history(std::string_view user_id, Timestamp from,
                                                      Timestamp to) const;
    [[nodiscard]] std::vector<ScanRecord> get_history(std::string_view user_id) const;

    /// Values of one metric; of several scans sharing a timestamp only the
    /// first by scan_id contributes. Throws UnknownMetric.
    [[nodiscard]] TrendSeries series(std::string_view user_id, std::string_view metric, Timestamp from,
                                     Timestamp to) const;

    /// Alerts over the whole history whose time falls in [from, to].
    [[nodiscard]] std::vector<TrendAlert> alerts(std::string_view user_id, Timestamp from, Timestamp to,
                                                 const ChangePolicy& policy) const;

    /// One entry per day of the month in local time (UTC + offset).
    /// Throws BadParams for an invalid month or an offset beyond +-14 h.
    [[nodiscard]] std::vector<DaySummary> calendar_view(std::string_view user_id, int year, int month,
                                                        const ChangePolicy& policy,
                                                        const grading::TortuosityThresholds& thresholds = {},
                                                        int utc_offset_minutes = 0) const;

    /// Deterministic bytes for a fixed store state. CSV has one row per
    /// (scan, metric) and carries the profile in its first columns.
    [[nodiscard]] std::string export_report(std::string_view user_id, Timestamp from, Timestamp to,
                                            ReportFormat format, const ChangePolicy& policy,
                                            const grading::TortuosityThresholds& thresholds = {}) const;

    /// Throws UnknownScan when the scan does not exist or belongs to another
    /// user, BadParams for empty text, invalid UTF-8 or more than
    /// kMaxNoteLength code points.
    NoteEntry add_note(std::string_view user_id, std::string_view scan_id, const std::string& text);

    [[nodiscard]] std::size_t scan_count() const;
    [[nodiscard]] const std::filesystem::path& directory() const noexcept { return dir_; }

private:
    struct Log;
    struct UserRow {
        UserProfile profile;
        std::string credential_hash;
    };

    void load();
    void index_scan(ScanRecord record);
    [[nodiscard]] const UserRow& user_row(std::string_view user_id) const;
    [[nodiscard]] std::vector<const ScanRecord*> ordered_scans(std::string_view user_id) const;
    [[nodiscard]] std::vector<TrendAlert> all_alerts(std::string_view user_id, const ChangePolicy& policy) const;

    std::filesystem::path dir_;
    Clock clock_;
    mutable std::shared_mutex mutex_;
    std::unique_ptr<Log> users_log_;
    std::unique_ptr<Log> scans_log_;
    std::unique_ptr<Log> notes_log_;
    std::map<std::string, UserRow, std::less<>> users_;
    std::map<std::string, ScanRecord, std::less<>> scans_;
    /// user -> scan ids ordered by (captured_at, scan_id)
    std::map<std::string, std::vector<std::string>, std::less<>> by_user_;
    std::map<std::string, std::string, std::less<>> dedupe_;
};

/// Scan id for a record: a prefix of SHA-256 over user, image and time.
std::string make_scan_id(std::string_view user_id, std::string_view image_ref, Timestamp captured_at);

} // namespace fundus::trend
