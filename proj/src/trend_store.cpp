#include "fundus/trend_store.hpp"

#include "fundus/disclaimer.hpp"
#include "fundus/hash.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <mutex>
#include <sstream>

namespace fundus::trend {

namespace {

constexpr std::string_view kHeader = R"({"schema":1})";

[[noreturn]] void io_error(const std::string& what, const std::filesystem::path& path) {
    throw Error(ErrorCode::Io, what + " " + path.string() + ": " + std::strerror(errno));
}

void fsync_directory(const std::filesystem::path& dir) {
    const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (fd < 0) return;
    ::fsync(fd);
    ::close(fd);
}

void write_all(int fd, std::string_view data, const std::filesystem::path& path) {
    while (!data.empty()) {
        const ssize_t n = ::write(fd, data.data(), data.size());
        if (n < 0) {
            if (errno == EINTR) continue;
            io_error("cannot write", path);
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

std::string dedupe_key(std::string_view user, std::string_view image_ref, Timestamp at) {
    std::string k = "img\x1f";
    k.append(user).append("\x1f").append(image_ref).append("\x1f").append(format_timestamp(at));
    return k;
}

std::string client_key(std::string_view user, std::string_view key) {
    std::string k = "key\x1f";
    k.append(user).append("\x1f").append(key);
    return k;
}

Timestamp read_time(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_string())
        throw Error(ErrorCode::CorruptData, std::string("missing timestamp ") + key, key);
    auto t = parse_timestamp(j.at(key).get<std::string>());
    if (!t) throw Error(ErrorCode::CorruptData, std::string("malformed timestamp ") + key, key);
    return *t;
}

std::string read_string(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_string())
        throw Error(ErrorCode::CorruptData, std::string("missing string ") + key, key);
    return j.at(key).get<std::string>();
}

/// Integers print without a fraction; everything else in shortest round-trip form.
std::string number_text(double v) {
    if (std::isfinite(v) && std::floor(v) == v && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
    return json(v).dump();
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string one_line(std::string_view s) {
    std::string out(s);
    std::replace(out.begin(), out.end(), '\n', ' ');
    std::replace(out.begin(), out.end(), '\r', ' ');
    return out;
}

std::string_view direction_name(Direction d) { return d == Direction::up ? "up" : "down"; }

} // namespace

/// One append-only JSON-lines file with a schema header.
struct TrendStore::Log {
    std::filesystem::path path;
    int fd = -1;

    explicit Log(std::filesystem::path p) : path(std::move(p)) {}
    ~Log() {
        if (fd >= 0) ::close(fd);
    }

    /// Returns the records after the header, dropping a torn final line.
    std::vector<json> open() {
        std::string content;
        {
            const int rfd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
            if (rfd >= 0) {
                char buf[65536];
                for (;;) {
                    const ssize_t n = ::read(rfd, buf, sizeof buf);
                    if (n < 0 && errno == EINTR) continue;
                    if (n <= 0) break;
                    content.append(buf, static_cast<std::size_t>(n));
                }
                ::close(rfd);
            } else if (errno != ENOENT) {
                io_error("cannot open", path);
            }
        }
        // Anything after the last newline never finished being written.
        const std::size_t complete = content.rfind('\n') == std::string::npos ? 0 : content.rfind('\n') + 1;
        const bool torn = complete < content.size();
        content.resize(complete);

        fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd < 0) io_error("cannot open", path);
        if (torn) {
            if (::ftruncate(fd, static_cast<off_t>(complete)) != 0) io_error("cannot truncate", path);
            ::fsync(fd);
        }
        std::vector<json> records;
        if (content.empty()) {
            write_all(fd, std::string(kHeader) + "\n", path);
            if (::fsync(fd) != 0) io_error("cannot sync", path);
            fsync_directory(path.parent_path());
            return records;
        }
        std::istringstream in(content);
        std::string line;
        std::size_t number = 0;
        while (std::getline(in, line)) {
            ++number;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error&) {
                throw Error(ErrorCode::CorruptData, path.string() + ":" + std::to_string(number) + " is not JSON");
            }
            if (number == 1) {
                if (!j.is_object() || j.value("schema", 0) != 1)
                    throw Error(ErrorCode::CorruptData, path.string() + " has an unsupported schema header");
                continue;
            }
            records.push_back(std::move(j));
        }
        return records;
    }

    void append(const json& record) {
        write_all(fd, record.dump() + "\n", path);
        if (::fdatasync(fd) != 0) io_error("cannot sync", path);
    }
};

json to_json(const UserProfile& p) {
    return {{"user_id", p.user_id}, {"display_name", p.display_name}, {"created_at", format_timestamp(p.created_at)}};
}

json to_json(const NoteEntry& n) {
    return {{"note_id", n.note_id}, {"at", format_timestamp(n.at)}, {"text", n.text}};
}

json to_json(const ScanRecord& r) {
    json notes = json::array();
    for (const auto& n : r.notes) notes.push_back(to_json(n));
    json j = {
        {"scan_id", r.scan_id},
        {"user_id", r.user_id},
        {"captured_at", format_timestamp(r.captured_at)},
        {"image_ref", r.image_ref},
        {"metrics", grading::to_json(r.metrics)},
        {"tortuosity", grading::to_json(r.tortuosity)},
        {"notes", std::move(notes)},
        {"stored_at", format_timestamp(r.stored_at)},
    };
    if (r.idempotency_key) j["idempotency_key"] = *r.idempotency_key;
    return j;
}

ScanRecord scan_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::CorruptData, "scan record is not an object");
    ScanRecord r;
    r.scan_id = read_string(j, "scan_id");
    r.user_id = read_string(j, "user_id");
    r.captured_at = read_time(j, "captured_at");
    r.image_ref = read_string(j, "image_ref");
    r.stored_at = read_time(j, "stored_at");
    try {
        r.metrics = grading::validate_metrics(j.at("metrics"));
        r.tortuosity = grading::tortuosity_from_json(j.at("tortuosity"));
        if (j.contains("idempotency_key") && !j.at("idempotency_key").is_null())
            r.idempotency_key = j.at("idempotency_key").get<std::string>();
        if (j.contains("notes"))
            for (const auto& n : j.at("notes"))
                r.notes.push_back({read_string(n, "note_id"), read_time(n, "at"), read_string(n, "text")});
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptData, std::string("malformed scan record: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptData) throw;
        throw Error(ErrorCode::CorruptData, std::string("invalid stored metrics: ") + e.what(), e.field());
    }
    return r;
}

json to_json(const TrendAlert& a) {
    return {{"metric", a.metric_name},
            {"at", format_timestamp(a.at)},
            {"baseline", a.baseline},
            {"observed", a.observed},
            {"delta", a.delta},
            {"direction", direction_name(a.direction)},
            {"scan_id", a.scan_id}};
}

ChangePolicy ChangePolicy::defaults() {
    ChangePolicy p;
    for (auto name : grading::kMetricNames) {
        if (!grading::has_severity(name)) continue;
        p.thresholds.emplace(std::string(name), name.find("tortuosity") != std::string_view::npos ? 0.15 : 1.0);
    }
    return p;
}

void ChangePolicy::validate() const {
    if (baseline_window < 1) throw Error(ErrorCode::BadParams, "baseline window must be at least 1");
    for (const auto& [name, t] : thresholds)
        if (!(t > 0.0) || !std::isfinite(t))
            throw Error(ErrorCode::BadParams, "threshold for " + name + " must be positive", name);
}

std::vector<TrendAlert> detect_changes(const TrendSeries& series, const ChangePolicy& policy) {
    policy.validate();
    std::vector<TrendAlert> alerts;
    const auto it = policy.thresholds.find(series.metric_name);
    if (it == policy.thresholds.end()) return alerts;
    const double threshold = it->second;
    const auto& pts = series.points;
    const auto window = static_cast<std::size_t>(policy.baseline_window);
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const std::size_t first = i > window ? i - window : 0;
        double sum = 0.0;
        for (std::size_t k = first; k < i; ++k) sum += pts[k].value;
        const double baseline = sum / static_cast<double>(i - first);
        const double delta = pts[i].value - baseline;
        if (std::abs(delta) >= threshold)
            alerts.push_back({series.metric_name, pts[i].at, baseline, pts[i].value, delta,
                              delta > 0 ? Direction::up : Direction::down, pts[i].scan_id});
    }
    return alerts;
}

std::optional<ReportFormat> parse_report_format(std::string_view s) noexcept {
    if (s == "json") return ReportFormat::json;
    if (s == "csv") return ReportFormat::csv;
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    return std::nullopt;
}

std::optional<std::size_t> utf8_length(std::string_view text) noexcept {
    std::size_t count = 0;
    for (std::size_t i = 0; i < text.size(); ++count) {
        const auto b = static_cast<unsigned char>(text[i]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (b < 0x80) {
            len = 1;
            cp = b;
        } else if ((b & 0xE0) == 0xC0) {
            len = 2;
            cp = b & 0x1F;
        } else if ((b & 0xF0) == 0xE0) {
            len = 3;
            cp = b & 0x0F;
        } else if ((b & 0xF8) == 0xF0) {
            len = 4;
            cp = b & 0x07;
        } else {
            return std::nullopt;
        }
        if (i + len > text.size()) return std::nullopt;
        for (std::size_t k = 1; k < len; ++k) {
            const auto c = static_cast<unsigned char>(text[i + k]);
            if ((c & 0xC0) != 0x80) return std::nullopt;
            cp = (cp << 6) | (c & 0x3F);
        }
        // Overlong forms, surrogates and values beyond U+10FFFF.
        static constexpr char32_t min_for_len[] = {0, 0, 0x80, 0x800, 0x10000};
        if (cp < min_for_len[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return std::nullopt;
        i += len;
    }
    return count;
}

std::string make_scan_id(std::string_view user_id, std::string_view image_ref, Timestamp captured_at) {
    std::string key(user_id);
    key.append("\n").append(image_ref).append("\n").append(format_timestamp(captured_at));
    return sha256_hex(key).substr(0, 24);
}

TrendStore::TrendStore(std::filesystem::path directory, Clock clock)
    : dir_(std::move(directory)), clock_(std::move(clock)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (!std::filesystem::is_directory(dir_))
        throw Error(ErrorCode::Io, "cannot create store directory " + dir_.string());
    users_log_ = std::make_unique<Log>(dir_ / "users.jsonl");
    scans_log_ = std::make_unique<Log>(dir_ / "scans.jsonl");
    notes_log_ = std::make_unique<Log>(dir_ / "notes.jsonl");
    load();
}

TrendStore::~TrendStore() = default;

void TrendStore::load() {
    for (const json& u : users_log_->open()) {
        UserRow row{{read_string(u, "user_id"), read_string(u, "display_name"), read_time(u, "created_at")},
                    u.value("credential_hash", "")};
        users_[row.profile.user_id] = std::move(row);
    }
    for (const json& s : scans_log_->open()) {
        ScanRecord r = scan_from_json(s);
        if (!users_.count(r.user_id)) throw Error(ErrorCode::CorruptData, "scan " + r.scan_id + " has no user");
        index_scan(std::move(r));
    }
    for (const json& n : notes_log_->open()) {
        const auto it = scans_.find(read_string(n, "scan_id"));
        if (it == scans_.end()) throw Error(ErrorCode::CorruptData, "note for an unknown scan");
        it->second.notes.push_back({read_string(n, "note_id"), read_time(n, "at"), read_string(n, "text")});
    }
}

void TrendStore::index_scan(ScanRecord record) {
    const std::string id = record.scan_id;
    dedupe_[dedupe_key(record.user_id, record.image_ref, record.captured_at)] = id;
    if (record.idempotency_key) dedupe_[client_key(record.user_id, *record.idempotency_key)] = id;
    auto& ids = by_user_[record.user_id];
    const auto key = std::make_pair(record.captured_at, id);
    const auto pos = std::lower_bound(ids.begin(), ids.end(), key, [&](const std::string& a, const auto& k) {
        return std::make_pair(scans_.at(a).captured_at, a) < k;
    });
    ids.insert(pos, id);
    scans_.emplace(id, std::move(record));
}

const TrendStore::UserRow& TrendStore::user_row(std::string_view user_id) const {
    const auto it = users_.find(user_id);
    if (it == users_.end()) throw Error(ErrorCode::UnknownUser, "unknown user " + std::string(user_id));
    return it->second;
}

std::vector<const ScanRecord*> TrendStore::ordered_scans(std::string_view user_id) const {
    (void)user_row(user_id);
    std::vector<const ScanRecord*> out;
    const auto it = by_user_.find(user_id);
    if (it == by_user_.end()) return out;
    for (const auto& id : it->second) out.push_back(&scans_.at(id));
    return out;
}

UserProfile TrendStore::create_user(const std::string& display_name, const std::string& credential_hash,
                                    const std::string& user_id) {
    if (display_name.empty()) throw Error(ErrorCode::BadParams, "display name is empty", "display_name");
    if (!utf8_length(display_name)) throw Error(ErrorCode::BadParams, "display name is not UTF-8", "display_name");
    std::unique_lock lock(mutex_);
    std::string id = user_id.empty() ? random_hex(16) : user_id;
    if (users_.count(id)) throw Error(ErrorCode::BadParams, "user id " + id + " is taken", "user_id");
    UserRow row{{id, display_name, clock_()}, credential_hash};
    json line = to_json(row.profile);
    line["credential_hash"] = credential_hash;
    users_log_->append(line);
    users_[id] = row;
    return row.profile;
}

std::optional<UserProfile> TrendStore::find_user(std::string_view user_id) const {
    std::shared_lock lock(mutex_);
    const auto it = users_.find(user_id);
    if (it == users_.end()) return std::nullopt;
    return it->second.profile;
}

std::string TrendStore::credential_hash(std::string_view user_id) const {
    std::shared_lock lock(mutex_);
    return user_row(user_id).credential_hash;
}

std::string TrendStore::append_scan(std::string_view user_id, ScanRecord record) {
    std::unique_lock lock(mutex_);
    (void)user_row(user_id);
    record.user_id = std::string(user_id);
    if (record.image_ref.empty()) throw Error(ErrorCode::MissingField, "scan has no image reference", "image_ref");
    if (record.idempotency_key &&
        (record.idempotency_key->empty() || record.idempotency_key->size() > 256 || !utf8_length(*record.idempotency_key)))
        throw Error(ErrorCode::BadParams, "idempotency key must be 1-256 bytes of UTF-8", "idempotency_key");
    if (record.captured_at > clock_())
        throw Error(ErrorCode::OutOfRange, "captured_at lies in the future", "captured_at");
    if (record.tortuosity.segments_used < 0)
        throw Error(ErrorCode::OutOfRange, "segments_used is negative", "segments_used");
    // Re-validation normalises the record exactly as it will be read back.
    record.metrics = grading::validate_metrics(grading::to_json(record.metrics));

    for (const auto& key : {dedupe_key(user_id, record.image_ref, record.captured_at),
                            record.idempotency_key ? client_key(user_id, *record.idempotency_key) : std::string()}) {
        if (key.empty()) continue;
        if (const auto it = dedupe_.find(key); it != dedupe_.end()) throw DuplicateScanError(it->second);
    }
    record.scan_id = make_scan_id(user_id, record.image_ref, record.captured_at);
    if (scans_.count(record.scan_id)) throw DuplicateScanError(record.scan_id);
    record.stored_at = clock_();
    record.notes.clear();

    json line = to_json(record);
    line.erase("notes");
    scans_log_->append(line);
    const std::string id = record.scan_id;
    index_scan(std::move(record));
    return id;
}

ScanRecord TrendStore::get_scan(std::string_view scan_id) const {
    std::shared_lock lock(mutex_);
    const auto it = scans_.find(scan_id);
    if (it == scans_.end()) throw Error(ErrorCode::UnknownScan, "unknown scan " + std::string(scan_id));
    return it->second;
}

std::optional<std::string> TrendStore::find_by_idempotency_key(std::string_view user_id,
                                                                std::string_view key) const {
    std::shared_lock lock(mutex_);
    const auto it = dedupe_.find(client_key(user_id, key));
    if (it == dedupe_.end()) return std::nullopt;
    return it->second;
}

std::vector<ScanRecord> TrendStore::get_history(std::string_view user_id, Timestamp from, Timestamp to) const {
    if (from > to) throw Error(ErrorCode::BadParams, "history range is inverted");
    std::shared_lock lock(mutex_);
    std::vector<ScanRecord> out;
    for (const ScanRecord* r : ordered_scans(user_id))
        if (r->captured_at >= from && r->captured_at <= to) out.push_back(*r);
    return out;
}

std::vector<ScanRecord> TrendStore::get_history(std::string_view user_id) const {
    return get_history(user_id, Timestamp::min(), Timestamp::max());
}

namespace {

TrendSeries build_series(const std::vector<const ScanRecord*>& scans, std::string_view metric, Timestamp from,
                         Timestamp to) {
    const auto pos = std::find(grading::kMetricNames.begin(), grading::kMetricNames.end(), metric);
    if (pos == grading::kMetricNames.end())
        throw Error(ErrorCode::UnknownMetric, "unknown metric " + std::string(metric), std::string(metric));
    const auto index = static_cast<std::size_t>(pos - grading::kMetricNames.begin());
    TrendSeries s;
    s.metric_name = std::string(metric);
    for (const ScanRecord* r : scans) {
        if (r->captured_at < from || r->captured_at > to) continue;
        if (!s.points.empty() && s.points.back().at == r->captured_at) continue;
        const auto value = grading::flatten(r->scan_metrics())[index].value;
        if (value) s.points.push_back({r->captured_at, *value, r->scan_id});
    }
    return s;
}

} // namespace

TrendSeries TrendStore::series(std::string_view user_id, std::string_view metric, Timestamp from,
                               Timestamp to) const {
    std::shared_lock lock(mutex_);
    return build_series(ordered_scans(user_id), metric, from, to);
}

std::vector<TrendAlert> TrendStore::all_alerts(std::string_view user_id, const ChangePolicy& policy) const {
    const auto scans = ordered_scans(user_id);
    std::vector<TrendAlert> out;
    for (auto name : grading::kMetricNames) {
        if (!policy.thresholds.count(name)) continue;
        auto found = detect_changes(build_series(scans, name, Timestamp::min(), Timestamp::max()), policy);
        out.insert(out.end(), found.begin(), found.end());
    }
    // Metric order within one time follows kMetricNames via stable sort.
    std::stable_sort(out.begin(), out.end(), [](const TrendAlert& a, const TrendAlert& b) { return a.at < b.at; });
    return out;
}

std::vector<TrendAlert> TrendStore::alerts(std::string_view user_id, Timestamp from, Timestamp to,
                                           const ChangePolicy& policy) const {
    policy.validate();
    std::shared_lock lock(mutex_);
    std::vector<TrendAlert> out;
    for (auto& a : all_alerts(user_id, policy))
        if (a.at >= from && a.at <= to) out.push_back(std::move(a));
    return out;
}

std::vector<DaySummary> TrendStore::calendar_view(std::string_view user_id, int year, int month,
                                                  const ChangePolicy& policy,
                                                  const grading::TortuosityThresholds& thresholds,
                                                  int utc_offset_minutes) const {
    using namespace std::chrono;
    if (month < 1 || month > 12) throw Error(ErrorCode::BadParams, "month must lie in 1-12", "month");
    if (year < 1970 || year > 9999) throw Error(ErrorCode::BadParams, "year out of range", "year");
    if (std::abs(utc_offset_minutes) > 14 * 60)
        throw Error(ErrorCode::BadParams, "UTC offset beyond 14 hours", "utc_offset");
    policy.validate();
    const year_month ym{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)}};
    const unsigned last = static_cast<unsigned>(year_month_day_last{ym / std::chrono::last}.day());
    std::vector<DaySummary> days(last);
    for (unsigned d = 0; d < last; ++d) days[d].day = static_cast<int>(d + 1);

    auto local_day = [&](Timestamp t) -> int {
        const year_month_day ymd{floor<std::chrono::days>(t + minutes(utc_offset_minutes))};
        if (ymd.year() != ym.year() || ymd.month() != ym.month()) return 0;
        return static_cast<int>(static_cast<unsigned>(ymd.day()));
    };

    std::shared_lock lock(mutex_);
    for (const ScanRecord* r : ordered_scans(user_id)) {
        const int d = local_day(r->captured_at);
        if (d == 0) continue;
        auto& s = days[static_cast<std::size_t>(d - 1)];
        ++s.scan_count;
        s.worst = std::max(s.worst, grading::worst_severity(r->scan_metrics(), thresholds));
    }
    for (const auto& a : all_alerts(user_id, policy))
        if (const int d = local_day(a.at); d != 0) ++days[static_cast<std::size_t>(d - 1)].alert_count;
    return days;
}

std::string TrendStore::export_report(std::string_view user_id, Timestamp from, Timestamp to, ReportFormat format,
                                      const ChangePolicy& policy,
                                      const grading::TortuosityThresholds& thresholds) const {
    if (from > to) throw Error(ErrorCode::BadParams, "report range is inverted");
    policy.validate();
    std::shared_lock lock(mutex_);
    const UserProfile& profile = user_row(user_id).profile;
    std::vector<const ScanRecord*> scans;
    for (const ScanRecord* r : ordered_scans(user_id))
        if (r->captured_at >= from && r->captured_at <= to) scans.push_back(r);
    std::vector<TrendAlert> alerts;
    for (auto& a : all_alerts(user_id, policy))
        if (a.at >= from && a.at <= to) alerts.push_back(std::move(a));

    auto severity_text = [&](const grading::MetricValue& mv) -> std::string {
        if (!mv.value || !grading::has_severity(mv.name)) return "";
        return std::string(grading::to_string(grading::severity_level(mv.name, *mv.value, thresholds)));
    };

    std::ostringstream out;
    switch (format) {
    case ReportFormat::json: {
        json scans_j = json::array();
        for (const ScanRecord* r : scans) scans_j.push_back(to_json(*r));
        json alerts_j = json::array();
        for (const auto& a : alerts) alerts_j.push_back(to_json(a));
        const json doc = {
            {"profile", to_json(profile)},
            {"range", {{"from", format_timestamp(from)}, {"to", format_timestamp(to)}}},
            {"scans", std::move(scans_j)},
            {"alerts", std::move(alerts_j)},
            {"disclaimer", kDisclaimer},
        };
        out << doc.dump(2) << "\n";
        break;
    }
    case ReportFormat::csv: {
        out << "user_id,display_name,scan_id,captured_at,metric,value,severity\r\n";
        for (const ScanRecord* r : scans)
            for (const auto& mv : grading::flatten(r->scan_metrics()))
                out << csv_field(profile.user_id) << ',' << csv_field(profile.display_name) << ',' << r->scan_id
                    << ',' << format_timestamp(r->captured_at) << ',' << mv.name << ','
                    << (mv.value ? number_text(*mv.value) : "") << ',' << severity_text(mv) << "\r\n";
        break;
    }
    case ReportFormat::markdown: {
        out << "# Retinal scan report\n\n## Profile\n\n"
            << "- Name: " << one_line(profile.display_name) << "\n"
            << "- User ID: " << profile.user_id << "\n"
            << "- Member since: " << format_timestamp(profile.created_at) << "\n"
            << "- Period: " << format_timestamp(from) << " to " << format_timestamp(to) << "\n\n## Scans\n\n";
        if (scans.empty()) out << "No scans in this period.\n\n";
        for (const ScanRecord* r : scans) {
            out << "### " << format_timestamp(r->captured_at) << " (scan " << r->scan_id << ")\n\n"
                << "| Metric | Value | Severity |\n|---|---|---|\n";
            for (const auto& mv : grading::flatten(r->scan_metrics()))
                out << "| " << mv.name << " | " << (mv.value ? number_text(*mv.value) : "n/a") << " | "
                    << (severity_text(mv).empty() ? "-" : severity_text(mv)) << " |\n";
            out << "\n";
            if (!r->notes.empty()) {
                out << "Notes:\n\n";
                for (const auto& n : r->notes) out << "- " << format_timestamp(n.at) << ": " << one_line(n.text) << "\n";
                out << "\n";
            }
        }
        out << "## Alerts\n\n";
        if (alerts.empty()) out << "No alerts in this period.\n";
        for (const auto& a : alerts)
            out << "- " << format_timestamp(a.at) << " " << a.metric_name << " moved " << direction_name(a.direction)
                << ": baseline " << number_text(a.baseline) << ", observed " << number_text(a.observed)
                << ", change " << number_text(a.delta) << "\n";
        out << "\n## Disclaimer\n\n" << kDisclaimer << "\n";
        break;
    }
    }
    return out.str();
}

NoteEntry TrendStore::add_note(std::string_view user_id, std::string_view scan_id, const std::string& text) {
    if (text.empty()) throw Error(ErrorCode::BadParams, "note is empty", "text");
    const auto length = utf8_length(text);
    if (!length) throw Error(ErrorCode::BadParams, "note is not valid UTF-8", "text");
    if (*length > kMaxNoteLength)
        throw Error(ErrorCode::BadParams, "note exceeds " + std::to_string(kMaxNoteLength) + " characters", "text");
    std::unique_lock lock(mutex_);
    (void)user_row(user_id);
    const auto it = scans_.find(scan_id);
    if (it == scans_.end() || it->second.user_id != user_id)
        throw Error(ErrorCode::UnknownScan, "unknown scan " + std::string(scan_id));
    NoteEntry note{random_hex(8), clock_(), text};
    json line = to_json(note);
    line["scan_id"] = std::string(scan_id);
    line["user_id"] = std::string(user_id);
    notes_log_->append(line);
    it->second.notes.push_back(note);
    return note;
}

std::size_t TrendStore::scan_count() const {
    std::shared_lock lock(mutex_);
    return scans_.size();
}

} // namespace fundus::trend
