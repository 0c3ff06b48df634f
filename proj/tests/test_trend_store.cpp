#include "fundus/disclaimer.hpp"
#include "fundus/error.hpp"
#include "fundus/trend_store.hpp"
#include "support/tempdir.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <csignal>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

using namespace fundus;
using namespace fundus::trend;
using fundus::fixtures::TempDir;
using namespace std::chrono;

namespace {

Timestamp at(int y, unsigned m, unsigned d, int hour = 9) {
    return sys_days{year{y} / month{m} / day{d}} + hours{hour};
}

const Timestamp kNow = at(2026, 6, 1);

ScanRecord record(Timestamp when, std::optional<double> avg = 1.1, int retinopathy = 0, std::string image = {}) {
    ScanRecord r;
    r.captured_at = when;
    r.image_ref = image.empty() ? "img-" + format_timestamp(when) : std::move(image);
    r.metrics.retinopathy_grade = retinopathy;
    r.metrics.produced_by = "stub";
    r.tortuosity.avg_tortuosity = avg;
    r.tortuosity.max_tortuosity = avg ? std::optional<double>(*avg + 0.1) : std::nullopt;
    r.tortuosity.segments_used = avg ? 5 : 0;
    return r;
}

ErrorCode error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::Io;
}

/// Literal restatement of the change rule.
std::vector<TrendAlert> brute_force_changes(const TrendSeries& s, double threshold, int window) {
    std::vector<TrendAlert> out;
    for (std::size_t i = 1; i < s.points.size(); ++i) {
        std::vector<double> prior;
        for (std::size_t k = 0; k < i; ++k) prior.push_back(s.points[k].value);
        if (prior.size() > static_cast<std::size_t>(window)) prior.erase(prior.begin(), prior.end() - window);
        const double baseline = std::accumulate(prior.begin(), prior.end(), 0.0) / static_cast<double>(prior.size());
        const double delta = s.points[i].value - baseline;
        if (std::abs(delta) >= threshold)
            out.push_back({s.metric_name, s.points[i].at, baseline, s.points[i].value, delta,
                           delta > 0 ? Direction::up : Direction::down, s.points[i].scan_id});
    }
    return out;
}

struct StoreTest : ::testing::Test {
    TempDir dir;
    Timestamp now = kNow;
    TrendStore::Clock clock = [this] { return now; };
    std::unique_ptr<TrendStore> store = std::make_unique<TrendStore>(dir.path(), clock);
    std::string user = store->create_user("Ada", "", "u1").user_id;

    void reopen() {
        store.reset();
        store = std::make_unique<TrendStore>(dir.path(), clock);
    }
};

} // namespace

TEST(DetectChanges, WorkedExample) {
    TrendSeries s{"avg_tortuosity", {}};
    const double values[] = {1.1, 1.1, 1.1, 1.5};
    for (int i = 0; i < 4; ++i) s.points.push_back({at(2026, 1, 1 + i), values[i], "s" + std::to_string(i)});
    ChangePolicy p;
    p.thresholds["avg_tortuosity"] = 0.2;
    const auto alerts = detect_changes(s, p);
    ASSERT_EQ(alerts.size(), 1u);
    EXPECT_NEAR(alerts[0].baseline, 1.1, 1e-12);
    EXPECT_DOUBLE_EQ(alerts[0].observed, 1.5);
    EXPECT_NEAR(alerts[0].delta, 0.4, 1e-12);
    EXPECT_EQ(alerts[0].direction, Direction::up);
    EXPECT_EQ(alerts[0].scan_id, "s3");
}

TEST(DetectChanges, MatchesBruteForceOnRandomSeries) {
    std::mt19937_64 rng(20260601);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = std::uniform_int_distribution<int>(0, 30)(rng);
        const bool integral = trial % 2 == 0;
        TrendSeries s{"m", {}};
        for (int i = 0; i < n; ++i) {
            const double v = integral ? std::uniform_int_distribution<int>(0, 3)(rng)
                                      : std::uniform_real_distribution<double>(1.0, 2.0)(rng);
            s.points.push_back({Timestamp{} + seconds{i}, v, std::to_string(i)});
        }
        ChangePolicy p;
        p.baseline_window = std::uniform_int_distribution<int>(1, 6)(rng);
        // Integral series use thresholds a delta can hit exactly.
        const double threshold = integral ? std::uniform_int_distribution<int>(1, 2)(rng)
                                          : std::uniform_real_distribution<double>(0.01, 0.6)(rng);
        p.thresholds["m"] = threshold;
        const auto got = detect_changes(s, p);
        const auto want = brute_force_changes(s, threshold, p.baseline_window);
        ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
        for (std::size_t i = 0; i < got.size(); ++i) {
            ASSERT_EQ(got[i].at, want[i].at);
            ASSERT_EQ(got[i].baseline, want[i].baseline);
            ASSERT_EQ(got[i].delta, want[i].delta);
            ASSERT_EQ(got[i].direction, want[i].direction);
            ASSERT_EQ(got[i].scan_id, want[i].scan_id);
        }
    }
}

TEST(DetectChanges, EdgeCases) {
    ChangePolicy p;
    p.thresholds["m"] = 1.0;
    EXPECT_TRUE(detect_changes({"m", {}}, p).empty());
    EXPECT_TRUE(detect_changes({"m", {{Timestamp{}, 3.0, "a"}}}, p).empty());
    EXPECT_TRUE(detect_changes({"other", {{Timestamp{}, 0.0, "a"}, {Timestamp{} + 1s, 9.0, "b"}}}, p).empty());
    // A delta exactly at the threshold alerts.
    const auto down = detect_changes({"m", {{Timestamp{}, 2.0, "a"}, {Timestamp{} + 1s, 1.0, "b"}}}, p);
    ASSERT_EQ(down.size(), 1u);
    EXPECT_EQ(down[0].direction, Direction::down);
    EXPECT_EQ(down[0].delta, -1.0);

    p.baseline_window = 0;
    EXPECT_EQ(error_of([&] { detect_changes({"m", {}}, p); }), ErrorCode::BadParams);
    p.baseline_window = 3;
    p.thresholds["m"] = 0.0;
    EXPECT_EQ(error_of([&] { detect_changes({"m", {}}, p); }), ErrorCode::BadParams);
}

TEST(ChangePolicyDefaults, CoverGradedMetrics) {
    const auto p = ChangePolicy::defaults();
    EXPECT_EQ(p.baseline_window, 3);
    EXPECT_EQ(p.thresholds.at("avg_tortuosity"), 0.15);
    EXPECT_EQ(p.thresholds.at("max_tortuosity"), 0.15);
    EXPECT_EQ(p.thresholds.at("retinopathy_grade"), 1.0);
    EXPECT_EQ(p.thresholds.at("amd_grade"), 1.0);
    EXPECT_FALSE(p.thresholds.count("segments_used"));
    EXPECT_EQ(p.thresholds.size(), 11u);
}

TEST_F(StoreTest, AppendAndHistory) {
    const auto b = store->append_scan(user, record(at(2026, 3, 2)));
    const auto a = store->append_scan(user, record(at(2026, 3, 1)));
    EXPECT_EQ(a, make_scan_id(user, "img-" + format_timestamp(at(2026, 3, 1)), at(2026, 3, 1)));
    const auto h = store->get_history(user);
    ASSERT_EQ(h.size(), 2u);
    EXPECT_EQ(h[0].scan_id, a);
    EXPECT_EQ(h[1].scan_id, b);
    EXPECT_EQ(h[0].stored_at, kNow);
    EXPECT_EQ(store->get_history(user, at(2026, 3, 2), at(2026, 3, 2)).size(), 1u);
    EXPECT_TRUE(store->get_history(user, at(2026, 4, 1), at(2026, 5, 1)).empty());
    EXPECT_EQ(error_of([&] { (void)store->get_history(user, at(2026, 5, 1), at(2026, 4, 1)); }), ErrorCode::BadParams);
    EXPECT_EQ(error_of([&] { (void)store->get_history("nobody"); }), ErrorCode::UnknownUser);
    EXPECT_EQ(error_of([&] { (void)store->get_scan("nope"); }), ErrorCode::UnknownScan);
    EXPECT_EQ(store->get_scan(a), h[0]);
}

TEST_F(StoreTest, RejectsBadRecords) {
    EXPECT_EQ(error_of([&] { store->append_scan("ghost", record(at(2026, 3, 1))); }), ErrorCode::UnknownUser);
    EXPECT_EQ(error_of([&] { store->append_scan(user, record(kNow + 1s)); }), ErrorCode::OutOfRange);
    auto bad = record(at(2026, 3, 1));
    bad.metrics.retinopathy_grade = 4;
    EXPECT_EQ(error_of([&] { store->append_scan(user, bad); }), ErrorCode::OutOfRange);
    auto no_image = record(at(2026, 3, 1));
    no_image.image_ref.clear();
    EXPECT_EQ(error_of([&] { store->append_scan(user, no_image); }), ErrorCode::MissingField);
    EXPECT_EQ(store->scan_count(), 0u);
}

TEST_F(StoreTest, DuplicatesReplayTheOriginalId) {
    const auto id = store->append_scan(user, record(at(2026, 3, 1)));
    try {
        store->append_scan(user, record(at(2026, 3, 1)));
        FAIL();
    } catch (const DuplicateScanError& e) {
        EXPECT_EQ(e.existing_scan_id(), id);
        EXPECT_EQ(e.code(), ErrorCode::DuplicateScan);
    }
    auto keyed = record(at(2026, 3, 5));
    keyed.idempotency_key = "retry-1";
    const auto keyed_id = store->append_scan(user, keyed);
    auto retry = record(at(2026, 3, 6));
    retry.idempotency_key = "retry-1";
    try {
        store->append_scan(user, retry);
        FAIL();
    } catch (const DuplicateScanError& e) {
        EXPECT_EQ(e.existing_scan_id(), keyed_id);
    }
    reopen();
    EXPECT_THROW(store->append_scan(user, retry), DuplicateScanError);
    // The same image for another user is a different scan.
    store->create_user("Bob", "", "u2");
    EXPECT_NO_THROW(store->append_scan("u2", record(at(2026, 3, 1))));
    EXPECT_EQ(store->scan_count(), 3u);
}

TEST_F(StoreTest, SurvivesReopen) {
    auto r = record(at(2026, 3, 1), 1.3, 2);
    r.metrics.extras = {{"model_version", "7"}};
    r.idempotency_key = "k";
    const auto id = store->append_scan(user, r);
    store->add_note(user, id, "felt fine");
    const auto before = store->get_history(user);
    reopen();
    EXPECT_EQ(store->get_history(user), before);
    EXPECT_EQ(store->find_user(user)->display_name, "Ada");
    EXPECT_EQ(store->get_scan(id).metrics.extras["model_version"], "7");
}

TEST_F(StoreTest, ScanJsonRoundTrip) {
    auto r = record(at(2026, 3, 1), std::nullopt, 3);
    r.metrics.amd.drusen_score = 2;
    r.metrics.produced_at = at(2026, 3, 1);
    const auto id = store->append_scan(user, r);
    store->add_note(user, id, "line1\nline2, \"quoted\"");
    const auto stored = store->get_scan(id);
    EXPECT_EQ(scan_from_json(to_json(stored)), stored);
    EXPECT_EQ(scan_from_json(json::parse(to_json(stored).dump())), stored);
    EXPECT_EQ(error_of([] { scan_from_json(json::array()); }), ErrorCode::CorruptData);
    auto broken = to_json(stored);
    broken["captured_at"] = "yesterday";
    EXPECT_EQ(error_of([&] { scan_from_json(broken); }), ErrorCode::CorruptData);
}

TEST_F(StoreTest, TornFinalLineIsDropped) {
    store->append_scan(user, record(at(2026, 3, 1)));
    store.reset();
    {
        std::ofstream out(dir / "scans.jsonl", std::ios::app);
        out << R"({"scan_id": "half", "user_id": "u1", "capt)";
    }
    reopen();
    EXPECT_EQ(store->scan_count(), 1u);
    store->append_scan(user, record(at(2026, 3, 2)));
    reopen();
    EXPECT_EQ(store->scan_count(), 2u);
}

TEST_F(StoreTest, CorruptMiddleLineIsFatal) {
    store->append_scan(user, record(at(2026, 3, 1)));
    store.reset();
    std::string content;
    {
        std::ifstream in(dir / "scans.jsonl");
        std::stringstream ss;
        ss << in.rdbuf();
        content = ss.str();
    }
    {
        std::ofstream out(dir / "scans.jsonl");
        out << content.substr(0, content.find('\n') + 1) << "{garbage\n" << content.substr(content.find('\n') + 1);
    }
    EXPECT_EQ(error_of([&] { TrendStore s(dir.path(), clock); }), ErrorCode::CorruptData);
    {
        std::ofstream out(dir / "scans.jsonl");
        out << "{\"schema\":2}\n";
    }
    EXPECT_EQ(error_of([&] { TrendStore s(dir.path(), clock); }), ErrorCode::CorruptData);
}

TEST(StoreDurability, CrashAfterAppendLosesNothing) {
    TempDir dir;
    { TrendStore(dir.path()).create_user("Ada", "", "u1"); }
    for (int i = 0; i < 10; ++i) {
        const pid_t pid = fork();
        ASSERT_GE(pid, 0);
        if (pid == 0) {
            int code = 0;
            try {
                TrendStore s(dir.path());
                s.append_scan("u1", record(at(2026, 1, 1 + i)));
            } catch (...) {
                code = 1;
            }
            // Skip destructors and stdio flushing, as an abrupt exit would.
            _exit(code);
        }
        int status = 0;
        waitpid(pid, &status, 0);
        ASSERT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0);
    }
    EXPECT_EQ(TrendStore(dir.path()).get_history("u1").size(), 10u);
}

TEST(StoreDurability, KillDuringAppendsKeepsAcknowledgedRecords) {
    TempDir dir;
    { TrendStore(dir.path()).create_user("Ada", "", "u1"); }
    int fds[2];
    ASSERT_EQ(pipe(fds), 0);
    const pid_t pid = fork();
    ASSERT_GE(pid, 0);
    if (pid == 0) {
        close(fds[0]);
        TrendStore s(dir.path());
        for (int i = 0;; ++i) {
            const auto id = s.append_scan("u1", record(at(2020, 1, 1) + minutes{i}));
            const std::string line = id + "\n";
            if (write(fds[1], line.data(), line.size()) < 0) _exit(1);
        }
    }
    close(fds[1]);
    std::this_thread::sleep_for(milliseconds(300));
    kill(pid, SIGKILL);
    waitpid(pid, nullptr, 0);
    std::string acked;
    char buf[4096];
    for (ssize_t n; (n = read(fds[0], buf, sizeof buf)) > 0;) acked.append(buf, static_cast<std::size_t>(n));
    close(fds[0]);

    TrendStore s(dir.path());
    std::istringstream lines(acked);
    std::size_t count = 0;
    for (std::string id; std::getline(lines, id);) {
        EXPECT_NO_THROW((void)s.get_scan(id)) << id;
        ++count;
    }
    EXPECT_GT(count, 0u);
    EXPECT_GE(s.scan_count(), count);
}

TEST_F(StoreTest, SeriesAndAlerts) {
    const double values[] = {1.1, 1.1, 1.1, 1.5};
    std::vector<std::string> ids;
    for (int i = 0; i < 4; ++i) ids.push_back(store->append_scan(user, record(at(2026, 2, 1 + i), values[i])));
    store->append_scan(user, record(at(2026, 2, 10), std::nullopt));
    const auto s = store->series(user, "avg_tortuosity", Timestamp::min(), Timestamp::max());
    ASSERT_EQ(s.points.size(), 4u);
    EXPECT_EQ(s.points[3].scan_id, ids[3]);
    EXPECT_EQ(store->series(user, "segments_used", Timestamp::min(), Timestamp::max()).points.size(), 5u);
    EXPECT_EQ(error_of([&] { (void)store->series(user, "iop", Timestamp::min(), Timestamp::max()); }),
              ErrorCode::UnknownMetric);

    auto policy = ChangePolicy::defaults();
    policy.thresholds["avg_tortuosity"] = 0.2;
    policy.thresholds["max_tortuosity"] = 0.2;
    const auto alerts = store->alerts(user, Timestamp::min(), Timestamp::max(), policy);
    ASSERT_EQ(alerts.size(), 2u);
    EXPECT_EQ(alerts[0].metric_name, "avg_tortuosity");
    EXPECT_EQ(alerts[1].metric_name, "max_tortuosity");
    EXPECT_NEAR(alerts[0].delta, 0.4, 1e-12);
    // The baseline comes from the whole history even when the window starts later.
    EXPECT_EQ(store->alerts(user, at(2026, 2, 4), at(2026, 2, 4), policy).size(), 2u);
    EXPECT_TRUE(store->alerts(user, at(2026, 2, 5), Timestamp::max(), policy).empty());
}

TEST_F(StoreTest, EqualTimestampsKeepFirstScanId) {
    const auto a = store->append_scan(user, record(at(2026, 2, 1), 1.1, 0, "x"));
    const auto b = store->append_scan(user, record(at(2026, 2, 1), 1.9, 0, "y"));
    const auto s = store->series(user, "avg_tortuosity", Timestamp::min(), Timestamp::max());
    ASSERT_EQ(s.points.size(), 1u);
    EXPECT_EQ(s.points[0].scan_id, std::min(a, b));
    EXPECT_EQ(store->get_history(user).size(), 2u);
}

TEST_F(StoreTest, CalendarCountsMatchHistory) {
    std::vector<int> offsets(24 * 70);
    std::iota(offsets.begin(), offsets.end(), 0);
    std::shuffle(offsets.begin(), offsets.end(), std::mt19937(7));
    for (int i = 0; i < 40; ++i) {
        const auto t = at(2026, 2, 1) + hours{offsets[static_cast<std::size_t>(i)]};
        store->append_scan(user, record(t, 1.0 + 0.01 * i, i % 4));
    }
    const auto policy = ChangePolicy::defaults();
    for (int offset : {0, 330, -600}) {
        for (int month : {2, 3, 4}) {
            const auto days = store->calendar_view(user, 2026, month, policy, {}, offset);
            EXPECT_EQ(days.size(), month == 2 ? 28u : month == 3 ? 31u : 30u);
            int scans = 0, alerts = 0;
            for (const auto& d : days) {
                scans += d.scan_count;
                alerts += d.alert_count;
                if (d.scan_count == 0) EXPECT_EQ(d.worst, grading::Severity::none);
            }
            const auto first = sys_days{year{2026} / month / 1} - minutes{offset};
            const auto last = sys_days{(year{2026} / month / 1) + months{1}} - minutes{offset} - seconds{1};
            EXPECT_EQ(scans, static_cast<int>(store->get_history(user, first, last).size()));
            EXPECT_EQ(alerts, static_cast<int>(store->alerts(user, first, last, policy).size()));
        }
    }
    EXPECT_EQ(error_of([&] { (void)store->calendar_view(user, 2026, 13, policy); }), ErrorCode::BadParams);
    EXPECT_EQ(error_of([&] { (void)store->calendar_view(user, 2026, 1, policy, {}, 15 * 60); }),
              ErrorCode::BadParams);
}

TEST_F(StoreTest, CalendarWorstSeverity) {
    store->append_scan(user, record(at(2026, 3, 4, 1), 1.0, 0, "a"));
    store->append_scan(user, record(at(2026, 3, 4, 2), 1.0, 3, "b"));
    store->append_scan(user, record(at(2026, 3, 5, 2), 1.3, 0, "c"));
    const auto days = store->calendar_view(user, 2026, 3, ChangePolicy::defaults());
    EXPECT_EQ(days[3].scan_count, 2);
    EXPECT_EQ(days[3].worst, grading::Severity::high);
    EXPECT_EQ(days[4].worst, grading::Severity::moderate);
    // One hour west moves the 01:00 scan to the previous day.
    const auto west = store->calendar_view(user, 2026, 3, ChangePolicy::defaults(), {}, -90);
    EXPECT_EQ(west[2].scan_count, 1);
    EXPECT_EQ(west[3].scan_count, 1);
}

TEST_F(StoreTest, CsvReportHasOneRowPerScanMetric) {
    store->append_scan(user, record(at(2026, 3, 1), 1.2));
    store->append_scan(user, record(at(2026, 3, 2), std::nullopt, 2));
    const auto csv = store->export_report(user, at(2026, 1, 1), at(2026, 12, 1), ReportFormat::csv,
                                          ChangePolicy::defaults());
    std::vector<std::string> rows;
    std::istringstream in(csv);
    for (std::string line; std::getline(in, line);) rows.push_back(line);
    ASSERT_EQ(rows.size(), 25u);
    EXPECT_EQ(rows[0], "user_id,display_name,scan_id,captured_at,metric,value,severity\r");
    EXPECT_NE(rows[1].find(",avg_tortuosity,1.2,low\r"), std::string::npos) << rows[1];
    EXPECT_NE(rows[13].find(",avg_tortuosity,,\r"), std::string::npos) << rows[13];
    EXPECT_NE(rows[16].find(",retinopathy_grade,2,"), std::string::npos) << rows[16];
    EXPECT_EQ(csv, store->export_report(user, at(2026, 1, 1), at(2026, 12, 1), ReportFormat::csv,
                                        ChangePolicy::defaults()));
}

TEST_F(StoreTest, JsonAndMarkdownReports) {
    store->append_scan(user, record(at(2026, 3, 1), 1.1));
    store->append_scan(user, record(at(2026, 3, 2), 1.1));
    store->append_scan(user, record(at(2026, 3, 3), 1.1));
    const auto id = store->append_scan(user, record(at(2026, 3, 4), 1.5));
    store->add_note(user, id, "after a long flight");
    const auto policy = ChangePolicy::defaults();
    const auto doc = json::parse(
        store->export_report(user, at(2026, 1, 1), at(2026, 12, 1), ReportFormat::json, policy));
    EXPECT_EQ(doc["profile"]["user_id"], user);
    EXPECT_EQ(doc["scans"].size(), 4u);
    EXPECT_EQ(doc["alerts"].size(), 2u);
    EXPECT_EQ(doc["disclaimer"], kDisclaimer);
    EXPECT_EQ(scan_from_json(doc["scans"][3]), store->get_scan(id));

    const auto md = store->export_report(user, at(2026, 1, 1), at(2026, 12, 1), ReportFormat::markdown, policy);
    std::size_t last = 0;
    for (const char* section : {"## Profile", "## Scans", "## Alerts", "## Disclaimer"}) {
        const auto pos = md.find(section);
        ASSERT_NE(pos, std::string::npos) << section;
        EXPECT_GT(pos, last);
        last = pos;
    }
    EXPECT_NE(md.find(std::string(kDisclaimer)), std::string::npos);
    EXPECT_NE(md.find("after a long flight"), std::string::npos);
    EXPECT_EQ(parse_report_format("md"), ReportFormat::markdown);
    EXPECT_FALSE(parse_report_format("pdf"));
}

TEST_F(StoreTest, Notes) {
    const auto id = store->append_scan(user, record(at(2026, 3, 1)));
    store->create_user("Bob", "", "u2");
    EXPECT_EQ(error_of([&] { store->add_note("u2", id, "mine now"); }), ErrorCode::UnknownScan);
    EXPECT_EQ(error_of([&] { store->add_note(user, id, ""); }), ErrorCode::BadParams);
    EXPECT_EQ(error_of([&] { store->add_note(user, id, std::string(kMaxNoteLength + 1, 'x')); }),
              ErrorCode::BadParams);
    const auto note = store->add_note(user, id, std::string(kMaxNoteLength, 'x'));
    EXPECT_EQ(note.at, kNow);
    reopen();
    ASSERT_EQ(store->get_scan(id).notes.size(), 1u);
    EXPECT_EQ(store->get_scan(id).notes[0], note);
}

TEST_F(StoreTest, UsersAreUnique) {
    EXPECT_EQ(error_of([&] { store->create_user("Again", "", "u1"); }), ErrorCode::BadParams);
    EXPECT_EQ(error_of([&] { store->create_user(""); }), ErrorCode::BadParams);
    const auto generated = store->create_user("Cy", "hash");
    EXPECT_EQ(generated.user_id.size(), 32u);
    EXPECT_EQ(store->credential_hash(generated.user_id), "hash");
    EXPECT_FALSE(store->find_user("nobody"));
}

TEST_F(StoreTest, ConcurrentWritersAndReaders) {
    std::vector<std::thread> threads;
    std::atomic<bool> inconsistent{false};
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&, t] {
            for (int i = 0; i < 25; ++i) store->append_scan(user, record(at(2025, 1 + t, 1) + hours{i}));
        });
    threads.emplace_back([&] {
        for (int i = 0; i < 200; ++i) {
            const auto h = store->get_history(user);
            for (std::size_t k = 1; k < h.size(); ++k)
                if (h[k - 1].captured_at > h[k].captured_at) inconsistent = true;
        }
    });
    for (auto& t : threads) t.join();
    EXPECT_FALSE(inconsistent);
    EXPECT_EQ(store->get_history(user).size(), 100u);
    reopen();
    EXPECT_EQ(store->get_history(user).size(), 100u);
}

TEST(Utf8Length, CountsCodePointsAndRejectsMalformed) {
    EXPECT_EQ(utf8_length(""), 0u);
    EXPECT_EQ(utf8_length("abc"), 3u);
    EXPECT_EQ(utf8_length("\xC3\xA9t\xC3\xA9"), 3u);
    EXPECT_EQ(utf8_length("\xF0\x9F\x91\x81"), 1u);
    EXPECT_FALSE(utf8_length("\xC3"));
    EXPECT_FALSE(utf8_length("\xC0\xAF"));
    EXPECT_FALSE(utf8_length("\xED\xA0\x80"));
    EXPECT_FALSE(utf8_length("\xFF"));
}

TEST_F(StoreTest, NoteLimitCountsCharacters) {
    const auto id = store->append_scan(user, record(at(2026, 3, 1)));
    std::string accented;
    for (std::size_t i = 0; i < kMaxNoteLength; ++i) accented += "\xC3\xA9";
    EXPECT_NO_THROW(store->add_note(user, id, accented));
    EXPECT_EQ(error_of([&] { store->add_note(user, id, accented + "x"); }), ErrorCode::BadParams);
    EXPECT_EQ(error_of([&] { store->add_note(user, id, "bad \xFF byte"); }), ErrorCode::BadParams);
}

TEST_F(StoreTest, IdempotencyKeyLookup) {
    auto r = record(at(2026, 3, 1));
    r.idempotency_key = "abc";
    const auto id = store->append_scan(user, r);
    EXPECT_EQ(store->find_by_idempotency_key(user, "abc"), id);
    EXPECT_FALSE(store->find_by_idempotency_key(user, "abd"));
    EXPECT_FALSE(store->find_by_idempotency_key("u2", "abc"));
    auto bad = record(at(2026, 3, 2));
    bad.idempotency_key = "";
    EXPECT_EQ(error_of([&] { store->append_scan(user, bad); }), ErrorCode::BadParams);
}
