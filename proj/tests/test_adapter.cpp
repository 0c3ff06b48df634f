#include "fundus/adapter.hpp"
#include "fundus/error.hpp"
#include "fundus/hash.hpp"
#include "fundus/image_io.hpp"
#include "support/tempdir.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <thread>

using namespace fundus;
using namespace fundus::grading;
using fundus::fixtures::TempDir;

namespace {

AdapterSpec spec_for(const std::filesystem::path& script, double timeout = 5.0) {
    AdapterSpec s;
    s.id = script.stem().string();
    s.command = {script.string(), "{image}"};
    s.timeout_seconds = timeout;
    return s;
}

ErrorCode run_error(const AdapterSpec& spec, const std::filesystem::path& image) {
    try {
        run_adapter(spec, image);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::Io;
}

struct AdapterTest : ::testing::Test {
    TempDir dir;
    std::filesystem::path image = dir.write("scan.png", "not really a png");
};

} // namespace

TEST_F(AdapterTest, EchoReturnsDocument) {
    const auto script = dir.script("echo", R"(echo '{"retinopathy_grade": 2, "edema_risk": 1, "glaucoma_score": 0}')");
    const json out = run_adapter(spec_for(script), image);
    EXPECT_EQ(out, json::parse(R"({"retinopathy_grade": 2, "edema_risk": 1, "glaucoma_score": 0})"));
}

TEST_F(AdapterTest, ImagePlaceholderIsSubstituted) {
    const auto script = dir.script("path", R"(printf '{"path": "%s"}' "$1")");
    AdapterSpec spec = spec_for(script);
    spec.command = {script.string(), "prefix={image}"};
    EXPECT_EQ(run_adapter(spec, image)["path"], "prefix=" + image.string());
}

TEST_F(AdapterTest, SlowAdapterTimesOut) {
    const auto script = dir.script("slow", "sleep 30\necho '{}'");
    const auto start = std::chrono::steady_clock::now();
    EXPECT_EQ(run_error(spec_for(script, 1.0), image), ErrorCode::AdapterTimeout);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_LT(elapsed, 2.0);
}

TEST_F(AdapterTest, TimeoutKillsGrandchildren) {
    const auto marker = dir / "late";
    const auto script = dir.script("forky", "(sleep 2; touch " + marker.string() + ") &\nsleep 30");
    EXPECT_EQ(run_error(spec_for(script, 1.0), image), ErrorCode::AdapterTimeout);
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    EXPECT_FALSE(std::filesystem::exists(marker));
}

TEST_F(AdapterTest, NonJsonIsBadOutput) {
    const auto script = dir.script("garbage", "echo 'not json'");
    EXPECT_EQ(run_error(spec_for(script), image), ErrorCode::AdapterBadOutput);
    const auto two = dir.script("two", "echo '{}'\necho '{}'");
    EXPECT_EQ(run_error(spec_for(two), image), ErrorCode::AdapterBadOutput);
}

TEST_F(AdapterTest, NonZeroExitIsCrash) {
    const auto script = dir.script("crash", "echo '{}'\necho oops >&2\nexit 3");
    EXPECT_EQ(run_error(spec_for(script), image), ErrorCode::AdapterCrashed);
    AdapterSpec missing = spec_for(script);
    missing.command = {(dir / "does-not-exist").string()};
    EXPECT_EQ(run_error(missing, image), ErrorCode::AdapterCrashed);
    const auto killed = dir.script("killed", "kill -9 $$");
    EXPECT_EQ(run_error(spec_for(killed), image), ErrorCode::AdapterCrashed);
}

TEST_F(AdapterTest, MissingImageIsIoError) {
    const auto script = dir.script("echo", "echo '{}'");
    EXPECT_EQ(run_error(spec_for(script), dir / "absent.png"), ErrorCode::Io);
}

TEST_F(AdapterTest, LargeOutputIsDrained) {
    // Bigger than a pipe buffer, so stdout must be read while the child runs.
    const auto script = dir.script("big", R"(printf '{"pad": "'; head -c 300000 /dev/zero | tr '\0' 'x'; printf '"}')");
    EXPECT_EQ(run_adapter(spec_for(script), image)["pad"].get<std::string>().size(), 300000u);
}

TEST(AdapterSpec, Validation) {
    AdapterSpec s{"x", {"/bin/true"}, 60.0, {AdapterKind::grading}, 2};
    EXPECT_NO_THROW(s.validate());
    s.timeout_seconds = 0.5;
    EXPECT_THROW(s.validate(), Error);
    s.timeout_seconds = 601;
    EXPECT_THROW(s.validate(), Error);
    s.timeout_seconds = 600;
    s.command.clear();
    EXPECT_THROW(s.validate(), Error);
    s.command = {"/bin/true"};
    s.id.clear();
    EXPECT_THROW(s.validate(), Error);
    EXPECT_THROW(AdapterRegistry({AdapterSpec{"a", {"/bin/true"}}, AdapterSpec{"a", {"/bin/true"}}}), Error);
}

TEST_F(AdapterTest, RegistryCapsConcurrentLaunches) {
    const auto lock = dir / "lock";
    const auto script = dir.script("exclusive", "mkdir " + lock.string() + " || exit 9\nsleep 0.2\nrmdir " +
                                                    lock.string() + "\necho '{\"ok\": true}'");
    AdapterSpec spec = spec_for(script);
    spec.max_concurrency = 1;
    const AdapterRegistry registry({spec});
    std::vector<std::thread> threads;
    std::atomic<int> ok{0};
    for (int i = 0; i < 4; ++i)
        threads.emplace_back([&] {
            try {
                if (registry.run(*registry.find(spec.id), image)["ok"] == true) ++ok;
            } catch (const Error&) {
            }
        });
    for (auto& t : threads) t.join();
    EXPECT_EQ(ok.load(), 4);
}

TEST(VesselMaskResponse, DecodesPngPayload) {
    vessels::VesselMask mask(70, 66, 0);
    for (int x = 5; x < 60; ++x) mask(x, 30) = 1;
    const json response = {{"kind", "vessel_mask"}, {"mask_png_base64", base64_encode(io::write_png_mask(mask))}};
    EXPECT_EQ(decode_vessel_mask(response, 70, 66), mask);
    try {
        decode_vessel_mask(response, 71, 66);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::AdapterBadOutput);
    }
    EXPECT_THROW(decode_vessel_mask({{"kind", "vessel_mask"}, {"mask_png_base64", "!!!"}}, 70, 66), Error);
    EXPECT_THROW(decode_vessel_mask({{"kind", "grading"}}, 70, 66), Error);
}
