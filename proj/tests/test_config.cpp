#include "fundus/config.hpp"
#include "fundus/error.hpp"
#include "support/tempdir.hpp"

#include <gtest/gtest.h>

using namespace fundus;
using namespace fundus::config;

namespace {

std::string field_of(const std::string& text) {
    try {
        parse_config(text, "/etc/fundus");
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BadParams);
        return e.field();
    }
    return "<accepted>";
}

} // namespace

TEST(Config, DefaultsWhenEmpty) {
    const auto c = parse_config("");
    EXPECT_EQ(c.service.port, 8080);
    EXPECT_EQ(c.adapter_order, std::vector<std::string>{"stub"});
    EXPECT_FALSE(c.interpretation);
    EXPECT_EQ(c.change_policy.thresholds.at("avg_tortuosity"), 0.15);
    EXPECT_FALSE(c.pipeline.fixed_threshold);
}

TEST(Config, ParsesEverySection) {
    const auto c = parse_config(R"(
; comment
[service]
host = 0.0.0.0
port = 9000
data_dir = store
workers = 2
token_ttl_seconds = 60

[pipeline]
scales = 1, 2.5
threshold = 0.25
min_arc_px = 12
adapters = retina, stub

[thresholds]
tortuosity_low = 1.05

[trends]
baseline_window = 5
amd_grade = off
edema_risk = 2

[interpretation]
url = "http://localhost:9999/v1/chat/completions"
model = local
timeout_seconds = 5

[adapter:retina]
command = ./bin/retina --model "my model.onnx" {image}
timeout_seconds = 30
kinds = grading, vessel_mask
max_concurrency = 1
)",
                                "/etc/fundus");
    EXPECT_EQ(c.service.host, "0.0.0.0");
    EXPECT_EQ(c.service.port, 9000);
    EXPECT_EQ(c.service.data_dir, std::filesystem::path("/etc/fundus/store"));
    EXPECT_EQ(c.service.token_ttl_seconds, 60);
    EXPECT_EQ(c.pipeline.vesselness.scales, (std::vector<double>{1.0, 2.5}));
    EXPECT_EQ(c.pipeline.fixed_threshold, 0.25);
    EXPECT_EQ(c.pipeline.min_arc_px, 12.0);
    EXPECT_EQ(c.adapter_order, (std::vector<std::string>{"retina", "stub"}));
    EXPECT_EQ(c.thresholds.low, 1.05);
    EXPECT_EQ(c.change_policy.baseline_window, 5);
    EXPECT_FALSE(c.change_policy.thresholds.count("amd_grade"));
    EXPECT_EQ(c.change_policy.thresholds.at("edema_risk"), 2.0);
    ASSERT_TRUE(c.interpretation);
    EXPECT_EQ(c.interpretation->url, "http://localhost:9999/v1/chat/completions");
    EXPECT_EQ(c.interpretation->timeout_seconds, 5.0);
    ASSERT_EQ(c.adapters.size(), 1u);
    const auto& a = c.adapters[0];
    EXPECT_EQ(a.id, "retina");
    EXPECT_EQ(a.command, (std::vector<std::string>{"/etc/fundus/./bin/retina", "--model", "my model.onnx", "{image}"}));
    EXPECT_EQ(a.expected_kinds.size(), 2u);
    EXPECT_EQ(a.max_concurrency, 1);
}

TEST(Config, RejectsMistakes) {
    EXPECT_EQ(field_of("[service]\nprot = 1\n"), "service.prot");
    EXPECT_EQ(field_of("[service]\nport = eighty\n"), "service.port");
    EXPECT_EQ(field_of("[service]\nport = 70000\n"), "service.port");
    EXPECT_EQ(field_of("[pipeline]\nadapters = ghost\n"), "pipeline.adapters");
    EXPECT_EQ(field_of("[trends]\navg_tortuosity = -1\n"), "avg_tortuosity");
    EXPECT_EQ(field_of("[thresholds]\ntortuosity_low = 2\n"), "thresholds");
    EXPECT_EQ(field_of("[adapter:x]\ncommand = run\nkinds = magic\n"), "adapter:x.kinds");
    EXPECT_EQ(field_of("[adapter:x]\ntimeout_seconds = 5\n"), "");
    EXPECT_EQ(field_of("[interpretation]\nurl = ftp://x\n"), "url");
    EXPECT_EQ(field_of("[mystery]\na = 1\n"), "mystery");
    EXPECT_EQ(field_of("[service]\nport = 1\n[service]\nport = 2\n"), "");
}

TEST(Config, LoadsFromFile) {
    fixtures::TempDir dir;
    const auto path = dir.write("fundus.ini", "[service]\ndata_dir = data\n");
    EXPECT_EQ(load_config(path).service.data_dir, dir / "data");
    EXPECT_THROW(load_config(dir / "missing.ini"), Error);
}

TEST(Config, ShippedExampleLoads) {
    const auto docs = std::filesystem::path(FUNDUS_SOURCE_DIR) / "docs";
    const auto c = load_config(docs / "fundus.example.ini");
    EXPECT_EQ(c.adapter_order, (std::vector<std::string>{"label-echo", "stub"}));
    ASSERT_EQ(c.adapters.size(), 2u);
    EXPECT_TRUE(std::filesystem::exists(c.adapters[0].command[0])) << c.adapters[0].command[0];
    EXPECT_FALSE(c.change_policy.thresholds.count("glaucoma_score"));
    EXPECT_FALSE(c.interpretation);
    const Config defaults;
    EXPECT_EQ(c.pipeline.vesselness.scales, defaults.pipeline.vesselness.scales);
    EXPECT_EQ(c.thresholds.high, defaults.thresholds.high);
}
