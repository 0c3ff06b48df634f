#include "fundus/error.hpp"
#include "fundus/hash.hpp"
#include "fundus/image_io.hpp"
#include "fundus/pipeline.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

#include <gtest/gtest.h>

using namespace fundus;
using namespace fundus::pipeline;
using fundus::fixtures::TempDir;
using grading::json;

namespace {

struct PipelineTest : ::testing::Test {
    TempDir dir;
    imaging::FundusImage image = imaging::decode_image(io::write_png_rgb(fixtures::synthetic_fundus(192)));
    std::filesystem::path image_path = dir.write("scan.png", "");

    void SetUp() override { io::write_file(image_path, io::write_png_rgb(image)); }

    grading::AdapterSpec adapter(const std::string& id, const std::string& body,
                                 grading::AdapterKind kind = grading::AdapterKind::grading) {
        grading::AdapterSpec s;
        s.id = id;
        s.command = {dir.script(id + ".sh", body).string(), "{image}"};
        s.timeout_seconds = 2;
        s.expected_kinds = {kind};
        return s;
    }

    ErrorCode scan_error(const grading::AdapterRegistry& reg, const std::vector<std::string>& ids) {
        try {
            analyze_scan(image, image_path, {}, reg, ids);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::Io;
    }
};

} // namespace

TEST_F(PipelineTest, BuiltinAnalysisIsWellFormed) {
    const auto a = analyze_vessels(image, {});
    EXPECT_GT(count_on(a.mask), 0u);
    for (std::size_t i = 0; i < a.mask.size(); ++i) {
        ASSERT_LE(a.mask.values()[i], a.fov.values()[i]);
        ASSERT_LE(a.skeleton.values()[i], a.mask.values()[i]);
    }
    EXPECT_GT(a.report.segments_used, 0);
    ASSERT_TRUE(a.report.average_tortuosity);
    EXPECT_GE(*a.report.average_tortuosity, 1.0);
    EXPECT_LE(*a.report.average_tortuosity, *a.report.max_tortuosity);
    EXPECT_DOUBLE_EQ(a.report.min_arc_px, skeleton::default_min_arc_px(192));
    EXPECT_EQ(a.mask_source, "builtin");

    const auto again = analyze_vessels(image, {});
    EXPECT_EQ(again.mask, a.mask);
    EXPECT_EQ(again.report.average_tortuosity, a.report.average_tortuosity);
}

TEST_F(PipelineTest, MaskStaysInsideFovForManyInputs) {
    for (int variant = 0; variant < 4; ++variant) {
        const auto img = fixtures::synthetic_fundus(128, variant);
        PipelineConfig cfg;
        cfg.fixed_threshold = 0.05 + 0.1 * variant;
        const auto a = analyze_vessels(img, cfg);
        for (std::size_t i = 0; i < a.mask.size(); ++i) ASSERT_LE(a.mask.values()[i], a.fov.values()[i]);
    }
}

TEST_F(PipelineTest, ExternalMaskReplacesSegmentation) {
    vessels::VesselMask mask(image.width, image.height, 0);
    for (int x = 40; x < 150; ++x) mask(x, 96) = 1;
    const auto a = analyze_vessels(image, {}, &mask);
    EXPECT_EQ(count_on(a.mask), 110u);
    ASSERT_EQ(a.report.segments_used, 1);
    EXPECT_DOUBLE_EQ(*a.report.average_tortuosity, 1.0);
}

TEST_F(PipelineTest, StubGradingIsDeterministic) {
    const grading::AdapterRegistry reg;
    const auto a = analyze_scan(image, image_path, {}, reg, {"stub"});
    const auto b = analyze_scan(image, image_path, {}, reg, {"stub"});
    EXPECT_EQ(a.grading, b.grading);
    EXPECT_EQ(a.grading, grading::stub_adapter(image));
    const auto doc = analysis_document(image, a);
    for (const char* key : {"image", "tortuosity", "metrics", "severity", "vessel_mask_source"})
        EXPECT_TRUE(doc.contains(key)) << key;
    EXPECT_EQ(doc["image"]["source_id"], image.source_id);
    EXPECT_EQ(doc["tortuosity"]["segments_used"], a.vessels.report.segments_used);
}

TEST_F(PipelineTest, FirstValidAdapterWins) {
    const grading::AdapterRegistry reg({
        adapter("broken", "exit 1"),
        adapter("good", R"(echo '{"retinopathy_grade": 2, "edema_risk": 1, "glaucoma_score": 1}')"),
    });
    const auto a = analyze_scan(image, image_path, {}, reg, {"broken", "good", "stub"});
    EXPECT_EQ(a.grading.retinopathy_grade, 2);
    EXPECT_EQ(a.grading.produced_by, "good");
}

TEST_F(PipelineTest, ValidationErrorOutranksCrash) {
    const grading::AdapterRegistry reg({
        adapter("invalid", R"(echo '{"retinopathy_grade": 7, "edema_risk": 1, "glaucoma_score": 1}')"),
        adapter("crash", "exit 2"),
        adapter("garbage", "echo nope"),
    });
    EXPECT_EQ(scan_error(reg, {"invalid", "crash"}), ErrorCode::OutOfRange);
    EXPECT_EQ(scan_error(reg, {"crash", "garbage"}), ErrorCode::AdapterBadOutput);
    EXPECT_EQ(scan_error(reg, {"garbage", "crash"}), ErrorCode::AdapterCrashed);
    EXPECT_EQ(scan_error(reg, {"nobody"}), ErrorCode::BadParams);
}

TEST_F(PipelineTest, VesselMaskAdapterAndFallback) {
    vessels::VesselMask mask(image.width, image.height, 0);
    for (int y = 50; y < 140; ++y) mask(96, y) = 1;
    const auto b64 = base64_encode(io::write_png_mask(mask));
    dir.write("mask.json", json{{"kind", "vessel_mask"}, {"mask_png_base64", b64}}.dump());
    const grading::AdapterRegistry reg({
        adapter("segmenter", "cat " + (dir / "mask.json").string(), grading::AdapterKind::vessel_mask),
        adapter("bad_segmenter", "echo '{}'", grading::AdapterKind::vessel_mask),
    });
    const auto a = analyze_scan(image, image_path, {}, reg, {"segmenter", "stub"});
    EXPECT_EQ(a.vessels.mask_source, "segmenter");
    EXPECT_EQ(count_on(a.vessels.mask), 90u);

    const auto fallback = analyze_scan(image, image_path, {}, reg, {"bad_segmenter", "stub"});
    EXPECT_EQ(fallback.vessels.mask_source, "builtin");
    EXPECT_EQ(fallback.vessels.mask, analyze_vessels(image, {}).mask);
}

TEST(PipelineQuality, SegmentationRecoversPaintedVessels) {
    // Measured Dice on these fixtures: 0.903 to 0.942.
    for (int size : {128, 256})
        for (int variant = 0; variant < 3; ++variant) {
            Plane<std::uint8_t> truth;
            const auto img = fixtures::synthetic_fundus(size, variant, &truth);
            const auto a = analyze_vessels(img, {});
            double tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < truth.size(); ++i) {
                const bool t = truth.values()[i], m = a.mask.values()[i];
                tp += t && m;
                fp += !t && m;
                fn += t && !m;
            }
            EXPECT_GE(2 * tp / (2 * tp + fp + fn), 0.85) << size << " variant " << variant;
        }
}
