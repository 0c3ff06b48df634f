#pragma once

#include "fundus/adapter.hpp"
#include "fundus/metrics.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fundus::eval {

/// One annotated image: retinopathy grade 0-3 and edema risk 0-2.
struct LabelRow {
    std::string filename;
    int retinopathy_grade = 0;
    int edema_risk = 0;
};

/// CSV with header "image,retinopathy_grade,edema_risk" ("filename" is
/// accepted for the first column). Throws BadParams naming the line for a
/// malformed row, an out-of-range grade or a repeated filename.
std::vector<LabelRow> parse_labels(const std::string& csv_text);

/// Rows are true labels, columns predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int classes);

    /// Throws OutOfRange for a class outside [0, k).
    void add(int truth, int prediction);
    [[nodiscard]] int classes() const noexcept { return k_; }
    [[nodiscard]] long at(int truth, int prediction) const;
    [[nodiscard]] long total() const noexcept { return total_; }
    [[nodiscard]] long trace() const noexcept;
    [[nodiscard]] long row_sum(int truth) const;
    /// trace / total; nullopt when empty.
    [[nodiscard]] std::optional<double> accuracy() const noexcept;
    [[nodiscard]] grading::json to_json() const;

private:
    int k_;
    std::vector<long> counts_;
    long total_ = 0;
};

struct EvaluationFailure {
    std::string filename;
    std::string error;
};

struct EvaluationReport {
    ConfusionMatrix retinopathy{4};
    ConfusionMatrix edema{3};
    std::vector<EvaluationFailure> failures;

    [[nodiscard]] grading::json to_json() const;
    /// One "task,true,predicted,count" row per matrix cell plus accuracy rows.
    [[nodiscard]] std::string to_csv() const;
};

/// Produces the grading for one labelled image; throws fundus::Error on failure.
using Predictor = std::function<grading::GradingMetrics(const std::filesystem::path& image)>;

/// Decodes the image and grades it with the adapters in order. `adapters`
/// must outlive the predictor.
Predictor adapter_predictor(const grading::AdapterRegistry& adapters, std::vector<std::string> adapter_ids);

/// Runs the predictor over every row, up to `workers` at a time. Failed images
/// are listed in label order and excluded from the matrices. Throws Io before
/// any prediction when a referenced image is missing.
EvaluationReport evaluate(const std::vector<LabelRow>& labels, const std::filesystem::path& image_dir,
                          const Predictor& predict, int workers = 1);

} // namespace fundus::eval
