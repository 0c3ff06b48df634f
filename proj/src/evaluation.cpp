#include "fundus/evaluation.hpp"

#include "fundus/error.hpp"
#include "fundus/image_io.hpp"
#include "fundus/pipeline.hpp"

#include <boost/tokenizer.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <set>
#include <sstream>
#include <thread>

namespace fundus::eval {

namespace {

std::vector<std::string> split_row(const std::string& line, const std::string& where) {
    std::vector<std::string> out;
    try {
        boost::escaped_list_separator<char> sep('\\', ',', '"');
        for (const auto& field : boost::tokenizer<boost::escaped_list_separator<char>>(line, sep))
            out.push_back(field);
    } catch (const boost::escaped_list_error& e) {
        throw Error(ErrorCode::BadParams, where + ": " + e.what(), where);
    }
    for (auto& f : out) {
        const auto first = f.find_first_not_of(" \t");
        f = first == std::string::npos ? std::string{} : f.substr(first, f.find_last_not_of(" \t") - first + 1);
    }
    return out;
}

int parse_class(const std::string& text, int classes, const std::string& column, const std::string& where) {
    int v = -1;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || v < 0 || v >= classes)
        throw Error(ErrorCode::BadParams,
                    where + ": " + column + " must be an integer 0-" + std::to_string(classes - 1) + ", got '" + text + "'",
                    column);
    return v;
}

} // namespace

std::vector<LabelRow> parse_labels(const std::string& csv_text) {
    std::istringstream in(csv_text);
    std::string line;
    int line_no = 0;
    auto next = [&] {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.find_first_not_of(" \t") != std::string::npos) return true;
        }
        return false;
    };
    if (!next()) throw Error(ErrorCode::BadParams, "labels: empty file");
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    const auto header = split_row(line, "labels line 1");
    if (header.size() != 3 || (header[0] != "image" && header[0] != "filename") ||
        header[1] != "retinopathy_grade" || header[2] != "edema_risk")
        throw Error(ErrorCode::BadParams, "labels: header must be image,retinopathy_grade,edema_risk");

    std::vector<LabelRow> rows;
    std::set<std::string> seen;
    while (next()) {
        const std::string where = "labels line " + std::to_string(line_no);
        const auto fields = split_row(line, where);
        if (fields.size() != 3)
            throw Error(ErrorCode::BadParams, where + ": expected 3 fields, got " + std::to_string(fields.size()));
        LabelRow row;
        row.filename = fields[0];
        if (row.filename.empty() || row.filename.find('/') != std::string::npos || row.filename == "." ||
            row.filename == "..")
            throw Error(ErrorCode::BadParams, where + ": invalid image name '" + row.filename + "'", "image");
        row.retinopathy_grade = parse_class(fields[1], 4, "retinopathy_grade", where);
        row.edema_risk = parse_class(fields[2], 3, "edema_risk", where);
        if (!seen.insert(row.filename).second)
            throw Error(ErrorCode::BadParams, where + ": duplicate image '" + row.filename + "'", "image");
        rows.push_back(std::move(row));
    }
    return rows;
}

ConfusionMatrix::ConfusionMatrix(int classes) : k_(classes) {
    if (classes < 1) throw Error(ErrorCode::BadParams, "confusion matrix needs at least one class");
    counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

void ConfusionMatrix::add(int truth, int prediction) {
    if (truth < 0 || truth >= k_ || prediction < 0 || prediction >= k_)
        throw Error(ErrorCode::OutOfRange, "class outside the confusion matrix");
    ++counts_[static_cast<std::size_t>(truth) * k_ + prediction];
    ++total_;
}

long ConfusionMatrix::at(int truth, int prediction) const {
    if (truth < 0 || truth >= k_ || prediction < 0 || prediction >= k_)
        throw Error(ErrorCode::OutOfRange, "class outside the confusion matrix");
    return counts_[static_cast<std::size_t>(truth) * k_ + prediction];
}

long ConfusionMatrix::trace() const noexcept {
    long t = 0;
    for (int i = 0; i < k_; ++i) t += counts_[static_cast<std::size_t>(i) * k_ + i];
    return t;
}

long ConfusionMatrix::row_sum(int truth) const {
    long s = 0;
    for (int p = 0; p < k_; ++p) s += at(truth, p);
    return s;
}

std::optional<double> ConfusionMatrix::accuracy() const noexcept {
    if (total_ == 0) return std::nullopt;
    return static_cast<double>(trace()) / static_cast<double>(total_);
}

grading::json ConfusionMatrix::to_json() const {
    grading::json rows = grading::json::array();
    for (int t = 0; t < k_; ++t) {
        grading::json row = grading::json::array();
        for (int p = 0; p < k_; ++p) row.push_back(at(t, p));
        rows.push_back(std::move(row));
    }
    const auto acc = accuracy();
    return {{"classes", k_}, {"matrix", std::move(rows)}, {"total", total_},
            {"accuracy", acc ? grading::json(*acc) : grading::json(nullptr)}};
}

grading::json EvaluationReport::to_json() const {
    grading::json failed = grading::json::array();
    for (const auto& f : failures) failed.push_back({{"image", f.filename}, {"error", f.error}});
    return {{"evaluated", retinopathy.total()},
            {"failed", failures.size()},
            {"retinopathy_grade", retinopathy.to_json()},
            {"edema_risk", edema.to_json()},
            {"failures", std::move(failed)}};
}

std::string EvaluationReport::to_csv() const {
    std::string out = "task,true,predicted,count\n";
    const std::pair<const char*, const ConfusionMatrix*> tasks[] = {{"retinopathy_grade", &retinopathy},
                                                                   {"edema_risk", &edema}};
    for (const auto& [name, m] : tasks)
        for (int t = 0; t < m->classes(); ++t)
            for (int p = 0; p < m->classes(); ++p)
                out += std::string(name) + "," + std::to_string(t) + "," + std::to_string(p) + "," +
                       std::to_string(m->at(t, p)) + "\n";
    out += "\ntask,accuracy\n";
    for (const auto& [name, m] : tasks) {
        const auto acc = m->accuracy();
        out += std::string(name) + "," + (acc ? grading::json(*acc).dump() : std::string{}) + "\n";
    }
    return out;
}

Predictor adapter_predictor(const grading::AdapterRegistry& adapters, std::vector<std::string> adapter_ids) {
    return [&adapters, ids = std::move(adapter_ids)](const std::filesystem::path& path) {
        const auto bytes = io::read_file(path);
        const auto image = imaging::decode_image(bytes);
        return pipeline::grade_image(image, path, adapters, ids);
    };
}

EvaluationReport evaluate(const std::vector<LabelRow>& labels, const std::filesystem::path& image_dir,
                          const Predictor& predict, int workers) {
    if (workers < 1) throw Error(ErrorCode::BadParams, "workers must be at least 1", "workers");
    for (const auto& row : labels)
        if (!std::filesystem::is_regular_file(image_dir / row.filename))
            throw Error(ErrorCode::Io, "labelled image not found: " + (image_dir / row.filename).string(), "image");

    struct Outcome {
        std::optional<grading::GradingMetrics> metrics;
        std::string error;
    };
    std::vector<Outcome> outcomes(labels.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < labels.size(); i = next++) {
            try {
                outcomes[i].metrics = predict(image_dir / labels[i].filename);
            } catch (const Error& e) {
                outcomes[i].error = std::string(to_string(e.code())) + ": " + e.what();
            } catch (const std::exception& e) {
                outcomes[i].error = e.what();
            }
        }
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(workers), labels.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < n; ++i) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    EvaluationReport report;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto& o = outcomes[i];
        if (!o.metrics) {
            report.failures.push_back({labels[i].filename, o.error});
            continue;
        }
        if (o.metrics->retinopathy_grade < 0 || o.metrics->retinopathy_grade > 3 || o.metrics->edema_risk < 0 ||
            o.metrics->edema_risk > 2) {
            report.failures.push_back({labels[i].filename, "OutOfRange: prediction outside the label classes"});
            continue;
        }
        report.retinopathy.add(labels[i].retinopathy_grade, o.metrics->retinopathy_grade);
        report.edema.add(labels[i].edema_risk, o.metrics->edema_risk);
    }
    return report;
}

} // namespace fundus::eval
