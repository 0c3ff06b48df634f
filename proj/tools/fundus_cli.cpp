#include "fundus/config.hpp"
#include "fundus/error.hpp"
#include "fundus/evaluation.hpp"
#include "fundus/image_io.hpp"
#include "fundus/pipeline.hpp"
#include "fundus/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <pthread.h>

#include <algorithm>
#include <atomic>
#include <iostream>
#include <optional>
#include <thread>

using namespace fundus;
using grading::json;

namespace {

/// Exit statuses shared by every subcommand.
enum Exit : int { kOk = 0, kInputError = 1, kAdapterError = 2 };

struct Options {
    std::string config_path;
    std::vector<std::string> adapters;
    int workers = 1;
    std::string format = "json";
};

config::Config load(const Options& opt) {
    config::Config c = opt.config_path.empty() ? config::Config{} : config::load_config(opt.config_path);
    if (!opt.adapters.empty()) c.adapter_order = opt.adapters;
    c.validate();
    return c;
}

bool is_adapter_error(ErrorCode code) {
    switch (code) {
    case ErrorCode::AdapterTimeout:
    case ErrorCode::AdapterCrashed:
    case ErrorCode::AdapterBadOutput:
    case ErrorCode::OutOfRange:
    case ErrorCode::MissingField:
        return true;
    default:
        return false;
    }
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

std::string csv_header() {
    std::string out = "filename";
    for (auto name : grading::kMetricNames) out += "," + std::string(name);
    return out + "\n";
}

std::string csv_row(const std::string& filename, const grading::ScanMetrics& metrics) {
    std::string out = csv_field(filename);
    for (const auto& mv : grading::flatten(metrics)) {
        out += ",";
        if (!mv.value) continue;
        const double v = *mv.value;
        out += v == static_cast<double>(static_cast<long long>(v)) ? std::to_string(static_cast<long long>(v))
                                                                    : json(v).dump();
    }
    return out + "\n";
}

struct Analysed {
    json document;
    grading::ScanMetrics metrics;
};

/// Decode errors come back as kInputError, adapter errors as kAdapterError.
Analysed analyse_file(const std::filesystem::path& path, const config::Config& c,
                      const grading::AdapterRegistry& registry) {
    const auto bytes = io::read_file(path);
    const auto image = imaging::decode_image(bytes);
    const auto analysis = pipeline::analyze_scan(image, path, c.pipeline, registry, c.adapter_order);
    return {pipeline::analysis_document(image, analysis, c.thresholds), analysis.metrics()};
}

std::string describe(const Error& e) { return std::string(to_string(e.code())) + ": " + e.what(); }

int run_analyze(const Options& opt, const std::string& image) {
    const auto c = load(opt);
    const grading::AdapterRegistry registry(c.adapters);
    try {
        const auto result = analyse_file(image, c, registry);
        if (opt.format == "csv")
            std::cout << csv_header() << csv_row(std::filesystem::path(image).filename().string(), result.metrics);
        else
            std::cout << result.document.dump(2) << "\n";
        return kOk;
    } catch (const Error& e) {
        std::cerr << image << ": " << describe(e) << "\n";
        return is_adapter_error(e.code()) ? kAdapterError : kInputError;
    }
}

/// Runs `job(i)` for i in [0, n) on up to `workers` threads.
template <class Job>
void parallel_for(std::size_t n, int workers, const Job& job) {
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) job(i);
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::min<std::size_t>(static_cast<std::size_t>(workers), n); ++t)
        pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
}

int run_batch(const Options& opt, const std::string& dir) {
    const auto c = load(opt);
    const grading::AdapterRegistry registry(c.adapters);
    std::vector<std::filesystem::path> files;
    try {
        for (const auto& entry : std::filesystem::directory_iterator(dir))
            if (entry.is_regular_file()) files.push_back(entry.path());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << dir << ": " << e.code().message() << "\n";
        return kInputError;
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });

    std::vector<std::optional<Analysed>> results(files.size());
    std::vector<std::string> errors(files.size());
    parallel_for(files.size(), opt.workers, [&](std::size_t i) {
        try {
            results[i] = analyse_file(files[i], c, registry);
        } catch (const Error& e) {
            errors[i] = describe(e);
        }
    });

    std::string out = opt.format == "csv" ? csv_header() : std::string{};
    json docs = json::array();
    std::size_t processed = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const auto name = files[i].filename().string();
        if (!results[i]) {
            std::cerr << name << ": skipped, " << errors[i] << "\n";
            continue;
        }
        ++processed;
        if (opt.format == "csv") {
            out += csv_row(name, results[i]->metrics);
        } else {
            json doc = {{"file", name}};
            doc.update(results[i]->document);
            docs.push_back(std::move(doc));
        }
    }
    if (processed == 0) {
        std::cerr << dir << ": no image could be processed\n";
        return kInputError;
    }
    std::cout << (opt.format == "csv" ? out : docs.dump(2) + "\n");
    return kOk;
}

int run_evaluate(const Options& opt, const std::string& labels_path, std::string images) {
    const auto c = load(opt);
    const grading::AdapterRegistry registry(c.adapters);
    std::vector<eval::LabelRow> labels;
    try {
        const auto bytes = io::read_file(labels_path);
        labels = eval::parse_labels(std::string(bytes.begin(), bytes.end()));
    } catch (const Error& e) {
        std::cerr << labels_path << ": " << describe(e) << "\n";
        return kInputError;
    }
    if (images.empty()) {
        const auto parent = std::filesystem::path(labels_path).parent_path();
        images = parent.empty() ? "." : parent.string();
    }
    eval::EvaluationReport report;
    try {
        report = eval::evaluate(labels, images, eval::adapter_predictor(registry, c.adapter_order), opt.workers);
    } catch (const Error& e) {
        std::cerr << describe(e) << "\n";
        return kInputError;
    }
    for (const auto& f : report.failures) std::cerr << f.filename << ": excluded, " << f.error << "\n";
    std::cout << (opt.format == "csv" ? report.to_csv() : report.to_json().dump(2) + "\n");
    return kOk;
}

int run_serve(const Options& opt, const std::optional<std::string>& host, const std::optional<int>& port,
              const std::optional<std::string>& data_dir) {
    auto c = load(opt);
    if (host) c.service.host = *host;
    if (port) c.service.port = *port;
    if (data_dir) c.service.data_dir = *data_dir;
    c.validate();

    // Block the stop signals before any thread starts so that only the
    // waiter below receives them.
    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

    service::Service svc(c);
    const int bound = svc.bind(c.service.host, c.service.port);
    std::cerr << "listening on " << c.service.host << ":" << bound << "\n" << std::flush;
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&stop_signals, &sig);
        svc.stop();
    });
    svc.serve();
    // serve() can also end without a signal; wake the waiter.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retinal fundus analysis"};
    app.require_subcommand(1);
    Options opt;
    app.add_option("--config", opt.config_path, "Configuration file")->check(CLI::ExistingFile);
    app.add_option("--adapter", opt.adapters, "Adapter id to use, in order (repeatable)");
    app.add_option("--workers", opt.workers, "Images processed in parallel")->check(CLI::Range(1, 256));
    app.add_option("--format", opt.format, "Output format")->check(CLI::IsMember({"json", "csv"}));

    std::string image, dir, labels, images;
    std::optional<std::string> host, data_dir;
    std::optional<int> port;
    auto* analyze = app.add_subcommand("analyze", "Analyse one image");
    analyze->add_option("image", image, "PNG or PPM file")->required();
    auto* batch = app.add_subcommand("batch", "Analyse every image in a directory");
    batch->add_option("directory", dir)->required();
    auto* evaluate = app.add_subcommand("evaluate", "Score the adapter against a labels table");
    evaluate->add_option("labels", labels, "CSV: image,retinopathy_grade,edema_risk")->required();
    evaluate->add_option("--images", images, "Image directory (default: the labels file's directory)");
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    serve->add_option("--host", host);
    serve->add_option("--port", port)->check(CLI::Range(0, 65535));
    serve->add_option("--data-dir", data_dir);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*analyze) return run_analyze(opt, image);
        if (*batch) return run_batch(opt, dir);
        if (*evaluate) return run_evaluate(opt, labels, images);
        return run_serve(opt, host, port, data_dir);
    } catch (const Error& e) {
        std::cerr << "error: " << describe(e) << "\n";
        return kInputError;
    }
}
