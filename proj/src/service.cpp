#include "fundus/service.hpp"

#include "fundus/disclaimer.hpp"
#include "fundus/error.hpp"
#include "fundus/hash.hpp"
#include "fundus/image_io.hpp"
#include "fundus/interpretation.hpp"
#include "fundus/pipeline.hpp"

#include <httplib.h>

#include <charconv>
#include <mutex>
#include <unordered_map>

namespace fundus::service {

namespace {

using grading::json;

constexpr std::string_view kJson = "application/json";

struct HttpError {
    int status;
    std::string code;
    std::string message;
    std::string field;
};

int status_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::UnknownUser:
    case ErrorCode::UnknownScan:
        return 404;
    case ErrorCode::AdapterTimeout:
    case ErrorCode::AdapterCrashed:
    case ErrorCode::AdapterBadOutput:
    case ErrorCode::EndpointUnreachable:
    case ErrorCode::EndpointError:
    case ErrorCode::Timeout:
        return 502;
    case ErrorCode::Io:
    case ErrorCode::DegenerateChord:
        return 500;
    default:
        return 400;
    }
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), std::string(kJson));
}

void send_error(httplib::Response& res, const HttpError& e) {
    json err = {{"code", e.code}, {"message", e.message}};
    if (!e.field.empty()) err["field"] = e.field;
    send_json(res, e.status, {{"error", err}});
}

HttpError from_error(const Error& e, int status) {
    return {status, std::string(to_string(e.code())), e.what(), e.field()};
}

json parse_body(const httplib::Request& req) {
    try {
        json body = json::parse(req.body);
        if (!body.is_object()) throw HttpError{400, "BadParams", "request body must be a JSON object", {}};
        return body;
    } catch (const json::parse_error&) {
        throw HttpError{400, "BadParams", "request body is not valid JSON", {}};
    }
}

std::string string_field(const json& body, const char* key) {
    if (!body.contains(key)) throw HttpError{400, "MissingField", std::string(key) + " is required", key};
    if (!body.at(key).is_string()) throw HttpError{400, "BadParams", std::string(key) + " must be a string", key};
    return body.at(key).get<std::string>();
}

std::optional<Timestamp> time_param(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    auto t = parse_timestamp(req.get_param_value(key));
    if (!t) throw HttpError{400, "BadParams", std::string(key) + " must be a UTC timestamp", key};
    return t;
}

std::optional<int> int_param(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    const std::string v = req.get_param_value(key);
    int out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
        throw HttpError{400, "BadParams", std::string(key) + " must be an integer", key};
    return out;
}

const Timestamp kEarliest = std::chrono::sys_days{std::chrono::year{1970} / 1 / 1};
const Timestamp kLatest = std::chrono::sys_days{std::chrono::year{9999} / 12 / 31} + std::chrono::hours{23} +
                          std::chrono::minutes{59} + std::chrono::seconds{59};

std::string_view image_extension(const std::string& bytes) {
    return bytes.rfind("\x89PNG", 0) == 0 ? "png" : "ppm";
}

json point_json(const trend::TrendPoint& p) {
    return {{"at", format_timestamp(p.at)}, {"value", p.value}, {"scan_id", p.scan_id}};
}

} // namespace

struct Service::Impl {
    config::Config config;
    Clock clock;
    trend::TrendStore store;
    grading::AdapterRegistry adapters;
    interpret::InterpretationClient interpreter;
    std::filesystem::path image_dir;
    httplib::Server server;

    struct Token {
        std::string user_id;
        Timestamp expires_at;
    };
    std::mutex tokens_mutex;
    std::unordered_map<std::string, Token> tokens;

    Impl(config::Config cfg, Clock clk)
        : config(std::move(cfg)),
          clock(std::move(clk)),
          store(config.service.data_dir / "store", clock),
          adapters(config.adapters),
          interpreter(config.interpretation, config.thresholds),
          image_dir(config.service.data_dir / "images") {
        std::filesystem::create_directories(image_dir);
        const auto workers = static_cast<std::size_t>(config.service.workers);
        server.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
        server.set_payload_max_length(config.service.max_upload_bytes);
        routes();
    }

    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    /// Maps exceptions to JSON error responses.
    static httplib::Server::Handler guarded(Handler h) {
        return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
            try {
                h(req, res);
            } catch (const HttpError& e) {
                send_error(res, e);
            } catch (const Error& e) {
                send_error(res, from_error(e, status_for(e.code())));
            } catch (const json::exception& e) {
                send_error(res, {400, "BadParams", e.what(), {}});
            } catch (const std::exception& e) {
                send_error(res, {500, "Internal", e.what(), {}});
            }
        };
    }

    std::string authenticate(const httplib::Request& req) {
        static constexpr std::string_view prefix = "Bearer ";
        const std::string header = req.get_header_value("Authorization");
        if (header.rfind(prefix, 0) != 0) throw HttpError{401, "Unauthorized", "bearer token required", {}};
        const std::string token = header.substr(prefix.size());
        std::lock_guard lock(tokens_mutex);
        const auto it = tokens.find(token);
        if (it == tokens.end()) throw HttpError{401, "Unauthorized", "unknown token", {}};
        if (clock() >= it->second.expires_at) {
            tokens.erase(it);
            throw HttpError{401, "Unauthorized", "token expired", {}};
        }
        return it->second.user_id;
    }

    /// The caller may only address their own user id; others look absent.
    std::string owner(const httplib::Request& req) {
        const std::string user = authenticate(req);
        if (req.matches[1].str() != user) throw HttpError{404, "UnknownUser", "unknown user", {}};
        return user;
    }

    trend::ScanRecord owned_scan(const std::string& user, const std::string& scan_id) {
        try {
            auto scan = store.get_scan(scan_id);
            if (scan.user_id == user) return scan;
        } catch (const Error&) {
        }
        throw HttpError{404, "UnknownScan", "unknown scan", {}};
    }

    json scan_response(const trend::ScanRecord& record, bool replay) {
        json alerts = json::array();
        for (const auto& a : store.alerts(record.user_id, kEarliest, kLatest, config.change_policy))
            if (a.scan_id == record.scan_id) alerts.push_back(trend::to_json(a));
        return {{"scan", trend::to_json(record)},
                {"severity", pipeline::severity_document(record.scan_metrics(), config.thresholds)},
                {"alerts", std::move(alerts)},
                {"replay", replay}};
    }

    std::filesystem::path save_image(const std::string& bytes, const std::string& hash) {
        const auto dir = image_dir / hash.substr(0, 2);
        const auto path = dir / (hash + "." + std::string(image_extension(bytes)));
        if (std::filesystem::exists(path)) return path;
        std::filesystem::create_directories(dir);
        const auto tmp = dir / (hash + ".tmp-" + random_hex(6));
        io::write_file(tmp, std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
        std::filesystem::rename(tmp, path);
        return path;
    }

    void post_users(const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        const std::string name = string_field(body, "display_name");
        const std::string password = string_field(body, "password");
        if (name.empty()) throw HttpError{400, "BadParams", "display_name is empty", "display_name"};
        if (password.size() < 8) throw HttpError{400, "BadParams", "password needs at least 8 characters", "password"};
        const auto profile = store.create_user(name, hash_password(password));
        send_json(res, 201, trend::to_json(profile));
    }

    void post_token(const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        const std::string user = string_field(body, "user_id");
        const std::string password = string_field(body, "password");
        std::string stored;
        try {
            stored = store.credential_hash(user);
        } catch (const Error&) {
        }
        if (!verify_password(password, stored)) throw HttpError{401, "Unauthorized", "bad credentials", {}};
        const Timestamp expires = clock() + std::chrono::seconds(config.service.token_ttl_seconds);
        const std::string token = random_hex(32);
        {
            std::lock_guard lock(tokens_mutex);
            tokens[token] = {user, expires};
        }
        send_json(res, 200, {{"token", token}, {"user_id", user}, {"expires_at", format_timestamp(expires)}});
    }

    void post_scans(const httplib::Request& req, httplib::Response& res) {
        const std::string user = authenticate(req);
        if (!req.is_multipart_form_data() || !req.has_file("image"))
            throw HttpError{400, "MissingField", "multipart field image is required", "image"};
        const std::string& bytes = req.get_file_value("image").content;

        std::optional<std::string> key;
        if (req.has_file("idempotency_key")) {
            key = req.get_file_value("idempotency_key").content;
            if (auto existing = store.find_by_idempotency_key(user, *key)) {
                send_json(res, 200, scan_response(store.get_scan(*existing), true));
                return;
            }
        }
        Timestamp captured = clock();
        if (req.has_file("captured_at")) {
            auto t = parse_timestamp(req.get_file_value("captured_at").content);
            if (!t) throw HttpError{400, "BadParams", "captured_at must be a UTC timestamp", "captured_at"};
            captured = *t;
        }
        if (captured > clock()) throw HttpError{400, "OutOfRange", "captured_at lies in the future", "captured_at"};

        imaging::FundusImage image;
        try {
            image = imaging::decode_image(
                std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
        } catch (const Error& e) {
            throw from_error(e, 400);
        }
        const auto path = save_image(bytes, image.source_id);

        pipeline::ScanAnalysis analysis;
        try {
            analysis = pipeline::analyze_scan(image, path, config.pipeline, adapters, config.adapter_order);
        } catch (const Error& e) {
            const bool invalid = e.code() == ErrorCode::OutOfRange || e.code() == ErrorCode::MissingField;
            throw from_error(e, invalid ? 422 : status_for(e.code()));
        }

        trend::ScanRecord record;
        record.captured_at = captured;
        record.image_ref = image.source_id;
        record.metrics = analysis.grading;
        record.tortuosity = grading::summarize(analysis.vessels.report);
        record.idempotency_key = key;
        try {
            const std::string id = store.append_scan(user, record);
            send_json(res, 200, scan_response(store.get_scan(id), false));
        } catch (const trend::DuplicateScanError& dup) {
            send_json(res, 200, scan_response(store.get_scan(dup.existing_scan_id()), true));
        }
    }

    void routes() {
        server.Post("/users", guarded([this](auto& req, auto& res) { post_users(req, res); }));
        server.Post("/auth/token", guarded([this](auto& req, auto& res) { post_token(req, res); }));
        server.Post("/scans", guarded([this](auto& req, auto& res) { post_scans(req, res); }));

        server.Get(R"(/scans/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto scan = owned_scan(authenticate(req), req.matches[1]);
                       auto body = scan_response(scan, false);
                       body.erase("replay");
                       send_json(res, 200, body);
                   }));

        server.Get(R"(/scans/([^/]+)/interpretation)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto scan = owned_scan(authenticate(req), req.matches[1]);
                       const std::string locale = req.has_param("locale") ? req.get_param_value("locale") : "en";
                       const auto result = interpreter.interpret(scan.scan_metrics(), locale);
                       send_json(res, 200,
                                 {{"scan_id", scan.scan_id},
                                  {"text", result.text},
                                  {"source", interpret::to_string(result.source)},
                                  {"disclaimer_included", result.disclaimer_included},
                                  {"disclaimer", kDisclaimer}});
                   }));

        server.Post(R"(/scans/([^/]+)/notes)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const std::string user = authenticate(req);
                        const auto scan = owned_scan(user, req.matches[1]);
                        const json body = parse_body(req);
                        const auto note = store.add_note(user, scan.scan_id, string_field(body, "text"));
                        send_json(res, 201, {{"scan_id", scan.scan_id}, {"note", trend::to_json(note)}});
                    }));

        server.Get(R"(/users/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto profile = store.find_user(owner(req));
                       send_json(res, 200, trend::to_json(*profile));
                   }));

        server.Get(R"(/users/([^/]+)/history)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string user = owner(req);
                       json scans = json::array();
                       for (const auto& s : store.get_history(user, time_param(req, "from").value_or(kEarliest),
                                                              time_param(req, "to").value_or(kLatest)))
                           scans.push_back(trend::to_json(s));
                       send_json(res, 200, {{"user_id", user}, {"scans", std::move(scans)}});
                   }));

        server.Get(R"(/users/([^/]+)/trends)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string user = owner(req);
                       if (!req.has_param("metric"))
                           throw HttpError{400, "MissingField", "metric is required", "metric"};
                       const std::string metric = req.get_param_value("metric");
                       const Timestamp from = time_param(req, "from").value_or(kEarliest);
                       const Timestamp to = time_param(req, "to").value_or(kLatest);
                       if (from > to) throw HttpError{400, "BadParams", "from is after to", "from"};
                       const auto series = store.series(user, metric, from, to);
                       json points = json::array();
                       for (const auto& p : series.points) points.push_back(point_json(p));
                       json alerts = json::array();
                       for (const auto& a : store.alerts(user, from, to, config.change_policy))
                           if (a.metric_name == metric) alerts.push_back(trend::to_json(a));
                       send_json(res, 200,
                                 {{"user_id", user},
                                  {"metric", metric},
                                  {"points", std::move(points)},
                                  {"alerts", std::move(alerts)}});
                   }));

        server.Get(R"(/users/([^/]+)/calendar)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string user = owner(req);
                       const auto year = int_param(req, "year");
                       const auto month = int_param(req, "month");
                       if (!year || !month)
                           throw HttpError{400, "MissingField", "year and month are required", year ? "month" : "year"};
                       const int offset = int_param(req, "utc_offset").value_or(0);
                       json days = json::array();
                       for (const auto& d :
                            store.calendar_view(user, *year, *month, config.change_policy, config.thresholds, offset))
                           days.push_back({{"day", d.day},
                                           {"scan_count", d.scan_count},
                                           {"worst", grading::to_string(d.worst)},
                                           {"alert_count", d.alert_count}});
                       send_json(res, 200,
                                 {{"user_id", user},
                                  {"year", *year},
                                  {"month", *month},
                                  {"utc_offset", offset},
                                  {"days", std::move(days)}});
                   }));

        server.Get(R"(/users/([^/]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string user = owner(req);
                       const std::string name = req.has_param("format") ? req.get_param_value("format") : "json";
                       const auto format = trend::parse_report_format(name);
                       if (!format) throw HttpError{400, "BadParams", "format must be json, csv or markdown", "format"};
                       const Timestamp from = time_param(req, "from").value_or(kEarliest);
                       const Timestamp to = time_param(req, "to").value_or(kLatest);
                       const auto body =
                           store.export_report(user, from, to, *format, config.change_policy, config.thresholds);
                       res.status = 200;
                       switch (*format) {
                       case trend::ReportFormat::json:
                           res.set_content(body, std::string(kJson));
                           break;
                       case trend::ReportFormat::csv:
                           // The CSV body has no room for prose, so the disclaimer travels in a header.
                           res.set_header("X-Disclaimer", std::string(kDisclaimer));
                           res.set_content(body, "text/csv; charset=utf-8; header=present");
                           break;
                       case trend::ReportFormat::markdown:
                           res.set_content(body, "text/markdown; charset=utf-8");
                           break;
                       }
                   }));

        server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (!res.body.empty()) return;
            const std::string code = res.status == 404   ? "NotFound"
                                     : res.status == 413 ? "PayloadTooLarge"
                                                         : "HttpError";
            send_error(res, {res.status, code, httplib::status_message(res.status), {}});
        });
    }
};

Service::Service(config::Config config, Clock clock) {
    config.validate();
    impl_ = std::make_unique<Impl>(std::move(config), std::move(clock));
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound <= 0) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void Service::serve() { impl_->server.listen_after_bind(); }

void Service::stop() {
    if (impl_) impl_->server.stop();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

trend::TrendStore& Service::store() { return impl_->store; }

} // namespace fundus::service
