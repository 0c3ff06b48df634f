#pragma once

#include "fundus/config.hpp"
#include "fundus/time.hpp"
#include "fundus/trend_store.hpp"

#include <functional>
#include <memory>
#include <string>

namespace fundus::service {

/// The HTTP API: users and bearer tokens, scan upload and analysis, history,
/// trends, calendar, reports, notes and interpretations. Data lives under
/// config.service.data_dir (store/ for the logs, images/ for uploads).
class Service {
public:
    using Clock = std::function<Timestamp()>;

    explicit Service(config::Config config, Clock clock = now_utc);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Port 0 picks a free port; returns the bound port. Throws Io.
    int bind(const std::string& host, int port);
    /// Serves on the bound socket until stop().
    void serve();
    void stop();
    void wait_until_ready() const;

    [[nodiscard]] trend::TrendStore& store();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace fundus::service
