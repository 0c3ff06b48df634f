#pragma once

#include "fundus/adapter.hpp"
#include "fundus/interpretation.hpp"
#include "fundus/pipeline.hpp"
#include "fundus/trend_store.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fundus::config {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path data_dir = "fundus-data";
    int workers = 4;
    long token_ttl_seconds = 3600;
    std::size_t max_upload_bytes = 32u << 20;
};

struct Config {
    ServiceConfig service;
    pipeline::PipelineConfig pipeline;
    /// Adapter ids tried in order for every scan; "stub" is built in.
    std::vector<std::string> adapter_order{"stub"};
    std::vector<grading::AdapterSpec> adapters;
    grading::TortuosityThresholds thresholds;
    trend::ChangePolicy change_policy = trend::ChangePolicy::defaults();
    std::optional<interpret::Endpoint> interpretation;

    /// Throws BadParams when a listed adapter is not defined or a value is
    /// out of range.
    void validate() const;
};

/// INI-style text: [service], [pipeline], [thresholds], [trends],
/// [interpretation] and one [adapter:ID] section per external adapter.
/// Relative paths resolve against `base_dir`. Unknown sections or keys throw
/// BadParams naming "section.key".
Config parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");

/// Throws Io for an unreadable file.
Config load_config(const std::filesystem::path& path);

} // namespace fundus::config
