#include "fundus/config.hpp"

#include "fundus/error.hpp"
#include "fundus/image_io.hpp"

#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/tokenizer.hpp>

#include <algorithm>
#include <set>
#include <sstream>

namespace fundus::config {

namespace {

namespace pt = boost::property_tree;

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    s = s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::istringstream in(value);
    for (std::string item; std::getline(in, item, ',');)
        if (auto t = trim(item); !t.empty()) out.push_back(std::move(t));
    return out;
}

/// Shell-like split honouring double quotes and backslash escapes.
std::vector<std::string> split_command(const std::string& value, const std::string& where) {
    std::vector<std::string> out;
    try {
        boost::escaped_list_separator<char> sep('\\', ' ', '"');
        for (const auto& tok : boost::tokenizer<boost::escaped_list_separator<char>>(value, sep))
            if (!tok.empty()) out.push_back(tok);
    } catch (const boost::escaped_list_error& e) {
        throw Error(ErrorCode::BadParams, where + ": " + e.what(), where);
    }
    return out;
}

/// Typed access to one section that rejects keys nobody read.
class Section {
public:
    Section(std::string name, const pt::ptree& tree) : name_(std::move(name)), tree_(tree) {}

    template <class T>
    void read(const char* key, T& target) {
        if (auto v = raw(key)) target = convert<T>(*v, key);
    }
    template <class T>
    void read(const char* key, std::optional<T>& target) {
        if (auto v = raw(key)) target = convert<T>(*v, key);
    }
    std::optional<std::string> raw(const std::string& key) {
        seen_.insert(key);
        const auto child = tree_.get_child_optional(pt::ptree::path_type(key, '\0'));
        if (!child) return std::nullopt;
        return trim(child->data());
    }
    [[nodiscard]] std::string where(const std::string& key) const { return name_ + "." + key; }
    [[nodiscard]] const pt::ptree& tree() const { return tree_; }

    void finish() const {
        for (const auto& [key, _] : tree_)
            if (!seen_.count(key))
                throw Error(ErrorCode::BadParams, "unknown configuration key " + where(key), where(key));
    }

    template <class T>
    T convert(const std::string& value, const std::string& key) const {
        if constexpr (std::is_same_v<T, std::string>) {
            return value;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (value == "true" || value == "1" || value == "yes") return true;
            if (value == "false" || value == "0" || value == "no") return false;
            throw Error(ErrorCode::BadParams, where(key) + " must be true or false", where(key));
        } else {
            try {
                return boost::lexical_cast<T>(value);
            } catch (const boost::bad_lexical_cast&) {
                throw Error(ErrorCode::BadParams, where(key) + " has an invalid value '" + value + "'", where(key));
            }
        }
    }

private:
    std::string name_;
    const pt::ptree& tree_;
    std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

void read_service(Section& s, ServiceConfig& c, const std::filesystem::path& base) {
    s.read("host", c.host);
    s.read("port", c.port);
    if (auto dir = s.raw("data_dir")) c.data_dir = resolve(base, *dir);
    s.read("workers", c.workers);
    s.read("token_ttl_seconds", c.token_ttl_seconds);
    s.read("max_upload_bytes", c.max_upload_bytes);
}

void read_pipeline(Section& s, Config& c) {
    auto& p = c.pipeline;
    s.read("fov_threshold", p.fov_threshold);
    s.read("clahe_tile", p.clahe_tile);
    s.read("clahe_clip", p.clahe_clip);
    if (auto scales = s.raw("scales")) {
        p.vesselness.scales.clear();
        for (const auto& v : split_list(*scales)) p.vesselness.scales.push_back(s.convert<double>(v, "scales"));
    }
    s.read("beta", p.vesselness.beta);
    s.read("c", p.vesselness.c);
    s.read("invert", p.vesselness.invert);
    if (auto t = s.raw("threshold")) {
        if (*t == "otsu")
            p.fixed_threshold.reset();
        else
            p.fixed_threshold = s.convert<double>(*t, "threshold");
    }
    s.read("min_component_px", p.min_component_px);
    s.read("min_arc_px", p.min_arc_px);
    if (auto order = s.raw("adapters")) c.adapter_order = split_list(*order);
}

void read_thresholds(Section& s, grading::TortuosityThresholds& t) {
    s.read("tortuosity_low", t.low);
    s.read("tortuosity_moderate", t.moderate);
    s.read("tortuosity_high", t.high);
}

void read_trends(Section& s, trend::ChangePolicy& policy) {
    s.read("baseline_window", policy.baseline_window);
    for (auto name : grading::kMetricNames) {
        const std::string key(name);
        if (auto v = s.raw(key)) {
            if (*v == "off")
                policy.thresholds.erase(key);
            else
                policy.thresholds[key] = s.convert<double>(*v, key);
        }
    }
}

interpret::Endpoint read_interpretation(Section& s) {
    interpret::Endpoint e;
    s.read("url", e.url);
    s.read("model", e.model);
    s.read("credential_env", e.credential_env);
    s.read("timeout_seconds", e.timeout_seconds);
    s.read("max_retries", e.max_retries);
    s.read("max_in_flight", e.max_in_flight);
    return e;
}

grading::AdapterSpec read_adapter(Section& s, const std::string& id, const std::filesystem::path& base) {
    grading::AdapterSpec spec;
    spec.id = id;
    if (auto cmd = s.raw("command")) {
        spec.command = split_command(*cmd, s.where("command"));
        // Program paths with a directory part are relative to the config file.
        if (!spec.command.empty() && spec.command[0].find('/') != std::string::npos)
            spec.command[0] = resolve(base, spec.command[0]).string();
    }
    s.read("timeout_seconds", spec.timeout_seconds);
    s.read("max_concurrency", spec.max_concurrency);
    if (auto kinds = s.raw("kinds")) {
        spec.expected_kinds.clear();
        for (const auto& k : split_list(*kinds)) {
            if (k == "grading")
                spec.expected_kinds.insert(grading::AdapterKind::grading);
            else if (k == "vessel_mask")
                spec.expected_kinds.insert(grading::AdapterKind::vessel_mask);
            else
                throw Error(ErrorCode::BadParams, s.where("kinds") + ": unknown kind " + k, s.where("kinds"));
        }
    }
    return spec;
}

} // namespace

void Config::validate() const {
    if (service.port < 0 || service.port > 65535) throw Error(ErrorCode::BadParams, "port out of range", "service.port");
    if (service.workers < 1) throw Error(ErrorCode::BadParams, "workers must be at least 1", "service.workers");
    if (service.token_ttl_seconds < 1)
        throw Error(ErrorCode::BadParams, "token TTL must be positive", "service.token_ttl_seconds");
    if (service.max_upload_bytes < 1024)
        throw Error(ErrorCode::BadParams, "upload limit below 1 KiB", "service.max_upload_bytes");
    pipeline.vesselness.validate();
    if (!(thresholds.low < thresholds.moderate && thresholds.moderate < thresholds.high))
        throw Error(ErrorCode::BadParams, "tortuosity thresholds must increase", "thresholds");
    change_policy.validate();
    if (adapter_order.empty()) throw Error(ErrorCode::BadParams, "no adapters listed", "pipeline.adapters");
    for (const auto& spec : adapters) spec.validate();
    for (const auto& id : adapter_order) {
        const bool defined = id == grading::kStubAdapterId ||
                             std::any_of(adapters.begin(), adapters.end(), [&](const auto& a) { return a.id == id; });
        if (!defined) throw Error(ErrorCode::BadParams, "adapter " + id + " is not defined", "pipeline.adapters");
    }
    if (interpretation) interpretation->validate();
}

Config parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorCode::BadParams, std::string("configuration: ") + e.what());
    }
    Config c;
    for (const auto& [name, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw Error(ErrorCode::BadParams, "configuration key " + name + " outside a section", name);
        Section s(name, body);
        if (name == "service")
            read_service(s, c.service, base_dir);
        else if (name == "pipeline")
            read_pipeline(s, c);
        else if (name == "thresholds")
            read_thresholds(s, c.thresholds);
        else if (name == "trends")
            read_trends(s, c.change_policy);
        else if (name == "interpretation")
            c.interpretation = read_interpretation(s);
        else if (name.rfind("adapter:", 0) == 0)
            c.adapters.push_back(read_adapter(s, name.substr(8), base_dir));
        else
            throw Error(ErrorCode::BadParams, "unknown configuration section [" + name + "]", name);
        s.finish();
    }
    c.validate();
    return c;
}

Config load_config(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return parse_config(std::string(bytes.begin(), bytes.end()), path.parent_path().empty() ? "." : path.parent_path());
}

} // namespace fundus::config
