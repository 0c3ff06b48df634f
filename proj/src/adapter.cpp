#include "fundus/adapter.hpp"

#include "fundus/error.hpp"
#include "fundus/hash.hpp"
#include "fundus/image_io.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <thread>

namespace fundus::grading {

namespace {

constexpr std::size_t kMaxOutput = 64u << 20;
constexpr std::size_t kMaxStderr = 4096;

class Fd {
public:
    explicit Fd(int fd = -1) : fd_(fd) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    ~Fd() { reset(); }
    [[nodiscard]] int get() const noexcept { return fd_; }
    void reset(int fd = -1) {
        if (fd_ >= 0) ::close(fd_);
        fd_ = fd;
    }

private:
    int fd_;
};

std::string substitute(const std::string& arg, const std::string& image) {
    static constexpr std::string_view placeholder = "{image}";
    std::string out;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t hit = arg.find(placeholder, pos);
        if (hit == std::string::npos) break;
        out.append(arg, pos, hit - pos);
        out += image;
        pos = hit + placeholder.size();
    }
    out.append(arg, pos);
    return out;
}

void kill_group(pid_t pid) {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
}

} // namespace

std::string_view to_string(AdapterKind kind) noexcept {
    return kind == AdapterKind::grading ? "grading" : "vessel_mask";
}

void AdapterSpec::validate() const {
    if (id.empty()) throw Error(ErrorCode::BadParams, "adapter id is empty");
    if (command.empty() || command.front().empty())
        throw Error(ErrorCode::BadParams, "adapter " + id + " has an empty command");
    if (!(timeout_seconds >= 1.0 && timeout_seconds <= 600.0))
        throw Error(ErrorCode::BadParams, "adapter " + id + " timeout must lie in [1, 600] seconds");
    if (expected_kinds.empty())
        throw Error(ErrorCode::BadParams, "adapter " + id + " declares no output kind");
    if (max_concurrency < 1)
        throw Error(ErrorCode::BadParams, "adapter " + id + " max_concurrency must be >= 1");
}

json run_adapter(const AdapterSpec& spec, const std::filesystem::path& image_path) {
    spec.validate();
    if (!std::filesystem::is_regular_file(image_path))
        throw Error(ErrorCode::Io, "adapter input " + image_path.string() + " does not exist");

    std::vector<std::string> args;
    args.reserve(spec.command.size());
    for (const auto& a : spec.command) args.push_back(substitute(a, image_path.string()));
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);

    int out_pipe[2];
    int err_pipe[2];
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) throw Error(ErrorCode::Io, "pipe failed");
    Fd out_read(out_pipe[0]);
    Fd out_write(out_pipe[1]);
    if (::pipe2(err_pipe, O_CLOEXEC) != 0) throw Error(ErrorCode::Io, "pipe failed");
    Fd err_read(err_pipe[0]);
    Fd err_write(err_pipe[1]);

    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::milliseconds(static_cast<long long>(spec.timeout_seconds * 1000));

    const pid_t pid = ::fork();
    if (pid < 0) throw Error(ErrorCode::Io, "fork failed");
    if (pid == 0) {
        ::setpgid(0, 0);
        const int devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(err_pipe[1], STDERR_FILENO);
        ::execvp(argv[0], argv.data());
        _exit(127);
    }
    ::setpgid(pid, pid);
    out_write.reset();
    err_write.reset();

    std::string output;
    std::string errors;
    bool out_open = true;
    bool err_open = true;
    char buf[65536];
    while (out_open || err_open) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            kill_group(pid);
            throw Error(ErrorCode::AdapterTimeout, "adapter " + spec.id + " exceeded its timeout");
        }
        pollfd fds[2] = {{out_open ? out_read.get() : -1, POLLIN, 0},
                         {err_open ? err_read.get() : -1, POLLIN, 0}};
        const int ready = ::poll(fds, 2, static_cast<int>(std::min<long long>(left.count(), 100)));
        if (ready < 0 && errno != EINTR) {
            kill_group(pid);
            throw Error(ErrorCode::Io, "poll failed");
        }
        for (int i = 0; i < 2; ++i) {
            if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
            const ssize_t n = ::read(fds[i].fd, buf, sizeof buf);
            if (n > 0) {
                if (i == 0) {
                    output.append(buf, static_cast<std::size_t>(n));
                    if (output.size() > kMaxOutput) {
                        kill_group(pid);
                        throw Error(ErrorCode::AdapterBadOutput, "adapter " + spec.id + " output too large");
                    }
                } else if (errors.size() < kMaxStderr) {
                    errors.append(buf, static_cast<std::size_t>(n));
                }
            } else if (n == 0 || (errno != EINTR && errno != EAGAIN)) {
                (i == 0 ? out_open : err_open) = false;
            }
        }
    }

    int status = 0;
    for (;;) {
        const pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid) break;
        if (r < 0 && errno != EINTR) throw Error(ErrorCode::Io, "waitpid failed");
        if (std::chrono::steady_clock::now() >= deadline) {
            kill_group(pid);
            throw Error(ErrorCode::AdapterTimeout, "adapter " + spec.id + " exceeded its timeout");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    // Stray grandchildren must not outlive the call.
    ::kill(-pid, SIGKILL);

    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        const std::string how = WIFEXITED(status) ? "exit code " + std::to_string(WEXITSTATUS(status))
                                                  : "signal " + std::to_string(WTERMSIG(status));
        throw Error(ErrorCode::AdapterCrashed,
                    "adapter " + spec.id + " failed with " + how + (errors.empty() ? "" : ": " + errors));
    }
    try {
        return json::parse(output);
    } catch (const json::parse_error&) {
        throw Error(ErrorCode::AdapterBadOutput, "adapter " + spec.id + " did not print a JSON document");
    }
}

vessels::VesselMask decode_vessel_mask(const json& response, int width, int height) {
    if (!response.is_object() || response.value("kind", "") != "vessel_mask" ||
        !response.contains("mask_png_base64") || !response.at("mask_png_base64").is_string())
        throw Error(ErrorCode::AdapterBadOutput, "not a vessel_mask response");
    try {
        const auto png = base64_decode(response.at("mask_png_base64").get<std::string>());
        auto mask = io::read_png_mask(png);
        if (mask.width() != width || mask.height() != height)
            throw Error(ErrorCode::AdapterBadOutput, "vessel mask size does not match the image");
        return mask.retag<vessels::VesselTag>();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::AdapterBadOutput) throw;
        throw Error(ErrorCode::AdapterBadOutput, std::string("undecodable vessel mask: ") + e.what());
    }
}

AdapterRegistry::AdapterRegistry(std::vector<AdapterSpec> specs) : specs_(std::move(specs)) {
    for (const auto& s : specs_) {
        s.validate();
        auto gate = std::make_unique<Gate>();
        gate->available = s.max_concurrency;
        if (!gates_.emplace(s.id, std::move(gate)).second)
            throw Error(ErrorCode::BadParams, "duplicate adapter id " + s.id);
    }
}

const AdapterSpec* AdapterRegistry::find(std::string_view id) const {
    for (const auto& s : specs_)
        if (s.id == id) return &s;
    return nullptr;
}

json AdapterRegistry::run(const AdapterSpec& spec, const std::filesystem::path& image_path) const {
    const auto it = gates_.find(spec.id);
    if (it == gates_.end()) return run_adapter(spec, image_path);
    Gate& gate = *it->second;
    {
        std::unique_lock lock(gate.mutex);
        gate.cv.wait(lock, [&] { return gate.available > 0; });
        --gate.available;
    }
    struct Release {
        Gate& g;
        ~Release() {
            {
                std::lock_guard lock(g.mutex);
                ++g.available;
            }
            g.cv.notify_one();
        }
    } release{gate};
    return run_adapter(spec, image_path);
}

} // namespace fundus::grading
