#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace fundus {

struct Point {
    int x = 0;
    int y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// 8-neighbour offsets, clockwise starting north.
inline constexpr std::array<Point, 8> kNeighbors8{{
    {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1},
}};

inline constexpr std::array<Point, 4> kNeighbors4{{{0, -1}, {1, 0}, {0, 1}, {-1, 0}}};

/// Row-major 2-D buffer. `Tag` distinguishes rasters that share a pixel type
/// but not a meaning (a field-of-view mask is not a skeleton).
template <typename T, typename Tag = void>
class Plane {
public:
    using value_type = T;

    Plane() = default;
    Plane(int width, int height, T fill = T{})
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(checked(width) * checked(height)), fill) {}
    Plane(int width, int height, std::vector<T> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (data_.size() != static_cast<std::size_t>(checked(width) * checked(height)))
            throw std::invalid_argument("plane data size does not match dimensions");
    }

    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] bool contains(int x, int y) const noexcept {
        return x >= 0 && y >= 0 && x < width_ && y < height_;
    }
    [[nodiscard]] bool contains(Point p) const noexcept { return contains(p.x, p.y); }

    T& operator()(int x, int y) noexcept { return data_[index(x, y)]; }
    const T& operator()(int x, int y) const noexcept { return data_[index(x, y)]; }
    T& operator[](Point p) noexcept { return data_[index(p.x, p.y)]; }
    const T& operator[](Point p) const noexcept { return data_[index(p.x, p.y)]; }

    /// Out-of-bounds reads return `outside`.
    [[nodiscard]] T get_or(int x, int y, T outside) const noexcept {
        return contains(x, y) ? data_[index(x, y)] : outside;
    }

    [[nodiscard]] std::span<T> values() noexcept { return data_; }
    [[nodiscard]] std::span<const T> values() const noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& storage() const noexcept { return data_; }

    template <typename OtherTag>
    [[nodiscard]] Plane<T, OtherTag> retag() const {
        return Plane<T, OtherTag>(width_, height_, data_);
    }

    friend bool operator==(const Plane&, const Plane&) = default;

private:
    static long long checked(int v) {
        if (v < 0) throw std::invalid_argument("negative plane dimension");
        return v;
    }
    [[nodiscard]] std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

template <typename T, typename Tag>
[[nodiscard]] std::size_t count_on(const Plane<T, Tag>& plane) {
    std::size_t n = 0;
    for (const auto& v : plane.values()) n += v ? 1 : 0;
    return n;
}

/// Number of on 8-neighbours of (x, y).
template <typename Tag>
[[nodiscard]] int neighbor_count(const Plane<std::uint8_t, Tag>& plane, int x, int y) {
    int n = 0;
    for (const auto& d : kNeighbors8) n += plane.get_or(x + d.x, y + d.y, 0) ? 1 : 0;
    return n;
}

/// Rotates 90 degrees clockwise: (x, y) -> (h - 1 - y, x).
template <typename T, typename Tag>
[[nodiscard]] Plane<T, Tag> rotate90(const Plane<T, Tag>& in) {
    Plane<T, Tag> out(in.height(), in.width());
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < in.width(); ++x) out(in.height() - 1 - y, x) = in(x, y);
    return out;
}

/// Labels connected on-pixels (value != 0) with ids 1..n; returns n.
/// `eight` selects 8-connectivity, otherwise 4-connectivity.
template <typename T, typename Tag>
int label_components(const Plane<T, Tag>& plane, bool eight, Plane<int>& labels) {
    labels = Plane<int>(plane.width(), plane.height(), 0);
    std::vector<Point> stack;
    int next = 0;
    const std::span<const Point> offsets =
        eight ? std::span<const Point>(kNeighbors8) : std::span<const Point>(kNeighbors4);
    for (int y = 0; y < plane.height(); ++y) {
        for (int x = 0; x < plane.width(); ++x) {
            if (!plane(x, y) || labels(x, y)) continue;
            ++next;
            labels(x, y) = next;
            stack.push_back({x, y});
            while (!stack.empty()) {
                const Point p = stack.back();
                stack.pop_back();
                for (const auto& d : offsets) {
                    const Point q{p.x + d.x, p.y + d.y};
                    if (plane.contains(q) && plane[q] && !labels[q]) {
                        labels[q] = next;
                        stack.push_back(q);
                    }
                }
            }
        }
    }
    return next;
}

template <typename T, typename Tag>
[[nodiscard]] int count_components(const Plane<T, Tag>& plane, bool eight) {
    Plane<int> labels;
    return label_components(plane, eight, labels);
}

} // namespace fundus
