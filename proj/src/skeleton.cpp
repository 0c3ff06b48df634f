#include "fundus/skeleton.hpp"

#include "fundus/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace fundus::skeleton {

namespace {

// p2..p9 in the usual thinning notation: N, NE, E, SE, S, SW, W, NW.
std::array<int, 8> ring(const Skeleton& img, int x, int y) {
    std::array<int, 8> p{};
    for (std::size_t i = 0; i < 8; ++i)
        p[i] = img.get_or(x + kNeighbors8[i].x, y + kNeighbors8[i].y, 0) ? 1 : 0;
    return p;
}

int transitions(const std::array<int, 8>& p) {
    int a = 0;
    for (std::size_t i = 0; i < 8; ++i) a += (p[i] == 0 && p[(i + 1) % 8] == 1) ? 1 : 0;
    return a;
}

bool thinning_candidate(const Skeleton& img, int x, int y, int pass) {
    const auto p = ring(img, x, y);
    const int b = p[0] + p[1] + p[2] + p[3] + p[4] + p[5] + p[6] + p[7];
    if (b < 2 || b > 6 || transitions(p) != 1) return false;
    const int n = p[0], e = p[2], s = p[4], w = p[6];
    if (pass == 0) return n * e * s == 0 && e * s * w == 0;
    return n * e * w == 0 && n * s * w == 0;
}

bool thinning_pass(Skeleton& img, int pass) {
    std::vector<Point> candidates;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (img(x, y) && thinning_candidate(img, x, y, pass)) candidates.push_back({x, y});
    // Candidates were chosen on the image as it stood before this subiteration;
    // removing them one at a time only while simple keeps every component.
    bool changed = false;
    for (const Point& c : candidates) {
        if (is_simple_point(img, c.x, c.y)) {
            img[c] = 0;
            changed = true;
        }
    }
    return changed;
}

bool corner_pass(Skeleton& img) {
    bool changed = false;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (!img(x, y)) continue;
            const auto p = ring(img, x, y);
            const int n = p[0], e = p[2], s = p[4], w = p[6];
            const bool corner = (n && e) || (e && s) || (s && w) || (w && n);
            if (corner && neighbor_count(img, x, y) >= 2 && is_simple_point(img, x, y)) {
                img(x, y) = 0;
                changed = true;
            }
        }
    }
    return changed;
}

double step_length(Point a, Point b) {
    const int dx = std::abs(a.x - b.x);
    const int dy = std::abs(a.y - b.y);
    if (dx > 1 || dy > 1 || (dx == 0 && dy == 0))
        throw Error(ErrorCode::BadParams, "chain pixels are not consecutive 8-neighbours");
    return dx + dy == 2 ? std::numbers::sqrt2 : 1.0;
}

double distance(Point a, Point b) {
    return std::hypot(static_cast<double>(a.x - b.x), static_cast<double>(a.y - b.y));
}

} // namespace

bool is_simple_point(const Skeleton& skel, int x, int y) {
    // Yokoi numbering: x1 = E then counter-clockwise.
    static constexpr std::array<Point, 8> order{{
        {1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1},
    }};
    std::array<int, 8> off{};
    for (std::size_t i = 0; i < 8; ++i)
        off[i] = skel.get_or(x + order[i].x, y + order[i].y, 0) ? 0 : 1;
    int n8 = 0;
    for (std::size_t k = 0; k < 8; k += 2) n8 += off[k] - off[k] * off[(k + 1) % 8] * off[(k + 2) % 8];
    return n8 == 1;
}

Skeleton skeletonize(const vessels::VesselMask& mask) {
    Skeleton img = mask.retag<SkeletonTag>();
    for (auto& v : img.values()) v = v ? 1 : 0;
    for (;;) {
        bool changed = true;
        while (changed) {
            changed = thinning_pass(img, 0);
            changed = thinning_pass(img, 1) || changed;
        }
        if (!corner_pass(img)) break;
    }
    return img;
}

SkeletonGraph extract_graph(const Skeleton& skel) {
    const int w = skel.width();
    const int h = skel.height();
    Plane<int> degree(w, h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (skel(x, y)) degree(x, y) = neighbor_count(skel, x, y);

    auto is_node_px = [&](Point p) {
        const int d = degree[p];
        return skel[p] && (d == 1 || d >= 3);
    };

    SkeletonGraph graph;
    Plane<int> node_of(w, h, -1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Point p{x, y};
            if (!is_node_px(p) || node_of[p] >= 0) continue;
            const int id = static_cast<int>(graph.nodes.size());
            Node node{p, degree[p] == 1 ? NodeKind::endpoint : NodeKind::junction, {p}};
            node_of[p] = id;
            if (node.kind == NodeKind::junction) {
                // Flood the 8-connected cluster of junction pixels.
                for (std::size_t i = 0; i < node.pixels.size(); ++i) {
                    const Point c = node.pixels[i];
                    for (const auto& d : kNeighbors8) {
                        const Point q{c.x + d.x, c.y + d.y};
                        if (skel.contains(q) && skel[q] && degree[q] >= 3 && node_of[q] < 0) {
                            node_of[q] = id;
                            node.pixels.push_back(q);
                        }
                    }
                }
                std::sort(node.pixels.begin(), node.pixels.end(), [](Point a, Point b) {
                    return a.y != b.y ? a.y < b.y : a.x < b.x;
                });
                node.at = *std::max_element(node.pixels.begin(), node.pixels.end(),
                                            [&](Point a, Point b) { return degree[a] < degree[b]; });
            }
            graph.nodes.push_back(std::move(node));
        }
    }

    Plane<std::uint8_t> visited(w, h, 0);
    auto finish = [&](Segment seg) {
        seg.interior_pixels = 0;
        for (const Point& p : seg.pixels) seg.interior_pixels += node_of[p] < 0 ? 1 : 0;
        graph.segments.push_back(std::move(seg));
    };

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Point p{x, y};
            if (node_of[p] < 0) continue;
            for (const auto& d : kNeighbors8) {
                const Point q{x + d.x, y + d.y};
                if (!skel.contains(q) || !skel[q]) continue;
                if (node_of[q] >= 0) {
                    const bool q_later = q.y > p.y || (q.y == p.y && q.x > p.x);
                    if (node_of[q] != node_of[p] && q_later)
                        finish({{p, q}, node_of[p], node_of[q], false, 0});
                    continue;
                }
                if (visited[q]) continue;
                Segment seg;
                seg.pixels = {p, q};
                seg.start_node = node_of[p];
                visited[q] = 1;
                Point prev = p;
                Point cur = q;
                for (;;) {
                    Point next{-1, -1};
                    for (const auto& e : kNeighbors8) {
                        const Point r{cur.x + e.x, cur.y + e.y};
                        if (!skel.contains(r) || !skel[r] || r == prev) continue;
                        if (node_of[r] >= 0 || !visited[r]) {
                            next = r;
                            break;
                        }
                    }
                    if (next.x < 0) break;
                    seg.pixels.push_back(next);
                    if (node_of[next] >= 0) {
                        seg.end_node = node_of[next];
                        break;
                    }
                    visited[next] = 1;
                    prev = cur;
                    cur = next;
                }
                seg.closed = seg.end_node >= 0 && seg.end_node == seg.start_node;
                finish(std::move(seg));
            }
        }
    }

    // What remains is isolated cycles (every pixel of degree 2) and lone pixels.
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Point s{x, y};
            if (!skel[s] || node_of[s] >= 0 || visited[s]) continue;
            visited[s] = 1;
            Segment seg;
            seg.pixels = {s};
            if (degree[s] == 0) {
                finish(std::move(seg));
                continue;
            }
            Point prev = s;
            Point cur = s;
            for (;;) {
                Point next{-1, -1};
                for (const auto& e : kNeighbors8) {
                    const Point r{cur.x + e.x, cur.y + e.y};
                    if (skel.contains(r) && skel[r] && r != prev && !visited[r]) {
                        next = r;
                        break;
                    }
                }
                if (next.x < 0) break;
                visited[next] = 1;
                seg.pixels.push_back(next);
                prev = cur;
                cur = next;
            }
            seg.closed = true;
            finish(std::move(seg));
        }
    }
    return graph;
}

ChainMeasure segment_tortuosity(std::span<const Point> chain) {
    if (chain.size() < 2) throw Error(ErrorCode::DegenerateChord, "chain has fewer than two pixels");
    double arc = 0.0;
    for (std::size_t i = 1; i < chain.size(); ++i) arc += step_length(chain[i - 1], chain[i]);
    const double chord = distance(chain.front(), chain.back());
    if (chord <= 0.0) throw Error(ErrorCode::DegenerateChord, "chain ends coincide");
    return {arc, chord, arc / chord};
}

ChainMeasure loop_tortuosity(std::span<const Point> chain) {
    if (chain.size() < 3) throw Error(ErrorCode::DegenerateChord, "loop has fewer than three pixels");
    double arc = 0.0;
    for (std::size_t i = 1; i < chain.size(); ++i) arc += step_length(chain[i - 1], chain[i]);
    if (chain.front() != chain.back()) arc += distance(chain.back(), chain.front());
    double diameter = 0.0;
    for (std::size_t i = 0; i < chain.size(); ++i)
        for (std::size_t j = i + 1; j < chain.size(); ++j)
            diameter = std::max(diameter, distance(chain[i], chain[j]));
    if (diameter <= 0.0) throw Error(ErrorCode::DegenerateChord, "loop has zero diameter");
    return {arc, diameter, arc / diameter};
}

TortuosityReport tortuosity_report(const SkeletonGraph& graph, double min_arc_px) {
    if (!(min_arc_px >= 2.0)) throw Error(ErrorCode::BadParams, "min_arc_px must be >= 2");
    TortuosityReport report;
    report.min_arc_px = min_arc_px;
    double sum = 0.0;
    double weighted = 0.0;
    double total_arc = 0.0;
    for (std::size_t i = 0; i < graph.segments.size(); ++i) {
        const Segment& seg = graph.segments[i];
        ChainMeasure m;
        try {
            m = seg.closed ? loop_tortuosity(seg.pixels) : segment_tortuosity(seg.pixels);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::DegenerateChord) continue;
            throw;
        }
        if (m.arc < (seg.closed ? 2.0 * min_arc_px : min_arc_px)) continue;
        report.per_segment.push_back({static_cast<int>(i), m.arc, m.chord, m.ratio});
        sum += m.ratio;
        weighted += m.ratio * m.arc;
        total_arc += m.arc;
        report.max_tortuosity = std::max(report.max_tortuosity.value_or(m.ratio), m.ratio);
    }
    report.segments_used = static_cast<int>(report.per_segment.size());
    if (report.segments_used > 0) {
        report.average_tortuosity = sum / report.segments_used;
        report.length_weighted_tortuosity = weighted / total_arc;
    }
    return report;
}

double default_min_arc_px(int image_width) {
    return std::max(2.0, 10.0 * image_width / 512.0);
}

} // namespace fundus::skeleton
