#pragma once

#include "fundus/raster.hpp"
#include "fundus/vesselness.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fundus::skeleton {

struct SkeletonTag;
using Skeleton = Plane<std::uint8_t, SkeletonTag>;

/// Two-subiteration thinning (neighbour count in [2, 6], one 0->1 transition,
/// directional deletion products) run to a fixed point. Candidates of each
/// subiteration are removed in raster order only while they remain simple
/// points, so every 8-connected component survives; a final pass removes
/// simple staircase corners so the result is one pixel wide.
Skeleton skeletonize(const vessels::VesselMask& mask);

/// Yokoi 8-connectivity number is 1: removing the pixel changes no topology.
bool is_simple_point(const Skeleton& skel, int x, int y);

enum class NodeKind { endpoint, junction };

struct Node {
    /// Representative pixel (for junction clusters, the highest-degree one).
    Point at;
    NodeKind kind;
    /// All pixels of the node; adjacent junction pixels form one node.
    std::vector<Point> pixels;
};

struct Segment {
    /// Consecutive 8-neighbours. Node-terminated segments include the node
    /// pixel at each end.
    std::vector<Point> pixels;
    int start_node = -1;
    int end_node = -1;
    /// Isolated cycle, or a chain leaving and re-entering the same node.
    bool closed = false;
    std::size_t interior_pixels = 0;
};

struct SkeletonGraph {
    std::vector<Node> nodes;
    std::vector<Segment> segments;
};

SkeletonGraph extract_graph(const Skeleton& skel);

struct ChainMeasure {
    double arc = 0.0;
    double chord = 0.0;
    double ratio = 0.0;
};

/// Arc = sum of step lengths (1 axial, sqrt 2 diagonal); chord = distance
/// between the end pixels. Throws DegenerateChord for chains shorter than two
/// pixels or with coincident ends, BadParams for non-adjacent steps.
ChainMeasure segment_tortuosity(std::span<const Point> chain);

/// Closed chains: arc includes the closing step, chord is the largest
/// pairwise pixel distance. Throws DegenerateChord below three pixels.
ChainMeasure loop_tortuosity(std::span<const Point> chain);

struct SegmentTortuosity {
    int segment_id = 0;
    double arc_length = 0.0;
    double chord_length = 0.0;
    double tortuosity = 0.0;
};

struct TortuosityReport {
    std::vector<SegmentTortuosity> per_segment;
    /// Unweighted mean; absent when no segment qualified.
    std::optional<double> average_tortuosity;
    std::optional<double> max_tortuosity;
    std::optional<double> length_weighted_tortuosity;
    int segments_used = 0;
    double min_arc_px = 0.0;
};

/// Open segments need arc >= min_arc_px, closed ones arc >= 2 min_arc_px.
/// Throws BadParams for min_arc_px < 2.
TortuosityReport tortuosity_report(const SkeletonGraph& graph, double min_arc_px);

/// 10 px at 512 px width, scaled linearly, never below 2.
double default_min_arc_px(int image_width);

} // namespace fundus::skeleton
