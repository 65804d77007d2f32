#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "boubakiki/types.hpp"

namespace bk::shapes {

struct Point2 {
    double x = 0;
    double y = 0;
    bool operator==(const Point2&) const = default;
};

// Points inside the unit disk, in connection order.
struct PointSet {
    std::vector<Point2> points;
    std::uint64_t seed = 0;
    int n = 0;
};

enum class ShapeSource { generated, kohler, maurer, westbury };

std::string_view to_string(ShapeSource s);
ShapeSource parse_shape_source(std::string_view s);

struct ShapePair {
    std::string pair_id;
    ShapeSource source = ShapeSource::generated;
    cv::Mat curved_image;  // CV_8UC3, dark silhouette on white
    cv::Mat jagged_image;
    std::optional<PointSet> point_set;
    // Pixel-space outlines for generated pairs; the jagged outline is the control polygon.
    std::vector<Point2> jagged_outline;
    std::vector<Point2> curved_outline;
};

enum class Arrangement { curved_left, curved_right };

std::string_view to_string(Arrangement a);

struct CompositeImage {
    std::string composite_id;
    std::string pair_id;
    ShapeClass left_class = ShapeClass::round;
    ShapeClass right_class = ShapeClass::sharp;
    cv::Mat image;
    Arrangement arrangement = Arrangement::curved_left;
    int pane_width = 0;
    int gutter = 0;
    // True for the balanced primary arrangement, false for its mirror.
    bool primary = true;
};

inline constexpr int kDefaultResolution = 336;
inline constexpr double kGutterFraction = 0.10;
// Fraction of the half-width used as the disk radius when rasterizing.
inline constexpr double kRadiusFraction = 0.80;
inline constexpr int kSplineSamplesPerSegment = 24;

PointSet sample_points(std::uint64_t seed, int n);

// Point count for a pair seed, uniform in [points_min, points_max].
int point_count_for_seed(std::uint64_t seed, int points_min, int points_max);

// Closed centripetal Catmull-Rom spline through every point; sample k*samples equals points[k].
std::vector<Point2> closed_centripetal_spline(const std::vector<Point2>& points, int samples_per_segment);

double polygon_area(const std::vector<Point2>& polygon);

ShapePair render_pair(const PointSet& ps, int resolution, std::string pair_id = {});

// Rows: {pair_id, source, class, path}, paths relative to the manifest.
std::vector<ShapePair> load_legacy_pairs(const std::filesystem::path& manifest, int resolution = kDefaultResolution);

// Pads to a square on white and resizes; used to bring external images onto the stimulus grid.
cv::Mat normalize_to_square(const cv::Mat& image, int resolution);

// Balanced primary arrangement (sorted pair_id, alternating) followed by the mirror of each.
std::vector<CompositeImage> compose_pairs(const std::vector<ShapePair>& pairs, double gutter_fraction = kGutterFraction);

CompositeImage compose(const ShapePair& pair, Arrangement arrangement, double gutter_fraction = kGutterFraction);
// Swaps the two panes; the shapes themselves are not flipped.
CompositeImage mirror(const CompositeImage& c);

std::string svg_outline(const std::vector<Point2>& outline, int resolution);

// Stimulus bank on disk: stimuli.manifest.json plus PNG files.
struct GenerateOptions {
    std::uint64_t seed_base = 1;
    int pairs = 8;
    int points_min = 8;
    int points_max = 12;
    int resolution = kDefaultResolution;
    bool svg = false;
    std::optional<std::filesystem::path> legacy_manifest;
    bool require_legacy = false;
};

struct StimulusBank {
    std::vector<ShapePair> pairs;
    bool has_legacy = false;
};

StimulusBank generate_bank(const GenerateOptions& opts);

// Writes images and the manifest; returns the manifest path.
std::filesystem::path write_bank(const StimulusBank& bank, const std::filesystem::path& out_dir, bool svg = false);

StimulusBank load_bank(const std::filesystem::path& dir_or_manifest);

std::vector<std::uint8_t> encode_png(const cv::Mat& image);

}  // namespace bk::shapes
