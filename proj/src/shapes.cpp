#include "boubakiki/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "boubakiki/util.hpp"

namespace bk::shapes {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(ShapeSource s) {
    switch (s) {
        case ShapeSource::generated: return "generated";
        case ShapeSource::kohler: return "kohler";
        case ShapeSource::maurer: return "maurer";
        case ShapeSource::westbury: return "westbury";
    }
    return "?";
}

ShapeSource parse_shape_source(std::string_view s) {
    for (auto v : {ShapeSource::generated, ShapeSource::kohler, ShapeSource::maurer, ShapeSource::westbury})
        if (to_string(v) == s) return v;
    throw InputError("unknown source tag '" + std::string(s) + "'");
}

std::string_view to_string(Arrangement a) { return a == Arrangement::curved_left ? "curved_left" : "curved_right"; }

PointSet sample_points(std::uint64_t seed, int n) {
    if (n < 3) throw InputError("a point set needs at least 3 points, got " + std::to_string(n));
    util::SplitMix64 rng(seed);
    std::vector<Point2> pts;
    pts.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double r = std::sqrt(rng.uniform());
        const double theta = 2.0 * std::numbers::pi * rng.uniform();
        pts.push_back({r * std::cos(theta), r * std::sin(theta)});
    }

    Point2 c{};
    for (const auto& p : pts) {
        c.x += p.x;
        c.y += p.y;
    }
    c.x /= n;
    c.y /= n;
    std::vector<double> angle(n);
    for (int i = 0; i < n; ++i) angle[i] = std::atan2(pts[i].y - c.y, pts[i].x - c.x);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return angle[a] < angle[b]; });

    PointSet ps{{}, seed, n};
    ps.points.reserve(n);
    for (int i : order) ps.points.push_back(pts[i]);
    return ps;
}

int point_count_for_seed(std::uint64_t seed, int points_min, int points_max) {
    if (points_min < 3 || points_max < points_min)
        throw InputError("invalid point range [" + std::to_string(points_min) + ", " + std::to_string(points_max) + "]");
    util::SplitMix64 rng(seed ^ 0x5eed5eed5eed5eedULL);
    return points_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(points_max - points_min + 1)));
}

std::vector<Point2> closed_centripetal_spline(const std::vector<Point2>& points, int samples_per_segment) {
    const int n = static_cast<int>(points.size());
    std::vector<Point2> out;
    out.reserve(static_cast<size_t>(n) * samples_per_segment);
    auto knot = [](const Point2& a, const Point2& b) {
        const double d = std::hypot(b.x - a.x, b.y - a.y);
        return std::max(std::sqrt(d), 1e-12);
    };
    auto lerp = [](const Point2& a, const Point2& b, double ta, double tb, double t) {
        const double wa = (tb - t) / (tb - ta);
        const double wb = (t - ta) / (tb - ta);
        return Point2{wa * a.x + wb * b.x, wa * a.y + wb * b.y};
    };
    for (int i = 0; i < n; ++i) {
        const Point2& p0 = points[(i + n - 1) % n];
        const Point2& p1 = points[i];
        const Point2& p2 = points[(i + 1) % n];
        const Point2& p3 = points[(i + 2) % n];
        const double t0 = 0;
        const double t1 = t0 + knot(p0, p1);
        const double t2 = t1 + knot(p1, p2);
        const double t3 = t2 + knot(p2, p3);
        out.push_back(p1);
        for (int s = 1; s < samples_per_segment; ++s) {
            const double t = t1 + (t2 - t1) * s / samples_per_segment;
            // Barry-Goldman pyramid.
            const Point2 a1 = lerp(p0, p1, t0, t1, t);
            const Point2 a2 = lerp(p1, p2, t1, t2, t);
            const Point2 a3 = lerp(p2, p3, t2, t3, t);
            const Point2 b1 = lerp(a1, a2, t0, t2, t);
            const Point2 b2 = lerp(a2, a3, t1, t3, t);
            out.push_back(lerp(b1, b2, t1, t2, t));
        }
    }
    return out;
}

double polygon_area(const std::vector<Point2>& polygon) {
    double a = 0;
    const size_t n = polygon.size();
    for (size_t i = 0; i < n; ++i) {
        const auto& p = polygon[i];
        const auto& q = polygon[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * a;
}

namespace {

constexpr int kFixedShift = 8;

std::vector<Point2> to_pixels(const std::vector<Point2>& unit, int resolution) {
    const double half = resolution / 2.0;
    const double radius = kRadiusFraction * half;
    std::vector<Point2> out;
    out.reserve(unit.size());
    for (const auto& p : unit) out.push_back({half + p.x * radius, half - p.y * radius});
    return out;
}

cv::Mat fill_silhouette(const std::vector<Point2>& outline, int resolution) {
    cv::Mat img(resolution, resolution, CV_8UC3, cv::Scalar(255, 255, 255));
    std::vector<cv::Point> poly;
    poly.reserve(outline.size());
    const double scale = 1 << kFixedShift;
    // Pixel centres sit at integer coordinates in OpenCV's rasterizer.
    for (const auto& p : outline)
        poly.emplace_back(static_cast<int>(std::lround((p.x - 0.5) * scale)),
                          static_cast<int>(std::lround((p.y - 0.5) * scale)));
    std::vector<std::vector<cv::Point>> polys{poly};
    cv::fillPoly(img, polys, cv::Scalar(0, 0, 0), cv::LINE_AA, kFixedShift);
    return img;
}

}  // namespace

ShapePair render_pair(const PointSet& ps, int resolution, std::string pair_id) {
    if (ps.points.size() < 3) throw InputError("point set has fewer than 3 points");
    if (resolution < 8) throw InputError("resolution too small: " + std::to_string(resolution));
    const double area = std::abs(polygon_area(ps.points));
    if (area < 1e-9) throw InputError("degenerate point set: all points collinear");

    ShapePair pair;
    pair.pair_id = std::move(pair_id);
    pair.source = ShapeSource::generated;
    pair.point_set = ps;
    pair.jagged_outline = to_pixels(ps.points, resolution);
    pair.curved_outline = to_pixels(closed_centripetal_spline(ps.points, kSplineSamplesPerSegment), resolution);
    pair.jagged_image = fill_silhouette(pair.jagged_outline, resolution);
    pair.curved_image = fill_silhouette(pair.curved_outline, resolution);
    return pair;
}

cv::Mat normalize_to_square(const cv::Mat& image, int resolution) {
    cv::Mat bgr;
    if (image.channels() == 4) {
        // Composite alpha onto white.
        std::vector<cv::Mat> ch;
        cv::split(image, ch);
        cv::Mat alpha;
        ch[3].convertTo(alpha, CV_32F, 1.0 / 255.0);
        std::vector<cv::Mat> out(3);
        for (int c = 0; c < 3; ++c) {
            cv::Mat f;
            ch[c].convertTo(f, CV_32F);
            f = f.mul(alpha) + 255.0f * (1.0f - alpha);
            f.convertTo(out[c], CV_8U);
        }
        cv::merge(out, bgr);
    } else if (image.channels() == 1) {
        cv::cvtColor(image, bgr, cv::COLOR_GRAY2BGR);
    } else {
        bgr = image;
    }
    const int side = std::max(bgr.cols, bgr.rows);
    cv::Mat square(side, side, CV_8UC3, cv::Scalar(255, 255, 255));
    bgr.copyTo(square(cv::Rect((side - bgr.cols) / 2, (side - bgr.rows) / 2, bgr.cols, bgr.rows)));
    if (side == resolution) return square;
    cv::Mat out;
    cv::resize(square, out, cv::Size(resolution, resolution), 0, 0, side > resolution ? cv::INTER_AREA : cv::INTER_CUBIC);
    return out;
}

std::vector<ShapePair> load_legacy_pairs(const fs::path& manifest, int resolution) {
    std::ifstream in(manifest);
    if (!in) throw InputError("cannot open legacy manifest " + manifest.string());
    json rows;
    try {
        rows = json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError(manifest.string() + ": " + e.what());
    }
    if (!rows.is_array()) throw InputError(manifest.string() + ": expected an array of image rows");

    struct Entry {
        ShapeSource source;
        std::vector<std::pair<ShapeClass, fs::path>> images;
    };
    std::vector<std::string> order;
    std::map<std::string, Entry> by_pair;
    const fs::path base = manifest.parent_path();
    for (const auto& row : rows) {
        const auto pair_id = row.at("pair_id").get<std::string>();
        const auto source = parse_shape_source(row.at("source").get<std::string>());
        const auto cls = parse_shape_class(row.at("class").get<std::string>());
        const fs::path path = base / row.at("path").get<std::string>();
        auto [it, fresh] = by_pair.try_emplace(pair_id, Entry{source, {}});
        if (fresh) order.push_back(pair_id);
        if (it->second.source != source) throw InputError("pair " + pair_id + " mixes source tags");
        it->second.images.emplace_back(cls, path);
    }

    std::vector<ShapePair> out;
    for (const auto& id : order) {
        const auto& entry = by_pair.at(id);
        const bool balanced = entry.images.size() == 2 && entry.images[0].first != entry.images[1].first;
        if (!balanced)
            throw InputError("pair " + id + " lists " + std::to_string(entry.images.size()) +
                             " images; expected one curved and one jagged");
        ShapePair pair;
        pair.pair_id = id;
        pair.source = entry.source;
        for (const auto& [cls, path] : entry.images) {
            if (!fs::exists(path)) throw InputError("legacy image not found: " + path.string());
            cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
            if (raw.empty()) throw InputError("unreadable legacy image: " + path.string());
            if (raw.depth() != CV_8U) raw.convertTo(raw, CV_8U, 1.0 / 257.0);
            (cls == ShapeClass::round ? pair.curved_image : pair.jagged_image) = normalize_to_square(raw, resolution);
        }
        out.push_back(std::move(pair));
    }
    return out;
}

CompositeImage compose(const ShapePair& pair, Arrangement arrangement, double gutter_fraction) {
    if (pair.curved_image.size() != pair.jagged_image.size())
        throw InputError("pair " + pair.pair_id + ": curved and jagged images differ in size");
    const int w = pair.curved_image.cols;
    const int h = pair.curved_image.rows;
    const int gutter = static_cast<int>(std::lround(gutter_fraction * w));

    CompositeImage c;
    c.pair_id = pair.pair_id;
    c.arrangement = arrangement;
    c.composite_id = pair.pair_id + "__" + std::string(to_string(arrangement));
    c.pane_width = w;
    c.gutter = gutter;
    const bool curved_left = arrangement == Arrangement::curved_left;
    c.left_class = curved_left ? ShapeClass::round : ShapeClass::sharp;
    c.right_class = opposite(c.left_class);
    c.image = cv::Mat(h, 2 * w + gutter, CV_8UC3, cv::Scalar(255, 255, 255));
    (curved_left ? pair.curved_image : pair.jagged_image).copyTo(c.image(cv::Rect(0, 0, w, h)));
    (curved_left ? pair.jagged_image : pair.curved_image).copyTo(c.image(cv::Rect(w + gutter, 0, w, h)));
    return c;
}

CompositeImage mirror(const CompositeImage& c) {
    CompositeImage m = c;
    m.arrangement = c.arrangement == Arrangement::curved_left ? Arrangement::curved_right : Arrangement::curved_left;
    m.composite_id = c.pair_id + "__" + std::string(to_string(m.arrangement));
    std::swap(m.left_class, m.right_class);
    m.primary = !c.primary;
    const int w = c.pane_width;
    const int h = c.image.rows;
    m.image = cv::Mat(h, c.image.cols, CV_8UC3, cv::Scalar(255, 255, 255));
    c.image(cv::Rect(0, 0, w, h)).copyTo(m.image(cv::Rect(w + c.gutter, 0, w, h)));
    c.image(cv::Rect(w + c.gutter, 0, w, h)).copyTo(m.image(cv::Rect(0, 0, w, h)));
    return m;
}

std::vector<CompositeImage> compose_pairs(const std::vector<ShapePair>& pairs, double gutter_fraction) {
    std::vector<const ShapePair*> sorted;
    for (const auto& p : pairs) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->pair_id < b->pair_id; });

    std::vector<CompositeImage> out;
    out.reserve(2 * sorted.size());
    for (size_t i = 0; i < sorted.size(); ++i)
        out.push_back(compose(*sorted[i], i % 2 == 0 ? Arrangement::curved_left : Arrangement::curved_right,
                              gutter_fraction));
    const size_t n = out.size();
    for (size_t i = 0; i < n; ++i) out.push_back(mirror(out[i]));
    return out;
}

std::string svg_outline(const std::vector<Point2>& outline, int resolution) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(3);
    ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << resolution << "\" height=\"" << resolution
       << "\" viewBox=\"0 0 " << resolution << ' ' << resolution << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<path fill=\"black\" d=\"";
    for (size_t i = 0; i < outline.size(); ++i)
        ss << (i == 0 ? "M" : " L") << outline[i].x << ' ' << outline[i].y;
    ss << " Z\"/>\n</svg>\n";
    return ss.str();
}

std::vector<std::uint8_t> encode_png(const cv::Mat& image) {
    std::vector<std::uint8_t> buf;
    if (!cv::imencode(".png", image, buf, {cv::IMWRITE_PNG_COMPRESSION, 6}))
        throw std::runtime_error("PNG encoding failed");
    return buf;
}

StimulusBank generate_bank(const GenerateOptions& opts) {
    if (opts.pairs < 1) throw InputError("at least one generated pair is required");
    StimulusBank bank;
    for (int i = 0; i < opts.pairs; ++i) {
        const std::uint64_t seed = opts.seed_base + static_cast<std::uint64_t>(i);
        const int n = point_count_for_seed(seed, opts.points_min, opts.points_max);
        char id[32];
        std::snprintf(id, sizeof id, "gen_%02d", i + 1);
        bank.pairs.push_back(render_pair(sample_points(seed, n), opts.resolution, id));
    }
    if (opts.legacy_manifest && fs::exists(*opts.legacy_manifest)) {
        for (auto& p : load_legacy_pairs(*opts.legacy_manifest, opts.resolution)) bank.pairs.push_back(std::move(p));
        bank.has_legacy = true;
    } else if (opts.require_legacy) {
        throw InputError("legacy manifest required but not found: " +
                         (opts.legacy_manifest ? opts.legacy_manifest->string() : std::string("<unset>")));
    }
    return bank;
}

fs::path write_bank(const StimulusBank& bank, const fs::path& out_dir, bool svg) {
    json manifest = json::array();
    for (const auto& p : bank.pairs) {
        const std::string sub = p.source == ShapeSource::generated ? "generated" : "legacy";
        const std::string curved = sub + "/" + p.pair_id + "_curved.png";
        const std::string jagged = sub + "/" + p.pair_id + "_jagged.png";
        auto write_png = [&](const std::string& rel, const cv::Mat& img) {
            const auto bytes = encode_png(img);
            util::atomic_write(out_dir / rel, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        };
        write_png(curved, p.curved_image);
        write_png(jagged, p.jagged_image);
        json row = {{"pair_id", p.pair_id}, {"source", to_string(p.source)}, {"curved_path", curved}, {"jagged_path", jagged}};
        if (p.point_set) {
            row["seed"] = p.point_set->seed;
            row["n"] = p.point_set->n;
            if (svg) {
                util::atomic_write(out_dir / sub / (p.pair_id + "_curved.svg"), svg_outline(p.curved_outline, p.curved_image.cols));
                util::atomic_write(out_dir / sub / (p.pair_id + "_jagged.svg"), svg_outline(p.jagged_outline, p.jagged_image.cols));
            }
        }
        manifest.push_back(std::move(row));
    }
    const auto path = out_dir / "stimuli.manifest.json";
    util::atomic_write(path, manifest.dump(2) + "\n");
    return path;
}

StimulusBank load_bank(const fs::path& dir_or_manifest) {
    const fs::path manifest = fs::is_directory(dir_or_manifest) ? dir_or_manifest / "stimuli.manifest.json" : dir_or_manifest;
    std::ifstream in(manifest);
    if (!in) throw InputError("cannot open stimulus manifest " + manifest.string());
    const json rows = json::parse(in);
    const fs::path base = manifest.parent_path();
    StimulusBank bank;
    for (const auto& row : rows) {
        ShapePair p;
        p.pair_id = row.at("pair_id").get<std::string>();
        p.source = parse_shape_source(row.at("source").get<std::string>());
        auto load = [&](const char* key) {
            const fs::path path = base / row.at(key).get<std::string>();
            cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
            if (img.empty()) throw InputError("unreadable stimulus image: " + path.string());
            return img;
        };
        p.curved_image = load("curved_path");
        p.jagged_image = load("jagged_path");
        if (p.curved_image.size() != p.jagged_image.size())
            throw InputError("pair " + p.pair_id + ": curved and jagged images differ in size");
        if (row.contains("seed") && row.contains("n")) {
            p.point_set = sample_points(row.at("seed").get<std::uint64_t>(), row.at("n").get<int>());
        }
        if (p.source != ShapeSource::generated) bank.has_legacy = true;
        bank.pairs.push_back(std::move(p));
    }
    return bank;
}

}  // namespace bk::shapes
