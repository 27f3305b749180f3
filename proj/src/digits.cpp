#include "uda/digits.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace uda {

namespace {

struct Point {
  double x, y;
};

using Stroke = std::vector<Point>;
using Glyph = std::vector<Stroke>;

Stroke ellipse(double cx, double cy, double rx, double ry, int segments = 16) {
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    const double t = 6.283185307179586 * i / segments;
    s.push_back({cx + rx * std::sin(t), cy - ry * std::cos(t)});
  }
  return s;
}

// Unit-square coordinates, y pointing down.
const std::array<Glyph, 10>& glyphs() {
  static const std::array<Glyph, 10> table = [] {
    std::array<Glyph, 10> g;
    g[0] = {ellipse(0.5, 0.5, 0.22, 0.38)};
    g[1] = {{{0.5, 0.12}, {0.5, 0.88}}, {{0.38, 0.24}, {0.5, 0.12}}};
    g[2] = {{{0.3, 0.28}, {0.36, 0.16}, {0.5, 0.12}, {0.64, 0.16}, {0.7, 0.28}, {0.66, 0.42}, {0.3, 0.88}, {0.72, 0.88}}};
    g[3] = {{{0.3, 0.18}, {0.5, 0.12}, {0.68, 0.2}, {0.68, 0.36}, {0.5, 0.48}, {0.7, 0.6}, {0.7, 0.78}, {0.5, 0.88}, {0.3, 0.82}}};
    g[4] = {{{0.62, 0.88}, {0.62, 0.12}, {0.28, 0.62}, {0.74, 0.62}}};
    g[5] = {{{0.7, 0.12}, {0.34, 0.12}, {0.32, 0.46}, {0.52, 0.42}, {0.68, 0.52}, {0.7, 0.72}, {0.56, 0.88}, {0.3, 0.84}}};
    g[6] = {{{0.66, 0.16}, {0.5, 0.12}, {0.36, 0.22}, {0.3, 0.5}, {0.32, 0.74}, {0.5, 0.88}, {0.68, 0.76}, {0.68, 0.58}, {0.5, 0.48}, {0.32, 0.58}}};
    g[7] = {{{0.28, 0.12}, {0.72, 0.12}, {0.44, 0.88}}};
    g[8] = {ellipse(0.5, 0.3, 0.17, 0.18), ellipse(0.5, 0.68, 0.2, 0.2)};
    for (const Stroke& s : g[6]) {
      Stroke r;
      for (const Point& p : s) r.push_back({1.0 - p.x, 1.0 - p.y});
      g[9].push_back(r);
    }
    return g;
  }();
  return table;
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

void render_one(int digit, Rng& rng, std::size_t size, float* out) {
  const double angle = uniform(rng, -0.26, 0.26);
  const double sx = uniform(rng, 0.8, 1.05), sy = uniform(rng, 0.8, 1.05);
  const double shear = uniform(rng, -0.25, 0.25);
  const double tx = uniform(rng, -0.06, 0.06), ty = uniform(rng, -0.06, 0.06);
  const double c = std::cos(angle), s = std::sin(angle);
  const double px = static_cast<double>(size);
  const double half_width = 0.5 * uniform(rng, 1.6, 3.0) * px / 32.0;

  std::vector<std::pair<Point, Point>> segments;
  for (const Stroke& stroke : glyphs()[digit]) {
    Stroke placed;
    for (const Point& p : stroke) {
      const double x = p.x - 0.5 + 0.025 * standard_normal(rng);
      const double y = p.y - 0.5 + 0.025 * standard_normal(rng);
      const double ax = sx * (x + shear * y), ay = sy * y;
      placed.push_back({px * (c * ax - s * ay + 0.5 + tx), px * (s * ax + c * ay + 0.5 + ty)});
    }
    for (std::size_t i = 1; i < placed.size(); ++i) segments.emplace_back(placed[i - 1], placed[i]);
  }
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t q = 0; q < size; ++q) {
      const Point centre{double(q) + 0.5, double(r) + 0.5};
      double d = 1e9;
      for (const auto& [a, b] : segments) d = std::min(d, segment_distance(centre, a, b));
      out[r * size + q] = static_cast<float>(std::clamp(half_width + 0.5 - d, 0.0, 1.0));
    }
  }
}

}  // namespace

LabeledSet render_digits(std::size_t count, std::uint64_t seed, std::size_t size) {
  if (size < 8) throw ConfigError("digit canvas must be at least 8 pixels");
  Tensor<float> images({count, 1, size, size});
  std::vector<int> labels(count);
  Rng label_rng = make_rng(seed, {0});
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = static_cast<int>(uniform_index(label_rng, 10));
    Rng rng = make_rng(seed, {1, i});
    render_one(labels[i], rng, size, images.data().data() + i * size * size);
  }
  return LabeledSet(std::move(images), std::move(labels), 10);
}

}  // namespace uda
