// Offline stand-in for the MNIST corpus: procedurally rendered digit glyphs
// written in MNIST layout, so the rest of the pipeline is agnostic to where
// the raw data came from.

#include "synth_digits.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "disp/rng.hpp"

namespace disp_tools {

namespace {

using disp::CounterRng;


using disp::CounterRng;

struct Point {
  double x, y;
};
using Polyline = std::vector<Point>;

// Glyph skeletons in the unit square, y pointing down.
std::vector<Polyline> glyph(int digit) {
  auto circle = [](double cx, double cy, double rx, double ry, int n = 18) {
    Polyline p;
    for (int i = 0; i <= n; ++i) {
      double a = 2.0 * M_PI * i / n;
      p.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return p;
  };
  switch (digit) {
    case 0: return {circle(0.5, 0.5, 0.26, 0.37)};
    case 1:
      return {{{0.35, 0.28}, {0.55, 0.13}, {0.55, 0.87}},
              {{0.38, 0.87}, {0.7, 0.87}}};
    case 2:
      return {{{0.28, 0.32}, {0.33, 0.17}, {0.5, 0.12}, {0.67, 0.17}, {0.71, 0.33},
               {0.55, 0.55}, {0.28, 0.85}, {0.74, 0.85}}};
    case 3:
      return {{{0.3, 0.17}, {0.52, 0.12}, {0.68, 0.24}, {0.55, 0.44}, {0.44, 0.47},
               {0.58, 0.5}, {0.71, 0.64}, {0.58, 0.84}, {0.32, 0.86}}};
    case 4:
      return {{{0.6, 0.12}, {0.26, 0.6}, {0.78, 0.6}}, {{0.62, 0.3}, {0.62, 0.88}}};
    case 5:
      return {{{0.7, 0.12}, {0.32, 0.12}, {0.3, 0.45}, {0.55, 0.42}, {0.71, 0.56},
               {0.67, 0.76}, {0.49, 0.88}, {0.3, 0.8}}};
    case 6:
      return {{{0.64, 0.12}, {0.43, 0.3}, {0.33, 0.55}, {0.35, 0.76}, {0.52, 0.88},
               {0.68, 0.75}, {0.65, 0.57}, {0.5, 0.5}, {0.36, 0.58}}};
    case 7:
      return {{{0.27, 0.13}, {0.73, 0.13}, {0.45, 0.88}}, {{0.36, 0.5}, {0.63, 0.5}}};
    case 8: return {circle(0.5, 0.3, 0.17, 0.18), circle(0.5, 0.67, 0.21, 0.21)};
    case 9:
      return {circle(0.52, 0.33, 0.18, 0.2),
              {{0.7, 0.35}, {0.66, 0.62}, {0.54, 0.88}}};
  }
  return {};
}

Polyline subdivide(const Polyline& line, int pieces_per_segment) {
  Polyline out;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    for (int k = 0; k < pieces_per_segment; ++k) {
      double t = static_cast<double>(k) / pieces_per_segment;
      out.push_back({line[i].x + t * (line[i + 1].x - line[i].x),
                     line[i].y + t * (line[i + 1].y - line[i].y)});
    }
  }
  out.push_back(line.back());
  return out;
}

double segment_distance(Point p, Point a, Point b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double wx = p.x - a.x, wy = p.y - a.y;
  double len = vx * vx + vy * vy;
  double t = len > 0 ? std::clamp((wx * vx + wy * vy) / len, 0.0, 1.0) : 0.0;
  double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

void render(int digit, const CounterRng& rng, std::uint64_t base, std::uint8_t* out,
            std::size_t side) {
  auto u = [&](std::uint64_t k, double lo, double hi) { return rng.uniform(base + k, lo, hi); };

  double angle = u(0, -0.22, 0.22);
  double sx = u(1, 0.82, 1.12), sy = u(2, 0.82, 1.12);
  double shear = u(3, -0.18, 0.18);
  double tx = u(4, -0.06, 0.06), ty = u(5, -0.06, 0.06);
  double thickness = u(6, 0.045, 0.075);
  double brightness = u(7, 0.8, 1.0);
  double warp_ax = u(8, 0.0, 0.035), warp_ay = u(9, 0.0, 0.035);
  double warp_fx = u(10, 0.7, 1.4), warp_fy = u(11, 0.7, 1.4);
  double warp_px = u(12, 0.0, 2.0 * M_PI), warp_py = u(13, 0.0, 2.0 * M_PI);

  double ca = std::cos(angle), sa = std::sin(angle);
  auto transform = [&](Point p) {
    double x = p.x - 0.5, y = p.y - 0.5;
    x += shear * y;
    x *= sx;
    y *= sy;
    double rx = ca * x - sa * y, ry = sa * x + ca * y;
    rx += warp_ax * std::sin(2.0 * M_PI * warp_fy * (ry + 0.5) + warp_px);
    ry += warp_ay * std::sin(2.0 * M_PI * warp_fx * (rx + 0.5) + warp_py);
    return Point{rx + 0.5 + tx, ry + 0.5 + ty};
  };

  std::vector<Polyline> lines;
  for (const Polyline& raw : glyph(digit)) {
    Polyline fine = subdivide(raw, 6);
    for (Point& p : fine) p = transform(p);
    lines.push_back(std::move(fine));
  }

  const double edge = 0.025;  // soft falloff band outside the stroke core
  for (std::size_t py = 0; py < side; ++py)
    for (std::size_t px = 0; px < side; ++px) {
      Point p{(px + 0.5) / static_cast<double>(side), (py + 0.5) / static_cast<double>(side)};
      double dist = 1e9;
      for (const Polyline& line : lines)
        for (std::size_t i = 0; i + 1 < line.size(); ++i)
          dist = std::min(dist, segment_distance(p, line[i], line[i + 1]));
      double level = 0.0;
      if (dist <= thickness)
        level = 1.0;
      else if (dist <= thickness + edge)
        level = 1.0 - (dist - thickness) / edge;
      if (level > 0.0) {
        double jitter = rng.uniform(base + 100 + py * side + px, 0.82, 1.0);
        out[py * side + px] =
            static_cast<std::uint8_t>(std::clamp(level * brightness * jitter * 255.0, 0.0, 255.0));
      } else {
        out[py * side + px] = 0;
      }
    }
}

}  // namespace

disp::RawMnistSet synth_digit_corpus(std::size_t count, std::size_t side, std::uint64_t seed) {
  disp::RawMnistSet set;
  set.count = count;
  set.rows = side;
  set.cols = side;
  set.images.resize(count * side * side);
  set.labels.resize(count);

  CounterRng label_rng(seed, 0x4C41424C);  // "LABL"
  CounterRng draw_rng(seed, 0x44524157);   // "DRAW"
  for (std::size_t i = 0; i < count; ++i)
    set.labels[i] = static_cast<std::uint8_t>(label_rng.index(i, 10));

#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(count); ++i) {
    auto idx = static_cast<std::size_t>(i);
    render(set.labels[idx], draw_rng, static_cast<std::uint64_t>(idx) * 1000,
           set.images.data() + idx * side * side, side);
  }
  return set;
}

}  // namespace disp_tools
