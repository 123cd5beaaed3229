#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <string>

#include "esbn/random.hpp"
#include "esbn/taskgen.hpp"

namespace esbn::taskgen {

namespace {

constexpr double kStrokeWidth = 2.2;
constexpr double kMinL1 = 40.0;

struct Point {
  double x, y;
};

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

// Draws a polyline with an anti-aliased edge, keeping the max intensity per pixel.
void draw_polyline(Image& img, const std::vector<Point>& pts) {
  for (std::size_t r = 0; r < kGlyphSide; ++r) {
    for (std::size_t c = 0; c < kGlyphSide; ++c) {
      const Point p{c + 0.5, r + 0.5};
      double d = 1e9;
      for (std::size_t k = 0; k + 1 < pts.size(); ++k) d = std::min(d, segment_distance(p, pts[k], pts[k + 1]));
      const double v = std::clamp(kStrokeWidth / 2 + 0.5 - d, 0.0, 1.0);
      auto& px = img[r * kGlyphSide + c];
      px = std::max(px, static_cast<float>(v));
    }
  }
}

Point random_point(Rng& rng) {
  return {5.0 + rng.uniform() * 22.0, 5.0 + rng.uniform() * 22.0};
}

Image random_glyph(Rng& rng) {
  Image img{};
  const std::size_t strokes = 2 + rng.below(3);
  for (std::size_t s = 0; s < strokes; ++s) {
    std::vector<Point> pts;
    switch (rng.below(3)) {
      case 0:  // straight line
        pts = {random_point(rng), random_point(rng)};
        break;
      case 1: {  // arc
        const Point c{10.0 + rng.uniform() * 12.0, 10.0 + rng.uniform() * 12.0};
        const double radius = 4.0 + rng.uniform() * 5.0;
        const double start = rng.uniform() * 2 * std::numbers::pi;
        const double sweep = (0.5 + rng.uniform() * 1.5) * std::numbers::pi;
        for (int k = 0; k <= 24; ++k) {
          const double a = start + sweep * k / 24.0;
          pts.push_back({c.x + radius * std::cos(a), c.y + radius * std::sin(a)});
        }
        break;
      }
      default:  // two-segment hook
        pts = {random_point(rng), random_point(rng), random_point(rng)};
        break;
    }
    draw_polyline(img, pts);
  }
  return img;
}

double l1(const Image& a, const Image& b) {
  double d = 0;
  for (std::size_t i = 0; i < kGlyphPixels; ++i) d += std::abs(a[i] - b[i]);
  return d;
}

std::filesystem::path glyph_file(const std::filesystem::path& dir, std::size_t id) {
  char name[16];
  std::snprintf(name, sizeof name, "%03zu.png", id);
  return dir / name;
}

}  // namespace

GlyphSet render_glyphs(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "glyphs"));
  GlyphSet set;
  while (set.images.size() < kGlyphCount) {
    auto img = random_glyph(rng);
    const bool distinct =
        std::all_of(set.images.begin(), set.images.end(), [&](const Image& other) { return l1(img, other) > kMinL1; });
    if (distinct) set.images.push_back(img);
  }
  return set;
}

double min_pairwise_l1(const GlyphSet& glyphs) {
  double best = INFINITY;
  for (std::size_t i = 0; i < glyphs.images.size(); ++i) {
    for (std::size_t j = i + 1; j < glyphs.images.size(); ++j) best = std::min(best, l1(glyphs.images[i], glyphs.images[j]));
  }
  return best;
}

GlyphSet load_glyphs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("glyph directory not found: " + dir.string());
  std::size_t pngs = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".png") ++pngs;
  }
  if (pngs != kGlyphCount) {
    throw std::runtime_error("glyph directory " + dir.string() + " holds " + std::to_string(pngs) +
                             " PNG files, expected 100");
  }
  GlyphSet set;
  for (std::size_t id = 0; id < kGlyphCount; ++id) {
    const auto path = glyph_file(dir, id);
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
      throw std::runtime_error("cannot read glyph " + path.string() + ": " + image.message);
    }
    if (image.width != kGlyphSide || image.height != kGlyphSide) {
      png_image_free(&image);
      throw std::runtime_error("glyph " + path.string() + " is " + std::to_string(image.width) + "x" +
                               std::to_string(image.height) + ", expected 32x32");
    }
    image.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
      throw std::runtime_error("cannot decode glyph " + path.string() + ": " + image.message);
    }
    Image img;
    for (std::size_t i = 0; i < kGlyphPixels; ++i) img[i] = static_cast<float>(buf[i]) / 255.0f;
    set.images.push_back(img);
  }
  if (min_pairwise_l1(set) <= 0.0) throw std::runtime_error("glyph directory " + dir.string() + " has duplicate images");
  return set;
}

void save_glyphs(const GlyphSet& glyphs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t id = 0; id < glyphs.images.size(); ++id) {
    std::vector<png_byte> buf(kGlyphPixels);
    for (std::size_t i = 0; i < kGlyphPixels; ++i) {
      buf[i] = static_cast<png_byte>(std::lround(std::clamp(glyphs.images[id][i], 0.0f, 1.0f) * 255.0f));
    }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = kGlyphSide;
    image.height = kGlyphSide;
    image.format = PNG_FORMAT_GRAY;
    const auto path = glyph_file(dir, id);
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
      throw std::runtime_error("cannot write glyph " + path.string() + ": " + image.message);
    }
  }
}

}  // namespace esbn::taskgen
