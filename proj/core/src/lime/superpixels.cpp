#include "blastlime/lime/superpixels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "blastlime/error.hpp"

namespace blastlime::lime {
namespace {

double srgb_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }

double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

struct Center {
  double l, a, b, x, y;
};

// 4-connected components of equal labels; returns the component id per pixel.
std::vector<int> connected_components(const std::vector<int>& labels, int w, int h, int& count) {
  std::vector<int> comp(labels.size(), -1);
  std::vector<std::size_t> stack;
  count = 0;
  for (std::size_t start = 0; start < labels.size(); ++start) {
    if (comp[start] >= 0) continue;
    comp[start] = count;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const int x = static_cast<int>(p % static_cast<std::size_t>(w));
      const int y = static_cast<int>(p / static_cast<std::size_t>(w));
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
        const std::size_t q = static_cast<std::size_t>(ny[k]) * static_cast<std::size_t>(w) + static_cast<std::size_t>(nx[k]);
        if (comp[q] < 0 && labels[q] == labels[p]) {
          comp[q] = count;
          stack.push_back(q);
        }
      }
    }
    ++count;
  }
  return comp;
}

int find_root(std::vector<int>& parent, int i) {
  while (parent[static_cast<std::size_t>(i)] != i) {
    parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
    i = parent[static_cast<std::size_t>(i)];
  }
  return i;
}

std::vector<int> enforce_connectivity(const std::vector<int>& labels, int w, int h, std::size_t min_size) {
  int count = 0;
  const std::vector<int> comp = connected_components(labels, w, h, count);
  const auto n = static_cast<std::size_t>(count);
  std::vector<std::size_t> size(n, 0);
  for (int c : comp) ++size[static_cast<std::size_t>(c)];
  std::vector<std::set<int>> adjacent(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x);
      if (x + 1 < w && comp[p + 1] != comp[p]) {
        adjacent[static_cast<std::size_t>(comp[p])].insert(comp[p + 1]);
        adjacent[static_cast<std::size_t>(comp[p + 1])].insert(comp[p]);
      }
      if (y + 1 < h && comp[p + static_cast<std::size_t>(w)] != comp[p]) {
        adjacent[static_cast<std::size_t>(comp[p])].insert(comp[p + static_cast<std::size_t>(w)]);
        adjacent[static_cast<std::size_t>(comp[p + static_cast<std::size_t>(w)])].insert(comp[p]);
      }
    }
  }

  std::vector<int> orphans;
  for (std::size_t c = 0; c < n; ++c) {
    if (size[c] < min_size) orphans.push_back(static_cast<int>(c));
  }
  std::stable_sort(orphans.begin(), orphans.end(), [&](int a, int b) {
    return size[static_cast<std::size_t>(a)] < size[static_cast<std::size_t>(b)];
  });

  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::size_t> merged_size = size;
  for (int o : orphans) {
    const int root = find_root(parent, o);
    if (merged_size[static_cast<std::size_t>(root)] >= min_size) continue;  // already absorbed enough
    int best = -1;
    for (int nb : adjacent[static_cast<std::size_t>(root)]) {
      const int r = find_root(parent, nb);
      if (r == root) continue;
      if (best < 0 || merged_size[static_cast<std::size_t>(r)] > merged_size[static_cast<std::size_t>(best)] ||
          (merged_size[static_cast<std::size_t>(r)] == merged_size[static_cast<std::size_t>(best)] && r < best)) {
        best = r;
      }
    }
    if (best < 0) continue;  // sole component
    parent[static_cast<std::size_t>(root)] = best;
    merged_size[static_cast<std::size_t>(best)] += merged_size[static_cast<std::size_t>(root)];
    std::set<int>& into = adjacent[static_cast<std::size_t>(best)];
    for (int nb : adjacent[static_cast<std::size_t>(root)]) into.insert(nb);
    adjacent[static_cast<std::size_t>(root)].clear();
  }

  std::vector<int> out(labels.size());
  for (std::size_t p = 0; p < labels.size(); ++p) out[p] = find_root(parent, comp[p]);
  return out;
}

}  // namespace

void srgb_to_lab(float r, float g, float b, double& l, double& a, double& bb) {
  const double rl = srgb_linear(r), gl = srgb_linear(g), bl = srgb_linear(b);
  const double x = (0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl) / 0.95047;
  const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double z = (0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl) / 1.08883;
  const double fx = lab_f(x), fy = lab_f(y), fz = lab_f(z);
  l = 116.0 * fy - 16.0;
  a = 500.0 * (fx - fy);
  bb = 200.0 * (fy - fz);
}

void SuperpixelMap::validate() const {
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (labels.size() != n) throw ShapeError("superpixel map: label count does not match image size");
  if (pixel_counts.size() != static_cast<std::size_t>(count) ||
      mean_colors.size() != static_cast<std::size_t>(count) * static_cast<std::size_t>(channels)) {
    throw ShapeError("superpixel map: statistics do not match segment count");
  }
  std::vector<std::size_t> seen(static_cast<std::size_t>(count), 0);
  for (int l : labels) {
    if (l < 0 || l >= count) throw ShapeError("superpixel map: label " + std::to_string(l) + " out of range");
    ++seen[static_cast<std::size_t>(l)];
  }
  if (seen != pixel_counts) throw ShapeError("superpixel map: pixel counts are inconsistent or a label is unused");
}

SuperpixelMap make_superpixel_map(const img::Image& image, const std::vector<int>& labels) {
  if (labels.size() != image.pixel_count()) throw ShapeError("superpixel labels do not match image size");
  SuperpixelMap map;
  map.width = image.width();
  map.height = image.height();
  map.channels = image.channels();
  map.labels.resize(labels.size());
  std::vector<int> lookup;
  int min_label = labels.empty() ? 0 : *std::min_element(labels.begin(), labels.end());
  int max_label = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
  lookup.assign(static_cast<std::size_t>(max_label - min_label + 1), -1);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    int& slot = lookup[static_cast<std::size_t>(labels[p] - min_label)];
    if (slot < 0) slot = map.count++;
    map.labels[p] = slot;
  }
  const auto channels = static_cast<std::size_t>(map.channels);
  map.pixel_counts.assign(static_cast<std::size_t>(map.count), 0);
  std::vector<double> sums(static_cast<std::size_t>(map.count) * channels, 0.0);
  const auto data = image.data();
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const auto l = static_cast<std::size_t>(map.labels[p]);
    ++map.pixel_counts[l];
    for (std::size_t c = 0; c < channels; ++c) sums[l * channels + c] += data[p * channels + c];
  }
  map.mean_colors.resize(sums.size());
  for (std::size_t l = 0; l < map.pixel_counts.size(); ++l) {
    for (std::size_t c = 0; c < channels; ++c) {
      map.mean_colors[l * channels + c] =
          static_cast<float>(sums[l * channels + c] / static_cast<double>(map.pixel_counts[l]));
    }
  }
  return map;
}

SuperpixelMap segment_superpixels(const img::Image& image, const SlicParams& params) {
  image.validate();
  const int w = image.width(), h = image.height();
  if (w < 2 || h < 2) throw ConfigError("superpixels: image must be at least 2x2");
  const std::size_t n = image.pixel_count();
  if (params.segments < 1 || static_cast<std::size_t>(params.segments) > n) {
    throw ConfigError("superpixels: target of " + std::to_string(params.segments) + " segments for " +
                      std::to_string(n) + " pixels");
  }
  if (!(params.compactness > 0.0)) throw ConfigError("superpixels: compactness must be positive");
  if (params.iterations < 1) throw ConfigError("superpixels: at least one iteration is required");

  // Lab image.
  std::vector<double> lab(n * 3);
  const auto data = image.data();
  const auto ch = static_cast<std::size_t>(image.channels());
  for (std::size_t p = 0; p < n; ++p) {
    const float r = data[p * ch];
    const float g = ch >= 3 ? data[p * ch + 1] : r;
    const float b = ch >= 3 ? data[p * ch + 2] : r;
    srgb_to_lab(r, g, b, lab[p * 3], lab[p * 3 + 1], lab[p * 3 + 2]);
  }
  auto at = [&](int x, int y) { return &lab[(static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)) * 3]; };
  auto gradient = [&](int x, int y) {
    const double* l = at(std::max(x - 1, 0), y);
    const double* r = at(std::min(x + 1, w - 1), y);
    const double* u = at(x, std::max(y - 1, 0));
    const double* d = at(x, std::min(y + 1, h - 1));
    double g = 0.0;
    for (int k = 0; k < 3; ++k) g += (r[k] - l[k]) * (r[k] - l[k]) + (d[k] - u[k]) * (d[k] - u[k]);
    return g;
  };

  const double step = std::sqrt(static_cast<double>(n) / params.segments);
  const int nx = std::max(1, static_cast<int>(std::lround(w / step)));
  const int ny = std::max(1, static_cast<int>(std::lround(h / step)));
  std::vector<Center> centers;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      int cx = std::min(w - 1, static_cast<int>((i + 0.5) * w / nx));
      int cy = std::min(h - 1, static_cast<int>((j + 0.5) * h / ny));
      int bx = cx, by = cy;
      double best = gradient(cx, cy);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = cx + dx, y = cy + dy;
          if (x < 0 || y < 0 || x >= w || y >= h) continue;
          const double g = gradient(x, y);
          if (g < best) {
            best = g;
            bx = x;
            by = y;
          }
        }
      }
      const double* c = at(bx, by);
      centers.push_back({c[0], c[1], c[2], static_cast<double>(bx), static_cast<double>(by)});
    }
  }

  const double spatial = params.compactness / step;
  const double spatial2 = spatial * spatial;
  const int radius = static_cast<int>(std::ceil(std::max(static_cast<double>(w) / nx, static_cast<double>(h) / ny)));
  std::vector<int> labels(n, -1);
  std::vector<double> dist(n);
  for (int iter = 0; iter < params.iterations; ++iter) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& c = centers[k];
      const int x0 = std::max(0, static_cast<int>(c.x) - radius), x1 = std::min(w - 1, static_cast<int>(c.x) + radius);
      const int y0 = std::max(0, static_cast<int>(c.y) - radius), y1 = std::min(h - 1, static_cast<int>(c.y) + radius);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x);
          const double* v = &lab[p * 3];
          const double dc = (v[0] - c.l) * (v[0] - c.l) + (v[1] - c.a) * (v[1] - c.a) + (v[2] - c.b) * (v[2] - c.b);
          const double ds = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y);
          const double d = dc + ds * spatial2;
          if (d < dist[p]) {
            dist[p] = d;
            labels[p] = static_cast<int>(k);
          }
        }
      }
    }
    // Any pixel outside every window goes to the spatially nearest centre.
    for (std::size_t p = 0; p < n; ++p) {
      if (labels[p] >= 0) continue;
      const double x = static_cast<double>(p % static_cast<std::size_t>(w));
      const double y = static_cast<double>(p / static_cast<std::size_t>(w));
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = (x - centers[k].x) * (x - centers[k].x) + (y - centers[k].y) * (y - centers[k].y);
        if (d < best) {
          best = d;
          labels[p] = static_cast<int>(k);
        }
      }
    }
    std::vector<Center> sums(centers.size(), Center{0, 0, 0, 0, 0});
    std::vector<std::size_t> counts(centers.size(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      const auto k = static_cast<std::size_t>(labels[p]);
      sums[k].l += lab[p * 3];
      sums[k].a += lab[p * 3 + 1];
      sums[k].b += lab[p * 3 + 2];
      sums[k].x += static_cast<double>(p % static_cast<std::size_t>(w));
      sums[k].y += static_cast<double>(p / static_cast<std::size_t>(w));
      ++counts[k];
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[k]);
      centers[k] = {sums[k].l * inv, sums[k].a * inv, sums[k].b * inv, sums[k].x * inv, sums[k].y * inv};
    }
  }

  const std::size_t min_size = std::max<std::size_t>(1, n / static_cast<std::size_t>(params.segments) / 4);
  SuperpixelMap map = make_superpixel_map(image, enforce_connectivity(labels, w, h, min_size));
  return map;
}

img::Image mask_image(const img::Image& image, std::span<const std::uint8_t> z, const SuperpixelMap& superpixels) {
  if (z.size() != static_cast<std::size_t>(superpixels.count)) {
    throw ShapeError("mask has " + std::to_string(z.size()) + " entries for " + std::to_string(superpixels.count) +
                     " superpixels");
  }
  if (image.width() != superpixels.width || image.height() != superpixels.height ||
      image.channels() != superpixels.channels) {
    throw ShapeError("superpixel map does not match the image");
  }
  img::Image out = image;
  auto dst = out.data();
  const auto ch = static_cast<std::size_t>(image.channels());
  for (std::size_t p = 0; p < superpixels.labels.size(); ++p) {
    const auto l = static_cast<std::size_t>(superpixels.labels[p]);
    if (z[l] != 0) continue;
    for (std::size_t c = 0; c < ch; ++c) dst[p * ch + c] = superpixels.mean_colors[l * ch + c];
  }
  return out;
}

std::vector<int> component_counts(const SuperpixelMap& superpixels) {
  int count = 0;
  const std::vector<int> comp = connected_components(superpixels.labels, superpixels.width, superpixels.height, count);
  std::vector<int> out(static_cast<std::size_t>(superpixels.count), 0);
  std::vector<char> seen(static_cast<std::size_t>(count), 0);
  for (std::size_t p = 0; p < comp.size(); ++p) {
    if (!seen[static_cast<std::size_t>(comp[p])]) {
      seen[static_cast<std::size_t>(comp[p])] = 1;
      ++out[static_cast<std::size_t>(superpixels.labels[p])];
    }
  }
  return out;
}

}  // namespace blastlime::lime
