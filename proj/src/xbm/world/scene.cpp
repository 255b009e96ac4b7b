#include "xbm/world/scene.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <tuple>
#include <sstream>

#include "xbm/util/config.hpp"
#include "xbm/util/error.hpp"
#include "xbm/util/rng.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm {

namespace {

const ColorDef& color_def(const std::string& name) {
  for (const auto& c : color_table())
    if (name == c.name) return c;
  fail(ErrorKind::config, "unknown color `" + name + "`");
}

int shape_kind(const std::string& name) {
  const auto& w = shape_words();
  const auto it = std::find(w.begin(), w.end(), name);
  if (it == w.end()) fail(ErrorKind::config, "unknown shape `" + name + "`");
  return static_cast<int>(it - w.begin());
}

// Coordinates are in doubled pixel units so that pixel centres and cell
// centres are both integers.
bool covers(int kind, int dx, int dy, int r) {
  const int ax = std::abs(dx), ay = std::abs(dy);
  const int d2 = dx * dx + dy * dy;
  switch (kind) {
    case 0:  // circle
      return d2 <= r * r;
    case 1:  // square
      return 5 * ax <= 4 * r && 5 * ay <= 4 * r;
    case 2:  // triangle, apex up
      return dy >= -r && dy <= r && 2 * ax <= dy + r;
    case 3:  // cross
      return (3 * ax <= r && ay <= r) || (3 * ay <= r && ax <= r);
    case 4:  // diamond
      return ax + ay <= r;
    case 5:  // ring
      return d2 <= r * r && 4 * d2 >= r * r;
    case 6:  // star (diagonal cross)
      return 3 * std::abs(ax - ay) <= r && 5 * std::max(ax, ay) <= 4 * r;
    default:
      fail(ErrorKind::invalid_argument, "unknown shape kind");
  }
}

}  // namespace

const std::vector<Rgb>& background_palette() {
  static const std::vector<Rgb> p{{0.0f, 0.0f, 0.0f}, {0.125f, 0.125f, 0.125f}};
  return p;
}

void SceneSpec::validate() const {
  if (rows < 1 || cols < 1) fail(ErrorKind::config, "grid must have at least one row and column");
  if (image_size % rows != 0 || image_size % cols != 0)
    fail(ErrorKind::config, "image_size must be divisible by grid_rows and grid_cols");
  if (std::min(cell_height(), cell_width()) < 8) fail(ErrorKind::config, "grid cells must be at least 8 pixels");
  if (rows > 3 || cols > 3) fail(ErrorKind::config, "position lexicon supports at most 3x3 grids");
  if (shapes.empty() || colors.empty()) fail(ErrorKind::config, "shape and color sets must be non-empty");
  const auto unique = [](std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    return std::adjacent_find(v.begin(), v.end()) == v.end();
  };
  if (!unique(shapes) || !unique(colors)) fail(ErrorKind::config, "duplicate shape or color");
  for (const auto& s : shapes) shape_kind(s);
  for (const auto& c : colors) color_def(c);
}

std::string SceneSpec::to_text() const {
  std::ostringstream out;
  const auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  };
  out << "grid_cols = " << cols << "\n";
  out << "grid_rows = " << rows << "\n";
  out << "image_size = " << image_size << "\n";
  out << "shapes = " << join(shapes) << "\n";
  out << "colors = " << join(colors) << "\n";
  return out.str();
}

SceneSpec SceneSpec::from_text(const std::string& text) {
  const auto cfg = KeyValueConfig::parse(text, {"grid_rows", "grid_cols", "image_size", "shapes", "colors"});
  SceneSpec s;
  s.rows = static_cast<int>(cfg.get_int("grid_rows", s.rows));
  s.cols = static_cast<int>(cfg.get_int("grid_cols", s.cols));
  s.image_size = static_cast<int>(cfg.get_int("image_size", s.image_size));
  s.shapes = cfg.get_list("shapes", s.shapes);
  s.colors = cfg.get_list("colors", s.colors);
  s.validate();
  return s;
}

Rgb Image::pixel(int y, int x) const {
  const auto i = static_cast<std::size_t>((y * width + x) * 3);
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

std::int64_t Mask::count() const {
  return std::count(bits.begin(), bits.end(), std::uint8_t{1});
}

int target_object(const std::vector<SceneObject>& objects) {
  if (objects.empty()) fail(ErrorKind::invalid_argument, "scene has no objects");
  int best = 0;
  for (int i = 1; i < static_cast<int>(objects.size()); ++i) {
    const auto& o = objects[static_cast<std::size_t>(i)];
    const auto& b = objects[static_cast<std::size_t>(best)];
    if (o.size > b.size || (o.size == b.size && o.cell < b.cell)) best = i;
  }
  return best;
}

Scene sample_scene(std::uint64_t seed, const SceneSpec& spec) {
  CounterRng rng(seed, hash_name("scene"));
  const int cells = spec.cells();
  const int count = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cells)));
  std::vector<int> order(static_cast<std::size_t>(cells));
  for (int i = 0; i < cells; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(cells - i));
    std::swap(order[static_cast<std::size_t>(i)], order[j]);
  }
  std::vector<int> chosen(order.begin(), order.begin() + count);
  std::sort(chosen.begin(), chosen.end());
  Scene scene;
  for (int cell : chosen) {
    SceneObject o;
    o.cell = cell;
    o.shape = static_cast<int>(rng.below(spec.shapes.size()));
    o.color = static_cast<int>(rng.below(spec.colors.size()));
    o.size = rng.below(2) ? ObjectSize::large : ObjectSize::small;
    scene.objects.push_back(o);
  }
  scene.background = static_cast<int>(rng.below(background_palette().size()));
  scene.target = target_object(scene.objects);
  return scene;
}

int scene_label(const Scene& scene, const SceneSpec& spec) {
  const auto& t = scene.objects.at(static_cast<std::size_t>(scene.target));
  return t.shape * static_cast<int>(spec.colors.size()) + t.color;
}

Mask rasterize_object(const SceneObject& object, const SceneSpec& spec) {
  const int ch = spec.cell_height(), cw = spec.cell_width();
  const int cs = std::min(ch, cw);
  const int radius = object.size == ObjectSize::large ? cs - 3 : cs / 2 - 1;
  const int row = object.cell / spec.cols, col = object.cell % spec.cols;
  const int cy2 = 2 * row * ch + ch;
  const int cx2 = 2 * col * cw + cw;
  const int kind = shape_kind(spec.shapes.at(static_cast<std::size_t>(object.shape)));
  Mask m{spec.image_size, spec.image_size,
         std::vector<std::uint8_t>(static_cast<std::size_t>(spec.image_size * spec.image_size), 0)};
  for (int y = row * ch; y < (row + 1) * ch; ++y)
    for (int x = col * cw; x < (col + 1) * cw; ++x)
      if (covers(kind, 2 * x + 1 - cx2, 2 * y + 1 - cy2, radius))
        m.bits[static_cast<std::size_t>(y * spec.image_size + x)] = 1;
  return m;
}

Rendering render(const Scene& scene, const SceneSpec& spec) {
  const int n = spec.image_size;
  const Rgb bg = background_palette().at(static_cast<std::size_t>(scene.background));
  Rendering out;
  out.image = Image{n, n, std::vector<float>(static_cast<std::size_t>(n * n * 3))};
  for (int i = 0; i < n * n; ++i) {
    out.image.rgb[static_cast<std::size_t>(3 * i)] = bg.r;
    out.image.rgb[static_cast<std::size_t>(3 * i + 1)] = bg.g;
    out.image.rgb[static_cast<std::size_t>(3 * i + 2)] = bg.b;
  }
  // Paint in cell order so the result never depends on list order.
  std::vector<std::size_t> order(scene.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scene.objects[a].cell < scene.objects[b].cell; });
  out.masks.resize(scene.objects.size());
  for (std::size_t idx : order) {
    const auto& o = scene.objects[idx];
    Mask m = rasterize_object(o, spec);
    const auto& c = color_def(spec.colors.at(static_cast<std::size_t>(o.color)));
    for (int i = 0; i < n * n; ++i) {
      if (!m.bits[static_cast<std::size_t>(i)]) continue;
      out.image.rgb[static_cast<std::size_t>(3 * i)] = c.r;
      out.image.rgb[static_cast<std::size_t>(3 * i + 1)] = c.g;
      out.image.rgb[static_cast<std::size_t>(3 * i + 2)] = c.b;
    }
    out.masks[idx] = std::move(m);
  }
  return out;
}

int label_from_rendering(const Image& image, const std::vector<Mask>& masks, const SceneSpec& spec) {
  if (masks.empty()) fail(ErrorKind::invalid_argument, "no masks");
  std::vector<SceneObject> found;
  for (const auto& m : masks) {
    int y0 = m.height, y1 = -1, x0 = m.width, x1 = -1;
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x)
        if (m.bits[static_cast<std::size_t>(y * m.width + x)]) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
    if (y1 < 0) fail(ErrorKind::data, "empty object mask");
    const int row = ((y0 + y1) / 2) / spec.cell_height();
    const int col = ((x0 + x1) / 2) / spec.cell_width();
    SceneObject o;
    o.cell = row * spec.cols + col;
    bool matched = false;
    for (int s = 0; s < static_cast<int>(spec.shapes.size()) && !matched; ++s)
      for (ObjectSize sz : {ObjectSize::small, ObjectSize::large}) {
        SceneObject probe{s, 0, sz, o.cell};
        if (rasterize_object(probe, spec) == m) {
          o.shape = s;
          o.size = sz;
          matched = true;
          break;
        }
      }
    if (!matched) fail(ErrorKind::data, "mask matches no shape template");
    std::map<std::tuple<float, float, float>, int> hist;
    for (int i = 0; i < m.height * m.width; ++i)
      if (m.bits[static_cast<std::size_t>(i)]) {
        const Rgb p = image.pixel(i / m.width, i % m.width);
        ++hist[{p.r, p.g, p.b}];
      }
    const auto mode = std::max_element(hist.begin(), hist.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; })
                          ->first;
    o.color = -1;
    for (int c = 0; c < static_cast<int>(spec.colors.size()); ++c) {
      const auto& def = color_def(spec.colors[static_cast<std::size_t>(c)]);
      if (std::tuple<float, float, float>{def.r, def.g, def.b} == mode) o.color = c;
    }
    if (o.color < 0) fail(ErrorKind::data, "masked pixels match no palette color");
    found.push_back(o);
  }
  std::sort(found.begin(), found.end(), [](const SceneObject& a, const SceneObject& b) { return a.cell < b.cell; });
  const auto& t = found[static_cast<std::size_t>(target_object(found))];
  return t.shape * static_cast<int>(spec.colors.size()) + t.color;
}

}  // namespace xbm
