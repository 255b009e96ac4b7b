#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xbm {

enum class ObjectSize : std::uint8_t { small = 0, large = 1 };

/// Procedural world layout. Class labels are (shape, color) pairs, so the
/// task has |shapes| * |colors| classes.
struct SceneSpec {
  int rows = 2;
  int cols = 2;
  std::vector<std::string> shapes{"circle", "square", "triangle", "cross"};
  std::vector<std::string> colors{"red", "blue"};
  int image_size = 32;

  int cells() const { return rows * cols; }
  int num_classes() const { return static_cast<int>(shapes.size() * colors.size()); }
  int cell_height() const { return image_size / rows; }
  int cell_width() const { return image_size / cols; }

  /// Throws a config error if the spec cannot be rendered.
  void validate() const;

  /// `key = value` lines; parsed back by from_text.
  std::string to_text() const;
  static SceneSpec from_text(const std::string& text);

  bool operator==(const SceneSpec&) const = default;
};

struct SceneObject {
  int shape = 0;  // index into SceneSpec::shapes
  int color = 0;  // index into SceneSpec::colors
  ObjectSize size = ObjectSize::small;
  int cell = 0;  // row-major cell index

  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::vector<SceneObject> objects;
  int target = 0;
  int background = 0;  // index into background_palette()

  bool operator==(const Scene&) const = default;
};

struct Rgb {
  float r, g, b;
  bool operator==(const Rgb&) const = default;
};

const std::vector<Rgb>& background_palette();

struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;  // row-major H x W x 3

  Rgb pixel(int y, int x) const;
  bool operator==(const Image&) const = default;
};

struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0/1

  std::int64_t count() const;
  bool operator==(const Mask&) const = default;
};

/// Index of the largest object; equal sizes go to the lowest cell index.
int target_object(const std::vector<SceneObject>& objects);

/// Deterministic for a given seed. The object count is uniform over
/// [1, cells]; occupied cells, shapes, colors and sizes are uniform.
/// Objects are stored in cell order.
Scene sample_scene(std::uint64_t seed, const SceneSpec& spec);

/// Class id of the target object: shape * |colors| + color.
int scene_label(const Scene& scene, const SceneSpec& spec);

struct Rendering {
  Image image;
  std::vector<Mask> masks;  // one per object, same order as Scene::objects
};

/// Pixel-exact rasterisation with integer geometry (no antialiasing).
Rendering render(const Scene& scene, const SceneSpec& spec);

/// Exact pixel footprint of one object.
Mask rasterize_object(const SceneObject& object, const SceneSpec& spec);

/// Recovers the class label from pixels alone: masks are matched against
/// rasterised templates to identify shape, size and cell, and the color comes
/// from a histogram of the masked pixels.
int label_from_rendering(const Image& image, const std::vector<Mask>& masks, const SceneSpec& spec);

}  // namespace xbm
