#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tscir/model.hpp"
#include "tscir/rng.hpp"

namespace tscir::toy {

enum class Shape { Circle, Square, Triangle, Cross };
enum class Color { Red, Green, Blue, Yellow, Orange, Purple, Cyan, Magenta };
enum class Size { Small, Medium, Large };
enum class Position { Center, Left, Right, Top, Bottom };
enum class Background { White, Gray, Black };

constexpr int kNumShapes = 4, kNumColors = 8, kNumSizes = 3, kNumPositions = 5,
              kNumBackgrounds = 3;
constexpr int kSpecCapacity = kNumShapes * kNumColors * kNumSizes * kNumPositions * kNumBackgrounds;

struct SceneSpec {
    Shape shape = Shape::Circle;
    Color color = Color::Red;
    Size size = Size::Medium;
    Position position = Position::Center;
    Background background = Background::White;

    bool operator==(const SceneSpec&) const = default;
    int index() const;
    static SceneSpec from_index(int idx);
};

const char* to_string(Shape s);
const char* to_string(Color c);
const char* to_string(Size s);
const char* to_string(Position p);
const char* to_string(Background b);

// Fixed palette RGB in [0,1].
void rgb_of(Color c, double out[3]);
void rgb_of(Background b, double out[3]);

// Deterministic antialiasing-free rasterization; a pixel is colored iff its
// center lies inside the shape.
Image render(const SceneSpec& spec, int size_px);

// "a {size} {color} {shape} at the {position} on a {background} background"
std::string caption_of(const SceneSpec& spec);
// Partial-caption mode drops each non-shape attribute with probability 0.5.
std::string partial_caption_of(const SceneSpec& spec, Rng& rng);

struct PartialSpec {
    std::optional<Shape> shape;
    std::optional<Color> color;
    std::optional<Size> size;
    std::optional<Position> position;
    std::optional<Background> background;
};
PartialSpec parse_caption(const std::string& caption);

// Attribute delta described by a modification string.
struct EditDelta {
    std::optional<Shape> shape;
    std::optional<Color> color;
    std::optional<Size> size;
    std::optional<Position> position;
    std::optional<Background> background;

    int count() const;
    SceneSpec apply(const SceneSpec& base) const;
};
std::string modification_text(const EditDelta& delta);
EditDelta parse_modification(const std::string& text);

struct PairRecord {
    std::string id;
    SceneSpec spec;
    std::string caption;
};

struct TripletRecord {
    std::string id;
    std::string reference_id;
    std::string modification;
    std::vector<std::string> target_ids;
};

struct TripletGenOptions {
    int gallery_size = 256;
    bool multi_target = false;
    // With multi_target, the gallery is drawn with replacement from a pool of
    // this many distinct specs so several gallery images share a spec.
    int multi_target_pool = 64;
    // Fraction of modifications corrupted (noisy-triplet mode).
    double noise_fraction = 0.0;
};

struct Manifest {
    std::vector<PairRecord> images;
    std::vector<TripletRecord> triplets;
    std::map<std::string, int> image_index;  // id -> position in images

    const PairRecord& image(const std::string& id) const;
    void rebuild_index();
};

std::vector<PairRecord> generate_pairs(int n, uint64_t seed, bool partial_captions = false);
Manifest generate_triplets(int n, uint64_t seed, const TripletGenOptions& opts = {});

// Line-delimited JSON manifests (UTF-8, one record per line).
void write_manifest(const std::string& path, const Manifest& m);
void write_pairs(const std::string& path, const std::vector<PairRecord>& pairs);
Manifest read_manifest(const std::string& path);

}  // namespace tscir::toy
