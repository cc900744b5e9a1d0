#include "tscir/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tscir/errors.hpp"

namespace tscir::toy {

using nlohmann::json;

namespace {
const char* kShapes[] = {"circle", "square", "triangle", "cross"};
const char* kColors[] = {"red", "green", "blue", "yellow", "orange", "purple", "cyan", "magenta"};
const char* kSizes[] = {"small", "medium", "large"};
const char* kPositions[] = {"center", "left", "right", "top", "bottom"};
const char* kBackgrounds[] = {"white", "gray", "black"};

const double kColorRgb[][3] = {
    {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0.5, 0}, {0.5, 0, 1}, {0, 1, 1}, {1, 0, 1}};
const double kBackgroundRgb[][3] = {{1, 1, 1}, {0.5, 0.5, 0.5}, {0, 0, 0}};

template <typename E, size_t N>
std::optional<E> lookup(const char* (&names)[N], const std::string& s) {
    for (size_t i = 0; i < N; ++i)
        if (s == names[i]) return static_cast<E>(i);
    return std::nullopt;
}

template <typename E, size_t N>
E lookup_or_throw(const char* (&names)[N], const std::string& s, const char* what) {
    auto v = lookup<E>(names, s);
    if (!v) throw ArgumentError(std::string("unknown ") + what + ": " + s);
    return *v;
}
}  // namespace

const char* to_string(Shape s) { return kShapes[static_cast<int>(s)]; }
const char* to_string(Color c) { return kColors[static_cast<int>(c)]; }
const char* to_string(Size s) { return kSizes[static_cast<int>(s)]; }
const char* to_string(Position p) { return kPositions[static_cast<int>(p)]; }
const char* to_string(Background b) { return kBackgrounds[static_cast<int>(b)]; }

void rgb_of(Color c, double out[3]) {
    for (int i = 0; i < 3; ++i) out[i] = kColorRgb[static_cast<int>(c)][i];
}
void rgb_of(Background b, double out[3]) {
    for (int i = 0; i < 3; ++i) out[i] = kBackgroundRgb[static_cast<int>(b)][i];
}

int SceneSpec::index() const {
    int idx = static_cast<int>(shape);
    idx = idx * kNumColors + static_cast<int>(color);
    idx = idx * kNumSizes + static_cast<int>(size);
    idx = idx * kNumPositions + static_cast<int>(position);
    idx = idx * kNumBackgrounds + static_cast<int>(background);
    return idx;
}

SceneSpec SceneSpec::from_index(int idx) {
    SceneSpec s;
    s.background = static_cast<Background>(idx % kNumBackgrounds);
    idx /= kNumBackgrounds;
    s.position = static_cast<Position>(idx % kNumPositions);
    idx /= kNumPositions;
    s.size = static_cast<Size>(idx % kNumSizes);
    idx /= kNumSizes;
    s.color = static_cast<Color>(idx % kNumColors);
    idx /= kNumColors;
    s.shape = static_cast<Shape>(idx);
    return s;
}

Image render(const SceneSpec& spec, int size_px) {
    Image img(size_px, size_px);
    double bg[3], fg[3];
    rgb_of(spec.background, bg);
    rgb_of(spec.color, fg);

    // Radii chosen so (circle, medium) pixel counts track the analytic disk
    // area at 32px: 3.5 / 6.2 / 9.5 pixels.
    static const double kRadiusFrac[] = {0.109375, 0.19375, 0.296875};
    static const double kPosFrac[][2] = {
        {0.5, 0.5}, {0.25, 0.5}, {0.75, 0.5}, {0.5, 0.25}, {0.5, 0.75}};
    const double r = kRadiusFrac[static_cast<int>(spec.size)] * size_px;
    const double cx = kPosFrac[static_cast<int>(spec.position)][0] * size_px;
    const double cy = kPosFrac[static_cast<int>(spec.position)][1] * size_px;

    auto inside = [&](double px, double py) {
        const double dx = px - cx, dy = py - cy;
        switch (spec.shape) {
            case Shape::Circle:
                return dx * dx + dy * dy <= r * r;
            case Shape::Square:
                return std::max(std::fabs(dx), std::fabs(dy)) <= r;
            case Shape::Triangle: {
                // Upward triangle with vertices (cx, cy-r), (cx-r, cy+r), (cx+r, cy+r).
                const double ax = cx, ay = cy - r;
                const double bx = cx - r, by = cy + r;
                const double ex = cx + r, ey = cy + r;
                auto cross = [](double ox, double oy, double ux, double uy, double vx,
                                double vy) { return (ux - ox) * (vy - oy) - (uy - oy) * (vx - ox); };
                double c1 = cross(ax, ay, bx, by, px, py);
                double c2 = cross(bx, by, ex, ey, px, py);
                double c3 = cross(ex, ey, ax, ay, px, py);
                return (c1 >= 0 && c2 >= 0 && c3 >= 0) || (c1 <= 0 && c2 <= 0 && c3 <= 0);
            }
            case Shape::Cross:
                return (std::fabs(dx) <= r / 3.0 && std::fabs(dy) <= r) ||
                       (std::fabs(dy) <= r / 3.0 && std::fabs(dx) <= r);
        }
        return false;
    };

    for (int y = 0; y < size_px; ++y)
        for (int x = 0; x < size_px; ++x) {
            bool in = inside(x + 0.5, y + 0.5);
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = in ? fg[c] : bg[c];
        }
    return img;
}

std::string caption_of(const SceneSpec& spec) {
    std::ostringstream ss;
    ss << "a " << to_string(spec.size) << " " << to_string(spec.color) << " "
       << to_string(spec.shape) << " at the " << to_string(spec.position) << " on a "
       << to_string(spec.background) << " background";
    return ss.str();
}

std::string partial_caption_of(const SceneSpec& spec, Rng& rng) {
    std::ostringstream ss;
    ss << "a";
    if (rng.uniform() < 0.5) ss << " " << to_string(spec.size);
    if (rng.uniform() < 0.5) ss << " " << to_string(spec.color);
    ss << " " << to_string(spec.shape);
    if (rng.uniform() < 0.5) ss << " at the " << to_string(spec.position);
    if (rng.uniform() < 0.5) ss << " on a " << to_string(spec.background) << " background";
    return ss.str();
}

PartialSpec parse_caption(const std::string& caption) {
    PartialSpec out;
    std::stringstream ss(caption);
    std::string w;
    std::vector<std::string> words;
    while (ss >> w) words.push_back(w);
    for (size_t i = 0; i < words.size(); ++i) {
        const std::string& word = words[i];
        if (auto v = lookup<Shape>(kShapes, word)) out.shape = v;
        else if (auto v2 = lookup<Color>(kColors, word)) out.color = v2;
        else if (auto v3 = lookup<Size>(kSizes, word)) out.size = v3;
        else if (auto v4 = lookup<Position>(kPositions, word)) out.position = v4;
        else if (auto v5 = lookup<Background>(kBackgrounds, word)) {
            // Background names follow "on a"; "white"/"black" alone would
            // otherwise be ambiguous with a color word, but the palette and
            // background sets are disjoint so a direct match is safe.
            out.background = v5;
        }
    }
    if (!out.shape) throw ArgumentError("caption has no shape word: " + caption);
    return out;
}

int EditDelta::count() const {
    return (shape ? 1 : 0) + (color ? 1 : 0) + (size ? 1 : 0) + (position ? 1 : 0) +
           (background ? 1 : 0);
}

SceneSpec EditDelta::apply(const SceneSpec& base) const {
    SceneSpec out = base;
    if (shape) out.shape = *shape;
    if (color) out.color = *color;
    if (size) out.size = *size;
    if (position) out.position = *position;
    if (background) out.background = *background;
    return out;
}

std::string modification_text(const EditDelta& delta) {
    std::vector<std::string> clauses;
    if (delta.color) clauses.push_back(std::string("change color to ") + to_string(*delta.color));
    if (delta.shape) clauses.push_back(std::string("change shape to ") + to_string(*delta.shape));
    if (delta.size) clauses.push_back(std::string("make it ") + to_string(*delta.size));
    if (delta.position)
        clauses.push_back(std::string("move it to the ") + to_string(*delta.position));
    if (delta.background)
        clauses.push_back(std::string("set the background to ") + to_string(*delta.background));
    if (clauses.empty()) throw ArgumentError("empty edit delta");
    std::string out = clauses[0];
    for (size_t i = 1; i < clauses.size(); ++i) out += " and " + clauses[i];
    return out;
}

EditDelta parse_modification(const std::string& text) {
    EditDelta delta;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t next = text.find(" and ", pos);
        std::string clause =
            next == std::string::npos ? text.substr(pos) : text.substr(pos, next - pos);
        pos = next == std::string::npos ? text.size() : next + 5;

        auto starts = [&clause](const char* prefix) {
            return clause.rfind(prefix, 0) == 0;
        };
        auto tail = [&clause](size_t n) { return clause.substr(n); };
        if (starts("change color to "))
            delta.color = lookup_or_throw<Color>(kColors, tail(16), "color");
        else if (starts("change shape to "))
            delta.shape = lookup_or_throw<Shape>(kShapes, tail(16), "shape");
        else if (starts("make it "))
            delta.size = lookup_or_throw<Size>(kSizes, tail(8), "size");
        else if (starts("move it to the "))
            delta.position = lookup_or_throw<Position>(kPositions, tail(15), "position");
        else if (starts("set the background to "))
            delta.background = lookup_or_throw<Background>(kBackgrounds, tail(22), "background");
        else
            throw ArgumentError("unparseable modification clause: " + clause);
    }
    if (delta.count() == 0) throw ArgumentError("modification describes no edit: " + text);
    return delta;
}

const PairRecord& Manifest::image(const std::string& id) const {
    auto it = image_index.find(id);
    if (it == image_index.end()) throw ArgumentError("unknown image id: " + id);
    return images[it->second];
}

void Manifest::rebuild_index() {
    image_index.clear();
    for (int i = 0; i < static_cast<int>(images.size()); ++i) {
        if (!image_index.emplace(images[i].id, i).second)
            throw ArgumentError("duplicate image id: " + images[i].id);
    }
}

namespace {
std::string format_id(char prefix, int n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%c%06d", prefix, n);
    return buf;
}
}  // namespace

std::vector<PairRecord> generate_pairs(int n, uint64_t seed, bool partial_captions) {
    if (n < 0) throw ArgumentError("n must be >= 0");
    Rng rng(seed ^ 0x70616972ULL);  // domain-separated stream for pairs
    std::vector<PairRecord> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        PairRecord rec;
        rec.id = format_id('p', i);
        rec.spec = SceneSpec::from_index(static_cast<int>(rng.below(kSpecCapacity)));
        rec.caption = partial_captions ? partial_caption_of(rec.spec, rng) : caption_of(rec.spec);
        out.push_back(std::move(rec));
    }
    return out;
}

Manifest generate_triplets(int n, uint64_t seed, const TripletGenOptions& opts) {
    if (n < 0) throw ArgumentError("n must be >= 0");
    if (opts.gallery_size < 1 || opts.gallery_size > kSpecCapacity)
        throw ArgumentError("gallery_size must be within [1, " +
                            std::to_string(kSpecCapacity) + "]");
    if (opts.multi_target && n > kSpecCapacity)
        throw ArgumentError("n exceeds distinct-spec capacity " +
                            std::to_string(kSpecCapacity) + " for the multi-target split");
    if (opts.multi_target &&
        (opts.multi_target_pool < 1 || opts.multi_target_pool > kSpecCapacity))
        throw ArgumentError("multi_target_pool must be within [1, " +
                            std::to_string(kSpecCapacity) + "]");

    Rng rng(seed ^ 0x74726970ULL);  // domain-separated stream for triplets
    Manifest m;

    std::vector<int> all(kSpecCapacity);
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all);

    std::vector<SceneSpec> gallery_specs;
    if (opts.multi_target) {
        for (int i = 0; i < opts.gallery_size; ++i)
            gallery_specs.push_back(
                SceneSpec::from_index(all[rng.below(opts.multi_target_pool)]));
    } else {
        for (int i = 0; i < opts.gallery_size; ++i)
            gallery_specs.push_back(SceneSpec::from_index(all[i]));
    }
    for (int i = 0; i < opts.gallery_size; ++i) {
        PairRecord rec;
        rec.id = format_id('g', i);
        rec.spec = gallery_specs[i];
        rec.caption = caption_of(rec.spec);
        m.images.push_back(std::move(rec));
    }

    for (int i = 0; i < n; ++i) {
        const int gi = static_cast<int>(rng.below(gallery_specs.size()));
        const SceneSpec target = gallery_specs[gi];

        const int num_edits = 1 + static_cast<int>(rng.below(2));
        std::vector<int> attrs = {0, 1, 2, 3, 4};
        rng.shuffle(attrs);
        attrs.resize(num_edits);
        std::sort(attrs.begin(), attrs.end());

        // Reference = target with the edited attributes changed away, so the
        // modification (stated in target values) maps reference -> target.
        SceneSpec reference = target;
        EditDelta delta;
        auto pick_other = [&rng](int current, int count) {
            int v = static_cast<int>(rng.below(count - 1));
            return v >= current ? v + 1 : v;
        };
        for (int a : attrs) {
            switch (a) {
                case 0:
                    reference.shape = static_cast<Shape>(
                        pick_other(static_cast<int>(target.shape), kNumShapes));
                    delta.shape = target.shape;
                    break;
                case 1:
                    reference.color = static_cast<Color>(
                        pick_other(static_cast<int>(target.color), kNumColors));
                    delta.color = target.color;
                    break;
                case 2:
                    reference.size =
                        static_cast<Size>(pick_other(static_cast<int>(target.size), kNumSizes));
                    delta.size = target.size;
                    break;
                case 3:
                    reference.position = static_cast<Position>(
                        pick_other(static_cast<int>(target.position), kNumPositions));
                    delta.position = target.position;
                    break;
                case 4:
                    reference.background = static_cast<Background>(
                        pick_other(static_cast<int>(target.background), kNumBackgrounds));
                    delta.background = target.background;
                    break;
            }
        }

        const std::string ref_id = format_id('r', i);
        PairRecord ref_rec;
        ref_rec.id = ref_id;
        ref_rec.spec = reference;
        ref_rec.caption = caption_of(reference);
        m.images.push_back(std::move(ref_rec));

        std::string modification = modification_text(delta);
        if (opts.noise_fraction > 0 && rng.uniform() < opts.noise_fraction) {
            // Corrupt one attribute value so the text no longer matches the
            // actual target (noisy-triplet mode).
            EditDelta corrupt = delta;
            if (corrupt.color)
                corrupt.color = static_cast<Color>(
                    pick_other(static_cast<int>(*corrupt.color), kNumColors));
            else if (corrupt.shape)
                corrupt.shape = static_cast<Shape>(
                    pick_other(static_cast<int>(*corrupt.shape), kNumShapes));
            else if (corrupt.size)
                corrupt.size =
                    static_cast<Size>(pick_other(static_cast<int>(*corrupt.size), kNumSizes));
            else if (corrupt.position)
                corrupt.position = static_cast<Position>(
                    pick_other(static_cast<int>(*corrupt.position), kNumPositions));
            else if (corrupt.background)
                corrupt.background = static_cast<Background>(
                    pick_other(static_cast<int>(*corrupt.background), kNumBackgrounds));
            modification = modification_text(corrupt);
        }

        TripletRecord rec;
        rec.id = format_id('q', i);
        rec.reference_id = ref_id;
        rec.modification = modification;
        for (int g = 0; g < opts.gallery_size; ++g)
            if (gallery_specs[g] == target) rec.target_ids.push_back(format_id('g', g));
        m.triplets.push_back(std::move(rec));
    }

    m.rebuild_index();
    return m;
}

namespace {
json spec_to_json(const SceneSpec& s) {
    return json{{"shape", to_string(s.shape)},
                {"color", to_string(s.color)},
                {"size", to_string(s.size)},
                {"position", to_string(s.position)},
                {"background", to_string(s.background)}};
}

SceneSpec spec_from_json(const json& j) {
    SceneSpec s;
    s.shape = lookup_or_throw<Shape>(kShapes, j.at("shape").get<std::string>(), "shape");
    s.color = lookup_or_throw<Color>(kColors, j.at("color").get<std::string>(), "color");
    s.size = lookup_or_throw<Size>(kSizes, j.at("size").get<std::string>(), "size");
    s.position =
        lookup_or_throw<Position>(kPositions, j.at("position").get<std::string>(), "position");
    s.background = lookup_or_throw<Background>(
        kBackgrounds, j.at("background").get<std::string>(), "background");
    return s;
}
}  // namespace

void write_pairs(const std::string& path, const std::vector<PairRecord>& pairs) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ArgumentError("cannot write manifest: " + path);
    for (const auto& rec : pairs) {
        json j{{"id", rec.id}, {"spec", spec_to_json(rec.spec)}, {"caption", rec.caption}};
        f << j.dump() << "\n";
    }
}

void write_manifest(const std::string& path, const Manifest& m) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ArgumentError("cannot write manifest: " + path);
    for (const auto& rec : m.images) {
        json j{{"id", rec.id}, {"spec", spec_to_json(rec.spec)}, {"caption", rec.caption}};
        f << j.dump() << "\n";
    }
    for (const auto& rec : m.triplets) {
        json j{{"id", rec.id},
               {"reference_id", rec.reference_id},
               {"modification", rec.modification},
               {"target_ids", rec.target_ids}};
        f << j.dump() << "\n";
    }
}

Manifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ArgumentError("cannot open manifest: " + path);
    Manifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ArgumentError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        if (j.contains("reference_id")) {
            TripletRecord rec;
            rec.id = j.at("id").get<std::string>();
            rec.reference_id = j.at("reference_id").get<std::string>();
            rec.modification = j.at("modification").get<std::string>();
            rec.target_ids = j.at("target_ids").get<std::vector<std::string>>();
            m.triplets.push_back(std::move(rec));
        } else {
            PairRecord rec;
            rec.id = j.at("id").get<std::string>();
            rec.spec = spec_from_json(j.at("spec"));
            rec.caption = j.at("caption").get<std::string>();
            m.images.push_back(std::move(rec));
        }
    }
    m.rebuild_index();
    return m;
}

}  // namespace tscir::toy
