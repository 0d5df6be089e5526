#include "emma/world.hpp"

#include <algorithm>

namespace emma {

namespace vocab {

namespace {
const char* kWords[] = {"<pad>", "color", "shape", "of",       "the",    "red",  "green",
                        "blue",  "yellow", "circle", "square", "triangle", "star"};
}

int color_word(int color) { return kColorWord0 + color; }
int shape_word(int shape) { return kShapeWord0 + shape; }

std::string word_text(int id) {
    if (id >= 0 && id < static_cast<int>(std::size(kWords))) return kWords[id];
    return "w" + std::to_string(id);
}

}  // namespace vocab

void WorldConfig::validate() const {
    if (grid_h <= 0 || grid_w <= 0) throw ConfigError("world grid extents must be positive");
    if (num_colors < 2 || num_colors > 4 || num_shapes < 2 || num_shapes > 4)
        throw ConfigError("world needs between 2 and 4 colors and shapes");
    if (cells() < 2) throw ConfigError("world grid must have at least 2 cells");
    if (noise_std < 0) throw ConfigError("noise_std must be non-negative");
    if (ambiguous_fraction < 0.0 || ambiguous_fraction > 1.0)
        throw ConfigError("ambiguous_fraction must lie in [0, 1]");
}

namespace {

// Sub-stream tags for per-sample randomness.
constexpr std::uint64_t kSceneStream = 0x5CE11E;
constexpr std::uint64_t kNoiseStream = 0x2015E;
constexpr std::uint64_t kPairStream = 0xBA1259;

int distinct_other(int value, int limit, SplitMix64& rng) {
    const int pick = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(limit - 1)));
    return pick >= value ? pick + 1 : pick;
}

// A value different from both a and b (requires limit >= 3).
int distinct_third(int a, int b, int limit, SplitMix64& rng) {
    std::vector<int> options;
    for (int v = 0; v < limit; ++v)
        if (v != a && v != b) options.push_back(v);
    return options[static_cast<std::size_t>(rng.next_below(options.size()))];
}

}  // namespace

World::World(WorldConfig config, std::uint64_t master_seed)
    : cfg_(config), master_seed_(master_seed) {
    cfg_.validate();
}

int World::answer_class_for_color(int color) const { return color; }
int World::answer_class_for_shape(int shape) const { return cfg_.num_colors + shape; }

int World::answer_word(int answer_class) const {
    if (answer_class < 0 || answer_class >= cfg_.num_answers())
        throw IndexError("answer class " + std::to_string(answer_class) + " outside [0, " +
                         std::to_string(cfg_.num_answers()) + ")");
    if (answer_class < cfg_.num_colors) return vocab::color_word(answer_class);
    return vocab::shape_word(answer_class - cfg_.num_colors);
}

std::vector<int> World::pick_positions(int count, SplitMix64& rng) const {
    std::vector<int> cells(static_cast<std::size_t>(cfg_.cells()));
    for (int i = 0; i < cfg_.cells(); ++i) cells[static_cast<std::size_t>(i)] = i;
    // Partial Fisher-Yates: the first `count` entries become distinct cells.
    for (int i = 0; i < count; ++i) {
        const auto j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg_.cells() - i)));
        std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(j)]);
    }
    cells.resize(static_cast<std::size_t>(count));
    return cells;
}

std::vector<int> World::caption_for(const std::vector<SceneObject>& objects) const {
    // Canonical order makes the caption a function of the attribute multiset.
    std::vector<SceneObject> sorted = objects;
    std::sort(sorted.begin(), sorted.end(), [](const SceneObject& a, const SceneObject& b) {
        return a.shape != b.shape ? a.shape < b.shape : a.color < b.color;
    });
    std::vector<int> caption;
    for (const auto& o : sorted) {
        caption.push_back(vocab::color_word(o.color));
        caption.push_back(vocab::shape_word(o.shape));
    }
    return caption;
}

TensorF World::render(const std::vector<SceneObject>& objects, const std::vector<int>& positions,
                      std::uint64_t sample_seed) const {
    TensorF patches({cfg_.cells(), cfg_.patch_width()});
    // Noise first, over every channel, independent of scene content.
    SplitMix64 noise(SplitMix64::derive(sample_seed, kNoiseStream));
    for (auto& v : patches.data()) v = static_cast<float>(noise.next_normal()) * cfg_.noise_std;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const int cell = positions[i];
        patches.at(cell, objects[i].shape) += 1.0f;
        patches.at(cell, cfg_.num_shapes + objects[i].color) += 1.0f;
        patches.at(cell, cfg_.num_shapes + cfg_.num_colors) += 1.0f;  // occupancy
    }
    return patches;
}

Sample World::make_sample(std::int64_t index) const {
    const std::uint64_t sample_seed =
        SplitMix64::derive(master_seed_, static_cast<std::uint64_t>(index));
    SplitMix64 rng(SplitMix64::derive(sample_seed, kSceneStream));

    Sample s;
    s.sample_seed = sample_seed;

    if (rng.next_double() < cfg_.ambiguous_fraction) {
        s.family = SceneFamily::two_distinct;
    } else {
        const auto pick = rng.next_below(3);
        s.family = pick == 0 ? SceneFamily::single
                             : (pick == 1 ? SceneFamily::same_color : SceneFamily::same_shape);
    }

    const auto color = [&] { return static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg_.num_colors))); };
    const auto shape = [&] { return static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg_.num_shapes))); };

    // ask_color: instruction "color of the <shape-word>", answered by the
    // color of the object(s) with that shape; ask_shape is the mirror image.
    const auto ask_color = [&](int identifier_shape, int answer_color) {
        s.instruction = {vocab::kColor, vocab::kOf, vocab::kThe, vocab::shape_word(identifier_shape)};
        s.answer = answer_class_for_color(answer_color);
    };
    const auto ask_shape = [&](int identifier_color, int answer_shape) {
        s.instruction = {vocab::kShape, vocab::kOf, vocab::kThe, vocab::color_word(identifier_color)};
        s.answer = answer_class_for_shape(answer_shape);
    };

    switch (s.family) {
        case SceneFamily::two_distinct: {
            const int c1 = color(), s1 = shape();
            const int c2 = distinct_other(c1, cfg_.num_colors, rng);
            const int s2 = distinct_other(s1, cfg_.num_shapes, rng);
            s.objects = {{c1, s1}, {c2, s2}};
            // Four valid queries, uniformly likely: each object's color by its
            // shape, each object's shape by its color.
            switch (rng.next_below(4)) {
                case 0: ask_color(s1, c1); break;
                case 1: ask_color(s2, c2); break;
                case 2: ask_shape(c1, s1); break;
                default: ask_shape(c2, s2); break;
            }
            s.ambiguous = true;  // the queried attribute always takes two values
            break;
        }
        case SceneFamily::single: {
            const int c1 = color(), s1 = shape();
            s.objects = {{c1, s1}};
            if (rng.next_below(2) == 0) ask_color(s1, c1);
            else ask_shape(c1, s1);
            s.ambiguous = false;
            break;
        }
        case SceneFamily::same_color: {
            const int c = color();
            const int s1 = shape();
            const int s2 = distinct_other(s1, cfg_.num_shapes, rng);
            s.objects = {{c, s1}, {c, s2}};
            // Only color queries are well-posed; either shape identifies an object.
            ask_color(rng.next_below(2) == 0 ? s1 : s2, c);
            s.ambiguous = false;
            break;
        }
        case SceneFamily::same_shape: {
            const int sh = shape();
            const int c1 = color();
            const int c2 = distinct_other(c1, cfg_.num_colors, rng);
            s.objects = {{c1, sh}, {c2, sh}};
            ask_shape(rng.next_below(2) == 0 ? c1 : c2, sh);
            s.ambiguous = false;
            break;
        }
    }

    s.positions = pick_positions(static_cast<int>(s.objects.size()), rng);
    s.caption = caption_for(s.objects);
    s.patches = render(s.objects, s.positions, sample_seed);
    return s;
}

ConfusablePair World::make_confusable_pair(std::int64_t index) const {
    if (cfg_.num_colors < 3 && cfg_.num_shapes < 3)
        throw ConfigError("confusable pairs need at least 3 colors or 3 shapes");
    const std::uint64_t pair_seed = SplitMix64::derive(
        SplitMix64::derive(master_seed_, kPairStream), static_cast<std::uint64_t>(index));
    SplitMix64 rng(SplitMix64::derive(pair_seed, kSceneStream));

    // Base scene: two objects differing in both attributes.
    const int c1 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg_.num_colors)));
    const int s1 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg_.num_shapes)));
    const int c2 = distinct_other(c1, cfg_.num_colors, rng);
    const int s2 = distinct_other(s1, cfg_.num_shapes, rng);

    const bool mutate_color = cfg_.num_colors >= 3 && (cfg_.num_shapes < 3 || rng.next_below(2) == 0);

    Sample a, b;
    a.family = b.family = SceneFamily::two_distinct;
    a.ambiguous = b.ambiguous = true;
    a.sample_seed = b.sample_seed = pair_seed;
    a.objects = {{c1, s1}, {c2, s2}};

    if (mutate_color) {
        // Change object 0's color; keep the pair in the two-distinct family.
        const int c1b = distinct_third(c1, c2, cfg_.num_colors, rng);
        b.objects = {{c1b, s1}, {c2, s2}};
        // Shared instruction probing the attribute that differs.
        a.instruction = b.instruction = {vocab::kColor, vocab::kOf, vocab::kThe, vocab::shape_word(s1)};
        a.answer = answer_class_for_color(c1);
        b.answer = answer_class_for_color(c1b);
    } else {
        const int s1b = distinct_third(s1, s2, cfg_.num_shapes, rng);
        b.objects = {{c1, s1b}, {c2, s2}};
        a.instruction = b.instruction = {vocab::kShape, vocab::kOf, vocab::kThe, vocab::color_word(c1)};
        a.answer = answer_class_for_shape(s1);
        b.answer = answer_class_for_shape(s1b);
    }

    a.positions = b.positions = pick_positions(2, rng);
    a.caption = caption_for(a.objects);
    b.caption = caption_for(b.objects);
    // Same layout and the same noise stream: the members differ only in the
    // one-hot channels of the mutated object.
    a.patches = render(a.objects, a.positions, pair_seed);
    b.patches = render(b.objects, b.positions, pair_seed);

    if (a.objects[0].color == b.objects[0].color && a.objects[0].shape == b.objects[0].shape &&
        a.objects[1].color == b.objects[1].color && a.objects[1].shape == b.objects[1].shape)
        throw InputError("confusable pair members are identical");
    return {std::move(a), std::move(b)};
}

}  // namespace emma
