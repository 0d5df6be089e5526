#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emma/errors.hpp"
#include "emma/rng.hpp"
#include "emma/tensor.hpp"

namespace emma {

// Fixed vocabulary layout shared by instructions, captions, and answers.
namespace vocab {
constexpr int kPad = 0;
constexpr int kColor = 1;   // query word "color"
constexpr int kShape = 2;   // query word "shape"
constexpr int kOf = 3;
constexpr int kThe = 4;
constexpr int kColorWord0 = 5;  // red, green, blue, yellow
constexpr int kShapeWord0 = 9;  // circle, square, triangle, star

int color_word(int color);
int shape_word(int shape);
std::string word_text(int id);
}  // namespace vocab

struct WorldConfig {
    int grid_h = 4;
    int grid_w = 4;
    int num_colors = 4;
    int num_shapes = 4;
    float noise_std = 0.02f;
    double ambiguous_fraction = 0.5;

    int cells() const { return grid_h * grid_w; }
    // shape one-hots, color one-hots, occupancy, then three noise-only channels.
    int patch_width() const { return num_shapes + num_colors + 4; }
    int num_answers() const { return num_colors + num_shapes; }

    void validate() const;
};

struct SceneObject {
    int color = 0;
    int shape = 0;
};

// Scene families:
//   A  two objects differing in both attributes (queries are ambiguous
//      without the instruction: four equally likely answers per image)
//   1  a single object
//   2  two objects sharing their color (color queries only)
//   3  two objects sharing their shape (shape queries only)
enum class SceneFamily : char { two_distinct = 'A', single = '1', same_color = '2', same_shape = '3' };

struct Sample {
    TensorF patches;                 // [cells x patch_width]
    std::vector<int> instruction;    // query-word, "of", "the", identifier-word
    std::vector<int> caption;        // color-word, shape-word per object, sorted
    int answer = 0;                  // class id: colors first, then shapes
    bool ambiguous = false;          // queried attribute takes >= 2 values in the scene
    SceneFamily family = SceneFamily::two_distinct;
    std::vector<SceneObject> objects;
    std::vector<int> positions;      // grid cell per object
    std::uint64_t sample_seed = 0;
};

// Two scenes identical up to one attribute of one object, rendered with the
// same noise and layout, probed by the same instruction whose answer differs.
struct ConfusablePair {
    Sample first;
    Sample second;
};

// Deterministic generator: sample i under master seed s is a pure function
// of (config, s, i).
class World {
public:
    World(WorldConfig config, std::uint64_t master_seed);

    const WorldConfig& config() const { return cfg_; }
    std::uint64_t master_seed() const { return master_seed_; }

    Sample make_sample(std::int64_t index) const;
    ConfusablePair make_confusable_pair(std::int64_t index) const;

    int answer_class_for_color(int color) const;
    int answer_class_for_shape(int shape) const;
    // Vocabulary word naming an answer class; feeds the text encoder in the
    // mutual-information analysis.
    int answer_word(int answer_class) const;

private:
    TensorF render(const std::vector<SceneObject>& objects, const std::vector<int>& positions,
                   std::uint64_t sample_seed) const;
    std::vector<int> pick_positions(int count, SplitMix64& rng) const;
    std::vector<int> caption_for(const std::vector<SceneObject>& objects) const;

    WorldConfig cfg_;
    std::uint64_t master_seed_;
};

}  // namespace emma
