#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "emma/world.hpp"

using namespace emma;

namespace {

World desk_world(std::uint64_t seed = 7) { return World(WorldConfig{}, seed); }

// The valid (instruction, answer) pairs for a two-distinct-attribute scene.
std::set<int> valid_answers_two_distinct(const World& w, const Sample& s) {
    const auto& o = s.objects;
    return {w.answer_class_for_color(o[0].color), w.answer_class_for_color(o[1].color),
            w.answer_class_for_shape(o[0].shape), w.answer_class_for_shape(o[1].shape)};
}

}  // namespace

TEST_CASE("config validation") {
    WorldConfig bad;
    bad.num_colors = 1;
    CHECK_THROWS_AS(World(bad, 1), ConfigError);
    bad = WorldConfig{};
    bad.ambiguous_fraction = 1.5;
    CHECK_THROWS_AS(World(bad, 1), ConfigError);
    bad = WorldConfig{};
    bad.noise_std = -0.1f;
    CHECK_THROWS_AS(World(bad, 1), ConfigError);
}

TEST_CASE("samples are a pure function of seed and index") {
    auto w1 = desk_world(123);
    auto w2 = desk_world(123);
    auto w3 = desk_world(124);
    for (int i = 0; i < 20; ++i) {
        auto a = w1.make_sample(i);
        auto b = w2.make_sample(i);
        CHECK(a.instruction == b.instruction);
        CHECK(a.caption == b.caption);
        CHECK(a.answer == b.answer);
        CHECK(a.positions == b.positions);
        REQUIRE(a.patches.data().size() == b.patches.data().size());
        for (std::size_t j = 0; j < a.patches.data().size(); ++j)
            CHECK(a.patches.data()[j] == b.patches.data()[j]);
    }
    bool any_diff = false;
    for (int i = 0; i < 20; ++i)
        any_diff |= w1.make_sample(i).answer != w3.make_sample(i).answer;
    CHECK(any_diff);
}

TEST_CASE("every sample is structurally valid") {
    auto w = desk_world();
    const auto& cfg = w.config();
    for (int i = 0; i < 500; ++i) {
        auto s = w.make_sample(i);
        REQUIRE(s.instruction.size() == 4);
        CHECK((s.instruction[0] == vocab::kColor || s.instruction[0] == vocab::kShape));
        CHECK(s.instruction[1] == vocab::kOf);
        CHECK(s.instruction[2] == vocab::kThe);
        CHECK(s.instruction[3] >= vocab::kColorWord0);
        CHECK(s.instruction[3] < vocab::kShapeWord0 + cfg.num_shapes);
        CHECK(s.answer >= 0);
        CHECK(s.answer < cfg.num_answers());
        CHECK(s.caption.size() == 2 * s.objects.size());
        CHECK(s.patches.rows() == cfg.cells());
        CHECK(s.patches.cols() == cfg.patch_width());
        // Positions are distinct cells.
        std::set<int> pos(s.positions.begin(), s.positions.end());
        CHECK(pos.size() == s.objects.size());

        // The instruction identifies exactly one attribute bundle and the
        // recorded answer agrees with the scene.
        const bool ask_color = s.instruction[0] == vocab::kColor;
        const int ident = s.instruction[3];
        std::set<int> answers;
        for (const auto& o : s.objects) {
            if (ask_color && vocab::shape_word(o.shape) == ident)
                answers.insert(w.answer_class_for_color(o.color));
            if (!ask_color && vocab::color_word(o.color) == ident)
                answers.insert(w.answer_class_for_shape(o.shape));
        }
        REQUIRE(answers.size() == 1);  // well-posed query
        CHECK(*answers.begin() == s.answer);

        // Ambiguity flag: the queried attribute takes >= 2 values in the scene.
        std::set<int> queried;
        for (const auto& o : s.objects) queried.insert(ask_color ? o.color : o.shape);
        CHECK(s.ambiguous == (queried.size() >= 2));
        CHECK(s.ambiguous == (s.family == SceneFamily::two_distinct));
    }
}

TEST_CASE("two-distinct scenes admit four distinct answers drawn uniformly") {
    auto w = desk_world(99);
    std::map<int, int> slot_counts;  // which of the four valid answers was asked
    std::map<int, int> answer_counts;
    int total = 0;
    for (int i = 0; i < 8000; ++i) {
        auto s = w.make_sample(i);
        if (s.family != SceneFamily::two_distinct) continue;
        auto valid = valid_answers_two_distinct(w, s);
        REQUIRE(valid.size() == 4);  // image-only prediction is a 4-way guess
        CHECK(valid.count(s.answer) == 1);
        int slot = 0;
        for (int v : valid) {
            if (v == s.answer) break;
            ++slot;
        }
        ++slot_counts[slot];
        ++answer_counts[s.answer];
        ++total;
    }
    CHECK(total > 3000);
    for (const auto& [slot, count] : slot_counts) {
        (void)slot;
        const double frac = static_cast<double>(count) / total;
        CHECK(frac == doctest::Approx(0.25).epsilon(0.15));
    }
    // Answer marginal close to uniform over all 8 classes.
    for (const auto& [cls, count] : answer_counts) {
        (void)cls;
        const double frac = static_cast<double>(count) / total;
        CHECK(frac == doctest::Approx(0.125).epsilon(0.35));
    }
}

TEST_CASE("unambiguous families restrict queries as designed") {
    auto w = desk_world(5);
    int singles = 0, same_color = 0, same_shape = 0;
    for (int i = 0; i < 4000; ++i) {
        auto s = w.make_sample(i);
        switch (s.family) {
            case SceneFamily::single:
                ++singles;
                CHECK(s.objects.size() == 1);
                break;
            case SceneFamily::same_color:
                ++same_color;
                REQUIRE(s.objects.size() == 2);
                CHECK(s.objects[0].color == s.objects[1].color);
                CHECK(s.objects[0].shape != s.objects[1].shape);
                CHECK(s.instruction[0] == vocab::kColor);
                break;
            case SceneFamily::same_shape:
                ++same_shape;
                REQUIRE(s.objects.size() == 2);
                CHECK(s.objects[0].shape == s.objects[1].shape);
                CHECK(s.objects[0].color != s.objects[1].color);
                CHECK(s.instruction[0] == vocab::kShape);
                break;
            case SceneFamily::two_distinct:
                break;
        }
    }
    CHECK(singles > 300);
    CHECK(same_color > 300);
    CHECK(same_shape > 300);
}

TEST_CASE("renders put one-hots plus occupancy on object cells and noise elsewhere") {
    WorldConfig cfg;
    cfg.noise_std = 0.0f;  // exact channel checks
    World w(cfg, 11);
    auto s = w.make_sample(3);
    const int occ = cfg.num_shapes + cfg.num_colors;
    std::set<int> object_cells(s.positions.begin(), s.positions.end());
    for (int cell = 0; cell < cfg.cells(); ++cell) {
        if (object_cells.count(cell)) continue;
        for (int ch = 0; ch < cfg.patch_width(); ++ch) CHECK(s.patches.at(cell, ch) == 0.0f);
    }
    for (std::size_t k = 0; k < s.objects.size(); ++k) {
        const int cell = s.positions[k];
        CHECK(s.patches.at(cell, s.objects[k].shape) == 1.0f);
        CHECK(s.patches.at(cell, cfg.num_shapes + s.objects[k].color) == 1.0f);
        CHECK(s.patches.at(cell, occ) == 1.0f);
        // Trailing channels carry no scene content.
        for (int ch = occ + 1; ch < cfg.patch_width(); ++ch) CHECK(s.patches.at(cell, ch) == 0.0f);
    }
}

TEST_CASE("captions are canonical over the attribute multiset") {
    auto w = desk_world(21);
    // Find two-distinct samples with identical attribute multisets and check
    // their captions agree even though object draw order may differ.
    std::map<std::set<std::pair<int, int>>, std::vector<int>> seen;
    int matched = 0;
    for (int i = 0; i < 4000 && matched < 25; ++i) {
        auto s = w.make_sample(i);
        if (s.objects.size() != 2) continue;
        std::set<std::pair<int, int>> key{{s.objects[0].color, s.objects[0].shape},
                                          {s.objects[1].color, s.objects[1].shape}};
        auto [it, inserted] = seen.try_emplace(key, s.caption);
        if (!inserted) {
            CHECK(it->second == s.caption);
            ++matched;
        }
    }
    CHECK(matched >= 25);
}

TEST_CASE("confusable pairs differ only in the mutated one-hot channels") {
    auto w = desk_world(31);
    for (int i = 0; i < 64; ++i) {
        auto pair = w.make_confusable_pair(i);
        const auto& a = pair.first;
        const auto& b = pair.second;
        CHECK(a.instruction == b.instruction);
        CHECK(a.answer != b.answer);
        CHECK(a.positions == b.positions);
        CHECK(a.family == SceneFamily::two_distinct);
        CHECK(b.family == SceneFamily::two_distinct);
        // Both members keep both attributes distinct within the scene.
        CHECK(a.objects[0].color != a.objects[1].color);
        CHECK(a.objects[0].shape != a.objects[1].shape);
        CHECK(b.objects[0].color != b.objects[1].color);
        CHECK(b.objects[0].shape != b.objects[1].shape);

        // Shared noise: the pixel difference is exactly two one-hot entries
        // at the mutated object's cell.
        int diff_entries = 0;
        for (int r = 0; r < a.patches.rows(); ++r)
            for (int c = 0; c < a.patches.cols(); ++c)
                if (a.patches.at(r, c) != b.patches.at(r, c)) {
                    ++diff_entries;
                    CHECK(r == a.positions[0]);
                    CHECK(std::abs(a.patches.at(r, c) - b.patches.at(r, c)) ==
                          doctest::Approx(1.0f));
                }
        CHECK(diff_entries == 2);
    }
    // Deterministic regeneration.
    auto p1 = w.make_confusable_pair(3);
    auto p2 = w.make_confusable_pair(3);
    CHECK(p1.first.answer == p2.first.answer);
    CHECK(p1.second.instruction == p2.second.instruction);
}

TEST_CASE("pairs are impossible when no third attribute value exists") {
    WorldConfig cfg;
    cfg.num_colors = 2;
    cfg.num_shapes = 2;
    World w(cfg, 1);
    CHECK_THROWS_AS(w.make_confusable_pair(0), ConfigError);
}

TEST_CASE("answer words name the answer classes") {
    auto w = desk_world();
    CHECK(w.answer_word(0) == vocab::color_word(0));
    CHECK(w.answer_word(3) == vocab::color_word(3));
    CHECK(w.answer_word(4) == vocab::shape_word(0));
    CHECK(w.answer_word(7) == vocab::shape_word(3));
    CHECK_THROWS_AS(w.answer_word(8), IndexError);
    CHECK(vocab::word_text(vocab::kColor) == "color");
    CHECK(vocab::word_text(vocab::shape_word(0)) == "circle");
}
