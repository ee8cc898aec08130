#pragma once

#include <cstdint>
#include <string>

namespace voltron {

// Deterministic synthetic datasets written in the corpus directory layout
// (manifest.txt + per-clip folders of numbered PNG frames + caption.txt).
// Every generator is a pure function of its arguments.

// Textured color fields: per-clip base color + checker/gradient texture whose
// caption names the color; frames differ by a global brightness ramp.
void write_color_corpus(const std::string& dir, int clips, int frames_per_clip,
                        int height, int width, uint64_t seed);

// Two opposite-motion clips (a disk sliding right vs left) with captions
// naming the direction; for intent-scoring fixtures.
void write_progress_corpus(const std::string& dir, int frames_per_clip, int height,
                           int width);

// Bright disk on a dark field plus labels.png per clip (0 background,
// 1 graspable disk interior, 2 non-graspable rim).
void write_grasp_fixture(const std::string& dir, int images, int height, int width,
                         uint64_t seed);

// Two distinctly colored patch-aligned squares per image; each image yields
// two clips whose captions name opposite targets and whose box.txt marks the
// named square. The box is identifiable from the caption alone.
void write_refer_fixture(const std::string& dir, int base_images, int height,
                         int width, uint64_t seed);

// Expert point-mass episodes rendered as clips (constant caption).
void write_point_mass_corpus(const std::string& dir, int clips, uint64_t seed);

// Expert two-goal episodes, captioned with the episode's instruction.
void write_two_goal_corpus(const std::string& dir, int clips, uint64_t seed);

}  // namespace voltron
