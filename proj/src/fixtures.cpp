#include "voltron/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "voltron/envs.hpp"
#include "voltron/error.hpp"
#include "voltron/png_io.hpp"
#include "voltron/rng.hpp"

namespace fs = std::filesystem;

namespace voltron {

namespace {

struct ClipWriter {
    std::string root;
    std::vector<std::string> names;

    explicit ClipWriter(const std::string& dir) : root(dir) {
        fs::create_directories(dir);
    }

    std::string add(const std::string& name) {
        names.push_back(name);
        std::string path = root + "/" + name;
        fs::create_directories(path);
        return path;
    }

    void caption(const std::string& clip_path, const std::string& text) {
        std::ofstream f(clip_path + "/caption.txt", std::ios::trunc);
        f << text << "\n";
        if (!f) throw DataError("cannot write caption under '" + clip_path + "'");
    }

    void finish() const {
        std::ofstream manifest(root + "/manifest.txt", std::ios::trunc);
        for (const auto& n : names) manifest << n << "\n";
        if (!manifest) throw DataError("cannot write manifest under '" + root + "'");
    }
};

Image blank(int height, int width, uint8_t r, uint8_t g, uint8_t b) {
    Image img;
    img.height = height;
    img.width = width;
    img.rgb.resize(size_t(height) * width * 3);
    for (size_t p = 0; p < img.rgb.size(); p += 3) {
        img.rgb[p] = r;
        img.rgb[p + 1] = g;
        img.rgb[p + 2] = b;
    }
    return img;
}

void fill_disk(Image& img, double cx, double cy, double radius, uint8_t r, uint8_t g,
               uint8_t b) {
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= radius * radius) {
                size_t p = (size_t(y) * img.width + x) * 3;
                img.rgb[p] = r;
                img.rgb[p + 1] = g;
                img.rgb[p + 2] = b;
            }
        }
    }
}

void fill_rect(Image& img, int x0, int y0, int w, int h, uint8_t r, uint8_t g, uint8_t b) {
    for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) {
            size_t p = (size_t(y) * img.width + x) * 3;
            img.rgb[p] = r;
            img.rgb[p + 1] = g;
            img.rgb[p + 2] = b;
        }
    }
}

uint8_t quant(double v) {
    return uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct Palette {
    const char* name;
    double r, g, b;
};

constexpr Palette kPalette[8] = {
    {"red", 0.85, 0.15, 0.15},   {"green", 0.15, 0.80, 0.20},
    {"blue", 0.15, 0.25, 0.85},  {"gold", 0.90, 0.75, 0.10},
    {"teal", 0.10, 0.70, 0.70},  {"violet", 0.60, 0.20, 0.80},
    {"gray", 0.60, 0.60, 0.60},  {"rust", 0.70, 0.40, 0.15},
};

}  // namespace

void write_color_corpus(const std::string& dir, int clips, int frames_per_clip,
                        int height, int width, uint64_t seed) {
    if (clips < 1 || frames_per_clip < 1) throw ConfigError("corpus needs clips and frames");
    ClipWriter writer(dir);
    Rng rng = Rng::seeded(seed).child("color-corpus");
    for (int c = 0; c < clips; ++c) {
        const Palette& color = kPalette[c % 8];
        // A fixed per-clip texture phase keeps clips with repeated palette
        // colors visually distinct.
        int phase = int(rng.uniform_int(4));
        std::string clip = writer.add("clip" + std::to_string(c));
        writer.caption(clip, std::string("the ") + color.name + " checker field");
        for (int f = 0; f < frames_per_clip; ++f) {
            Image img = blank(height, width, 0, 0, 0);
            double ramp = 0.72 + 0.05 * f;  // global brightness per frame
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    int checker = ((x / 4 + y / 4 + phase) % 2);
                    double shade = 0.30 + 0.45 * checker + 0.25 * double(y) / (height - 1);
                    size_t p = (size_t(y) * width + x) * 3;
                    img.rgb[p] = quant(color.r * shade * ramp);
                    img.rgb[p + 1] = quant(color.g * shade * ramp);
                    img.rgb[p + 2] = quant(color.b * shade * ramp);
                }
            }
            write_png(clip + "/" + std::to_string(f) + ".png", img);
        }
    }
    writer.finish();
}

void write_progress_corpus(const std::string& dir, int frames_per_clip, int height,
                           int width) {
    if (frames_per_clip < 2) throw ConfigError("progress clips need at least two frames");
    ClipWriter writer(dir);
    for (int c = 0; c < 2; ++c) {
        std::string clip = writer.add(c == 0 ? "rightward" : "leftward");
        writer.caption(clip, c == 0 ? "the disk slides right" : "the disk slides left");
        for (int f = 0; f < frames_per_clip; ++f) {
            double progress = double(f) / (frames_per_clip - 1);
            double x = c == 0 ? progress : 1.0 - progress;
            Image img = blank(height, width, 20, 20, 28);
            // A disk spanning several patch regions, so its position survives
            // aggressive masking often enough to train on.
            double cx = (0.22 + 0.56 * x) * (width - 1);
            fill_disk(img, cx, 0.5 * (height - 1), 6.0, 235, 220, 60);
            write_png(clip + "/" + std::to_string(f) + ".png", img);
        }
    }
    writer.finish();
}

void write_grasp_fixture(const std::string& dir, int images, int height, int width,
                         uint64_t seed) {
    if (images < 1) throw ConfigError("grasp fixture needs images");
    ClipWriter writer(dir);
    Rng rng = Rng::seeded(seed).child("grasp-fixture");
    for (int i = 0; i < images; ++i) {
        double radius = 4.5 + 2.0 * rng.uniform();
        double margin = radius + 2.0;
        double cx = margin + (width - 1 - 2 * margin) * rng.uniform();
        double cy = margin + (height - 1 - 2 * margin) * rng.uniform();
        std::string clip = writer.add("img" + std::to_string(i));
        writer.caption(clip, "a bright disk on a dark field");

        // The rim is drawn as a distinct outline so every class is readable
        // from pixel appearance alone, not just from geometry.
        Image img = blank(height, width, 22, 22, 26);
        fill_disk(img, cx, cy, radius + 1.5, 150, 82, 42);
        fill_disk(img, cx, cy, radius - 1.5, 235, 215, 70);
        write_png(clip + "/0.png", img);

        Image labels = blank(height, width, 0, 0, 0);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                double d = std::hypot(x - cx, y - cy);
                uint8_t v = 0;
                if (d <= radius - 1.5) {
                    v = 1;  // graspable interior
                } else if (d <= radius + 1.5) {
                    v = 2;  // non-graspable rim
                }
                size_t p = (size_t(y) * width + x) * 3;
                labels.rgb[p] = labels.rgb[p + 1] = labels.rgb[p + 2] = v;
            }
        }
        write_png(clip + "/labels.png", labels);
    }
    writer.finish();
}

void write_refer_fixture(const std::string& dir, int base_images, int height,
                         int width, uint64_t seed) {
    if (base_images < 1) throw ConfigError("refer fixture needs images");
    if (height % 4 != 0 || width % 4 != 0) {
        throw ConfigError("refer fixture uses a 4x4 cell layout");
    }
    const int cell_h = height / 4, cell_w = width / 4;
    ClipWriter writer(dir);
    Rng rng = Rng::seeded(seed).child("refer-fixture");
    for (int i = 0; i < base_images; ++i) {
        // Two far-apart cells so the midpoint box overlaps neither target.
        int cell_a = 0, cell_b = 0;
        while (true) {
            cell_a = int(rng.uniform_int(16));
            cell_b = int(rng.uniform_int(16));
            int ay = cell_a / 4, ax = cell_a % 4, by = cell_b / 4, bx = cell_b % 4;
            if (std::abs(ay - by) + std::abs(ax - bx) >= 2) break;
        }
        Image img = blank(height, width, 18, 18, 22);
        auto draw_cell = [&](int cell, uint8_t r, uint8_t g, uint8_t b) {
            fill_rect(img, (cell % 4) * cell_w, (cell / 4) * cell_h, cell_w, cell_h, r, g, b);
        };
        draw_cell(cell_a, 220, 40, 40);   // red square
        draw_cell(cell_b, 40, 200, 60);   // green square
        for (int target = 0; target < 2; ++target) {
            int cell = target == 0 ? cell_a : cell_b;
            std::string clip =
                writer.add("img" + std::to_string(i) + (target == 0 ? "_red" : "_green"));
            writer.caption(clip, target == 0 ? "find the red square" : "find the green square");
            write_png(clip + "/0.png", img);
            std::ofstream box(clip + "/box.txt", std::ios::trunc);
            box << (cell % 4) * 0.25 << " " << (cell / 4) * 0.25 << " 0.25 0.25\n";
            if (!box) throw DataError("cannot write box file under '" + clip + "'");
        }
    }
    writer.finish();
}

namespace {

void write_demo_corpus(const std::string& dir, const std::vector<Demo>& demos) {
    ClipWriter writer(dir);
    for (size_t e = 0; e < demos.size(); ++e) {
        const Demo& d = demos[e];
        std::string clip = writer.add("episode" + std::to_string(e));
        writer.caption(clip, d.utterance);
        for (size_t f = 0; f < d.steps.size(); ++f) {
            Image img;
            img.height = d.height;
            img.width = d.width;
            img.rgb.resize(d.steps[f].frame.size());
            for (size_t p = 0; p < img.rgb.size(); ++p) img.rgb[p] = quant(d.steps[f].frame[p]);
            write_png(clip + "/" + std::to_string(f) + ".png", img);
        }
    }
    writer.finish();
}

}  // namespace

void write_point_mass_corpus(const std::string& dir, int clips, uint64_t seed) {
    PointMassEnv env;
    write_demo_corpus(dir, collect_point_mass_demos(env, clips, seed));
}

void write_two_goal_corpus(const std::string& dir, int clips, uint64_t seed) {
    TwoGoalEnv env;
    write_demo_corpus(dir, collect_two_goal_demos(env, clips, seed));
}

}  // namespace voltron
