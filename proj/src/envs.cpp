#include "voltron/envs.hpp"

#include <algorithm>
#include <cmath>

#include "voltron/error.hpp"

namespace voltron {

namespace {

// Frames are drawn into an 8-bit buffer and divided back out so that demo
// serialization (which stores 8-bit RGB) round-trips bit-exactly.
struct Canvas {
    int height, width;
    std::vector<uint8_t> rgb;

    Canvas(int h, int w, uint8_t r, uint8_t g, uint8_t b)
        : height(h), width(w), rgb(size_t(h) * w * 3) {
        for (size_t p = 0; p < rgb.size(); p += 3) {
            rgb[p] = r;
            rgb[p + 1] = g;
            rgb[p + 2] = b;
        }
    }

    void disk(double cx, double cy, double radius, uint8_t r, uint8_t g, uint8_t b) {
        double px = cx * (width - 1), py = cy * (height - 1);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                double dx = x - px, dy = y - py;
                if (dx * dx + dy * dy <= radius * radius) {
                    size_t p = (size_t(y) * width + x) * 3;
                    rgb[p] = r;
                    rgb[p + 1] = g;
                    rgb[p + 2] = b;
                }
            }
        }
    }

    std::vector<double> unit() const {
        std::vector<double> out(rgb.size());
        for (size_t i = 0; i < rgb.size(); ++i) out[i] = rgb[i] / 255.0;
        return out;
    }
};

double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

std::vector<double> toward(double px, double py, double tx, double ty, double max_action) {
    return {std::clamp(tx - px, -max_action, max_action),
            std::clamp(ty - py, -max_action, max_action)};
}

}  // namespace

PointMassState PointMassEnv::reset(Rng& rng) const {
    PointMassState s;
    s.px = 0.35 + 0.3 * rng.uniform();
    s.py = 0.35 + 0.3 * rng.uniform();
    do {
        s.gx = 0.15 + 0.7 * rng.uniform();
        s.gy = 0.15 + 0.7 * rng.uniform();
    } while (std::hypot(s.px - s.gx, s.py - s.gy) <= reach_radius + 0.07);
    return s;
}

std::vector<double> PointMassEnv::render(const PointMassState& s) const {
    Canvas c(height, width, 26, 26, 26);
    c.disk(s.gx, s.gy, 3.5, 230, 40, 40);
    c.disk(s.px, s.py, 2.5, 240, 240, 240);
    return c.unit();
}

std::vector<double> PointMassEnv::proprio(const PointMassState& s) const {
    return {s.px, s.py};
}

std::vector<double> PointMassEnv::expert_action(const PointMassState& s) const {
    return toward(s.px, s.py, s.gx, s.gy, max_action);
}

void PointMassEnv::step(PointMassState& s, const std::vector<double>& action) const {
    if (action.size() != 2) throw DataError("point-mass actions have two components");
    s.px = clamp_unit(s.px + std::clamp(action[0], -max_action, max_action));
    s.py = clamp_unit(s.py + std::clamp(action[1], -max_action, max_action));
    ++s.t;
}

bool PointMassEnv::reached(const PointMassState& s) const {
    return std::hypot(s.px - s.gx, s.py - s.gy) <= reach_radius;
}

std::vector<Demo> collect_point_mass_demos(const PointMassEnv& env, int episodes,
                                           uint64_t seed) {
    std::vector<Demo> demos;
    for (int e = 0; e < episodes; ++e) {
        Rng rng = Rng::seeded(seed).child("rollout", uint64_t(e));
        PointMassState s = env.reset(rng);
        Demo d;
        d.height = env.height;
        d.width = env.width;
        d.utterance = PointMassEnv::kUtterance;
        while (!env.reached(s) && s.t < env.max_steps) {
            DemoStep step;
            step.frame = env.render(s);
            step.proprio = env.proprio(s);
            step.action = env.expert_action(s);
            env.step(s, step.action);
            d.steps.push_back(std::move(step));
        }
        demos.push_back(std::move(d));
    }
    return demos;
}

double evaluate_point_mass(const PointMassEnv& env, const Policy& policy, int episodes,
                           uint64_t seed) {
    int successes = 0;
    for (int e = 0; e < episodes; ++e) {
        Rng rng = Rng::seeded(seed).child("rollout", uint64_t(e));
        PointMassState s = env.reset(rng);
        while (!env.reached(s) && s.t < env.max_steps) {
            env.step(s, policy(env.render(s), env.proprio(s), PointMassEnv::kUtterance));
        }
        successes += env.reached(s);
    }
    return double(successes) / episodes;
}

TwoGoalState TwoGoalEnv::reset(Rng& rng) const {
    TwoGoalState s;
    s.px = 0.4 + 0.2 * rng.uniform();
    s.py = 0.3 + 0.4 * rng.uniform();
    s.goal = int(rng.uniform_int(2));
    return s;
}

std::vector<double> TwoGoalEnv::render(const TwoGoalState& s) const {
    Canvas c(height, width, 26, 26, 26);
    c.disk(left_x, goal_y, 3.5, 60, 90, 230);
    c.disk(right_x, goal_y, 3.5, 60, 90, 230);
    c.disk(s.px, s.py, 2.5, 240, 240, 240);
    return c.unit();
}

std::vector<double> TwoGoalEnv::proprio(const TwoGoalState& s) const {
    return {s.px, s.py};
}

std::vector<double> TwoGoalEnv::expert_action(const TwoGoalState& s) const {
    double tx = s.goal == 0 ? left_x : right_x;
    return toward(s.px, s.py, tx, goal_y, max_action);
}

void TwoGoalEnv::step(TwoGoalState& s, const std::vector<double>& action) const {
    if (action.size() != 2) throw DataError("two-goal actions have two components");
    s.px = clamp_unit(s.px + std::clamp(action[0], -max_action, max_action));
    s.py = clamp_unit(s.py + std::clamp(action[1], -max_action, max_action));
    ++s.t;
}

bool TwoGoalEnv::reached(const TwoGoalState& s) const {
    double tx = s.goal == 0 ? left_x : right_x;
    return std::hypot(s.px - tx, s.py - goal_y) <= reach_radius;
}

bool TwoGoalEnv::at_wrong_goal(const TwoGoalState& s) const {
    double wx = s.goal == 0 ? right_x : left_x;
    return std::hypot(s.px - wx, s.py - goal_y) <= reach_radius;
}

std::string TwoGoalEnv::instruction(int goal) const {
    return goal == 0 ? "reach the left target" : "reach the right target";
}

std::vector<Demo> collect_two_goal_demos(const TwoGoalEnv& env, int episodes,
                                         uint64_t seed) {
    std::vector<Demo> demos;
    for (int e = 0; e < episodes; ++e) {
        Rng rng = Rng::seeded(seed).child("rollout", uint64_t(e));
        TwoGoalState s = env.reset(rng);
        Demo d;
        d.height = env.height;
        d.width = env.width;
        d.utterance = env.instruction(s.goal);
        while (!env.reached(s) && s.t < env.max_steps) {
            DemoStep step;
            step.frame = env.render(s);
            step.proprio = env.proprio(s);
            step.action = env.expert_action(s);
            env.step(s, step.action);
            d.steps.push_back(std::move(step));
        }
        demos.push_back(std::move(d));
    }
    return demos;
}

double evaluate_two_goal(const TwoGoalEnv& env, const Policy& policy, int episodes,
                         uint64_t seed) {
    int successes = 0;
    for (int e = 0; e < episodes; ++e) {
        Rng rng = Rng::seeded(seed).child("rollout", uint64_t(e));
        TwoGoalState s = env.reset(rng);
        std::string utterance = env.instruction(s.goal);
        while (!env.reached(s) && !env.at_wrong_goal(s) && s.t < env.max_steps) {
            env.step(s, policy(env.render(s), env.proprio(s), utterance));
        }
        successes += env.reached(s);
    }
    return double(successes) / episodes;
}

}  // namespace voltron
