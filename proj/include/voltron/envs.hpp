#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "voltron/adaptation.hpp"
#include "voltron/rng.hpp"

namespace voltron {

// Maps one observation (frame, proprioception, instruction) to an action.
using Policy = std::function<std::vector<double>(const std::vector<double>& frame,
                                                 const std::vector<double>& proprio,
                                                 const std::string& utterance)>;

// 2-DoF point mass on the unit square. The goal position appears only in the
// rendered frame (red disk); proprioception is the agent position. Dynamics
// are exact: p += clamp(a, +-max_action), clamped to the square.
struct PointMassState {
    double px = 0.5, py = 0.5;
    double gx = 0.5, gy = 0.5;
    int t = 0;
};

class PointMassEnv {
  public:
    int height = 32, width = 32;
    int max_steps = 40;
    double reach_radius = 0.08;
    double max_action = 0.1;

    PointMassState reset(Rng& rng) const;
    std::vector<double> render(const PointMassState& s) const;  // H*W*3 in [0,1]
    std::vector<double> proprio(const PointMassState& s) const;
    std::vector<double> expert_action(const PointMassState& s) const;
    void step(PointMassState& s, const std::vector<double>& action) const;
    bool reached(const PointMassState& s) const;

    static constexpr const char* kUtterance = "reach the marked target";
};

std::vector<Demo> collect_point_mass_demos(const PointMassEnv& env, int episodes,
                                           uint64_t seed);
// Success rate over `episodes` deterministic rollouts (per-episode child rng).
double evaluate_point_mass(const PointMassEnv& env, const Policy& policy, int episodes,
                           uint64_t seed);

// Two visually identical goals, left and right; the instruction names which
// one counts. Success requires reaching the instructed goal.
struct TwoGoalState {
    double px = 0.5, py = 0.5;
    int goal = 0;  // 0 left, 1 right
    int t = 0;
};

class TwoGoalEnv {
  public:
    int height = 32, width = 32;
    int max_steps = 40;
    double reach_radius = 0.08;
    double max_action = 0.1;
    double left_x = 0.15, right_x = 0.85, goal_y = 0.5;

    TwoGoalState reset(Rng& rng) const;
    std::vector<double> render(const TwoGoalState& s) const;
    std::vector<double> proprio(const TwoGoalState& s) const;
    std::vector<double> expert_action(const TwoGoalState& s) const;
    void step(TwoGoalState& s, const std::vector<double>& action) const;
    bool reached(const TwoGoalState& s) const;  // at the instructed goal
    bool at_wrong_goal(const TwoGoalState& s) const;

    std::string instruction(int goal) const;
};

std::vector<Demo> collect_two_goal_demos(const TwoGoalEnv& env, int episodes,
                                         uint64_t seed);
double evaluate_two_goal(const TwoGoalEnv& env, const Policy& policy, int episodes,
                         uint64_t seed);

}  // namespace voltron
