#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fdwm/geometry.hpp"

namespace fdwm {

// Planar end-effector displacement, meters, clipped to +/- a_max per axis.
struct Action {
    double dx = 0.0, dy = 0.0;
};

struct Block {
    uint16_t id = 0;
    Pose pose;          // center of the box, rotation about the camera z axis
    double hx = 0.04, hy = 0.04;  // half extents, meters
    double height = 0.05;
    std::array<float, 3> color{0.8f, 0.2f, 0.2f};
};

// The camera frame doubles as the world frame: origin at the pinhole, z
// pointing down at the table plane z = camera_height.
struct WorldState {
    Pose ee_pose;  // center of the end-effector disc
    double ee_radius = 0.035;
    double ee_height = 0.06;
    std::vector<Block> blocks;
    std::array<double, 4> bounds{-0.3, 0.3, -0.3, 0.3};  // x_min,x_max,y_min,y_max
    int step_index = 0;
    uint16_t ee_id() const { return static_cast<uint16_t>(blocks.size() + 1); }
};

struct EnvConfig {
    int h = 32, w = 32;
    CameraIntrinsics intrinsics{40.0, 40.0, 16.0, 16.0};
    double camera_height = 1.0;
    int n_blocks = 2;
    double a_max = 0.05;
    uint64_t seed = 0;

    double ee_radius = 0.035;
    double ee_height = 0.06;
    double block_half_min = 0.045, block_half_max = 0.065;
    double block_height_min = 0.04, block_height_max = 0.08;
    double bounds_fraction = 0.8;  // workspace inset inside the frustum
    bool rotation_mode = false;
    double rotation_gain = 0.35;
    std::array<float, 3> table_color{0.82f, 0.82f, 0.84f};
    std::array<float, 3> ee_color{0.25f, 0.25f, 0.3f};

    std::array<double, 4> workspace_bounds() const;
    void validate() const;
};

// Deterministic in (config, seed); blocks placed by rejection sampling
// without overlap, end-effector at a random free spot. Throws after 1000
// rejections (workspace too crowded).
WorldState reset(const EnvConfig& config, uint64_t seed);

// Quasi-static transition: the end-effector translates by the clipped
// action, penetrations resolve along minimum-translation vectors iterated to
// a fixed point, blocks clamp at the workspace walls, and the end-effector
// stops at contact when a block cannot yield.
WorldState step(const WorldState& state, const EnvConfig& config, const Action& action);

struct RenderOutput {
    RgbdFrame frame;
    std::vector<uint16_t> object_ids;  // 0 = table
};

RenderOutput render_full(const WorldState& state, const EnvConfig& config);
RgbdFrame render(const WorldState& state, const EnvConfig& config);

std::map<uint16_t, Pose> pose_map(const WorldState& state);

// Exact per-pixel flow from the rigid transforms of both states, with an
// occlusion mask from a visibility test against the t+1 render.
SceneFlowField gt_flow(const WorldState& state_t, const WorldState& state_t1,
                       const RgbdFrame& frame_t, const EnvConfig& config);

// Pushes the block farthest from its goal pose toward the goal, standing
// behind it first; adds small seeded exploration noise.
Action scripted_policy(const WorldState& state, const WorldState& goal, const EnvConfig& config,
                       uint64_t seed);

struct DatasetSummary {
    int episodes = 0;
    int64_t samples = 0;
    std::string manifest_path;
};

// Writes one binary file per episode plus a manifest; splits 90/5/5 by
// episode. Partial files are removed on failure.
DatasetSummary generate_dataset(const EnvConfig& config, int episodes, int steps,
                                const std::string& out_dir, uint64_t seed);

}  // namespace fdwm
