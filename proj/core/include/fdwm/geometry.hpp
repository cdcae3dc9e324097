#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

namespace fdwm {

struct CameraIntrinsics {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    void validate() const;
};

// 4x4 homogeneous rigid transform, row-major, meters.
struct Pose {
    std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

    static Pose identity() { return Pose{}; }
    static Pose translation(double x, double y, double z);
    // rotation about the z axis through a given center point
    static Pose rot_z(double theta, double cx = 0.0, double cy = 0.0);

    Pose mul(const Pose& o) const;
    Pose inverse() const;  // uses R^T, valid for rigid transforms
    std::array<double, 3> apply(const std::array<double, 3>& p) const;
    std::array<double, 3> translation_part() const { return {m[3], m[7], m[11]}; }

    // bottom row (0,0,0,1), R orthonormal within 1e-9, det(R) = +1
    void validate() const;
};

// Color in [0,1], metric depth, per-pixel validity. Row-major, u = column,
// v = row, pixel centers at integer coordinates.
struct RgbdFrame {
    int h = 0, w = 0;
    std::vector<float> rgb;        // h*w*3
    std::vector<float> depth;      // h*w
    std::vector<uint8_t> validity;  // h*w

    static RgbdFrame blank(int h, int w);
    float& rgb_at(int v, int u, int c) { return rgb[(static_cast<size_t>(v) * w + u) * 3 + c]; }
    float rgb_at(int v, int u, int c) const {
        return rgb[(static_cast<size_t>(v) * w + u) * 3 + c];
    }
    float& depth_at(int v, int u) { return depth[static_cast<size_t>(v) * w + u]; }
    float depth_at(int v, int u) const { return depth[static_cast<size_t>(v) * w + u]; }
    bool valid_at(int v, int u) const { return validity[static_cast<size_t>(v) * w + u] != 0; }
};

// Camera-frame per-pixel 3D displacement t -> t+1.
struct SceneFlowField {
    int h = 0, w = 0;
    std::vector<float> flow;        // h*w*3, meters
    std::vector<uint8_t> occlusion;  // surface not visible at t+1

    static SceneFlowField zero(int h, int w);
    float at(int v, int u, int c) const { return flow[(static_cast<size_t>(v) * w + u) * 3 + c]; }
    float& at(int v, int u, int c) { return flow[(static_cast<size_t>(v) * w + u) * 3 + c]; }
};

// [x,y,z] = D(u,v) * K^-1 * [u,v,1]
std::array<double, 3> unproject_pixel(int u, int v, double depth, const CameraIntrinsics& k);

// All pixels of a depth map; invalid pixels produce (0,0,0). Throws on a
// non-positive depth at a valid pixel.
std::vector<std::array<double, 3>> unproject(const std::vector<float>& depth,
                                             const std::vector<uint8_t>& validity, int h, int w,
                                             const CameraIntrinsics& k);

struct PixelCoord {
    double u, v, depth;
};

// Inverse of unproject_pixel; throws behind_camera on z <= 0.
PixelCoord project(const std::array<double, 3>& p, const CameraIntrinsics& k);

// Rigid transport of every pixel's point: x' = T_{t+1} T_t^{-1} x. Background
// (id 0) gets exactly zero flow. Throws when a referenced id has no pose.
SceneFlowField flow_from_poses(const std::vector<std::array<double, 3>>& points,
                               const std::vector<uint16_t>& object_ids, int h, int w,
                               const std::map<uint16_t, Pose>& poses_t,
                               const std::map<uint16_t, Pose>& poses_t1);

struct WarpResult {
    RgbdFrame frame;
    std::vector<uint8_t> coverage;  // 1 where some source pixel landed
};

// Forward splat with z-buffering; nearest depth wins, ties broken by lower
// row-major source index. Out-of-frame reprojections drop.
WarpResult warp_by_flow(const RgbdFrame& frame_t, const SceneFlowField& flow,
                        const CameraIntrinsics& k);

struct ScaleShift {
    double scale, shift;
};

// argmin over (s,t) of sum_mask (s*d_rel + t - d_met)^2, closed form. Throws
// on fewer than 2 masked samples or constant d_rel under the mask.
ScaleShift align_scale_shift(const std::vector<double>& d_rel, const std::vector<double>& d_met,
                             const std::vector<uint8_t>& mask);

// channel c = 0.5 + 0.5*flow_c/m, m = max component magnitude; m = 0 gives
// uniform 0.5 gray.
std::vector<float> flow_to_rgb(const SceneFlowField& flow);

}  // namespace fdwm
