#include "fdwm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>

#include "fdwm/dataset.hpp"
#include "fdwm/rng.hpp"

namespace fdwm {

namespace {

constexpr std::array<std::array<float, 3>, 8> kPalette{{{0.85f, 0.15f, 0.15f},
                                                        {0.15f, 0.55f, 0.9f},
                                                        {0.2f, 0.75f, 0.25f},
                                                        {0.95f, 0.8f, 0.2f},
                                                        {0.7f, 0.3f, 0.8f},
                                                        {0.95f, 0.5f, 0.1f},
                                                        {0.2f, 0.8f, 0.75f},
                                                        {0.9f, 0.4f, 0.6f}}};

struct Vec2 {
    double x = 0.0, y = 0.0;
    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double cross(const Vec2& o) const { return x * o.y - y * o.x; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

Vec2 block_center(const Block& b) { return {b.pose.m[3], b.pose.m[7]}; }

double block_theta(const Block& b) { return std::atan2(b.pose.m[4], b.pose.m[0]); }

void set_block_center(Block& b, const Vec2& c) {
    b.pose.m[3] = c.x;
    b.pose.m[7] = c.y;
}

Vec2 ee_center(const WorldState& s) { return {s.ee_pose.m[3], s.ee_pose.m[7]}; }

void set_ee_center(WorldState& s, const Vec2& c) {
    s.ee_pose.m[3] = c.x;
    s.ee_pose.m[7] = c.y;
}

struct Obb {
    Vec2 c;
    double hx, hy;
    double cs, sn;  // cos/sin of rotation
    Vec2 axis_x() const { return {cs, sn}; }
    Vec2 axis_y() const { return {-sn, cs}; }
    Vec2 to_local(const Vec2& p) const {
        Vec2 d = p - c;
        return {d.dot(axis_x()), d.dot(axis_y())};
    }
    Vec2 to_world_dir(const Vec2& d) const {
        return {d.x * cs - d.y * sn, d.x * sn + d.y * cs};
    }
    double support(const Vec2& dir) const {
        return hx * std::abs(dir.dot(axis_x())) + hy * std::abs(dir.dot(axis_y()));
    }
};

Obb obb_of(const Block& b) {
    double th = block_theta(b);
    return {block_center(b), b.hx, b.hy, std::cos(th), std::sin(th)};
}

struct Penetration {
    double depth = 0.0;
    Vec2 dir;  // direction that expels the intruder, world frame
    Vec2 contact;
};

// Disc vs oriented box. dir points from the box outward toward the disc.
bool disc_box_penetration(const Vec2& center, double radius, const Obb& box, Penetration& out) {
    Vec2 l = box.to_local(center);
    Vec2 q{std::clamp(l.x, -box.hx, box.hx), std::clamp(l.y, -box.hy, box.hy)};
    Vec2 d = l - q;
    double dist = d.norm();
    if (dist > 1e-12) {
        if (dist >= radius) return false;
        Vec2 dir_local = d * (1.0 / dist);
        out.depth = radius - dist;
        out.dir = box.to_world_dir(dir_local);
        out.contact = box.c + box.to_world_dir(q);
        return true;
    }
    // center inside the box: expel through the nearest face
    double px = box.hx - std::abs(l.x);
    double py = box.hy - std::abs(l.y);
    Vec2 dir_local = px < py ? Vec2{l.x >= 0 ? 1.0 : -1.0, 0.0}
                             : Vec2{0.0, l.y >= 0 ? 1.0 : -1.0};
    out.depth = radius + std::min(px, py);
    out.dir = box.to_world_dir(dir_local);
    out.contact = center;
    return true;
}

// SAT over the four face normals; dir expels box b away from box a.
bool box_box_penetration(const Obb& a, const Obb& b, Penetration& out) {
    std::array<Vec2, 4> axes{a.axis_x(), a.axis_y(), b.axis_x(), b.axis_y()};
    double best = std::numeric_limits<double>::infinity();
    Vec2 best_axis;
    Vec2 d = b.c - a.c;
    for (const Vec2& ax : axes) {
        double overlap = a.support(ax) + b.support(ax) - std::abs(d.dot(ax));
        if (overlap <= 0.0) return false;
        if (overlap < best) {
            best = overlap;
            best_axis = d.dot(ax) >= 0.0 ? ax : ax * -1.0;
        }
    }
    out.depth = best;
    out.dir = best_axis;
    out.contact = (a.c + b.c) * 0.5;
    return true;
}

void clamp_block(Block& b, const std::array<double, 4>& bounds, double margin = 0.0) {
    Obb o = obb_of(b);
    double ex = o.support({1.0, 0.0}) + margin;
    double ey = o.support({0.0, 1.0}) + margin;
    Vec2 c = o.c;
    c.x = std::clamp(c.x, bounds[0] + ex, bounds[1] - ex);
    c.y = std::clamp(c.y, bounds[2] + ey, bounds[3] - ey);
    set_block_center(b, c);
}

void rotate_block(Block& b, double dtheta) {
    Vec2 c = block_center(b);
    double th = block_theta(b) + dtheta;
    double z = b.pose.m[11];
    b.pose = Pose::rot_z(th);
    b.pose.m[3] = c.x;
    b.pose.m[7] = c.y;
    b.pose.m[11] = z;
}

}  // namespace

std::array<double, 4> EnvConfig::workspace_bounds() const {
    double half_x = bounds_fraction * (w / 2.0) / intrinsics.fx * camera_height;
    double half_y = bounds_fraction * (h / 2.0) / intrinsics.fy * camera_height;
    return {-half_x, half_x, -half_y, half_y};
}

void EnvConfig::validate() const {
    if (h < 16 || w < 16) throw std::invalid_argument("env: extents must be >= 16");
    intrinsics.validate();
    if (!(camera_height > block_height_max) || !(camera_height > ee_height))
        throw std::invalid_argument("env: camera must sit above the tallest object");
    if (n_blocks < 0) throw std::invalid_argument("env: negative block count");
    if (!(a_max > 0.0)) throw std::invalid_argument("env: a_max must be positive");
}

WorldState reset(const EnvConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(mix_seed(seed, 0x7265736574ULL));
    WorldState s;
    s.ee_radius = config.ee_radius;
    s.ee_height = config.ee_height;
    s.bounds = config.workspace_bounds();
    s.step_index = 0;

    auto place = [&](double inset_x, double inset_y) -> Vec2 {
        return {rng.uniform(s.bounds[0] + inset_x, s.bounds[1] - inset_x),
                rng.uniform(s.bounds[2] + inset_y, s.bounds[3] - inset_y)};
    };

    int rejections = 0;
    for (int i = 0; i < config.n_blocks; ++i) {
        Block b;
        b.id = static_cast<uint16_t>(i + 1);
        b.hx = rng.uniform(config.block_half_min, config.block_half_max);
        b.hy = rng.uniform(config.block_half_min, config.block_half_max);
        b.height = rng.uniform(config.block_height_min, config.block_height_max);
        b.color = kPalette[static_cast<size_t>(i) % kPalette.size()];
        double theta = config.rotation_mode ? rng.uniform(0.0, 0.5) : 0.0;
        for (;;) {
            Vec2 c = place(b.hx + std::abs(theta) * b.hy + 1e-3, b.hy + std::abs(theta) * b.hx + 1e-3);
            b.pose = Pose::rot_z(theta);
            b.pose.m[3] = c.x;
            b.pose.m[7] = c.y;
            b.pose.m[11] = config.camera_height - b.height / 2.0;
            clamp_block(b, s.bounds);
            bool ok = true;
            Penetration pen;
            for (const Block& other : s.blocks) {
                Obb oa = obb_of(b), ob = obb_of(other);
                oa.hx += 0.01;  // placement margin
                oa.hy += 0.01;
                if (box_box_penetration(oa, ob, pen)) {
                    ok = false;
                    break;
                }
            }
            if (ok) break;
            if (++rejections > 1000)
                throw std::runtime_error("reset: workspace too crowded after 1000 rejections");
        }
        s.blocks.push_back(b);
    }

    for (;;) {
        Vec2 c = place(config.ee_radius + 1e-3, config.ee_radius + 1e-3);
        bool ok = true;
        Penetration pen;
        for (const Block& b : s.blocks)
            if (disc_box_penetration(c, config.ee_radius + 0.005, obb_of(b), pen)) {
                ok = false;
                break;
            }
        if (ok) {
            s.ee_pose = Pose::translation(c.x, c.y, config.camera_height - config.ee_height / 2.0);
            break;
        }
        if (++rejections > 1000)
            throw std::runtime_error("reset: workspace too crowded after 1000 rejections");
    }
    return s;
}

WorldState step(const WorldState& state, const EnvConfig& config, const Action& action) {
    WorldState s = state;
    double dx = std::clamp(action.dx, -config.a_max, config.a_max);
    double dy = std::clamp(action.dy, -config.a_max, config.a_max);

    double dist = std::hypot(dx, dy);
    int substeps = std::max(1, static_cast<int>(std::ceil(dist / (0.5 * s.ee_radius))));
    Vec2 delta{dx / substeps, dy / substeps};

    for (int sub = 0; sub < substeps; ++sub) {
        set_ee_center(s, ee_center(s) + delta);

        // blocks yield to the end-effector, then to each other, then walls
        for (int iter = 0; iter < 16; ++iter) {
            double moved = 0.0;
            Penetration pen;
            for (Block& b : s.blocks) {
                if (disc_box_penetration(ee_center(s), s.ee_radius, obb_of(b), pen)) {
                    Vec2 shift = pen.dir * -pen.depth;  // away from the disc
                    set_block_center(b, block_center(b) + shift);
                    if (config.rotation_mode) {
                        Vec2 r = pen.contact - block_center(b);
                        double dtheta = config.rotation_gain * r.cross(shift) /
                                        (b.hx * b.hx + b.hy * b.hy);
                        rotate_block(b, dtheta);
                    }
                    moved += pen.depth;
                }
            }
            for (size_t i = 0; i < s.blocks.size(); ++i)
                for (size_t j = i + 1; j < s.blocks.size(); ++j) {
                    if (box_box_penetration(obb_of(s.blocks[i]), obb_of(s.blocks[j]), pen)) {
                        Vec2 half = pen.dir * (0.5 * pen.depth);
                        set_block_center(s.blocks[i], block_center(s.blocks[i]) - half);
                        set_block_center(s.blocks[j], block_center(s.blocks[j]) + half);
                        moved += pen.depth;
                    }
                }
            for (Block& b : s.blocks) {
                Vec2 before = block_center(b);
                clamp_block(b, s.bounds);
                moved += (block_center(b) - before).norm();
            }
            if (moved < 1e-12) break;
        }

        // the end-effector stops at contact when blocks cannot yield
        for (int iter = 0; iter < 16; ++iter) {
            double moved = 0.0;
            Penetration pen;
            for (const Block& b : s.blocks)
                if (disc_box_penetration(ee_center(s), s.ee_radius, obb_of(b), pen)) {
                    set_ee_center(s, ee_center(s) + pen.dir * pen.depth);
                    moved += pen.depth;
                }
            Vec2 c = ee_center(s);
            Vec2 clamped{std::clamp(c.x, s.bounds[0] + s.ee_radius, s.bounds[1] - s.ee_radius),
                         std::clamp(c.y, s.bounds[2] + s.ee_radius, s.bounds[3] - s.ee_radius)};
            moved += (clamped - c).norm();
            set_ee_center(s, clamped);
            if (moved < 1e-12) break;
        }
    }

    s.step_index = state.step_index + 1;
    return s;
}

RenderOutput render_full(const WorldState& state, const EnvConfig& config) {
    config.validate();
    const int h = config.h, w = config.w;
    RenderOutput out;
    out.frame = RgbdFrame::blank(h, w);
    out.object_ids.assign(static_cast<size_t>(h) * w, 0);

    struct BlockGeom {
        Obb obb;
        double z_lo, z_hi;  // top (smaller z) and bottom
        const Block* b;
    };
    std::vector<BlockGeom> geo;
    for (const Block& b : state.blocks)
        geo.push_back({obb_of(b), config.camera_height - b.height, config.camera_height, &b});
    Vec2 ee = {state.ee_pose.m[3], state.ee_pose.m[7]};
    double ee_top = config.camera_height - state.ee_height;

    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            double rdx = (u - config.intrinsics.cx) / config.intrinsics.fx;
            double rdy = (v - config.intrinsics.cy) / config.intrinsics.fy;
            // ray p(s) = s * (rdx, rdy, 1); depth of a hit equals s
            double best = config.camera_height;  // table plane
            uint16_t best_id = 0;
            const float* best_color = config.table_color.data();

            for (const BlockGeom& g : geo) {
                // into box frame (rotation about z only)
                Vec2 o_local = g.obb.to_local({0.0, 0.0});
                Vec2 d_local{rdx * g.obb.cs + rdy * g.obb.sn, -rdx * g.obb.sn + rdy * g.obb.cs};
                double t_enter = 0.0, t_exit = std::numeric_limits<double>::infinity();
                bool miss = false;
                auto slab = [&](double o, double d, double lo, double hi) {
                    if (std::abs(d) < 1e-15) {
                        if (o < lo || o > hi) miss = true;
                        return;
                    }
                    double t0 = (lo - o) / d, t1 = (hi - o) / d;
                    if (t0 > t1) std::swap(t0, t1);
                    t_enter = std::max(t_enter, t0);
                    t_exit = std::min(t_exit, t1);
                };
                slab(o_local.x, d_local.x, -g.obb.hx, g.obb.hx);
                slab(o_local.y, d_local.y, -g.obb.hy, g.obb.hy);
                slab(0.0, 1.0, g.z_lo, g.z_hi);
                if (miss || t_enter > t_exit) continue;
                if (t_enter > 1e-9 && t_enter < best) {
                    best = t_enter;
                    best_id = g.b->id;
                    best_color = g.b->color.data();
                }
            }

            {  // end-effector cylinder
                double a = rdx * rdx + rdy * rdy;
                double candidate = std::numeric_limits<double>::infinity();
                // top cap
                double capx = ee_top * rdx - ee.x, capy = ee_top * rdy - ee.y;
                if (capx * capx + capy * capy <= state.ee_radius * state.ee_radius)
                    candidate = ee_top;
                if (a > 1e-15) {  // lateral surface
                    double bq = -2.0 * (rdx * ee.x + rdy * ee.y);
                    double cq = ee.x * ee.x + ee.y * ee.y - state.ee_radius * state.ee_radius;
                    double disc = bq * bq - 4.0 * a * cq;
                    if (disc >= 0.0) {
                        double sq = std::sqrt(disc);
                        double s1 = (-bq - sq) / (2.0 * a);
                        if (s1 > 1e-9 && s1 >= ee_top && s1 <= config.camera_height)
                            candidate = std::min(candidate, s1);
                    }
                }
                if (candidate < best) {
                    best = candidate;
                    best_id = state.ee_id();
                    best_color = config.ee_color.data();
                }
            }

            size_t i = static_cast<size_t>(v) * w + u;
            out.frame.depth[i] = static_cast<float>(best);
            out.frame.validity[i] = 1;
            for (int c = 0; c < 3; ++c) out.frame.rgb[i * 3 + c] = best_color[c];
            out.object_ids[i] = best_id;
        }
    return out;
}

RgbdFrame render(const WorldState& state, const EnvConfig& config) {
    return render_full(state, config).frame;
}

std::map<uint16_t, Pose> pose_map(const WorldState& state) {
    std::map<uint16_t, Pose> m;
    for (const Block& b : state.blocks) m[b.id] = b.pose;
    m[state.ee_id()] = state.ee_pose;
    return m;
}

SceneFlowField gt_flow(const WorldState& state_t, const WorldState& state_t1,
                       const RgbdFrame& frame_t, const EnvConfig& config) {
    RenderOutput rt = render_full(state_t, config);
    RenderOutput rt1 = render_full(state_t1, config);
    auto points = unproject(frame_t.depth, frame_t.validity, frame_t.h, frame_t.w,
                            config.intrinsics);
    SceneFlowField flow = flow_from_poses(points, rt.object_ids, frame_t.h, frame_t.w,
                                          pose_map(state_t), pose_map(state_t1));

    const double tol = 1e-6;
    for (int v = 0; v < frame_t.h; ++v)
        for (int u = 0; u < frame_t.w; ++u) {
            size_t i = static_cast<size_t>(v) * frame_t.w + u;
            if (!frame_t.validity[i]) continue;
            std::array<double, 3> p = points[i];
            p[0] += flow.flow[i * 3];
            p[1] += flow.flow[i * 3 + 1];
            p[2] += flow.flow[i * 3 + 2];
            if (!(p[2] > 0.0)) {
                flow.occlusion[i] = 1;
                continue;
            }
            PixelCoord pc = project(p, config.intrinsics);
            int tu = static_cast<int>(std::lround(pc.u));
            int tv = static_cast<int>(std::lround(pc.v));
            if (tu < 0 || tu >= frame_t.w || tv < 0 || tv >= frame_t.h) {
                flow.occlusion[i] = 1;
                continue;
            }
            double d1 = rt1.frame.depth[static_cast<size_t>(tv) * frame_t.w + tu];
            if (pc.depth > d1 + tol) flow.occlusion[i] = 1;
        }
    return flow;
}

Action scripted_policy(const WorldState& state, const WorldState& goal, const EnvConfig& config,
                       uint64_t seed) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(state.step_index), 0xa11ceULL));
    Action a;
    if (!state.blocks.empty() && state.blocks.size() == goal.blocks.size()) {
        // block farthest from its goal position
        int target = -1;
        double worst = 0.01;  // ignore blocks already within 1 cm
        for (size_t i = 0; i < state.blocks.size(); ++i) {
            Vec2 d = block_center(goal.blocks[i]) - block_center(state.blocks[i]);
            if (d.norm() > worst) {
                worst = d.norm();
                target = static_cast<int>(i);
            }
        }
        if (target >= 0) {
            const Block& b = state.blocks[static_cast<size_t>(target)];
            Vec2 bc = block_center(b);
            Vec2 gc = block_center(goal.blocks[static_cast<size_t>(target)]);
            Vec2 push_dir = gc - bc;
            double dist_goal = push_dir.norm();
            push_dir = push_dir * (1.0 / dist_goal);
            Obb obb = obb_of(b);
            double standoff = obb.support(push_dir) + state.ee_radius;
            Vec2 stand = bc - push_dir * (standoff + 0.004);
            Vec2 ee = ee_center(state);
            Vec2 to_stand = stand - ee;

            if (to_stand.norm() < 0.012) {
                // in position: push toward the goal
                double mag = std::min(config.a_max, std::max(0.012, 0.6 * dist_goal));
                a.dx = push_dir.x * mag;
                a.dy = push_dir.y * mag;
            } else {
                // reposition, detouring around the block when it is in the way
                Vec2 to_block = bc - ee;
                double clearance = obb.support({to_block.x, to_block.y}) + state.ee_radius + 0.01;
                bool blocked = to_block.norm() < clearance + 0.015 &&
                               to_stand.dot(to_block) > 0.0;
                Vec2 move;
                if (blocked) {
                    Vec2 away = to_block * (-1.0 / std::max(1e-9, to_block.norm()));
                    Vec2 tangent{-away.y, away.x};
                    if (to_block.cross(to_stand) < 0.0) tangent = tangent * -1.0;
                    move = tangent * config.a_max + away * (0.3 * config.a_max);
                } else {
                    move = to_stand;
                }
                double n = move.norm();
                if (n > config.a_max) move = move * (config.a_max / n);
                a.dx = move.x;
                a.dy = move.y;
            }
        }
    }
    a.dx += rng.normal() * 0.05 * config.a_max;
    a.dy += rng.normal() * 0.05 * config.a_max;
    a.dx = std::clamp(a.dx, -config.a_max, config.a_max);
    a.dy = std::clamp(a.dy, -config.a_max, config.a_max);
    return a;
}

DatasetSummary generate_dataset(const EnvConfig& config, int episodes, int steps,
                                const std::string& out_dir, uint64_t seed) {
    config.validate();
    if (episodes < 1 || steps < 1)
        throw std::invalid_argument("generate_dataset: episodes and steps must be positive");
    ensure_dir(out_dir);

    DatasetManifest manifest;
    manifest.h = config.h;
    manifest.w = config.w;
    manifest.action_dim = 2;
    manifest.env = config;

    double d_min = std::numeric_limits<double>::infinity();
    double d_max = -std::numeric_limits<double>::infinity();
    double flow_scale = 0.0;

    std::vector<std::string> written;
    auto cleanup = [&]() {
        for (const auto& p : written) std::filesystem::remove(p);
    };

    try {
        for (int ep = 0; ep < episodes; ++ep) {
            uint64_t ep_seed = mix_seed(seed, static_cast<uint64_t>(ep), 0xda7aULL);
            WorldState state = reset(config, ep_seed);
            WorldState goal = reset(config, mix_seed(ep_seed, 0x60a1ULL));

            EpisodeData data;
            std::vector<WorldState> states{state};
            std::vector<Action> actions;
            for (int t = 0; t < steps; ++t) {
                Action act = scripted_policy(states.back(), goal, config,
                                             mix_seed(ep_seed, 0xac7ULL));
                actions.push_back(act);
                states.push_back(step(states.back(), config, act));
            }
            for (int t = 0; t <= steps; ++t) {
                StepRecord rec;
                RenderOutput ro = render_full(states[static_cast<size_t>(t)], config);
                rec.frame = std::move(ro.frame);
                rec.object_ids = std::move(ro.object_ids);
                for (const auto& [id, pose] : pose_map(states[static_cast<size_t>(t)]))
                    rec.poses.emplace_back(id, pose);
                if (t < steps) {
                    rec.has_action_flow = true;
                    rec.action = {static_cast<float>(actions[static_cast<size_t>(t)].dx),
                                  static_cast<float>(actions[static_cast<size_t>(t)].dy)};
                    rec.flow = gt_flow(states[static_cast<size_t>(t)],
                                       states[static_cast<size_t>(t) + 1], rec.frame, config);
                } else {
                    rec.has_action_flow = false;
                    rec.action = {0.0f, 0.0f};
                    rec.flow = SceneFlowField::zero(config.h, config.w);
                }
                for (float d : rec.frame.depth) {
                    d_min = std::min(d_min, static_cast<double>(d));
                    d_max = std::max(d_max, static_cast<double>(d));
                }
                for (float f : rec.flow.flow)
                    flow_scale = std::max(flow_scale, std::abs(static_cast<double>(f)));
                data.steps.push_back(std::move(rec));
            }

            char name[64];
            std::snprintf(name, sizeof(name), "episode_%05d.fdwm", ep);
            std::string path = out_dir + "/" + name;
            write_episode_file(path, data, config.h, config.w, manifest.action_dim);
            written.push_back(path);

            ManifestEpisode me;
            me.file = name;
            me.frames = data.frames();
            me.crc32 = crc32_file(path);
            manifest.episodes.push_back(me);
        }

        // 90/5/5 split by episode, deterministic in episode order
        int n_train = static_cast<int>(std::llround(episodes * 0.90));
        int n_val = static_cast<int>(std::llround(episodes * 0.05));
        n_train = std::min(n_train, episodes);
        n_val = std::min(n_val, episodes - n_train);
        for (int ep = 0; ep < episodes; ++ep)
            manifest.episodes[static_cast<size_t>(ep)].split =
                ep < n_train ? "train" : (ep < n_train + n_val ? "val" : "test");

        manifest.d_min = d_min;
        manifest.d_max = d_max > d_min ? d_max : d_min + 1.0;
        manifest.flow_scale = flow_scale > 0.0 ? flow_scale : 1.0;
        save_manifest(out_dir, manifest);
    } catch (...) {
        cleanup();
        throw;
    }

    DatasetSummary summary;
    summary.episodes = episodes;
    summary.samples = static_cast<int64_t>(episodes) * steps;
    summary.manifest_path = out_dir + "/manifest.json";
    return summary;
}

}  // namespace fdwm
