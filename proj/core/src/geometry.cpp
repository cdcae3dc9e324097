#include "fdwm/geometry.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fdwm {

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
        throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (!std::isfinite(cx) || !std::isfinite(cy))
        throw std::invalid_argument("intrinsics: principal point must be finite");
}

Pose Pose::translation(double x, double y, double z) {
    Pose p;
    p.m[3] = x;
    p.m[7] = y;
    p.m[11] = z;
    return p;
}

Pose Pose::rot_z(double theta, double cx, double cy) {
    Pose p;
    double c = std::cos(theta), s = std::sin(theta);
    p.m = {c, -s, 0, cx - c * cx + s * cy,
           s, c,  0, cy - s * cx - c * cy,
           0, 0,  1, 0,
           0, 0,  0, 1};
    return p;
}

Pose Pose::mul(const Pose& o) const {
    Pose r;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += m[i * 4 + k] * o.m[k * 4 + j];
            r.m[i * 4 + j] = s;
        }
    return r;
}

Pose Pose::inverse() const {
    Pose r;
    // R^T
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.m[i * 4 + j] = m[j * 4 + i];
    // -R^T t
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += r.m[i * 4 + j] * m[j * 4 + 3];
        r.m[i * 4 + 3] = -s;
    }
    r.m[12] = r.m[13] = r.m[14] = 0.0;
    r.m[15] = 1.0;
    return r;
}

std::array<double, 3> Pose::apply(const std::array<double, 3>& p) const {
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11]};
}

void Pose::validate() const {
    if (m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0)
        throw std::invalid_argument("pose: bottom row must be (0,0,0,1)");
    // R R^T = I within 1e-9
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += m[i * 4 + k] * m[j * 4 + k];
            double want = i == j ? 1.0 : 0.0;
            if (std::abs(s - want) > 1e-9)
                throw std::invalid_argument("pose: rotation block not orthonormal");
        }
    double det = m[0] * (m[5] * m[10] - m[6] * m[9]) - m[1] * (m[4] * m[10] - m[6] * m[8]) +
                 m[2] * (m[4] * m[9] - m[5] * m[8]);
    if (std::abs(det - 1.0) > 1e-9) throw std::invalid_argument("pose: det(R) must be +1");
}

RgbdFrame RgbdFrame::blank(int h, int w) {
    RgbdFrame f;
    f.h = h;
    f.w = w;
    f.rgb.assign(static_cast<size_t>(h) * w * 3, 0.0f);
    f.depth.assign(static_cast<size_t>(h) * w, 0.0f);
    f.validity.assign(static_cast<size_t>(h) * w, 0);
    return f;
}

SceneFlowField SceneFlowField::zero(int h, int w) {
    SceneFlowField f;
    f.h = h;
    f.w = w;
    f.flow.assign(static_cast<size_t>(h) * w * 3, 0.0f);
    f.occlusion.assign(static_cast<size_t>(h) * w, 0);
    return f;
}

std::array<double, 3> unproject_pixel(int u, int v, double depth, const CameraIntrinsics& k) {
    if (!(depth > 0.0)) throw std::invalid_argument("unproject: non-positive depth");
    return {depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth};
}

std::vector<std::array<double, 3>> unproject(const std::vector<float>& depth,
                                             const std::vector<uint8_t>& validity, int h, int w,
                                             const CameraIntrinsics& k) {
    k.validate();
    if (depth.size() != static_cast<size_t>(h) * w || validity.size() != depth.size())
        throw std::invalid_argument("unproject: extent mismatch");
    std::vector<std::array<double, 3>> pts(depth.size(), {0.0, 0.0, 0.0});
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            size_t i = static_cast<size_t>(v) * w + u;
            if (!validity[i]) continue;
            pts[i] = unproject_pixel(u, v, depth[i], k);
        }
    return pts;
}

PixelCoord project(const std::array<double, 3>& p, const CameraIntrinsics& k) {
    if (!(p[2] > 0.0)) throw std::invalid_argument("project: point behind camera");
    return {k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy, p[2]};
}

SceneFlowField flow_from_poses(const std::vector<std::array<double, 3>>& points,
                               const std::vector<uint16_t>& object_ids, int h, int w,
                               const std::map<uint16_t, Pose>& poses_t,
                               const std::map<uint16_t, Pose>& poses_t1) {
    if (points.size() != static_cast<size_t>(h) * w || object_ids.size() != points.size())
        throw std::invalid_argument("flow_from_poses: extent mismatch");
    SceneFlowField out = SceneFlowField::zero(h, w);
    std::map<uint16_t, Pose> transport;  // T_{t+1} T_t^{-1} per id
    for (size_t i = 0; i < points.size(); ++i) {
        uint16_t id = object_ids[i];
        if (id == 0) continue;
        auto it = transport.find(id);
        if (it == transport.end()) {
            auto pt = poses_t.find(id);
            auto pt1 = poses_t1.find(id);
            if (pt == poses_t.end() || pt1 == poses_t1.end())
                throw std::invalid_argument("flow_from_poses: missing pose for object id " +
                                            std::to_string(id));
            it = transport.emplace(id, pt1->second.mul(pt->second.inverse())).first;
        }
        auto moved = it->second.apply(points[i]);
        out.flow[i * 3 + 0] = static_cast<float>(moved[0] - points[i][0]);
        out.flow[i * 3 + 1] = static_cast<float>(moved[1] - points[i][1]);
        out.flow[i * 3 + 2] = static_cast<float>(moved[2] - points[i][2]);
    }
    return out;
}

WarpResult warp_by_flow(const RgbdFrame& frame_t, const SceneFlowField& flow,
                        const CameraIntrinsics& k) {
    if (frame_t.h != flow.h || frame_t.w != flow.w)
        throw std::invalid_argument("warp_by_flow: extent mismatch");
    const int h = frame_t.h, w = frame_t.w;
    WarpResult out;
    out.frame = RgbdFrame::blank(h, w);
    out.coverage.assign(static_cast<size_t>(h) * w, 0);
    std::vector<double> zbuf(static_cast<size_t>(h) * w, std::numeric_limits<double>::infinity());

    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            if (!frame_t.valid_at(v, u)) continue;
            auto p = unproject_pixel(u, v, frame_t.depth_at(v, u), k);
            p[0] += flow.at(v, u, 0);
            p[1] += flow.at(v, u, 1);
            p[2] += flow.at(v, u, 2);
            if (!(p[2] > 0.0)) continue;
            PixelCoord pc = project(p, k);
            int tu = static_cast<int>(std::lround(pc.u));
            int tv = static_cast<int>(std::lround(pc.v));
            if (tu < 0 || tu >= w || tv < 0 || tv >= h) continue;
            size_t ti = static_cast<size_t>(tv) * w + tu;
            if (pc.depth < zbuf[ti]) {  // strict: row-major-first source wins ties
                zbuf[ti] = pc.depth;
                out.coverage[ti] = 1;
                out.frame.validity[ti] = 1;
                out.frame.depth[ti] = static_cast<float>(pc.depth);
                for (int c = 0; c < 3; ++c) out.frame.rgb[ti * 3 + c] = frame_t.rgb_at(v, u, c);
            }
        }
    return out;
}

ScaleShift align_scale_shift(const std::vector<double>& d_rel, const std::vector<double>& d_met,
                             const std::vector<uint8_t>& mask) {
    if (d_rel.size() != d_met.size() || d_rel.size() != mask.size())
        throw std::invalid_argument("align_scale_shift: extent mismatch");
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < d_rel.size(); ++i) {
        if (!mask[i]) continue;
        n += 1;
        sx += d_rel[i];
        sy += d_met[i];
        sxx += d_rel[i] * d_rel[i];
        sxy += d_rel[i] * d_met[i];
    }
    if (n < 2) throw std::invalid_argument("align_scale_shift: fewer than 2 masked samples");
    double det = n * sxx - sx * sx;
    if (std::abs(det) < 1e-12 * std::max(1.0, n * sxx))
        throw std::invalid_argument("align_scale_shift: degenerate system (constant input)");
    double s = (n * sxy - sx * sy) / det;
    double t = (sy - s * sx) / n;
    return {s, t};
}

std::vector<float> flow_to_rgb(const SceneFlowField& flow) {
    std::vector<float> img(static_cast<size_t>(flow.h) * flow.w * 3, 0.5f);
    float m = 0.0f;
    for (float v : flow.flow) m = std::max(m, std::abs(v));
    if (m == 0.0f) return img;
    for (size_t i = 0; i < flow.flow.size(); ++i)
        img[i] = 0.5f + 0.5f * flow.flow[i] / m;
    return img;
}

}  // namespace fdwm
