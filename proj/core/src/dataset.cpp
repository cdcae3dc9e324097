#include "fdwm/dataset.hpp"

#include <json.hpp>

#include <fstream>

namespace fdwm {

using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'F', 'D', 'W', 'M'};

void write_frame_fields(std::ostream& os, const StepRecord& r, int h, int w, int action_dim) {
    os.put(r.has_action_flow ? 1 : 0);
    if (static_cast<int>(r.action.size()) != action_dim)
        throw std::invalid_argument("episode write: action width mismatch");
    write_f32s(os, r.action.data(), r.action.size());
    const size_t hw = static_cast<size_t>(h) * w;
    if (r.frame.rgb.size() != hw * 3 || r.frame.depth.size() != hw ||
        r.object_ids.size() != hw || r.flow.flow.size() != hw * 3)
        throw std::invalid_argument("episode write: frame extent mismatch");
    write_f32s(os, r.frame.rgb.data(), hw * 3);
    write_f32s(os, r.frame.depth.data(), hw);
    write_u16s(os, r.object_ids.data(), hw);
    write_u16(os, static_cast<uint16_t>(r.poses.size()));
    for (const auto& [id, pose] : r.poses) {
        write_u16(os, id);
        for (double v : pose.m) write_f32(os, static_cast<float>(v));
    }
    write_f32s(os, r.flow.flow.data(), hw * 3);
}
}  // namespace

void write_episode_file(const std::string& path, const EpisodeData& ep, int h, int w,
                        int action_dim) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, kDatasetFormatVersion);
    write_u32(os, static_cast<uint32_t>(h));
    write_u32(os, static_cast<uint32_t>(w));
    write_u32(os, static_cast<uint32_t>(ep.steps.size()));
    write_u32(os, static_cast<uint32_t>(action_dim));
    for (const auto& r : ep.steps) write_frame_fields(os, r, h, w, action_dim);
    if (!os) throw DataError("short write: " + path);
}

EpisodeData read_episode_file(const std::string& path, int expect_h, int expect_w,
                              int expect_action_dim) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open episode file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad magic in episode file: " + path);
    uint32_t version = read_u32(is);
    if (version != kDatasetFormatVersion)
        throw DataError("unsupported episode format version in " + path);
    int h = static_cast<int>(read_u32(is));
    int w = static_cast<int>(read_u32(is));
    uint32_t t = read_u32(is);
    int action_dim = static_cast<int>(read_u32(is));
    if (h != expect_h || w != expect_w || action_dim != expect_action_dim)
        throw DataError("episode header disagrees with manifest: " + path);

    const size_t hw = static_cast<size_t>(h) * w;
    EpisodeData ep;
    ep.steps.resize(t);
    for (uint32_t i = 0; i < t; ++i) {
        StepRecord& r = ep.steps[i];
        int flag = is.get();
        if (flag == EOF) throw DataError("truncated episode file: " + path);
        r.has_action_flow = flag != 0;
        r.action.resize(static_cast<size_t>(action_dim));
        read_f32s(is, r.action.data(), r.action.size());
        r.frame = RgbdFrame::blank(h, w);
        read_f32s(is, r.frame.rgb.data(), hw * 3);
        read_f32s(is, r.frame.depth.data(), hw);
        std::fill(r.frame.validity.begin(), r.frame.validity.end(), 1);
        r.object_ids.resize(hw);
        read_u16s(is, r.object_ids.data(), hw);
        uint16_t np = read_u16(is);
        r.poses.resize(np);
        for (auto& [id, pose] : r.poses) {
            id = read_u16(is);
            for (double& v : pose.m) v = static_cast<double>(read_f32(is));
        }
        r.flow = SceneFlowField::zero(h, w);
        read_f32s(is, r.flow.flow.data(), hw * 3);
    }
    return ep;
}

int64_t DatasetManifest::samples(const std::string& split) const {
    int64_t n = 0;
    for (const auto& e : episodes)
        if (e.split == split) n += std::max(0, e.frames - 1);
    return n;
}

std::vector<int> DatasetManifest::episode_indices(const std::string& split) const {
    std::vector<int> out;
    for (size_t i = 0; i < episodes.size(); ++i)
        if (episodes[i].split == split) out.push_back(static_cast<int>(i));
    return out;
}

namespace {
json env_to_json(const EnvConfig& e) {
    return json{{"h", e.h},
                {"w", e.w},
                {"fx", e.intrinsics.fx},
                {"fy", e.intrinsics.fy},
                {"cx", e.intrinsics.cx},
                {"cy", e.intrinsics.cy},
                {"camera_height", e.camera_height},
                {"n_blocks", e.n_blocks},
                {"a_max", e.a_max},
                {"seed", e.seed},
                {"ee_radius", e.ee_radius},
                {"ee_height", e.ee_height},
                {"block_half_min", e.block_half_min},
                {"block_half_max", e.block_half_max},
                {"block_height_min", e.block_height_min},
                {"block_height_max", e.block_height_max},
                {"bounds_fraction", e.bounds_fraction},
                {"rotation_mode", e.rotation_mode},
                {"rotation_gain", e.rotation_gain},
                {"table_color", e.table_color},
                {"ee_color", e.ee_color}};
}

EnvConfig env_from_json(const json& j) {
    EnvConfig e;
    e.h = j.at("h");
    e.w = j.at("w");
    e.intrinsics = {j.at("fx"), j.at("fy"), j.at("cx"), j.at("cy")};
    e.camera_height = j.at("camera_height");
    e.n_blocks = j.at("n_blocks");
    e.a_max = j.at("a_max");
    e.seed = j.at("seed");
    e.ee_radius = j.at("ee_radius");
    e.ee_height = j.at("ee_height");
    e.block_half_min = j.at("block_half_min");
    e.block_half_max = j.at("block_half_max");
    e.block_height_min = j.at("block_height_min");
    e.block_height_max = j.at("block_height_max");
    e.bounds_fraction = j.at("bounds_fraction");
    e.rotation_mode = j.at("rotation_mode");
    e.rotation_gain = j.at("rotation_gain");
    e.table_color = j.at("table_color");
    e.ee_color = j.at("ee_color");
    return e;
}
}  // namespace

void save_manifest(const std::string& dir, const DatasetManifest& m) {
    json j{{"format", "fdwm-dataset"},
           {"version", m.version},
           {"h", m.h},
           {"w", m.w},
           {"action_dim", m.action_dim},
           {"d_min", m.d_min},
           {"d_max", m.d_max},
           {"flow_scale", m.flow_scale},
           {"env", env_to_json(m.env)}};
    json eps = json::array();
    for (const auto& e : m.episodes)
        eps.push_back(json{{"file", e.file}, {"split", e.split}, {"crc32", e.crc32},
                           {"frames", e.frames}});
    j["episodes"] = eps;
    std::ofstream f(dir + "/manifest.json");
    if (!f) throw DataError("cannot write manifest in " + dir);
    f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw DataError("missing manifest: " + dir + "/manifest.json");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed manifest in " + dir + ": " + e.what());
    }
    try {
        DatasetManifest m;
        m.version = j.at("version");
        if (m.version != kDatasetFormatVersion)
            throw DataError("unsupported dataset version in " + dir);
        m.h = j.at("h");
        m.w = j.at("w");
        m.action_dim = j.at("action_dim");
        m.d_min = j.at("d_min");
        m.d_max = j.at("d_max");
        m.flow_scale = j.at("flow_scale");
        m.env = env_from_json(j.at("env"));
        for (const auto& e : j.at("episodes"))
            m.episodes.push_back({e.at("file"), e.at("split"), e.at("crc32"), e.at("frames")});
        return m;
    } catch (const json::exception& e) {
        throw DataError("manifest missing fields in " + dir + ": " + e.what());
    }
}

DatasetView::DatasetView(const std::string& dir, const std::string& split)
    : manifest_(load_manifest(dir)) {
    for (const auto& e : manifest_.episodes) {
        if (e.split != split) continue;
        std::string path = dir + "/" + e.file;
        uint32_t crc = crc32_file(path);
        if (crc != e.crc32)
            throw DataError("checksum mismatch for " + path + " (dataset corrupt)");
        EpisodeData ep = read_episode_file(path, manifest_.h, manifest_.w, manifest_.action_dim);
        if (ep.frames() != e.frames)
            throw DataError("frame count mismatch for " + path);
        int idx = static_cast<int>(episodes_.size());
        for (int t = 0; t + 1 < ep.frames(); ++t) samples_.emplace_back(idx, t);
        episodes_.push_back(std::move(ep));
    }
}

DatasetView::Sample DatasetView::sample(int64_t i) const {
    if (i < 0 || i >= num_samples()) throw std::invalid_argument("dataset: sample out of range");
    auto [e, t] = samples_[static_cast<size_t>(i)];
    const auto& ep = episodes_[static_cast<size_t>(e)];
    return {&ep.steps[static_cast<size_t>(t)], &ep.steps[static_cast<size_t>(t) + 1], e, t};
}

}  // namespace fdwm
