#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fdwm/geometry.hpp"
#include "fdwm/io.hpp"
#include "fdwm/sim.hpp"

namespace fdwm {

constexpr uint32_t kDatasetFormatVersion = 1;

// One per-step record of an episode file. Every record carries a presence
// flag byte; the final record of an episode stores frame data only, with
// zero-filled action and flow and the flag cleared.
struct StepRecord {
    bool has_action_flow = false;
    std::vector<float> action;  // action_dim
    RgbdFrame frame;
    std::vector<uint16_t> object_ids;  // h*w
    std::vector<std::pair<uint16_t, Pose>> poses;
    SceneFlowField flow;
};

struct EpisodeData {
    std::vector<StepRecord> steps;
    int frames() const { return static_cast<int>(steps.size()); }
    int samples() const { return steps.empty() ? 0 : static_cast<int>(steps.size()) - 1; }
};

// Binary layout: magic "FDWM", version u32, H u32, W u32, T u32, action_dim
// u32, then T records of: flag u8, action f32[action_dim], rgb f32[H*W*3],
// depth f32[H*W], ids u16[H*W], pose count u16, poses (id u16 + 16 f32),
// flow f32[H*W*3]. All little-endian.
void write_episode_file(const std::string& path, const EpisodeData& ep, int h, int w,
                        int action_dim);
EpisodeData read_episode_file(const std::string& path, int expect_h, int expect_w,
                              int expect_action_dim);

struct ManifestEpisode {
    std::string file;
    std::string split;  // train / val / test
    uint32_t crc32 = 0;
    int frames = 0;
};

struct DatasetManifest {
    uint32_t version = kDatasetFormatVersion;
    int h = 0, w = 0;
    int action_dim = 2;
    double d_min = 0.0, d_max = 1.0;
    double flow_scale = 1.0;
    EnvConfig env;
    std::vector<ManifestEpisode> episodes;

    int64_t samples(const std::string& split) const;
    std::vector<int> episode_indices(const std::string& split) const;
};

void save_manifest(const std::string& dir, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& dir);

// Loads one split eagerly and exposes (frame_t, action, flow, frame_t1)
// samples by index; verifies per-file checksums on load.
class DatasetView {
public:
    DatasetView(const std::string& dir, const std::string& split);

    const DatasetManifest& manifest() const { return manifest_; }
    int64_t num_samples() const { return static_cast<int64_t>(samples_.size()); }
    int num_episodes() const { return static_cast<int>(episodes_.size()); }
    const EpisodeData& episode(int i) const { return episodes_[static_cast<size_t>(i)]; }

    struct Sample {
        const StepRecord* now;
        const StepRecord* next;
        int episode;
        int t;
    };
    Sample sample(int64_t i) const;

private:
    DatasetManifest manifest_;
    std::vector<EpisodeData> episodes_;
    std::vector<std::pair<int, int>> samples_;  // (episode, t)
};

}  // namespace fdwm
