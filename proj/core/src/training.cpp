#include "fdwm/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>

#include "fdwm/io.hpp"
#include "fdwm/rng.hpp"

namespace fdwm {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!std::isfinite(alpha)) throw std::invalid_argument("train: alpha must be finite");
    if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be > 0");
    model.validate();
}

std::vector<int64_t> batch_indices(uint64_t seed, int64_t step, int64_t num_samples,
                                   int batch_size) {
    if (num_samples < 1) throw std::invalid_argument("batch_indices: empty dataset");
    int64_t bpe = (num_samples + batch_size - 1) / batch_size;  // batches per epoch
    int64_t epoch = step / bpe;
    int64_t slot = step % bpe;

    // epoch permutation, Fisher-Yates seeded by (seed, epoch)
    std::vector<int64_t> perm(static_cast<size_t>(num_samples));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(mix_seed(seed, static_cast<uint64_t>(epoch), 0x5a4ULL));
    for (int64_t i = num_samples - 1; i > 0; --i) {
        int64_t j = static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(i + 1));
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }
    int64_t lo = slot * batch_size;
    int64_t hi = std::min<int64_t>(num_samples, lo + batch_size);
    return {perm.begin() + lo, perm.begin() + hi};
}

template <typename T>
TrainBatch<T> assemble_batch(const DatasetView& data, const std::vector<int64_t>& indices,
                             const NormStats& norm, uint64_t run_seed, int64_t step) {
    if (indices.empty()) throw std::invalid_argument("assemble_batch: empty batch");
    std::vector<const RgbdFrame*> ft, ft1;
    std::vector<const SceneFlowField*> fl;
    std::vector<Action> acts;
    TrainBatch<T> b;
    for (int64_t i : indices) {
        auto s = data.sample(i);
        ft.push_back(&s.now->frame);
        ft1.push_back(&s.next->frame);
        fl.push_back(&s.now->flow);
        acts.push_back({static_cast<double>(s.now->action.at(0)),
                        static_cast<double>(s.now->action.at(1))});
        b.draw_seeds.push_back(mix_seed(run_seed, static_cast<uint64_t>(step),
                                        static_cast<uint64_t>(i)));
        b.sample_indices.push_back(i);
    }
    b.frame_t = frames_to_tensor<T>(ft, norm);
    b.frame_t1 = frames_to_tensor<T>(ft1, norm);
    b.action_n = actions_to_tensor<T>(acts, norm.a_max);
    b.flow_gt = flows_to_tensor<T>(fl, data.manifest().h, data.manifest().w);
    return b;
}

template <typename T>
LossParts total_loss(Tape<T>& g, ParamCtx<T>& ctx, const WorldModel<T>& model,
                     const TrainBatch<T>& batch, const NoiseSchedule& ns, double alpha, Mode mode,
                     typename Tape<T>::Id* loss_out) {
    const int b = batch.frame_t.dim(0);
    if (b < 1) throw std::invalid_argument("total_loss: empty batch");
    auto frame = g.leaf(batch.frame_t, false);
    auto act = g.leaf(batch.action_n, false);

    // per-sample (k, eps) draws, fixed by the stored seeds
    std::vector<int> ks(static_cast<size_t>(b));
    Tensor<T> eps(batch.frame_t1.shape);
    Tensor<T> zk(batch.frame_t1.shape);
    const int64_t chw = eps.numel() / b;
    for (int i = 0; i < b; ++i) {
        Rng rng(batch.draw_seeds[static_cast<size_t>(i)]);
        int k = rng.uniform_int(1, ns.k_steps);
        ks[static_cast<size_t>(i)] = k;
        T sa = static_cast<T>(std::sqrt(ns.alpha_bar_at(k)));
        T sb = static_cast<T>(std::sqrt(1.0 - ns.alpha_bar_at(k)));
        for (int64_t j = i * chw; j < (i + 1) * chw; ++j) {
            T e = static_cast<T>(rng.normal());
            eps.data[static_cast<size_t>(j)] = e;
            zk.data[static_cast<size_t>(j)] =
                sa * batch.frame_t1.data[static_cast<size_t>(j)] + sb * e;
        }
    }
    auto eps_leaf = g.leaf(eps, false);
    auto zk_leaf = g.leaf(zk, false);
    auto depth1 = model.depth_channel(ctx, frame);

    typename Tape<T>::Id l_flow = -1;
    typename Tape<T>::Id ct = -1;
    if (mode == Mode::Vanilla) {
        ct = model.build_condition_t(ctx, depth1, -1);
    } else {
        auto f_hat = model.flow_predict_t(ctx, frame, act);
        auto f_gt = g.leaf(batch.flow_gt, false);
        l_flow = g.mse(f_hat, f_gt);
        // septrain decouples the stages: stage 2 sees ground-truth flow
        ct = model.build_condition_t(ctx, depth1,
                                     mode == Mode::Septrain ? f_gt : f_hat);
    }
    auto eps_hat = model.denoise_eps_t(ctx, zk_leaf, frame, ct, act, ks);
    auto l_diff = g.mse(eps_hat, eps_leaf);

    typename Tape<T>::Id total =
        l_flow >= 0 ? g.add(l_diff, g.scale(l_flow, static_cast<T>(alpha))) : l_diff;
    if (loss_out) *loss_out = total;

    LossParts parts;
    parts.diff = static_cast<double>(g.value(l_diff).data[0]);
    parts.flow = l_flow >= 0 ? static_cast<double>(g.value(l_flow).data[0]) : 0.0;
    parts.total = static_cast<double>(g.value(total).data[0]);
    return parts;
}

namespace {

std::string train_config_json(const TrainConfig& c, const NormStats& norm) {
    json j{{"mode", mode_to_string(c.mode)},
           {"alpha", c.alpha},
           {"steps", c.steps},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"weight_decay", c.weight_decay},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every},
           {"k_steps", c.k_steps},
           {"beta_start", c.beta_start},
           {"beta_end", c.beta_end},
           {"model", json::parse(c.model.to_json())},
           {"norm", {{"d_min", norm.d_min},
                     {"d_max", norm.d_max},
                     {"flow_scale", norm.flow_scale},
                     {"a_max", norm.a_max}}}};
    return j.dump();
}

void parse_train_config_json(const std::string& s, TrainConfig& c, NormStats& norm) {
    json j = json::parse(s);
    c.mode = mode_from_string(j.at("mode"));
    c.alpha = j.at("alpha");
    c.steps = j.at("steps");
    c.batch_size = j.at("batch_size");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.seed = j.at("seed");
    c.checkpoint_every = j.at("checkpoint_every");
    c.k_steps = j.at("k_steps");
    c.beta_start = j.at("beta_start");
    c.beta_end = j.at("beta_end");
    c.model = ModelConfig::from_json(j.at("model").dump());
    norm.d_min = j.at("norm").at("d_min");
    norm.d_max = j.at("norm").at("d_max");
    norm.flow_scale = j.at("norm").at("flow_scale");
    norm.a_max = j.at("norm").at("a_max");
}

constexpr char kCkptMagic[4] = {'F', 'D', 'C', 'K'};

void write_block(std::ostream& os, const std::string& name, const Tensor<float>& t) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int e : t.shape) write_u32(os, static_cast<uint32_t>(e));
    write_f32s(os, t.data.data(), t.data.size());
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const WorldModel<T>& model, const AdamW<T>& opt,
                     int64_t step, const TrainConfig& config) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    std::string cfg = train_config_json(config, model.norm);
    os.write(kCkptMagic, 4);
    write_u32(os, kCheckpointFormatVersion);
    write_u64(os, fnv1a64(cfg));
    write_u32(os, static_cast<uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    write_u64(os, static_cast<uint64_t>(step));

    uint32_t n_blocks = static_cast<uint32_t>(model.params.size() * 3);
    write_u32(os, n_blocks);
    for (size_t i = 0; i < model.params.size(); ++i) {
        const auto& e = model.params.entries[i];
        write_block(os, "p." + e.name, e.value.template cast<float>());
        write_block(os, "m." + e.name, opt.states[i].first_moment.template cast<float>());
        write_block(os, "v." + e.name, opt.states[i].second_moment.template cast<float>());
    }
    if (!os) throw DataError("short write: " + path);
}

Checkpoint load_checkpoint_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw DataError("bad checkpoint magic: " + path);
    uint32_t version = read_u32(is);
    if (version != kCheckpointFormatVersion)
        throw DataError("incompatible checkpoint format version in " + path);
    uint64_t want_hash = read_u64(is);
    uint32_t cfg_len = read_u32(is);
    std::string cfg(cfg_len, '\0');
    is.read(cfg.data(), cfg_len);
    if (!is) throw DataError("truncated checkpoint (config): " + path);
    if (fnv1a64(cfg) != want_hash)
        throw DataError("checkpoint config hash mismatch (corrupt file): " + path);

    Checkpoint ck;
    try {
        parse_train_config_json(cfg, ck.train_config, ck.norm);
    } catch (const json::exception& e) {
        throw DataError("checkpoint config unreadable: " + path + ": " + e.what());
    }
    ck.model_config = ck.train_config.model;
    ck.step = static_cast<int64_t>(read_u64(is));

    uint32_t n_blocks = read_u32(is);
    for (uint32_t i = 0; i < n_blocks; ++i) {
        uint32_t name_len = read_u32(is);
        if (name_len > 4096) throw DataError("corrupt checkpoint block name: " + path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw DataError("truncated checkpoint: " + path);
        uint32_t rank = read_u32(is);
        if (rank > 8) throw DataError("corrupt checkpoint block rank: " + path);
        std::vector<int> shape;
        int64_t numel = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            uint32_t e = read_u32(is);
            if (e == 0 || e > (1u << 28)) throw DataError("corrupt checkpoint extent: " + path);
            shape.push_back(static_cast<int>(e));
            numel *= e;
        }
        Tensor<float> t(shape);
        read_f32s(is, t.data.data(), static_cast<size_t>(numel));
        ck.blocks.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

template <typename T>
void restore_model(const Checkpoint& ck, WorldModel<T>& model, AdamW<T>* opt) {
    auto find_block = [&](const std::string& name) -> const Tensor<float>& {
        for (const auto& [n, t] : ck.blocks)
            if (n == name) return t;
        throw DataError("checkpoint missing block: " + name);
    };
    for (size_t i = 0; i < model.params.size(); ++i) {
        auto& e = model.params.entries[i];
        const Tensor<float>& p = find_block("p." + e.name);
        if (p.shape != e.value.shape)
            throw DataError("checkpoint block shape mismatch for " + e.name);
        e.value = p.template cast<T>();
        if (opt) {
            opt->states[i].first_moment = find_block("m." + e.name).template cast<T>();
            opt->states[i].second_moment = find_block("v." + e.name).template cast<T>();
            opt->states[i].step_count = ck.step;
        }
    }
}

template <typename T>
WorldModel<T> load_model(const std::string& path, NoiseSchedule* ns_out) {
    Checkpoint ck = load_checkpoint_raw(path);
    WorldModel<T> model(ck.model_config, ck.norm, /*seed=*/0);
    restore_model(ck, model, static_cast<AdamW<T>*>(nullptr));
    if (ns_out)
        *ns_out = linear_schedule(ck.train_config.k_steps, ck.train_config.beta_start,
                                  ck.train_config.beta_end);
    return model;
}

TrainResult train(const TrainConfig& config) {
    config.validate();
    ensure_dir(config.out_dir);

    DatasetView data(config.dataset_dir, "train");
    if (data.num_samples() < 1) throw DataError("dataset has no train samples");
    NormStats norm;
    norm.d_min = data.manifest().d_min;
    norm.d_max = data.manifest().d_max;
    norm.flow_scale = data.manifest().flow_scale;
    norm.a_max = data.manifest().env.a_max;

    ModelConfig mc = config.model;
    mc.mode = config.mode;
    mc.h = data.manifest().h;
    mc.w = data.manifest().w;

    WorldModel<float> model(mc, norm, mix_seed(config.seed, 0x1417ULL));
    AdamW<float> opt(model.params, static_cast<float>(config.learning_rate),
                     static_cast<float>(config.weight_decay));
    NoiseSchedule ns = linear_schedule(config.k_steps, config.beta_start, config.beta_end);

    int64_t start_step = 0;

    TrainConfig saved_cfg = config;
    saved_cfg.model = mc;
    saved_cfg.resume_from.clear();

    if (!config.resume_from.empty()) {
        Checkpoint ck = load_checkpoint_raw(config.resume_from);
        TrainConfig ck_cfg = ck.train_config;
        ck_cfg.resume_from.clear();
        if (fnv1a64(train_config_json(ck_cfg, ck.norm)) !=
            fnv1a64(train_config_json(saved_cfg, norm)))
            throw DataError("checkpoint " + config.resume_from +
                            " is incompatible with the current training configuration");
        restore_model(ck, model, &opt);
        start_step = ck.step;
        if (start_step >= config.steps)
            throw DataError("checkpoint already at or past the requested step count");
    }

    std::string metrics_path = config.out_dir + "/metrics.csv";
    std::ofstream metrics(metrics_path);
    metrics << "step,total,diff,flow,grad_norm\n";

    TrainResult result;
    result.metrics_path = metrics_path;

    for (int64_t s = start_step; s < config.steps; ++s) {
        auto idx = batch_indices(mix_seed(config.seed, 0xba7cULL), s, data.num_samples(),
                                 config.batch_size);
        TrainBatch<float> batch =
            assemble_batch<float>(data, idx, norm, config.seed, s);

        Tape<float> g;
        ParamCtx<float> ctx(g, model.params, true);
        Tape<float>::Id loss_id = -1;
        LossParts parts =
            total_loss(g, ctx, model, batch, ns, config.alpha, config.mode, &loss_id);
        g.backward(loss_id);

        double gnorm2 = 0.0;
        for (size_t i = 0; i < model.params.size(); ++i) {
            Tensor<float> gr = ctx.grad_of(static_cast<int>(i));
            for (float v : gr.data) {
                if (!std::isfinite(v))
                    throw std::runtime_error("train: non-finite gradient at step " +
                                             std::to_string(s));
                gnorm2 += static_cast<double>(v) * v;
            }
        }
        double gnorm = std::sqrt(gnorm2);
        result.max_grad_norm = std::max(result.max_grad_norm, gnorm);
        opt.step(model.params, ctx);

        if (s == 0) result.first = parts;
        result.last = parts;
        if (s % config.log_every == 0 || s + 1 == config.steps) {
            metrics << s << "," << parts.total << "," << parts.diff << "," << parts.flow << ","
                    << gnorm << "\n";
            metrics.flush();
            std::cout << "step " << s << " total " << parts.total << " diff " << parts.diff
                      << " flow " << parts.flow << " gnorm " << gnorm << std::endl;
        }
        if (config.checkpoint_every > 0 && (s + 1) % config.checkpoint_every == 0 &&
            s + 1 != config.steps) {
            save_checkpoint(config.out_dir + "/ckpt_" + std::to_string(s + 1) + ".ckpt", model,
                            opt, s + 1, saved_cfg);
        }
    }

    result.checkpoint_path = config.out_dir + "/ckpt_final.ckpt";
    save_checkpoint(result.checkpoint_path, model, opt, config.steps, saved_cfg);
    return result;
}

template TrainBatch<float> assemble_batch<float>(const DatasetView&, const std::vector<int64_t>&,
                                                 const NormStats&, uint64_t, int64_t);
template TrainBatch<double> assemble_batch<double>(const DatasetView&, const std::vector<int64_t>&,
                                                   const NormStats&, uint64_t, int64_t);
template LossParts total_loss<float>(Tape<float>&, ParamCtx<float>&, const WorldModel<float>&,
                                     const TrainBatch<float>&, const NoiseSchedule&, double, Mode,
                                     Tape<float>::Id*);
template LossParts total_loss<double>(Tape<double>&, ParamCtx<double>&, const WorldModel<double>&,
                                      const TrainBatch<double>&, const NoiseSchedule&, double,
                                      Mode, Tape<double>::Id*);
template void save_checkpoint<float>(const std::string&, const WorldModel<float>&,
                                     const AdamW<float>&, int64_t, const TrainConfig&);
template void save_checkpoint<double>(const std::string&, const WorldModel<double>&,
                                      const AdamW<double>&, int64_t, const TrainConfig&);
template void restore_model<float>(const Checkpoint&, WorldModel<float>&, AdamW<float>*);
template void restore_model<double>(const Checkpoint&, WorldModel<double>&, AdamW<double>*);
template WorldModel<float> load_model<float>(const std::string&, NoiseSchedule*);
template WorldModel<double> load_model<double>(const std::string&, NoiseSchedule*);

}  // namespace fdwm
