#include "fdwm/evalrun.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fdwm/io.hpp"
#include "fdwm/rng.hpp"

namespace fdwm {

namespace {

struct Traj {
    const EpisodeData* ep;
    int len;  // number of actions used
};

std::vector<Traj> collect_trajectories(const DatasetView& test, const EvalOptions& opt) {
    std::vector<Traj> out;
    for (int e = 0; e < test.num_episodes(); ++e) {
        if (opt.max_trajectories >= 0 && static_cast<int>(out.size()) >= opt.max_trajectories)
            break;
        const EpisodeData& ep = test.episode(e);
        int len = ep.samples();
        if (opt.rollout_len > 0) len = std::min(len, opt.rollout_len);
        if (len > 0) out.push_back({&ep, len});
    }
    return out;
}

// GT | prediction | predicted-flow | gt-flow panel, one row per frame
void write_panel(const std::string& path, const std::vector<const RgbdFrame*>& gt,
                 const std::vector<const RgbdFrame*>& pred,
                 const std::vector<const SceneFlowField*>& pf,
                 const std::vector<const SceneFlowField*>& gf) {
    if (gt.empty()) return;
    int h = gt[0]->h, w = gt[0]->w;
    int rows = static_cast<int>(gt.size());
    int pw = 4 * w + 3;
    std::vector<float> img(static_cast<size_t>(rows) * (h + 1) * pw * 3, 1.0f);
    auto blit = [&](int row, int col, const std::vector<float>& rgb) {
        for (int v = 0; v < h; ++v)
            for (int u = 0; u < w; ++u)
                for (int c = 0; c < 3; ++c)
                    img[((static_cast<size_t>(row) * (h + 1) + v) * pw + col * (w + 1) + u) * 3 +
                        c] = rgb[(static_cast<size_t>(v) * w + u) * 3 + c];
    };
    for (int r = 0; r < rows; ++r) {
        blit(r, 0, gt[static_cast<size_t>(r)]->rgb);
        blit(r, 1, pred[static_cast<size_t>(r)]->rgb);
        blit(r, 2, flow_to_rgb(*pf[static_cast<size_t>(r)]));
        blit(r, 3, flow_to_rgb(*gf[static_cast<size_t>(r)]));
    }
    write_ppm(path, img, rows * (h + 1), pw);
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

EvalSummary eval_video_prediction(WorldModel<float>& model, const DatasetView& test,
                                  const NoiseSchedule& ns, const EvalOptions& opt) {
    std::vector<Traj> trajs = collect_trajectories(test, opt);
    if (trajs.empty()) throw DataError("eval: no test trajectories");

    SamplerConfig sc;
    sc.ddim_steps = opt.ddim_steps;

    // batch trajectories of equal action count
    int common = trajs[0].len;
    for (const Traj& t : trajs) common = std::min(common, t.len);

    std::vector<RgbdFrame> starts;
    std::vector<std::vector<Action>> actions;
    for (const Traj& t : trajs) {
        starts.push_back(t.ep->steps[0].frame);
        std::vector<Action> seq;
        for (int i = 0; i < common; ++i)
            seq.push_back({static_cast<double>(t.ep->steps[static_cast<size_t>(i)].action[0]),
                           static_cast<double>(t.ep->steps[static_cast<size_t>(i)].action[1])});
        actions.push_back(std::move(seq));
    }

    auto roll = model.rollout_batch(starts, actions, ns, sc, opt.seed);

    EvalSummary summary;
    std::vector<double> psnrs, ssims, epes, moved;
    std::vector<double> p_psnrs, p_ssims, p_moved;
    for (size_t b = 0; b < trajs.size(); ++b) {
        const EpisodeData& ep = *trajs[b].ep;
        for (int t = 1; t <= common; ++t) {
            const RgbdFrame& gt = ep.steps[static_cast<size_t>(t)].frame;
            const RgbdFrame& pred = roll.frames[static_cast<size_t>(t)][b];
            const SceneFlowField& gtf = ep.steps[static_cast<size_t>(t) - 1].flow;
            auto mask = moved_mask(gtf);

            MetricsRow row;
            row.trajectory = static_cast<int>(b);
            row.t = t;
            row.psnr = psnr(pred, gt);
            row.ssim = ssim(pred, gt);
            row.moved_psnr = psnr_masked(pred, gt, mask);
            if (model.cfg.mode != Mode::Vanilla) {
                const SceneFlowField& pf = roll.flows[static_cast<size_t>(t) - 1][b];
                row.epe = flow_epe(pf, gtf);
                row.flow_mse = flow_mse(pf, gtf);
            }
            summary.rows.push_back(row);
            psnrs.push_back(row.psnr);
            ssims.push_back(row.ssim);
            epes.push_back(row.epe);
            moved.push_back(row.moved_psnr);

            p_psnrs.push_back(psnr(ep.steps[0].frame, gt));
            p_ssims.push_back(ssim(ep.steps[0].frame, gt));
            p_moved.push_back(psnr_masked(ep.steps[0].frame, gt, mask));
        }
    }
    summary.mean_psnr = mean_of(psnrs);
    summary.std_psnr = std_of(psnrs);
    summary.mean_ssim = mean_of(ssims);
    summary.std_ssim = std_of(ssims);
    summary.mean_epe = mean_of(epes);
    summary.mean_moved_psnr = mean_of(moved);
    summary.persistence_psnr = mean_of(p_psnrs);
    summary.persistence_ssim = mean_of(p_ssims);
    summary.persistence_moved_psnr = mean_of(p_moved);

    if (!opt.out_dir.empty()) {
        ensure_dir(opt.out_dir);
        std::ofstream csv(opt.out_dir + "/video_prediction.csv");
        csv << "trajectory,t,psnr,ssim,flow_epe,flow_mse,moved_psnr\n";
        for (const auto& r : summary.rows)
            csv << r.trajectory << "," << r.t << "," << r.psnr << "," << r.ssim << "," << r.epe
                << "," << r.flow_mse << "," << r.moved_psnr << "\n";
        std::ofstream agg(opt.out_dir + "/video_prediction_summary.csv");
        agg << "metric,mean,stddev\n";
        agg << "psnr," << summary.mean_psnr << "," << summary.std_psnr << "\n";
        agg << "ssim," << summary.mean_ssim << "," << summary.std_ssim << "\n";
        agg << "flow_epe," << summary.mean_epe << ",\n";
        agg << "moved_psnr," << summary.mean_moved_psnr << ",\n";
        agg << "persistence_psnr," << summary.persistence_psnr << ",\n";
        agg << "persistence_ssim," << summary.persistence_ssim << ",\n";
        agg << "persistence_moved_psnr," << summary.persistence_moved_psnr << ",\n";

        int panels = std::min<int>(opt.panel_trajectories, static_cast<int>(trajs.size()));
        for (int b = 0; b < panels; ++b) {
            std::vector<const RgbdFrame*> gt, pred;
            std::vector<const SceneFlowField*> pf, gf;
            for (int t = 1; t <= common; ++t) {
                gt.push_back(&trajs[static_cast<size_t>(b)].ep->steps[static_cast<size_t>(t)].frame);
                pred.push_back(&roll.frames[static_cast<size_t>(t)][static_cast<size_t>(b)]);
                pf.push_back(&roll.flows[static_cast<size_t>(t) - 1][static_cast<size_t>(b)]);
                gf.push_back(
                    &trajs[static_cast<size_t>(b)].ep->steps[static_cast<size_t>(t) - 1].flow);
            }
            write_panel(opt.out_dir + "/panel_traj" + std::to_string(b) + ".ppm", gt, pred, pf,
                        gf);
        }
    }
    return summary;
}

namespace {
// Runs batched single-step predictions over every test sample. Chunk
// composition is fixed by dataset order, so results are worker-independent.
template <typename Fn>
void for_each_single_step(WorldModel<float>& model, const DatasetView& test,
                          const NoiseSchedule& ns, const EvalOptions& opt, bool reversed_too,
                          Fn&& fn) {
    SamplerConfig sc;
    sc.ddim_steps = opt.ddim_steps;
    const int64_t n = test.num_samples();
    const int chunk = 64;
    for (int64_t lo = 0; lo < n; lo += chunk) {
        int64_t hi = std::min(n, lo + chunk);
        std::vector<RgbdFrame> frames;
        std::vector<Action> actions;
        std::vector<const SceneFlowField*> gtf;
        for (int64_t i = lo; i < hi; ++i) {
            auto s = test.sample(i);
            frames.push_back(s.now->frame);
            actions.push_back({static_cast<double>(s.now->action[0]),
                               static_cast<double>(s.now->action[1])});
            gtf.push_back(&s.now->flow);
        }
        uint64_t chunk_seed = mix_seed(opt.seed, static_cast<uint64_t>(lo));
        auto roll = model.predict_next_batch(frames, actions, ns, sc, chunk_seed);

        WorldModel<float>::RolloutResult rev;
        if (reversed_too) {
            // negate the predicted flows, action unchanged, noise-paired seed
            std::vector<SceneFlowField> neg;
            std::vector<const SceneFlowField*> neg_ptr;
            neg.reserve(roll.flows[0].size());
            for (const auto& f : roll.flows[0]) {
                SceneFlowField nf = f;
                for (auto& v : nf.flow) v = -v;
                neg.push_back(std::move(nf));
            }
            for (const auto& f : neg) neg_ptr.push_back(&f);
            rev = model.predict_next_batch(frames, actions, ns, sc, chunk_seed, &neg_ptr);
        }

        for (int64_t i = lo; i < hi; ++i) {
            auto s = test.sample(i);
            size_t j = static_cast<size_t>(i - lo);
            fn(i, roll.frames[1][j], roll.flows[0][j], *gtf[j], s.next->frame,
               reversed_too ? &rev.frames[1][j] : nullptr);
        }
    }
}
}  // namespace

std::vector<SampleMetric> eval_single_step(WorldModel<float>& model, const DatasetView& test,
                                           const NoiseSchedule& ns, const EvalOptions& opt) {
    std::vector<SampleMetric> out;
    for_each_single_step(model, test, ns, opt, false,
                         [&](int64_t i, const RgbdFrame& pred, const SceneFlowField& pf,
                             const SceneFlowField& gtf, const RgbdFrame& gt, const RgbdFrame*) {
                             SampleMetric m;
                             m.sample = i;
                             m.epe = flow_epe(pf, gtf);
                             m.psnr = psnr(pred, gt);
                             m.ssim = ssim(pred, gt);
                             out.push_back(m);
                         });
    return out;
}

ReversalSummary reverse_flow_ablation(WorldModel<float>& model, const DatasetView& test,
                                      const NoiseSchedule& ns, const EvalOptions& opt) {
    if (model.cfg.mode == Mode::Vanilla)
        throw std::invalid_argument("reverse ablation: vanilla mode has no flow to reverse");
    ReversalSummary rs;
    double sum_normal = 0.0, sum_rev = 0.0;
    std::vector<std::array<double, 2>> rows;
    for_each_single_step(
        model, test, ns, opt, true,
        [&](int64_t, const RgbdFrame& pred, const SceneFlowField&, const SceneFlowField&,
            const RgbdFrame& gt, const RgbdFrame* rev) {
            double pn = psnr(pred, gt);
            double pr = psnr(*rev, gt);
            sum_normal += pn;
            sum_rev += pr;
            rows.push_back({pn, pr});
            ++rs.samples;
        });
    if (rs.samples == 0) throw DataError("reverse ablation: no test samples");
    rs.mean_psnr_normal = sum_normal / static_cast<double>(rs.samples);
    rs.mean_psnr_reversed = sum_rev / static_cast<double>(rs.samples);
    rs.mean_delta_psnr = rs.mean_psnr_normal - rs.mean_psnr_reversed;
    if (!opt.out_dir.empty()) {
        ensure_dir(opt.out_dir);
        std::ofstream csv(opt.out_dir + "/reversal.csv");
        csv << "psnr_normal,psnr_reversed,delta\n";
        for (const auto& r : rows) csv << r[0] << "," << r[1] << "," << (r[0] - r[1]) << "\n";
    }
    return rs;
}

CorrelationSummary correlation_analysis(const std::vector<SampleMetric>& table,
                                        const std::string& out_dir) {
    if (table.size() < 10)
        throw std::invalid_argument(
            "correlation_analysis: fewer than 10 samples is statistically meaningless");
    std::vector<double> epe, ps, ss;
    for (const auto& r : table) {
        epe.push_back(r.epe);
        ps.push_back(r.psnr);
        ss.push_back(r.ssim);
    }
    CorrelationSummary cs;
    cs.samples = static_cast<int64_t>(table.size());
    cs.r_epe_psnr = pearson_r(epe, ps);
    cs.r_epe_ssim = pearson_r(epe, ss);
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        std::ofstream csv(out_dir + "/correlation_scatter.csv");
        csv << "sample,flow_epe,psnr,ssim\n";
        for (const auto& r : table)
            csv << r.sample << "," << r.epe << "," << r.psnr << "," << r.ssim << "\n";
        std::ofstream agg(out_dir + "/correlation.csv");
        agg << "pair,r,n\n";
        agg << "epe_psnr," << cs.r_epe_psnr << "," << cs.samples << "\n";
        agg << "epe_ssim," << cs.r_epe_ssim << "," << cs.samples << "\n";
    }
    return cs;
}

}  // namespace fdwm
