#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "kvl/csv.hpp"
#include "kvl/parallel.hpp"
#include "kvl/toy.hpp"

namespace kvl::toy {

namespace {

constexpr std::size_t kLevelStride[3] = {4, 8, 16};

std::size_t level_grid(const SceneConfig& sc, int level) { return sc.image_size / kLevelStride[level]; }

}  // namespace

DetectorModel build_detector(const DetectorConfig& cfg, std::uint64_t seed) {
    if (cfg.encoder_channels.size() != 4) throw ConfigError("detector: encoder_channels must list 4 widths");
    if (cfg.scene.image_size % 16 != 0) throw ConfigError("detector: image_size must be a multiple of 16");
    DetectorModel m;
    m.cfg = cfg;
    Rng rng = Rng(seed).substream("init");
    const auto& ch = cfg.encoder_channels;
    m.stem = make_conv(m.store, "enc.stem", 3, ch[0], 3, 2, 1, rng);
    m.down1 = make_conv(m.store, "enc.down1", ch[0], ch[1], 3, 2, 1, rng);
    m.down2 = make_conv(m.store, "enc.down2", ch[1], ch[2], 3, 2, 1, rng);
    m.down3 = make_conv(m.store, "enc.down3", ch[2], ch[3], 3, 2, 1, rng);
    m.neck = make_neck(m.store, "neck", ch[1], ch[2], ch[3], cfg.scene.image_size / 4, cfg.scene.image_size / 4,
                       cfg.neck, rng);
    const std::size_t head_out = 1 + 4 + static_cast<std::size_t>(cfg.scene.num_classes);
    m.head1 = make_conv1x1(m.store, "head.l1", cfg.neck.c_out, head_out, rng, true);
    m.head2 = make_conv1x1(m.store, "head.l2", cfg.neck.c_out, head_out, rng, true);
    m.head3 = make_conv1x1(m.store, "head.l3", cfg.neck.c_out, head_out, rng, true);
    return m;
}

LevelVars detector_forward(Tape& tape, const DetectorModel& model, const Tensor& image) {
    ensure_finite(image, "detector_forward input");
    Var x = tape.constant(image);
    x = add_scalar(scale(x, 2.0), -1.0);  // [0,1] -> [-1,1]
    Var s = silu(model.stem.forward(tape, model.store, x));
    Var f1 = silu(model.down1.forward(tape, model.store, s));
    Var f2 = silu(model.down2.forward(tape, model.store, f1));
    Var f3 = silu(model.down3.forward(tape, model.store, f2));
    PyramidVars pyr = neck_forward(tape, model.store, model.neck, f1, f2, f3);
    LevelVars out;
    out.l1 = model.head1.forward(tape, model.store, pyr.p1);
    out.l2 = model.head2.forward(tape, model.store, pyr.p2);
    out.l3 = model.head3.forward(tape, model.store, pyr.p3);
    ensure_finite(out.l1.val(), "detector head l1");
    ensure_finite(out.l2.val(), "detector head l2");
    ensure_finite(out.l3.val(), "detector head l3");
    return out;
}

namespace {

struct CellTarget {
    std::size_t row, col;
    double tx, ty, tw, th;
    int cls;
};

std::vector<std::vector<CellTarget>> assign_targets(const DetectorModel& model, const std::vector<GtBox>& boxes) {
    const SceneConfig& sc = model.cfg.scene;
    std::vector<std::vector<CellTarget>> per_level(3);
    for (const GtBox& b : boxes) {
        const int level = size_band(b.w, b.h, sc);
        const std::size_t grid = level_grid(sc, level);
        const double cell = static_cast<double>(kLevelStride[level]);
        std::size_t col = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(b.cx / cell), 0,
                                                                    static_cast<long>(grid) - 1));
        std::size_t row = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(b.cy / cell), 0,
                                                                    static_cast<long>(grid) - 1));
        bool taken = false;
        for (const CellTarget& t : per_level[level]) {
            if (t.row == row && t.col == col) {
                taken = true;  // first box keeps the cell
                break;
            }
        }
        if (taken) continue;
        CellTarget t;
        t.row = row;
        t.col = col;
        t.tx = b.cx / cell - static_cast<double>(col);
        t.ty = b.cy / cell - static_cast<double>(row);
        t.tw = std::log(b.w / cell);
        t.th = std::log(b.h / cell);
        t.cls = b.cls;
        per_level[level].push_back(t);
    }
    return per_level;
}

}  // namespace

Var detection_loss(Tape& tape, const DetectorModel& model, const LevelVars& outs, const std::vector<GtBox>& boxes) {
    const SceneConfig& sc = model.cfg.scene;
    const int nc = sc.num_classes;
    const auto targets = assign_targets(model, boxes);
    const Var levels[3] = {outs.l1, outs.l2, outs.l3};

    Var total = tape.constant(Tensor::scalar(0.0));
    for (int lvl = 0; lvl < 3; ++lvl) {
        const std::size_t g = level_grid(sc, lvl);
        const Var& out = levels[lvl];
        if (out.shape()[1] != g || out.shape()[2] != g) {
            throw DimError("detection_loss: level output " + shape_str(out.shape()) + " does not match grid " +
                           std::to_string(g));
        }
        Tensor tobj({1, g, g});
        Tensor wobj = Tensor::full({1, g, g}, 1.0);
        Tensor txy({2, g, g}), mxy({2, g, g});
        Tensor twh({2, g, g}), mwh({2, g, g});
        Tensor mcls({g, g});
        std::vector<int> labels(g * g, 0);
        for (const CellTarget& t : targets[lvl]) {
            tobj(0, t.row, t.col) = 1.0;
            wobj(0, t.row, t.col) = model.cfg.pos_weight;
            txy(0, t.row, t.col) = t.tx;
            txy(1, t.row, t.col) = t.ty;
            mxy(0, t.row, t.col) = 1.0;
            mxy(1, t.row, t.col) = 1.0;
            twh(0, t.row, t.col) = t.tw;
            twh(1, t.row, t.col) = t.th;
            mwh(0, t.row, t.col) = 1.0;
            mwh(1, t.row, t.col) = 1.0;
            mcls(t.row, t.col) = 1.0;
            labels[t.row * g + t.col] = t.cls;
        }
        const double inv_cells = 1.0 / static_cast<double>(g * g);
        const double inv_pos = 1.0 / std::max<std::size_t>(1, targets[lvl].size());

        Var obj = scale(bce_with_logits_sum(channel_slice(out, 0, 1), std::move(tobj), std::move(wobj)), inv_cells);
        Var xy = smooth_l1_sum(sigmoid(channel_slice(out, 1, 3)), std::move(txy), std::move(mxy));
        Var wh = smooth_l1_sum(channel_slice(out, 3, 5), std::move(twh), std::move(mwh));
        Var cls = softmax_ce_sum(channel_slice(out, 5, 5 + static_cast<std::size_t>(nc)), std::move(labels),
                                 std::move(mcls));
        Var lvl_loss = add(obj, scale(add(xy, wh), model.cfg.box_loss_weight * inv_pos));
        lvl_loss = add(lvl_loss, scale(cls, model.cfg.cls_loss_weight * inv_pos));
        total = add(total, lvl_loss);
    }
    return total;
}

std::vector<Detection> decode_detections(const DetectorModel& model, const Tensor& l1, const Tensor& l2,
                                         const Tensor& l3) {
    const SceneConfig& sc = model.cfg.scene;
    const int nc = sc.num_classes;
    const Tensor* levels[3] = {&l1, &l2, &l3};
    std::vector<Detection> cand;
    for (int lvl = 0; lvl < 3; ++lvl) {
        const Tensor& out = *levels[lvl];
        const std::size_t g = level_grid(sc, lvl);
        const double cell = static_cast<double>(kLevelStride[lvl]);
        for (std::size_t i = 0; i < g; ++i) {
            for (std::size_t j = 0; j < g; ++j) {
                const double obj = sigmoid_scalar(out(0, i, j));
                double mx = out(5, i, j);
                for (int c = 1; c < nc; ++c) mx = std::max(mx, out(5 + static_cast<std::size_t>(c), i, j));
                double denom = 0.0;
                for (int c = 0; c < nc; ++c) denom += std::exp(out(5 + static_cast<std::size_t>(c), i, j) - mx);
                int best_cls = 0;
                double best_p = 0.0;
                for (int c = 0; c < nc; ++c) {
                    const double p = std::exp(out(5 + static_cast<std::size_t>(c), i, j) - mx) / denom;
                    if (p > best_p) {
                        best_p = p;
                        best_cls = c;
                    }
                }
                const double score = obj * best_p;
                if (score < model.cfg.score_threshold) continue;
                Detection d;
                d.cx = (static_cast<double>(j) + sigmoid_scalar(out(1, i, j))) * cell;
                d.cy = (static_cast<double>(i) + sigmoid_scalar(out(2, i, j))) * cell;
                d.w = std::exp(std::clamp(out(3, i, j), -4.0, 4.0)) * cell;
                d.h = std::exp(std::clamp(out(4, i, j), -4.0, 4.0)) * cell;
                d.cls = best_cls;
                d.score = score;
                cand.push_back(d);
            }
        }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    for (const Detection& d : cand) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.cls == d.cls && iou_cxcywh(d.cx, d.cy, d.w, d.h, k.cx, k.cy, k.w, k.h) > model.cfg.nms_iou) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
        if (kept.size() >= model.cfg.max_detections) break;
    }
    return kept;
}

std::vector<Detection> run_inference(const DetectorModel& model, const Tensor& image) {
    Tape tape;
    LevelVars outs = detector_forward(tape, model, image);
    return decode_detections(model, outs.l1.val(), outs.l2.val(), outs.l3.val());
}

namespace {

ApResult evaluate_model(const DetectorModel& model, const std::vector<SyntheticScene>& scenes, const TrainConfig& tc,
                        int threads) {
    std::vector<std::vector<Detection>> preds(scenes.size());
    std::vector<std::vector<GtBox>> truths(scenes.size());
    parallel_for(scenes.size(), threads, [&](std::size_t i) {
        preds[i] = run_inference(model, scenes[i].image);
        truths[i] = scenes[i].boxes;
    });
    if (!tc.coco_sweep) return evaluate_ap(preds, truths, tc.iou_threshold, model.cfg.scene);
    // COCO-style sweep: AP averaged over IoU 0.50:0.05:0.95; AR and the size
    // buckets are reported at the base threshold.
    ApResult base = evaluate_ap(preds, truths, tc.iou_threshold, model.cfg.scene);
    double ap_sum = 0.0;
    int n = 0;
    for (double thr = 0.50; thr < 0.951; thr += 0.05) {
        ap_sum += evaluate_ap(preds, truths, thr, model.cfg.scene).ap;
        ++n;
    }
    base.ap = ap_sum / n;
    return base;
}

std::string diagnostics_dump(const DetectorModel& model, std::size_t epoch, std::size_t batch,
                             const std::vector<std::size_t>& scene_ids) {
    double total_sq = 0.0;
    double worst = -1.0;
    std::string worst_name;
    for (std::size_t id = 0; id < model.store.size(); ++id) {
        const Tensor& p = model.store.value(id);
        double sq = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) sq += p[i] * p[i];
        total_sq += sq;
        if (sq > worst) {
            worst = sq;
            worst_name = model.store.name(id);
        }
    }
    std::string ids;
    for (std::size_t s : scene_ids) ids += (ids.empty() ? "" : ",") + std::to_string(s);
    return "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + " scenes [" + ids +
           "]; total param L2 " + fmt_double(std::sqrt(total_sq)) + "; largest param tensor " + worst_name;
}

}  // namespace

TrainResult train(DetectorModel& model, const TrainConfig& tc) {
    if (tc.train_scenes == 0 || tc.batch_size == 0 || tc.epochs == 0) {
        throw ConfigError("train: epochs, batch_size and train_scenes must be positive");
    }
    Rng root(tc.seed);
    Rng data_rng = root.substream("data");
    Rng val_rng = root.substream("val");
    Rng shuffle_rng = root.substream("shuffle");
    Rng augment_rng = root.substream("augment");

    std::vector<SyntheticScene> train_scenes(tc.train_scenes);
    for (std::size_t i = 0; i < tc.train_scenes; ++i) {
        Rng r = data_rng.substream(i);
        train_scenes[i] = generate_scene(r, model.cfg.scene);
    }
    std::vector<SyntheticScene> val_scenes(tc.val_scenes);
    for (std::size_t i = 0; i < tc.val_scenes; ++i) {
        Rng r = val_rng.substream(i);
        val_scenes[i] = generate_scene(r, model.cfg.scene);
    }

    Adam opt(model.store, AdamConfig{tc.lr, tc.beta1, tc.beta2, 1e-8, tc.weight_decay});
    TrainResult result;

    std::vector<std::size_t> order(tc.train_scenes);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        Rng ep_shuffle = shuffle_rng.substream(epoch);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[ep_shuffle.below(i)]);
        }
        Rng ep_augment = augment_rng.substream(epoch);

        double epoch_loss = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batch_index) {
            const std::size_t bsz = std::min(tc.batch_size, order.size() - start);
            std::vector<double> losses(bsz, 0.0);
            std::vector<std::unordered_map<std::size_t, Tensor>> grads(bsz);
            std::vector<std::size_t> scene_ids(bsz);
            for (std::size_t b = 0; b < bsz; ++b) scene_ids[b] = order[start + b];

            parallel_for(bsz, tc.threads, [&](std::size_t b) {
                Rng aug = ep_augment.substream(scene_ids[b]);
                const bool fh = aug.uniform() < tc.flip_prob;
                const bool fv = aug.uniform() < tc.flip_prob;
                const SyntheticScene sample = flip_scene(train_scenes[scene_ids[b]], fh, fv);
                Tape tape;
                LevelVars outs = detector_forward(tape, model, sample.image);
                Var loss = detection_loss(tape, model, outs, sample.boxes);
                losses[b] = loss.val().item();
                grads[b] = tape.backward(loss);
            });

            std::vector<Tensor> reduced(model.store.size());
            double batch_loss = 0.0;
            for (std::size_t b = 0; b < bsz; ++b) {
                if (!std::isfinite(losses[b])) {
                    throw NumericError("train: non-finite loss; " +
                                       diagnostics_dump(model, epoch, batch_index, scene_ids));
                }
                batch_loss += losses[b];
                for (auto& [id, g] : grads[b]) {
                    if (reduced[id].size() != g.size()) reduced[id] = Tensor(g.shape());
                    for (std::size_t i = 0; i < g.size(); ++i) reduced[id][i] += g[i];
                }
            }
            const double inv_b = 1.0 / static_cast<double>(bsz);
            for (Tensor& g : reduced) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv_b;
            }
            opt.step(reduced);
            epoch_loss += batch_loss;
        }
        epoch_loss /= static_cast<double>(order.size());

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = epoch_loss;
        em.val = evaluate_model(model, val_scenes, tc, tc.threads);
        result.history.push_back(em);
    }
    result.final_val = result.history.back().val;
    return result;
}

void save_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history) {
    std::ofstream os(path);
    if (!os) throw ArgError("cannot open '" + path + "' for writing");
    write_csv_row(os, {"epoch", "split", "loss", "AP", "AR", "AP_S", "AP_M", "AP_L"});
    for (const EpochMetrics& em : history) {
        write_csv_row(os, {std::to_string(em.epoch), "train", fmt_double(em.train_loss), "", "", "", "", ""});
        write_csv_row(os, {std::to_string(em.epoch), "val", "", fmt_double(em.val.ap), fmt_double(em.val.ar),
                           fmt_double(em.val.ap_small), fmt_double(em.val.ap_medium), fmt_double(em.val.ap_large)});
    }
}

void apply_ablation_mode(NeckConfig& neck, const std::string& mode) {
    if (mode == "nearest") {
        neck.use_ckspp = false;
        neck.upsample = UpsampleMode::Nearest;
    } else if (mode == "enau") {
        neck.use_ckspp = false;
        neck.upsample = UpsampleMode::Enau;
    } else if (mode == "enau+ckspp") {
        neck.use_ckspp = true;
        neck.upsample = UpsampleMode::Enau;
    } else {
        throw ConfigError("unknown ablation mode '" + mode + "' (expected nearest, enau or enau+ckspp)");
    }
}

AblationResult run_ablation(const DetectorConfig& base_cfg, const TrainConfig& base_tc,
                            const std::vector<std::uint64_t>& seeds, int threads) {
    if (seeds.size() < 3) throw ConfigError("run_ablation: at least 3 seeds required");
    const std::vector<std::string> modes{"nearest", "enau", "enau+ckspp"};
    struct RunOut {
        double ap = 0, ar = 0;
    };
    std::vector<RunOut> outs(modes.size() * seeds.size());

    parallel_for(outs.size(), threads, [&](std::size_t run) {
        const std::size_t mi = run / seeds.size();
        const std::size_t si = run % seeds.size();
        DetectorConfig cfg = base_cfg;
        apply_ablation_mode(cfg.neck, modes[mi]);
        TrainConfig tc = base_tc;
        tc.seed = seeds[si];
        tc.ablation_mode = modes[mi];
        tc.threads = 1;  // outer loop already parallel
        DetectorModel model = build_detector(cfg, seeds[si]);
        TrainResult res = train(model, tc);
        outs[run] = {res.final_val.ap, res.final_val.ar};
    });

    AblationResult result;
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        AblationRow row;
        row.mode = modes[mi];
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            row.aps.push_back(outs[mi * seeds.size() + si].ap);
            row.ars.push_back(outs[mi * seeds.size() + si].ar);
        }
        auto mean_std = [](const std::vector<double>& xs, double& mean, double& sd) {
            mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
            double sq = 0.0;
            for (double x : xs) sq += (x - mean) * (x - mean);
            sd = xs.size() > 1 ? std::sqrt(sq / static_cast<double>(xs.size() - 1)) : 0.0;
        };
        mean_std(row.aps, row.mean_ap, row.std_ap);
        mean_std(row.ars, row.mean_ar, row.std_ar);
        result.rows.push_back(std::move(row));
    }
    result.ordering_holds =
        result.rows[0].mean_ap < result.rows[1].mean_ap && result.rows[1].mean_ap < result.rows[2].mean_ap;
    return result;
}

}  // namespace kvl::toy
