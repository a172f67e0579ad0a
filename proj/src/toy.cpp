#include "kvl/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace kvl::toy {

namespace {

struct ClassStyle {
    double r, g, b;
};

// One shape + color per class: rect, ellipse, diamond, ring.
constexpr ClassStyle kStyles[4] = {
    {0.90, 0.20, 0.15},
    {0.15, 0.85, 0.20},
    {0.20, 0.35, 0.95},
    {0.95, 0.85, 0.15},
};

bool inside_shape(int cls, double dx, double dy, double rx, double ry) {
    const double ex = dx / rx, ey = dy / ry;
    switch (cls % 4) {
        case 0:
            return std::abs(ex) <= 1.0 && std::abs(ey) <= 1.0;
        case 1:
            return ex * ex + ey * ey <= 1.0;
        case 2:
            return std::abs(ex) + std::abs(ey) <= 1.0;
        default: {
            const double rr = ex * ex + ey * ey;
            return rr <= 1.0 && rr >= 0.45;
        }
    }
}

void band_range(const SceneConfig& cfg, int band, double& lo, double& hi) {
    switch (band) {
        case 0:
            lo = cfg.small_lo;
            hi = cfg.small_hi;
            break;
        case 1:
            lo = cfg.medium_lo;
            hi = cfg.medium_hi;
            break;
        default:
            lo = cfg.large_lo;
            hi = cfg.large_hi;
            break;
    }
}

}  // namespace

int size_band(double w, double h, const SceneConfig& cfg) {
    const double side = std::sqrt(w * h);
    const double sm_cut = 0.5 * (cfg.small_hi + cfg.medium_lo);
    const double md_cut = 0.5 * (cfg.medium_hi + cfg.large_lo);
    if (side < sm_cut) return 0;
    if (side < md_cut) return 1;
    return 2;
}

double iou_cxcywh(double acx, double acy, double aw, double ah, double bcx, double bcy, double bw, double bh) {
    const double ax1 = acx - aw / 2, ax2 = acx + aw / 2, ay1 = acy - ah / 2, ay2 = acy + ah / 2;
    const double bx1 = bcx - bw / 2, bx2 = bcx + bw / 2, by1 = bcy - bh / 2, by2 = bcy + bh / 2;
    const double ix = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
    const double iy = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
    const double inter = ix * iy;
    const double uni = aw * ah + bw * bh - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

SyntheticScene generate_scene(Rng& rng, const SceneConfig& cfg) {
    const std::size_t s = cfg.image_size;
    SyntheticScene scene;
    scene.image = Tensor({3, s, s});
    Tensor& img = scene.image;

    double base[3];
    for (double& c : base) c = rng.uniform(0.15, 0.35);
    const double a1 = rng.uniform(0.02, 0.06);
    const double f1x = rng.uniform(0.5, 3.0), f1y = rng.uniform(0.5, 3.0);
    const double ph1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double a2 = rng.uniform(0.01, 0.04);
    const double f2x = rng.uniform(2.0, 6.0), f2y = rng.uniform(2.0, 6.0);
    const double ph2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double gain[3];
    for (double& g : gain) g = rng.uniform(0.5, 1.0);

    const double inv_s = 1.0 / static_cast<double>(s);
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            const double fx = static_cast<double>(x) * inv_s;
            const double fy = static_cast<double>(y) * inv_s;
            const double tex = a1 * std::sin(2.0 * std::numbers::pi * (f1x * fx + f1y * fy) + ph1) +
                               a2 * std::sin(2.0 * std::numbers::pi * (f2x * fx - f2y * fy) + ph2);
            for (int c = 0; c < 3; ++c) {
                img(static_cast<std::size_t>(c), y, x) = std::clamp(base[c] + gain[c] * tex, 0.0, 1.0);
            }
        }
    }
    for (std::size_t i = 0; i < img.size(); ++i) {
        img[i] = std::clamp(img[i] + rng.uniform(-0.02, 0.02), 0.0, 1.0);
    }

    const std::size_t n_boxes = 1 + rng.below(cfg.max_boxes);
    const double sd = static_cast<double>(s);
    for (std::size_t b = 0; b < n_boxes; ++b) {
        GtBox box;
        for (int attempt = 0; attempt < 20; ++attempt) {
            const int band = static_cast<int>(rng.below(3));
            double lo, hi;
            band_range(cfg, band, lo, hi);
            box.w = rng.uniform(lo, hi);
            box.h = rng.uniform(lo, hi);
            box.cx = rng.uniform(box.w / 2, sd - box.w / 2);
            box.cy = rng.uniform(box.h / 2, sd - box.h / 2);
            double worst = 0.0;
            for (const GtBox& other : scene.boxes) {
                worst = std::max(worst, iou_cxcywh(box.cx, box.cy, box.w, box.h, other.cx, other.cy, other.w, other.h));
            }
            if (worst < 0.25) break;
        }
        box.cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_classes)));
        const double bright = rng.uniform(0.75, 1.0);
        const ClassStyle& style = kStyles[box.cls % 4];
        const double rx = box.w / 2, ry = box.h / 2;
        const long y0 = std::max(0L, static_cast<long>(std::floor(box.cy - ry)));
        const long y1 = std::min(static_cast<long>(s) - 1, static_cast<long>(std::ceil(box.cy + ry)));
        const long x0 = std::max(0L, static_cast<long>(std::floor(box.cx - rx)));
        const long x1 = std::min(static_cast<long>(s) - 1, static_cast<long>(std::ceil(box.cx + rx)));
        for (long y = y0; y <= y1; ++y) {
            for (long x = x0; x <= x1; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - box.cx;
                const double dy = static_cast<double>(y) + 0.5 - box.cy;
                if (!inside_shape(box.cls, dx, dy, rx, ry)) continue;
                img(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = style.r * bright;
                img(1, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = style.g * bright;
                img(2, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = style.b * bright;
            }
        }
        scene.boxes.push_back(box);
    }

    // Global per-channel tint; the nuisance factor that makes object color
    // ambiguous without scene-level context.
    const std::size_t plane = s * s;
    for (int c = 0; c < 3; ++c) {
        const double tint = rng.uniform(0.55, 1.0);
        double* p = img.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] *= tint;
    }
    return scene;
}

SyntheticScene flip_scene(const SyntheticScene& scene, bool flip_h, bool flip_v) {
    if (!flip_h && !flip_v) return scene;
    const std::size_t s = scene.image.dim(1);
    SyntheticScene out;
    out.image = Tensor(scene.image.shape());
    const double sd = static_cast<double>(s);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < s; ++y) {
            const std::size_t sy = flip_v ? s - 1 - y : y;
            for (std::size_t x = 0; x < s; ++x) {
                const std::size_t sx = flip_h ? s - 1 - x : x;
                out.image(c, y, x) = scene.image(c, sy, sx);
            }
        }
    }
    out.boxes = scene.boxes;
    for (GtBox& b : out.boxes) {
        if (flip_h) b.cx = sd - b.cx;
        if (flip_v) b.cy = sd - b.cy;
    }
    return out;
}

namespace {

struct FlatPred {
    std::size_t scene;
    Detection det;
};

// Greedy confidence-ordered matching for one class; returns cumulative TP
// flags per prediction plus the matched-truth total.
std::vector<char> greedy_match(const std::vector<FlatPred>& preds, const std::vector<std::vector<GtBox>>& truths,
                               int cls, double thr, std::size_t* matched_out) {
    std::vector<std::vector<char>> used(truths.size());
    for (std::size_t i = 0; i < truths.size(); ++i) used[i].assign(truths[i].size(), 0);
    std::vector<char> is_tp(preds.size(), 0);
    std::size_t matched = 0;
    for (std::size_t p = 0; p < preds.size(); ++p) {
        const auto& fp = preds[p];
        double best = 0.0;
        std::size_t best_t = 0;
        bool found = false;
        const auto& tb = truths[fp.scene];
        for (std::size_t t = 0; t < tb.size(); ++t) {
            if (tb[t].cls != cls || used[fp.scene][t]) continue;
            const double v =
                iou_cxcywh(fp.det.cx, fp.det.cy, fp.det.w, fp.det.h, tb[t].cx, tb[t].cy, tb[t].w, tb[t].h);
            if (v >= thr && v > best) {
                best = v;
                best_t = t;
                found = true;
            }
        }
        if (found) {
            used[fp.scene][best_t] = 1;
            is_tp[p] = 1;
            ++matched;
        }
    }
    if (matched_out) *matched_out = matched;
    return is_tp;
}

double all_points_ap(const std::vector<char>& is_tp, std::size_t n_truth) {
    if (n_truth == 0) return 0.0;
    const std::size_t n = is_tp.size();
    if (n == 0) return 0.0;
    std::vector<double> recall(n), precision(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        tp += is_tp[i] ? 1 : 0;
        recall[i] = static_cast<double>(tp) / static_cast<double>(n_truth);
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    // Suffix max makes the curve monotone; integrate over recall steps.
    for (std::size_t i = n - 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0.0;
    double prev_r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ap += (recall[i] - prev_r) * precision[i];
        prev_r = recall[i];
    }
    return ap;
}

struct PooledEval {
    double ap = 0, ar = 0;
};

PooledEval eval_sets(const std::vector<std::vector<Detection>>& preds, const std::vector<std::vector<GtBox>>& truths,
                     double thr, int num_classes_hint) {
    std::vector<FlatPred> flat;
    for (std::size_t sc = 0; sc < preds.size(); ++sc) {
        for (const Detection& d : preds[sc]) flat.push_back({sc, d});
    }
    std::stable_sort(flat.begin(), flat.end(),
                     [](const FlatPred& a, const FlatPred& b) { return a.det.score > b.det.score; });

    int max_cls = num_classes_hint - 1;
    std::vector<std::size_t> truth_count;
    for (const auto& tb : truths) {
        for (const GtBox& b : tb) max_cls = std::max(max_cls, b.cls);
    }
    truth_count.assign(static_cast<std::size_t>(max_cls) + 1, 0);
    std::size_t total_truth = 0;
    for (const auto& tb : truths) {
        for (const GtBox& b : tb) {
            ++truth_count[static_cast<std::size_t>(b.cls)];
            ++total_truth;
        }
    }

    PooledEval out;
    if (total_truth == 0) return out;
    double ap_sum = 0.0;
    std::size_t n_classes = 0, total_matched = 0;
    for (std::size_t c = 0; c < truth_count.size(); ++c) {
        if (truth_count[c] == 0) continue;
        std::vector<FlatPred> cls_preds;
        for (const FlatPred& fp : flat) {
            if (fp.det.cls == static_cast<int>(c)) cls_preds.push_back(fp);
        }
        std::size_t matched = 0;
        const std::vector<char> is_tp = greedy_match(cls_preds, truths, static_cast<int>(c), thr, &matched);
        ap_sum += all_points_ap(is_tp, truth_count[c]);
        total_matched += matched;
        ++n_classes;
    }
    out.ap = ap_sum / static_cast<double>(n_classes);
    out.ar = static_cast<double>(total_matched) / static_cast<double>(total_truth);
    return out;
}

}  // namespace

ApResult evaluate_ap(const std::vector<std::vector<Detection>>& preds, const std::vector<std::vector<GtBox>>& truths,
                     double iou_threshold, const SceneConfig& cfg) {
    if (preds.size() != truths.size()) {
        throw ArgError("evaluate_ap: prediction and truth scene counts differ");
    }
    for (const auto& scene : preds) {
        for (const Detection& d : scene) {
            if (!std::isfinite(d.score) || !std::isfinite(d.cx) || !std::isfinite(d.w)) {
                throw ArgError("evaluate_ap: non-finite detection");
            }
        }
    }
    ApResult res;
    const PooledEval overall = eval_sets(preds, truths, iou_threshold, cfg.num_classes);
    res.ap = overall.ap;
    res.ar = overall.ar;

    for (int band = 0; band < 3; ++band) {
        std::vector<std::vector<Detection>> bp(preds.size());
        std::vector<std::vector<GtBox>> bt(truths.size());
        for (std::size_t sc = 0; sc < preds.size(); ++sc) {
            for (const Detection& d : preds[sc]) {
                if (size_band(d.w, d.h, cfg) == band) bp[sc].push_back(d);
            }
            for (const GtBox& b : truths[sc]) {
                if (size_band(b.w, b.h, cfg) == band) bt[sc].push_back(b);
            }
        }
        const double v = eval_sets(bp, bt, iou_threshold, cfg.num_classes).ap;
        if (band == 0) res.ap_small = v;
        else if (band == 1) res.ap_medium = v;
        else res.ap_large = v;
    }
    return res;
}

}  // namespace kvl::toy
