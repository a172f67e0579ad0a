#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvl/neck.hpp"
#include "kvl/optimizer.hpp"
#include "kvl/rng.hpp"

namespace kvl::toy {

struct GtBox {
    double cx = 0, cy = 0, w = 0, h = 0;
    int cls = 0;
};

struct SceneConfig {
    std::size_t image_size = 64;
    int num_classes = 4;
    std::size_t max_boxes = 8;
    // Box side ranges for the three size bands (px).
    double small_lo = 3, small_hi = 6;
    double medium_lo = 7, medium_hi = 14;
    double large_lo = 15, large_hi = 28;
};

struct SyntheticScene {
    Tensor image;  // [3,S,S], values in [0,1]
    std::vector<GtBox> boxes;
};

// Textured background, a global per-channel tint, and 1..max_boxes colored
// shapes (one shape+color per class). Deterministic given the rng state.
SyntheticScene generate_scene(Rng& rng, const SceneConfig& cfg);

SyntheticScene flip_scene(const SyntheticScene& scene, bool flip_h, bool flip_v);

// 0 = small, 1 = medium, 2 = large, bucketed on sqrt(w*h) at the band
// midpoint boundaries.
int size_band(double w, double h, const SceneConfig& cfg);

double iou_cxcywh(double acx, double acy, double aw, double ah, double bcx, double bcy, double bw, double bh);

struct Detection {
    double cx = 0, cy = 0, w = 0, h = 0;
    int cls = 0;
    double score = 0;
};

struct ApResult {
    double ap = 0, ar = 0;
    double ap_small = 0, ap_medium = 0, ap_large = 0;
};

// Greedy confidence-ordered matching at the IoU threshold; AP is the area
// under the all-points-interpolated precision-recall curve, averaged over
// classes with at least one truth. AR is matched truths / total truths.
ApResult evaluate_ap(const std::vector<std::vector<Detection>>& preds, const std::vector<std::vector<GtBox>>& truths,
                     double iou_threshold, const SceneConfig& cfg);

// ---------------------------------------------------------------------------
// Detector: tiny strided conv encoder -> neck -> per-level 1x1 head emitting
// (objectness, 4 box offsets, class logits) per cell.
// ---------------------------------------------------------------------------

struct DetectorConfig {
    SceneConfig scene;
    NeckConfig neck;
    std::vector<std::size_t> encoder_channels{8, 16, 32, 64};  // stem + 3 levels
    double pos_weight = 8.0;
    double box_loss_weight = 1.0;
    double cls_loss_weight = 1.0;
    double score_threshold = 0.05;
    double nms_iou = 0.5;
    std::size_t max_detections = 100;
};

struct DetectorModel {
    DetectorConfig cfg;
    ParamStore store;
    ConvLayer stem, down1, down2, down3;
    NeckParams neck;
    Conv1x1 head1, head2, head3;
};

DetectorModel build_detector(const DetectorConfig& cfg, std::uint64_t seed);

struct LevelVars {
    Var l1, l2, l3;
};

LevelVars detector_forward(Tape& tape, const DetectorModel& model, const Tensor& image);

Var detection_loss(Tape& tape, const DetectorModel& model, const LevelVars& outs, const std::vector<GtBox>& boxes);

std::vector<Detection> decode_detections(const DetectorModel& model, const Tensor& l1, const Tensor& l2,
                                         const Tensor& l3);

// Forward + decode on a private tape.
std::vector<Detection> run_inference(const DetectorModel& model, const Tensor& image);

// ---------------------------------------------------------------------------
// Training / ablation
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 5e-4;
    double beta1 = 0.95;
    double beta2 = 0.999;
    std::size_t epochs = 20;
    std::size_t batch_size = 4;
    std::uint64_t seed = 42;
    double flip_prob = 0.5;
    std::size_t train_scenes = 32;
    std::size_t val_scenes = 16;
    double iou_threshold = 0.5;
    bool coco_sweep = false;  // average AP over IoU 0.50:0.05:0.95
    std::string ablation_mode = "enau+ckspp";
    int threads = 1;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0;
    ApResult val;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    ApResult final_val;
};

// Deterministic given (model init, config): all randomness flows from
// tc.seed via the named substreams "data", "val", "shuffle", "augment".
TrainResult train(DetectorModel& model, const TrainConfig& tc);

// epoch,split,loss,AP,AR,AP_S,AP_M,AP_L
void save_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history);

// Applies one ablation mode name (nearest | enau | enau+ckspp) to a neck
// config.
void apply_ablation_mode(NeckConfig& neck, const std::string& mode);

struct AblationRow {
    std::string mode;
    std::vector<double> aps, ars;
    double mean_ap = 0, std_ap = 0, mean_ar = 0, std_ar = 0;
};

struct AblationResult {
    std::vector<AblationRow> rows;  // nearest, enau, enau+ckspp
    bool ordering_holds = false;    // strict mean-AP ordering across the rows
};

// Trains every mode on every seed under identical budgets and data streams.
AblationResult run_ablation(const DetectorConfig& base_cfg, const TrainConfig& base_tc,
                            const std::vector<std::uint64_t>& seeds, int threads);

}  // namespace kvl::toy
