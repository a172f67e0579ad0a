#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvl/bench.hpp"
#include "kvl/toy.hpp"

namespace kvl {

struct SplineSection {
    int degree = 3;
    std::size_t grid_size = 5;
    double lo = -1.0;
    double hi = 1.0;
    double coeff_std = 0.1;
    double w1_init = 1.0;
    double w2_init = 1.0;
};

struct NeckSection {
    std::size_t c_out = 64;
    std::size_t c_red = 32;
    std::vector<std::size_t> scales{1, 2, 3, 6};
    bool use_ckspp = true;
    std::string upsample = "enau";
};

struct DetectorSection {
    std::vector<std::size_t> encoder_channels{8, 16, 32, 64};
    double pos_weight = 8.0;
    double box_loss_weight = 1.0;
    double cls_loss_weight = 1.0;
    double score_threshold = 0.05;
    double nms_iou = 0.5;
    std::size_t max_detections = 100;
};

struct TrainSection {
    double lr = 1e-3;
    double weight_decay = 5e-4;
    double beta1 = 0.95;
    double beta2 = 0.999;
    std::size_t epochs = 20;
    std::size_t batch_size = 4;
    double flip_prob = 0.5;
    std::size_t train_scenes = 32;
    std::size_t val_scenes = 16;
    double iou_threshold = 0.5;
    bool coco_sweep = false;
    std::string ablation_mode = "enau+ckspp";
};

struct BenchSection {
    std::vector<std::size_t> n_values{256, 512, 1024, 2048, 4096};
    std::vector<std::size_t> m_values{32};
    std::size_t head_dim = 8;
    std::size_t repetitions = 9;
    std::size_t warmup = 2;
};

struct AblationSection {
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

// Complete run configuration; round-trips losslessly through JSON and
// rejects unknown keys naming the offending path.
struct RunConfig {
    std::uint64_t seed = 42;
    int threads = 1;
    SplineSection spline;
    AttentionConfig attention;
    NeckSection neck;
    toy::SceneConfig scene;
    DetectorSection detector;
    TrainSection train;
    BenchSection bench;
    AblationSection ablation;

    SplineBasis basis() const { return SplineBasis(spline.degree, spline.grid_size, spline.lo, spline.hi); }
    PhiEdgeInit phi_init() const { return PhiEdgeInit{spline.w1_init, spline.w2_init, spline.coeff_std}; }
    NeckConfig neck_config() const;
    toy::DetectorConfig detector_config() const;
    toy::TrainConfig train_config() const;
    BenchSettings bench_settings() const;

    std::string to_json_string() const;
    static RunConfig from_json_string(const std::string& text);

    void save(const std::string& path) const;
    static RunConfig load(const std::string& path);

    bool operator==(const RunConfig& other) const { return to_json_string() == other.to_json_string(); }
};

}  // namespace kvl
