#include "kvl/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace kvl {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) throw ConfigError(path + "." + key + ": unknown key");
    }
}

template <class T>
void get_to(const json& j, const std::string& path, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw ConfigError(path + "." + key + ": " + e.what());
    }
}

}  // namespace

NeckConfig RunConfig::neck_config() const {
    NeckConfig cfg;
    cfg.c_out = neck.c_out;
    cfg.c_red = neck.c_red;
    cfg.scales = neck.scales;
    cfg.attention = attention;
    cfg.use_ckspp = neck.use_ckspp;
    cfg.upsample = upsample_mode_from_name(neck.upsample);
    cfg.basis = basis();
    cfg.phi_init = phi_init();
    return cfg;
}

toy::DetectorConfig RunConfig::detector_config() const {
    toy::DetectorConfig cfg;
    cfg.scene = scene;
    cfg.neck = neck_config();
    cfg.encoder_channels = detector.encoder_channels;
    cfg.pos_weight = detector.pos_weight;
    cfg.box_loss_weight = detector.box_loss_weight;
    cfg.cls_loss_weight = detector.cls_loss_weight;
    cfg.score_threshold = detector.score_threshold;
    cfg.nms_iou = detector.nms_iou;
    cfg.max_detections = detector.max_detections;
    return cfg;
}

toy::TrainConfig RunConfig::train_config() const {
    toy::TrainConfig tc;
    tc.lr = train.lr;
    tc.weight_decay = train.weight_decay;
    tc.beta1 = train.beta1;
    tc.beta2 = train.beta2;
    tc.epochs = train.epochs;
    tc.batch_size = train.batch_size;
    tc.seed = seed;
    tc.flip_prob = train.flip_prob;
    tc.train_scenes = train.train_scenes;
    tc.val_scenes = train.val_scenes;
    tc.iou_threshold = train.iou_threshold;
    tc.coco_sweep = train.coco_sweep;
    tc.ablation_mode = train.ablation_mode;
    tc.threads = threads;
    return tc;
}

BenchSettings RunConfig::bench_settings() const {
    BenchSettings bs;
    bs.n_values = bench.n_values;
    bs.m_values = bench.m_values;
    bs.head_dim = bench.head_dim;
    bs.repetitions = bench.repetitions;
    bs.warmup = bench.warmup;
    bs.pinv_iters = attention.pinv_iters;
    bs.mode = attention.mode;
    bs.seed = seed;
    return bs;
}

std::string RunConfig::to_json_string() const {
    json j;
    j["seed"] = seed;
    j["threads"] = threads;
    j["spline"] = {{"degree", spline.degree},     {"grid_size", spline.grid_size}, {"lo", spline.lo},
                   {"hi", spline.hi},             {"coeff_std", spline.coeff_std}, {"w1_init", spline.w1_init},
                   {"w2_init", spline.w2_init}};
    j["attention"] = {{"heads", attention.heads},
                      {"head_dim", attention.head_dim},
                      {"landmarks", attention.landmarks},
                      {"registers", attention.registers},
                      {"landmark_mode", landmark_mode_name(attention.mode)},
                      {"pinv_iters", attention.pinv_iters}};
    j["neck"] = {{"c_out", neck.c_out},
                 {"c_red", neck.c_red},
                 {"scales", neck.scales},
                 {"use_ckspp", neck.use_ckspp},
                 {"upsample", neck.upsample}};
    j["scene"] = {{"image_size", scene.image_size}, {"num_classes", scene.num_classes}, {"max_boxes", scene.max_boxes}};
    j["detector"] = {{"encoder_channels", detector.encoder_channels},
                     {"pos_weight", detector.pos_weight},
                     {"box_loss_weight", detector.box_loss_weight},
                     {"cls_loss_weight", detector.cls_loss_weight},
                     {"score_threshold", detector.score_threshold},
                     {"nms_iou", detector.nms_iou},
                     {"max_detections", detector.max_detections}};
    j["train"] = {{"lr", train.lr},
                  {"weight_decay", train.weight_decay},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"flip_prob", train.flip_prob},
                  {"train_scenes", train.train_scenes},
                  {"val_scenes", train.val_scenes},
                  {"iou_threshold", train.iou_threshold},
                  {"coco_sweep", train.coco_sweep},
                  {"ablation_mode", train.ablation_mode}};
    j["bench"] = {{"n_values", bench.n_values},
                  {"m_values", bench.m_values},
                  {"head_dim", bench.head_dim},
                  {"repetitions", bench.repetitions},
                  {"warmup", bench.warmup}};
    j["ablation"] = {{"seeds", ablation.seeds}};
    return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    check_keys(j, "config",
               {"seed", "threads", "spline", "attention", "neck", "scene", "detector", "train", "bench", "ablation"});

    RunConfig c;
    get_to(j, "config", "seed", c.seed);
    get_to(j, "config", "threads", c.threads);
    if (j.contains("spline")) {
        const json& s = j["spline"];
        check_keys(s, "config.spline", {"degree", "grid_size", "lo", "hi", "coeff_std", "w1_init", "w2_init"});
        get_to(s, "config.spline", "degree", c.spline.degree);
        get_to(s, "config.spline", "grid_size", c.spline.grid_size);
        get_to(s, "config.spline", "lo", c.spline.lo);
        get_to(s, "config.spline", "hi", c.spline.hi);
        get_to(s, "config.spline", "coeff_std", c.spline.coeff_std);
        get_to(s, "config.spline", "w1_init", c.spline.w1_init);
        get_to(s, "config.spline", "w2_init", c.spline.w2_init);
    }
    if (j.contains("attention")) {
        const json& s = j["attention"];
        check_keys(s, "config.attention", {"heads", "head_dim", "landmarks", "registers", "landmark_mode", "pinv_iters"});
        get_to(s, "config.attention", "heads", c.attention.heads);
        get_to(s, "config.attention", "head_dim", c.attention.head_dim);
        get_to(s, "config.attention", "landmarks", c.attention.landmarks);
        get_to(s, "config.attention", "registers", c.attention.registers);
        std::string mode = landmark_mode_name(c.attention.mode);
        get_to(s, "config.attention", "landmark_mode", mode);
        c.attention.mode = landmark_mode_from_name(mode);
        get_to(s, "config.attention", "pinv_iters", c.attention.pinv_iters);
    }
    if (j.contains("neck")) {
        const json& s = j["neck"];
        check_keys(s, "config.neck", {"c_out", "c_red", "scales", "use_ckspp", "upsample"});
        get_to(s, "config.neck", "c_out", c.neck.c_out);
        get_to(s, "config.neck", "c_red", c.neck.c_red);
        get_to(s, "config.neck", "scales", c.neck.scales);
        get_to(s, "config.neck", "use_ckspp", c.neck.use_ckspp);
        get_to(s, "config.neck", "upsample", c.neck.upsample);
        upsample_mode_from_name(c.neck.upsample);  // validates
    }
    if (j.contains("scene")) {
        const json& s = j["scene"];
        check_keys(s, "config.scene", {"image_size", "num_classes", "max_boxes"});
        get_to(s, "config.scene", "image_size", c.scene.image_size);
        get_to(s, "config.scene", "num_classes", c.scene.num_classes);
        get_to(s, "config.scene", "max_boxes", c.scene.max_boxes);
    }
    if (j.contains("detector")) {
        const json& s = j["detector"];
        check_keys(s, "config.detector",
                   {"encoder_channels", "pos_weight", "box_loss_weight", "cls_loss_weight", "score_threshold",
                    "nms_iou", "max_detections"});
        get_to(s, "config.detector", "encoder_channels", c.detector.encoder_channels);
        get_to(s, "config.detector", "pos_weight", c.detector.pos_weight);
        get_to(s, "config.detector", "box_loss_weight", c.detector.box_loss_weight);
        get_to(s, "config.detector", "cls_loss_weight", c.detector.cls_loss_weight);
        get_to(s, "config.detector", "score_threshold", c.detector.score_threshold);
        get_to(s, "config.detector", "nms_iou", c.detector.nms_iou);
        get_to(s, "config.detector", "max_detections", c.detector.max_detections);
    }
    if (j.contains("train")) {
        const json& s = j["train"];
        check_keys(s, "config.train",
                   {"lr", "weight_decay", "beta1", "beta2", "epochs", "batch_size", "flip_prob", "train_scenes",
                    "val_scenes", "iou_threshold", "coco_sweep", "ablation_mode"});
        get_to(s, "config.train", "lr", c.train.lr);
        get_to(s, "config.train", "weight_decay", c.train.weight_decay);
        get_to(s, "config.train", "beta1", c.train.beta1);
        get_to(s, "config.train", "beta2", c.train.beta2);
        get_to(s, "config.train", "epochs", c.train.epochs);
        get_to(s, "config.train", "batch_size", c.train.batch_size);
        get_to(s, "config.train", "flip_prob", c.train.flip_prob);
        get_to(s, "config.train", "train_scenes", c.train.train_scenes);
        get_to(s, "config.train", "val_scenes", c.train.val_scenes);
        get_to(s, "config.train", "iou_threshold", c.train.iou_threshold);
        get_to(s, "config.train", "coco_sweep", c.train.coco_sweep);
        get_to(s, "config.train", "ablation_mode", c.train.ablation_mode);
    }
    if (j.contains("bench")) {
        const json& s = j["bench"];
        check_keys(s, "config.bench", {"n_values", "m_values", "head_dim", "repetitions", "warmup"});
        get_to(s, "config.bench", "n_values", c.bench.n_values);
        get_to(s, "config.bench", "m_values", c.bench.m_values);
        get_to(s, "config.bench", "head_dim", c.bench.head_dim);
        get_to(s, "config.bench", "repetitions", c.bench.repetitions);
        get_to(s, "config.bench", "warmup", c.bench.warmup);
    }
    if (j.contains("ablation")) {
        const json& s = j["ablation"];
        check_keys(s, "config.ablation", {"seeds"});
        get_to(s, "config.ablation", "seeds", c.ablation.seeds);
    }
    return c;
}

void RunConfig::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open '" + path + "' for writing");
    os << to_json_string();
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json_string(text);
}

}  // namespace kvl
