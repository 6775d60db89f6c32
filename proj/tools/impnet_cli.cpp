#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "impnet/impnet.hpp"

namespace {

using json = nlohmann::json;
using namespace impnet;

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kCheckpoint = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelFlags {
  int classes = 7;
  bool no_eca = false;
  bool eca_before_partition = false;
  bool no_global = false;
  bool no_ensemble = false;
  std::string head_activation = "identity";
  int eca_kernel = 0;
  int feature_dim = 256;
  int input_size = 128;

  void add_to(CLI::App& app) {
    app.add_option("--classes", classes, "Number of expression classes")->capture_default_str();
    app.add_flag("--no-eca", no_eca, "Drop ECA attention");
    app.add_flag("--eca-before-partition", eca_before_partition, "Apply ECA to the full map, then partition");
    app.add_flag("--no-global", no_global, "Drop the global head");
    app.add_flag("--no-ensemble", no_ensemble, "Supervise the global head only");
    app.add_option("--head-activation", head_activation, "Head feature activation")
        ->check(CLI::IsMember({"identity", "mfm"}))
        ->capture_default_str();
    app.add_option("--eca-kernel", eca_kernel, "ECA kernel size override (odd; 0 = adaptive)");
    app.add_option("--feature-dim", feature_dim, "Head feature width")->capture_default_str();
    app.add_option("--input-size", input_size, "Square input side, a multiple of 16")->capture_default_str();
  }

  ModelConfig config() const {
    ModelConfig c;
    c.num_classes = classes;
    c.feature_dim = feature_dim;
    c.eca_enabled = !no_eca;
    c.eca_placement = eca_before_partition ? EcaPlacement::before_partition : EcaPlacement::after_partition;
    c.global_head = !no_global;
    c.ensemble = !no_ensemble;
    c.head_activation = head_activation == "mfm" ? layers::HeadActivation::mfm : layers::HeadActivation::identity;
    if (eca_kernel != 0) c.eca_kernel_override = eca_kernel;
    c.input_size = input_size;
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

struct TrainFlags {
  std::string manifest;
  std::string image_root;
  std::string val_manifest;
  std::string checkpoint;
  std::string init_checkpoint;
  int epochs = 1;
  int batch = 64;
  int micro_batch = 8;
  double lr_base = 0.001;
  double lr_head = 0.01;
  double wd = 4e-5;
  std::uint64_t seed = 0;
  bool oversample = false;
  std::string mirror_train = "augment";
  std::string head_reduction = "sum";

  void add_common(CLI::App& app) {
    app.add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    app.add_option("--batch", batch, "Batch size")->capture_default_str();
    app.add_option("--micro-batch", micro_batch, "Gradient accumulation chunk")->capture_default_str();
    app.add_option("--lr-base", lr_base, "Learning rate of base.*")->capture_default_str();
    app.add_option("--lr-head", lr_head, "Learning rate of ECA and heads")->capture_default_str();
    app.add_option("--wd", wd, "Decoupled weight decay")->capture_default_str();
    app.add_option("--seed", seed, "Seed for init, shuffling and augmentation")->capture_default_str();
    app.add_flag("--oversample", oversample, "Balance classes per epoch");
    app.add_option("--mirror-train", mirror_train, "Flip handling during training")
        ->check(CLI::IsMember({"none", "augment", "double"}))
        ->capture_default_str();
    app.add_option("--head-reduction", head_reduction, "Combine per-head losses")
        ->check(CLI::IsMember({"sum", "mean"}))
        ->capture_default_str();
  }

  TrainConfig config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch;
    t.micro_batch = micro_batch;
    t.seed = seed;
    t.lr_base = lr_base;
    t.lr_rest = lr_head;
    t.weight_decay = wd;
    t.oversample = oversample;
    t.mirror_train = mirror_train == "none"     ? MirrorTrain::none
                     : mirror_train == "double" ? MirrorTrain::double_batch
                                                : MirrorTrain::augment;
    t.head_reduction = head_reduction == "mean" ? HeadReduction::mean : HeadReduction::sum;
    try {
      t.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return t;
  }
};

void emit(const json& j) {
  std::cout << j.dump() << std::endl;
}

void log(const std::string& msg) {
  std::cerr << "[impnet] " << msg << std::endl;
}

json config_json(const ModelConfig& c) {
  return {{"classes", c.num_classes},
          {"feature_dim", c.feature_dim},
          {"eca", c.eca_enabled},
          {"eca_placement", c.eca_placement == EcaPlacement::before_partition ? "before_partition" : "after_partition"},
          {"eca_kernel", c.eca_kernel_size()},
          {"global_head", c.global_head},
          {"ensemble", c.ensemble},
          {"head_activation", c.head_activation == layers::HeadActivation::mfm ? "mfm" : "identity"},
          {"input_size", c.input_size}};
}

json train_json(const TrainConfig& t) {
  const char* mirror = t.mirror_train == MirrorTrain::none           ? "none"
                       : t.mirror_train == MirrorTrain::double_batch ? "double"
                                                                      : "augment";
  return {{"epochs", t.epochs},
          {"batch", t.batch_size},
          {"micro_batch", t.micro_batch},
          {"lr_base", t.lr_base},
          {"lr_head", t.lr_rest},
          {"wd", t.weight_decay},
          {"seed", t.seed},
          {"oversample", t.oversample},
          {"mirror_train", mirror},
          {"head_reduction", t.head_reduction == HeadReduction::mean ? "mean" : "sum"}};
}

json report_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy}, {"confusion", r.confusion}, {"per_class", r.per_class}};
}

json count_json(const ParamCount& c) {
  return {{"total", c.total}, {"base", c.base}, {"eca", c.eca}, {"heads", c.heads}};
}

Dataset load_data(const std::string& manifest, const std::string& root, const ModelConfig& c) {
  log("loading " + manifest);
  auto ds = load_dataset(manifest, c.num_classes, PreprocessSpec{c.input_size}, root);
  log("loaded " + std::to_string(ds.size()) + " images");
  return ds;
}

/// Trains in place, emitting one record per epoch. Returns the last epoch loss.
double run_training(ModelParams<float>& params, const ModelConfig& mc, const TrainConfig& tc, const Dataset& train,
                    const Dataset* val, const std::string& tag = "") {
  AdamaxState<float> state;
  double loss = 0.0;
  for (int e = 0; e < tc.epochs; ++e) {
    loss = train_epoch(params, mc, state, train, tc, e);
    json rec{{"event", "epoch"}, {"epoch", e + 1}, {"loss", loss}};
    if (!tag.empty()) rec["variant"] = tag;
    std::string msg = (tag.empty() ? "" : tag + " ") + "epoch " + std::to_string(e + 1) + " loss " + std::to_string(loss);
    if (val) {
      const double acc = evaluate(params, mc, *val, true).accuracy;
      rec["val_accuracy"] = acc;
      msg += " val_acc " + std::to_string(acc);
    }
    log(msg);
    if (tag.empty()) emit(rec);
  }
  return loss;
}

int cmd_train(const ModelFlags& mf, const TrainFlags& tf) {
  const ModelConfig mc = mf.config();
  const TrainConfig tc = tf.config();
  emit({{"event", "config"}, {"model", config_json(mc)}, {"train", train_json(tc)}});
  const Dataset train = load_data(tf.manifest, tf.image_root, mc);
  std::optional<Dataset> val;
  if (!tf.val_manifest.empty()) val = load_data(tf.val_manifest, tf.image_root, mc);

  ModelParams<float> params = tf.init_checkpoint.empty()
                                  ? build(mc, tc.seed)
                                  : load_checkpoint(tf.init_checkpoint, mc, LoadOptions{true, tc.seed});
  log("parameters: " + std::to_string(count_params(params).total));
  const double loss = run_training(params, mc, tc, train, val ? &*val : nullptr);
  save_checkpoint(params, tf.checkpoint);
  log("wrote " + tf.checkpoint);
  emit({{"event", "done"},
        {"checkpoint", tf.checkpoint},
        {"epochs", tc.epochs},
        {"final_loss", tc.epochs > 0 ? json(loss) : json(nullptr)},
        {"params", count_json(count_params(params))}});
  return kOk;
}

int cmd_eval(const ModelFlags& mf, const std::string& manifest, const std::string& root,
             const std::string& checkpoint, bool no_mirror) {
  const ModelConfig mc = mf.config();
  const auto params = load_checkpoint(checkpoint, mc);
  const Dataset ds = load_data(manifest, root, mc);
  const auto report = evaluate(params, mc, ds, !no_mirror);
  log("accuracy " + std::to_string(report.accuracy) + (no_mirror ? "" : " (mirrored)"));
  emit(report_json(report));
  return kOk;
}

struct BenchFlags {
  std::string checkpoint;
  int iterations = 50;
  int warmup = 5;
  int lanes = 1;
  bool no_mirror = false;
  std::uint64_t seed = 0;
};

int cmd_bench(const ModelFlags& mf, const BenchFlags& bf) {
  const ModelConfig mc = mf.config();
  if (bf.lanes < 1 || bf.iterations < 1 || bf.warmup < 0) throw UsageError("lanes and iterations must be >= 1");
  const auto params = bf.checkpoint.empty() ? build(mc, bf.seed) : load_checkpoint(bf.checkpoint, mc);
  log("benchmarking " + std::to_string(bf.iterations) + " frames on " + std::to_string(bf.lanes) + " lane(s)" +
      (bf.no_mirror ? "" : ", mirrored"));
  const auto r = run_bench(params, mc, BenchOptions{bf.iterations, bf.warmup, bf.lanes, !bf.no_mirror, bf.seed});
  log("single lane " + std::to_string(r.fps_single_lane) + " fps, mean " + std::to_string(r.latency.mean_ms) + " ms");
  emit({{"latency_ms", {{"mean", r.latency.mean_ms}, {"p50", r.latency.p50_ms}, {"p95", r.latency.p95_ms}}},
        {"fps_single_lane", r.fps_single_lane},
        {"fps_aggregate", r.fps_aggregate},
        {"fps_per_lane", r.fps_per_lane},
        {"lanes", r.lanes},
        {"iterations", r.iterations},
        {"warmup", r.warmup},
        {"mirror", r.mirror},
        {"forwards_per_frame", r.mirror ? 2 : 1},
        {"param_count", r.param_count},
        {"reference", {{"fps", 40}, {"hardware", "intel-i7"}, {"scope", "network inference, mirrored"}}},
        {"scope", "network forward only; image decode and face detection excluded"},
        {"probabilities", r.probabilities},
        {"config", config_json(mc)}});
  return kOk;
}

int cmd_ablate(const ModelFlags& mf, const TrainFlags& tf, const std::string& eval_manifest, bool no_mirror) {
  const ModelConfig base_cfg = mf.config();
  const TrainConfig tc = tf.config();
  const Dataset train = load_data(tf.manifest, tf.image_root, base_cfg);
  std::optional<Dataset> held;
  if (!eval_manifest.empty()) held = load_data(eval_manifest, tf.image_root, base_cfg);
  const Dataset& test = held ? *held : train;

  const std::vector<std::pair<std::string, void (*)(ModelConfig&)>> variants{
      {"default", [](ModelConfig&) {}},
      {"no-eca", [](ModelConfig& c) { c.eca_enabled = false; }},
      {"no-ensemble", [](ModelConfig& c) { c.ensemble = false; }},
      {"no-global", [](ModelConfig& c) { c.global_head = false; }},
      {"eca-before-partition", [](ModelConfig& c) { c.eca_placement = EcaPlacement::before_partition; }},
  };
  json rows = json::array();
  for (const auto& [name, apply] : variants) {
    ModelConfig c = base_cfg;
    apply(c);
    auto params = build(c, tc.seed);
    const double loss = run_training(params, c, tc, train, nullptr, name);
    const auto report = evaluate(params, c, test, !no_mirror);
    log(name + " accuracy " + std::to_string(report.accuracy));
    rows.push_back({{"variant", name},
                    {"accuracy", report.accuracy},
                    {"final_loss", tc.epochs > 0 ? json(loss) : json(nullptr)},
                    {"param_count", count_params(params).total}});
  }
  emit({{"rows", rows},
        {"epochs", tc.epochs},
        {"seed", tc.seed},
        {"evaluated_on", held ? "eval_manifest" : "train_manifest"}});
  return kOk;
}

int cmd_synth(const std::string& out_dir, int classes, int per_class, int size, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (classes < 2 || per_class < 1 || size < 1) throw UsageError("synth: classes >= 2, per-class >= 1, size >= 1");
  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "manifest.csv");
  if (!manifest) throw DataError(DataError::Kind::io, "cannot write manifest in " + out_dir);
  int i = 0;
  for (const auto& [img, label] : make_synthetic_images(classes, per_class, size, seed)) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%04d.png", i++);
    write_png((fs::path(out_dir) / name).string(), img);
    manifest << name << ',' << label << '\n';
  }
  log("wrote " + std::to_string(i) + " images to " + out_dir);
  emit({{"manifest", (fs::path(out_dir) / "manifest.csv").string()}, {"images", i}, {"classes", classes}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Facial expression recognition network: training, evaluation and benchmarking"};
  app.require_subcommand(1);

  ModelFlags model;
  TrainFlags train;
  std::string eval_manifest, eval_root, eval_ckpt;
  bool eval_no_mirror = false;
  BenchFlags bench;
  std::string ablate_eval;
  bool ablate_no_mirror = false;
  std::string synth_out;
  int synth_classes = 4, synth_per_class = 8, synth_size = 128;
  std::uint64_t synth_seed = 0;

  auto* train_cmd = app.add_subcommand("train", "Train and write a checkpoint");
  model.add_to(*train_cmd);
  train.add_common(*train_cmd);
  train_cmd->add_option("--manifest", train.manifest, "CSV of path,label")->required();
  train_cmd->add_option("--image-root", train.image_root, "Directory for relative image paths");
  train_cmd->add_option("--val-manifest", train.val_manifest, "Validation CSV, evaluated every epoch");
  train_cmd->add_option("--checkpoint", train.checkpoint, "Output checkpoint")->required();
  train_cmd->add_option("--init-checkpoint", train.init_checkpoint,
                        "Initial weights; may hold a subset such as base.* only");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; prints accuracy and confusion");
  model.add_to(*eval_cmd);
  eval_cmd->add_option("--manifest", eval_manifest, "CSV of path,label")->required();
  eval_cmd->add_option("--image-root", eval_root, "Directory for relative image paths");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required();
  eval_cmd->add_flag("--no-mirror", eval_no_mirror, "Skip flip averaging");

  auto* bench_cmd = app.add_subcommand("bench", "Single-image inference throughput");
  model.add_to(*bench_cmd);
  bench_cmd->add_option("--checkpoint", bench.checkpoint, "Weights (seeded init when omitted)");
  bench_cmd->add_option("--iterations", bench.iterations, "Timed frames per lane")->capture_default_str();
  bench_cmd->add_option("--warmup", bench.warmup, "Untimed frames")->capture_default_str();
  bench_cmd->add_option("--lanes", bench.lanes, "Concurrent worker lanes")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Input and init seed")->capture_default_str();
  bench_cmd->add_flag("--no-mirror", bench.no_mirror, "One forward per frame");

  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate the default model and four ablations");
  model.add_to(*ablate_cmd);
  train.add_common(*ablate_cmd);
  ablate_cmd->add_option("--manifest", train.manifest, "Training CSV")->required();
  ablate_cmd->add_option("--image-root", train.image_root, "Directory for relative image paths");
  ablate_cmd->add_option("--eval-manifest", ablate_eval, "Evaluation CSV (defaults to the training set)");
  ablate_cmd->add_flag("--no-mirror", ablate_no_mirror, "Skip flip averaging at evaluation");

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic toy image set with a manifest");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--classes", synth_classes, "Classes (up to 8 distinct patterns)")->capture_default_str();
  synth_cmd->add_option("--per-class", synth_per_class, "Images per class")->capture_default_str();
  synth_cmd->add_option("--size", synth_size, "Image side")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(model, train);
    if (*eval_cmd) return cmd_eval(model, eval_manifest, eval_root, eval_ckpt, eval_no_mirror);
    if (*bench_cmd) return cmd_bench(model, bench);
    if (*ablate_cmd) return cmd_ablate(model, train, ablate_eval, ablate_no_mirror);
    if (*synth_cmd) return cmd_synth(synth_out, synth_classes, synth_per_class, synth_size, synth_seed);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ImageError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
