#include "almond/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>

#include "almond/image_io.hpp"
#include "almond/pipeline.hpp"

namespace almond {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct PreprocessFlags {
  PreprocessParams p;
  std::string canny_input = "denoise";
  std::string feed_stage = "denoise";

  void add(CLI::App* app) {
    app->add_option("--blur-kernel", p.blur_kernel, "Gaussian kernel size (odd)")->capture_default_str();
    app->add_option("--blur-sigma", p.blur_sigma, "Gaussian sigma; 0 derives it from the kernel size")
        ->capture_default_str();
    app->add_option("--nlm-h", p.nlm.h, "NLM filter strength")->capture_default_str();
    app->add_option("--nlm-template-radius", p.nlm.template_radius)->capture_default_str();
    app->add_option("--nlm-search-radius", p.nlm.search_radius)->capture_default_str();
    app->add_option("--nlm-noise-sigma", p.nlm.noise_sigma)->capture_default_str();
    app->add_option("--thresh-block", p.thresh_block, "adaptive threshold block size (odd)")->capture_default_str();
    app->add_option("--thresh-c", p.thresh_c)->capture_default_str();
    app->add_option("--canny-low", p.canny_low)->capture_default_str();
    app->add_option("--canny-high", p.canny_high)->capture_default_str();
    app->add_option("--canny-input", canny_input, "denoise or thresh")->capture_default_str();
    app->add_option("--feed-stage", feed_stage, "gray, blur, denoise, thresh or canny")->capture_default_str();
  }

  PreprocessParams resolve() const {
    PreprocessParams r = p;
    r.canny_input = parse_stage(canny_input);
    r.feed_stage = parse_stage(feed_stage);
    return r;
  }
};

struct ModelFlags {
  std::string preset;
  int height = 0, width = 0, conv_blocks = 0;
  double multiplier = 0.0, spatial_dropout = 0.0, dropout = 0.0;
  CLI::Option *o_height = nullptr, *o_width = nullptr, *o_blocks = nullptr, *o_mult = nullptr, *o_sd = nullptr,
              *o_dropout = nullptr;

  void add(CLI::App* app, const std::string& default_preset) {
    preset = default_preset;
    app->add_option("--model", preset, "preset: full or mini")->capture_default_str();
    o_height = app->add_option("--height", height, "input height");
    o_width = app->add_option("--width", width, "input width");
    o_blocks = app->add_option("--conv-blocks", conv_blocks, "conv/pool blocks kept (1-7)");
    o_mult = app->add_option("--multiplier", multiplier, "filter multiplier");
    o_sd = app->add_option("--spatial-dropout", spatial_dropout);
    o_dropout = app->add_option("--dropout", dropout);
  }

  ModelConfig resolve() const {
    ModelConfig c;
    if (preset == "full") {
      c = full_config();
    } else if (preset == "mini") {
      c = mini_config();
    } else {
      throw InvalidConfig("unknown model preset '" + preset + "'");
    }
    if (o_height->count()) c.input_height = height;
    if (o_width->count()) c.input_width = width;
    if (o_blocks->count()) c.conv_blocks = conv_blocks;
    if (o_mult->count()) c.multiplier = multiplier;
    if (o_sd->count()) c.spatial_dropout = spatial_dropout;
    if (o_dropout->count()) c.dropout = dropout;
    if (o_height->count() || o_width->count() || o_blocks->count() || o_mult->count()) c.name = preset + "-custom";
    c.validate();
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

json metrics_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
}

json eval_json(const EvalResult& r) {
  json matrix = json::array();
  for (int t = 0; t < r.matrix.num_classes(); ++t) {
    json row = json::array();
    for (int p = 0; p < r.matrix.num_classes(); ++p) row.push_back(r.matrix.at(t, p));
    matrix.push_back(row);
  }
  json per_class = json::object();
  for (std::size_t c = 0; c < r.report.per_class.size(); ++c) {
    per_class[r.report.class_names[c]] = metrics_json(r.report.per_class[c]);
  }
  return {{"class_names", r.report.class_names},
          {"confusion_matrix", matrix},
          {"accuracy", r.report.accuracy},
          {"per_class", per_class},
          {"micro_avg", metrics_json(r.report.micro)},
          {"weighted_avg", metrics_json(r.report.weighted)},
          {"total", r.report.total}};
}

std::string matrix_text(const EvalResult& r) {
  std::ostringstream out;
  out << "confusion matrix (rows true, columns predicted)\n";
  std::size_t w = 8;
  for (const auto& n : r.report.class_names) w = std::max(w, n.size() + 2);
  out << std::setw(static_cast<int>(w)) << "";
  for (const auto& n : r.report.class_names) out << std::setw(static_cast<int>(w)) << n;
  out << "\n";
  for (int t = 0; t < r.matrix.num_classes(); ++t) {
    out << std::setw(static_cast<int>(w)) << r.report.class_names[t];
    for (int p = 0; p < r.matrix.num_classes(); ++p) out << std::setw(static_cast<int>(w)) << r.matrix.at(t, p);
    out << "\n";
  }
  return out.str();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"AlmondNet almond/shell classifier pipeline", "almond"};
  app.set_config("--config", "", "key = value config file");
  app.require_subcommand(1);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "run the image chain and write one PGM per stage");
  std::string pre_input, pre_out_dir;
  PreprocessFlags pre_flags;
  pre->add_option("--input", pre_input, "input image (PNG or netpbm)")->required();
  pre->add_option("--out-dir", pre_out_dir, "output directory")->required();
  pre_flags.add(pre);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic almond/shell dataset");
  int synth_n = 200, synth_h = 32, synth_w = 32;
  std::uint64_t synth_seed = 42;
  std::string synth_out;
  synth->add_option("--n-per-class", synth_n)->capture_default_str();
  synth->add_option("--height", synth_h)->capture_default_str();
  synth->add_option("--width", synth_w)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--out-dir", synth_out, "writes images/ and manifest.jsonl")->required();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "pair images with VOC annotations into a crop manifest");
  std::string ing_images, ing_ann, ing_out;
  bool ing_one_based = false;
  ingest->add_option("--images", ing_images, "image directory")->required();
  ingest->add_option("--annotations", ing_ann, "VOC XML directory")->required();
  ingest->add_option("--out", ing_out, "manifest path")->required();
  ingest->add_flag("--one-based", ing_one_based, "treat box coordinates as 1-based inclusive");

  // split
  auto* split = app.add_subcommand("split", "stratified train/val/test split of a manifest");
  std::string split_manifest, split_out;
  double split_val = 0.2, split_test = 0.144;
  std::uint64_t split_seed = 42;
  split->add_option("--manifest", split_manifest)->required();
  split->add_option("--out-dir", split_out, "writes train/val/test .jsonl")->required();
  split->add_option("--val-fraction", split_val, "share of the post-test remainder")->capture_default_str();
  split->add_option("--test-fraction", split_test)->capture_default_str();
  split->add_option("--seed", split_seed)->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train a classifier");
  TrainConfig tc;
  std::string tr_train, tr_val, tr_out = "run", tr_opt = "adam";
  int tr_synth_n = 200;
  bool no_class_weights = false;
  tr->add_option("--train-manifest", tr_train, "training manifest; omitted means synthetic data");
  tr->add_option("--val-manifest", tr_val, "validation manifest; omitted means a split of the training set");
  tr->add_option("--synth-per-class", tr_synth_n, "synthetic samples per class without a manifest")
      ->capture_default_str();
  tr->add_option("--out-dir", tr_out)->capture_default_str();
  tr->add_option("--epochs", tc.epochs)->capture_default_str();
  tr->add_option("--batch-size", tc.batch_size)->capture_default_str();
  tr->add_option("--lr", tc.optimizer.lr)->capture_default_str();
  tr->add_option("--optimizer", tr_opt, "adam or sgd")->capture_default_str();
  tr->add_option("--beta1", tc.optimizer.beta1)->capture_default_str();
  tr->add_option("--beta2", tc.optimizer.beta2)->capture_default_str();
  tr->add_option("--adam-epsilon", tc.optimizer.epsilon)->capture_default_str();
  tr->add_option("--seed", tc.seed)->capture_default_str();
  tr->add_option("--val-fraction", tc.val_fraction)->capture_default_str();
  tr->add_flag("--no-class-weights", no_class_weights);
  tr->add_flag("--whole-image", tc.whole_image, "ignore annotation boxes");
  tr->add_flag("--checkpoint-every-epoch", tc.checkpoint_every_epoch);
  tr->add_flag("--wall-time", tc.record_wall_time, "record seconds per epoch in the history");
  tr->add_flag("--hflip", tc.augment.hflip, "random horizontal flips");
  tr->add_flag("--vflip", tc.augment.vflip, "random vertical flips");
  ModelFlags tr_model;
  tr_model.add(tr, "mini");
  PreprocessFlags tr_pre;
  tr_pre.add(tr);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "confusion matrix and classification report");
  std::string ev_ckpt, ev_manifest, ev_out, ev_report;
  bool ev_whole = false;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--manifest", ev_manifest)->required();
  ev->add_option("--out", ev_out, "JSON results");
  ev->add_option("--report", ev_report, "text report");
  ev->add_flag("--whole-image", ev_whole, "classify whole images instead of annotated crops");

  // predict
  auto* pr = app.add_subcommand("predict", "classify one image");
  std::string pr_ckpt, pr_image, pr_out;
  pr->add_option("--checkpoint", pr_ckpt)->required();
  pr->add_option("--image", pr_image)->required();
  pr->add_option("--out", pr_out, "JSON result");

  // trace
  auto* trace = app.add_subcommand("trace", "print the layer shape table of a configuration");
  std::string trace_out;
  ModelFlags trace_model;
  trace_model.add(trace, "full");
  trace->add_option("--out", trace_out, "JSON shape trace");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* failing = &app;
    for (const CLI::App* s : app.get_subcommands()) failing = s;
    err << failing->help();
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(pre)) {
      const PreprocessParams params = pre_flags.resolve();
      const PreprocessResult res = preprocess_chain(read_rgb(pre_input), params);
      const std::string stem = fs::path(pre_input).stem().string();
      for (int s = 0; s < kStageCount; ++s) {
        const fs::path path = fs::path(pre_out_dir) / (stem + std::string(kStageSuffixes[s]) + ".pgm");
        fs::create_directories(pre_out_dir);
        write_pgm(path, res.stage(static_cast<Stage>(s)));
        out << path.string() << "\n";
      }
    } else if (app.got_subcommand(synth)) {
      DatasetManifest m = generate_synthetic(synth_n, synth_h, synth_w, synth_seed);
      write_sample_images(m, synth_out);
      const fs::path mp = fs::path(synth_out) / "manifest.jsonl";
      save_manifest(m, mp);
      out << "wrote " << m.size() << " samples to " << mp.string() << "\n";
    } else if (app.got_subcommand(ingest)) {
      const ScanResult scan = scan_dataset(ing_images, ing_ann, VocOptions{ing_one_based});
      for (const auto& issue : scan.issues) err << "skipped " << issue.annotation_file.string() << " (" << issue.kind << "): " << issue.message << "\n";
      const DatasetManifest m = manifest_from_annotations(scan.pairs);
      save_manifest(m, ing_out);
      out << "wrote " << m.size() << " crops from " << scan.pairs.size() << " images to " << ing_out << "\n";
    } else if (app.got_subcommand(split)) {
      const SplitResult s = split_dataset(load_manifest(split_manifest), split_val, split_test, split_seed);
      for (const auto* part : {&s.train, &s.val, &s.test}) {
        const fs::path p = fs::path(split_out) / (std::string(split_name(part->split)) + ".jsonl");
        save_manifest(*part, p);
        out << p.string() << ": " << part->size() << " samples\n";
      }
    } else if (app.got_subcommand(tr)) {
      tc.optimizer.kind = nn::parse_optimizer(tr_opt);
      tc.out_dir = tr_out;
      tc.class_weighted = !no_class_weights;
      tc.model = tr_model.resolve();
      tc.preprocess = tr_pre.resolve();
      tc.validate();
      DatasetManifest train_m, val_m;
      if (tr_train.empty()) {
        DatasetManifest all = generate_synthetic(tr_synth_n, tc.model.input_height, tc.model.input_width, tc.seed);
        SplitResult s = split_dataset(all, tc.val_fraction, 0.0, tc.seed);
        train_m = std::move(s.train);
        val_m = std::move(s.val);
      } else if (tr_val.empty()) {
        SplitResult s = split_dataset(load_manifest(tr_train), tc.val_fraction, 0.0, tc.seed);
        train_m = std::move(s.train);
        val_m = std::move(s.val);
      } else {
        train_m = load_manifest(tr_train);
        val_m = load_manifest(tr_val);
      }
      const TrainResult r = train(tc, train_m, val_m);
      out << format_history(r.history);
      out << "best epoch " << r.best_epoch << ": " << r.best_checkpoint.string() << "\n";
      out << "history: " << r.history_path.string() << "\n";
    } else if (app.got_subcommand(ev)) {
      EvalOptions opts;
      opts.whole_image = ev_whole;
      const EvalResult r = evaluate(ev_ckpt, load_manifest(ev_manifest), opts);
      const std::string text = r.report.format() + "\n" + matrix_text(r);
      out << text;
      if (!ev_report.empty()) write_text(ev_report, text);
      if (!ev_out.empty()) write_text(ev_out, eval_json(r).dump(2) + "\n");
    } else if (app.got_subcommand(pr)) {
      const Prediction p = predict(pr_ckpt, pr_image);
      json j = {{"label", p.label}, {"label_index", p.label_index}, {"probabilities", p.probabilities}};
      out << j.dump() << "\n";
      if (!pr_out.empty()) write_text(pr_out, j.dump(2) + "\n");
    } else if (app.got_subcommand(trace)) {
      const ModelConfig c = trace_model.resolve();
      const ShapeTrace t = shape_trace(build_almondnet20(c), {c.input_height, c.input_width, c.input_channels});
      out << t.table();
      out << "flatten width: " << t.flatten_width() << "\n";
      if (!trace_out.empty()) {
        json rows = json::array();
        for (const auto& r : t.rows) {
          rows.push_back({{"index", r.index},
                          {"layer", r.spec.describe()},
                          {"output", r.output},
                          {"params", r.params.learnable + r.params.non_learnable}});
        }
        json cascade = json::array();
        for (const auto& [h, w] : t.spatial_cascade()) cascade.push_back({h, w});
        write_text(trace_out, json{{"config", config_to_json(c)},
                                   {"rows", rows},
                                   {"cascade", cascade},
                                   {"flatten_width", t.flatten_width()},
                                   {"learnable", t.learnable},
                                   {"non_learnable", t.non_learnable}}
                                      .dump(2) +
                                  "\n");
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace almond
