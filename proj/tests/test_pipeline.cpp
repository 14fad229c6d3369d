#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "almond/cli.hpp"
#include "almond/image_io.hpp"
#include "almond/pipeline.hpp"

using namespace almond;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

PreprocessParams gray_feed() {
  PreprocessParams p;
  p.feed_stage = Stage::gray;
  return p;
}

TrainConfig small_config(const fs::path& out) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.preprocess = gray_feed();
  c.out_dir = out;
  c.seed = 3;
  return c;
}

DatasetManifest renamed(DatasetManifest m, std::vector<std::string> names) {
  m.class_names = names;
  for (auto& smp : m.samples) smp.label_name = names[smp.label_index];
  return m;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "almond");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("metrics on the reported confusion matrix are all ones") {
  const auto r = metrics_from_confusion(ConfusionMatrix::from_rows({{44, 0}, {0, 12}}), {"shell", "almond"});
  for (const auto& c : r.per_class) {
    CHECK(c.precision == 1.0);
    CHECK(c.recall == 1.0);
    CHECK(c.f1 == 1.0);
  }
  CHECK(r.per_class[0].support == 44);
  CHECK(r.per_class[1].support == 12);
  CHECK(r.accuracy == 1.0);
  CHECK(r.format().find("shell") != std::string::npos);
}

TEST_CASE("metrics with an unseen class and with mistakes") {
  const auto z = metrics_from_confusion(ConfusionMatrix::from_rows({{1, 0}, {0, 0}}));
  CHECK(z.per_class[0].f1 == 1.0);
  CHECK(z.per_class[1].precision == 0.0);
  CHECK(z.per_class[1].recall == 0.0);
  CHECK(z.per_class[1].f1 == 0.0);
  CHECK(z.class_names == std::vector<std::string>{"class 0", "class 1"});

  const auto r = metrics_from_confusion(ConfusionMatrix::from_rows({{8, 2}, {1, 9}}));
  CHECK(r.per_class[0].precision == doctest::Approx(8.0 / 9.0));
  CHECK(r.per_class[0].recall == doctest::Approx(0.8));
  CHECK(r.per_class[0].f1 == doctest::Approx(0.8421).epsilon(1e-4));
  CHECK(r.per_class[1].precision == doctest::Approx(9.0 / 11.0));
  CHECK(r.per_class[1].recall == doctest::Approx(0.9));
  CHECK(r.accuracy == doctest::Approx(0.85));

  CHECK_THROWS_AS(metrics_from_confusion(ConfusionMatrix(2)), EmptyMatrix);
  CHECK_THROWS_AS(ConfusionMatrix::from_rows({{1, 2}, {3}}), ShapeMismatch);
  ConfusionMatrix m(2);
  CHECK_THROWS_AS(m.add(2, 0), ShapeMismatch);
}

TEST_CASE("micro averages and weighted recall equal accuracy") {
  std::mt19937_64 gen(9);
  for (int t = 0; t < 200; ++t) {
    const int k = 2 + static_cast<int>(gen() % 4);
    ConfusionMatrix m(k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) m.add(i, j, static_cast<long long>(gen() % 20));
    if (m.total() == 0) m.add(0, 0);
    const auto r = metrics_from_confusion(m);
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(m.trace()) / m.total()));
    CHECK(r.micro.precision == doctest::Approx(r.accuracy));
    CHECK(r.micro.recall == doctest::Approx(r.accuracy));
    CHECK(r.weighted.recall == doctest::Approx(r.accuracy));
  }
}

TEST_CASE("confusion from predictions") {
  const std::vector<int> truth{0, 0, 1, 1, 1}, pred{0, 1, 1, 1, 0};
  CHECK(confusion_from_predictions(truth, pred, 2) == ConfusionMatrix::from_rows({{1, 1}, {1, 2}}));
  CHECK_THROWS_AS(confusion_from_predictions(truth, std::vector<int>{0}, 2), ShapeMismatch);
}

TEST_CASE("argmax ties go to the lower index") {
  CHECK(argmax(std::vector<float>{0.5f, 0.5f}) == 0);
  CHECK(argmax(std::vector<float>{0.1f, 0.7f, 0.7f}) == 1);
}

TEST_CASE("one epoch on two samples writes history and checkpoints") {
  TempDir tmp("almond_train_tiny");
  auto data = generate_synthetic(1, 32, 32, 5);
  REQUIRE(data.size() == 2);
  auto cfg = small_config(tmp.path / "run");
  cfg.epochs = 1;
  const auto r = train(cfg, data, data);
  REQUIRE(r.history.size() == 1);
  CHECK(r.history[0].epoch == 1);
  CHECK(std::isfinite(r.history[0].train_loss));
  CHECK(r.history[0].seconds == 0.0);
  CHECK(fs::exists(r.best_checkpoint));
  CHECK(fs::exists(r.last_checkpoint));
  const std::string csv = slurp(r.history_path);
  CHECK(csv.rfind(std::string(kHistoryHeader) + "\n", 0) == 0);
  CHECK(csv == std::string(kHistoryHeader) + "\n" + format_history(r.history).substr(std::string(kHistoryHeader).size() + 1));
  CHECK(r.class_weights.weights == std::vector<double>{1.0, 1.0});

  const auto ck = load_checkpoint(r.best_checkpoint);
  CHECK(ck.metadata.at("epoch") == 1);
  CHECK(load_checkpoint(r.last_checkpoint).optimizer.has_value());
}

TEST_CASE("training is reproducible for a fixed seed") {
  TempDir tmp("almond_train_repeat");
  const auto data = generate_synthetic(12, 32, 32, 8);
  const auto split = split_dataset(data, 0.25, 0.0, 8);
  auto a = small_config(tmp.path / "a");
  auto b = small_config(tmp.path / "b");
  a.augment.hflip = b.augment.hflip = true;
  const auto ra = train(a, split.train, split.val);
  const auto rb = train(b, split.train, split.val);
  CHECK(slurp(ra.history_path) == slurp(rb.history_path));
  CHECK(slurp(ra.last_checkpoint) == slurp(rb.last_checkpoint));
  CHECK(slurp(ra.best_checkpoint) == slurp(rb.best_checkpoint));

  auto c = small_config(tmp.path / "c");
  c.seed = 4;
  const auto rc = train(c, split.train, split.val);
  CHECK(slurp(ra.last_checkpoint) != slurp(rc.last_checkpoint));
}

TEST_CASE("training guards") {
  TempDir tmp("almond_train_guards");
  const auto data = generate_synthetic(4, 32, 32, 2);
  auto cfg = small_config(tmp.path / "run");
  CHECK_THROWS_AS(train(cfg, DatasetManifest{}, data), EmptyDataset);
  CHECK_THROWS_AS(train(cfg, data, renamed(data, {"x", "y"})), LabelMismatch);
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(cfg, data, data), InvalidConfig);

  auto wild = small_config(tmp.path / "wild");
  wild.optimizer.kind = nn::OptimizerKind::sgd;
  wild.optimizer.lr = 1e30;
  wild.epochs = 3;
  CHECK_THROWS_AS(train(wild, data, data), DivergedLoss);
  const std::string csv = slurp(wild.out_dir / "history.csv");
  CHECK(csv.find("# aborted: non-finite loss") != std::string::npos);
}

TEST_CASE("evaluation of a model that always answers class 0") {
  const auto data = generate_synthetic(10, 32, 32, 11);
  Model m(mini_config(), data.class_names, 1);
  auto params = m.net.learnable_parameters();
  auto* kernel = params[params.size() - 2];
  auto* bias = params.back();
  kernel->value.fill(0.0f);
  bias->value[0] = 10.0f;
  bias->value[1] = 0.0f;
  const auto r = evaluate(m, data, gray_feed());
  CHECK(r.matrix == ConfusionMatrix::from_rows({{10, 0}, {10, 0}}));
  CHECK(r.report.accuracy == 0.5);
  for (int p : r.predictions) CHECK(p == 0);

  CHECK_THROWS_AS(evaluate(m, DatasetManifest{{}, data.class_names, {0, 0}}, gray_feed()), EmptyDataset);
  CHECK_THROWS_AS(evaluate(m, renamed(data, {"a", "b"}), gray_feed()), LabelMismatch);
}

TEST_CASE("prediction returns a distribution and is deterministic") {
  TempDir tmp("almond_predict");
  const auto data = generate_synthetic(1, 32, 32, 4);
  Model m(mini_config(), data.class_names, 2);
  const fs::path ckpt = tmp.path / "m.ckpt";
  save_checkpoint(m, ckpt, nullptr, {{"preprocess", preprocess_to_json(gray_feed())}, {"whole_image", true}});
  const fs::path img = tmp.path / "x.pgm";
  write_pgm(img, *data.samples[0].image);

  const auto a = predict(ckpt, img);
  const auto b = predict(ckpt, img);
  REQUIRE(a.probabilities.size() == 2);
  CHECK(a.probabilities[0] + a.probabilities[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(a.probabilities == b.probabilities);
  CHECK(a.label == data.class_names[a.label_index]);
  CHECK_THROWS_AS(predict(ckpt, tmp.path / "nope.pgm"), IoError);
}

TEST_CASE("preprocess parameters survive json") {
  PreprocessParams p;
  p.blur_kernel = 7;
  p.canny_input = Stage::thresh;
  p.feed_stage = Stage::canny;
  p.thresh_c = 3.5;
  const auto q = preprocess_from_json(preprocess_to_json(p));
  CHECK(q.blur_kernel == 7);
  CHECK(q.canny_input == Stage::thresh);
  CHECK(q.feed_stage == Stage::canny);
  CHECK(q.thresh_c == 3.5);
  CHECK_THROWS_AS(preprocess_from_json(nlohmann::json{{"blur_kernel", "big"}}), SchemaMismatch);
}

TEST_CASE("cli exit codes") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
  CHECK(cli({"train", "--epochs", "zero"}).code == kExitUsage);
  const auto missing = cli({"evaluate", "--checkpoint", "/nonexistent/x.ckpt", "--manifest", "/nonexistent/m.jsonl"});
  CHECK(missing.code == kExitRuntime);
  CHECK(missing.err.find("error") != std::string::npos);
}

TEST_CASE("cli trace prints the layer table") {
  const auto r = cli({"trace"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("flatten width: 128") != std::string::npos);
  CHECK(r.out.find("learnable parameters: 2885954") != std::string::npos);
  const auto mini = cli({"trace", "--model", "mini"});
  CHECK(mini.out.find("flatten width: 128") == std::string::npos);
}

TEST_CASE("cli reads options from a config file") {
  TempDir tmp("almond_cli_config");
  const fs::path ini = tmp.path / "run.ini";
  std::ofstream(ini) << "[synth]\nn-per-class=3\nheight=32\nwidth=32\nout-dir=" << (tmp.path / "data").string() << "\n";
  const auto r = cli({"--config", ini.string(), "synth"});
  REQUIRE(r.code == kExitOk);
  CHECK(load_manifest(tmp.path / "data" / "manifest.jsonl").size() == 6);
}

TEST_CASE("cli pipeline from synthetic data to a prediction") {
  TempDir tmp("almond_cli_flow");
  const std::string d = tmp.path.string();
  REQUIRE(cli({"synth", "--n-per-class", "10", "--seed", "3", "--out-dir", d + "/data"}).code == kExitOk);
  REQUIRE(cli({"split", "--manifest", d + "/data/manifest.jsonl", "--out-dir", d + "/split", "--test-fraction",
               "0.2", "--seed", "3"})
              .code == kExitOk);
  CHECK(load_manifest(d + "/split/test.jsonl").size() == 4);

  const std::vector<std::string> train_args{"train", "--train-manifest", d + "/split/train.jsonl", "--val-manifest",
                                            d + "/split/val.jsonl", "--epochs", "1", "--seed", "7",
                                            "--feed-stage", "gray"};
  auto first = train_args, second = train_args;
  first.insert(first.end(), {"--out-dir", d + "/r1"});
  second.insert(second.end(), {"--out-dir", d + "/r2"});
  const auto t1 = cli(first);
  INFO(t1.err);
  REQUIRE(t1.code == kExitOk);
  REQUIRE(cli(second).code == kExitOk);
  CHECK(slurp(d + "/r1/history.csv") == slurp(d + "/r2/history.csv"));

  const auto ev = cli({"evaluate", "--checkpoint", d + "/r1/best.ckpt", "--manifest", d + "/split/test.jsonl", "--out",
                       d + "/eval.json"});
  REQUIRE(ev.code == kExitOk);
  CHECK(ev.out.find("accuracy") != std::string::npos);
  const auto j = nlohmann::json::parse(slurp(d + "/eval.json"));
  CHECK(j.contains("confusion_matrix"));

  const auto img = load_manifest(d + "/data/manifest.jsonl").samples[0].path;
  const auto pr = cli({"predict", "--checkpoint", d + "/r1/best.ckpt", "--image", d + "/data/" + img});
  REQUIRE(pr.code == kExitOk);
  const auto pj = nlohmann::json::parse(pr.out);
  CHECK(pj.at("probabilities").size() == 2);
}
