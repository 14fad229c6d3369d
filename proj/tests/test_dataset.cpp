#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "almond/dataset.hpp"
#include "almond/image_io.hpp"
#include "almond/rng.hpp"

using namespace almond;
namespace fs = std::filesystem;

namespace {

DatasetManifest toy_manifest(const std::vector<int>& per_class) {
  DatasetManifest m;
  for (std::size_t c = 0; c < per_class.size(); ++c) m.class_names.push_back("c" + std::to_string(c));
  for (std::size_t c = 0; c < per_class.size(); ++c)
    for (int i = 0; i < per_class[c]; ++i) {
      Sample s;
      s.label_index = static_cast<int>(c);
      s.label_name = m.class_names[c];
      s.path = "img/" + m.class_names[c] + "_" + std::to_string(i) + ".pgm";
      m.samples.push_back(s);
    }
  m.recount();
  return m;
}

std::vector<std::string> paths(const DatasetManifest& m) {
  std::vector<std::string> out;
  for (const auto& s : m.samples) out.push_back(s.path);
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("rng streams are fixed across platforms") {
  // Reference values from an independent reimplementation of
  // splitmix64-seeded xoshiro256**.
  Rng r(42);
  CHECK(r.next_u64() == 0x15780b2e0c2ec716ULL);
  CHECK(r.next_u64() == 0x6104d9866d113a7eULL);
  CHECK(r.next_u64() == 0xae17533239e499a1ULL);
  CHECK(Rng::derive(42, 0) == 0xc8ddbbbeab9cba1bULL);
  CHECK(Rng::derive(42, 5) == 0xc8c742d5ab11f1b4ULL);
}

TEST_CASE("rng helpers stay in range") {
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.05);
  CHECK(std::abs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("balanced class weights") {
  const std::vector<long long> balanced{300, 300};
  CHECK(compute_class_weights(balanced).weights == std::vector<double>{1.0, 1.0});
  const std::vector<long long> skewed{500, 100};
  CHECK(compute_class_weights(skewed).weights == std::vector<double>{0.6, 3.0});
  const std::vector<long long> single{17};
  CHECK(compute_class_weights(single).weights == std::vector<double>{1.0});
  const std::vector<long long> empty_class{5, 0};
  CHECK_THROWS_AS(compute_class_weights(empty_class), EmptyClass);
  CHECK_THROWS_AS(compute_class_weights(std::vector<long long>{}), EmptyClass);
}

TEST_CASE("class weights reweight to the sample total") {
  std::mt19937_64 gen(12);
  for (int t = 0; t < 100; ++t) {
    std::vector<long long> counts(1 + gen() % 6);
    long long total = 0;
    for (auto& c : counts) total += (c = 1 + static_cast<long long>(gen() % 1000));
    const auto w = compute_class_weights(counts).weights;
    double s = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      CHECK(w[c] > 0);
      s += w[c] * static_cast<double>(counts[c]);
    }
    CHECK(s == doctest::Approx(static_cast<double>(total)).epsilon(1e-12));
  }
}

TEST_CASE("round half down") {
  CHECK(round_half_down(2.5) == 2);
  CHECK(round_half_down(2.51) == 3);
  CHECK(round_half_down(52.992) == 53);
  CHECK(round_half_down(0.5) == 0);
  CHECK(round_half_down(0.0) == 0);
}

TEST_CASE("split of 736 balanced samples") {
  const auto m = toy_manifest({368, 368});
  const auto s = split_dataset(m, 0.2, 106.0 / 736.0, 1);
  CHECK(s.train.size() == 504);
  CHECK(s.val.size() == 126);
  CHECK(s.test.size() == 106);
  CHECK(s.train.class_counts == std::vector<long long>{252, 252});
  CHECK(s.val.class_counts == std::vector<long long>{63, 63});
  CHECK(s.test.class_counts == std::vector<long long>{53, 53});
  CHECK(s.train.split == Split::train);
  CHECK(s.test.split == Split::test);
}

TEST_CASE("zero fractions keep everything in train") {
  const auto m = toy_manifest({4, 6});
  const auto s = split_dataset(m, 0.0, 0.0, 3);
  CHECK(s.train.size() == 10);
  CHECK(s.val.empty());
  CHECK(s.test.empty());
}

TEST_CASE("split membership is frozen for a fixed seed") {
  DatasetManifest m;
  m.class_names = {"a", "b"};
  for (int i = 0; i < 10; ++i) {
    for (int c = 0; c < 2; ++c) {
      Sample s;
      s.label_index = c;
      s.label_name = m.class_names[c];
      s.path = m.class_names[c] + std::to_string(i);
      m.samples.push_back(s);
    }
  }
  m.recount();
  const auto s = split_dataset(m, 0.25, 0.2, 7);
  using V = std::vector<std::string>;
  CHECK(paths(s.train) == V{"a5", "a1", "a4", "a8", "a6", "a0", "b4", "b7", "b9", "b5", "b6", "b2"});
  CHECK(paths(s.val) == V{"a3", "a7", "b0", "b3"});
  CHECK(paths(s.test) == V{"a2", "a9", "b8", "b1"});
}

TEST_CASE("split partitions are disjoint, complete and seed-independent in size") {
  const auto m = toy_manifest({37, 91, 12});
  const auto ref = split_dataset(m, 0.2, 0.15, 0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = split_dataset(m, 0.2, 0.15, seed);
    std::multiset<std::string> all;
    for (const auto* part : {&s.train, &s.val, &s.test})
      for (const auto& p : paths(*part)) all.insert(p);
    CHECK(all.size() == m.size());
    CHECK(std::set<std::string>(all.begin(), all.end()).size() == m.size());
    CHECK(s.train.class_counts == ref.train.class_counts);
    CHECK(s.val.class_counts == ref.val.class_counts);
    CHECK(s.test.class_counts == ref.test.class_counts);
    const auto again = split_dataset(m, 0.2, 0.15, seed);
    CHECK(paths(again.train) == paths(s.train));
  }
  CHECK(paths(split_dataset(m, 0.2, 0.15, 1).train) != paths(split_dataset(m, 0.2, 0.15, 2).train));
}

TEST_CASE("split errors") {
  const auto m = toy_manifest({10, 10});
  CHECK_THROWS_AS(split_dataset(m, 1.0, 0.0, 1), InvalidFraction);
  CHECK_THROWS_AS(split_dataset(m, -0.1, 0.0, 1), InvalidFraction);
  CHECK_THROWS_AS(split_dataset(m, 0.5, 0.5, 1), InvalidFraction);
  CHECK_THROWS_AS(split_dataset(toy_manifest({10, 1}), 0.2, 0.2, 1), TooFewSamples);
  CHECK_THROWS_AS(split_dataset(toy_manifest({10, 2}), 0.0, 0.2, 1), TooFewSamples);
}

TEST_CASE("synthetic generation") {
  const auto two = generate_synthetic(1, 16, 16, 9);
  REQUIRE(two.size() == 2);
  CHECK(two.samples[0].label_name == "almond");
  CHECK(two.samples[1].label_name == "shell");

  const auto a = generate_synthetic(20, 24, 32, 5);
  const auto b = generate_synthetic(20, 24, 32, 5);
  CHECK(a.class_counts == std::vector<long long>{20, 20});
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a.samples[i].image.has_value());
    CHECK(a.samples[i].image->width() == 32);
    CHECK(a.samples[i].image->height() == 24);
    CHECK(*a.samples[i].image == *b.samples[i].image);
  }
  const auto c = generate_synthetic(20, 24, 32, 6);
  CHECK_FALSE(*c.samples[0].image == *a.samples[0].image);

  CHECK_THROWS_AS(generate_synthetic(0, 32, 32, 1), InvalidSize);
  CHECK_THROWS_AS(generate_synthetic(1, 15, 32, 1), InvalidSize);
}

TEST_CASE("synthetic almonds are brighter on average than shells") {
  // Same pose distribution, but a ring leaves its middle at background level.
  const auto m = generate_synthetic(50, 32, 32, 77);
  double sum[2] = {0, 0};
  for (const auto& s : m.samples)
    for (auto p : s.image->pixels()) sum[s.label_index] += p;
  CHECK(sum[0] > sum[1] * 1.05);
}

TEST_CASE("manifest round trip") {
  TempDir tmp("almond_manifest_test");
  DatasetManifest m = generate_synthetic(3, 16, 16, 2);
  write_sample_images(m, tmp.path / "data");
  m.samples[1].box = BBox{1, 2, 9, 10};
  m.split = Split::val;
  save_manifest(m, tmp.path / "lists" / "val.jsonl");
  const auto back = load_manifest(tmp.path / "lists" / "val.jsonl");
  CHECK(back.class_names == m.class_names);
  CHECK(back.class_counts == m.class_counts);
  CHECK(back.split == Split::val);
  REQUIRE(back.size() == m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(back.samples[i].label_index == m.samples[i].label_index);
    CHECK(back.samples[i].label_name == m.samples[i].label_name);
    CHECK(back.samples[i].box == m.samples[i].box);
    CHECK(back.samples[i].path.rfind("../data/images/", 0) == 0);
  }
  // Pixels resolve through the manifest directory.
  CHECK(load_sample_image(back.samples[0], back.base_dir) == *m.samples[0].image);
  CHECK(load_sample_image(back.samples[1], back.base_dir).width() == 8);

  DatasetManifest empty;
  empty.class_names = {"almond", "shell"};
  empty.recount();
  save_manifest(empty, tmp.path / "empty.jsonl");
  const auto e = load_manifest(tmp.path / "empty.jsonl");
  CHECK(e.empty());
  CHECK(e.class_names == empty.class_names);
}

TEST_CASE("manifest line count is one header plus one line per sample") {
  TempDir tmp("almond_manifest_count");
  const auto m = toy_manifest({368, 368});
  save_manifest(m, tmp.path / "m.jsonl");
  std::ifstream in(tmp.path / "m.jsonl");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 736 + 1);
}

TEST_CASE("manifest schema errors") {
  TempDir tmp("almond_manifest_bad");
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(tmp.path / name) << text;
    return tmp.path / name;
  };
  CHECK_THROWS_AS(load_manifest(tmp.path / "missing.jsonl"), IoError);
  CHECK_THROWS_AS(load_manifest(write("v9.jsonl",
                                      R"({"format":"almond-manifest","version":"v9","split":"train","class_names":["a"]})"
                                      "\n")),
                  SchemaMismatch);
  CHECK_THROWS_AS(load_manifest(write("label.jsonl",
                                      R"({"format":"almond-manifest","version":"v1","split":"train","class_names":["a"]})"
                                      "\n"
                                      R"({"split":"train","label":"b","path":"x.pgm"})"
                                      "\n")),
                  SchemaMismatch);
  CHECK_THROWS_AS(load_manifest(write("junk.jsonl", "not json\n")), SchemaMismatch);
  CHECK_THROWS_AS(load_manifest(write("empty.jsonl", "")), SchemaMismatch);
}

TEST_CASE("manifest from annotations") {
  std::vector<AnnotatedImage> pairs = {
      {"a.png", Annotation{"a.png", 10, 10, {{"shell", BBox{0, 0, 5, 5}}, {"almond", BBox{1, 1, 4, 4}}}}},
      {"b.png", Annotation{"b.png", 10, 10, {{"almond", BBox{2, 2, 6, 6}}}}}};
  const auto m = manifest_from_annotations(pairs);
  CHECK(m.class_names == std::vector<std::string>{"almond", "shell"});
  CHECK(m.class_counts == std::vector<long long>{2, 1});
  REQUIRE(m.size() == 3);
  CHECK(m.samples[0].label_index == 1);
  CHECK(m.samples[0].box == BBox{0, 0, 5, 5});
  CHECK_THROWS_AS(manifest_from_annotations(pairs, {"almond"}), LabelMismatch);
}

TEST_CASE("manifest validation") {
  auto m = toy_manifest({2, 2});
  CHECK_NOTHROW(m.validate());
  m.samples[0].label_name = "c1";
  CHECK_THROWS_AS(m.validate(), SchemaMismatch);
  auto d = toy_manifest({1, 1});
  d.class_names = {"x", "x"};
  CHECK_THROWS_AS(d.validate(), SchemaMismatch);
  CHECK(parse_split("test") == Split::test);
  CHECK_THROWS_AS(parse_split("holdout"), SchemaMismatch);
}
