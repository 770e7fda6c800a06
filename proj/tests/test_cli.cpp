#include <doctest.h>

#include <json.hpp>

#include "cli_support.hpp"

using namespace rxf::testing;
using nlohmann::json;

namespace {

const char* kSmallDataset = R"({"train": 4, "val": 0, "test": 3,
  "grid": {"range_m": [2.0, 26.0], "elevation_rad": [-0.26, 0.26], "azimuth_rad": [-0.8, 0.8],
           "extents": [16, 4, 16], "doppler_mps": [-15, 15], "doppler_bins": 64},
  "image_size_hw": [16, 32], "camera_hfov_rad": 1.8, "objects_per_frame": [1, 3], "yaw_rad": [-0.3, 0.3]})";

const char* kSmallModel = R"({"model": {"num_queries": 4, "query_lattice": [2, 1, 2], "heads": 2, "points": 1,
  "channels": 8, "ffn_hidden": 8, "n_iter": 2,
  "radar_pyramid": {"levels": 2, "base_channels": 2, "out_channels": 8, "blocks_per_stage": 1,
                    "stage_strides": [[1, 1, 1], [2, 2, 2]], "neck_smooth": false},
  "image_pyramid": {"levels": 2, "base_channels": 2, "out_channels": 8, "blocks_per_stage": 1,
                    "stage_strides": [[1, 1, 1], [1, 2, 2]], "neck_smooth": false},
  "center_scale": 2.0, "size_anchor": [4.0, 1.8, 1.6]},
  "train": {"epochs": 2, "lr": 1e-3}})";

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string at(const std::string& rel) const { return quote((dir / rel).string()); }
};

}  // namespace

TEST_CASE("preprocess reports the Doppler compression factor") {
  Scratch s("rxf_cli_pre");
  write_text(s.dir / "ds.json", kSmallDataset);
  REQUIRE(run_cli("synth --config " + s.at("ds.json") + " --out " + s.at("d") + " --seed 2 --jobs 2", s.dir).code == 0);
  const auto r = run_cli("preprocess --data " + s.at("d") + " --mode none --report " + s.at("none.json"), s.dir);
  REQUIRE(r.code == 0);
  const json none = json::parse(slurp(s.dir / "none.json"));
  CHECK(none["compression_ratio"].get<double>() == 64.0 / 3.0);
  CHECK(none["mean_retention"].get<double>() == 1.0);
  CHECK(r.out.find("21.3333") != std::string::npos);

  REQUIRE(run_cli("preprocess --data " + s.at("d") + " --mode range --alpha 0.15 --out " + s.at("sparse") +
                      " --report " + s.at("range.json") + " --jobs 3",
                  s.dir)
              .code == 0);
  const json range = json::parse(slurp(s.dir / "range.json"));
  CHECK(range["mean_retention"].get<double>() < 1.0);
  CHECK(fs::exists(s.dir / "sparse" / "000000.rxs"));
  CHECK(run_cli("preprocess --data " + s.at("d") + " --mode cfar --report " + s.at("cfar.json"), s.dir).code == 0);
}

TEST_CASE("noise-only scenes keep few cells") {
  Scratch s("rxf_cli_noise");
  write_text(s.dir / "ds.json", R"({"train": 0, "val": 0, "test": 3, "objects_per_frame": [0, 0]})");
  REQUIRE(run_cli("synth --config " + s.at("ds.json") + " --out " + s.at("d") + " --seed 5", s.dir).code == 0);
  REQUIRE(run_cli("preprocess --data " + s.at("d") + " --mode range --alpha 0.15 --report " + s.at("r.json"), s.dir)
              .code == 0);
  const json r = json::parse(slurp(s.dir / "r.json"));
  for (const auto& f : r["frames"]) CHECK(f["retention"].get<double>() < 0.2);
}

TEST_CASE("pipeline is byte-deterministic") {
  Scratch s("rxf_cli_det");
  write_text(s.dir / "ds.json", kSmallDataset);
  write_text(s.dir / "model.json", kSmallModel);
  REQUIRE(run_cli("synth --config " + s.at("ds.json") + " --out " + s.at("a") + " --seed 7 --jobs 1", s.dir).code == 0);
  REQUIRE(run_cli("synth --config " + s.at("ds.json") + " --out " + s.at("b") + " --seed 7 --jobs 4", s.dir).code == 0);
  REQUIRE(run_cli("synth --config " + s.at("ds.json") + " --out " + s.at("c"), s.dir, "RXF_SEED=7").code == 0);
  REQUIRE(run_cli("synth --config " + s.at("ds.json") + " --out " + s.at("e") + " --seed 8", s.dir).code == 0);
  const auto a = tree_bytes(s.dir / "a");
  CHECK(a.size() > 10);
  CHECK(a == tree_bytes(s.dir / "b"));
  CHECK(a == tree_bytes(s.dir / "c"));
  CHECK(a != tree_bytes(s.dir / "e"));

  const auto train = run_cli("train-toy --data " + s.at("a") + " --config " + s.at("model.json") + " --out " +
                                 s.at("ck") + " --seed 1 --quiet",
                             s.dir);
  REQUIRE(train.code == 0);
  CHECK(fs::exists(s.dir / "ck" / "model.rxa"));
  const std::string loss = slurp(s.dir / "ck" / "loss.csv");
  CHECK(std::count(loss.begin(), loss.end(), '\n') == 3);

  for (const char* j : {"1", "3"})
    REQUIRE(run_cli("infer --data " + s.at("a") + " --checkpoint " + s.at("ck") + " --out " + s.at(std::string("p") + j) +
                        " --score-threshold 0 --jobs " + j,
                    s.dir)
                .code == 0);
  const auto p1 = tree_bytes(s.dir / "p1");
  CHECK(p1.size() == 3);
  CHECK(p1 == tree_bytes(s.dir / "p3"));
  const json det = json::parse(p1.begin()->second);
  REQUIRE(det.is_array());
  for (const auto& d : det) {
    CHECK(d["center"].size() == 3);
    CHECK(d["size"].size() == 3);
    CHECK(d.contains("yaw"));
    CHECK(d.contains("class_id"));
    CHECK(d["score"].get<double>() >= 0);
  }

  for (const char* k : {"1", "2"})
    REQUIRE(run_cli("eval --pred " + s.at("p1") + " --gt " + s.at("a") + " --report " + s.at(std::string("r") + k + ".json") +
                        " --csv " + s.at(std::string("r") + k + ".csv"),
                    s.dir)
                .code == 0);
  CHECK(slurp(s.dir / "r1.json") == slurp(s.dir / "r2.json"));
  CHECK(slurp(s.dir / "r1.csv") == slurp(s.dir / "r2.csv"));
  const json rep = json::parse(slurp(s.dir / "r1.json"));
  CHECK(rep["map"].size() == 8);

  // ground truth given as detection-format files evaluates to a perfect score
  fs::create_directories(s.dir / "gtjson");
  for (const auto& [name, bytes] : p1) write_text(s.dir / "gtjson" / name, bytes);
  REQUIRE(run_cli("eval --pred " + s.at("p1") + " --gt " + s.at("gtjson") + " --report " + s.at("self.json"), s.dir)
              .code == 0);
  const json self = json::parse(slurp(s.dir / "self.json"));
  for (const auto& m : self["map"]) CHECK(m["map"].get<double>() == 1.0);

  const auto test_ids = json::parse(slurp(s.dir / "a" / "split.json"))["test"].get<std::vector<std::string>>();
  REQUIRE(test_ids.size() == 3);
  const auto plot = run_cli("plot --data " + s.at("a") + " --frame " + test_ids[0] + " --pred " + s.at("p1") + " --loss " +
                                s.at("ck/loss.csv") + " --out " + s.at("plots"),
                            s.dir);
  CHECK(plot.code == 0);
  CHECK(fs::exists(s.dir / "plots" / ("bev_" + test_ids[0] + ".ppm")));
  CHECK(fs::exists(s.dir / "plots" / "pr_curve.ppm"));
  CHECK(fs::exists(s.dir / "plots" / "loss.ppm"));

  // a damaged frame fails the run and is named on stderr
  write_text(s.dir / "a" / "frames" / test_ids[1] / "spectrum.rxt", "garbage");
  const auto bad = run_cli("infer --data " + s.at("a") + " --checkpoint " + s.at("ck") + " --out " + s.at("pbad"), s.dir);
  CHECK(bad.code != 0);
  CHECK(bad.err.find(test_ids[1]) != std::string::npos);
  CHECK(fs::exists(s.dir / "pbad" / (test_ids[0] + ".json")));
  // missing predictions are enumerated too
  fs::remove(s.dir / "p1" / (test_ids[2] + ".json"));
  const auto miss = run_cli("eval --pred " + s.at("p1") + " --gt " + s.at("a"), s.dir);
  CHECK(miss.code != 0);
  CHECK(miss.err.find(test_ids[2]) != std::string::npos);
}

TEST_CASE("usage errors exit non-zero") {
  Scratch s("rxf_cli_err");
  CHECK(run_cli("", s.dir).code != 0);
  CHECK(run_cli("frobnicate", s.dir).code != 0);
  CHECK(run_cli("synth --out " + s.at("x") + " --config " + s.at("missing.json"), s.dir).code != 0);
  CHECK(run_cli("preprocess --data " + s.at("nowhere"), s.dir).code != 0);
  CHECK(run_cli("preprocess --data " + s.at("nowhere") + " --mode median", s.dir).code != 0);
  CHECK(run_cli("eval --pred " + s.at("nowhere") + " --gt " + s.at("nowhere"), s.dir).code != 0);
  CHECK(run_cli("--help", s.dir).code == 0);
}
