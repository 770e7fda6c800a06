// rxf: dataset synthesis, preprocessing, toy training, inference, evaluation and plots.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rxf/eval.hpp"
#include "rxf/fusion.hpp"
#include "rxf/io.hpp"
#include "rxf/parallel.hpp"
#include "rxf/plot.hpp"
#include "rxf/preprocess.hpp"
#include "rxf/spectrum_sim.hpp"
#include "rxf/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rxf;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const fs::path& p) {
  if (!fs::exists(p)) throw Failure("file not found: " + p.string());
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw Failure(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw Failure(what + " is not a directory: " + p.string());
}

/// Seed precedence: --seed, then the config file, then RXF_SEED, then 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const json& file, const char* key) {
  if (flag) return *flag;
  if (file.contains(key)) return file.at(key).get<std::uint64_t>();
  if (const char* env = std::getenv("RXF_SEED"); env && *env) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw Failure(std::string("RXF_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

json detections_json(const std::vector<Box3D>& boxes) {
  json out = json::array();
  for (const auto& b : boxes) {
    out.push_back({{"class_id", b.class_id},
                   {"score", b.score},
                   {"center", {b.center.x(), b.center.y(), b.center.z()}},
                   {"size", {b.size.x(), b.size.y(), b.size.z()}},
                   {"yaw", b.yaw}});
  }
  return out;
}

std::vector<Box3D> read_detections(const fs::path& p) {
  const json j = read_json(p);
  if (!j.is_array()) throw Failure(p.string() + ": expected a JSON list of detections");
  std::vector<Box3D> out;
  for (const auto& d : j) {
    Box3D b;
    b.class_id = d.at("class_id").get<int>();
    b.score = d.value("score", 1.0);
    const auto c = d.at("center").get<std::array<double, 3>>();
    const auto s = d.at("size").get<std::array<double, 3>>();
    b.center = Eigen::Vector3d(c[0], c[1], c[2]);
    b.size = Eigen::Vector3d(s[0], s[1], s[2]);
    b.yaw = d.at("yaw").get<double>();
    out.push_back(b);
  }
  return out;
}

std::vector<std::string> split_ids(const fs::path& data, const std::string& split) {
  const Split s = load_split(data);
  if (split == "all") {
    std::vector<std::string> ids = s.train;
    ids.insert(ids.end(), s.val.begin(), s.val.end());
    ids.insert(ids.end(), s.test.begin(), s.test.end());
    std::sort(ids.begin(), ids.end());
    return ids;
  }
  return s.get(split);
}

// ---- run configuration for training / inference ---------------------------

struct RunConfig {
  ModelConfig model;
  InputConfig input;
  TrainConfig train;
};

json run_json(const RunConfig& rc) {
  return {{"model", rc.model},
          {"input", rc.input},
          {"train",
           {{"epochs", rc.train.epochs},
            {"lr", rc.train.optim.lr},
            {"weight_decay", rc.train.optim.weight_decay},
            {"aux_loss", rc.train.loss.aux_loss},
            {"focal_gamma", rc.train.loss.focal.gamma},
            {"focal_alpha", rc.train.loss.focal.alpha},
            {"shuffle_seed", rc.train.shuffle_seed}}}};
}

/// Accepts either {"model": ..., "input": ..., "train": ...} or a bare model config.
RunConfig parse_run(const json& j, const SphericalGrid& data_grid) {
  RunConfig rc;
  json model = j.contains("model") ? j.at("model") : j;
  if (!model.contains("grid")) model["grid"] = data_grid;
  rc.model = model.get<ModelConfig>();
  if (j.contains("input")) rc.input = j.at("input").get<InputConfig>();
  if (j.contains("train")) {
    const auto& t = j.at("train");
    rc.train.epochs = t.value("epochs", rc.train.epochs);
    rc.train.optim.lr = t.value("lr", rc.train.optim.lr);
    rc.train.optim.weight_decay = t.value("weight_decay", rc.train.optim.weight_decay);
    rc.train.loss.aux_loss = t.value("aux_loss", rc.model.aux_loss);
    rc.train.loss.focal.gamma = t.value("focal_gamma", rc.train.loss.focal.gamma);
    rc.train.loss.focal.alpha = t.value("focal_alpha", rc.train.loss.focal.alpha);
    rc.train.shuffle_seed = t.value("shuffle_seed", rc.train.shuffle_seed);
  } else {
    rc.train.loss.aux_loss = rc.model.aux_loss;
  }
  return rc;
}

SphericalGrid dataset_grid(const fs::path& data) {
  return read_json(data / "dataset.json").get<DatasetConfig>().grid.spatial;
}

void check_grid(const ModelConfig& m, const SphericalGrid& g) {
  const auto& a = m.grid;
  if (a.range_bins != g.range_bins || a.elevation_bins != g.elevation_bins || a.azimuth_bins != g.azimuth_bins) {
    throw Failure("model grid extents do not match the dataset grid");
  }
}

// ---- subcommands -------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> train, val, test;
  std::size_t jobs = default_jobs();
};

int cmd_synth(const SynthArgs& a) {
  json j = a.config.empty() ? json::object() : read_json(a.config);
  if (a.train) j["train"] = *a.train;
  if (a.val) j["val"] = *a.val;
  if (a.test) j["test"] = *a.test;
  j["seed"] = resolve_seed(a.seed, j, "seed");
  const auto cfg = j.get<DatasetConfig>();
  make_dataset(cfg, a.out, a.jobs);
  std::cout << "wrote " << cfg.frame_count() << " frames (train " << cfg.train << ", val " << cfg.val << ", test "
            << cfg.test << ") to " << a.out << "\n";
  return 0;
}

struct PreprocessArgs {
  std::string data, split = "all", mode = "range", out, report;
  double alpha = 0.15;
  std::size_t jobs = default_jobs();
};

int cmd_preprocess(const PreprocessArgs& a) {
  require_dir(a.data, "--data");
  InputConfig in;
  in.mode = parse_filter_mode(a.mode);
  in.alpha = a.alpha;
  const auto ids = split_ids(a.data, a.split);
  if (!a.out.empty()) fs::create_directories(a.out);
  struct Row {
    std::size_t d = 0, dense = 0, compressed = 0, kept = 0, cells = 0;
  };
  std::vector<Row> rows(ids.size());
  parallel_for(ids.size(), a.jobs, [&](std::size_t i) {
    const Frame f = load_frame(a.data, ids[i]);
    const RadarCube3 cube = compress_doppler(f.spectrum);
    Row r;
    r.d = f.spectrum.power.dim(0);
    r.dense = f.spectrum.power.size();
    r.compressed = cube.channels.size();
    r.cells = cube.range_bins() * cube.elevation_bins() * cube.azimuth_bins();
    if (in.mode == FilterMode::none) {
      r.kept = r.cells;
      if (!a.out.empty()) save_rxt(fs::path(a.out) / (ids[i] + ".rxt"), cube.channels);
    } else {
      const SparseSpectrum s = in.mode == FilterMode::range ? range_filter(cube, in.alpha) : ca_cfar(cube, in.cfar);
      r.kept = s.points.size();
      if (!a.out.empty()) save_rxs(fs::path(a.out) / (ids[i] + ".rxs"), s);
    }
    rows[i] = r;
  });
  json frames = json::array();
  double ratio = 0, retention = 0;
  std::size_t D = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& r = rows[i];
    D = r.d;
    const double fr = static_cast<double>(r.kept) / static_cast<double>(r.cells);
    frames.push_back({{"id", ids[i]}, {"kept_cells", r.kept}, {"retention", fr}});
    ratio += static_cast<double>(r.dense) / static_cast<double>(r.compressed);
    retention += fr;
  }
  const double n = std::max<double>(1.0, static_cast<double>(ids.size()));
  const json rep = {{"mode", a.mode},
                    {"alpha", a.alpha},
                    {"doppler_bins", D},
                    {"compression_ratio", ratio / n},
                    {"expected_ratio", static_cast<double>(D) / 3.0},
                    {"mean_retention", retention / n},
                    {"frames", frames}};
  std::cout << "frames: " << ids.size() << "\n"
            << "compression ratio: " << fmt(ratio / n) << " (D/3 = " << fmt(static_cast<double>(D) / 3.0) << ")\n"
            << "mean retention (" << a.mode << "): " << fmt(retention / n) << "\n";
  if (!a.report.empty()) write_json(a.report, rep);
  return 0;
}

struct TrainArgs {
  std::string data, config, out, split = "train";
  std::optional<std::size_t> epochs, n_iter;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = default_jobs();
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  require_dir(a.data, "--data");
  const json file = a.config.empty() ? json::object() : read_json(a.config);
  const auto grid = dataset_grid(a.data);
  RunConfig rc = parse_run(file, grid);
  check_grid(rc.model, grid);
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.lr) rc.train.optim.lr = *a.lr;
  if (a.n_iter) rc.model.n_iter = *a.n_iter;
  const json model_file = file.contains("model") ? file.at("model") : file;
  rc.model.seed = resolve_seed(a.seed, model_file, "seed");
  rc.train.shuffle_seed = mix_seed(rc.model.seed, 0x7A1);
  rc.model.validate();

  const auto data = load_samples(a.data, a.split, rc.input, a.jobs);
  FusionModel model(rc.model);
  fs::create_directories(a.out);
  std::ofstream csv(fs::path(a.out) / "loss.csv", std::ios::binary);
  csv << "epoch,loss,cls,center,size,angle\n";
  train(model, data, rc.train, [&](const EpochStats& s) {
    csv << s.epoch << ',' << fmt(s.loss) << ',' << fmt(s.cls) << ',' << fmt(s.center) << ',' << fmt(s.size) << ','
        << fmt(s.angle) << '\n';
    csv.flush();
    if (!a.quiet) std::cerr << "epoch " << s.epoch << " loss " << fmt(s.loss) << "\n";
  });
  model.params().save(fs::path(a.out) / "model.rxa");
  write_json(fs::path(a.out) / "config.json", run_json(rc));
  std::cout << "trained " << rc.train.epochs << " epochs on " << data.size() << " frames; checkpoint in " << a.out
            << "\n";
  return 0;
}

struct InferArgs {
  std::string data, checkpoint, out, split = "test";
  std::optional<std::size_t> n_iter;
  double threshold = 0.05;
  std::size_t jobs = default_jobs();
};

int cmd_infer(const InferArgs& a) {
  require_dir(a.data, "--data");
  require_dir(a.checkpoint, "--checkpoint");
  const auto grid = dataset_grid(a.data);
  const RunConfig rc = parse_run(read_json(fs::path(a.checkpoint) / "config.json"), grid);
  check_grid(rc.model, grid);
  FusionModel model(rc.model);
  model.params().load(fs::path(a.checkpoint) / "model.rxa");
  const std::size_t n_iter = a.n_iter.value_or(rc.model.n_iter);
  const auto ids = split_ids(a.data, a.split);
  fs::create_directories(a.out);
  std::vector<std::string> errors(ids.size());
  parallel_for(ids.size(), a.jobs, [&](std::size_t i) {
    try {
      const Sample s = make_sample(load_frame(a.data, ids[i]), rc.input);
      InferConfig ic;
      ic.score_threshold = a.threshold;
      write_json(fs::path(a.out) / (ids[i] + ".json"), detections_json(infer(model, s, n_iter, ic)));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::size_t failed = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (errors[i].empty()) continue;
    ++failed;
    std::cerr << "frame " << ids[i] << ": " << errors[i] << "\n";
  }
  if (failed) throw Failure(std::to_string(failed) + " of " + std::to_string(ids.size()) + " frames failed");
  std::cout << "wrote detections for " << ids.size() << " frames to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string pred, gt, report, csv, split = "test";
  double error_iou = 0.3;
};

/// Ground truth is either a dataset directory (labels of `split`) or a
/// directory of detection-format JSON files.
std::vector<std::pair<std::string, std::vector<Box3D>>> load_ground_truth(const fs::path& gt, const std::string& split) {
  std::vector<std::pair<std::string, std::vector<Box3D>>> out;
  if (fs::exists(gt / "split.json")) {
    for (const auto& id : split_ids(gt, split)) out.emplace_back(id, load_frame(gt, id, false).boxes());
    return out;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(gt))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.emplace_back(f.stem().string(), read_detections(f));
  return out;
}

std::vector<FrameBoxes> load_eval_frames(const fs::path& pred, const fs::path& gt, const std::string& split) {
  require_dir(pred, "--pred");
  require_dir(gt, "--gt");
  std::vector<FrameBoxes> frames;
  std::vector<std::string> missing;
  for (auto& [id, boxes] : load_ground_truth(gt, split)) {
    const fs::path p = pred / (id + ".json");
    if (!fs::exists(p)) {
      missing.push_back(id);
      continue;
    }
    frames.push_back({read_detections(p), std::move(boxes)});
  }
  if (!missing.empty()) {
    for (const auto& id : missing) std::cerr << "frame " << id << ": no prediction file\n";
    throw Failure(std::to_string(missing.size()) + " frames have no predictions");
  }
  return frames;
}

int cmd_eval(const EvalArgs& a) {
  const auto frames = load_eval_frames(a.pred, a.gt, a.split);
  EvalConfig cfg;
  cfg.error_iou = a.error_iou;
  const EvalReport r = evaluate(frames, cfg);
  if (!a.report.empty()) write_json(a.report, json(r));
  if (!a.csv.empty()) {
    std::ostringstream os;
    write_csv(os, r);
    write_file(a.csv, os.str());
  }
  std::cout << "frames " << r.frames << ", predictions " << r.predictions << ", ground truth " << r.ground_truth
            << "\n";
  for (const auto& m : r.map) std::cout << to_string(m.space) << " mAP@" << fmt(m.threshold) << " = " << fmt(m.map) << "\n";
  return 0;
}

struct PlotArgs {
  std::string data, frame, pred, loss, out, split = "test";
};

std::vector<std::vector<double>> read_csv_columns(const fs::path& p, std::size_t ncols) {
  std::istringstream is(read_file(p));
  std::string line;
  std::getline(is, line);  // header
  std::vector<std::vector<double>> cols(ncols);
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string cell;
    for (std::size_t c = 0; c < ncols && std::getline(ls, cell, ','); ++c) cols[c].push_back(std::stod(cell));
  }
  return cols;
}

int cmd_plot(const PlotArgs& a) {
  fs::create_directories(a.out);
  std::size_t written = 0;
  if (!a.data.empty()) {
    require_dir(a.data, "--data");
    const auto ids = split_ids(a.data, a.split);
    const std::string id = a.frame.empty() ? (ids.empty() ? "" : ids.front()) : a.frame;
    if (id.empty()) throw Failure("no frame to plot");
    const Frame f = load_frame(a.data, id);
    std::vector<Box3D> preds;
    if (!a.pred.empty() && fs::exists(fs::path(a.pred) / (id + ".json"))) preds = read_detections(fs::path(a.pred) / (id + ".json"));
    bev_spectrum(compress_doppler(f.spectrum), f.boxes(), preds).save_ppm(fs::path(a.out) / ("bev_" + id + ".ppm"));
    ++written;
    if (!a.pred.empty()) {
      const auto frames = load_eval_frames(a.pred, a.data, a.split);
      std::vector<Series> series;
      std::string csv = "space,recall,precision\n";
      const Rgb colors[] = {{31, 119, 180}, {214, 39, 40}};
      int k = 0;
      for (IouSpace sp : {IouSpace::bev, IouSpace::box3d}) {
        Series s;
        s.color = colors[k++];
        const auto ap = average_precision(frames, 0, iou_function(sp), 0.3);
        for (const auto& p : ap.curve) {
          s.x.push_back(p.recall);
          s.y.push_back(p.precision);
          csv += to_string(sp) + "," + fmt(p.recall) + "," + fmt(p.precision) + "\n";
        }
        series.push_back(std::move(s));
      }
      line_chart(series, 320, 240, {0, 1}, {0, 1}).save_ppm(fs::path(a.out) / "pr_curve.ppm");
      write_file(fs::path(a.out) / "pr_curve.csv", csv);
      ++written;
    }
  }
  if (!a.loss.empty()) {
    const auto cols = read_csv_columns(a.loss, 2);
    Series s;
    s.x = cols[0];
    s.y = cols[1];
    line_chart({s}, 320, 240).save_ppm(fs::path(a.out) / "loss.ppm");
    ++written;
  }
  if (written == 0) throw Failure("nothing to plot: pass --data and/or --loss");
  std::cout << "wrote " << written << " plot(s) to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radar-camera 3D detection toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Render a synthetic radar-camera dataset");
  synth->add_option("--config", sa.config, "Dataset config JSON");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--seed", sa.seed, "Dataset seed (falls back to RXF_SEED)");
  synth->add_option("--train", sa.train, "Training frames");
  synth->add_option("--val", sa.val, "Validation frames");
  synth->add_option("--test", sa.test, "Test frames");
  synth->add_option("--jobs", sa.jobs, "Worker threads")->check(CLI::PositiveNumber);

  PreprocessArgs pa;
  auto* pre = app.add_subcommand("preprocess", "Doppler compression and spectrum filtering");
  pre->add_option("--data", pa.data, "Dataset directory")->required();
  pre->add_option("--split", pa.split, "train, val, test or all");
  pre->add_option("--mode", pa.mode, "none, range or cfar")->check(CLI::IsMember({"none", "range", "cfar"}));
  pre->add_option("--alpha", pa.alpha, "Range-filter threshold fraction");
  pre->add_option("--out", pa.out, "Directory for filtered spectra");
  pre->add_option("--report", pa.report, "Report JSON path");
  pre->add_option("--jobs", pa.jobs, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train-toy", "Train the detector on a synthetic dataset");
  tr->add_option("--data", ta.data, "Dataset directory")->required();
  tr->add_option("--config", ta.config, "Model/run config JSON");
  tr->add_option("--out", ta.out, "Checkpoint directory")->required();
  tr->add_option("--epochs", ta.epochs, "Training epochs");
  tr->add_option("--lr", ta.lr, "Learning rate");
  tr->add_option("--n-iter", ta.n_iter, "Refinement iterations");
  tr->add_option("--seed", ta.seed, "Initialization seed (falls back to RXF_SEED)");
  tr->add_option("--split", ta.split, "Training split");
  tr->add_option("--jobs", ta.jobs, "Worker threads for loading")->check(CLI::PositiveNumber);
  tr->add_flag("--quiet", ta.quiet, "No per-epoch progress");

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "Write per-frame detections");
  inf->add_option("--data", ia.data, "Dataset directory")->required();
  inf->add_option("--checkpoint", ia.checkpoint, "Directory written by train-toy")->required();
  inf->add_option("--out", ia.out, "Detections directory")->required();
  inf->add_option("--split", ia.split, "train, val, test or all");
  inf->add_option("--n-iter", ia.n_iter, "Refinement iterations");
  inf->add_option("--score-threshold", ia.threshold, "Minimum score kept");
  inf->add_option("--jobs", ia.jobs, "Worker threads")->check(CLI::PositiveNumber);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "AP/mAP and error metrics");
  ev->add_option("--pred", ea.pred, "Detections directory")->required();
  ev->add_option("--gt", ea.gt, "Dataset directory or directory of box JSON files")->required();
  ev->add_option("--report", ea.report, "Report JSON path");
  ev->add_option("--csv", ea.csv, "Table-shaped CSV path");
  ev->add_option("--split", ea.split, "Split when --gt is a dataset");
  ev->add_option("--error-iou", ea.error_iou, "3D IoU for error-metric matching");

  PlotArgs pla;
  auto* pl = app.add_subcommand("plot", "Emit PPM plots");
  pl->add_option("--data", pla.data, "Dataset directory");
  pl->add_option("--frame", pla.frame, "Frame id for the BEV view");
  pl->add_option("--pred", pla.pred, "Detections directory (overlay and PR curves)");
  pl->add_option("--loss", pla.loss, "loss.csv from train-toy");
  pl->add_option("--split", pla.split, "Split for PR curves");
  pl->add_option("--out", pla.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (*synth) return cmd_synth(sa);
    if (*pre) return cmd_preprocess(pa);
    if (*tr) return cmd_train(ta);
    if (*inf) return cmd_infer(ia);
    if (*ev) return cmd_eval(ea);
    if (*pl) return cmd_plot(pla);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
