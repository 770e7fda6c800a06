#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rxf/fusion.hpp"
#include "rxf/matching_loss.hpp"
#include "rxf/preprocess.hpp"

namespace rxf {

/// Model-ready frame: Doppler-compressed (optionally filtered) radar cube,
/// camera image, calibration and labels.
struct Sample {
  std::string id;
  RadarCube3 cube;
  Tensor image;
  CameraModel camera;
  std::vector<Box3D> boxes;
};

enum class FilterMode { none, range, cfar };
FilterMode parse_filter_mode(const std::string& s);
std::string to_string(FilterMode m);

struct InputConfig {
  FilterMode mode = FilterMode::range;
  double alpha = 0.15;
  CfarParams cfar;
};

void to_json(nlohmann::json& j, const InputConfig& c);
void from_json(const nlohmann::json& j, InputConfig& c);

RadarCube3 prepare_cube(const SpectrumTesseract& spec, const InputConfig& in);
Sample make_sample(const Frame& f, const InputConfig& in);
/// Loads and prepares every frame of a split, `jobs` frames at a time.
std::vector<Sample> load_samples(const std::filesystem::path& root, const std::string& split, const InputConfig& in,
                                 std::size_t jobs = 1);

struct TrainConfig {
  std::size_t epochs = 150;
  AdamWConfig optim;
  LossConfig loss;
  std::uint64_t shuffle_seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0, cls = 0, center = 0, size = 0, angle = 0;  // means over frames
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// AdamW over the model parameters, batch size one, frames shuffled per epoch.
std::vector<EpochStats> train(FusionModel& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                              const EpochCallback& on_epoch = {});

struct InferConfig {
  double score_threshold = 0.05;
  std::size_t max_detections = 0;  // 0 keeps all
};

/// Final-iteration boxes sorted by descending score.
std::vector<Box3D> infer(const FusionModel& model, const Sample& s, std::size_t n_iter,
                         const InferConfig& cfg = {});

}  // namespace rxf
