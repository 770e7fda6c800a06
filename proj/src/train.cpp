#include "rxf/train.hpp"

#include <algorithm>
#include <numeric>

#include "rxf/parallel.hpp"
#include "rxf/random.hpp"

namespace rxf {

FilterMode parse_filter_mode(const std::string& s) {
  if (s == "none") return FilterMode::none;
  if (s == "range") return FilterMode::range;
  if (s == "cfar") return FilterMode::cfar;
  throw ContractError("unknown preprocessing mode '" + s + "' (expected none, range or cfar)");
}

std::string to_string(FilterMode m) {
  switch (m) {
    case FilterMode::none: return "none";
    case FilterMode::range: return "range";
    case FilterMode::cfar: return "cfar";
  }
  return "none";
}

void to_json(nlohmann::json& j, const InputConfig& c) {
  j = {{"mode", to_string(c.mode)},
       {"alpha", c.alpha},
       {"cfar", {{"guard", c.cfar.guard}, {"train", c.cfar.train}, {"scale", c.cfar.scale}}}};
}

void from_json(const nlohmann::json& j, InputConfig& c) {
  const InputConfig d;
  c.mode = parse_filter_mode(j.value("mode", to_string(d.mode)));
  c.alpha = j.value("alpha", d.alpha);
  if (j.contains("cfar")) {
    const auto& f = j.at("cfar");
    c.cfar.guard = f.value("guard", d.cfar.guard);
    c.cfar.train = f.value("train", d.cfar.train);
    c.cfar.scale = f.value("scale", d.cfar.scale);
  }
}

RadarCube3 prepare_cube(const SpectrumTesseract& spec, const InputConfig& in) {
  RadarCube3 cube = compress_doppler(spec);
  switch (in.mode) {
    case FilterMode::none: return cube;
    case FilterMode::range: {
      RadarCube3 out = to_dense(range_filter(cube, in.alpha));
      out.range_m = cube.range_m;
      out.elevation_rad = cube.elevation_rad;
      out.azimuth_rad = cube.azimuth_rad;
      return out;
    }
    case FilterMode::cfar: {
      RadarCube3 out = to_dense(ca_cfar(cube, in.cfar));
      out.range_m = cube.range_m;
      out.elevation_rad = cube.elevation_rad;
      out.azimuth_rad = cube.azimuth_rad;
      return out;
    }
  }
  return cube;
}

Sample make_sample(const Frame& f, const InputConfig& in) {
  return {f.id, prepare_cube(f.spectrum, in), f.image, f.camera, f.boxes()};
}

std::vector<Sample> load_samples(const std::filesystem::path& root, const std::string& split, const InputConfig& in,
                                 std::size_t jobs) {
  const auto ids = load_split(root).get(split);
  std::vector<Sample> out(ids.size());
  parallel_for(ids.size(), jobs, [&](std::size_t i) { out[i] = make_sample(load_frame(root, ids[i]), in); });
  return out;
}

std::vector<EpochStats> train(FusionModel& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                              const EpochCallback& on_epoch) {
  if (data.empty()) throw ContractError("train: no training frames");
  AdamW opt(model.params().all(), cfg.optim);
  Rng rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  LossConfig lc = cfg.loss;
  std::vector<EpochStats> history;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    EpochStats st;
    st.epoch = e + 1;
    for (std::size_t idx : order) {
      const Sample& s = data[idx];
      Tape tape;
      TapeScope scope(tape);
      model.params().zero_grad();
      const auto fwd = model.forward(s.cube, s.image, s.camera);
      const auto loss = total_loss(fwd.iterations, s.boxes, lc);
      tape.backward(loss.total);
      opt.step();
      st.loss += loss.total.item();
      st.cls += loss.cls;
      st.center += loss.center;
      st.size += loss.size;
      st.angle += loss.angle;
    }
    const double n = static_cast<double>(data.size());
    st.loss /= n;
    st.cls /= n;
    st.center /= n;
    st.size /= n;
    st.angle /= n;
    history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return history;
}

std::vector<Box3D> infer(const FusionModel& model, const Sample& s, std::size_t n_iter, const InferConfig& cfg) {
  const auto fwd = model.forward(s.cube, s.image, s.camera, n_iter);
  std::vector<Box3D> out;
  for (const auto& d : fwd.final_detections()) {
    const Box3D b = d.box();
    if (b.score >= cfg.score_threshold) out.push_back(b);
  }
  std::stable_sort(out.begin(), out.end(), [](const Box3D& a, const Box3D& b) { return a.score > b.score; });
  if (cfg.max_detections > 0 && out.size() > cfg.max_detections) out.resize(cfg.max_detections);
  return out;
}

}  // namespace rxf
