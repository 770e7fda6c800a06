#include "rxf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rxf {

// ---- config ----------------------------------------------------------------

void ModelConfig::validate() const {
  if (num_queries < 1) throw ContractError("ModelConfig: need at least one query");
  if (heads < 1 || channels % heads != 0) throw ContractError("ModelConfig: channels must be divisible by heads");
  if (points < 1 || n_iter < 1 || num_classes < 1) throw ContractError("ModelConfig: points, n_iter, classes must be >= 1");
  radar_pyramid.validate();
  image_pyramid.validate();
  if (radar_pyramid.levels != image_pyramid.levels) throw ContractError("ModelConfig: pyramids must have equal levels");
  if (radar_pyramid.out_channels != channels || image_pyramid.out_channels != channels) {
    throw ContractError("ModelConfig: pyramid output width must equal the query width");
  }
  const auto& lc = query_lattice;
  const bool auto_lattice = lc[0] == 0 && lc[1] == 0 && lc[2] == 0;
  if (!auto_lattice && lc[0] * lc[1] * lc[2] != num_queries) {
    throw ContractError("ModelConfig: query lattice does not multiply to num_queries");
  }
  if (!(center_scale > 0) || !(doppler_scale > 0)) throw ContractError("ModelConfig: scales must be positive");
  grid.validate();
  const auto top = radar_pyramid.cumulative_stride(radar_pyramid.levels - 1);
  if (grid.range_bins % top[0] || grid.elevation_bins % top[1] || grid.azimuth_bins % top[2]) {
    throw ContractError("ModelConfig: radar grid extents are not divisible by the pyramid strides");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"num_queries", c.num_queries},
       {"query_lattice", c.query_lattice},
       {"heads", c.heads},
       {"points", c.points},
       {"channels", c.channels},
       {"ffn_hidden", c.ffn_hidden},
       {"n_iter", c.n_iter},
       {"num_classes", c.num_classes},
       {"aux_loss", c.aux_loss},
       {"radar_pyramid", c.radar_pyramid},
       {"image_pyramid", c.image_pyramid},
       {"grid", c.grid},
       {"center_scale", c.center_scale},
       {"size_anchor", c.size_anchor},
       {"log_input", c.log_input},
       {"doppler_scale", c.doppler_scale},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.num_queries = j.value("num_queries", d.num_queries);
  c.query_lattice = j.value("query_lattice", d.query_lattice);
  c.heads = j.value("heads", d.heads);
  c.points = j.value("points", d.points);
  c.channels = j.value("channels", d.channels);
  c.ffn_hidden = j.value("ffn_hidden", d.ffn_hidden);
  c.n_iter = j.value("n_iter", d.n_iter);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.aux_loss = j.value("aux_loss", d.aux_loss);
  if (j.contains("radar_pyramid")) c.radar_pyramid = j.at("radar_pyramid").get<PyramidConfig>();
  if (j.contains("image_pyramid")) c.image_pyramid = j.at("image_pyramid").get<PyramidConfig>();
  if (j.contains("grid")) c.grid = j.at("grid").get<SphericalGrid>();
  c.center_scale = j.value("center_scale", d.center_scale);
  c.size_anchor = j.value("size_anchor", d.size_anchor);
  c.log_input = j.value("log_input", d.log_input);
  c.doppler_scale = j.value("doppler_scale", d.doppler_scale);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

// ---- queries ---------------------------------------------------------------

std::array<std::size_t, 3> lattice_counts(std::size_t n) {
  if (n == 0) throw ContractError("lattice_counts: n must be >= 1");
  std::array<std::size_t, 3> best{n, 1, 1};
  std::size_t best_spread = n - 1;
  for (std::size_t a = 1; a <= n; ++a) {
    if (n % a) continue;
    for (std::size_t b = 1; b <= a; ++b) {
      if ((n / a) % b) continue;
      const std::size_t c = n / a / b;
      if (c > b) continue;  // a >= b >= c
      if (a - c < best_spread) {
        best_spread = a - c;
        best = {a, c, b};  // range gets the largest count, elevation the smallest
      }
    }
  }
  return best;
}

std::vector<SphericalPoint> query_lattice(const std::array<std::size_t, 3>& counts, const SphericalGrid& grid) {
  auto centers = [](const Span& s, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = s.lo + (static_cast<double>(i) + 0.5) * s.width() / static_cast<double>(n);
    return v;
  };
  const auto rs = centers(grid.range, counts[0]);
  const auto es = centers(grid.elevation, counts[1]);
  const auto as = centers(grid.azimuth, counts[2]);
  std::vector<SphericalPoint> out;
  out.reserve(rs.size() * es.size() * as.size());
  for (double r : rs)
    for (double e : es)
      for (double a : as) out.push_back({r, e, a});
  return out;
}

QuerySet init_queries(std::size_t n, const SphericalGrid& grid, const Tensor& embedding,
                      std::array<std::size_t, 3> counts) {
  if (n < 1) throw ContractError("init_queries: N must be >= 1");
  if (counts[0] == 0 && counts[1] == 0 && counts[2] == 0) counts = lattice_counts(n);
  if (counts[0] * counts[1] * counts[2] != n) throw ContractError("init_queries: lattice does not hold N points");
  if (embedding.rank() != 2 || embedding.dim(0) != n) {
    throw DimensionError("init_queries: embedding " + shape_str(embedding.shape()) + " does not have N rows");
  }
  return {embedding, query_lattice(counts, grid)};
}

// ---- layers ----------------------------------------------------------------

Linear Linear::create(ParamStore& p, const std::string& name, std::size_t in, std::size_t out) {
  return {p.add(name + ".w", {in, out}, in), p.add(name + ".b", {out}, in)};
}

Ffn Ffn::create(ParamStore& p, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out) {
  return {Linear::create(p, name + ".fc1", in, hidden), Linear::create(p, name + ".fc2", hidden, out)};
}

MhsaParams MhsaParams::create(ParamStore& p, const std::string& name, std::size_t channels, std::size_t heads) {
  return {heads, Linear::create(p, name + ".q", channels, channels), Linear::create(p, name + ".k", channels, channels),
          Linear::create(p, name + ".v", channels, channels), Linear::create(p, name + ".o", channels, channels)};
}

QuerySet self_attend(const QuerySet& q, const MhsaParams& p) {
  const Tensor& x = q.features;
  const std::size_t C = x.dim(1), M = p.heads, dh = C / M;
  const Tensor Q = p.q(x), K = p.k(x), V = p.v(x);
  std::vector<Tensor> heads;
  for (std::size_t m = 0; m < M; ++m) {
    const Tensor qm = slice_cols(Q, m * dh, (m + 1) * dh);
    const Tensor km = slice_cols(K, m * dh, (m + 1) * dh);
    const Tensor vm = slice_cols(V, m * dh, (m + 1) * dh);
    const Tensor att = softmax(scale(matmul(qm, transpose(km)), 1.0 / std::sqrt(static_cast<double>(dh))), 1);
    heads.push_back(matmul(att, vm));
  }
  return {add(x, p.o(concat_cols(heads))), q.ref_points};
}

MsdaParams MsdaParams::create(ParamStore& p, const std::string& name, std::size_t channels, std::size_t heads,
                              std::size_t levels, std::size_t points, std::size_t dims) {
  MsdaParams m;
  m.heads = heads;
  m.levels = levels;
  m.points = points;
  m.dims = dims;
  const std::size_t samples = heads * levels * points;
  m.offset = Linear::create(p, name + ".offset", channels, samples * dims);
  m.attention = Linear::create(p, name + ".attention", channels, samples);
  const std::size_t dv = channels / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    m.value.push_back(p.add(name + ".value" + std::to_string(h), {channels, dv}, channels));
  }
  m.out = p.add(name + ".out", {heads * dv, channels}, heads * dv);
  return m;
}

// ---- deformable attention --------------------------------------------------

Tensor deformable_aggregate(const std::vector<Tensor>& levels, const std::vector<std::array<double, 3>>& base,
                            const Tensor& offsets, const Tensor& weights, std::size_t heads, std::size_t points,
                            std::size_t dims, const std::vector<std::uint8_t>& mask) {
  const std::size_t L = levels.size(), N = mask.size(), M = heads, K = points;
  if (L == 0) throw ContractError("deformable_aggregate: no feature levels");
  if (dims < 1 || dims > 3) throw ContractError("deformable_aggregate: dims must be 1..3");
  const std::size_t C = levels[0].dim(0);
  std::vector<std::array<std::size_t, 4>> shapes;
  for (const auto& lv : levels) {
    if (lv.rank() != 4 || lv.dim(0) != C) {
      throw DimensionError("deformable_aggregate: level " + shape_str(lv.shape()) + " is not [C x S0 x S1 x S2]");
    }
    shapes.push_back({lv.dim(0), lv.dim(1), lv.dim(2), lv.dim(3)});
  }
  const std::size_t S = M * L * K;
  if (offsets.rank() != 2 || offsets.dim(0) != N || offsets.dim(1) != S * dims) {
    throw DimensionError("deformable_aggregate: offsets " + shape_str(offsets.shape()) + " expected [" +
                         std::to_string(N) + "x" + std::to_string(S * dims) + "]");
  }
  if (weights.rank() != 2 || weights.dim(0) != N || weights.dim(1) != S) {
    throw DimensionError("deformable_aggregate: weights " + shape_str(weights.shape()) + " expected [" +
                         std::to_string(N) + "x" + std::to_string(S) + "]");
  }
  if (base.size() != N * L) throw DimensionError("deformable_aggregate: need one base point per (query, level)");

  auto position = [base, offsets, L, S, dims](std::size_t q, std::size_t l, std::size_t idx) {
    auto pos = base[q * L + l];
    for (std::size_t d = 0; d < dims; ++d) pos[3 - dims + d] += offsets[(q * S + idx) * dims + d];
    return pos;
  };

  std::vector<double> out(N * M * C, 0.0);
  for (std::size_t q = 0; q < N; ++q) {
    if (!mask[q]) continue;
    for (std::size_t m = 0; m < M; ++m) {
      std::span<double> dst(out.data() + (q * M + m) * C, C);
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t idx = (m * L + l) * K + k;
          sample_accumulate(levels[l].data(), shapes[l], position(q, l, idx), weights[q * S + idx], dst);
        }
    }
  }

  std::vector<Tensor> inputs = levels;
  inputs.push_back(offsets);
  inputs.push_back(weights);
  return make_op({N, M * C}, std::move(out), inputs,
                 [levels, offsets, weights, shapes, mask, position, N, M, L, K, C, S, dims](std::span<const double> g) {
                   std::vector<std::span<double>> glv;
                   for (const auto& lv : levels) glv.push_back(grad_sink(lv));
                   auto goff = grad_sink(offsets);
                   auto gw = grad_sink(weights);
                   for (std::size_t q = 0; q < N; ++q) {
                     if (!mask[q]) continue;
                     for (std::size_t m = 0; m < M; ++m) {
                       std::span<const double> gq(g.data() + (q * M + m) * C, C);
                       for (std::size_t l = 0; l < L; ++l)
                         for (std::size_t k = 0; k < K; ++k) {
                           const std::size_t idx = (m * L + l) * K + k;
                           const auto sg = sample_backward(levels[l].data(), shapes[l], position(q, l, idx),
                                                           weights[q * S + idx], gq, glv[l]);
                           if (!goff.empty()) {
                             for (std::size_t d = 0; d < dims; ++d) goff[(q * S + idx) * dims + d] += sg.pos[3 - dims + d];
                           }
                           if (!gw.empty()) gw[q * S + idx] += sg.weight;
                         }
                     }
                   }
                 });
}

Tensor msda_attention_weights(const Tensor& features, const MsdaParams& p) {
  const std::size_t N = features.dim(0), LK = p.levels * p.points;
  const Tensor logits = reshape(p.attention(features), {N, p.heads, LK});
  return reshape(softmax(logits, 2), {N, p.heads * LK});
}

namespace {

Tensor msda_project(const Tensor& agg, const MsdaParams& p, std::size_t C) {
  std::vector<Tensor> heads;
  for (std::size_t m = 0; m < p.heads; ++m) heads.push_back(matmul(slice_cols(agg, m * C, (m + 1) * C), p.value[m]));
  return matmul(concat_cols(heads), p.out);
}

std::vector<Tensor> as_volumes(const std::vector<Tensor>& pyramid, std::size_t rank) {
  std::vector<Tensor> out;
  for (const auto& t : pyramid) {
    if (t.rank() != rank) throw DimensionError("msda: pyramid level " + shape_str(t.shape()) + " has wrong rank");
    out.push_back(rank == 4 ? t : reshape(t, {t.dim(0), 1, t.dim(1), t.dim(2)}));
  }
  return out;
}

}  // namespace

Tensor msda_3d(const QuerySet& q, const std::vector<Tensor>& pyramid, const MsdaParams& p, const SphericalGrid& grid) {
  if (pyramid.size() != p.levels || p.dims != 3) throw ContractError("msda_3d: parameters do not match the pyramid");
  const std::size_t N = q.ref_points.size(), L = p.levels, C = q.features.dim(1);
  const auto vols = as_volumes(pyramid, 4);
  std::vector<std::array<double, 3>> base(N * L);
  for (std::size_t i = 0; i < N; ++i) {
    const auto u = grid.normalize(q.ref_points[i]);
    for (std::size_t l = 0; l < L; ++l)
      for (int ax = 0; ax < 3; ++ax) base[i * L + l][ax] = u[ax] * (static_cast<double>(vols[l].dim(ax + 1)) - 1.0);
  }
  const Tensor offsets = p.offset(q.features);
  const Tensor weights = msda_attention_weights(q.features, p);
  const Tensor agg = deformable_aggregate(vols, base, offsets, weights, p.heads, p.points, 3,
                                          std::vector<std::uint8_t>(N, 1));
  return msda_project(agg, p, C);
}

Tensor msda_2d(const QuerySet& q, const std::vector<Tensor>& pyramid, const CameraModel& cam, const MsdaParams& p) {
  if (pyramid.size() != p.levels || p.dims != 2) throw ContractError("msda_2d: parameters do not match the pyramid");
  const std::size_t N = q.ref_points.size(), L = p.levels, C = q.features.dim(1);
  const auto vols = as_volumes(pyramid, 3);
  std::vector<std::array<double, 3>> base(N * L);
  std::vector<std::uint8_t> mask(N, 0);
  for (std::size_t i = 0; i < N; ++i) {
    const auto px = project_to_image(spherical_to_cartesian(q.ref_points[i]), cam);
    mask[i] = px.valid ? 1 : 0;
    const auto u = normalize_pixel(px, cam);
    for (std::size_t l = 0; l < L; ++l) {
      base[i * L + l] = {0.0, u[0] * (static_cast<double>(vols[l].dim(2)) - 1.0),
                         u[1] * (static_cast<double>(vols[l].dim(3)) - 1.0)};
    }
  }
  const Tensor offsets = p.offset(q.features);
  const Tensor weights = msda_attention_weights(q.features, p);
  const Tensor agg = deformable_aggregate(vols, base, offsets, weights, p.heads, p.points, 2, mask);
  return msda_project(agg, p, C);
}

// ---- fuser and head --------------------------------------------------------

FuserParams FuserParams::create(ParamStore& p, const std::string& name, std::size_t channels, std::size_t hidden) {
  return {Ffn::create(p, name + ".ffn", 2 * channels, hidden, 2 * channels),
          Linear::create(p, name + ".merge", 2 * channels, channels)};
}

Tensor fuse(const Tensor& f_radar, const Tensor& f_image, const Tensor& query, const FuserParams& p) {
  if (f_radar.shape() != f_image.shape() || f_radar.shape() != query.shape()) {
    throw DimensionError("fuse: feature shapes differ: " + shape_str(f_radar.shape()) + ", " +
                         shape_str(f_image.shape()) + ", " + shape_str(query.shape()));
  }
  const Tensor z = concat_cols({f_radar, f_image});
  return add(query, p.merge(add(z, p.ffn(z))));
}

HeadParams HeadParams::create(ParamStore& p, const std::string& name, std::size_t channels, std::size_t hidden,
                              std::size_t num_classes) {
  HeadParams h;
  h.cls = Ffn::create(p, name + ".cls", channels, hidden, num_classes + 1);
  h.center = Ffn::create(p, name + ".center", channels, hidden, 3);
  h.size = Ffn::create(p, name + ".size", channels, hidden, 3);
  h.angle = Ffn::create(p, name + ".angle", channels, hidden, 2);
  return h;
}

HeadOutput detect_head(const QuerySet& q, const HeadParams& p) {
  const std::size_t N = q.ref_points.size();
  std::vector<double> ref(N * 3), anchor(N * 3);
  for (std::size_t i = 0; i < N; ++i) {
    const auto c = spherical_to_cartesian(q.ref_points[i]);
    for (int k = 0; k < 3; ++k) {
      ref[i * 3 + static_cast<std::size_t>(k)] = c[k];
      anchor[i * 3 + static_cast<std::size_t>(k)] = p.size_anchor[static_cast<std::size_t>(k)];
    }
  }
  HeadOutput out;
  out.logits = p.cls(q.features);
  out.center = add(Tensor({N, 3}, std::move(ref)), scale(p.center(q.features), p.center_scale));
  out.size = mul(exp(p.size(q.features)), Tensor({N, 3}, std::move(anchor)));
  out.angle = row_normalize(p.angle(q.features));
  out.ref_points = q.ref_points;
  return out;
}

double Detection::yaw() const { return std::atan2(sin_yaw, cos_yaw); }

std::vector<double> Detection::probabilities() const {
  std::vector<double> p(class_logits.size());
  const double mx = *std::max_element(class_logits.begin(), class_logits.end());
  double z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(class_logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

Box3D Detection::box() const {
  const auto p = probabilities();
  const auto best = std::max_element(p.begin(), p.end() - 1);
  Box3D b;
  b.center = center;
  b.size = size;
  b.yaw = yaw();
  b.class_id = static_cast<int>(best - p.begin());
  b.score = std::clamp(*best, 0.0, 1.0);
  return b;
}

std::vector<Detection> HeadOutput::detections() const {
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  std::vector<Detection> out(N);
  for (std::size_t i = 0; i < N; ++i) {
    auto& d = out[i];
    d.class_logits.assign(logits.data().begin() + static_cast<long>(i * K),
                          logits.data().begin() + static_cast<long>((i + 1) * K));
    d.center = Eigen::Vector3d(center[i * 3], center[i * 3 + 1], center[i * 3 + 2]);
    d.size = Eigen::Vector3d(size[i * 3], size[i * 3 + 1], size[i * 3 + 2]);
    d.sin_yaw = angle[i * 2];
    d.cos_yaw = angle[i * 2 + 1];
  }
  return out;
}

// ---- model -----------------------------------------------------------------

FusionModel::FusionModel(const ModelConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      params_(cfg.seed),
      radar_enc_(cfg.radar_pyramid, 3, false, false, params_, "radar"),
      image_enc_(cfg.image_pyramid, 3, true, true, params_, "image"),
      embedding_(params_.add("query.embedding", {cfg.num_queries, cfg.channels}, cfg.channels)),
      mhsa_(MhsaParams::create(params_, "fusion.mhsa", cfg.channels, cfg.heads)),
      msda_radar_(MsdaParams::create(params_, "fusion.msda3d", cfg.channels, cfg.heads, cfg.levels(), cfg.points, 3)),
      msda_image_(MsdaParams::create(params_, "fusion.msda2d", cfg.channels, cfg.heads, cfg.levels(), cfg.points, 2)),
      fuser_(FuserParams::create(params_, "fusion.fuser", cfg.channels, cfg.ffn_hidden)),
      head_(HeadParams::create(params_, "head", cfg.channels, cfg.ffn_hidden, cfg.num_classes)) {
  head_.center_scale = cfg.center_scale;
  head_.size_anchor = cfg.size_anchor;
}

Tensor FusionModel::radar_input(const RadarCube3& cube) const {
  Tensor x = cube.channels_first();
  const std::size_t n = x.size() / 3;
  auto d = x.mutable_data();
  if (cfg_.log_input) {
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = std::log1p(std::max(d[i], 0.0));
      d[n + i] = std::log1p(std::sqrt(std::max(d[n + i], 0.0)));
    }
  }
  for (std::size_t i = 0; i < n; ++i) d[2 * n + i] /= cfg_.doppler_scale;
  return x;
}

QuerySet FusionModel::initial_queries() const {
  return init_queries(cfg_.num_queries, cfg_.grid, embedding_, cfg_.query_lattice);
}

ForwardResult FusionModel::forward(const RadarCube3& cube, const Tensor& image, const CameraModel& cam,
                                   std::size_t n_iter) const {
  if (n_iter < 1) throw ContractError("forward: n_iter must be >= 1");
  if (cube.range_bins() != cfg_.grid.range_bins || cube.elevation_bins() != cfg_.grid.elevation_bins ||
      cube.azimuth_bins() != cfg_.grid.azimuth_bins) {
    throw DimensionError("forward: radar cube " + shape_str(cube.channels.shape()) + " does not match the model grid");
  }
  const auto radar_pyr = encode_radar(radar_input(cube), radar_enc_);
  const auto image_pyr = encode_image(image, image_enc_);
  QuerySet q = initial_queries();
  ForwardResult result;
  for (std::size_t it = 0; it < n_iter; ++it) {
    const QuerySet attended = self_attend(q, mhsa_);
    const Tensor f_r = msda_3d(attended, radar_pyr, msda_radar_, cfg_.grid);
    const Tensor f_i = msda_2d(attended, image_pyr, cam, msda_image_);
    const QuerySet fused{fuse(f_r, f_i, attended.features, fuser_), q.ref_points};
    HeadOutput head = detect_head(fused, head_);
    std::vector<SphericalPoint> next(fused.ref_points.size());
    for (std::size_t i = 0; i < next.size(); ++i) {
      const Eigen::Vector3d c(head.center[i * 3], head.center[i * 3 + 1], head.center[i * 3 + 2]);
      next[i] = cfg_.grid.clamp(cartesian_to_spherical(c));
    }
    result.iterations.push_back(std::move(head));
    q = {fused.features, std::move(next)};
  }
  return result;
}

}  // namespace rxf
