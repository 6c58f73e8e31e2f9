#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "topofit/camera.hpp"
#include "topofit/core.hpp"
#include "topofit/eval.hpp"
#include "topofit/losses.hpp"
#include "topofit/octree.hpp"
#include "topofit/params.hpp"
#include "topofit/renderer.hpp"
#include "topofit/scene_io.hpp"
#include "topofit/threads.hpp"

namespace topofit {

// ---------------------------------------------------------------------------
// Configuration. Serialized as flat JSON with strict key checking so typos in
// config files fail loudly.

struct TrainConfig {
  int stage1a_iters = 20;
  int stage1b_iters = 20;
  int stage2_epochs = 300;
  int stage3_epochs = 300;

  LrTable lrs;
  LossWeights weights;

  int stride = 4;
  double jitter_frac = 0.35;  // pixel jitter amplitude as a fraction of stride
  int n_samples = 32;
  double band_scale = 4.0;
  double t_min = 1e-4;
  double color_weight_cutoff = 1e-4;

  int mask_band_radius = 8;
  int mask_band_stride = 1;

  int plane_resolution = 64;
  std::array<int, 3> plane_dims{32, 16, 16};
  double plane_bounds_scale = 2.5;
  double plane_init_amplitude = 1e-2;
  int pe_bands = 4;
  int mlp_hidden = 64;

  double s_init_scale = 30.0;      // initial sharpness = this / template bbox diagonal
  double s_stage1_end_mult = 12.0; // geometric ramp target across the silhouette stage
  double s_stage2_mult = 12.0;     // fixed multiplier during the appearance stage

  int octree_max_depth = 10;
  int octree_max_leaf = 16;

  uint64_t seed = 0;
  int workers = 1;
  int checkpoint_every = 0;  // extra checkpoint cadence in epochs; 0 = stage ends only
  std::string out_dir;       // empty = keep everything in memory
};

inline json train_config_to_json(const TrainConfig& c) {
  return json{{"stage1a_iters", c.stage1a_iters},
              {"stage1b_iters", c.stage1b_iters},
              {"stage2_epochs", c.stage2_epochs},
              {"stage3_epochs", c.stage3_epochs},
              {"lr_vertices", c.lrs.vertices},
              {"lr_planes", c.lrs.planes},
              {"lr_decoder", c.lrs.decoder},
              {"lr_scale", c.lrs.scale},
              {"w_color", c.weights.color},
              {"w_landmark", c.weights.landmark},
              {"w_mask", c.weights.mask},
              {"w_laplacian", c.weights.laplacian},
              {"tv_w_start", c.weights.tv_start},
              {"tv_w_end", c.weights.tv_end},
              {"stride", c.stride},
              {"jitter_frac", c.jitter_frac},
              {"n_samples", c.n_samples},
              {"band_scale", c.band_scale},
              {"t_min", c.t_min},
              {"color_weight_cutoff", c.color_weight_cutoff},
              {"mask_band_radius", c.mask_band_radius},
              {"mask_band_stride", c.mask_band_stride},
              {"plane_resolution", c.plane_resolution},
              {"plane_dims", c.plane_dims},
              {"plane_bounds_scale", c.plane_bounds_scale},
              {"plane_init_amplitude", c.plane_init_amplitude},
              {"pe_bands", c.pe_bands},
              {"mlp_hidden", c.mlp_hidden},
              {"s_init_scale", c.s_init_scale},
              {"s_stage1_end_mult", c.s_stage1_end_mult},
              {"s_stage2_mult", c.s_stage2_mult},
              {"octree_max_depth", c.octree_max_depth},
              {"octree_max_leaf", c.octree_max_leaf},
              {"seed", c.seed},
              {"workers", c.workers},
              {"checkpoint_every", c.checkpoint_every},
              {"out_dir", c.out_dir}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  const json ref = train_config_to_json(c);
  for (const auto& [key, value] : j.items())
    check(ref.contains(key), "unknown config key: ", key);
  auto get = [&j](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("stage1a_iters", c.stage1a_iters);
  get("stage1b_iters", c.stage1b_iters);
  get("stage2_epochs", c.stage2_epochs);
  get("stage3_epochs", c.stage3_epochs);
  get("lr_vertices", c.lrs.vertices);
  get("lr_planes", c.lrs.planes);
  get("lr_decoder", c.lrs.decoder);
  get("lr_scale", c.lrs.scale);
  get("w_color", c.weights.color);
  get("w_landmark", c.weights.landmark);
  get("w_mask", c.weights.mask);
  get("w_laplacian", c.weights.laplacian);
  get("tv_w_start", c.weights.tv_start);
  get("tv_w_end", c.weights.tv_end);
  get("stride", c.stride);
  get("jitter_frac", c.jitter_frac);
  get("n_samples", c.n_samples);
  get("band_scale", c.band_scale);
  get("t_min", c.t_min);
  get("color_weight_cutoff", c.color_weight_cutoff);
  get("mask_band_radius", c.mask_band_radius);
  get("mask_band_stride", c.mask_band_stride);
  get("plane_resolution", c.plane_resolution);
  get("plane_dims", c.plane_dims);
  get("plane_bounds_scale", c.plane_bounds_scale);
  get("plane_init_amplitude", c.plane_init_amplitude);
  get("pe_bands", c.pe_bands);
  get("mlp_hidden", c.mlp_hidden);
  get("s_init_scale", c.s_init_scale);
  get("s_stage1_end_mult", c.s_stage1_end_mult);
  get("s_stage2_mult", c.s_stage2_mult);
  get("octree_max_depth", c.octree_max_depth);
  get("octree_max_leaf", c.octree_max_leaf);
  get("seed", c.seed);
  get("workers", c.workers);
  get("checkpoint_every", c.checkpoint_every);
  get("out_dir", c.out_dir);

  check(c.stage1a_iters >= 0 && c.stage1b_iters >= 0 && c.stage2_epochs >= 0 &&
            c.stage3_epochs >= 0, "stage budgets must be non-negative");
  check(c.stride >= 1, "stride must be >= 1");
  check(c.jitter_frac >= 0 && c.jitter_frac < 0.5, "jitter_frac must lie in [0, 0.5)");
  check(c.n_samples >= 2, "n_samples must be >= 2");
  check(c.band_scale > 0, "band_scale must be positive");
  check(c.mask_band_radius >= 0, "mask_band_radius must be non-negative");
  check(c.mask_band_stride >= 1, "mask_band_stride must be >= 1");
  check(c.plane_resolution >= 2, "plane_resolution must be >= 2");
  check(c.plane_bounds_scale >= 1.1, "plane bounds must leave at least 10% margin");
  check(c.s_init_scale > 0 && c.s_stage1_end_mult >= 1 && c.s_stage2_mult >= 1,
        "sharpness settings must be positive (multipliers >= 1)");
  check(c.workers >= 1, "workers must be >= 1");
  check(c.lrs.vertices > 0 && c.lrs.planes > 0 && c.lrs.decoder > 0 && c.lrs.scale > 0,
        "learning rates must be positive");
  return c;
}

// ---------------------------------------------------------------------------
// Training log: one entry per iteration, exportable as JSONL and CSV.

struct TrainLogEntry {
  int stage = 0;  // 0=landmark, 1=silhouette, 2=appearance, 3=joint
  int iter = 0;
  double total = 0;
  std::map<std::string, double> terms;
  double scale = 0;
  double seconds = 0;
};

inline constexpr const char* kStageNames[4] = {"landmark", "silhouette", "appearance", "joint"};

struct TrainLog {
  std::vector<TrainLogEntry> entries;

  void write_jsonl(const std::string& path) const {
    std::ofstream out(path);
    check(out.good(), "cannot open for writing: ", path);
    for (const auto& e : entries) {
      json j{{"stage", kStageNames[e.stage]}, {"iter", e.iter}, {"total", e.total},
             {"scale", e.scale}, {"seconds", e.seconds}};
      for (const auto& [k, v] : e.terms) j[k] = v;
      out << j.dump() << "\n";
    }
    check(out.good(), "write failed: ", path);
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    check(out.good(), "cannot open for writing: ", path);
    static const char* kTerms[5] = {"color", "tv", "landmark", "mask", "laplacian"};
    out << "stage,iter,total,color,tv,landmark,mask,laplacian,scale,seconds\n";
    char buf[64];
    auto num = [&buf](double v) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      return std::string(buf);
    };
    for (const auto& e : entries) {
      out << kStageNames[e.stage] << "," << e.iter << "," << num(e.total);
      for (const char* t : kTerms) {
        auto it = e.terms.find(t);
        out << ",";
        if (it != e.terms.end()) out << num(it->second);
      }
      out << "," << num(e.scale) << "," << num(e.seconds) << "\n";
    }
    check(out.good(), "write failed: ", path);
  }
};

// ---------------------------------------------------------------------------
// Keeps the first `count` views of a scene (and the landmarks that reference
// them). Used by the view-count ablation and the --views override.

inline SceneBundle with_view_limit(const SceneBundle& scene, int count) {
  check(count >= 1 && count <= static_cast<int>(scene.views.size()),
        "view limit ", count, " out of range");
  SceneBundle out{scene.template_mesh, {}, {}, scene.background};
  out.views.assign(scene.views.begin(), scene.views.begin() + count);
  for (const auto& lm : scene.landmarks)
    if (lm.view < count) out.landmarks.push_back(lm);
  return out;
}

// ---------------------------------------------------------------------------
// Trainer: runs the progressive stages over one scene.
//   stage 0 "landmark":   vertices from landmark + smoothness losses
//   stage 1 "silhouette": vertices from mask + smoothness, sharpness ramped
//   stage 2 "appearance": planes + decoder from color + total variation
//   stage 3 "joint":      everything, including the sharpness, from color +
//                         smoothness

class Trainer {
 public:
  using StageCallback = std::function<void(int stage, const ParamStore&)>;

  Trainer(const SceneBundle& scene, TrainConfig cfg)
      : scene_(&scene), cfg_(std::move(cfg)), params_(make_params(scene, cfg_)) {
    check(scene.views.size() >= 2, "fitting needs at least two views");
    adam_.resize_like(params_);
    worker_grads_.resize(cfg_.workers);
    for (auto& g : worker_grads_) g.resize_like(params_);
    worker_tapes_.resize(cfg_.workers);
    s0_ = params_.scale;
    band_pixels_.resize(scene.views.size());
    for (size_t v = 0; v < scene.views.size(); ++v) {
      const Image& mask = scene.views[v].mask;
      std::vector<uint8_t> bits(mask.data.size());
      for (size_t i = 0; i < bits.size(); ++i) bits[i] = mask.data[i] >= 0.5f ? 1 : 0;
      auto band = mask_contour_band(bits, mask.width, mask.height, cfg_.mask_band_radius);
      for (size_t i = 0; i < band.size(); i += cfg_.mask_band_stride)
        band_pixels_[v].push_back(band[i]);
    }
    if (!cfg_.out_dir.empty()) std::filesystem::create_directories(cfg_.out_dir);
  }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const TrainLog& log() const { return log_; }
  const TrainConfig& config() const { return cfg_; }
  void set_stage_callback(StageCallback cb) { on_stage_end_ = std::move(cb); }

  // Runs every remaining stage up to and including `last_stage` (0..3).
  void fit(int last_stage = 3) {
    check(last_stage >= 0 && last_stage <= 3, "stage index out of range");
    const int budgets[4] = {cfg_.stage1a_iters, cfg_.stage1b_iters, cfg_.stage2_epochs,
                            cfg_.stage3_epochs};
    while (next_stage_ <= last_stage) {
      lr_halvings_ = 0;
      while (next_iter_ < budgets[next_stage_]) {
        run_iteration(next_stage_, next_iter_);
        ++next_iter_;
        if (!cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 &&
            next_iter_ % cfg_.checkpoint_every == 0 && next_iter_ < budgets[next_stage_]) {
          char name[64];
          std::snprintf(name, sizeof(name), "ckpt_s%d_i%06d.tfck", next_stage_, next_iter_);
          save_state(name);
        }
      }
      finish_stage(next_stage_);
      ++next_stage_;
      next_iter_ = 0;
    }
    if (!cfg_.out_dir.empty()) {
      log_.write_jsonl((std::filesystem::path(cfg_.out_dir) / "train_log.jsonl").string());
      log_.write_csv((std::filesystem::path(cfg_.out_dir) / "train_log.csv").string());
      if (last_stage == 3) {
        save_obj((std::filesystem::path(cfg_.out_dir) / "final.obj").string(), params_.mesh);
        save_state("ckpt_final.tfck");
      }
    }
  }

  // Positions the trainer at the state stored in a checkpoint.
  void resume(const std::string& ckpt_path) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    apply_checkpoint_state(ckpt, params_, adam_);
    auto meta = [&ckpt](const char* key) {
      auto it = ckpt.meta.find(key);
      check(it != ckpt.meta.end(), "checkpoint is missing meta: ", key);
      return it->second;
    };
    check(meta("seed") == static_cast<int64_t>(cfg_.seed),
          "checkpoint seed does not match the config");
    next_stage_ = static_cast<int>(meta("stage"));
    next_iter_ = static_cast<int>(meta("iter"));
    check(next_stage_ >= 0 && next_stage_ <= 4, "checkpoint stage out of range");
  }

  void save_state(const std::string& filename) {
    check(!cfg_.out_dir.empty(), "cannot save a checkpoint without out_dir");
    quantize_state_f32(params_, adam_);
    std::map<std::string, int64_t> meta{{"stage", next_stage_},
                                        {"iter", next_iter_},
                                        {"seed", static_cast<int64_t>(cfg_.seed)}};
    save_checkpoint((std::filesystem::path(cfg_.out_dir) / filename).string(),
                    checkpoint_from_state(params_, adam_, std::move(meta)));
  }

 private:
  static ParamStore make_params(const SceneBundle& scene, const TrainConfig& cfg) {
    const Aabb tb = scene.template_mesh.bounds();
    const Vec3 center = tb.center();
    const Vec3 half = tb.extent() * (0.5 * cfg.plane_bounds_scale);
    Aabb plane_bounds{center - half, center + half};
    TriPlanes planes(cfg.plane_resolution, cfg.plane_dims, plane_bounds);
    Rng plane_rng(seed_stream(cfg.seed, 0x70A1ull));
    planes.init_uniform(plane_rng, cfg.plane_init_amplitude);

    PositionalEncoding pe{cfg.pe_bands};
    MlpDecoder decoder(pe.dim() + planes.feature_dim(), cfg.mlp_hidden, 3);
    Rng mlp_rng(seed_stream(cfg.seed, 0xDEC0ull));
    decoder.init(mlp_rng);

    const double diag = tb.diagonal();
    check(diag > 0, "template mesh is degenerate");
    return ParamStore(scene.template_mesh, std::move(planes), std::move(decoder),
                      cfg.s_init_scale / diag);
  }

  void ensure_octree() {
    if (!octree_.built() || octree_.revision() != params_.mesh.revision()) {
      params_.mesh.validate_geometry();
      octree_.build(params_.mesh, {cfg_.octree_max_depth, cfg_.octree_max_leaf});
    }
  }

  RenderOptions render_options(bool appearance) const {
    RenderOptions o;
    o.n_samples = cfg_.n_samples;
    o.band_scale = cfg_.band_scale;
    o.background = scene_->background;
    o.jitter = true;
    o.t_min = cfg_.t_min;
    o.appearance = appearance;
    o.color_weight_cutoff = appearance ? cfg_.color_weight_cutoff : 0.0;
    return o;
  }

  double stage1_mult(int iter) const {
    if (cfg_.stage1b_iters <= 1) return cfg_.s_stage1_end_mult;
    const double f = static_cast<double>(iter) / (cfg_.stage1b_iters - 1);
    return std::pow(cfg_.s_stage1_end_mult, f);
  }

  LrTable effective_lrs() const {
    LrTable lrs = cfg_.lrs;
    const double m = std::pow(0.5, lr_halvings_);
    lrs.vertices *= m;
    lrs.planes *= m;
    lrs.decoder *= m;
    lrs.scale *= m;
    return lrs;
  }

  // ---- snapshot / rollback -------------------------------------------------

  struct Snapshot {
    std::vector<Vec3> vertices;
    std::array<std::vector<double>, 3> planes;
    std::vector<double> w0, b0, w1, b1, w2, b2;
    double scale = 1;
    AdamState adam;
  };

  Snapshot take_snapshot() const {
    Snapshot s;
    s.vertices = params_.mesh.vertices();
    for (int p = 0; p < 3; ++p) s.planes[p] = params_.planes.plane(p);
    s.w0 = params_.decoder.w0();
    s.b0 = params_.decoder.b0();
    s.w1 = params_.decoder.w1();
    s.b1 = params_.decoder.b1();
    s.w2 = params_.decoder.w2();
    s.b2 = params_.decoder.b2();
    s.scale = params_.scale;
    s.adam = adam_;
    return s;
  }

  void restore_snapshot(const Snapshot& s) {
    params_.mesh.set_vertices(s.vertices);
    for (int p = 0; p < 3; ++p) params_.planes.plane(p) = s.planes[p];
    params_.decoder.w0() = s.w0;
    params_.decoder.b0() = s.b0;
    params_.decoder.w1() = s.w1;
    params_.decoder.b1() = s.b1;
    params_.decoder.w2() = s.w2;
    params_.decoder.b2() = s.b2;
    params_.scale = s.scale;
    adam_ = s.adam;
  }

  bool state_healthy(bool check_mesh) const {
    for (const Vec3& v : params_.mesh.vertices())
      if (!is_finite(v)) return false;
    if (!std::isfinite(params_.scale) || params_.scale <= 0) return false;
    for (int p = 0; p < 3; ++p)
      for (double x : params_.planes.plane(p))
        if (!std::isfinite(x)) return false;
    for (const auto* w : {&params_.decoder.w0(), &params_.decoder.b0(), &params_.decoder.w1(),
                          &params_.decoder.b1(), &params_.decoder.w2(), &params_.decoder.b2()})
      for (double x : *w)
        if (!std::isfinite(x)) return false;
    if (check_mesh) {
      try {
        params_.mesh.validate_geometry();
      } catch (const std::exception&) {
        return false;
      }
    }
    return true;
  }

  // ---- iteration dispatch --------------------------------------------------

  void run_iteration(int stage, int iter) {
    const auto t_start = std::chrono::steady_clock::now();
    const Snapshot snap = take_snapshot();
    for (;;) {
      bool ok = false;
      try {
        switch (stage) {
          case 0: iterate_landmark(iter); break;
          case 1: iterate_silhouette(iter); break;
          case 2: iterate_appearance(iter); break;
          case 3: iterate_joint(iter); break;
          default: fail("bad stage index ", stage);
        }
        ok = std::isfinite(log_.entries.back().total) &&
             state_healthy(stage == 1 || stage == 3);
      } catch (const std::runtime_error& e) {
        warn(std::string("iteration failed: ") + e.what());
        ok = false;
      }
      if (ok) break;
      restore_snapshot(snap);
      if (!log_.entries.empty() && log_.entries.back().stage == stage &&
          log_.entries.back().iter == iter)
        log_.entries.pop_back();
      ++lr_halvings_;
      check(lr_halvings_ <= 6, "stage ", kStageNames[stage],
            " diverged repeatedly; giving up after 6 learning-rate halvings");
      warn(std::string("rolling back ") + kStageNames[stage] +
           " iteration and halving learning rates");
    }
    log_.entries.back().seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  }

  void finish_stage(int stage) {
    if (!cfg_.out_dir.empty()) {
      if (stage == 1) save_state("ckpt_stage1.tfck");
      if (stage == 2) save_state("ckpt_stage2.tfck");
    }
    if (on_stage_end_) on_stage_end_(stage, params_);
  }

  void push_log(int stage, int iter, double total, std::map<std::string, double> terms) {
    TrainLogEntry e;
    e.stage = stage;
    e.iter = iter;
    e.total = total;
    e.terms = std::move(terms);
    e.scale = params_.scale;
    log_.entries.push_back(std::move(e));
  }

  GradStore& gather_grads() {
    for (int w = 1; w < cfg_.workers; ++w) worker_grads_[0].add(worker_grads_[w]);
    return worker_grads_[0];
  }

  void clear_grads() {
    for (auto& g : worker_grads_) g.clear();
  }

  // ---- stage bodies ----------------------------------------------------------

  void iterate_landmark(int iter) {
    check(!scene_->landmarks.empty(), "landmark stage requires landmark annotations");
    clear_grads();
    GradStore& grads = worker_grads_[0];
    const std::vector<Camera> cams = scene_->cameras();
    std::vector<Vec3> d_verts(params_.mesh.num_vertices());
    const double l_lm =
        landmark_loss(params_.mesh, cams, scene_->landmarks, &d_verts, cfg_.weights.landmark);
    const double l_lap = laplacian_loss(params_.mesh, &d_verts, cfg_.weights.laplacian);
    for (size_t i = 0; i < d_verts.size(); ++i) grads.vertices[i] += d_verts[i];
    const double total =
        total_loss(Stage::Landmark, {.landmark = l_lm, .laplacian = l_lap}, cfg_.weights);
    LearnableSet learn;
    learn[ParamGroup::Vertices] = true;
    adam_step(params_, grads, learn, effective_lrs(), adam_);
    push_log(0, iter, total, {{"landmark", l_lm}, {"laplacian", l_lap}});
  }

  void iterate_silhouette(int iter) {
    params_.scale = s0_ * stage1_mult(iter);
    ensure_octree();
    clear_grads();
    const RenderContext ctx = RenderContext::from(params_, octree_, render_options(false));

    int64_t n_band = 0;
    for (const auto& pixels : band_pixels_) n_band += static_cast<int64_t>(pixels.size());
    check(n_band > 0, "silhouette stage requires a non-empty contour band");

    LearnableSet learn;
    learn[ParamGroup::Vertices] = true;

    std::vector<MaskLoss> worker_loss(cfg_.workers);
    for (size_t view = 0; view < scene_->views.size(); ++view) {
      const ViewData& vd = scene_->views[view];
      const auto& pixels = band_pixels_[view];
      parallel_chunks(static_cast<int>(pixels.size()), cfg_.workers,
                      [&](int w, int begin, int end) {
        RayTape& tape = worker_tapes_[w];
        for (int i = begin; i < end; ++i) {
          const auto [px, py] = pixels[i];
          const Ray3 ray = generate_ray(vd.camera, {px + 0.5, py + 0.5});
          const uint64_t ray_seed = seed_stream(cfg_.seed, 0x5117ull, 1, iter, view, i);
          const PixelRender r = render_pixel(ctx, ray, ray_seed, &tape);
          const double m = vd.mask.at(px, py) >= 0.5f ? 1.0 : 0.0;
          worker_loss[w].accumulate(m, r.opacity, r.culled);
          const double d_o = cfg_.weights.mask *
                             mask_loss_pixel_grad(m, r.opacity, r.culled, static_cast<int>(n_band));
          backward_ray(ctx, tape, Vec3{}, d_o, learn, worker_grads_[w]);
        }
      });
    }
    MaskLoss ml;
    for (const auto& wl : worker_loss) ml.merge(wl);
    GradStore& grads = gather_grads();
    std::vector<Vec3> d_verts(params_.mesh.num_vertices());
    const double l_lap = laplacian_loss(params_.mesh, &d_verts, cfg_.weights.laplacian);
    for (size_t i = 0; i < d_verts.size(); ++i) grads.vertices[i] += d_verts[i];
    const double total =
        total_loss(Stage::Silhouette, {.mask = ml.value(), .laplacian = l_lap}, cfg_.weights);
    adam_step(params_, grads, learn, effective_lrs(), adam_);
    push_log(1, iter, total, {{"mask", ml.value()}, {"laplacian", l_lap}});
  }

  struct PixelTask {
    RayTape tape;
    Vec3 observed;
  };

  // Renders the jittered in-mask pixel grid for every view, filling tasks and
  // the pooled color loss. Shared by the appearance and joint stages.
  ColorL1 forward_color_epoch(int stage, int iter, const RenderContext& ctx,
                              std::vector<PixelTask>& tasks) {
    tasks.clear();
    std::vector<ColorL1> worker_color(cfg_.workers);
    for (size_t view = 0; view < scene_->views.size(); ++view) {
      const ViewData& vd = scene_->views[view];
      const uint64_t pixel_seed = seed_stream(cfg_.seed, 0x9D1Dull, stage, iter, view);
      const std::vector<Vec2> pixels = sample_grid_pixels(
          vd.camera.width, vd.camera.height, cfg_.stride, cfg_.jitter_frac * cfg_.stride,
          pixel_seed);
      std::vector<std::pair<Vec2, std::pair<int, int>>> in_mask;
      in_mask.reserve(pixels.size());
      for (const Vec2& p : pixels) {
        const int px = std::min(static_cast<int>(p.x), vd.camera.width - 1);
        const int py = std::min(static_cast<int>(p.y), vd.camera.height - 1);
        if (vd.mask.at(px, py) >= 0.5f) in_mask.push_back({p, {px, py}});
      }
      const size_t base = tasks.size();
      tasks.resize(base + in_mask.size());
      parallel_chunks(static_cast<int>(in_mask.size()), cfg_.workers,
                      [&](int w, int begin, int end) {
        for (int i = begin; i < end; ++i) {
          PixelTask& task = tasks[base + i];
          const auto& [pix, xy] = in_mask[i];
          const Ray3 ray = generate_ray(vd.camera, pix);
          const uint64_t ray_seed = seed_stream(cfg_.seed, 0x5117ull, stage, iter, view, i);
          const PixelRender r = render_pixel(ctx, ray, ray_seed, &task.tape);
          task.tape.view = static_cast<int>(view);
          task.tape.px = xy.first;
          task.tape.py = xy.second;
          task.observed = vd.image.rgb(xy.first, xy.second);
          if (!r.culled) worker_color[w].accumulate(r.color, task.observed);
        }
      });
    }
    ColorL1 color;
    for (const auto& wc : worker_color) color.merge(wc);
    return color;
  }

  void backward_color_epoch(const RenderContext& ctx, const std::vector<PixelTask>& tasks,
                            int n_valid, const LearnableSet& learn) {
    parallel_chunks(static_cast<int>(tasks.size()), cfg_.workers, [&](int w, int begin, int end) {
      for (int i = begin; i < end; ++i) {
        const PixelTask& task = tasks[i];
        if (task.tape.culled) continue;
        const Vec3 d_c =
            color_l1_pixel_grad(task.tape.color, task.observed, n_valid) * cfg_.weights.color;
        backward_ray(ctx, task.tape, d_c, 0.0, learn, worker_grads_[w]);
      }
    });
  }

  void iterate_appearance(int iter) {
    params_.scale = s0_ * cfg_.s_stage2_mult;
    ensure_octree();
    clear_grads();
    const RenderContext ctx = RenderContext::from(params_, octree_, render_options(true));
    const ColorL1 color = forward_color_epoch(2, iter, ctx, tasks_);
    check(color.n_valid > 0, "appearance stage found no valid pixels");

    LearnableSet learn;
    learn[ParamGroup::Planes] = true;
    learn[ParamGroup::Decoder] = true;
    backward_color_epoch(ctx, tasks_, color.n_valid, learn);

    GradStore& grads = gather_grads();
    const double l_tv = tv_loss(params_.planes);
    const double tv_w = tv_weight_schedule(iter, cfg_.stage2_epochs, cfg_.weights.tv_start,
                                           cfg_.weights.tv_end);
    tv_loss_backward(params_.planes, tv_w, grads.planes);
    const double total =
        total_loss(Stage::Appearance, {.color = color.value(), .tv = l_tv}, cfg_.weights, tv_w);
    adam_step(params_, grads, learn, effective_lrs(), adam_);
    push_log(2, iter, total, {{"color", color.value()}, {"tv", l_tv}});
  }

  void iterate_joint(int iter) {
    ensure_octree();
    clear_grads();
    const RenderContext ctx = RenderContext::from(params_, octree_, render_options(true));
    const ColorL1 color = forward_color_epoch(3, iter, ctx, tasks_);
    check(color.n_valid > 0, "joint stage found no valid pixels");

    LearnableSet learn;
    learn[ParamGroup::Vertices] = true;
    learn[ParamGroup::Planes] = true;
    learn[ParamGroup::Decoder] = true;
    learn[ParamGroup::Scale] = true;
    backward_color_epoch(ctx, tasks_, color.n_valid, learn);

    GradStore& grads = gather_grads();
    std::vector<Vec3> d_verts(params_.mesh.num_vertices());
    const double l_lap = laplacian_loss(params_.mesh, &d_verts, cfg_.weights.laplacian);
    for (size_t i = 0; i < d_verts.size(); ++i) grads.vertices[i] += d_verts[i];
    const double total =
        total_loss(Stage::Joint, {.color = color.value(), .laplacian = l_lap}, cfg_.weights);
    adam_step(params_, grads, learn, effective_lrs(), adam_);
    push_log(3, iter, total, {{"color", color.value()}, {"laplacian", l_lap}});
  }

  const SceneBundle* scene_;
  TrainConfig cfg_;
  ParamStore params_;
  AdamState adam_;
  Octree octree_;
  TrainLog log_;
  StageCallback on_stage_end_;
  double s0_ = 1;
  int next_stage_ = 0;
  int next_iter_ = 0;
  int lr_halvings_ = 0;
  std::vector<std::vector<std::pair<int, int>>> band_pixels_;
  std::vector<GradStore> worker_grads_;
  std::vector<RayTape> worker_tapes_;
  std::vector<PixelTask> tasks_;
};

}  // namespace topofit
