#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

#include "topofit/topofit.hpp"

namespace fs = std::filesystem;
using namespace topofit;

namespace {

RadialSurface::Shape parse_shape(const std::string& name) {
  if (name == "sphere") return RadialSurface::Shape::Sphere;
  if (name == "ellipsoid") return RadialSurface::Shape::Ellipsoid;
  if (name == "blob") return RadialSurface::Shape::Blob;
  fail("unknown shape: ", name, " (expected sphere, ellipsoid, or blob)");
}

int parse_stage(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == kStageNames[i]) return i;
  if (name.size() == 1 && name[0] >= '0' && name[0] <= '3') return name[0] - '0';
  fail("unknown stage: ", name, " (expected landmark, silhouette, appearance, joint, or 0-3)");
}

struct FitArgs {
  std::string scene, config, out, resume;
  std::string last_stage = "joint";
  uint64_t seed = 0;
  bool seed_set = false;
  int views = 0;
  int workers = 0;
};

int cmd_fit(const FitArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = train_config_from_json(load_json_file(a.config));
  if (a.seed_set) cfg.seed = a.seed;
  if (a.workers > 0) cfg.workers = a.workers;
  if (!a.out.empty()) cfg.out_dir = a.out;

  SceneBundle scene = load_scene(a.scene);
  if (a.views > 0) scene = with_view_limit(scene, a.views);
  std::printf("scene: %zu views, %zu landmarks, template %d vertices / %d faces\n",
              scene.views.size(), scene.landmarks.size(), scene.template_mesh.num_vertices(),
              scene.template_mesh.num_faces());

  Trainer trainer(scene, cfg);
  if (!cfg.out_dir.empty())
    save_json_file((fs::path(cfg.out_dir) / "config.json").string(), train_config_to_json(cfg));
  if (!a.resume.empty()) trainer.resume(a.resume);
  trainer.set_stage_callback([](int stage, const ParamStore& params) {
    std::printf("stage %s done, sharpness %.3f\n", kStageNames[stage], params.scale);
    std::fflush(stdout);
  });
  trainer.fit(parse_stage(a.last_stage));

  const auto& entries = trainer.log().entries;
  if (!entries.empty()) {
    double seconds = 0;
    for (const auto& e : entries) seconds += e.seconds;
    std::printf("done: %zu iterations, %.1f s, final loss %.6g\n", entries.size(), seconds,
                entries.back().total);
  }
  return 0;
}

struct RenderArgs {
  std::string scene, checkpoint, out;
  int view = -1;
  int n_samples = 32;
  int workers = 1;
};

int cmd_render(const RenderArgs& a) {
  const SceneBundle scene = load_scene(a.scene);
  auto [params, adam] =
      param_store_from_checkpoint(load_checkpoint(a.checkpoint), scene.template_mesh);
  Octree octree;
  octree.build(params.mesh, {});
  RenderOptions opts;
  opts.n_samples = a.n_samples;
  opts.background = scene.background;
  opts.jitter = false;
  const RenderContext ctx = RenderContext::from(params, octree, opts);

  std::vector<int> views;
  if (a.view >= 0) {
    check(a.view < static_cast<int>(scene.views.size()), "view index out of range");
    views.push_back(a.view);
  } else {
    for (size_t i = 0; i < scene.views.size(); ++i) views.push_back(static_cast<int>(i));
  }

  const bool to_dir = views.size() > 1 || fs::is_directory(a.out) ||
                      (!a.out.empty() && a.out.back() == '/');
  if (to_dir) fs::create_directories(a.out);
  for (int v : views) {
    const Image img = render_view(ctx, scene.views[v].camera, 0, a.workers);
    std::string path = a.out;
    if (to_dir) {
      char name[32];
      std::snprintf(name, sizeof(name), "render_%03d.png", v);
      path = (fs::path(a.out) / name).string();
    }
    write_png(path, img);
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

struct EvalArgs {
  std::string scene, checkpoint, fixture, out;
  int n_samples = 32;
  int workers = 1;
};

int cmd_eval(const EvalArgs& a) {
  const SceneBundle scene = load_scene(a.scene);
  auto [params, adam] =
      param_store_from_checkpoint(load_checkpoint(a.checkpoint), scene.template_mesh);
  Octree octree;
  octree.build(params.mesh, {});
  RenderOptions opts;
  opts.n_samples = a.n_samples;
  opts.background = scene.background;
  opts.jitter = false;
  const RenderContext ctx = RenderContext::from(params, octree, opts);

  json report;
  report["views"] = json::array();
  double psnr_sum = 0, ssim_sum = 0;
  for (size_t v = 0; v < scene.views.size(); ++v) {
    const ViewData& vd = scene.views[v];
    const Image img = render_view(ctx, vd.camera, 0, a.workers);
    const RenderMetrics m = eval_render(img, vd.image, vd.mask);
    psnr_sum += m.psnr;
    ssim_sum += m.ssim;
    report["views"].push_back(
        {{"view", v}, {"psnr", m.psnr}, {"ssim", m.ssim}, {"mask_pixels", m.n_pixels}});
    std::printf("view %zu: psnr %.2f dB, ssim %.4f over %d pixels\n", v, m.psnr, m.ssim,
                m.n_pixels);
  }
  report["mean_psnr"] = psnr_sum / scene.views.size();
  report["mean_ssim"] = ssim_sum / scene.views.size();
  std::printf("mean: psnr %.2f dB, ssim %.4f\n", psnr_sum / scene.views.size(),
              ssim_sum / scene.views.size());

  if (!a.fixture.empty()) {
    const json fx = load_json_file(a.fixture);
    check(fx.contains("surface"), a.fixture, " has no surface description");
    const RadialSurface surface = radial_surface_from_json(fx.at("surface"));
    const double err = eval_geometry(params.mesh, surface);
    report["geometry_error"] = err;
    std::printf("geometry error: %.6f (mean vertex distance to surface)\n", err);
  }
  if (!a.out.empty()) save_json_file(a.out, report);
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  GradCheckOptions opts;
  opts.seed = seed;
  GradCheckSetup setup = make_gradcheck_setup(opts);
  const auto reports = run_gradcheck(setup);
  bool ok = true;
  for (const auto& r : reports) {
    const double tol = r.group == "vertices" ? 5e-3 : 1e-3;
    const bool pass = r.max_rel_err < tol;
    ok = ok && pass;
    std::printf("%-8s max rel err %.3e over %d entries (%d skipped)  [%s]\n", r.group.c_str(),
                r.max_rel_err, r.n_checked, r.n_skipped, pass ? "ok" : "FAIL");
    if (!pass)
      std::printf("  worst: %s analytic %.6e fd %.6e\n", r.worst_entry.c_str(), r.worst_analytic,
                  r.worst_fd);
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fixed-topology mesh reconstruction from calibrated views"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-view fixture");
  std::string synth_out, synth_shape = "ellipsoid";
  SynthParams sp;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--shape", synth_shape, "sphere, ellipsoid, or blob");
  synth->add_option("--views", sp.views, "training view count");
  synth->add_option("--heldout", sp.heldout_views, "held-out view count");
  synth->add_option("--size", sp.width, "image width and height");
  synth->add_option("--distance", sp.cam_distance, "camera ring distance");
  synth->add_option("--fov", sp.fov_x_deg, "horizontal field of view, degrees");
  synth->add_option("--subdiv", sp.template_subdivisions, "icosphere template subdivisions");
  synth->add_option("--radius", sp.template_radius, "template sphere radius");
  synth->add_option("--landmarks", sp.landmarks, "landmark count");
  synth->add_option("--seed", sp.seed, "fixture seed");

  // fit
  auto* fit = app.add_subcommand("fit", "fit a template mesh to a scene");
  FitArgs fa;
  fit->add_option("--scene", fa.scene, "scene manifest json")->required();
  fit->add_option("--config", fa.config, "training config json");
  fit->add_option("--out", fa.out, "output directory (checkpoints, logs, final mesh)");
  fit->add_option("--seed", fa.seed, "seed override")->each([&fa](const std::string&) {
    fa.seed_set = true;
  });
  fit->add_option("--views", fa.views, "use only the first N views");
  fit->add_option("--workers", fa.workers, "worker thread count");
  fit->add_option("--last-stage", fa.last_stage, "stop after this stage (name or 0-3)");
  fit->add_option("--resume", fa.resume, "resume from a checkpoint file");

  // render
  auto* render = app.add_subcommand("render", "render views from a checkpoint");
  RenderArgs ra;
  render->add_option("--scene", ra.scene, "scene manifest json")->required();
  render->add_option("--checkpoint", ra.checkpoint, "checkpoint file")->required();
  render->add_option("--out", ra.out, "output png file or directory")->required();
  render->add_option("--view", ra.view, "view index (default: all views)");
  render->add_option("--samples", ra.n_samples, "samples per ray");
  render->add_option("--workers", ra.workers, "worker thread count");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against a scene");
  EvalArgs ea;
  eval->add_option("--scene", ea.scene, "scene manifest json (typically held-out views)")
      ->required();
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
  eval->add_option("--fixture", ea.fixture, "fixture json with the analytic surface");
  eval->add_option("--out", ea.out, "write metrics json here");
  eval->add_option("--samples", ea.n_samples, "samples per ray");
  eval->add_option("--workers", ea.workers, "worker thread count");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient validation");
  uint64_t gc_seed = 7;
  gradcheck->add_option("--seed", gc_seed, "probe seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      sp.height = sp.width;
      sp.surface.shape = parse_shape(synth_shape);
      const Fixture fx = build_fixture(sp);
      write_fixture(fx, synth_out);
      std::printf("wrote fixture with %zu train views, %zu held-out views to %s\n",
                  fx.train_views.size(), fx.heldout_views.size(), synth_out.c_str());
      return 0;
    }
    if (fit->parsed()) return cmd_fit(fa);
    if (render->parsed()) return cmd_render(ra);
    if (eval->parsed()) return cmd_eval(ea);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
