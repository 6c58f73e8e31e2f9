#include <gtest/gtest.h>

#include <chrono>
#include <map>

#include "topofit/gradcheck.hpp"

using namespace topofit;

TEST(GradCheck, AnalyticGradientsMatchFiniteDifferences) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckSetup setup = make_gradcheck_setup();
  const auto reports = run_gradcheck(setup);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::map<std::string, GradCheckReport> by_group;
  for (const auto& r : reports) {
    std::printf("%-9s max rel err %.3e  checked %4d  skipped %3d  worst %s (%.3e vs %.3e)\n",
                r.group.c_str(), r.max_rel_err, r.n_checked, r.n_skipped,
                r.worst_entry.c_str(), r.worst_analytic, r.worst_fd);
    by_group[r.group] = r;
  }
  ASSERT_EQ(by_group.size(), 4u);

  EXPECT_LT(by_group["vertices"].max_rel_err, 5e-3);
  EXPECT_LT(by_group["scale"].max_rel_err, 1e-3);
  EXPECT_LT(by_group["planes"].max_rel_err, 1e-3);
  EXPECT_LT(by_group["decoder"].max_rel_err, 1e-3);

  for (const auto& [name, r] : by_group) {
    EXPECT_GT(r.n_checked, 0) << name;
    EXPECT_LT(r.n_skipped, std::max(1, (r.n_checked + r.n_skipped) * 3 / 10))
        << name << ": too many inconsistent probes";
  }

  EXPECT_LT(secs, 60.0);
}

TEST(GradCheck, HoldsUpAtSharperDensity) {
  GradCheckOptions opts;
  opts.sharpness = 90.0;
  opts.n_rays = 4;
  opts.max_plane_entries = 24;
  opts.max_decoder_entries = 30;
  GradCheckSetup setup = make_gradcheck_setup(opts);
  const auto reports = run_gradcheck(setup);
  for (const auto& r : reports) {
    const double tol = r.group == "vertices" ? 5e-3 : 1e-3;
    EXPECT_LT(r.max_rel_err, tol) << r.group << " worst: " << r.worst_entry;
    EXPECT_GT(r.n_checked, 0) << r.group;
  }
}
