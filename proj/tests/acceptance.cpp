// Acceptance suite. Each criterion prints one PASS/FAIL line; the exit code
// is non-zero when any selected criterion fails.
//
//   acceptance [--criterion N] [--work DIR] [--cli PATH]

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fdepth/checkpoint.hpp"
#include "fdepth/config.hpp"
#include "fdepth/image_io.hpp"
#include "fdepth/metrics.hpp"
#include "fdepth/network.hpp"
#include "fdepth/ops.hpp"
#include "fdepth/photometric.hpp"
#include "fdepth/synth.hpp"
#include "fdepth/trainer.hpp"
#include "gradcheck.hpp"

using namespace fdepth;
using fdepth::testing::check_directional;
using fdepth::testing::check_gradients;
using fdepth::testing::random_projection;
using fdepth::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Context {
  fs::path work;
  fs::path cli;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Values with magnitude in [lo, hi] and random sign, keeping clear of kinks at 0.
Tensor away_from_zero(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution neg(0.5);
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (double& x : v) x = neg(rng) ? -mag(rng) : mag(rng);
  return Tensor::from_values(s, std::move(v), true);
}

// ------------------------------------------------------------ criterion 1

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> leaves;
  std::function<Tensor(const std::vector<Tensor>&)> body;
};

std::vector<OpCase> op_cases() {
  const Shape s{2, 3, 4, 6};
  const auto one = [s](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(s, r)}; };
  std::vector<OpCase> c;
  c.push_back({"conv2d s1 p1 bias",
               [](std::mt19937_64& r) {
                 return std::vector<Tensor>{random_tensor({2, 3, 5, 6}, r), random_tensor({4, 3, 3, 3}, r),
                                            random_tensor({1, 4, 1, 1}, r)};
               },
               [](const std::vector<Tensor>& x) { return conv2d(x[0], x[1], x[2], 1, 1); }});
  c.push_back({"conv2d s2 p1",
               [](std::mt19937_64& r) {
                 return std::vector<Tensor>{random_tensor({1, 2, 7, 6}, r), random_tensor({3, 2, 3, 3}, r)};
               },
               [](const std::vector<Tensor>& x) { return conv2d(x[0], x[1], std::nullopt, 2, 1); }});
  c.push_back({"conv2d 1x1",
               [](std::mt19937_64& r) {
                 return std::vector<Tensor>{random_tensor({2, 3, 4, 4}, r), random_tensor({2, 3, 1, 1}, r),
                                            random_tensor({1, 2, 1, 1}, r)};
               },
               [](const std::vector<Tensor>& x) { return conv2d(x[0], x[1], x[2], 1, 0); }});
  c.push_back({"elu", [s](std::mt19937_64& r) { return std::vector<Tensor>{away_from_zero(s, r, 0.05, 1.0)}; },
               [](const std::vector<Tensor>& x) { return elu(x[0]); }});
  c.push_back({"sigmoid", one, [](const std::vector<Tensor>& x) { return sigmoid(x[0]); }});
  c.push_back({"abs", [s](std::mt19937_64& r) { return std::vector<Tensor>{away_from_zero(s, r, 0.05, 1.0)}; },
               [](const std::vector<Tensor>& x) { return abs(x[0]); }});
  c.push_back({"exp", one, [](const std::vector<Tensor>& x) { return exp(x[0]); }});
  c.push_back({"square", one, [](const std::vector<Tensor>& x) { return square(x[0]); }});
  c.push_back({"scale", one, [](const std::vector<Tensor>& x) { return scale(x[0], -1.7); }});
  c.push_back({"add_scalar", one, [](const std::vector<Tensor>& x) { return add_scalar(x[0], 0.3); }});
  c.push_back({"clamp",
               [s](std::mt19937_64& r) {
                 // Keep every value at least 0.05 from the bounds +-0.5.
                 std::uniform_real_distribution<double> u(-1.0, 1.0);
                 std::vector<double> v(static_cast<std::size_t>(s.numel()));
                 for (double& x : v) {
                   do x = u(r);
                   while (std::abs(std::abs(x) - 0.5) < 0.05);
                 }
                 return std::vector<Tensor>{Tensor::from_values(s, std::move(v), true)};
               },
               [](const std::vector<Tensor>& x) { return clamp(x[0], -0.5, 0.5); }});
  const auto pair = [s](std::mt19937_64& r) {
    return std::vector<Tensor>{random_tensor(s, r), random_tensor({1, 3, 1, 6}, r)};
  };
  c.push_back({"add broadcast", pair, [](const std::vector<Tensor>& x) { return add(x[0], x[1]); }});
  c.push_back({"sub broadcast", pair, [](const std::vector<Tensor>& x) { return sub(x[1], x[0]); }});
  c.push_back({"mul broadcast", pair, [](const std::vector<Tensor>& x) { return mul(x[0], x[1]); }});
  c.push_back({"div broadcast",
               [s](std::mt19937_64& r) {
                 return std::vector<Tensor>{random_tensor(s, r), away_from_zero({2, 1, 4, 1}, r, 0.5, 1.0)};
               },
               [](const std::vector<Tensor>& x) { return div(x[0], x[1]); }});
  c.push_back({"upsample_nearest", one, [](const std::vector<Tensor>& x) { return upsample_nearest(x[0], 2); }});
  c.push_back({"pixel_shuffle",
               [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor({2, 8, 3, 4}, r)}; },
               [](const std::vector<Tensor>& x) { return pixel_shuffle(x[0], 2); }});
  c.push_back({"pixel_unshuffle", one, [](const std::vector<Tensor>& x) { return pixel_unshuffle(x[0], 2); }});
  c.push_back({"grid_sample_bilinear",
               [](std::mt19937_64& r) {
                 // Sample positions stay inside the image and 0.1 px away from lattice points.
                 const Shape src{2, 3, 4, 10};
                 std::uniform_real_distribution<double> frac(0.1, 0.9);
                 std::uniform_int_distribution<int> whole(0, 8);
                 std::vector<double> off(2 * 4 * 10);
                 for (std::size_t k = 0; k < off.size(); ++k) {
                   const double j = static_cast<double>(k % 10);
                   off[k] = (whole(r) + frac(r) - j) / 10.0;
                 }
                 return std::vector<Tensor>{random_tensor(src, r),
                                            Tensor::from_values({2, 1, 4, 10}, std::move(off), true)};
               },
               [](const std::vector<Tensor>& x) { return grid_sample_bilinear(x[0], x[1]); }});
  c.push_back({"sum all", one, [](const std::vector<Tensor>& x) { return sum(x[0]); }});
  c.push_back({"mean hw", one,
               [](const std::vector<Tensor>& x) { return mean(x[0], AxisSet{false, false, true, true}); }});
  c.push_back({"sum c", one, [](const std::vector<Tensor>& x) { return sum(x[0], AxisSet{false, true, false, false}); }});
  c.push_back({"concat_channels",
               [](std::mt19937_64& r) {
                 return std::vector<Tensor>{random_tensor({2, 1, 3, 3}, r), random_tensor({2, 2, 3, 3}, r)};
               },
               [](const std::vector<Tensor>& x) { return concat_channels({x[0], x[1], x[0]}); }});
  c.push_back({"slice_channels", one, [](const std::vector<Tensor>& x) { return slice_channels(x[0], 1, 2); }});
  c.push_back({"avg_pool2d 3/1", one, [](const std::vector<Tensor>& x) { return avg_pool2d(x[0], 3, 1); }});
  c.push_back({"avg_pool2d 2/2", one, [](const std::vector<Tensor>& x) { return avg_pool2d(x[0], 2, 2); }});
  c.push_back({"gradient_x", one, [](const std::vector<Tensor>& x) { return gradient_x(x[0]); }});
  c.push_back({"gradient_y", one, [](const std::vector<Tensor>& x) { return gradient_y(x[0]); }});
  c.push_back({"flip_horizontal", one, [](const std::vector<Tensor>& x) { return flip_horizontal(x[0]); }});
  return c;
}

Outcome criterion_gradients(const Context&) {
  const auto t0 = Clock::now();
  constexpr int kSeeds = 20;
  double worst_op = 0.0, worst_e2e = 0.0;
  std::string worst_name;
  int failures = 0;
  const auto cases = op_cases();
  for (int seed = 0; seed < kSeeds; ++seed) {
    for (std::size_t k = 0; k < cases.size(); ++k) {
      std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 1000 + k);
      const auto leaves = cases[k].leaves(rng);
      const auto proj_seed = static_cast<std::uint64_t>(seed * 77 + 5);
      const auto body = cases[k].body;
      const auto f = [&](const std::vector<Tensor>& x) { return random_projection(body(x), proj_seed); };
      const double err = check_gradients(f, leaves).rel_error;
      if (err > worst_op) {
        worst_op = err;
        worst_name = cases[k].name;
      }
      if (!(err < 1e-4)) {
        ++failures;
        std::printf("  op %s seed %d rel error %.3e\n", cases[k].name.c_str(), seed, err);
      }
    }

    // End to end: the training objective through a small network, checked
    // along one random direction in parameter space, and fully w.r.t. the
    // disparity maps fed to the loss.
    ArchConfig arch;
    arch.num_levels = 3;
    arch.widths = {4, 5, 6};
    DepthNet net(arch, static_cast<std::uint64_t>(seed) + 100);
    const StereoSample sample = render_stereo(random_scene(static_cast<std::uint64_t>(seed) + 500, 24, 24, seed % 2 == 1));
    std::vector<Tensor> params;
    for (const auto& p : net.parameters().entries()) params.push_back(p.value);
    const LossWeights w;
    const auto loss = [&](const std::vector<Tensor>&) {
      return training_loss(net, sample, w, stage_plan(1));
    };
    // The objective is full of |.| terms (L1, smoothness, left-right) whose
    // kinks a 1e-5 probe straddles every few seeds; 1e-7 keeps the probe on
    // one side while double precision still resolves the difference.
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 900);
    const double e2e = check_directional(loss, params, rng, 1e-7).rel_error;

    const auto disp_loss = [&](const std::vector<Tensor>& d) {
      DisparitySet l, r;
      for (std::size_t s = 0; s < kNumScales; ++s) {
        l.scales[s] = d[s];
        r.scales[s] = d[kNumScales + s];
      }
      return total_loss(l, r, sample, w);
    };
    // Disparities of whole pixels plus a fraction in [0.1, 0.9], so every
    // sample position sits at least 0.1 px from a lattice point.
    std::vector<Tensor> disp;
    std::uniform_int_distribution<int> whole(0, 2);
    std::uniform_real_distribution<double> frac(0.1, 0.9);
    for (int eye = 0; eye < 2; ++eye) {
      for (std::int64_t s = 0; s < kNumScales; ++s) {
        const std::int64_t side = 24 >> s;
        std::vector<double> v(static_cast<std::size_t>(side * side));
        for (double& x : v) x = (whole(rng) + frac(rng)) / static_cast<double>(side);
        disp.push_back(Tensor::from_values({1, 1, side, side}, std::move(v), true));
      }
    }
    const double e2e_disp = check_gradients(disp_loss, disp, 1e-7).rel_error;
    worst_e2e = std::max({worst_e2e, e2e, e2e_disp});
    if (!(e2e < 1e-3) || !(e2e_disp < 1e-3)) {
      ++failures;
      std::printf("  end-to-end seed %d rel error %.3e / %.3e\n", seed, e2e, e2e_disp);
    }
  }
  const double elapsed = seconds_since(t0);
  Outcome o;
  o.pass = failures == 0 && elapsed < 120.0;
  o.detail = std::to_string(cases.size()) + " ops x " + std::to_string(kSeeds) + " seeds, worst op rel err " +
             fmt("%.2e", worst_op) + " (" + worst_name + "), worst end-to-end " + fmt("%.2e", worst_e2e) + ", " +
             fmt("%.1f s", elapsed);
  return o;
}

// ------------------------------------------------------------ criterion 2

Outcome criterion_structure(const Context&) {
  std::vector<std::string> problems;
  const auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };
  for (int L : {3, 4, 5}) {
    const std::string tag = "L=" + std::to_string(L) + ": ";
    ArchConfig arch;
    arch.num_levels = L;
    arch.widths.clear();
    for (int p = 1; p <= L; ++p) arch.widths.push_back(4 * p);
    const DepthNet net(arch, 3);
    const auto& ps = net.parameters();

    // Boundary law: members are exactly {p-1, p, p+1} clipped to [1, L],
    // and the fusion convolutions exist only for members.
    for (int p = 1; p <= L; ++p) {
      std::vector<int> want;
      for (int q = std::max(1, p - 1); q <= std::min(L, p + 1); ++q) want.push_back(q);
      expect(fusion_members(p, L) == want, tag + "members of level " + std::to_string(p));
      const std::string base = "fuse." + std::to_string(p);
      expect((ps.find(base + ".down.weight") != nullptr) == (p > 1), tag + base + ".down presence");
      expect((ps.find(base + ".up.weight") != nullptr) == (p < L), tag + base + ".up presence");
      expect(ps.find(base + ".same.weight") != nullptr, tag + base + ".same presence");
    }

    // CoordConv: radius 0 at the center, raw corner radius sqrt(h^2/4 + w^2/4)
    // before normalization, checked on every level's extents.
    const std::int64_t side = std::int64_t{8} << L;
    for (int p = 1; p <= L; ++p) {
      const std::int64_t h = side >> p, w = 2 * h;
      const Tensor cc = coordinate_channels(h, w);
      const double norm = std::sqrt(static_cast<double>(h * h) / 4.0 + static_cast<double>(w * w) / 4.0);
      expect(cc.at(0, 2, h / 2, w / 2) == 0.0, tag + "center radius");
      expect(std::abs(cc.at(0, 2, 0, 0) * norm - norm) < 1e-12, tag + "corner radius");
      const double raw = std::hypot(static_cast<double>(h) / 2.0, static_cast<double>(w - 1) - static_cast<double>(w) / 2.0);
      expect(std::abs(cc.at(0, 2, 0, w - 1) - raw / norm) < 1e-12, tag + "normalizer");
    }

    // Refinement channel trace 32/32/16/4, then shuffle x2 to one channel.
    for (int s = 0; s <= 2; ++s) {
      const std::string base = "refine." + std::to_string(s);
      const std::array<std::int64_t, 4> trace{32, 32, 16, 4};
      std::int64_t in = arch.width(s + 1);
      for (std::size_t i = 0; i < trace.size(); ++i) {
        const Tensor* wt = ps.find(base + ".res" + std::to_string(i) + ".weight");
        expect(wt != nullptr && wt->shape().c == in && wt->shape().n == trace[i],
               tag + base + ".res" + std::to_string(i));
        in = trace[i];
      }
      const std::int64_t hs = side >> (s + 1);
      const Tensor shuffled = pixel_shuffle(Tensor::zeros({1, in, hs, hs}), 2);
      expect(shuffled.shape() == Shape{1, 1, 2 * hs, 2 * hs}, tag + "shuffle output");
    }

    // Four output scales.
    const auto out = net.forward(Tensor::full({1, 3, side, side}, 0.5));
    for (int s = 0; s < kNumScales; ++s) {
      expect(out.scales[static_cast<std::size_t>(s)].shape() == Shape{1, 1, side >> s, side >> s},
             tag + "scale " + std::to_string(s) + " shape");
    }
  }
  Outcome o;
  o.pass = problems.empty();
  o.detail = problems.empty() ? "boundary law, CoordConv radii, 32/32/16/4 trace and 4 scales hold for L=3,4,5"
                              : std::to_string(problems.size()) + " mismatches, first: " + problems.front();
  return o;
}

// ------------------------------------------------------------ criterion 3

fs::path source_path(const std::string& rel) { return fs::path(FDEPTH_SOURCE_DIR) / rel; }

TrainConfig desk_config(const fs::path& data, const fs::path& ckpt) {
  TrainConfig cfg = load_train_config(source_path("configs/desk.cfg"));
  cfg.dataset_dir = data;
  cfg.checkpoint_dir = ckpt;
  return cfg;
}

fs::path desk_dataset(const Context& ctx) {
  const fs::path data = ctx.work / "desk_data";
  if (!fs::exists(data / "manifest.txt")) generate_dataset(data, 40, 1, 64, 64);
  return data;
}

Outcome criterion_recovery(const Context& ctx) {
  const auto t0 = Clock::now();
  const fs::path data = desk_dataset(ctx);
  const TrainConfig cfg = desk_config(data, ctx.work / "desk_run");
  const TrainResult result = run_schedule(cfg, [](const EpochRecord& r) {
    std::printf("  epoch %d stage %d mean_loss %.5f\n", r.epoch, r.stage, r.mean_loss);
    std::fflush(stdout);
  });
  const EvalReport report = evaluate(result.net, load_dataset(data), false);
  const double elapsed = seconds_since(t0);
  const double first = result.log.front().mean_loss;
  const double last = result.log.back().mean_loss;
  Outcome o;
  o.pass = report.mean_abs_disparity_error < 0.5 && last < 0.5 * first && elapsed < 1800.0;
  o.detail = "mean abs disparity error " + fmt("%.3f px", report.mean_abs_disparity_error) + " (< 0.5), loss " +
             fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (ratio " + fmt("%.3f", last / first) +
             ", < 0.5), " + fmt("%.0f s", elapsed) + " (< 1800)";
  return o;
}

// ------------------------------------------------------------ criterion 4

Outcome criterion_metrics(const Context&) {
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> depth(0.5, 100.0);
  std::uniform_real_distribution<double> factor(0.5, 1.8);
  std::uniform_real_distribution<double> disp(0.5, 90.0);
  std::uniform_real_distribution<double> err(-9.0, 9.0);
  std::bernoulli_distribution keep(0.75);
  double worst = 0.0;
  const double cap = 80.0, floor = 1e-3;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> g(100), p(100), m(100), gd(100), pd(100);
    for (std::size_t i = 0; i < 100; ++i) {
      g[i] = depth(rng);
      p[i] = g[i] * factor(rng);
      m[i] = keep(rng) ? 1.0 : 0.0;
      gd[i] = disp(rng);
      pd[i] = gd[i] + err(rng);
    }
    m[0] = 1.0;
    g[0] = 20.0;
    const auto t = [](std::vector<double> v) { return Tensor::from_values({1, 1, 10, 10}, std::move(v)); };
    const DepthMetrics got = compute_metrics(t(p), t(g), t(m), cap, floor);

    // Reference: direct per-pixel transcription of the definitions.
    double n = 0, ar = 0, sr = 0, se = 0, sl = 0, d1 = 0, d2 = 0, d3 = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      if (m[i] != 1.0 || !(g[i] > floor) || g[i] > cap) continue;
      const double pi = std::min(std::max(p[i], floor), cap);
      n += 1;
      ar += std::fabs(pi - g[i]) / g[i];
      sr += (pi - g[i]) * (pi - g[i]) / g[i];
      se += (pi - g[i]) * (pi - g[i]);
      sl += (std::log(pi) - std::log(g[i])) * (std::log(pi) - std::log(g[i]));
      const double ratio = std::max(pi / g[i], g[i] / pi);
      d1 += ratio < 1.25;
      d2 += ratio < 1.5625;
      d3 += ratio < 1.953125;
    }
    const std::array<double, 7> want{ar / n, sr / n, std::sqrt(se / n), std::sqrt(sl / n), d1 / n, d2 / n, d3 / n};
    const std::array<double, 7> have{got.abs_rel, got.sq_rel, got.rmse, got.rmse_log,
                                     got.delta1, got.delta2, got.delta3};
    for (std::size_t k = 0; k < want.size(); ++k) worst = std::max(worst, std::abs(want[k] - have[k]));

    double bad = 0, total = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      if (m[i] != 1.0 || !(gd[i] > 0.0)) continue;
      total += 1;
      const double e = std::fabs(pd[i] - gd[i]);
      if (e > 3.0 && e > 0.05 * gd[i]) bad += 1;
    }
    worst = std::max(worst, std::abs(compute_d1(t(pd), t(gd), t(m)) - 100.0 * bad / total));
  }

  std::vector<double> g(64);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 1.0 + 0.9 * static_cast<double>(i);  // 1.3 * g stays under the cap
  const Tensor gt = Tensor::from_values({1, 1, 8, 8}, g);
  const DepthMetrics scaled = compute_metrics(scale(gt, 1.3), gt, Tensor::full({1, 1, 8, 8}, 1.0));
  const bool closed_form = scaled.delta1 == 0.0 && std::abs(scaled.abs_rel - 0.3) < 1e-15;

  Outcome o;
  o.pass = worst <= 1e-12 && closed_form;
  o.detail = "max deviation from brute force " + fmt("%.2e", worst) + " over 100 instances; pred=1.3*gt gives delta1=" +
             fmt("%g", scaled.delta1) + ", abs_rel=" + fmt("%.17g", scaled.abs_rel);
  return o;
}

// ------------------------------------------------------------ criterion 5

int run_command(const std::string& cmd, std::string* output = nullptr) {
  const std::string full = cmd + " 2>&1";
  FILE* pipe = popen(full.c_str(), "r");
  if (!pipe) return -1;
  std::string text;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) text.append(buf, n);
  const int status = pclose(pipe);
  if (output) *output = text;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

// A metric row is valid when every column is finite and within its range.
bool valid_row(const std::string& line) {
  std::stringstream ss(line);
  std::string cell;
  std::vector<double> v;
  while (std::getline(ss, cell, ',')) {
    try {
      v.push_back(std::stod(cell));
    } catch (const std::exception&) {
      return false;
    }
  }
  if (v.size() != 8) return false;
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0) return false;
  }
  return v[4] <= 100.0 && v[5] <= v[6] && v[6] <= v[7] && v[7] <= 1.0;
}

Outcome criterion_ablation(const Context& ctx) {
  const fs::path data = desk_dataset(ctx);
  Outcome o;
  std::vector<std::string> notes;
  for (const std::string flag : {"--no-fusion", "--no-coordconv"}) {
    const fs::path run = ctx.work / ("ablation" + flag.substr(4));
    fs::create_directories(run);
    std::ifstream base(source_path("configs/desk.cfg"));
    std::ofstream cfg(run / "train.cfg");
    cfg << base.rdbuf() << "\ntrain.data = " << fs::absolute(data).string()
        << "\ntrain.checkpoint_dir = " << fs::absolute(run / "ckpt").string() << "\n";
    cfg.close();
    const auto t0 = Clock::now();
    std::string train_log;
    const int train_rc = run_command(quote(ctx.cli) + " train --config " + quote(run / "train.cfg") + " " + flag, &train_log);
    std::string report;
    const int eval_rc = run_command(quote(ctx.cli) + " eval --checkpoint " + quote(run / "ckpt" / "final.ckpt") +
                                        " --data " + quote(data) + " --pp",
                                    &report);
    // Two blocks (raw, pp): 40 sample rows and one aggregate row each.
    int rows = 0, bad = 0;
    std::stringstream ss(report);
    std::string line;
    while (std::getline(ss, line)) {
      if (line.empty() || line[0] == '#' || line == metrics_csv_header() || line.find("mean abs") != std::string::npos) {
        continue;
      }
      ++rows;
      if (!valid_row(line)) ++bad;
    }
    std::ifstream arch_file(run / "ckpt" / "final.ckpt.arch");
    const ArchConfig arch = parse_arch_config(arch_file);
    const bool flag_honored = flag == "--no-fusion" ? !arch.fusion && arch.coordconv : arch.fusion && !arch.coordconv;
    const bool ok = train_rc == 0 && eval_rc == 0 && rows == 82 && bad == 0 && flag_honored;
    if (!ok) {
      std::printf("%s\n%s\n", train_log.substr(train_log.size() > 2000 ? train_log.size() - 2000 : 0).c_str(),
                  report.c_str());
    }
    o.pass = o.pass && ok;
    notes.push_back(flag + ": train exit " + std::to_string(train_rc) + ", eval exit " + std::to_string(eval_rc) + ", " +
                    std::to_string(rows) + " rows, " + std::to_string(bad) + " invalid, " +
                    fmt("%.0f s", seconds_since(t0)));
  }
  o.detail = notes[0] + "; " + notes[1];
  return o;
}

// ------------------------------------------------------------ criterion 6

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome criterion_persistence(const Context& ctx) {
  std::vector<std::string> problems;
  const fs::path data = ctx.work / "determinism_data";
  generate_dataset(data, 4, 77, 64, 64);
  TrainConfig cfg = desk_config(data, ctx.work / "det_a");
  cfg.stage_epochs = {1, 1, 1};
  run_schedule(cfg);
  cfg.checkpoint_dir = ctx.work / "det_b";
  run_schedule(cfg);
  for (const char* name : {"train_log.csv", "stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "final.ckpt"}) {
    if (file_bytes(ctx.work / "det_a" / name) != file_bytes(ctx.work / "det_b" / name)) {
      problems.push_back(std::string("fixed-seed runs differ in ") + name);
    }
  }
  // Data generation is deterministic too.
  generate_dataset(ctx.work / "determinism_data2", 4, 77, 64, 64);
  for (const char* name : {"000000_left.ppm", "000003_right.ppm", "000001_disp.pgm", "manifest.txt"}) {
    if (file_bytes(data / name) != file_bytes(ctx.work / "determinism_data2" / name)) {
      problems.push_back(std::string("fixed-seed datasets differ in ") + name);
    }
  }

  // Checkpoint round trip: forward outputs are bit-identical after reload.
  const DepthNet trained = load_model(ctx.work / "det_a" / "final.ckpt");
  const fs::path copy = ctx.work / "roundtrip.ckpt";
  save_model(copy, trained);
  DepthNet fresh(trained.config(), 12345);
  load_checkpoint(copy, fresh.parameters());
  const Tensor img = load_dataset(data)[0].left;
  const auto a = trained.forward(img);
  const auto b = fresh.forward(img);
  for (std::size_t s = 0; s < kNumScales; ++s) {
    if (!std::equal(a.scales[s].values().begin(), a.scales[s].values().end(), b.scales[s].values().begin())) {
      problems.push_back("checkpoint round trip changes scale " + std::to_string(s));
    }
  }
  if (file_bytes(copy) != file_bytes(ctx.work / "det_a" / "final.ckpt")) {
    problems.push_back("re-saved checkpoint differs byte-wise");
  }

  // Image files: 8-bit colour within 1/255, 16-bit disparity within 1/256.
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double color_err = 0.0, disp_err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor im = random_tensor({1, 3, 48, 64}, rng, 0.0, 1.0, false);
    write_image(ctx.work / "rt.ppm", im);
    const Tensor back = read_image(ctx.work / "rt.ppm");
    for (std::size_t k = 0; k < im.values().size(); ++k) {
      color_err = std::max(color_err, std::abs(back.values()[k] - im.values()[k]));
    }
    const Tensor d = random_tensor({1, 1, 48, 64}, rng, 0.0, 200.0, false);
    write_image(ctx.work / "rt.pgm", d);
    const Tensor dback = read_image(ctx.work / "rt.pgm");
    for (std::size_t k = 0; k < d.values().size(); ++k) {
      disp_err = std::max(disp_err, std::abs(dback.values()[k] - d.values()[k]));
    }
  }
  if (!(color_err <= 1.0 / 255.0)) problems.push_back("PPM error " + fmt("%.3e", color_err));
  if (!(disp_err <= 1.0 / 256.0)) problems.push_back("PGM error " + fmt("%.3e", disp_err));
  write_image(ctx.work / "four.pgm", Tensor::full({1, 1, 2, 2}, 4.0));
  if (read_image(ctx.work / "four.pgm").at(0, 0, 1, 1) != 4.0) problems.push_back("PGM 4.0 px not exact");

  Outcome o;
  o.pass = problems.empty();
  o.detail = problems.empty() ? "runs, datasets and checkpoints bit-identical; PPM err " + fmt("%.2e", color_err) +
                                    " (<= 1/255), PGM err " + fmt("%.2e", disp_err) + " (<= 1/256)"
                              : problems.front() + (problems.size() > 1 ? " (+" + std::to_string(problems.size() - 1) + " more)" : "");
  return o;
}

// ------------------------------------------------------------ criterion 7

Outcome criterion_warp(const Context&) {
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::int64_t h = 64, w = 64;
    const StereoSample s = render_stereo(random_scene(7000 + seed, h, w, seed % 2 == 0));
    const Tensor recon = reconstruct(s.right, scale(*s.gt_disparity, 1.0 / static_cast<double>(w)), Eye::kLeft);
    const auto plane = static_cast<std::size_t>(h * w);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < plane; ++k) {
        if (s.visible->values()[k] != 1.0) continue;
        worst = std::max(worst, std::abs(recon.values()[c * plane + k] - s.left.values()[c * plane + k]));
        ++checked;
      }
    }
  }
  Outcome o;
  o.pass = worst < 1e-12;
  o.detail = "max abs error " + fmt("%.2e", worst) + " over " + std::to_string(checked) +
             " non-occluded values in 50 scenes";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  std::string work = (fs::temp_directory_path() / "fdepth_acceptance").string();
  std::string cli = FDEPTH_CLI_PATH;
  app.add_option("--criterion", only, "Run a single criterion (1-7); 0 runs all")->check(CLI::Range(0, 7));
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--cli", cli, "Path to the fdepth executable");
  CLI11_PARSE(app, argc, argv);

  const Context ctx{fs::absolute(work), fs::absolute(cli)};
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria{
      {"gradient suite", criterion_gradients},
      {"structural suite", criterion_structure},
      {"synthetic disparity recovery", criterion_recovery},
      {"metric oracle", criterion_metrics},
      {"ablation parity", criterion_ablation},
      {"determinism and persistence", criterion_persistence},
      {"warp-generator cross-validation", criterion_warp},
  };
  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (only != 0 && static_cast<std::size_t>(only) != k + 1) continue;
    Outcome o;
    try {
      o = criteria[k].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %zu [%s]: %s -- %s\n", k + 1, criteria[k].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
