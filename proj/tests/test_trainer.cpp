#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fdepth/checkpoint.hpp"
#include "fdepth/config.hpp"
#include "fdepth/image_io.hpp"
#include "fdepth/ops.hpp"
#include "fdepth/optimizer.hpp"
#include "fdepth/synth.hpp"
#include "fdepth/trainer.hpp"

using namespace fdepth;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fdepth_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ArchConfig tiny_arch() {
  ArchConfig a;
  a.num_levels = 3;
  a.widths = {4, 6, 8};
  return a;
}

TrainConfig tiny_config(const fs::path& root) {
  TrainConfig c;
  c.arch = tiny_arch();
  c.adam.lr = 1e-3;
  c.stage_epochs = {2, 1, 1};
  c.dataset_dir = root / "data";
  c.checkpoint_dir = root / "ckpt";
  c.seed = 3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("adam zero gradient leaves parameters alone") {
  std::vector<Tensor> params{Tensor::from_values({1, 1, 1, 2}, {0.5, -0.25}, true)};
  OptimizerState state;
  adam_step(params, state, AdamConfig{});
  CHECK(state.step == 1);
  CHECK(params[0].values()[0] == 0.5);
  CHECK(params[0].values()[1] == -0.25);
}

TEST_CASE("adam first step is about -lr * sign(g)") {
  Tensor x = Tensor::from_values({1, 1, 1, 1}, {2.0}, true);
  sum(x).backward();  // gradient 1
  std::vector<Tensor> params{x};
  OptimizerState state;
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(params, state, cfg);
  CHECK(x.values()[0] - 2.0 == doctest::Approx(-0.1).epsilon(1e-7));
  CHECK(x.values()[0] - 2.0 == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));

  // Second step with the same gradient: m_hat = v_hat = 1 again.
  adam_step(params, state, cfg);
  CHECK(x.values()[0] - 2.0 == doctest::Approx(-0.2).epsilon(1e-7));
}

TEST_CASE("adam is deterministic and checks shapes") {
  const auto run = [] {
    Tensor w = Tensor::from_values({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4}, true);
    std::vector<Tensor> params{w};
    OptimizerState state;
    for (int k = 0; k < 5; ++k) {
      w.zero_grad();
      sum(square(add_scalar(w, 0.3 * k))).backward();
      adam_step(params, state, AdamConfig{0.01});
    }
    return std::vector<double>(w.values().begin(), w.values().end());
  };
  CHECK(run() == run());

  std::vector<Tensor> one{Tensor::zeros({1, 1, 1, 3}, true)};
  OptimizerState state;
  adam_step(one, state, AdamConfig{});
  std::vector<Tensor> other{Tensor::zeros({1, 1, 1, 4}, true)};
  CHECK_THROWS_AS(adam_step(other, state, AdamConfig{}), std::invalid_argument);
  std::vector<Tensor> two{one[0], one[0]};
  CHECK_THROWS_AS(adam_step(two, state, AdamConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(adam_step(one, state, AdamConfig{-1.0}), std::invalid_argument);
}

TEST_CASE("config parsing") {
  std::istringstream in(R"(# desk run
train.lr = 3e-4
train.epochs = 4, 2, 1
train.data = data   # relative
train.checkpoint_dir = /abs/ckpt
train.seed = 17
train.batch_size = 2
arch.num_levels = 3
arch.widths = 8,16,32
arch.fusion = false
loss.smoothness = 0.5
loss.scale_factors = 1,1,1,1
)");
  const TrainConfig c = parse_train_config(in, "/base");
  CHECK(c.adam.lr == 3e-4);
  CHECK(c.stage_epochs == std::array<int, 3>{4, 2, 1});
  CHECK(c.dataset_dir == fs::path("/base/data"));
  CHECK(c.checkpoint_dir == fs::path("/abs/ckpt"));
  CHECK(c.seed == 17);
  CHECK(c.batch_size == 2);
  CHECK(c.arch.num_levels == 3);
  CHECK(c.arch.widths == std::vector<int>{8, 16, 32});
  CHECK_FALSE(c.arch.fusion);
  CHECK(c.arch.coordconv);
  CHECK(c.loss.smoothness == 0.5);
  CHECK(c.loss.scale_factors[3] == 1.0);
  CHECK_NOTHROW(c.validate());

  std::istringstream unknown("train.speed = 3\n");
  CHECK_THROWS_AS(parse_train_config(unknown), std::invalid_argument);
  std::istringstream bad("train.lr = fast\n");
  CHECK_THROWS_AS(parse_train_config(bad), std::invalid_argument);
  std::istringstream epochs("train.epochs = 1,2\n");
  CHECK_THROWS_AS(parse_train_config(epochs), std::invalid_argument);
  std::istringstream noeq("train.lr 3\n");
  CHECK_THROWS_AS(parse_train_config(noeq), std::invalid_argument);

  TrainConfig neg = c;
  neg.stage_epochs[1] = -1;
  CHECK_THROWS_AS(neg.validate(), std::invalid_argument);
  neg = c;
  neg.adam.lr = 0.0;
  CHECK_THROWS_AS(neg.validate(), std::invalid_argument);
}

TEST_CASE("arch sidecar round trip") {
  ArchConfig a = tiny_arch();
  a.coordconv = false;
  a.reservation = 0.4;
  std::istringstream in(format_arch_config(a));
  const ArchConfig b = parse_arch_config(in);
  CHECK(b.num_levels == a.num_levels);
  CHECK(b.widths == a.widths);
  CHECK(b.coordconv == a.coordconv);
  CHECK(b.fusion == a.fusion);
  CHECK(b.refinement == a.refinement);
  CHECK(b.reservation == a.reservation);
  CHECK(b.d_max == a.d_max);
}

TEST_CASE("stage plans") {
  CHECK(stage_plan(1).scales == kAllScales);
  CHECK(stage_plan(2).scales == ScaleSet{true, true, false, false});
  CHECK(stage_plan(3).scales == ScaleSet{true, true, false, false});
  CHECK(stage_plan(2).terms.smoothness);
  CHECK_FALSE(stage_plan(3).terms.smoothness);
  CHECK_FALSE(stage_plan(3).terms.occlusion);
  CHECK(stage_plan(3).terms.lr_consistency);
  CHECK_THROWS_AS(stage_plan(4), std::invalid_argument);
}

TEST_CASE("stage-3 loss ignores the smoothness weight") {
  const DepthNet net(tiny_arch(), 5);
  const StereoSample s = render_stereo(random_scene(8, 32, 32, true));
  LossWeights w;
  const double base = training_loss(net, s, w, stage_plan(3)).item();
  w.smoothness = 1000.0;
  w.occlusion = 1000.0;
  CHECK(training_loss(net, s, w, stage_plan(3)).item() == base);
  CHECK(training_loss(net, s, w, stage_plan(2)).item() != base);
}

TEST_CASE("run_schedule writes log and checkpoints deterministically") {
  const fs::path root = scratch_dir("schedule");
  generate_dataset(root / "data", 3, 4, 32, 32);
  TrainConfig cfg = tiny_config(root);
  std::vector<EpochRecord> seen;
  const TrainResult a = run_schedule(cfg, [&](const EpochRecord& r) { seen.push_back(r); });
  REQUIRE(a.log.size() == 4);
  CHECK(seen.size() == 4);
  CHECK(a.log[0].stage == 1);
  CHECK(a.log[1].stage == 1);
  CHECK(a.log[2].stage == 2);
  CHECK(a.log[3].stage == 3);
  CHECK(a.log[3].epoch == 4);
  for (const char* name : {"stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "final.ckpt", "final.ckpt.arch"}) {
    CHECK(fs::exists(cfg.checkpoint_dir / name));
  }
  const std::string log_a = slurp(cfg.checkpoint_dir / "train_log.csv");
  CHECK(log_a.rfind("epoch,stage,mean_loss\n1,1,", 0) == 0);

  // Same seed, fresh directory: identical log and weights.
  cfg.checkpoint_dir = root / "ckpt2";
  const TrainResult b = run_schedule(cfg);
  CHECK(slurp(cfg.checkpoint_dir / "train_log.csv") == log_a);
  const auto& pa = a.net.parameters().entries();
  const auto& pb = b.net.parameters().entries();
  REQUIRE(pa.size() == pb.size());
  bool same = true;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    same = same && std::equal(pa[k].value.values().begin(), pa[k].value.values().end(), pb[k].value.values().begin());
  }
  CHECK(same);

  // The saved model reproduces the trained network's prediction bit for bit.
  const DepthNet loaded = load_model(root / "ckpt" / "final.ckpt");
  const auto samples = load_dataset(root / "data");
  const Tensor p1 = predict_disparity(a.net, samples[0].left, false);
  const Tensor p2 = predict_disparity(loaded, samples[0].left, false);
  CHECK(std::equal(p1.values().begin(), p1.values().end(), p2.values().begin()));
  fs::remove_all(root);
}

TEST_CASE("run_schedule rejects missing data before training") {
  const fs::path root = scratch_dir("missing");
  TrainConfig cfg = tiny_config(root);
  CHECK_THROWS_AS(run_schedule(cfg), std::runtime_error);
  CHECK_FALSE(fs::exists(cfg.checkpoint_dir / "train_log.csv"));
  generate_dataset(root / "data", 0, 1, 32, 32);
  CHECK_THROWS_AS(run_schedule(cfg), std::runtime_error);
  fs::remove_all(root);
}

TEST_CASE("evaluate and predict") {
  const fs::path root = scratch_dir("eval");
  generate_dataset(root / "data", 2, 6, 32, 32);
  const auto samples = load_dataset(root / "data");
  const DepthNet net(tiny_arch(), 1);
  const Tensor raw = predict_disparity(net, samples[0].left, false);
  CHECK(raw.shape() == Shape{1, 1, 32, 32});
  for (double v : raw.values()) {
    CHECK(v > 0.0);
    CHECK(v < 0.3 * 32);
  }
  const Tensor pp = predict_disparity(net, samples[0].left, true);
  CHECK(pp.shape() == raw.shape());
  const EvalReport r = evaluate(net, samples, false);
  CHECK(r.per_sample.size() == 2);
  REQUIRE(r.aggregate.d1_all.has_value());
  CHECK(r.aggregate.delta1 <= r.aggregate.delta2);
  CHECK(r.aggregate.delta2 <= r.aggregate.delta3);
  CHECK(r.mean_abs_disparity_error > 0.0);
  const EvalReport rp = evaluate(net, samples, true);
  CHECK(rp.per_sample.size() == 2);
  fs::remove_all(root);
}
