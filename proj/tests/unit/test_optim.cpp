#include <cmath>
#include <limits>

#include "doctest.h"
#include "dfd/optim.hpp"
#include "support/helpers.hpp"

using namespace dfd;
using dfd::test::TempDir;

namespace {

struct SynthSplits {
  TempDir dir{"optim"};
  DatasetIndex index;

  SynthSplits() {
    SynthOptions opts;
    opts.n_per_class = 40;
    opts.size = 32;
    synth_dataset(dir.path(), opts);
    index = split_dataset(scan_directory(dir.path()), {}, 3);
  }
};

SynthSplits& synth_splits() {
  static SynthSplits s;
  return s;
}

Loader loader_for(Split split, bool shuffle) {
  return Loader(synth_splits().index.of(split), {16, 32, 32, shuffle});
}

Model desk_dfcnet(std::uint64_t seed) { return build_dfcnet(ModelConfig::defaults(ModelKind::dfcnet, Scale::desk), seed); }

}  // namespace

TEST_CASE("bce values") {
  auto half = Tensor64::from_values({2, 1}, {0.5, 0.5});
  CHECK(bce_loss(half, Tensor64::from_values({2}, {0, 1})).item() == doctest::Approx(std::log(2.0)));
  auto p = Tensor64::from_values({2}, {0.9, 0.2});
  CHECK(bce_loss(p, Tensor64::from_values({2}, {1, 0})).item() == doctest::Approx(0.16425).epsilon(1e-4));
  auto sure = Tensor64::from_values({1}, {1.0});
  CHECK(bce_loss(sure, Tensor64::from_values({1}, {1})).item() == doctest::Approx(-std::log(1 - 1e-7)));
  auto wrong = Tensor64::from_values({1}, {0.0});
  CHECK(bce_loss(wrong, Tensor64::from_values({1}, {1})).item() == doctest::Approx(-std::log(1e-7)));

  CHECK_THROWS_AS(bce_loss(p, Tensor64::from_values({2}, {1, 2})), DomainError);
  CHECK_THROWS_AS(bce_loss(p, Tensor64::from_values({3}, {1, 0, 1})), ShapeError);
}

TEST_CASE("bce is minimized at the label") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const double y = rng.below(2);
    const double q = rng.uniform(0.01, 0.99);
    const auto labels = Tensor64::from_values({1}, {y});
    CHECK(bce_loss(Tensor64::from_values({1}, {y}), labels).item() <
          bce_loss(Tensor64::from_values({1}, {q}), labels).item());
  }
}

TEST_CASE("bce gradient") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto labels = Tensor64::from_values({6}, {0, 1, 1, 0, 1, 0});
    auto at = dfd::test::random64({6, 1}, rng, 0.05, 0.95);
    auto r = grad_check([&](const Tensor64& x) { return bce_loss(x, labels); }, at);
    CHECK(r.max_relative_error < 1e-6);
  }
}

TEST_CASE("adam first step matches hand computation") {
  std::vector<Tensor> params{Tensor::zeros({1})};
  params[0].set_requires_grad(true);
  params[0].mutable_grad()[0] = 1.0f;
  Adam adam;
  adam.step(params);
  CHECK(adam.state().t == 1);
  CHECK(params[0].data()[0] == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-6));

  // Step 2 with g = 1 again: m = 0.19, v = 0.001999, both corrections cancel.
  params[0].mutable_grad()[0] = 1.0f;
  adam.step(params);
  const double m_hat = 0.19 / (1 - 0.81), v_hat = 0.001999 / (1 - 0.998001);
  const double expect = -0.001 / (1.0 + 1e-8) - 0.001 * m_hat / (std::sqrt(v_hat) + 1e-8);
  CHECK(params[0].data()[0] == doctest::Approx(expect).epsilon(1e-6));
  CHECK(params[0].data()[0] < -0.001f);
}

TEST_CASE("adam with zero gradient never moves parameters") {
  Rng rng(6);
  std::vector<Tensor> params{Tensor::uniform({3, 4}, rng, -1.0f, 1.0f), Tensor::uniform({5}, rng, -1.0f, 1.0f)};
  const auto before0 = params[0].values(), before1 = params[1].values();
  params[0].mutable_grad();
  AdamState state;
  for (int i = 0; i < 5; ++i) adam_step(params, state);
  CHECK(params[0].values() == before0);
  CHECK(params[1].values() == before1);
  CHECK(state.m.size() == 2);

  std::vector<Tensor> other{Tensor::zeros({2})};
  CHECK_THROWS_AS(adam_step(other, state), ShapeError);
  AdamConfig bad;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("adam follows the sign of a constant gradient") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const float g = static_cast<float>(rng.uniform(-5, 5));
    if (g == 0.0f) continue;
    std::vector<Tensor> params{Tensor::zeros({1})};
    AdamState state;
    float prev = 0.0f;
    for (int i = 0; i < 3; ++i) {
      params[0].zero_grad();
      params[0].mutable_grad()[0] = g;
      adam_step(params, state);
      const float now = params[0].data()[0];
      CHECK((g > 0 ? now < prev : now > prev));
      prev = now;
    }
  }
}

TEST_CASE("fit with zero epochs leaves the model alone") {
  auto model = desk_dfcnet(1);
  const auto before = model.state();
  FitOptions opts;
  opts.epochs = 0;
  auto r = fit(model, loader_for(Split::train, true), loader_for(Split::val, false), opts);
  CHECK(r.records.empty());
  CHECK_FALSE(r.best_epoch);
  CHECK(r.best_state == before);
  CHECK(model.state() == before);
}

TEST_CASE("fit is deterministic and keeps the best validation state") {
  FitOptions opts;
  opts.epochs = 3;
  opts.shuffle_seed = 4;
  opts.dropout_seed = 5;
  opts.augment.kind = AugmentKind::basic;
  opts.augment.seed = 6;
  auto a = desk_dfcnet(2), b = desk_dfcnet(2);
  std::vector<std::size_t> hooked;
  auto ra = fit(a, loader_for(Split::train, true), loader_for(Split::val, false), opts,
                [&](const TrainRecord& r) { hooked.push_back(r.epoch); });
  auto rb = fit(b, loader_for(Split::train, true), loader_for(Split::val, false), opts);
  CHECK(ra.records == rb.records);
  CHECK(a.state() == b.state());
  CHECK(hooked == std::vector<std::size_t>{1, 2, 3});
  REQUIRE(ra.best_epoch);
  for (const auto& r : ra.records) {
    CHECK(r.seconds == 0.0);
    CHECK(r.train_loss >= 0.0);
    CHECK(r.val_acc >= 0.0);
    CHECK(r.val_acc <= 1.0);
    CHECK(ra.records[*ra.best_epoch - 1].val_loss <= r.val_loss);
  }
}

TEST_CASE("validation never mutates parameters") {
  auto model = desk_dfcnet(3);
  const auto before = model.state();
  auto r = evaluate_loader(model, loader_for(Split::val, false));
  CHECK(model.state() == before);
  CHECK(r.probabilities.size() == synth_splits().index.of(Split::val).size());
  CHECK(r.labels.size() == r.probabilities.size());
  CHECK(evaluate_loader(model, loader_for(Split::val, false)).probabilities == r.probabilities);
}

TEST_CASE("non-finite loss aborts training") {
  auto model = desk_dfcnet(4);
  auto w = *model.parameters().find("head.bias");
  w.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  FitOptions opts;
  opts.epochs = 2;
  try {
    fit(model, loader_for(Split::train, true), loader_for(Split::val, false), opts);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch == 1);
    CHECK(e.batch == 1);
  }
}

TEST_CASE("smoothed training loss decreases on separable data") {
  auto model = desk_dfcnet(5);
  FitOptions opts;
  opts.epochs = 12;
  opts.shuffle_seed = 1;
  opts.dropout_seed = 2;
  auto r = fit(model, loader_for(Split::train, true), loader_for(Split::val, false), opts);
  std::vector<double> smooth;
  for (std::size_t e = 5; e <= r.records.size(); ++e) {
    double acc = 0;
    for (std::size_t k = e - 5; k < e; ++k) acc += r.records[k].train_loss;
    smooth.push_back(acc / 5);
  }
  for (std::size_t i = 1; i < smooth.size(); ++i) CHECK(smooth[i] < smooth[i - 1]);
}

TEST_CASE("curves csv round trip") {
  TempDir dir("curves");
  std::vector<TrainRecord> recs{{1, 0.5, 0.69314718, 0.25, 0.7, 0}, {2, 0.875, 0.1, 1.0, 1e-5, 1.5}};
  write_curves_csv(recs, dir / "c.csv");
  const auto text = dfd::test::read_file(dir / "c.csv");
  CHECK(text.rfind("epoch,train_acc,train_loss,val_acc,val_loss,seconds\n", 0) == 0);
  CHECK(text.find("\n1,0.5,0.69314718,0.25,0.7,0\n") != std::string::npos);
  CHECK(read_curves_csv(dir / "c.csv") == recs);
  write_curves_csv({}, dir / "empty.csv");
  CHECK(read_curves_csv(dir / "empty.csv").empty());
}
