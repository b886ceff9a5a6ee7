#include <cmath>

#include "doctest.h"
#include "nasood/nasood.hpp"
#include "oracles.hpp"

using namespace nasood;
using nasood::testing::flat_state;
using nasood::testing::tiny_batch;
using nasood::testing::tiny_search_state;

namespace F = torch::nn::functional;

namespace {

SearchConfig tiny_config(uint64_t seed = 0) {
  SearchConfig c;
  c.layers = 3;
  c.init_channels = 4;
  c.generator_width = 4;
  c.seed = seed;
  return c;
}

torch::Tensor flat_alpha(SearchState& s) {
  auto a = s.supernet->arch_parameters();
  return torch::cat({a[0].detach().reshape(-1), a[1].detach().reshape(-1)});
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("property: zero learning rates leave every parameter bit-identical") {
  auto config = tiny_config(1);
  config.lr_omega = config.lr_alpha = config.lr_generator = 0.0;
  auto state = tiny_search_state(config, 1);
  const auto net0 = flat_state(*state.supernet);
  const auto alpha0 = flat_alpha(state);
  const auto gen0 = flat_state(*state.generator);
  const auto y0 = module_checksum(*state.classifier);
  for (int i = 0; i < 3; ++i) search_step(state, tiny_batch(10 + i));
  CHECK(torch::equal(flat_state(*state.supernet), net0));
  CHECK(torch::equal(flat_alpha(state), alpha0));
  CHECK(torch::equal(flat_state(*state.generator), gen0));
  CHECK(module_checksum(*state.classifier) == y0);
  CHECK(state.step == 3);
}

TEST_CASE("property: frozen classifier checksum is stable") {
  auto state = tiny_search_state(tiny_config(2), 2);
  const auto y0 = module_checksum(*state.classifier);
  const auto gen0 = flat_state(*state.generator);
  const auto alpha0 = flat_alpha(state);
  for (int i = 0; i < 3; ++i) search_step(state, tiny_batch(20 + i));
  CHECK(module_checksum(*state.classifier) == y0);
  CHECK_FALSE(torch::equal(flat_state(*state.generator), gen0));
  CHECK_FALSE(torch::equal(flat_alpha(state), alpha0));
}

TEST_CASE("omega and alpha updates match a hand-written optimizer loop") {
  // Generator frozen via zero lr, so the loop reduces to SGD on omega then
  // Adam on alpha, each on the state the previous update left behind.
  auto config = tiny_config(3);
  config.lr_generator = 0.0;
  config.lr_omega = 0.05;
  config.lr_alpha = 0.01;
  config.grad_clip = 0.5;
  auto state = tiny_search_state(config, 3);

  auto ref = tiny_search_state(config, 3);
  auto omega = ref.supernet->weight_parameters();
  auto alpha = ref.supernet->arch_parameters();
  std::vector<torch::Tensor> momentum(omega.size());
  std::vector<torch::Tensor> m1(alpha.size()), m2(alpha.size());
  const double b1 = 0.5, b2 = 0.999, eps = 1e-8;

  for (int t = 1; t <= 3; ++t) {
    const auto batch = tiny_batch(30 + t);
    search_step(state, batch);

    auto l_train = F::cross_entropy(ref.supernet->forward(batch.images), batch.labels);
    auto g_omega = torch::autograd::grad({l_train}, omega);
    double sq = 0.0;
    for (const auto& g : g_omega) sq += g.pow(2).sum().item<double>();
    const double coef = std::min(1.0, config.grad_clip / (std::sqrt(sq) + 1e-6));
    {
      torch::NoGradGuard no_grad;
      for (size_t i = 0; i < omega.size(); ++i) {
        auto d = g_omega[i] * coef + config.weight_decay_omega * omega[i];
        momentum[i] = momentum[i].defined() ? momentum[i] * config.momentum + d : d.clone();
        omega[i].sub_(config.lr_omega * momentum[i]);
      }
    }

    torch::Tensor synthetic;
    {
      torch::NoGradGuard no_grad;
      synthetic = ref.generator->generate(batch.images, ref.novel_domain());
    }
    auto l_val = F::cross_entropy(ref.supernet->forward(synthetic), batch.labels);
    auto g_alpha = torch::autograd::grad({l_val}, alpha);
    {
      torch::NoGradGuard no_grad;
      for (size_t i = 0; i < alpha.size(); ++i) {
        auto g = g_alpha[i] + config.weight_decay_alpha * alpha[i];
        m1[i] = m1[i].defined() ? m1[i] * b1 + (1 - b1) * g : (1 - b1) * g;
        m2[i] = m2[i].defined() ? m2[i] * b2 + (1 - b2) * g * g : (1 - b2) * g * g;
        const auto m_hat = m1[i] / (1 - std::pow(b1, t));
        const auto v_hat = m2[i] / (1 - std::pow(b2, t));
        alpha[i].sub_(config.lr_alpha * m_hat / (v_hat.sqrt() + eps));
      }
    }
  }
  CHECK((flat_state(*state.supernet) - flat_state(*ref.supernet)).abs().max().item<double>() < 1e-6);
  CHECK((flat_alpha(state) - flat_alpha(ref)).abs().max().item<double>() < 1e-6);
}

TEST_CASE("property: each sub-step moves its own loss the right way") {
  for (uint64_t seed : {0, 1, 2}) {
    const auto d = nasood::testing::minimax_directionality(seed);
    CHECK(d.generator_after > d.generator_before);
    CHECK(d.omega_after < d.omega_before);
    CHECK(d.alpha_after < d.alpha_before);
  }
}

TEST_CASE("non-finite losses name the sub-step") {
  auto state = tiny_search_state(tiny_config(4), 4);
  auto batch = tiny_batch(40);
  batch.images[0][0][0][0] = std::nan("");
  try {
    search_step(state, batch);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.substep() == "generator_aux");
  }
  auto no_aux = tiny_config(4);
  no_aux.aux_weights = {0.0, 0.0};
  auto state2 = tiny_search_state(no_aux, 4);
  try {
    search_step(state2, batch);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.substep() == "omega");
  }
}

TEST_CASE("search needs two source domains and a frozen classifier") {
  NetworkShape shape;
  shape.layers = 3;
  shape.init_channels = 4;
  shape.num_classes = 4;
  CHECK_THROWS_AS(make_search_state(tiny_config(), shape, 1, nasood::testing::tiny_classifier(4, 0)), ConfigError);
  ClassifierOptions o;
  SemanticClassifier unfrozen(o, 0);
  CHECK_THROWS_AS(make_search_state(tiny_config(), shape, 3, unfrozen), InvalidParameterError);

  const auto ds = nasood::testing::tiny_dataset(2, 8);
  const auto one_domain = ds.subset((ds.domain_labels == 0).nonzero().squeeze(1));
  auto c = tiny_config();
  c.epochs = 1;
  CHECK_THROWS_AS(search(one_domain, c), ConfigError);
}

TEST_CASE("search only ever sees source batches") {
  const auto ds = nasood::testing::tiny_dataset(3, 8);
  const auto splits = make_splits(ds, SplitSpec{"d2", 0.0, 0});
  for (auto mode : {SearchMode::kNasOod, SearchMode::kDartsBaseline}) {
    auto c = tiny_config(5);
    c.mode = mode;
    c.epochs = 2;
    c.batch_size = 8;
    c.classifier_epochs = 1;
    int64_t batches = 0, leaked = 0, epochs = 0;
    SearchHooks hooks;
    hooks.on_batch = [&](const Batch& b) {
      ++batches;
      leaked += (b.domain_labels == 2).sum().item<int64_t>();
    };
    hooks.on_epoch = [&](int64_t, const Genotype&, const LossRecord&) { ++epochs; };
    const auto result = search(splits.train, c, hooks);
    CHECK(batches > 0);
    CHECK(leaked == 0);
    CHECK(epochs == 2);
    CHECK(result.snapshots.size() == 2);
    result.genotype.validate();
    if (mode == SearchMode::kNasOod) {
      CHECK(result.classifier_checksum_before == result.classifier_checksum_after);
      CHECK(result.history.size() == static_cast<size_t>(2 * ((splits.train.size() + 7) / 8)));
    }
  }
}

TEST_CASE("random mode returns random_genotype(seed)") {
  const auto ds = nasood::testing::tiny_dataset(2, 8);
  auto c = tiny_config(11);
  c.mode = SearchMode::kRandomSample;
  c.epochs = 1;
  auto g = search(ds, c).genotype;
  g.meta = {};
  auto expected = random_genotype(11);
  expected.meta = {};
  CHECK(g == expected);
}

TEST_CASE("random_genotype frequencies and determinism") {
  CHECK(random_genotype(3) == random_genotype(3));
  CHECK_FALSE(random_genotype(3) == random_genotype(4));
  std::array<int64_t, kNumOperations> counts{};
  int64_t slots = 0;
  for (uint64_t s = 0; s < 10000; ++s) {
    const auto g = random_genotype(s);
    g.validate();
    for (const auto* cell : {&g.normal, &g.reduce}) {
      for (const auto& node : *cell) {
        for (const auto& e : node) {
          ++counts[op_index(e.op)];
          ++slots;
        }
      }
    }
  }
  CHECK(counts[0] == 0);
  for (int k = 1; k < kNumOperations; ++k) {
    CHECK(std::abs(static_cast<double>(counts[k]) / slots - 1.0 / 7.0) < 0.02);
  }
}

TEST_CASE("evaluation examples") {
  const auto ds = nasood::testing::tiny_dataset(2, 8);  // 32 samples, 4 classes
  const auto constant = [](const torch::Tensor& x) {
    auto logits = torch::zeros({x.size(0), 4});
    logits.select(1, 1).fill_(1.0);
    return logits;
  };
  CHECK(evaluate(constant, ds, 5) == 0.25);
  // Look up the true label by matching the image.
  const auto lookup = [&ds](const torch::Tensor& x) {
    auto logits = torch::zeros({x.size(0), 4});
    for (int64_t i = 0; i < x.size(0); ++i) {
      for (int64_t r = 0; r < ds.size(); ++r) {
        if (torch::equal(ds.images[r], x[i])) {
          logits[i][ds.class_labels[r].item<int64_t>()] = 1.0;
          break;
        }
      }
    }
    return logits;
  };
  CHECK(evaluate(lookup, ds, 7) == 1.0);
  // Correct only on class 0 and 3 samples of domain 0: 4 of 32.
  const auto partial = [&ds](const torch::Tensor& x) {
    auto logits = torch::zeros({x.size(0), 4});
    logits.select(1, 2).fill_(1.0);
    for (int64_t i = 0; i < x.size(0); ++i) {
      for (int64_t r = 0; r < 8; ++r) {
        const auto label = ds.class_labels[r].item<int64_t>();
        if ((label == 0 || label == 3) && torch::equal(ds.images[r], x[i])) logits[i][label] = 5.0;
      }
    }
    return logits;
  };
  // Class 2 samples are also right: 8 of them, plus 4.
  CHECK(evaluate(partial, ds, 3) == doctest::Approx(12.0 / 32.0));
  CHECK(evaluate(constant, ds.subset(torch::zeros({0}, torch::kLong))) == 0.0);
}

TEST_CASE("retraining refuses target data in training splits") {
  const auto ds = nasood::testing::tiny_dataset(2, 8);
  auto splits = make_splits(ds, SplitSpec{"d1", 0.0, 0});
  splits.train = ds;
  RetrainConfig c;
  c.layers = 3;
  c.init_channels = 4;
  c.epochs = 1;
  CHECK_THROWS_AS(retrain_derived(nasood::testing::fixture_genotype(), splits, c), ProtocolError);
}

TEST_CASE("retraining is deterministic and reports the best-val epoch") {
  const auto ds = nasood::testing::tiny_dataset(4, 8);
  RetrainConfig c;
  c.layers = 3;
  c.init_channels = 4;
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = 2;
  const auto a = retrain_derived(nasood::testing::fixture_genotype(), ds, "d0", c);
  const auto b = retrain_derived(nasood::testing::fixture_genotype(), ds, "d0", c);
  REQUIRE(a.history.size() == 2);
  CHECK(a.target_accuracy == b.target_accuracy);
  CHECK(a.history[0].train_loss == b.history[0].train_loss);
  CHECK(a.target_accuracy == a.history[a.best_epoch - 1].test_accuracy);
  CHECK(a.parameter_count == count_parameters(*a.network));
}

TEST_CASE("config JSON") {
  auto c = search_config_from_json({{"layers", 5}, {"lambda_cycle", 0.5}});
  CHECK(c.layers == 5);
  CHECK(c.aux_weights.lambda_cycle == 0.5);
  CHECK(search_config_from_json(search_config_to_json(c)).layers == 5);
  try {
    search_config_from_json({{"layerz", 5}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "layerz");
  }
  CHECK_THROWS_AS(retrain_config_from_json({{"epochz", 1}}), ConfigError);
  CHECK(parse_mode("nasood_no_cycle") == SearchMode::kNasOodNoCycle);
  CHECK(mode_name(SearchMode::kDartsBaseline) == "darts");
  CHECK_THROWS_AS(parse_mode("bogus"), ConfigError);
}

}  // TEST_SUITE
