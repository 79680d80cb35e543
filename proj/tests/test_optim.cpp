#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sortrl/checkpoint.hpp"
#include "sortrl/optim.hpp"
#include "sortrl/util.hpp"

using namespace sortrl;

TEST_CASE("param store keeps insertion order and unique names") {
  ParamStore store;
  store.add("b", Tensor::scalar(1));
  store.add("a", Tensor::scalar(2));
  CHECK_THROWS_AS(store.add("a", Tensor::scalar(3)), std::invalid_argument);
  std::vector<std::string> names;
  for (auto& [name, t] : store) names.push_back(name);
  CHECK(names == std::vector<std::string>{"b", "a"});
}

TEST_CASE("adamw zero grad and zero decay is the identity") {
  ParamStore store;
  store.add("p", Tensor::vec({1.5, -0.5}, true));
  AdamW opt(store, {0.1, 0.0, 0.9, 0.999, 1e-8});
  store.get("p").mutable_grad();  // zeros
  opt.step();
  CHECK(store.get("p").data()[0] == 1.5);
  CHECK(store.get("p").data()[1] == -0.5);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw bias-corrected first step") {
  ParamStore store;
  store.add("p", Tensor::scalar(1.0, true));
  AdamW opt(store, {0.1, 0.0, 0.9, 0.999, 1e-8});
  store.get("p").mutable_grad()[0] = 1.0;
  opt.step();
  // One step with unit gradient moves by lr / (1 + eps).
  CHECK(store.get("p").item() ==
        doctest::Approx(1.0 - 0.1 * (1.0 / (1.0 + 1e-8))).epsilon(1e-12));
  CHECK_FALSE(store.get("p").has_grad());  // grads zeroed (cleared)
}

TEST_CASE("adamw decoupled decay with zero gradient") {
  ParamStore store;
  store.add("p", Tensor::scalar(3.0, true));
  AdamW opt(store, {0.1, 0.02, 0.9, 0.999, 1e-8});
  store.get("p").mutable_grad();
  opt.step();
  CHECK(store.get("p").item() == doctest::Approx(3.0 * 0.998).epsilon(1e-14));
}

TEST_CASE("adamw requires populated grads") {
  ParamStore store;
  store.add("p", Tensor::scalar(1.0, true));
  AdamW opt(store, {});
  CHECK_THROWS_AS(opt.step(), std::logic_error);
}

TEST_CASE("adamw step counter increments by one per step") {
  ParamStore store;
  store.add("p", Tensor::scalar(1.0, true));
  AdamW opt(store, {});
  for (int i = 1; i <= 5; ++i) {
    store.get("p").mutable_grad()[0] = 0.3;
    opt.step();
    CHECK(opt.step_count() == i);
  }
}

TEST_CASE("checkpoint round trip is byte identical") {
  ParamStore store;
  Rng rng(5);
  std::vector<double> v(12);
  for (double& c : v) c = rng.gauss();
  store.add("w", Tensor::from_data({3, 4}, v));
  store.add("b", Tensor::vec({0.25, -1.75, 3e-300}));

  auto dir = std::filesystem::temp_directory_path() / "sortrl_ckpt_test";
  std::filesystem::create_directories(dir);
  auto p1 = (dir / "a.ckpt").string();
  auto p2 = (dir / "b.ckpt").string();
  save_checkpoint(p1, store);
  ParamStore loaded = load_checkpoint(p1);
  CHECK(loaded.size() == store.size());
  CHECK(loaded.get("w").shape() == std::vector<int64_t>{3, 4});
  for (size_t i = 0; i < v.size(); ++i) CHECK(loaded.get("w").data()[i] == v[i]);
  save_checkpoint(p2, loaded);

  auto bytes = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)),
                       std::istreambuf_iterator<char>());
  };
  CHECK(bytes(p1) == bytes(p2));
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejects foreign files") {
  auto dir = std::filesystem::temp_directory_path() / "sortrl_ckpt_bad";
  std::filesystem::create_directories(dir);
  auto p = (dir / "junk.bin").string();
  {
    std::ofstream os(p, std::ios::binary);
    os << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(p), std::runtime_error);
  std::filesystem::remove_all(dir);
}
