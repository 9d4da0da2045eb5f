#include <cmath>

#include "doctest.h"
#include "sed/checkpoint.hpp"
#include "sed/errors.hpp"
#include "sed/nn/layers.hpp"
#include "sed/nn/optim.hpp"
#include "support.hpp"

using namespace sed;
using nn::Matrix;
using nn::Tape;
using nn::Var;

namespace {

struct Fixture {
  nn::ParameterStore store;
  Rng rng = derive_rng(42);
  std::size_t add(const std::string& name, int r, int c) {
    return store.add(name, test::random_matrix(r, c, rng, 0.7));
  }
};

}  // namespace

TEST_CASE("elementwise and linear ops have correct gradients") {
  Fixture f;
  const auto a = f.add("a", 3, 4);
  const auto b = f.add("b", 3, 4);
  const auto w = f.add("w", 4, 2);
  const auto bias = f.add("bias", 1, 2);
  const auto row = f.add("row", 1, 4);
  const Matrix target = test::random_matrix(3, 2, f.rng);
  auto r = test::check_gradients(f.store, [&](Tape& t) {
    Var x = t.mul(t.param(a), t.silu(t.param(b)));
    x = t.add_row(t.sub(x, t.scale(t.param(a), 0.3)), t.param(row));
    x = t.add_scalar(t.exp(t.scale(x, 0.2)), 0.1);
    Var y = t.linear(x, t.param(w), t.param(bias));
    Var z = t.matmul(t.param(a), t.param(w));
    return t.add(t.squared_error(y, t.constant(target)), t.sum(t.relu(z)));
  });
  CHECK(r.max_rel_error <= 1e-5);
  INFO(r.worst);
}

TEST_CASE("structural ops have correct gradients") {
  Fixture f;
  const auto a = f.add("a", 4, 3);
  const auto b = f.add("b", 2, 3);
  const auto c = f.add("c", 4, 2);
  const Matrix target = test::random_matrix(3, 2, f.rng);
  const nn::Segments seg = nn::Segments::from_lengths(std::vector<int>{2, 1, 3});
  auto r = test::check_gradients(f.store, [&](Tape& t) {
    Var rows = t.concat_rows(t.param(a), t.param(b));          // 6 x 3
    Var cols = t.concat_cols(t.param(a), t.param(c));          // 4 x 5
    Var picked = t.gather_rows(rows, {5, 0, 0, 3, 1, 2});      // repeated index
    Var pooled = t.segment_mean(picked, seg);                  // 3 x 3
    Var sliced = t.slice_cols(cols, 1, 3);                     // 4 x 3
    return t.add(t.squared_error(t.slice_cols(pooled, 0, 2), t.constant(target)),
                 t.sum(t.mul(sliced, sliced)));
  });
  CHECK(r.max_rel_error <= 1e-5);
  INFO(r.worst);
}

TEST_CASE("layer norm and softmax cross-entropy gradients") {
  Fixture f;
  const auto x = f.add("x", 5, 6);
  const auto g = f.add("g", 1, 6);
  const auto b = f.add("b", 1, 6);
  auto r = test::check_gradients(f.store, [&](Tape& t) {
    Var h = t.layer_norm(t.param(x), t.param(g), t.param(b));
    return t.softmax_cross_entropy(h, {0, 5, -1, 2, 2});
  });
  CHECK(r.max_rel_error <= 1e-5);
  INFO(r.worst);
}

TEST_CASE("softmax cross-entropy of uniform logits is ln k") {
  Tape t;
  Var logits = t.constant(Matrix::Zero(2, 3));
  CHECK(t.scalar(t.softmax_cross_entropy(logits, {0, 2})) == doctest::Approx(2 * std::log(3.0)));
  CHECK(t.scalar(t.softmax_cross_entropy(logits, {-1, -1})) == 0.0);
}

TEST_CASE("attention gradients, causal and bidirectional") {
  for (bool causal : {false, true}) {
    Fixture f;
    const auto qkv = f.add("qkv", 5, 12);
    const nn::Segments seg = nn::Segments::from_lengths(std::vector<int>{3, 2});
    const Matrix target = test::random_matrix(5, 4, f.rng);
    auto r = test::check_gradients(f.store, [&](Tape& t) {
      return t.squared_error(t.attention(t.param(qkv), seg, 2, causal), t.constant(target));
    });
    CHECK(r.max_rel_error <= 1e-5);
    INFO(r.worst);
  }
}

TEST_CASE("attention isolates segments and respects the causal mask") {
  Rng rng = derive_rng(3);
  const Matrix qkv = test::random_matrix(5, 6, rng);
  const nn::Segments both = nn::Segments::from_lengths(std::vector<int>{3, 2});
  const nn::Segments first = nn::Segments::from_lengths(std::vector<int>{3});
  Tape t;
  const Matrix joint = t.value(t.attention(t.constant(qkv), both, 1, true));
  const Matrix alone = t.value(t.attention(t.constant(qkv.topRows(3)), first, 1, true));
  CHECK((joint.topRows(3) - alone).cwiseAbs().maxCoeff() == 0.0);

  // Causal: changing a later token leaves earlier outputs untouched.
  Matrix changed = qkv;
  changed.row(2).setRandom();
  const Matrix after = t.value(t.attention(t.constant(changed), both, 1, true));
  CHECK((after.topRows(2) - joint.topRows(2)).cwiseAbs().maxCoeff() == 0.0);

  // One token attends only to itself: output equals its value block.
  const nn::Segments single = nn::Segments::from_lengths(std::vector<int>{1});
  const Matrix one = t.value(t.attention(t.constant(qkv.topRows(1)), single, 1, false));
  CHECK((one - qkv.block(0, 4, 1, 2)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("transformer block gradients") {
  nn::ParameterStore store;
  Rng rng = derive_rng(8);
  const auto block = nn::TransformerBlock::create(store, "b", 4, 8, 2, rng);
  for (auto& p : store) p.value += test::random_matrix(p.value.rows(), p.value.cols(), rng, 0.1);
  const Matrix x = test::random_matrix(3, 4, rng);
  const Matrix target = test::random_matrix(3, 4, rng);
  const nn::Segments seg = nn::Segments::from_lengths(std::vector<int>{3});
  auto r = test::check_gradients(store, [&](Tape& t) {
    return t.squared_error(block(t, t.constant(x), seg, true, nn::ForwardMode::eval()), t.constant(target));
  });
  CHECK(r.max_rel_error <= 1e-4);
  INFO(r.worst);
  CHECK_THROWS_AS(nn::TransformerBlock::create(store, "c", 6, 8, 4, rng), ConfigError);
}

TEST_CASE("dropout is identity at p = 0 and scales survivors") {
  Rng rng = derive_rng(1);
  Tape t;
  const Matrix ones = Matrix::Ones(100, 100);
  CHECK(t.value(t.dropout(t.constant(ones), 0.0, rng)) == ones);
  const Matrix d = t.value(t.dropout(t.constant(ones), 0.5, rng));
  for (Eigen::Index i = 0; i < d.size(); ++i) REQUIRE((d.data()[i] == 0.0 || d.data()[i] == 2.0));
  CHECK(d.mean() == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("inference tape rejects backward and keeps no gradients") {
  nn::ParameterStore store;
  store.add("w", Matrix::Ones(2, 2));
  Tape t = Tape::inference(store);
  Var y = t.sum(t.param(0));
  CHECK(t.scalar(y) == 4.0);
  CHECK_FALSE(t.is_recording());
}

TEST_CASE("Adam reduces a quadratic and clips gradients") {
  nn::ParameterStore store;
  store.add("x", Matrix::Constant(1, 3, 5.0));
  nn::AdamConfig cfg;
  cfg.grad_clip = 1.0;
  nn::Adam adam(store, cfg);
  for (int i = 0; i < 2000; ++i) {
    store.zero_grad();
    Tape t = Tape::recording(store);
    t.backward(t.squared_error(t.param(0), t.constant(Matrix::Zero(1, 3))));
    adam.step(store, 0.05);
  }
  CHECK(store[0].value.cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("warmup-exponential schedule endpoints") {
  nn::WarmupExponentialDecay s;
  s.peak = 1e-3;
  s.warmup_steps = 10;
  s.total_steps = 110;
  s.final_ratio = 0.1;
  CHECK(s(10) == doctest::Approx(1e-3));
  CHECK(s(5) == doctest::Approx(5e-4));
  CHECK(s(110) == doctest::Approx(1e-4));
  CHECK(s(60) == doctest::Approx(1e-3 * std::sqrt(0.1)));
}

TEST_CASE("checkpoint save-load-save is byte-identical and detects corruption") {
  test::TempDir dir("ckpt");
  nn::ParameterStore store;
  Rng rng = derive_rng(2);
  store.add("a", test::random_matrix(3, 4, rng));
  store.add("b", test::random_matrix(1, 2, rng));
  Checkpoint c;
  c.model_kind = "test";
  c.config = {{"x", 1}};
  c.step = 17;
  c.metadata = {{"note", "hello"}};
  c.put_parameters(store, "params/");
  save_checkpoint(dir / "a.ckpt", c);
  const Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", loaded);
  CHECK(test::read_file(dir / "a.ckpt") == test::read_file(dir / "b.ckpt"));
  CHECK(checkpoint_hash(loaded) == checkpoint_hash(c));

  nn::ParameterStore restored = store;
  for (auto& p : restored) p.value.setZero();
  loaded.get_parameters(restored, "params/");
  CHECK(restored.values_equal(store));

  std::string bytes = serialize_checkpoint(c);
  bytes[bytes.size() / 2] ^= 0x1;
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 20)), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint("not a checkpoint"), FormatError);
}
