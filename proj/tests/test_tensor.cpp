#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "mmsm/checkpoint.hpp"
#include "mmsm/errors.hpp"
#include "mmsm/tensor.hpp"

using namespace mmsm;

namespace {

template <class S>
Tensor<S> randn(Shape shape, Rng& rng, double s = 1.0) {
  std::vector<S> v(shape.numel());
  for (auto& x : v) x = static_cast<S>(s * rng.normal());
  return Tensor<S>(shape, std::move(v));
}

using FnD = std::function<TensorD(const std::vector<TensorD>&)>;
using FnF = std::function<TensorF(const std::vector<TensorF>&)>;

// Weighted sum, so the upstream gradient is not uniform.
template <class S>
Tensor<S> probe(const Tensor<S>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor<S> w = randn<S>(y.shape(), rng);
  return sum(mul(y, w));
}

double check(const FnD& f, std::vector<TensorD> in) { return gradcheck::max_relative_error<double>(f, std::move(in), 1e-5); }

}  // namespace

TEST_CASE("shape") {
  CHECK(Shape{2, 3}.numel() == 6);
  CHECK(Shape{}.numel() == 1);
  CHECK(Shape{2, 3, 4}.rows() == 6);
  CHECK(Shape{2, 3, 4}.cols() == 4);
  CHECK_THROWS_AS(Shape({1, 1, 1, 1, 1}), ShapeError);
  CHECK_THROWS_AS(TensorF(Shape{2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("matmul example") {
  TensorD a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  TensorD b(Shape{3, 2}, {7, 8, 9, 10, 11, 12});
  const auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{58, 64, 139, 154});
  const auto d = matmul_nt(a, transpose(b));
  CHECK(std::vector<double>(d.data().begin(), d.data().end()) == std::vector<double>{58, 64, 139, 154});
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("broadcast add") {
  TensorD a(Shape{2, 2}, {1, 2, 3, 4});
  TensorD b(Shape{2}, {10, 20});
  const auto c = add(a, b);
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{11, 22, 13, 24});
  CHECK_THROWS_AS(add(a, TensorD(Shape{3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("softmax properties") {
  Rng rng(1);
  const auto x = randn<double>(Shape{4, 7}, rng, 5.0);
  const auto y = softmax(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(y.at(r, c) > 0.0);
      s += y.at(r, c);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  // shift invariance and stability with large inputs
  TensorD big(Shape{1, 3}, {1000, 1001, 1002});
  TensorD small(Shape{1, 3}, {0, 1, 2});
  const auto sb = softmax(big), ss = softmax(small);
  for (std::size_t c = 0; c < 3; ++c) CHECK(sb.at(0, c) == doctest::Approx(ss.at(0, c)).epsilon(1e-12));

  // axis 0 of a [3, 2] tensor normalizes columns
  const auto col = softmax(TensorD(Shape{3, 2}, {1, 2, 3, 4, 5, 6}), 0);
  CHECK(col.at(0, 0) + col.at(1, 0) + col.at(2, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(softmax(small, 2), ShapeError);
}

TEST_CASE("layer_norm properties") {
  Rng rng(2);
  const auto x = randn<double>(Shape{5, 8}, rng, 3.0);
  const auto y = layer_norm(x, TensorD::full(Shape{8}, 1.0), TensorD::zeros(Shape{8}));
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y.at(r, c);
    m /= 8;
    for (std::size_t c = 0; c < 8; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m);
    v /= 8;
    CHECK(std::abs(m) < 1e-10);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("gelu values") {
  const auto y = gelu(TensorD(Shape{3}, {-1.0, 0.0, 1.0}));
  CHECK(y.data()[0] == doctest::Approx(-0.15865525393145707));
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == doctest::Approx(0.8413447460685429));
}

TEST_CASE("cross_entropy") {
  TensorD logits(Shape{2, 3}, {0, 0, 0, 1, 2, 3});
  const std::vector<std::int32_t> t = {1, 2};
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(cross_entropy(logits, t).item() == doctest::Approx((std::log(3.0) + lse - 3.0) / 2));
  const std::vector<std::int32_t> ignored = {0, 2};
  CHECK(cross_entropy(logits, ignored, 0).item() == doctest::Approx(lse - 3.0));
  const std::vector<std::int32_t> all_ignored = {0, 0};
  CHECK(cross_entropy(logits, all_ignored, 0).item() == 0.0);
  const std::vector<std::int32_t> bad = {0, 3};
  CHECK_THROWS(cross_entropy(logits, bad));
}

TEST_CASE("finite-difference gradients, double") {
  Rng rng(7);
  const auto a = randn<double>(Shape{3, 4}, rng);
  const auto b = randn<double>(Shape{4, 5}, rng);
  const auto c = randn<double>(Shape{3, 4}, rng);
  const auto v = randn<double>(Shape{4}, rng);
  const double tol = 1e-6;

  CHECK(check([](const auto& x) { return probe(matmul(x[0], x[1])); }, {a, b}) < tol);
  CHECK(check([](const auto& x) { return probe(matmul_nt(x[0], x[1])); }, {a, c}) < tol);
  CHECK(check([](const auto& x) { return probe(transpose(x[0])); }, {a}) < tol);
  CHECK(check([](const auto& x) { return probe(add(x[0], x[1])); }, {a, v}) < tol);
  CHECK(check([](const auto& x) { return probe(sub(x[0], x[1])); }, {a, c}) < tol);
  CHECK(check([](const auto& x) { return probe(mul(x[0], x[1])); }, {a, c}) < tol);
  CHECK(check([](const auto& x) { return probe(scale(x[0], 2.5)); }, {a}) < tol);
  CHECK(check([](const auto& x) { return probe(gelu(x[0])); }, {a}) < tol);
  CHECK(check([](const auto& x) { return mean(x[0]); }, {a}) < tol);
  CHECK(check([](const auto& x) { return probe(softmax(x[0])); }, {a}) < tol);
  CHECK(check([](const auto& x) { return probe(softmax(x[0], 0)); }, {a}) < tol);
  CHECK(check([](const auto& x) { return probe(layer_norm(x[0], x[1], x[2])); },
              {a, randn<double>(Shape{4}, rng), randn<double>(Shape{4}, rng)}) < tol);
  CHECK(check([](const auto& x) { return probe(normalize_rows(x[0])); }, {a}) < tol);
  CHECK(check([](const auto& x) { return probe(slice_rows(x[0], 1, 2)); }, {a}) < tol);
  CHECK(check([](const auto& x) { return probe(slice_cols(x[0], 1, 2)); }, {a}) < tol);
  CHECK(check([](const auto& x) { return probe(concat_rows<double>({x[0], x[1]})); }, {a, c}) < tol);
  CHECK(check([](const auto& x) { return probe(concat_cols<double>({x[0], x[1]})); }, {a, c}) < tol);
  CHECK(check([](const auto& x) { return probe(reshape(x[0], Shape{2, 6})); }, {a}) < tol);
  const std::vector<std::int32_t> ids = {2, 0, 2};
  CHECK(check([&](const auto& x) { return probe(embedding_lookup(x[0], ids)); }, {a}) < tol);
  const std::vector<std::int32_t> targets = {1, 0, 3};
  CHECK(check([&](const auto& x) { return cross_entropy(x[0], targets, 0); }, {a}) < tol);
}

TEST_CASE("finite-difference gradients, float") {
  // A small attention-like composite in single precision, h = 1e-3.
  Rng rng(8);
  const auto q = randn<float>(Shape{3, 4}, rng, 0.5);
  const auto k = randn<float>(Shape{5, 4}, rng, 0.5);
  const auto val = randn<float>(Shape{5, 4}, rng, 0.5);
  const auto g = randn<float>(Shape{4}, rng, 0.5);
  const FnF f = [](const std::vector<TensorF>& x) {
    const auto att = softmax(scale(matmul_nt(x[0], x[1]), 0.5f));
    const auto h = layer_norm(gelu(matmul(att, x[2])), x[3], TensorF::zeros(Shape{4}));
    return probe(h);
  };
  CHECK(gradcheck::max_relative_error<float>(f, {q, k, val, g}, 1e-3) < 1e-3);
}

TEST_CASE("gradient accumulation and graph release") {
  TensorD x(Shape{2}, {1.0, 2.0}, true);
  auto y = sum(mul(x, x));
  backward(y);
  CHECK(x.grad() == std::vector<double>{2.0, 4.0});
  CHECK_THROWS(backward(y));  // released
  backward(sum(mul(x, x)));
  CHECK(x.grad() == std::vector<double>{4.0, 8.0});
  x.zero_grad();
  CHECK(x.grad() == std::vector<double>{0.0, 0.0});

  CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
  CHECK_THROWS(backward(sum(TensorD(Shape{2}, {1.0, 2.0}))));
}

TEST_CASE("no-grad mode builds no graph") {
  TensorD x(Shape{2}, {1.0, 2.0}, true);
  TensorD y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = sum(mul(x, x));
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
  CHECK_THROWS(backward(y));
}

TEST_CASE("detach and clone") {
  TensorD x(Shape{2}, {1.0, 2.0}, true);
  auto d = mul(x, x).detach();
  CHECK(d.is_leaf());
  CHECK_FALSE(d.requires_grad());
  auto c = x.clone();
  c.mutable_data()[0] = 5.0;
  CHECK(x.data()[0] == 1.0);
}

TEST_CASE("dropout") {
  Rng rng(3);
  const auto x = TensorD::full(Shape{1000}, 1.0);
  const auto y = dropout(x, 0.25, rng);
  std::size_t zeros = 0;
  for (double v : y.data()) {
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(1.0 / 0.75));
  }
  CHECK(zeros > 180);
  CHECK(zeros < 320);
  Rng r2(3);
  CHECK(dropout(x, 0.0, r2).data()[0] == 1.0);
}

TEST_CASE("truncated normal init") {
  Rng rng(11);
  const auto t = TensorF::truncated_normal(Shape{100, 100}, 0.02f, rng);
  double m = 0, v = 0;
  for (float x : t.data()) {
    CHECK(std::abs(x) <= 0.04f + 1e-7f);
    m += x;
  }
  m /= t.numel();
  for (float x : t.data()) v += (x - m) * (x - m);
  v /= t.numel();
  CHECK(std::abs(m) < 1e-3);
  // truncation at two sigma shrinks the std by about 12%
  CHECK(std::sqrt(v) == doctest::Approx(0.02 * 0.8796).epsilon(0.03));
}

TEST_CASE("checkpoint round trip") {
  Checkpoint ck;
  Rng rng(5);
  ck.blobs.emplace_back("config", "{\"a\":1}");
  ck.tensors.emplace_back("w", randn<float>(Shape{3, 2}, rng));
  ck.tensors.emplace_back("s", TensorF::scalar(1.5f));
  const auto bytes = ck.serialize();
  const auto back = Checkpoint::parse(bytes);
  CHECK(back.serialize() == bytes);
  REQUIRE(back.find_tensor("w") != nullptr);
  CHECK(back.find_tensor("w")->shape() == Shape{3, 2});
  const auto w = ck.find_tensor("w")->data();
  const auto w2 = back.find_tensor("w")->data();
  CHECK(std::equal(w.begin(), w.end(), w2.begin(), w2.end()));
  CHECK(*back.find_blob("config") == "{\"a\":1}");
  CHECK(back.find_tensor("missing") == nullptr);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Checkpoint::parse(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(Checkpoint::parse(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(Checkpoint::parse(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(Checkpoint::parse(bad), FormatError);

  const auto path = std::filesystem::temp_directory_path() / "mmsm_test.ckpt";
  ck.save(path);
  CHECK(Checkpoint::load(path).serialize() == bytes);
  std::filesystem::remove(path);
}
