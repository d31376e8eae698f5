#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "testutil.hpp"

using namespace etdlab;
using namespace testutil;

TEST_CASE("identity matmul returns the operand") {
  Rng rng(4);
  Tensor a = random_tensor({3, 3}, rng, 1.0, false);
  Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor out = matmul(eye, a);
  CHECK(max_abs_diff(out.data(), a.data()) == 0.0);
}

TEST_CASE("matmul hand example") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {1, 1});
  Tensor out = matmul(a, b);
  CHECK(out.data()[0] == 3.0);
  CHECK(out.data()[1] == 7.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("inner dimensions"), Error);
}

TEST_CASE("gradient of sum(matmul) matches finite differences") {
  Rng rng(11);
  Tensor a = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({3, 5}, rng);
  std::vector<Tensor*> leaves{&a, &b};
  const double err = grad_check([&] { return sum(matmul(a, b)); }, leaves);
  CHECK(err < 1e-6);
}

TEST_CASE("batched matmul gradient matches finite differences") {
  Rng rng(12);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({4, 3}, rng);
  std::vector<Tensor*> leaves{&a, &b};
  const double err = grad_check([&] { return sum(silu(matmul(a, b))); }, leaves);
  CHECK(err < 1e-6);
}

TEST_CASE("add with zeros is the identity") {
  Rng rng(5);
  Tensor x = random_tensor({2, 6}, rng, 1.0, false);
  Tensor z = Tensor::zeros({6});
  CHECK(bit_equal(add(x, z).data(), x.data()));
}

TEST_CASE("trailing broadcast rules") {
  Tensor a = Tensor::zeros({2, 3, 4});
  CHECK_NOTHROW(add(a, Tensor::zeros({4})));
  CHECK_NOTHROW(add(a, Tensor::zeros({3, 4})));
  CHECK_NOTHROW(mul(a, Tensor::zeros({1})));
  CHECK_THROWS_AS(add(a, Tensor::zeros({3})), Error);
  CHECK_THROWS_AS(mul(a, Tensor::zeros({2, 4})), Error);
}

TEST_CASE("broadcast add/mul gradients match finite differences") {
  Rng rng(13);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  std::vector<Tensor*> leaves{&a, &b};
  CHECK(grad_check([&] { return sum(mul(add(a, b), b)); }, leaves) < 1e-6);
}

TEST_CASE("silu fixed points and gradient") {
  Tensor zero = Tensor::from_data({1}, {0.0});
  CHECK(silu(zero).item() == 0.0);
  Rng rng(14);
  Tensor x = random_tensor({9}, rng);
  std::vector<Tensor*> leaves{&x};
  CHECK(grad_check([&] { return sum(silu(x)); }, leaves) < 1e-6);
}

TEST_CASE("gelu, sigmoid, neg, scale gradients") {
  Rng rng(15);
  Tensor x = random_tensor({8}, rng);
  std::vector<Tensor*> leaves{&x};
  CHECK(grad_check([&] { return sum(gelu(x)); }, leaves) < 1e-6);
  CHECK(grad_check([&] { return sum(sigmoid(x)); }, leaves) < 1e-6);
  CHECK(grad_check([&] { return sum(scale(neg(x), 2.5)); }, leaves) < 1e-6);
}

TEST_CASE("softmax of a uniform row is uniform") {
  Tensor x = Tensor::full({1, 5}, 3.7);
  Tensor p = softmax_rows(x);
  for (double v : p.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("softmax hand example [0, ln 3]") {
  Tensor x = Tensor::from_data({1, 2}, {0.0, std::log(3.0)});
  Tensor p = softmax_rows(x);
  CHECK(p.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows always sum to one") {
  Rng rng(16);
  Tensor x = random_tensor({7, 9}, rng, 5.0, false);
  Tensor p = softmax_rows(x);
  for (int64_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (int64_t i = 0; i < 9; ++i) s += p.data()[r * 9 + i];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(17);
  Tensor x = random_tensor({2, 5}, rng);
  Tensor w = random_tensor({5}, rng, 1.0, false);
  std::vector<Tensor*> leaves{&x};
  CHECK(grad_check([&] { return sum(mul(softmax_rows(x), w)); }, leaves) < 1e-6);
}

TEST_CASE("rms_norm constant row lands at the gain") {
  Tensor x = Tensor::full({2, 4}, 3.0);
  Tensor g = Tensor::from_data({4}, {1, 1, 1, 1});
  Tensor out = rms_norm(x, g, 1e-12);
  for (double v : out.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rms_norm is scale invariant for positive scalars") {
  Rng rng(18);
  Tensor x = random_tensor({3, 6}, rng, 1.0, false);
  Tensor g = random_tensor({6}, rng, 1.0, false);
  Tensor a = rms_norm(x, g, 1e-12);
  Tensor b = rms_norm(scale(x, 7.25), g, 1e-12);
  CHECK(max_abs_diff(a.data(), b.data()) < 1e-9);
}

TEST_CASE("rms_norm output has unit rms") {
  Rng rng(19);
  Tensor x = random_tensor({4, 8}, rng, 2.0, false);
  Tensor g = Tensor::full({8}, 1.0);
  Tensor out = rms_norm(x, g, 1e-10);
  for (int64_t r = 0; r < 4; ++r) {
    double ss = 0.0;
    for (int64_t i = 0; i < 8; ++i) ss += out.data()[r * 8 + i] * out.data()[r * 8 + i];
    CHECK(std::sqrt(ss / 8.0) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("rms_norm gradient matches finite differences") {
  Rng rng(20);
  Tensor x = random_tensor({2, 6}, rng);
  Tensor g = random_tensor({6}, rng);
  Tensor w = random_tensor({6}, rng, 1.0, false);
  std::vector<Tensor*> leaves{&x, &g};
  CHECK(grad_check([&] { return sum(mul(rms_norm(x, g, 1e-6), w)); }, leaves) < 1e-6);
}

TEST_CASE("cross entropy special values") {
  // strongly peaked logits drive the loss to zero
  Tensor peaked = Tensor::from_data({2, 3}, {50, 0, 0, 0, 50, 0});
  std::vector<int32_t> targets{0, 1};
  std::vector<uint8_t> mask{1, 1};
  CHECK(cross_entropy(peaked, targets, mask).item() < 1e-9);
  // uniform logits give ln(V)
  Tensor uniform = Tensor::zeros({2, 7});
  CHECK(cross_entropy(uniform, targets, mask).item() ==
        doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects bad targets and empty masks") {
  Tensor logits = Tensor::zeros({2, 4});
  std::vector<int32_t> bad{0, 7};
  std::vector<uint8_t> mask{1, 1};
  CHECK_THROWS_WITH_AS(cross_entropy(logits, bad, mask), doctest::Contains("outside"), Error);
  std::vector<int32_t> ok{0, 1};
  std::vector<uint8_t> empty{0, 0};
  CHECK_THROWS_AS(cross_entropy(logits, ok, empty), Error);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(21);
  Tensor logits = random_tensor({2, 3, 5}, rng);
  std::vector<int32_t> targets{1, 4, 0, 2, 3, 1};
  std::vector<uint8_t> mask{1, 0, 1, 1, 0, 1};
  std::vector<Tensor*> leaves{&logits};
  CHECK(grad_check([&] { return cross_entropy(logits, targets, mask); }, leaves) < 1e-6);
}

TEST_CASE("backward of sum gives all ones") {
  Rng rng(22);
  Tensor x = random_tensor({3, 3}, rng);
  Tape tape;
  Tensor loss = sum(x);
  tape.backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("shared subexpressions accumulate gradients") {
  Tensor x = Tensor::param({1}, {1.5});
  Tape tape;
  Tensor loss = add(x, x);
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("tensors not reachable from the loss get no gradient") {
  Rng rng(23);
  Tensor x = random_tensor({4}, rng);
  Tensor y = random_tensor({4}, rng);
  Tape tape;
  Tensor loss = sum(x);
  tape.backward(loss);
  CHECK(y.grad().empty());
}

TEST_CASE("backward twice on one tape is an error") {
  Tensor x = Tensor::param({1}, {2.0});
  Tape tape;
  Tensor loss = sum(x);
  tape.backward(loss);
  CHECK_THROWS_WITH_AS(tape.backward(loss), doctest::Contains("already"), Error);
}

TEST_CASE("backward requires a scalar recorded on the tape") {
  Rng rng(24);
  Tensor x = random_tensor({3}, rng);
  {
    Tape tape;
    Tensor vec = add(x, x);
    CHECK_THROWS_WITH_AS(tape.backward(vec), doctest::Contains("scalar"), Error);
  }
  {
    Tensor off_tape = Tensor::param({1}, {1.0});
    Tape tape;
    CHECK_THROWS_AS(tape.backward(off_tape), Error);
  }
}

TEST_CASE("non-finite input data is rejected") {
  CHECK_THROWS_WITH_AS(Tensor::from_data({2}, {1.0, std::nan("")}),
                       doctest::Contains("non-finite"), Error);
  CHECK_THROWS_AS(Tensor::from_data({1}, {INFINITY}), Error);
}

TEST_CASE("ops are deterministic across repeated evaluation") {
  Rng rng(25);
  Tensor a = random_tensor({6, 6}, rng, 1.0, false);
  Tensor b = random_tensor({6, 6}, rng, 1.0, false);
  Tensor r1 = matmul(silu(a), b);
  Tensor r2 = matmul(silu(a), b);
  CHECK(bit_equal(r1.data(), r2.data()));
}

TEST_CASE("embed_lookup gathers rows and scatter-adds gradients") {
  Rng rng(26);
  Tensor table = random_tensor({5, 3}, rng);
  std::vector<int32_t> ids{4, 0, 4, 2};
  Tensor out = embed_lookup(table, ids, 2, 2);
  CHECK(out.shape() == Shape{2, 2, 3});
  for (int64_t i = 0; i < 3; ++i) CHECK(out.data()[i] == table.data()[4 * 3 + i]);
  std::vector<Tensor*> leaves{&table};
  Tensor w = random_tensor({3}, rng, 1.0, false);
  CHECK(grad_check([&] { return sum(mul(embed_lookup(table, ids, 2, 2), w)); }, leaves) < 1e-6);
  std::vector<int32_t> bad{5, 0, 1, 2};
  CHECK_THROWS_AS(embed_lookup(table, bad, 2, 2), Error);
}

TEST_CASE("where_rows selects rows and routes gradients") {
  Rng rng(27);
  Tensor a = random_tensor({2, 2, 3}, rng);
  Tensor b = random_tensor({2, 2, 3}, rng);
  std::vector<uint8_t> keep{1, 0, 0, 1};
  Tensor out = where_rows(keep, a, b);
  CHECK(bit_equal(out.data().subspan(0, 3), a.data().subspan(0, 3)));
  CHECK(bit_equal(out.data().subspan(3, 3), b.data().subspan(3, 3)));
  std::vector<Tensor*> leaves{&a, &b};
  Tensor w = random_tensor({3}, rng, 1.0, false);
  CHECK(grad_check([&] { return sum(mul(where_rows(keep, a, b), w)); }, leaves) < 1e-6);
}

TEST_CASE("reshape keeps values and round-trips gradients") {
  Rng rng(28);
  Tensor x = random_tensor({2, 6}, rng);
  Tensor r = reshape(x, {3, 4});
  CHECK(bit_equal(r.data(), x.data()));
  std::vector<Tensor*> leaves{&x};
  CHECK(grad_check([&] { return sum(silu(reshape(x, {4, 3}))); }, leaves) < 1e-6);
  CHECK_THROWS_AS(reshape(x, {5, 2}), Error);
}
