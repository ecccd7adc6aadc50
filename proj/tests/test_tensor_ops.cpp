#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "msync/adam.hpp"
#include "msync/gradcheck.hpp"
#include "msync/ops.hpp"

using namespace msync;

namespace {

Tensor<double> rand_tensor(std::vector<Index> shape, Rng& rng, double scale = 1.0) {
  return Tensor<double>::normal(std::move(shape), rng, 0.0, scale);
}

// Random matrix shape, never degenerate.
std::vector<Index> rand_shape2(Rng& rng, Index lo = 1, Index hi = 7) {
  return {Index(rng.below(std::uint64_t(hi - lo + 1))) + lo,
          Index(rng.below(std::uint64_t(hi - lo + 1))) + lo};
}

}  // namespace

TEST_CASE("backward: sum of squares matches analytic gradient") {
  Tape<double> t;
  Parameter<double> p("x", Tensor<double>({2}, {1.0, 2.0}));
  Var x = t.watch(p);
  Var loss = sum(t, mul(t, x, x));
  auto grads = backward(loss, t);
  CHECK(grads["x"][0] == doctest::Approx(2.0));
  CHECK(grads["x"][1] == doctest::Approx(4.0));
}

TEST_CASE("backward: sum of softmax has zero gradient") {
  Tape<double> t;
  Parameter<double> p("z", Tensor<double>({4}, {0.3, -1.2, 2.0, 0.5}));
  Var z = t.watch(p);
  Var loss = sum(t, softmax(t, z));
  auto grads = backward(loss, t);
  for (Index i = 0; i < 4; ++i) CHECK(std::abs(grads["z"][i]) < 1e-12);
}

TEST_CASE("backward: parameters off the loss path get zero gradients") {
  Tape<double> t;
  Parameter<double> used("used", Tensor<double>({2}, {1.0, 1.0}));
  Parameter<double> unused("unused", Tensor<double>({3}, {1.0, 2.0, 3.0}));
  Var u = t.watch(used);
  t.watch(unused);
  auto grads = backward(sum(t, u), t);
  CHECK(grads.count("unused") == 1);
  for (Index i = 0; i < 3; ++i) CHECK(grads["unused"][i] == 0.0);
}

TEST_CASE("backward: non-scalar loss is rejected") {
  Tape<double> t;
  Parameter<double> p("x", Tensor<double>({2}, {1.0, 2.0}));
  Var x = t.watch(p);
  CHECK_THROWS_AS(t.backward(x), NonScalarLoss);
}

TEST_CASE("gradient accumulation: f(x)+f(x) doubles the gradient") {
  Rng rng(7);
  Tensor<double> x0 = rand_tensor({3, 3}, rng);
  auto f = [](Tape<double>& t, Var x) { return sum(t, mul(t, x, x)); };

  Tape<double> t1;
  Parameter<double> p1("x", x0);
  Var x1 = t1.watch(p1);
  t1.backward(f(t1, x1));
  Tensor<double> g_single = t1.grad(x1);

  Tape<double> t2;
  Parameter<double> p2("x", x0);
  Var x2 = t2.watch(p2);
  t2.backward(add(t2, f(t2, x2), f(t2, x2)));
  Tensor<double> g_double = t2.grad(x2);

  for (Index i = 0; i < x0.size(); ++i) CHECK(g_double[i] == 2.0 * g_single[i]);
}

TEST_CASE("grad_check: linear function is exact") {
  Rng rng(11);
  Tensor<double> x = rand_tensor({5}, rng);
  const double err = grad_check(
      [](Tape<double>& t, Var x) { return sum(t, scale(t, x, 3.0)); }, x);
  CHECK(err < 1e-10);
}

TEST_CASE("grad_check: nondeterministic function is rejected") {
  Rng rng(3);
  Tensor<double> x = rand_tensor({2}, rng);
  int calls = 0;
  auto fn = [&calls](Tape<double>& t, Var x) {
    ++calls;
    return scale(t, sum(t, x), 1.0 + 1e-9 * calls);
  };
  CHECK_THROWS_AS(grad_check(fn, x), NonDeterministicFunction);
}

// Every primitive at f64 across >= 10 random shapes, error < 1e-6.
TEST_CASE("grad_check: elementwise and reduction primitives") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto shape = rand_shape2(rng);
    Tensor<double> x = rand_tensor(shape, rng);
    Tensor<double> other = rand_tensor(shape, rng);

    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, add(t, v, t.constant(other)));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, sub(t, t.constant(other), v));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, mul(t, v, t.constant(other)));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, mul(t, v, v));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return mean(t, scale(t, v, -1.7));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            Var s = sum(t, v);
            return sum(t, scale_by(t, t.constant(other), s));
          }, x) < 1e-6);
  }
}

TEST_CASE("grad_check: nonlinearities") {
  Rng rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> x = rand_tensor(rand_shape2(rng), rng, 1.5);
    CHECK(grad_check([](Tape<double>& t, Var v) { return sum(t, relu(t, v)); }, x) < 1e-6);
    CHECK(grad_check([](Tape<double>& t, Var v) { return sum(t, gelu(t, v)); }, x) < 1e-6);
    CHECK(grad_check([](Tape<double>& t, Var v) { return sum(t, sigmoid(t, v)); }, x) < 1e-6);
    CHECK(grad_check([](Tape<double>& t, Var v) { return sum(t, tanh_op(t, v)); }, x) < 1e-6);
  }
}

TEST_CASE("grad_check: matmul in all transpose modes") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Index m = Index(rng.below(5)) + 1;
    const Index k = Index(rng.below(5)) + 1;
    const Index n = Index(rng.below(5)) + 1;
    Tensor<double> a = rand_tensor({m, k}, rng);
    Tensor<double> at = rand_tensor({k, m}, rng);
    Tensor<double> b = rand_tensor({k, n}, rng);
    Tensor<double> bt = rand_tensor({n, k}, rng);

    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, matmul(t, v, t.constant(b)));
          }, a) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, matmul(t, t.constant(a), v));
          }, b) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, matmul(t, v, t.constant(bt), false, true));
          }, a) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, matmul(t, t.constant(at), v, true, false));
          }, b) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, matmul(t, t.constant(at), v, true, true));
          }, bt) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, transpose(t, v));
          }, a) < 1e-6);
  }
}

TEST_CASE("grad_check: broadcast adds") {
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    auto shape = rand_shape2(rng);
    Tensor<double> m = rand_tensor(shape, rng);
    Tensor<double> rv = rand_tensor({shape[1]}, rng);
    Tensor<double> cv = rand_tensor({shape[0]}, rng);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, add_rowvec(t, v, t.constant(rv)));
          }, m) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, add_rowvec(t, t.constant(m), v));
          }, rv) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, add_colvec(t, t.constant(m), v));
          }, cv) < 1e-6);
  }
}

TEST_CASE("grad_check: motion ops (concat, slice, reshape, gather, pick)") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const Index rows = Index(rng.below(4)) + 2;
    const Index cols = Index(rng.below(4)) + 2;
    Tensor<double> x = rand_tensor({rows, cols}, rng);
    Tensor<double> y = rand_tensor({rows, cols}, rng);

    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, concat(t, {v, t.constant(y), v}, 0));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, concat(t, {t.constant(y), v}, 1));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, slice(t, v, 0, rows / 2, rows - rows / 2));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, slice(t, v, 1, 0, cols / 2 + 1));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, reshape(t, v, {cols, rows}));
          }, x) < 1e-6);

    std::vector<Index> ids;
    for (int i = 0; i < 6; ++i) ids.push_back(Index(rng.below(std::uint64_t(rows))));
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, gather_rows(t, v, ids));
          }, x) < 1e-6);

    std::vector<Index> pr, pc;
    for (int i = 0; i < 5; ++i) {
      pr.push_back(Index(rng.below(std::uint64_t(rows))));
      pc.push_back(Index(rng.below(std::uint64_t(cols))));
    }
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, pick(t, v, pr, pc));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, pick_vec(t, reshape(t, v, {rows * cols}), {0, rows * cols - 1}));
          }, x) < 1e-6);
  }
}

TEST_CASE("grad_check: softmax family") {
  Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    // Unit-scale logits: saturated softmax tails have near-zero true
    // gradients that central differences cannot resolve relatively.
    Tensor<double> x = rand_tensor(rand_shape2(rng), rng, 1.0);
    Tensor<double> w = rand_tensor(x.shape(), rng);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, mul(t, softmax(t, v), t.constant(w)));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, mul(t, log_softmax(t, v), t.constant(w)));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, logsumexp(t, v));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, logsumexp_cols(t, v));
          }, x) < 1e-6);

    std::vector<Index> targets;
    for (Index r = 0; r < x.dim(0); ++r)
      targets.push_back(Index(rng.below(std::uint64_t(x.dim(1)))));
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return cross_entropy(t, v, targets, Reduction::mean);
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return cross_entropy(t, v, targets, Reduction::sum);
          }, x) < 1e-6);
  }
}

TEST_CASE("softmax rows are a distribution; log_softmax agrees with log") {
  Rng rng(47);
  Tape<double> t;
  Var x = t.constant(rand_tensor({6, 9}, rng, 3.0));
  Var sm = softmax(t, x);
  Var lsm = log_softmax(t, x);
  for (Index r = 0; r < 6; ++r) {
    double total = 0;
    for (Index c = 0; c < 9; ++c) {
      const double p = t.val(sm).at(r, c);
      CHECK(p >= 0.0);
      total += p;
      CHECK(std::abs(std::log(p) - t.val(lsm).at(r, c)) < 1e-6);
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("grad_check: layer norm") {
  Rng rng(53);
  for (int trial = 0; trial < 10; ++trial) {
    // Width >= 3: a 2-column row normalizes to exactly +-1, so its true
    // gradient nearly vanishes and the finite-difference quotient is
    // dominated by roundoff.
    auto shape = rand_shape2(rng, 3, 8);
    Tensor<double> x = rand_tensor(shape, rng);
    Tensor<double> gain = rand_tensor({shape[1]}, rng);
    Tensor<double> bias = rand_tensor({shape[1]}, rng);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, layer_norm(t, v, t.constant(gain), t.constant(bias)));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            Var w = mul(t, v, v);  // non-uniform downstream weighting
            return sum(t, mul(t, layer_norm(t, v, t.constant(gain), t.constant(bias)), w));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, layer_norm(t, t.constant(x), v, t.constant(bias)));
          }, gain) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, layer_norm(t, t.constant(x), t.constant(gain), v));
          }, bias) < 1e-6);
  }
}

TEST_CASE("grad_check: conv1d and max-over-time") {
  Rng rng(59);
  for (int trial = 0; trial < 10; ++trial) {
    const Index L = Index(rng.below(6)) + 1;
    const Index cin = Index(rng.below(3)) + 1;
    const Index cout = Index(rng.below(3)) + 1;
    const Index k = Index(rng.below(3)) + 1;  // widths 1..3
    Tensor<double> x = rand_tensor({L, cin}, rng);
    Tensor<double> w = rand_tensor({k, cin, cout}, rng);
    Tensor<double> b = rand_tensor({cout}, rng);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, conv1d_same(t, v, t.constant(w), t.constant(b)));
          }, x) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, conv1d_same(t, t.constant(x), v, t.constant(b)));
          }, w) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, conv1d_same(t, t.constant(x), t.constant(w), v));
          }, b) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var v) {
            return sum(t, max_over_time(t, conv1d_same(t, v, t.constant(w), t.constant(b))));
          }, x) < 1e-6);
  }
}

TEST_CASE("grad_check: attention with causal mask") {
  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    const Index L = Index(rng.below(5)) + 2;
    const Index d = Index(rng.below(4)) + 2;
    Tensor<double> q = rand_tensor({L, d}, rng);
    Tensor<double> k = rand_tensor({L, d}, rng);
    Tensor<double> v = rand_tensor({L, d}, rng);
    Tensor<double> mask = causal_mask<double>(L, trial % 2 == 0);
    Tensor<double> w = rand_tensor({L, d}, rng);
    auto attn_loss = [&](Tape<double>& t, Var qq, Var kk, Var vv) {
      Var out = attention(t, qq, kk, vv, t.constant(mask));
      return sum(t, mul(t, out, t.constant(w)));
    };
    CHECK(grad_check([&](Tape<double>& t, Var x) {
            return attn_loss(t, x, t.constant(k), t.constant(v));
          }, q) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var x) {
            return attn_loss(t, t.constant(q), x, t.constant(v));
          }, k) < 1e-6);
    CHECK(grad_check([&](Tape<double>& t, Var x) {
            return attn_loss(t, t.constant(q), t.constant(k), x);
          }, v) < 1e-6);
  }
}

TEST_CASE("grad_check: positional encodings added to input") {
  Rng rng(67);
  Tensor<double> x = rand_tensor({5, 8}, rng);
  CHECK(grad_check([](Tape<double>& t, Var v) {
          Var pe = t.constant(sinusoidal_encoding<double>(5, 8));
          return sum(t, mul(t, add(t, v, pe), add(t, v, pe)));
        }, x) < 1e-6);
}

TEST_CASE("dropout: eval mode is the identity, train mode masks and scales") {
  Rng data_rng(71);
  Tensor<double> x = rand_tensor({4, 6}, data_rng);

  Tape<double> t;
  Var xv = t.constant(x);
  Rng rng(5);
  Var eval_out = dropout(t, xv, 0.5, rng, /*train=*/false);
  CHECK(eval_out.i == xv.i);  // identity: no new node

  Rng rng2(5);
  Var train_out = dropout(t, xv, 0.5, rng2, /*train=*/true);
  int kept = 0;
  for (Index i = 0; i < x.size(); ++i) {
    const double v = t.val(train_out)[i];
    if (v != 0.0) {
      CHECK(v == doctest::Approx(2.0 * x[i]));
      ++kept;
    }
  }
  CHECK(kept > 0);
  CHECK(kept < x.size());
}

TEST_CASE("grad_check: dropout with a fixed mask") {
  Rng data_rng(73);
  Tensor<double> x = rand_tensor({3, 5}, data_rng);
  CHECK(grad_check([](Tape<double>& t, Var v) {
          Rng mask_rng(99);  // reseeded per forward: deterministic
          return sum(t, dropout(t, v, 0.3, mask_rng, true));
        }, x) < 1e-6);
}

TEST_CASE("noam schedule: knee at warmup, rising before, falling after") {
  NoamSchedule sched{512, 6000};
  CHECK(sched.lr(6000) ==
        doctest::Approx(std::pow(512.0, -0.5) * std::pow(6000.0, -0.5)));
  for (std::int64_t t = 1; t < 6000; t += 997)
    CHECK(sched.lr(t) < sched.lr(t + 1));
  for (std::int64_t t = 6000; t < 30000; t += 2000)
    CHECK(sched.lr(t) > sched.lr(t + 1));
}

TEST_CASE("adam: first step moves a zero scalar by about lr(1)") {
  ParamStore<double> store;
  Parameter<double>& w = store.add("w", Tensor<double>::scalar(0.0));
  w.grad[0] = 1.0;
  Adam<double> opt({&w});
  NoamSchedule sched{512, 6000};
  opt.step(sched);
  const double lr1 = sched.lr(1);
  CHECK(w.value[0] < 0.0);
  CHECK(w.value[0] == doctest::Approx(-lr1).epsilon(1e-6));
  CHECK(w.grad[0] == 0.0);  // consumed
}

TEST_CASE("adam: shape mismatch between grad and value is impossible by construction") {
  ParamStore<double> store;
  Parameter<double>& w = store.add("w", Tensor<double>({2, 2}));
  CHECK(w.grad.same_shape(w.value));
}
