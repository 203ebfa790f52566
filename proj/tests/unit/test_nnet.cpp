#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "seqoed/nnet.hpp"
#include "test_support.hpp"

using namespace seqoed;
using namespace seqoed::nnet;
using seqoed::test::v1;
using seqoed::test::v2;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "seqoed-unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// 1-3-1 network with hand-picked parameters.
Mlp tiny() {
  Mlp net = Mlp::zeros(make_arch(1, {3}, 1));
  net.weights[0] << 1.0, -1.0, 2.0;
  net.biases[0] << 0.0, 0.5, -1.0;
  net.weights[1] << 1.0, 2.0, -0.5;
  net.biases[1] << 0.25;
  return net;
}

}  // namespace

TEST_SUITE("nnet") {
  TEST_CASE("encoder layout for the scalar two-stage problem") {
    const EncoderSpec pol{2, 1, 1, false, false};
    const EncoderSpec q{2, 1, 1, true, false};
    CHECK(pol.length() == 4);
    CHECK(q.length() == 5);

    History h(2);
    Vector e0 = encode_policy_input(0, h, pol);
    CHECK(e0 == (Vector(4) << 1, 0, 0, 0).finished());

    h = h.append(v1(0.7), v1(2.5));
    Vector e1 = encode_policy_input(1, h, pol);
    CHECK(e1 == (Vector(4) << 0, 1, 0.7, 2.5).finished());
    Vector q1 = encode_q_input(1, h, v1(1.5), q);
    CHECK(q1 == (Vector(5) << 0, 1, 0.7, 2.5, 1.5).finished());
  }

  TEST_CASE("encoder lengths for a four-stage planar problem") {
    const EncoderSpec pol{4, 2, 1, false, false};
    const EncoderSpec q{4, 2, 1, true, false};
    CHECK(pol.length() == 13);
    CHECK(q.length() == 15);
    const EncoderSpec batch{4, 2, 1, false, true};
    CHECK(batch.length() == 4);
  }

  TEST_CASE("encoder rejects inconsistent inputs") {
    const EncoderSpec pol{2, 1, 1, false, false};
    History h(2);
    CHECK_THROWS_AS(encode_policy_input(1, h, pol), LengthMismatch);
    CHECK_THROWS_AS(encode_policy_input(2, h, pol), LengthMismatch);
    h = h.append(v2(1, 2), v1(0));
    CHECK_THROWS_AS(encode_policy_input(1, h, pol), LengthMismatch);
    const EncoderSpec q{2, 1, 1, true, false};
    CHECK_THROWS_AS(encode_q_input(0, History(2), v2(1, 1), q), LengthMismatch);
  }

  TEST_CASE("encoding round trip and injectivity") {
    const EncoderSpec spec{3, 2, 1, true, false};
    Rng rng = substream(1, "encode");
    for (int t = 0; t < 20; ++t) {
      const int k = t % 3;
      History h(3);
      for (int l = 0; l < k; ++l) h = h.append(v2(standard_normal(rng), standard_normal(rng)), v1(standard_normal(rng)));
      const Vector d = v2(standard_normal(rng), standard_normal(rng));
      const Vector e = encode_q_input(k, h, d, spec);
      // Decode.
      int k_back = -1;
      for (int i = 0; i < 3; ++i) if (e[i] == 1.0) k_back = i;
      CHECK(k_back == k);
      for (int l = 0; l < k; ++l) {
        CHECK(e.segment(3 + 2 * l, 2) == h[l].design);
        CHECK(e[3 + 4 + l] == h[l].observation[0]);
      }
      CHECK(e.tail(2) == d);
      // A change to any single input changes the code.
      if (k > 0) {
        History h2(3);
        for (int l = 0; l < k; ++l) {
          Vector y = h[l].observation;
          if (l == k - 1) y[0] += 1e-9;
          h2 = h2.append(h[l].design, y);
        }
        CHECK(encode_q_input(k, h2, d, spec) != e);
      }
    }
  }

  TEST_CASE("batch encoding ignores the history") {
    const EncoderSpec spec{3, 1, 1, false, true};
    History a(3), b(3);
    a = a.append(v1(0.1), v1(5.0));
    b = b.append(v1(2.0), v1(-3.0));
    CHECK(encode_policy_input(1, a, spec) == encode_policy_input(1, b, spec));
  }

  TEST_CASE("forward pass by hand") {
    const Mlp net = tiny();
    // x = 1: hidden pre = (1, -0.5, 1), relu = (1, 0, 1); out = 1 - 0.5 + 0.25.
    CHECK(mlp_forward(net, v1(1.0))[0] == doctest::Approx(0.75));
    // x = -1: pre = (-1, 1.5, -3), relu = (0, 1.5, 0); out = 3 + 0.25.
    CHECK(mlp_forward(net, v1(-1.0))[0] == doctest::Approx(3.25));
    Eigen::MatrixXd batch(1, 2);
    batch << 1.0, -1.0;
    const Eigen::MatrixXd out = net.forward(batch);
    CHECK(out(0, 0) == doctest::Approx(0.75));
    CHECK(out(0, 1) == doctest::Approx(3.25));
  }

  TEST_CASE("zero network outputs zero") {
    const Mlp net = Mlp::zeros(make_arch(4, {80, 80}, 2));
    CHECK(mlp_forward(net, Vector::Ones(4)).isZero());
    CHECK(net.parameter_count() == 4 * 80 + 80 + 80 * 80 + 80 + 80 * 2 + 2);
  }

  TEST_CASE("initialization stays within the fan-in bound") {
    Rng rng = substream(2, "init");
    const Mlp net(make_arch(9, {20}, 3), rng);
    CHECK(net.weights[0].cwiseAbs().maxCoeff() <= 1.0 / 3.0);
    CHECK(net.weights[1].cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(20.0));
  }

  TEST_CASE("backward matches central differences") {
    Rng rng = substream(3, "fd");
    const Mlp net(make_arch(3, {7, 5}, 2), rng);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
    Eigen::MatrixXd up = Eigen::MatrixXd::Random(2, 4);
    const Backprop bp = mlp_grad(net, x, up);
    auto objective = [&](const Mlp& n, const Eigen::MatrixXd& in) { return (up.array() * n.forward(in).array()).sum(); };

    const Eigen::VectorXd flat = net.flatten();
    const Eigen::VectorXd g = bp.params.flatten();
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < flat.size(); i += 3) {
      Mlp p = net, m = net;
      Eigen::VectorXd fp = flat, fm = flat;
      fp[i] += h;
      fm[i] -= h;
      p.assign(fp);
      m.assign(fm);
      const double fd = (objective(p, x) - objective(m, x)) / (2 * h);
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Eigen::MatrixXd xp = x, xm = x;
        xp(r, c) += h;
        xm(r, c) -= h;
        const double fd = (objective(net, xp) - objective(net, xm)) / (2 * h);
        CHECK(bp.input(r, c) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
      }
    }
  }

  TEST_CASE("first Adam step moves each parameter by the learning rate") {
    Mlp net = tiny();
    const Mlp before = net;
    Gradients g = Gradients::zeros_like(net);
    g.weights[0] << 0.3, -2.0, 0.0;
    g.biases[1] << 5.0;
    adam_step(net, g, 0.01);
    CHECK(net.weights[0](0, 0) == doctest::Approx(before.weights[0](0, 0) - 0.01).epsilon(1e-6));
    CHECK(net.weights[0](1, 0) == doctest::Approx(before.weights[0](1, 0) + 0.01).epsilon(1e-6));
    CHECK(net.weights[0](2, 0) == before.weights[0](2, 0));
    CHECK(net.biases[1][0] == doctest::Approx(before.biases[1][0] - 0.01).epsilon(1e-6));
    CHECK(net.adam_steps == 1);

    Mlp up = before;
    adam_step(up, g, 0.01, Sense::maximize);
    CHECK(up.biases[1][0] == doctest::Approx(before.biases[1][0] + 0.01).epsilon(1e-6));
  }

  TEST_CASE("Adam reaches the minimum of a quadratic") {
    // Minimize (b - 3)^2 over the output bias alone.
    Mlp net = tiny();
    for (int i = 0; i < 3000; ++i) {
      Gradients g = Gradients::zeros_like(net);
      g.biases[1][0] = 2.0 * (net.biases[1][0] - 3.0);
      adam_step(net, g, 0.01);
    }
    CHECK(net.biases[1][0] == doctest::Approx(3.0).epsilon(1e-3));
  }

  TEST_CASE("SGD step") {
    Mlp net = tiny();
    Gradients g = Gradients::zeros_like(net);
    g.weights[1] << 1.0, -1.0, 0.5;
    sgd_step(net, g, 0.1);
    CHECK(net.weights[1](0, 0) == doctest::Approx(0.9));
    CHECK(net.weights[1](0, 1) == doctest::Approx(2.1));
    sgd_step(net, g, 0.1, Sense::maximize);
    CHECK(net.weights[1](0, 2) == doctest::Approx(-0.5));
  }

  TEST_CASE("optimizers refuse non-finite gradients") {
    Mlp net = tiny();
    const Mlp before = net;
    Gradients g = Gradients::zeros_like(net);
    g.biases[0][1] = std::nan("");
    CHECK_THROWS_AS(adam_step(net, g, 0.01), NonFiniteGradient);
    CHECK(net.flatten() == before.flatten());
  }

  TEST_CASE("checkpoint round trip is exact") {
    Rng rng = substream(4, "ckpt");
    Checkpoint c{"policy", Mlp(make_arch(13, {80, 80}, 2), rng), EncoderSpec{4, 2, 1, false, false}};
    const auto path = temp_file("policy.json");
    save_checkpoint(path, c);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.role == "policy");
    CHECK(back.encoder == c.encoder);
    CHECK(back.net.arch() == c.net.arch());
    CHECK(back.net.flatten() == c.net.flatten());
    const Vector x = Vector::Random(13);
    CHECK(mlp_forward(back.net, x) == mlp_forward(c.net, x));
  }

  TEST_CASE("unreadable or foreign checkpoints are rejected") {
    const auto path = temp_file("bad.json");
    {
      std::ofstream(path) << "{\"format\": \"something-else\"}";
    }
    CHECK_THROWS_AS(load_checkpoint(path), ArchMismatch);
    {
      std::ofstream(path) << "{not json";
    }
    CHECK_THROWS_AS(load_checkpoint(path), ConfigError);
    CHECK_THROWS_AS(load_checkpoint(temp_file("missing.json")), ConfigError);
  }
}
