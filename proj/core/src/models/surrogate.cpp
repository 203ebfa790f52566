#include "seqoed/models/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "mlp_json.hpp"
#include "seqoed/inference.hpp"
#include "seqoed/models/source_inversion.hpp"
#include "seqoed/parallel.hpp"

namespace seqoed::models {

using nnet::detail::Json;

SurrogateModel::SurrogateModel(std::vector<nnet::Mlp> nets, std::vector<Scaling> scaling)
    : nets_(std::move(nets)), scaling_(std::move(scaling)) {
  if (nets_.size() != scaling_.size()) throw ShapeMismatch("surrogate: one scaling per network");
  for (std::size_t k = 0; k < nets_.size(); ++k) {
    if (nets_[k].output_size() != 1 || nets_[k].input_size() != nets_.front().input_size() ||
        scaling_[k].in_offset.size() != nets_[k].input_size() ||
        scaling_[k].in_scale.size() != nets_[k].input_size()) {
      throw ArchMismatch("surrogate networks have inconsistent shapes");
    }
  }
}

Eigen::VectorXd SurrogateModel::predict_batch(int stage, const Eigen::MatrixXd& inputs) const {
  if (stage < 0 || stage >= stages()) throw HorizonExceeded("surrogate: no network for this stage");
  const auto& s = scaling_[static_cast<std::size_t>(stage)];
  if (inputs.rows() != s.in_offset.size()) throw ShapeMismatch("surrogate: input dimension");
  const Eigen::MatrixXd x = (inputs.colwise() - s.in_offset).array().colwise() * s.in_scale.array();
  const Eigen::MatrixXd out = nets_[static_cast<std::size_t>(stage)].forward(x);
  return (s.out_offset + s.out_scale * out.row(0).array()).matrix().transpose();
}

double SurrogateModel::predict(int stage, const Vector& position, const Vector& theta) const {
  Eigen::MatrixXd x(position.size() + theta.size(), 1);
  x.col(0) << position, theta;
  return predict_batch(stage, x)[0];
}

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void SurrogateModel::save(const std::filesystem::path& path) const {
  Json j;
  j["format"] = "seqoed-surrogate";
  j["version"] = 1;
  Json stages = Json::array();
  for (std::size_t k = 0; k < nets_.size(); ++k) {
    const auto& s = scaling_[k];
    stages.push_back({{"in_offset", to_std(s.in_offset)},
                      {"in_scale", to_std(s.in_scale)},
                      {"out_offset", s.out_offset},
                      {"out_scale", s.out_scale},
                      {"net", nnet::detail::mlp_to_json(nets_[k])}});
  }
  j["stages"] = std::move(stages);
  std::ofstream os(path);
  if (!os) throw Error("cannot write surrogate " + path.string());
  os << j.dump() << '\n';
}

SurrogateModel SurrogateModel::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read surrogate " + path.string());
  try {
    Json j;
    is >> j;
    if (j.at("format") != "seqoed-surrogate" || j.at("version").get<int>() != 1) {
      throw ArchMismatch("not a version-1 seqoed surrogate: " + path.string());
    }
    std::vector<nnet::Mlp> nets;
    std::vector<Scaling> scaling;
    for (const auto& s : j.at("stages")) {
      Scaling sc;
      sc.in_offset = from_std(s.at("in_offset").get<std::vector<double>>());
      sc.in_scale = from_std(s.at("in_scale").get<std::vector<double>>());
      sc.out_offset = s.at("out_offset").get<double>();
      sc.out_scale = s.at("out_scale").get<double>();
      scaling.push_back(std::move(sc));
      nets.push_back(nnet::detail::mlp_from_json(s.at("net")));
    }
    return SurrogateModel(std::move(nets), std::move(scaling));
  } catch (const Json::exception& e) {
    throw ConfigError("surrogate " + path.string() + ": " + e.what());
  }
}

SurrogateDataset make_surrogate_dataset(const SourceInversionModel& fv, int n_theta,
                                        int positions_per_theta, Rng& rng, int threads) {
  if (n_theta < 1) throw ConfigError("surrogate dataset needs at least one parameter sample");
  if (positions_per_theta < 1) throw ConfigError("surrogate dataset needs at least one position per sample");
  const auto& cfg = fv.config();
  const auto prior = cfg.prior();
  const int p = cfg.theta_dim();
  const Box region = cfg.sensor_region();
  const Eigen::Index total = static_cast<Eigen::Index>(n_theta) * positions_per_theta;

  SurrogateDataset data;
  data.inputs.resize(2 + p, total);
  data.values.assign(static_cast<std::size_t>(cfg.horizon), Eigen::VectorXd(total));
  data.theta_index.resize(static_cast<std::size_t>(total));
  // Draw everything serially so the dataset does not depend on the thread count.
  std::vector<Vector> thetas;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int s = 0; s < n_theta; ++s) {
    thetas.push_back(inference::sample_prior(prior, rng));
    for (int q = 0; q < positions_per_theta; ++q) {
      const Eigen::Index col = static_cast<Eigen::Index>(s) * positions_per_theta + q;
      for (int a = 0; a < 2; ++a) {
        data.inputs(a, col) = region.lo[a] + (region.hi[a] - region.lo[a]) * unit(rng);
      }
      data.inputs.col(col).tail(p) = thetas.back();
      data.theta_index[static_cast<std::size_t>(col)] = s;
    }
  }
  parallel_for(static_cast<std::size_t>(n_theta), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) {
      const auto fields = fv.solve_fields(thetas[s]);
      for (int q = 0; q < positions_per_theta; ++q) {
        const Eigen::Index col = static_cast<Eigen::Index>(s) * positions_per_theta + q;
        for (std::size_t k = 0; k < fields.size(); ++k) {
          data.values[k][col] = fields[k].at(data.inputs(0, col), data.inputs(1, col));
        }
      }
    }
  });
  return data;
}

void write_surrogate_dataset_csv(const std::filesystem::path& path, const SurrogateDataset& data) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write dataset " + path.string());
  os.precision(17);
  const Eigen::Index p = data.inputs.rows() - 2;
  os << "z_x,z_y";
  for (Eigen::Index j = 0; j < p; ++j) os << ",theta_" << j;
  os << ",t_index,G\n";
  for (Eigen::Index c = 0; c < data.size(); ++c) {
    for (std::size_t k = 0; k < data.values.size(); ++k) {
      for (Eigen::Index r = 0; r < data.inputs.rows(); ++r) os << (r ? "," : "") << data.inputs(r, c);
      os << ',' << k << ',' << data.values[k][c] << '\n';
    }
  }
}

namespace {

double mse(const nnet::Mlp& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double out_scale) {
  if (x.cols() == 0) return 0.0;
  const Eigen::VectorXd pred = net.forward(x).row(0).transpose();
  return (pred - y).squaredNorm() / static_cast<double>(x.cols()) * out_scale * out_scale;
}

}  // namespace

SurrogateFit train_surrogate(const SourceInversionModel& fv, const SurrogateTrainOptions& opt, Rng& rng,
                             int threads) {
  if (opt.n_theta_samples < 1) throw ConfigError("n_theta_samples must be >= 1");
  if (opt.epochs < 0 || opt.batch_size < 1) throw ConfigError("surrogate epochs/batch size invalid");
  if (!(opt.test_fraction >= 0.0 && opt.test_fraction < 1.0)) throw ConfigError("test_fraction must lie in [0, 1)");
  SurrogateFit fit;
  fit.dataset = make_surrogate_dataset(fv, opt.n_theta_samples, opt.positions_per_theta, rng, threads);
  const auto& data = fit.dataset;
  const auto& cfg = fv.config();
  const int in_dim = static_cast<int>(data.inputs.rows());

  // Split by parameter draw so test positions never share a plume with training ones.
  const int n_test_theta = static_cast<int>(std::floor(opt.test_fraction * opt.n_theta_samples));
  std::vector<Eigen::Index> train_cols, test_cols;
  for (Eigen::Index c = 0; c < data.size(); ++c) {
    (data.theta_index[static_cast<std::size_t>(c)] >= opt.n_theta_samples - n_test_theta ? test_cols : train_cols)
        .push_back(c);
  }
  if (train_cols.empty()) throw ConfigError("surrogate training split is empty");
  fit.report.train_samples = static_cast<int>(train_cols.size());
  fit.report.test_samples = static_cast<int>(test_cols.size());

  SurrogateModel::Scaling base;
  const Box region = cfg.sensor_region();
  const auto prior = cfg.prior();
  base.in_offset.resize(in_dim);
  base.in_scale.resize(in_dim);
  for (int a = 0; a < in_dim; ++a) {
    double lo, hi;
    if (a < 2) {
      lo = region.lo[a];
      hi = region.hi[a];
    } else {
      const auto& pd = prior[static_cast<std::size_t>(a - 2)];
      lo = pd.kind == PriorDim::Kind::uniform ? pd.a : pd.a - 3 * pd.b;
      hi = pd.kind == PriorDim::Kind::uniform ? pd.b : pd.a + 3 * pd.b;
    }
    base.in_offset[a] = 0.5 * (lo + hi);
    base.in_scale[a] = hi > lo ? 2.0 / (hi - lo) : 1.0;
  }
  auto gather = [&](const std::vector<Eigen::Index>& cols, Eigen::MatrixXd& x) {
    x.resize(in_dim, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = data.inputs.col(cols[i]);
    x = (x.colwise() - base.in_offset).array().colwise() * base.in_scale.array();
  };
  Eigen::MatrixXd x_train, x_test;
  gather(train_cols, x_train);
  gather(test_cols, x_test);

  std::vector<nnet::Mlp> nets;
  std::vector<SurrogateModel::Scaling> scalings;
  const auto arch = nnet::make_arch(in_dim, opt.hidden, 1);
  const Eigen::Index n_train = x_train.cols();
  const Eigen::Index batch = std::min<Eigen::Index>(opt.batch_size, n_train);
  const long steps_per_epoch = static_cast<long>((n_train + batch - 1) / batch);
  const long total_steps = steps_per_epoch * opt.epochs;

  for (int k = 0; k < cfg.horizon; ++k) {
    const auto& v = data.values[static_cast<std::size_t>(k)];
    Eigen::VectorXd y_train(n_train), y_test(static_cast<Eigen::Index>(test_cols.size()));
    for (Eigen::Index i = 0; i < n_train; ++i) y_train[i] = v[train_cols[static_cast<std::size_t>(i)]];
    for (Eigen::Index i = 0; i < y_test.size(); ++i) y_test[i] = v[test_cols[static_cast<std::size_t>(i)]];
    SurrogateModel::Scaling sc = base;
    const double mean = y_train.mean();
    const double sd = std::sqrt((y_train.array() - mean).square().mean());
    if (sd > 1e-14) {
      sc.out_offset = mean;
      sc.out_scale = sd;
    }
    const Eigen::VectorXd t_train = (y_train.array() - sc.out_offset) / sc.out_scale;
    const Eigen::VectorXd t_test = (y_test.array() - sc.out_offset) / sc.out_scale;

    nnet::Mlp net(arch, rng);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    Eigen::MatrixXd xb(in_dim, batch);
    Eigen::MatrixXd tb(1, batch);
    long step = 0;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index start = 0; start < n_train; start += batch) {
        const Eigen::Index len = std::min(batch, n_train - start);
        xb.resize(in_dim, len);
        tb.resize(1, len);
        for (Eigen::Index i = 0; i < len; ++i) {
          const Eigen::Index c = order[static_cast<std::size_t>(start + i)];
          xb.col(i) = x_train.col(c);
          tb(0, i) = t_train[c];
        }
        const auto pass = nnet::forward_pass(net, xb);
        const Eigen::MatrixXd upstream = 2.0 / static_cast<double>(len) * (pass.output() - tb);
        const auto bp = nnet::backward(net, pass, upstream);
        const double frac = total_steps > 1 ? static_cast<double>(step) / static_cast<double>(total_steps - 1) : 1.0;
        const double lr = opt.final_learning_rate +
                          0.5 * (opt.learning_rate - opt.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * frac));
        nnet::adam_step(net, bp.params, lr);
        ++step;
      }
    }
    fit.report.train_mse.push_back(mse(net, x_train, t_train, sc.out_scale));
    fit.report.test_mse.push_back(mse(net, x_test, t_test, sc.out_scale));
    net.reset_optimizer();
    nets.push_back(std::move(net));
    scalings.push_back(sc);
  }
  fit.model = SurrogateModel(std::move(nets), std::move(scalings));
  return fit;
}

}  // namespace seqoed::models
