#include "seqoed/nnet.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mlp_json.hpp"

namespace seqoed::nnet {

using Json = nlohmann::json;

void Arch::validate() const {
  if (layer_sizes.size() < 3) throw ShapeMismatch("Arch: need input, >= 1 hidden and output layer");
  for (int s : layer_sizes) {
    if (s < 1) throw ShapeMismatch("Arch: layer sizes must be >= 1");
  }
}

Arch make_arch(int input, const std::vector<int>& hidden, int output) {
  Arch a;
  a.layer_sizes.push_back(input);
  a.layer_sizes.insert(a.layer_sizes.end(), hidden.begin(), hidden.end());
  a.layer_sizes.push_back(output);
  a.validate();
  return a;
}

Gradients Gradients::zeros_like(const Mlp& net) {
  Gradients g;
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto& w = net.weights[static_cast<std::size_t>(l)];
    g.weights.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(w.rows()));
  }
  return g;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weights) s += w.squaredNorm();
  for (const auto& b : biases) s += b.squaredNorm();
  return s;
}

bool Gradients::all_finite() const {
  for (const auto& w : weights) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : biases) {
    if (!b.allFinite()) return false;
  }
  return true;
}

Eigen::VectorXd Gradients::flatten() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  Eigen::VectorXd out(n);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.segment(at, weights[l].size()) = weights[l].reshaped();
    at += weights[l].size();
    out.segment(at, biases[l].size()) = biases[l];
    at += biases[l].size();
  }
  return out;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.weights.size() != weights.size()) throw ShapeMismatch("Gradients: layer count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (auto& w : weights) w *= s;
  for (auto& b : biases) b *= s;
  return *this;
}

Mlp::Mlp(Arch arch, Rng& rng) : arch_(std::move(arch)) {
  arch_.validate();
  for (int l = 0; l < arch_.num_layers(); ++l) {
    const int fan_in = arch_.layer_sizes[static_cast<std::size_t>(l)];
    const int fan_out = arch_.layer_sizes[static_cast<std::size_t>(l) + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    }
    Eigen::VectorXd b(fan_out);
    for (Eigen::Index r = 0; r < b.size(); ++r) b[r] = u(rng);
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
  reset_optimizer();
}

Mlp Mlp::zeros(Arch arch) {
  Mlp net;
  arch.validate();
  net.arch_ = std::move(arch);
  for (int l = 0; l < net.arch_.num_layers(); ++l) {
    const int fan_in = net.arch_.layer_sizes[static_cast<std::size_t>(l)];
    const int fan_out = net.arch_.layer_sizes[static_cast<std::size_t>(l) + 1];
    net.weights.push_back(Eigen::MatrixXd::Zero(fan_out, fan_in));
    net.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  net.reset_optimizer();
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

void Mlp::reset_optimizer() {
  m_weights.clear();
  v_weights.clear();
  m_biases.clear();
  v_biases.clear();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    m_weights.push_back(Eigen::MatrixXd::Zero(weights[l].rows(), weights[l].cols()));
    v_weights.push_back(Eigen::MatrixXd::Zero(weights[l].rows(), weights[l].cols()));
    m_biases.push_back(Eigen::VectorXd::Zero(biases[l].size()));
    v_biases.push_back(Eigen::VectorXd::Zero(biases[l].size()));
  }
  adam_steps = 0;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != input_size()) {
    throw ShapeMismatch("Mlp::forward: expected input size " + std::to_string(input_size()) +
                        ", got " + std::to_string(inputs.rows()));
  }
  Eigen::MatrixXd a = inputs;
  for (int l = 0; l < num_layers(); ++l) {
    const auto i = static_cast<std::size_t>(l);
    Eigen::MatrixXd z = weights[i] * a;
    z.colwise() += biases[i];
    if (l + 1 < num_layers()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Vector Mlp::forward(const Vector& input) const {
  return forward(Eigen::MatrixXd(input)).col(0);
}

Eigen::VectorXd Mlp::flatten() const {
  Gradients view{weights, biases};
  return view.flatten();
}

void Mlp::assign(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw ShapeMismatch("Mlp::assign: parameter count mismatch");
  }
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l].reshaped() = flat.segment(at, weights[l].size());
    at += weights[l].size();
    biases[l] = flat.segment(at, biases[l].size());
    at += biases[l].size();
  }
}

ForwardPass forward_pass(const Mlp& net, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != net.input_size()) throw ShapeMismatch("forward_pass: input size mismatch");
  ForwardPass pass;
  pass.activations.reserve(static_cast<std::size_t>(net.num_layers()) + 1);
  pass.activations.push_back(inputs);
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto i = static_cast<std::size_t>(l);
    Eigen::MatrixXd z = net.weights[i] * pass.activations.back();
    z.colwise() += net.biases[i];
    if (l + 1 < net.num_layers()) z = z.cwiseMax(0.0);
    pass.activations.push_back(std::move(z));
  }
  return pass;
}

Backprop backward(const Mlp& net, const ForwardPass& pass, const Eigen::MatrixXd& upstream) {
  const auto& out = pass.output();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw ShapeMismatch("backward: upstream shape does not match network output");
  }
  Backprop result;
  const auto layers = static_cast<std::size_t>(net.num_layers());
  result.params.weights.resize(layers);
  result.params.biases.resize(layers);
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = layers; l-- > 0;) {
    const auto& a_in = pass.activations[l];
    result.params.weights[l].noalias() = delta * a_in.transpose();
    result.params.biases[l] = delta.rowwise().sum();
    Eigen::MatrixXd prev = net.weights[l].transpose() * delta;
    if (l > 0) prev = (a_in.array() > 0.0).select(prev, 0.0);
    delta = std::move(prev);
  }
  result.input = std::move(delta);
  return result;
}

Vector mlp_forward(const Mlp& net, const Vector& x) { return net.forward(x); }

Backprop mlp_grad(const Mlp& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& upstream) {
  return backward(net, forward_pass(net, inputs), upstream);
}

namespace {

void check_shapes(const Mlp& net, const Gradients& g) {
  if (g.weights.size() != net.weights.size() || g.biases.size() != net.biases.size()) {
    throw ShapeMismatch("optimizer: gradient layer count mismatch");
  }
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    if (g.weights[l].rows() != net.weights[l].rows() || g.weights[l].cols() != net.weights[l].cols() ||
        g.biases[l].size() != net.biases[l].size()) {
      throw ShapeMismatch("optimizer: gradient shape mismatch");
    }
  }
  if (!g.all_finite()) throw NonFiniteGradient("optimizer: gradient has non-finite entries");
}

}  // namespace

void adam_step(Mlp& net, const Gradients& grads, double lr, Sense sense, const AdamConfig& c) {
  check_shapes(net, grads);
  if (net.m_weights.size() != net.weights.size()) net.reset_optimizer();
  ++net.adam_steps;
  const double t = static_cast<double>(net.adam_steps);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  const double sign = sense == Sense::minimize ? -1.0 : 1.0;
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() += sign * lr * (m.array() / correct1) / ((v.array() / correct2).sqrt() + c.epsilon);
  };
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    update(net.weights[l], net.m_weights[l], net.v_weights[l], grads.weights[l]);
    update(net.biases[l], net.m_biases[l], net.v_biases[l], grads.biases[l]);
  }
}

void sgd_step(Mlp& net, const Gradients& grads, double lr, Sense sense) {
  check_shapes(net, grads);
  const double step = sense == Sense::minimize ? -lr : lr;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    net.weights[l] += step * grads.weights[l];
    net.biases[l] += step * grads.biases[l];
  }
}

int EncoderSpec::history_length() const {
  return batch_mode ? 0 : (horizon - 1) * (design_dim + obs_dim);
}

int EncoderSpec::length() const {
  return horizon + history_length() + (include_design ? design_dim : 0);
}

void encode_into(int k, const History& history, const Vector* design, const EncoderSpec& spec,
                 Eigen::Ref<Eigen::VectorXd> out) {
  if (k < 0 || k >= spec.horizon) {
    throw LengthMismatch("encode: stage " + std::to_string(k) + " outside [0, N-1]");
  }
  if (history.size() != k) {
    throw LengthMismatch("encode: history holds " + std::to_string(history.size()) +
                         " stages, expected " + std::to_string(k));
  }
  if (out.size() != spec.length()) throw LengthMismatch("encode: output has wrong length");
  if (spec.include_design != (design != nullptr)) {
    throw LengthMismatch("encode: design presence does not match encoder");
  }
  out.setZero();
  out[k] = 1.0;
  if (!spec.batch_mode) {
    const int d_block = spec.horizon;
    const int y_block = spec.horizon + (spec.horizon - 1) * spec.design_dim;
    for (int l = 0; l < k; ++l) {
      const auto& st = history[l];
      if (st.design.size() != spec.design_dim || st.observation.size() != spec.obs_dim) {
        throw LengthMismatch("encode: stage dimensions do not match encoder");
      }
      out.segment(d_block + l * spec.design_dim, spec.design_dim) = st.design;
      out.segment(y_block + l * spec.obs_dim, spec.obs_dim) = st.observation;
    }
  }
  if (design) {
    if (design->size() != spec.design_dim) throw LengthMismatch("encode: design has wrong length");
    out.tail(spec.design_dim) = *design;
  }
}

Vector encode_policy_input(int k, const History& history, const EncoderSpec& spec) {
  EncoderSpec s = spec;
  s.include_design = false;
  Vector out(s.length());
  encode_into(k, history, nullptr, s, out);
  return out;
}

Vector encode_q_input(int k, const History& history, const Vector& design, const EncoderSpec& spec) {
  EncoderSpec s = spec;
  s.include_design = true;
  Vector out(s.length());
  encode_into(k, history, &design, s, out);
  return out;
}

namespace detail {

Json mlp_to_json(const Mlp& net) {
  Json j;
  j["layer_sizes"] = net.arch().layer_sizes;
  Json ws = Json::array(), bs = Json::array();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto& w = net.weights[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    ws.push_back(flat);
    bs.push_back(std::vector<double>(net.biases[l].data(), net.biases[l].data() + net.biases[l].size()));
  }
  j["weights"] = std::move(ws);
  j["biases"] = std::move(bs);
  return j;
}

Mlp mlp_from_json(const Json& j) {
  Arch arch{j.at("layer_sizes").get<std::vector<int>>()};
  Mlp net = Mlp::zeros(arch);
  const auto& ws = j.at("weights");
  const auto& bs = j.at("biases");
  if (ws.size() != net.weights.size() || bs.size() != net.biases.size()) {
    throw ArchMismatch("layer count does not match layer_sizes");
  }
  for (std::size_t l = 0; l < ws.size(); ++l) {
    auto flat = ws[l].get<std::vector<double>>();
    auto& w = net.weights[l];
    if (flat.size() != static_cast<std::size_t>(w.size())) throw ArchMismatch("weight size mismatch");
    std::size_t at = 0;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[at++];
    }
    auto b = bs[l].get<std::vector<double>>();
    if (b.size() != static_cast<std::size_t>(net.biases[l].size())) throw ArchMismatch("bias size mismatch");
    net.biases[l] = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  }
  return net;
}

}  // namespace detail

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
  Json j = detail::mlp_to_json(cp.net);
  j["format"] = "seqoed-mlp";
  j["version"] = kCheckpointVersion;
  j["role"] = cp.role;
  j["activation"] = "relu";
  j["encoder"] = {{"horizon", cp.encoder.horizon},
                  {"design_dim", cp.encoder.design_dim},
                  {"obs_dim", cp.encoder.obs_dim},
                  {"include_design", cp.encoder.include_design},
                  {"batch_mode", cp.encoder.batch_mode}};
  std::ofstream os(path);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os << j.dump() << '\n';
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read checkpoint " + path.string());
  Json j;
  try {
    is >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (j.at("format") != "seqoed-mlp") throw ArchMismatch("not a seqoed-mlp checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ArchMismatch("unsupported checkpoint version");
    }
    Checkpoint cp;
    cp.role = j.value("role", "");
    cp.net = detail::mlp_from_json(j);
    const auto& e = j.at("encoder");
    cp.encoder.horizon = e.at("horizon");
    cp.encoder.design_dim = e.at("design_dim");
    cp.encoder.obs_dim = e.at("obs_dim");
    cp.encoder.include_design = e.at("include_design");
    cp.encoder.batch_mode = e.at("batch_mode");
    if (cp.encoder.length() != cp.net.input_size()) {
      throw ArchMismatch("checkpoint encoder length does not match network input");
    }
    return cp;
  } catch (const Json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace seqoed::nnet
