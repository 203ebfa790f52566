#pragma once

#include <filesystem>
#include <vector>

#include "seqoed/nnet.hpp"

namespace seqoed::models {

class SourceInversionModel;

/// One regression network per experiment time mapping (z_x, z_y, theta) to
/// the concentration G(z, t_k; theta). Inputs and output are affinely
/// rescaled around each network.
class SurrogateModel {
 public:
  struct Scaling {
    Vector in_offset;
    Vector in_scale;  // normalized input = (x - offset) * scale
    double out_offset = 0.0;
    double out_scale = 1.0;  // G = out_offset + out_scale * net output
  };

  SurrogateModel() = default;
  SurrogateModel(std::vector<nnet::Mlp> nets, std::vector<Scaling> scaling);

  int stages() const { return static_cast<int>(nets_.size()); }
  int input_dim() const { return nets_.empty() ? 0 : nets_.front().input_size(); }
  const std::vector<nnet::Mlp>& nets() const { return nets_; }
  const std::vector<Scaling>& scaling() const { return scaling_; }

  double predict(int stage, const Vector& position, const Vector& theta) const;
  /// Raw inputs, one column per query: (z_x, z_y, theta...).
  Eigen::VectorXd predict_batch(int stage, const Eigen::MatrixXd& inputs) const;

  /// JSON: { "format": "seqoed-surrogate", "version": 1, "stages": [ {scaling, net}, ... ] }
  void save(const std::filesystem::path& path) const;
  static SurrogateModel load(const std::filesystem::path& path);

 private:
  std::vector<nnet::Mlp> nets_;
  std::vector<Scaling> scaling_;
};

/// Samples (z, theta) -> G for every experiment time.
struct SurrogateDataset {
  Eigen::MatrixXd inputs;              // (2 + theta_dim) x samples
  std::vector<Eigen::VectorXd> values;  // one per stage, length samples
  std::vector<int> theta_index;        // which prior draw produced each sample

  Eigen::Index size() const { return inputs.cols(); }
};

/// Draws n_theta parameters from the prior, solves the PDE once for each and
/// reads the fields at `positions_per_theta` uniform points of the region the
/// sensor can reach.
SurrogateDataset make_surrogate_dataset(const SourceInversionModel& fv, int n_theta,
                                        int positions_per_theta, Rng& rng, int threads = 0);

/// CSV columns: z_x, z_y, theta_0.., t_index, G (one row per sample and stage).
void write_surrogate_dataset_csv(const std::filesystem::path& path, const SurrogateDataset& data);

struct SurrogateTrainOptions {
  int n_theta_samples = 2000;
  int positions_per_theta = 50;
  std::vector<int> hidden{40, 80, 40, 20, 10};
  double test_fraction = 0.2;
  int epochs = 300;
  int batch_size = 128;
  double learning_rate = 2e-3;
  double final_learning_rate = 5e-5;  // cosine decay target
};

struct SurrogateReport {
  std::vector<double> train_mse;  // per stage, in concentration units
  std::vector<double> test_mse;
  int train_samples = 0;
  int test_samples = 0;
};

struct SurrogateFit {
  SurrogateModel model;
  SurrogateReport report;
  SurrogateDataset dataset;
};

/// Builds a dataset from the finite-volume model, splits it by prior draw
/// into train/test and fits one network per stage with Adam.
/// Throws ConfigError when n_theta_samples < 1.
SurrogateFit train_surrogate(const SourceInversionModel& fv, const SurrogateTrainOptions& options,
                             Rng& rng, int threads = 0);

}  // namespace seqoed::models
