#pragma once

#include <string>
#include <vector>

#include "ksoftmax/config.hpp"
#include "ksoftmax/data.hpp"
#include "ksoftmax/encoder.hpp"
#include "ksoftmax/output_layer.hpp"

namespace ksoftmax {

/// Encoder plus output layer. Gradients and optimizer slots use the same type.
struct Model {
  EncoderParams encoder;
  OutputParams output;

  Model zeros_like() const;
};

/// Named, non-owning view of one parameter tensor (column-major storage).
struct TensorView {
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
};

struct ConstTensorView {
  std::string name;
  const double* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
};

/// Every non-empty tensor in a fixed order: encoder.E, encoder.F,
/// encoder.bias, output.W, output.word_log_vars, output.M, output.C1..CK,
/// output.component_log_vars.
std::vector<TensorView> tensors(Model& model);
std::vector<ConstTensorView> tensors(const Model& model);

Model init_model(const TrainConfig& config, Rng& rng);

struct BatchLoss {
  LossValue output;
  Matrix H;
};

BatchLoss forward(const TrainConfig& config, const Model& model, const Batch& batch);

/// Gradient of the batch loss with respect to every parameter.
Model gradients(const TrainConfig& config, const Model& model, const Batch& batch,
                const BatchLoss& fwd);

bool all_finite(const Model& model);

}  // namespace ksoftmax
