#include "ksoftmax/model.hpp"

#include "ksoftmax/error.hpp"

namespace ksoftmax {
namespace {

template <typename ModelT, typename View>
std::vector<View> collect(ModelT& model) {
  std::vector<View> out;
  auto add = [&](const std::string& name, auto& m) {
    if (m.size() > 0) out.push_back(View{name, m.data(), m.rows(), m.cols()});
  };
  add("encoder.E", model.encoder.E);
  add("encoder.F", model.encoder.F);
  add("encoder.bias", model.encoder.bias);
  add("output.W", model.output.W);
  add("output.word_log_vars", model.output.word_log_vars);
  add("output.M", model.output.M);
  for (std::size_t k = 0; k < model.output.C.size(); ++k) {
    add("output.C" + std::to_string(k + 1), model.output.C[k]);
  }
  add("output.component_log_vars", model.output.component_log_vars);
  return out;
}

}  // namespace

Model Model::zeros_like() const { return Model{encoder.zeros_like(), output.zeros_like()}; }

std::vector<TensorView> tensors(Model& model) { return collect<Model, TensorView>(model); }

std::vector<ConstTensorView> tensors(const Model& model) {
  return collect<const Model, ConstTensorView>(model);
}

Model init_model(const TrainConfig& config, Rng& rng) {
  config.validate();
  Model m;
  m.encoder = init_encoder_params(config.mixture.V, config.n, config.d_e, config.d(), rng);
  m.output = init_output_params(config.mixture, rng);
  return m;
}

BatchLoss forward(const TrainConfig& config, const Model& model, const Batch& batch) {
  BatchLoss out;
  out.H = encode(model.encoder, batch.windows);
  out.output = loss(config.mixture, model.output, out.H, batch.targets);
  return out;
}

Model gradients(const TrainConfig& config, const Model& model, const Batch& batch,
                const BatchLoss& fwd) {
  OutputGrads og = backward(config.mixture, model.output, fwd.output.cache, batch.targets);
  Model g;
  g.output = std::move(og.d_params);
  g.encoder = model.encoder.zeros_like();
  encode_backward(model.encoder, batch.windows, fwd.H, og.d_H, g.encoder);
  return g;
}

bool all_finite(const Model& model) {
  for (const auto& t : tensors(model)) {
    if (!Eigen::Map<const Vector>(t.data, t.size()).allFinite()) return false;
  }
  return true;
}

}  // namespace ksoftmax
