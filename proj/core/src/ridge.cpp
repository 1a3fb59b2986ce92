#include "qeforge/ridge.hpp"

#include <fmt/format.h>

#include "qeforge/error.hpp"

namespace qeforge::ensemble {

namespace {

nlohmann::json to_array(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vector from_array(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

nlohmann::json RidgeModel::to_json() const {
  return {{"kind", "ridge"},          {"weights", to_array(weights)}, {"intercept", intercept},
          {"alpha", alpha},           {"means", to_array(means)},     {"scales", to_array(scales)}};
}

RidgeModel RidgeModel::from_json(const nlohmann::json& j) {
  RidgeModel m;
  m.weights = from_array(j.at("weights"));
  m.intercept = j.at("intercept").get<double>();
  m.alpha = j.at("alpha").get<double>();
  m.means = from_array(j.at("means"));
  m.scales = j.contains("scales") ? from_array(j.at("scales")) : Vector::Ones(m.weights.size());
  if (m.means.size() != m.weights.size() || m.scales.size() != m.weights.size())
    throw ConfigError("ridge model: weights, means and scales differ in length");
  return m;
}

RidgeModel ridge_fit(const Tensor2& x, const Vector& y, double alpha) {
  if (x.rows() < 2) throw ConfigError("ridge_fit: need at least two rows");
  if (x.rows() != y.size()) throw ShapeError("ridge_fit: feature and target row counts differ");
  if (!(alpha >= 0.0)) throw ConfigError("ridge_fit: alpha must be >= 0");

  RidgeModel m;
  m.alpha = alpha;
  m.means = x.colwise().mean().transpose();
  m.scales = Vector::Ones(x.cols());
  m.intercept = y.mean();
  const Eigen::MatrixXd xc = x.rowwise() - m.means.transpose();
  const Vector yc = y.array() - m.intercept;

  Eigen::MatrixXd a = xc.transpose() * xc;
  a.diagonal().array() += alpha;
  const Vector b = xc.transpose() * yc;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible())
    throw NumericError(fmt::format(
        "ridge_fit: normal equations are singular at alpha={} (rank {} of {}); use alpha > 0",
        alpha, lu.rank(), a.rows()));
  m.weights = lu.solve(b);
  return m;
}

Vector ridge_predict(const RidgeModel& model, const Tensor2& x) {
  if (x.cols() != model.weights.size())
    throw ShapeError(fmt::format("ridge_predict: {} features but the model has {}", x.cols(),
                                 model.weights.size()));
  const Eigen::MatrixXd xc =
      (x.rowwise() - model.means.transpose()).array().rowwise() / model.scales.transpose().array();
  return (xc * model.weights).array() + model.intercept;
}

}  // namespace qeforge::ensemble
