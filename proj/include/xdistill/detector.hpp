#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "xdistill/anchors.hpp"
#include "xdistill/cld.hpp"
#include "xdistill/scene.hpp"

namespace xdistill {

/// Classification and regression head outputs over every anchor of a grid.
struct ModelOutputs {
  LogitMap logits;
  std::vector<BoxDelta> deltas;
};

/// Gradient of a scalar loss with respect to ModelOutputs.
struct OutputGrad {
  std::vector<double> d_logits;                 // num_anchors * K_c
  std::vector<std::array<double, 7>> d_deltas;  // num_anchors

  OutputGrad() = default;
  OutputGrad(std::size_t anchors, std::size_t k_c) : d_logits(anchors * k_c, 0.0), d_deltas(anchors) {}
  OutputGrad& operator+=(const OutputGrad& other);
};

/// Linear classification and regression heads shared by every position.
/// Parameters live in one flat vector: [W_cls | b_cls | W_reg | b_reg], with
/// W stored feature-major (row i holds the weights of feature i).
class DetectorParams {
 public:
  DetectorParams() = default;
  DetectorParams(std::size_t feature_dim, std::size_t k_a, std::size_t k_c);

  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t anchors_per_position() const { return k_a_; }
  std::size_t num_classes() const { return k_c_; }
  std::size_t cls_outputs() const { return k_a_ * k_c_; }
  std::size_t reg_outputs() const { return k_a_ * 7; }
  std::size_t size() const { return data_.size(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::size_t w_cls_index(std::size_t feature, std::size_t out) const { return feature * cls_outputs() + out; }
  std::size_t b_cls_index(std::size_t out) const { return feature_dim_ * cls_outputs() + out; }
  std::size_t w_reg_index(std::size_t feature, std::size_t out) const {
    return reg_offset() + feature * reg_outputs() + out;
  }
  std::size_t b_reg_index(std::size_t out) const { return reg_offset() + feature_dim_ * reg_outputs() + out; }

  /// Small Gaussian weights, zero regression bias and a prior-probability
  /// classification bias, all drawn from `seed`.
  static DetectorParams initialize(std::size_t feature_dim, std::size_t k_a, std::size_t k_c,
                                   std::uint64_t seed, double prior = 0.01, double weight_sigma = 0.01);

  bool operator==(const DetectorParams&) const = default;

 private:
  std::size_t reg_offset() const { return (feature_dim_ + 1) * cls_outputs(); }

  std::size_t feature_dim_ = 0, k_a_ = 0, k_c_ = 0;
  std::vector<double> data_;
};

ModelOutputs student_forward(const DetectorParams& params, const FeatureMap& features, const AnchorGrid& grid);

/// Accumulates d loss / d params for the given output gradient. The result has
/// the layout of `params.data()`.
std::vector<double> student_backward(const DetectorParams& params, const FeatureMap& features,
                                     const OutputGrad& grad);

enum class ReplaceMode { kNone, kRegression, kClassification, kBoth };

ReplaceMode parse_replace_mode(std::string_view name);
std::string_view to_string(ReplaceMode mode);

/// Swaps the selected student head(s) for the teacher's.
ModelOutputs replace_outputs(const ModelOutputs& student, const ModelOutputs& teacher, ReplaceMode mode);

}  // namespace xdistill
