#include "xdistill/detector.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "xdistill/random.hpp"

namespace xdistill {

OutputGrad& OutputGrad::operator+=(const OutputGrad& other) {
  if (other.d_logits.size() != d_logits.size() || other.d_deltas.size() != d_deltas.size()) {
    throw std::invalid_argument("OutputGrad: shape mismatch");
  }
  for (std::size_t i = 0; i < d_logits.size(); ++i) d_logits[i] += other.d_logits[i];
  for (std::size_t i = 0; i < d_deltas.size(); ++i) {
    for (std::size_t k = 0; k < 7; ++k) d_deltas[i][k] += other.d_deltas[i][k];
  }
  return *this;
}

DetectorParams::DetectorParams(std::size_t feature_dim, std::size_t k_a, std::size_t k_c)
    : feature_dim_(feature_dim), k_a_(k_a), k_c_(k_c),
      data_((feature_dim + 1) * (k_a * k_c) + (feature_dim + 1) * (k_a * 7), 0.0) {}

DetectorParams DetectorParams::initialize(std::size_t feature_dim, std::size_t k_a, std::size_t k_c,
                                          std::uint64_t seed, double prior, double weight_sigma) {
  DetectorParams p(feature_dim, k_a, k_c);
  Rng rng = make_rng(seed, 11);
  for (std::size_t i = 0; i < feature_dim; ++i) {
    for (std::size_t o = 0; o < p.cls_outputs(); ++o) p.data_[p.w_cls_index(i, o)] = normal(rng, weight_sigma);
    for (std::size_t o = 0; o < p.reg_outputs(); ++o) p.data_[p.w_reg_index(i, o)] = normal(rng, weight_sigma);
  }
  const double bias = -std::log((1.0 - prior) / prior);
  for (std::size_t o = 0; o < p.cls_outputs(); ++o) p.data_[p.b_cls_index(o)] = bias;
  return p;
}

ModelOutputs student_forward(const DetectorParams& params, const FeatureMap& features, const AnchorGrid& grid) {
  constexpr std::size_t F = FeatureMap::kDim;
  if (params.feature_dim() != F) throw std::invalid_argument("student_forward: feature dimension mismatch");
  if (params.anchors_per_position() != grid.anchors_per_position() ||
      params.num_classes() != static_cast<std::size_t>(grid.num_classes())) {
    throw std::invalid_argument("student_forward: head layout does not match the anchor grid");
  }
  if (features.positions != grid.num_positions()) {
    throw std::invalid_argument("student_forward: feature map does not match the anchor grid");
  }
  const std::size_t k_a = grid.anchors_per_position();
  const std::size_t k_c = params.num_classes();
  const std::size_t n_cls = params.cls_outputs();
  const std::size_t n_reg = params.reg_outputs();
  const auto& w = params.data();

  ModelOutputs out;
  out.logits = LogitMap(grid.num_anchors(), k_a, k_c);
  out.deltas.resize(grid.num_anchors());

  std::vector<double> cls(n_cls), reg(n_reg);
  for (std::size_t p = 0; p < features.positions; ++p) {
    for (std::size_t o = 0; o < n_cls; ++o) cls[o] = w[params.b_cls_index(o)];
    for (std::size_t o = 0; o < n_reg; ++o) reg[o] = w[params.b_reg_index(o)];
    if (features.active[p]) {
      const double* f = features.row(p);
      for (std::size_t i = 0; i < F; ++i) {
        const double fi = f[i];
        const double* wc = w.data() + params.w_cls_index(i, 0);
        for (std::size_t o = 0; o < n_cls; ++o) cls[o] += fi * wc[o];
        const double* wr = w.data() + params.w_reg_index(i, 0);
        for (std::size_t o = 0; o < n_reg; ++o) reg[o] += fi * wr[o];
      }
    }
    std::copy(cls.begin(), cls.end(), out.logits.values.begin() + static_cast<std::ptrdiff_t>(p * n_cls));
    for (std::size_t a = 0; a < k_a; ++a) {
      BoxDelta& d = out.deltas[p * k_a + a];
      d = BoxDelta{reg[a * 7 + 0], reg[a * 7 + 1], reg[a * 7 + 2], reg[a * 7 + 3],
                   reg[a * 7 + 4], reg[a * 7 + 5], reg[a * 7 + 6]};
    }
  }
  return out;
}

std::vector<double> student_backward(const DetectorParams& params, const FeatureMap& features,
                                     const OutputGrad& grad) {
  constexpr std::size_t F = FeatureMap::kDim;
  const std::size_t k_a = params.anchors_per_position();
  const std::size_t n_cls = params.cls_outputs();
  const std::size_t n_reg = params.reg_outputs();
  if (grad.d_logits.size() != features.positions * n_cls || grad.d_deltas.size() != features.positions * k_a) {
    throw std::invalid_argument("student_backward: gradient does not match the feature map");
  }
  std::vector<double> g(params.size(), 0.0);
  std::vector<double> reg(n_reg);
  for (std::size_t p = 0; p < features.positions; ++p) {
    const double* gc = grad.d_logits.data() + p * n_cls;
    for (std::size_t a = 0; a < k_a; ++a) {
      for (std::size_t k = 0; k < 7; ++k) reg[a * 7 + k] = grad.d_deltas[p * k_a + a][k];
    }
    for (std::size_t o = 0; o < n_cls; ++o) g[params.b_cls_index(o)] += gc[o];
    for (std::size_t o = 0; o < n_reg; ++o) g[params.b_reg_index(o)] += reg[o];
    if (!features.active[p]) continue;
    const double* f = features.row(p);
    for (std::size_t i = 0; i < F; ++i) {
      const double fi = f[i];
      double* wc = g.data() + params.w_cls_index(i, 0);
      for (std::size_t o = 0; o < n_cls; ++o) wc[o] += fi * gc[o];
      double* wr = g.data() + params.w_reg_index(i, 0);
      for (std::size_t o = 0; o < n_reg; ++o) wr[o] += fi * reg[o];
    }
  }
  return g;
}

ReplaceMode parse_replace_mode(std::string_view name) {
  if (name == "none") return ReplaceMode::kNone;
  if (name == "regression") return ReplaceMode::kRegression;
  if (name == "classification") return ReplaceMode::kClassification;
  if (name == "both") return ReplaceMode::kBoth;
  throw std::invalid_argument("unknown replacement mode '" + std::string(name) + "'");
}

std::string_view to_string(ReplaceMode mode) {
  switch (mode) {
    case ReplaceMode::kNone: return "none";
    case ReplaceMode::kRegression: return "regression";
    case ReplaceMode::kClassification: return "classification";
    case ReplaceMode::kBoth: return "both";
  }
  return "none";
}

ModelOutputs replace_outputs(const ModelOutputs& student, const ModelOutputs& teacher, ReplaceMode mode) {
  if (student.deltas.size() != teacher.deltas.size() ||
      student.logits.values.size() != teacher.logits.values.size() ||
      student.logits.num_classes != teacher.logits.num_classes) {
    throw std::invalid_argument("replace_outputs: student and teacher outputs differ in shape");
  }
  ModelOutputs out = student;
  if (mode == ReplaceMode::kRegression || mode == ReplaceMode::kBoth) out.deltas = teacher.deltas;
  if (mode == ReplaceMode::kClassification || mode == ReplaceMode::kBoth) out.logits = teacher.logits;
  return out;
}

}  // namespace xdistill
