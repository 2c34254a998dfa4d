#include "xdistill/cld.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xdistill {
namespace {

// Stable log-softmax of `in / tau` into `logp`, probabilities into `p`.
void log_softmax(std::span<const double> in, double tau, double* logp, double* p) {
  double mx = -INFINITY;
  for (double v : in) mx = std::max(mx, v / tau);
  double sum = 0.0;
  for (double v : in) sum += std::exp(v / tau - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t k = 0; k < in.size(); ++k) {
    logp[k] = in[k] / tau - lse;
    p[k] = std::exp(logp[k]);
  }
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("temperature must be positive");
}

void check_same_layout(const LogitMap& a, const LogitMap& b) {
  if (a.num_anchors != b.num_anchors || a.num_classes != b.num_classes ||
      a.anchors_per_position != b.anchors_per_position) {
    throw std::invalid_argument("logit maps have different shapes");
  }
}

}  // namespace

void LogitMap::validate() const {
  if (anchors_per_position == 0 || num_classes == 0) throw std::invalid_argument("LogitMap: empty layout");
  if (num_anchors % anchors_per_position != 0) {
    throw std::invalid_argument("LogitMap: anchor count not divisible by anchors per position");
  }
  if (values.size() != num_anchors * num_classes) throw std::invalid_argument("LogitMap: value count mismatch");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("LogitMap: non-finite logit");
  }
}

LogitMap select_positions(const LogitMap& map, std::span<const std::size_t> positions) {
  LogitMap out(positions.size() * map.anchors_per_position, map.anchors_per_position, map.num_classes);
  const std::size_t width = map.position_width();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= map.num_positions()) throw std::out_of_range("select_positions: position out of range");
    std::copy_n(map.values.begin() + static_cast<std::ptrdiff_t>(positions[i] * width), width,
                out.values.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return out;
}

UnifiedDistribution unified_distribution(const LogitMap& logits, double tau) {
  check_tau(tau);
  logits.validate();
  UnifiedDistribution d;
  d.rows = logits.num_positions();
  d.width = logits.position_width();
  d.prob.resize(d.rows * d.width);
  d.log_prob.resize(d.rows * d.width);
  for (std::size_t r = 0; r < d.rows; ++r) {
    log_softmax(logits.position_row(r), tau, d.log_prob.data() + r * d.width, d.prob.data() + r * d.width);
  }
  return d;
}

double cld_loss(const UnifiedDistribution& teacher, const UnifiedDistribution& student, KlOrder order) {
  if (teacher.rows != student.rows || teacher.width != student.width) {
    throw std::invalid_argument("cld_loss: distribution shape mismatch");
  }
  if (teacher.rows == 0) return 0.0;
  const UnifiedDistribution& ref = order == KlOrder::kTeacherStudent ? teacher : student;
  const UnifiedDistribution& other = order == KlOrder::kTeacherStudent ? student : teacher;
  double total = 0.0;
  for (std::size_t i = 0; i < ref.prob.size(); ++i) {
    total += ref.prob[i] * (ref.log_prob[i] - other.log_prob[i]);
  }
  return total / static_cast<double>(teacher.rows);
}

LogitMap cld_grad(const UnifiedDistribution& teacher, const LogitMap& student_logits, double tau,
                  KlOrder order) {
  const UnifiedDistribution student = unified_distribution(student_logits, tau);
  if (teacher.rows != student.rows || teacher.width != student.width) {
    throw std::invalid_argument("cld_grad: distribution shape mismatch");
  }
  LogitMap grad(student_logits.num_anchors, student_logits.anchors_per_position, student_logits.num_classes);
  if (student.rows == 0) return grad;
  const double scale = 1.0 / (tau * static_cast<double>(student.rows));
  for (std::size_t r = 0; r < student.rows; ++r) {
    const std::size_t off = r * student.width;
    if (order == KlOrder::kTeacherStudent) {
      for (std::size_t k = 0; k < student.width; ++k) {
        grad.values[off + k] = scale * (student.prob[off + k] - teacher.prob[off + k]);
      }
    } else {
      double kl = 0.0;
      for (std::size_t k = 0; k < student.width; ++k) {
        kl += student.prob[off + k] * (student.log_prob[off + k] - teacher.log_prob[off + k]);
      }
      for (std::size_t k = 0; k < student.width; ++k) {
        const double diff = student.log_prob[off + k] - teacher.log_prob[off + k];
        grad.values[off + k] = scale * student.prob[off + k] * (diff - kl);
      }
    }
  }
  return grad;
}

double classical_logit_distill(const LogitMap& teacher, const LogitMap& student, double tau) {
  check_tau(tau);
  check_same_layout(teacher, student);
  teacher.validate();
  student.validate();
  if (teacher.num_anchors == 0) return 0.0;
  const std::size_t kc = teacher.num_classes;
  std::vector<double> lt(kc), pt(kc), ls(kc), ps(kc);
  double total = 0.0;
  for (std::size_t a = 0; a < teacher.num_anchors; ++a) {
    log_softmax({teacher.values.data() + a * kc, kc}, tau, lt.data(), pt.data());
    log_softmax({student.values.data() + a * kc, kc}, tau, ls.data(), ps.data());
    for (std::size_t c = 0; c < kc; ++c) total += pt[c] * (lt[c] - ls[c]);
  }
  return total / static_cast<double>(teacher.num_anchors);
}

LogitMap classical_logit_distill_grad(const LogitMap& teacher, const LogitMap& student, double tau) {
  check_tau(tau);
  check_same_layout(teacher, student);
  LogitMap grad(student.num_anchors, student.anchors_per_position, student.num_classes);
  if (student.num_anchors == 0) return grad;
  const std::size_t kc = teacher.num_classes;
  const double scale = 1.0 / (tau * static_cast<double>(student.num_anchors));
  std::vector<double> lt(kc), pt(kc), ls(kc), ps(kc);
  for (std::size_t a = 0; a < student.num_anchors; ++a) {
    log_softmax({teacher.values.data() + a * kc, kc}, tau, lt.data(), pt.data());
    log_softmax({student.values.data() + a * kc, kc}, tau, ls.data(), ps.data());
    for (std::size_t c = 0; c < kc; ++c) grad.values[a * kc + c] = scale * (ps[c] - pt[c]);
  }
  return grad;
}

}  // namespace xdistill
