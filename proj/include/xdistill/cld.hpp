#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace xdistill {

/// Classification logits for a run of anchors, `num_classes` per anchor,
/// grouped `anchors_per_position` at a time. Row r holds anchor r.
struct LogitMap {
  std::size_t num_anchors = 0;
  std::size_t anchors_per_position = 1;
  std::size_t num_classes = 1;
  std::vector<double> values;

  LogitMap() = default;
  LogitMap(std::size_t anchors, std::size_t k_a, std::size_t k_c, double fill = 0.0)
      : num_anchors(anchors), anchors_per_position(k_a), num_classes(k_c), values(anchors * k_c, fill) {}

  std::size_t num_positions() const { return anchors_per_position ? num_anchors / anchors_per_position : 0; }
  std::size_t position_width() const { return anchors_per_position * num_classes; }
  double& at(std::size_t anchor, std::size_t cls) { return values[anchor * num_classes + cls]; }
  double at(std::size_t anchor, std::size_t cls) const { return values[anchor * num_classes + cls]; }
  std::span<const double> position_row(std::size_t p) const {
    return {values.data() + p * position_width(), position_width()};
  }

  /// Throws std::invalid_argument when the layout is inconsistent.
  void validate() const;
};

/// Copies the rows of the listed positions (in the given order) into a new map.
LogitMap select_positions(const LogitMap& map, std::span<const std::size_t> positions);

/// Row-wise softmax over each position's K_a * K_c flattened logits. The
/// flattened index is anchor-major: a * K_c + c.
struct UnifiedDistribution {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<double> prob;
  std::vector<double> log_prob;

  double p(std::size_t r, std::size_t k) const { return prob[r * width + k]; }
};

UnifiedDistribution unified_distribution(const LogitMap& logits, double tau = 1.0);

enum class KlOrder { kTeacherStudent, kStudentTeacher };

/// Mean over rows of KL(teacher || student) (or the reverse order).
double cld_loss(const UnifiedDistribution& teacher, const UnifiedDistribution& student,
                KlOrder order = KlOrder::kTeacherStudent);

/// d cld_loss / d student logits, laid out like `student_logits`.
LogitMap cld_grad(const UnifiedDistribution& teacher, const LogitMap& student_logits, double tau = 1.0,
                  KlOrder order = KlOrder::kTeacherStudent);

/// Per-anchor softmax over the K_c classes, mean KL over all anchors.
double classical_logit_distill(const LogitMap& teacher, const LogitMap& student, double tau = 1.0);
LogitMap classical_logit_distill_grad(const LogitMap& teacher, const LogitMap& student, double tau = 1.0);

}  // namespace xdistill
