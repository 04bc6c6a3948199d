#pragma once

#include <vector>

#include "bar/graph.hpp"
#include "bar/ops.hpp"

namespace bar {

/// Teacher logits for a whole dataset, row i aligned with sample i.
struct LogitsCache {
    int n = 0;
    int c = 0;
    std::vector<float> logits;

    [[nodiscard]] const float* row(int i) const { return &logits[static_cast<std::size_t>(i) * c]; }
};

/// The two addends of the distillation loss, kept for logging.
template <class T>
struct KdPartsT {
    VarT<T> hard;  // CE(student, labels)
    VarT<T> soft;  // CE(student/temp, softmax(teacher/temp))
};

/// Distillation loss: (1-alpha) * CE(student, labels)
///                  + alpha * temp^2 * CE(student/temp, softmax(teacher/temp)).
///
/// The teacher term is a constant target (no gradient flows to it); the
/// temp^2 factor keeps the soft-term gradient magnitude comparable across
/// temperatures. alpha = 0 degenerates to plain cross-entropy exactly.
template <class T>
VarT<T> kd_loss(VarT<T> student_logits, const std::vector<int>& labels,
                const TensorT<T>& teacher_logits, T alpha, T temperature,
                KdPartsT<T>* parts = nullptr) {
    if (alpha < T(0) || alpha > T(1))
        throw std::invalid_argument("kd_loss: alpha must lie in [0,1]");
    if (!(temperature > T(0)))
        throw std::invalid_argument("kd_loss: temperature must be positive");
    check_same_shape(student_logits.value(), teacher_logits, "kd_loss");
    VarT<T> hard = cross_entropy_logits(student_logits, labels);
    TensorT<T> soft_target = softmax_rows(teacher_logits, temperature);
    VarT<T> soft = soft_cross_entropy(student_logits, soft_target, temperature);
    if (parts) *parts = {hard, soft};
    return add(scale(hard, T(1) - alpha), scale(soft, alpha * temperature * temperature));
}

}  // namespace bar
