#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgmf/common.hpp"

namespace mgmf {

// One task's evaluation summary. The confusion matrix is row-major with
// rows = true class, columns = predicted class. Weighted metrics weight each
// class by its true support over the evaluation set; a class that is never
// predicted contributes precision 0 and leaves a warning.
struct TaskMetrics {
  std::size_t classes = 0;
  std::size_t total = 0;
  std::vector<int> confusion;  // classes x classes
  double accuracy = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  std::vector<std::string> warnings;

  int at(std::size_t true_c, std::size_t pred_c) const {
    return confusion[true_c * classes + pred_c];
  }
};

TaskMetrics compute_task_metrics(std::span<const int> labels,
                                 std::span<const int> preds, int classes);

struct MetricsReport {
  std::array<TaskMetrics, 4> tasks;
  std::vector<std::pair<std::size_t, double>> loss_curve;  // (step, train loss)
  std::size_t steps = 0;

  double mean_accuracy() const;
};

std::string metrics_table(const MetricsReport& report);

}  // namespace mgmf
