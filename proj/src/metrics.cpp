#include "mgmf/metrics.hpp"

#include <cstdio>

#include "mgmf/data.hpp"

namespace mgmf {

TaskMetrics compute_task_metrics(std::span<const int> labels,
                                 std::span<const int> preds, int classes) {
  if (classes <= 0) throw ContractError("metrics need a positive class count");
  if (labels.size() != preds.size() || labels.empty())
    throw ContractError("metrics need matching nonempty label/prediction lists");
  TaskMetrics m;
  m.classes = static_cast<std::size_t>(classes);
  m.total = labels.size();
  m.confusion.assign(m.classes * m.classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes || preds[i] < 0 || preds[i] >= classes)
      throw ContractError("metrics: class index outside 0.." +
                          std::to_string(classes - 1));
    m.confusion[static_cast<std::size_t>(labels[i]) * m.classes +
                static_cast<std::size_t>(preds[i])]++;
  }

  std::size_t correct = 0;
  for (std::size_t c = 0; c < m.classes; ++c) correct += m.at(c, c);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.total);

  for (std::size_t c = 0; c < m.classes; ++c) {
    std::size_t support = 0, predicted = 0;
    for (std::size_t k = 0; k < m.classes; ++k) {
      support += m.at(c, k);
      predicted += m.at(k, c);
    }
    const double weight = static_cast<double>(support) / static_cast<double>(m.total);
    if (predicted == 0) {
      if (support > 0)
        m.warnings.push_back("class " + std::to_string(c) +
                             " never predicted; precision term set to 0");
    } else {
      m.weighted_precision += weight * static_cast<double>(m.at(c, c)) /
                              static_cast<double>(predicted);
    }
    if (support > 0)
      m.weighted_recall += weight * static_cast<double>(m.at(c, c)) /
                           static_cast<double>(support);
  }
  return m;
}

double MetricsReport::mean_accuracy() const {
  double s = 0.0;
  for (const TaskMetrics& t : tasks) s += t.accuracy;
  return s / 4.0;
}

std::string metrics_table(const MetricsReport& report) {
  std::string out;
  out += "task   acc     wpre    wrec\n";
  char line[80];
  for (std::size_t t = 0; t < 4; ++t) {
    const TaskMetrics& m = report.tasks[t];
    std::snprintf(line, sizeof line, "%-5s  %.4f  %.4f  %.4f\n", kTaskNames[t],
                  m.accuracy, m.weighted_precision, m.weighted_recall);
    out += line;
  }
  std::snprintf(line, sizeof line, "mean accuracy %.4f over %zu samples\n",
                report.mean_accuracy(), report.tasks[0].total);
  out += line;
  return out;
}

}  // namespace mgmf
