#include "protoseg/metrics.hpp"

#include <iomanip>
#include <ostream>

namespace protoseg {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes + 1) * static_cast<std::size_t>(num_classes + 1), 0) {
  if (num_classes < 0 || num_classes > 254) throw Error("confusion: num_classes out of range");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw Error("merge: confusion matrix dimension mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix confusion(const ClassMask& pred, const ClassMask& gt, int num_classes) {
  if (pred.size() != gt.size()) throw Error("confusion: prediction and ground truth shapes differ");
  ConfusionMatrix cm(num_classes);
  const auto p = pred.labels();
  const auto g = gt.labels();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] == ClassMask::kIgnore) continue;
    if (g[i] > num_classes || p[i] > num_classes) {
      throw Error("invalid label " + std::to_string(g[i] > num_classes ? g[i] : p[i]) + " for " +
                  std::to_string(num_classes) + " classes");
    }
    cm.add(g[i], p[i]);
  }
  return cm;
}

ConfusionMatrix merge(std::span<const ConfusionMatrix> cms) {
  if (cms.empty()) throw Error("merge: nothing to merge");
  ConfusionMatrix out = cms.front();
  for (std::size_t i = 1; i < cms.size(); ++i) out += cms[i];
  return out;
}

std::vector<ClassIoU> class_ious(const ConfusionMatrix& cm) {
  const int n = cm.num_classes();
  std::vector<ClassIoU> out;
  for (int c = 1; c <= n; ++c) {
    ClassIoU r{c, cm.at(c, c), 0, 0, 0.0};
    for (int o = 0; o <= n; ++o) {
      if (o == c) continue;
      r.fp += cm.at(o, c);
      r.fn += cm.at(c, o);
    }
    const std::uint64_t denom = r.tp + r.fp + r.fn;
    if (denom == 0) continue;
    r.iou = static_cast<double>(r.tp) / static_cast<double>(denom);
    out.push_back(r);
  }
  return out;
}

double miou(const ConfusionMatrix& cm) {
  const auto ious = class_ious(cm);
  if (ious.empty()) throw Error("undefined mIoU: no foreground class in ground truth or prediction");
  double s = 0.0;
  for (const auto& r : ious) s += r.iou;
  return s / static_cast<double>(ious.size());
}

double episode_miou(const ClassMask& pred, const ClassMask& gt, int num_classes) {
  return miou(confusion(pred, gt, num_classes));
}

void write_iou_csv(std::ostream& out, const ConfusionMatrix& cm) {
  out << "class_id,tp,fp,fn,iou\n";
  const auto ious = class_ious(cm);
  const auto old_precision = out.precision();
  out << std::setprecision(17);
  double s = 0.0;
  for (const auto& r : ious) {
    out << r.class_id << ',' << r.tp << ',' << r.fp << ',' << r.fn << ',' << r.iou << '\n';
    s += r.iou;
  }
  out << "mIoU,,,,";
  if (ious.empty()) {
    out << "NA";
  } else {
    out << s / static_cast<double>(ious.size());
  }
  out << '\n';
  out.precision(old_precision);
}

}  // namespace protoseg
