#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "protoseg/types.hpp"

namespace protoseg {

/// (C+1) x (C+1) pixel counts; rows are ground truth, columns prediction.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return num_classes_; }
  std::uint64_t at(int gt, int pred) const { return counts_[index(gt, pred)]; }
  void add(int gt, int pred, std::uint64_t n = 1) { counts_[index(gt, pred)] += n; }
  std::uint64_t total() const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t index(int gt, int pred) const {
    return static_cast<std::size_t>(gt) * static_cast<std::size_t>(num_classes_ + 1) + static_cast<std::size_t>(pred);
  }

  int num_classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

/// Counts every pixel whose ground truth is not ignore.
ConfusionMatrix confusion(const ClassMask& pred, const ClassMask& gt, int num_classes);

ConfusionMatrix merge(std::span<const ConfusionMatrix> cms);

struct ClassIoU {
  int class_id = 0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  double iou = 0.0;
};

/// Foreground classes with TP + FP + FN > 0. Background contributes only as
/// false positives / false negatives of the foreground classes.
std::vector<ClassIoU> class_ious(const ConfusionMatrix& cm);

/// Mean of class_ious; throws "undefined mIoU" when no foreground class occurs.
double miou(const ConfusionMatrix& cm);

double episode_miou(const ClassMask& pred, const ClassMask& gt, int num_classes);

/// CSV with header class_id,tp,fp,fn,iou and a final "mIoU" row.
void write_iou_csv(std::ostream& out, const ConfusionMatrix& cm);

}  // namespace protoseg
