#pragma once

#include <cstdint>
#include <vector>

#include "scnet/common.hpp"

namespace scnet {

/// Dense rank-2 grid of {0,1} values.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0) : h_(h), w_(w), v_(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return v_.size(); }

  std::uint8_t at(int i, int j) const { return v_[static_cast<std::size_t>(i) * w_ + j]; }
  void set(int i, int j, bool on) { v_[static_cast<std::size_t>(i) * w_ + j] = on ? 1 : 0; }

  const std::vector<std::uint8_t>& values() const { return v_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : v_) n += b;
    return n;
  }
  bool any() const { return count() > 0; }
  bool all() const { return count() == size(); }
  bool empty_grid() const { return v_.empty(); }

  BinaryMask complement() const {
    BinaryMask out(h_, w_);
    for (std::size_t i = 0; i < v_.size(); ++i) out.v_[i] = v_[i] ? 0 : 1;
    return out;
  }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.h_ == b.h_ && a.w_ == b.w_ && a.v_ == b.v_;
  }

 private:
  int h_ = 0, w_ = 0;
  std::vector<std::uint8_t> v_;
};

inline void check_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width())
    throw ShapeError(std::string(what) + ": mask shapes differ");
}

inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  check_same_shape(a, b, "mask_and");
  BinaryMask out(a.height(), a.width());
  for (int i = 0; i < a.height(); ++i)
    for (int j = 0; j < a.width(); ++j) out.set(i, j, a.at(i, j) && b.at(i, j));
  return out;
}

inline BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
  check_same_shape(a, b, "mask_or");
  BinaryMask out(a.height(), a.width());
  for (int i = 0; i < a.height(); ++i)
    for (int j = 0; j < a.width(); ++j) out.set(i, j, a.at(i, j) || b.at(i, j));
  return out;
}

// a minus (a intersect b)
inline BinaryMask mask_subtract(const BinaryMask& a, const BinaryMask& b) {
  check_same_shape(a, b, "mask_subtract");
  BinaryMask out(a.height(), a.width());
  for (int i = 0; i < a.height(); ++i)
    for (int j = 0; j < a.width(); ++j) out.set(i, j, a.at(i, j) && !b.at(i, j));
  return out;
}

inline bool masks_disjoint(const BinaryMask& a, const BinaryMask& b) {
  check_same_shape(a, b, "masks_disjoint");
  for (int i = 0; i < a.height(); ++i)
    for (int j = 0; j < a.width(); ++j)
      if (a.at(i, j) && b.at(i, j)) return false;
  return true;
}

inline int nearest_index(int dst, int dst_size, int src_size) {
  int idx = static_cast<int>((static_cast<long long>(dst) * 2 + 1) * src_size / (2 * dst_size));
  return idx < src_size ? idx : src_size - 1;
}

/// Nearest-neighbor downsampling; output stays in {0,1}. Upsampling requests are rejected.
inline BinaryMask downsample_mask(const BinaryMask& mask, int th, int tw) {
  if (th <= 0 || tw <= 0) throw ShapeError("downsample_mask: target must be positive");
  if (th > mask.height() || tw > mask.width())
    throw ShapeError("downsample_mask: target exceeds source size");
  BinaryMask out(th, tw);
  for (int i = 0; i < th; ++i) {
    const int si = nearest_index(i, th, mask.height());
    for (int j = 0; j < tw; ++j) out.set(i, j, mask.at(si, nearest_index(j, tw, mask.width())) != 0);
  }
  return out;
}

/// Nearest-neighbor upsampling back to image resolution.
inline BinaryMask upsample_mask(const BinaryMask& mask, int th, int tw) {
  if (th < mask.height() || tw < mask.width())
    throw ShapeError("upsample_mask: target smaller than source");
  BinaryMask out(th, tw);
  for (int i = 0; i < th; ++i) {
    const int si = nearest_index(i, th, mask.height());
    for (int j = 0; j < tw; ++j) out.set(i, j, mask.at(si, nearest_index(j, tw, mask.width())) != 0);
  }
  return out;
}

}  // namespace scnet
