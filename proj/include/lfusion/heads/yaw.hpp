#pragma once

// Yaw as one of eight 45-degree bins plus a residual offset.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace lfusion {

inline constexpr int kYawBins = 8;
inline constexpr double kYawBinWidth = std::numbers::pi / 4.0;   // 45 deg
inline constexpr double kYawHalfBin = std::numbers::pi / 8.0;    // 22.5 deg

struct YawCode {
  int bin = 0;
  double offset = 0.0;  // radians, in [-pi/8, pi/8)
};

inline double yaw_bin_center(int bin) { return kYawBinWidth * bin; }

/// Wraps an angle into [0, 2*pi).
inline double wrap_two_pi(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a, two_pi);
  if (r < 0) r += two_pi;
  if (r >= two_pi) r -= two_pi;  // fmod of a tiny negative can round up to 2*pi
  return r;
}

inline YawCode encode_yaw(double theta) {
  // Shift so that bin i covers [i*45deg, (i+1)*45deg), then undo the shift.
  const double shifted = wrap_two_pi(theta + kYawHalfBin);
  int bin = static_cast<int>(std::floor(shifted / kYawBinWidth));
  if (bin >= kYawBins) bin = kYawBins - 1;
  double offset = shifted - kYawBinWidth * bin - kYawHalfBin;
  // Rounding at the upper bin edge can land exactly on +pi/8.
  if (offset >= kYawHalfBin) {
    offset -= kYawBinWidth;
    bin = (bin + 1) % kYawBins;
  }
  return {bin, offset};
}

inline double decode_yaw(int bin, double offset) {
  if (bin < 0 || bin >= kYawBins)
    throw std::out_of_range("decode_yaw: class " + std::to_string(bin) + " outside 0..7");
  return wrap_two_pi(yaw_bin_center(bin) + offset);
}

inline double decode_yaw(const YawCode& c) { return decode_yaw(c.bin, c.offset); }

/// Smallest absolute difference between two angles, in [0, pi].
inline double angle_distance(double a, double b) {
  const double d = wrap_two_pi(a - b);
  return std::min(d, 2.0 * std::numbers::pi - d);
}

}  // namespace lfusion
