#pragma once

namespace irllab {

// Asymmetric margin loss on the reward gap x = r(preferred) - r(rejected):
// -x when the ordering is right, -2x when it is wrong, 0 at x = 0.
inline double asymmetric_margin_loss(double x) {
  if (x > 0.0) return -x;
  if (x < 0.0) return -2.0 * x;
  return 0.0;
}

// Derivative of asymmetric_margin_loss; the subgradient at 0 is taken as 0.
inline double asymmetric_margin_slope(double x) {
  if (x > 0.0) return -1.0;
  if (x < 0.0) return -2.0;
  return 0.0;
}

}  // namespace irllab
