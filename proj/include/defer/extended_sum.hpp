#pragma once

#ifdef __FAST_MATH__
#error "fast-math breaks the error-free transformations used here"
#endif

namespace defer {

/// Running sum held as an unevaluated double-double (hi + lo), giving about
/// 32 significant decimal digits. Supports subtraction, so terms can be
/// excluded again without accumulating cancellation error.
class ExtendedSum {
 public:
  ExtendedSum() = default;
  explicit ExtendedSum(double v) : hi_(v) {}

  void add(double x) {
    double s, e;
    two_sum(hi_, x, s, e);
    e += lo_;
    fast_two_sum(s, e, hi_, lo_);
  }
  void subtract(double x) { add(-x); }

  void add(const ExtendedSum& o) {
    double s, e;
    two_sum(hi_, o.hi_, s, e);
    e += lo_ + o.lo_;
    fast_two_sum(s, e, hi_, lo_);
  }

  double value() const { return hi_ + lo_; }
  double hi() const { return hi_; }
  double lo() const { return lo_; }

 private:
  static void two_sum(double a, double b, double& s, double& e) {
    s = a + b;
    const double bb = s - a;
    e = (a - (s - bb)) + (b - bb);
  }
  static void fast_two_sum(double a, double b, double& s, double& e) {
    s = a + b;
    e = b - (s - a);
  }

  double hi_ = 0.0;
  double lo_ = 0.0;
};

}  // namespace defer
