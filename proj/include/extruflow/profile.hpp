#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace extruflow {

struct WidthSample {
  double x = 0.0;  // arc length, mm
  double w = 0.0;  // width, mm
};

/// Sampled width along a path. x strictly increasing, w >= 0.
class WidthProfile {
 public:
  WidthProfile() = default;
  explicit WidthProfile(std::vector<WidthSample> samples);

  const std::vector<WidthSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const WidthSample& operator[](std::size_t i) const { return samples_[i]; }

  /// Appends a sample; x must exceed the last x.
  void push_back(WidthSample s);

  std::vector<double> xs() const;
  std::vector<double> ws() const;

  /// Samples with lo <= x <= hi.
  WidthProfile slice(double lo, double hi) const;

  friend bool operator==(const WidthProfile&, const WidthProfile&) = default;

 private:
  std::vector<WidthSample> samples_;
};

/// Per-segment extrusion ratios over a discretized path.
struct ControlSequence {
  std::vector<double> xi;
  double step = 0.1;
  /// Actual length of each segment when it differs from `step`; empty means uniform.
  std::vector<double> segment_lengths;

  std::size_t size() const { return xi.size(); }
  double length_of(std::size_t k) const {
    return segment_lengths.empty() ? step : segment_lengths[k];
  }
  /// Throws ContractError unless finite and consistently sized.
  void validate() const;
};

// Shared two-column CSV format: header line then "x_mm,w_mm" rows.
void write_profile_csv(std::ostream& out, const WidthProfile& profile,
                       const std::string& header = "x_mm,w_mm");
WidthProfile read_profile_csv(std::istream& in);
void save_profile_csv(const std::string& path, const WidthProfile& profile);
WidthProfile load_profile_csv(const std::string& path);

}  // namespace extruflow
