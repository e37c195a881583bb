#include "extruflow/profile.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "extruflow/errors.hpp"

namespace extruflow {

WidthProfile::WidthProfile(std::vector<WidthSample> samples) {
  samples_.reserve(samples.size());
  for (const auto& s : samples) push_back(s);
}

void WidthProfile::push_back(WidthSample s) {
  if (!std::isfinite(s.x) || !std::isfinite(s.w)) {
    throw ContractError("width profile sample is not finite");
  }
  if (s.w < 0.0) throw ContractError(fmt::format("negative width {} at x={}", s.w, s.x));
  if (!samples_.empty() && !(s.x > samples_.back().x)) {
    throw ContractError(fmt::format("width profile x not strictly increasing at x={}", s.x));
  }
  samples_.push_back(s);
}

std::vector<double> WidthProfile::xs() const {
  std::vector<double> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.x);
  return out;
}

std::vector<double> WidthProfile::ws() const {
  std::vector<double> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.w);
  return out;
}

WidthProfile WidthProfile::slice(double lo, double hi) const {
  WidthProfile out;
  for (const auto& s : samples_) {
    if (s.x >= lo && s.x <= hi) out.samples_.push_back(s);
  }
  return out;
}

void ControlSequence::validate() const {
  if (!(step > 0.0) || !std::isfinite(step)) throw ContractError("control step must be positive");
  if (!segment_lengths.empty() && segment_lengths.size() != xi.size()) {
    throw ContractError(fmt::format("control sequence has {} ratios but {} segment lengths",
                                    xi.size(), segment_lengths.size()));
  }
  for (double v : xi) {
    if (!std::isfinite(v)) throw ContractError("control sequence contains a non-finite ratio");
  }
  for (double l : segment_lengths) {
    if (!(l > 0.0) || !std::isfinite(l)) throw ContractError("segment length must be positive");
  }
}

void write_profile_csv(std::ostream& out, const WidthProfile& profile, const std::string& header) {
  out << header << '\n';
  for (const auto& s : profile.samples()) out << fmt::format("{:.6f},{:.6f}\n", s.x, s.w);
}

WidthProfile read_profile_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty profile CSV");
  WidthProfile profile;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string xs, ws;
    if (!std::getline(row, xs, ',') || !std::getline(row, ws, ',')) {
      throw ParseError(lineno, "expected two comma-separated columns");
    }
    try {
      profile.push_back({std::stod(xs), std::stod(ws)});
    } catch (const std::invalid_argument&) {
      throw ParseError(lineno, "malformed number in profile CSV");
    } catch (const ContractError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return profile;
}

void save_profile_csv(const std::string& path, const WidthProfile& profile) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_profile_csv(out, profile);
}

WidthProfile load_profile_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open profile " + path);
  return read_profile_csv(in);
}

}  // namespace extruflow
