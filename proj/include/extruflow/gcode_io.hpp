#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "extruflow/geometry.hpp"
#include "extruflow/profile.hpp"

namespace extruflow {

enum class ExtrusionMode { relative, absolute };
enum class MoveKind { travel, print };

/// One linear motion command. `extrude` is always a relative increment (mm of filament).
struct GMove {
  Vec3 start;
  Vec3 target;
  double extrude = 0.0;
  std::optional<double> feedrate;  // mm/min, only when the source line carried F
  double active_feedrate = 0.0;    // feedrate in effect for this move (0 if never set)
  MoveKind kind = MoveKind::travel;
  bool in_place_extrusion = false;
  int source_line = 0;
  /// Unsupported or comment lines that appeared before this move, verbatim.
  std::vector<std::string> passthrough_before;

  double length() const { return distance(start, target); }
};

struct ToolPath {
  std::vector<GMove> moves;
  std::vector<std::string> trailing;  // passthrough after the last move
  ExtrusionMode extrusion_mode = ExtrusionMode::relative;

  double print_length() const;
  double total_extrusion() const;
  std::size_t print_move_count() const;
};

/// Parses the supported subset: G0/G1/G21/G90/G91/G92 E/M82/M83, comments.
/// Throws ParseError on malformed numbers and UnsupportedFeatureError on
/// G2/G3/G20 and G92 with axis words.
ToolPath parse_gcode(std::string_view text);
ToolPath load_gcode(const std::string& path);

/// Writes a ToolPath back to text (absolute positioning, chosen E mode).
std::string format_toolpath(const ToolPath& path, ExtrusionMode mode);

struct EmitOptions {
  double feedrate = 0.0;  // mm/min; 0 leaves F off
  ExtrusionMode mode = ExtrusionMode::relative;
  std::vector<std::string> header;  // extra "; ..." header comment lines
};

/// One G1 line per segment between consecutive points with E = xi_k * |P_{k+1}-P_k|
/// (relative) or its running sum (absolute). Throws ContractError on length mismatch.
std::string emit_gcode(std::span<const Vec3> points, const ControlSequence& controls,
                       const EmitOptions& options);

/// Incremental writer shared by emit_gcode and the optimizer. Tracks the
/// running E total for absolute mode and only prints F when it changes.
class GcodeWriter {
 public:
  explicit GcodeWriter(ExtrusionMode mode);

  void comment(std::string_view text);
  void raw(std::string_view line);
  /// Mode preamble: G90 plus M83, or M82 + G92 E0.
  void preamble();
  /// G0 move; `e` is only set when reproducing a source G0 that carried E.
  void travel(const Vec3& target, std::optional<double> feedrate = std::nullopt,
              std::optional<double> e = std::nullopt);
  void extrude(const Vec3& target, double e, std::optional<double> feedrate = std::nullopt);

  double cumulative_e() const { return cumulative_e_; }
  const std::string& str() const { return out_; }

 private:
  void motion(const char* cmd, const Vec3& target, std::optional<double> e,
              std::optional<double> feedrate);

  ExtrusionMode mode_;
  double cumulative_e_ = 0.0;
  long long written_units_ = 0;  // relative mode: running total already written, in 1e-5 mm
  double last_feedrate_ = -1.0;
  std::string out_;
};

/// Fixed five-decimal rendering used for every numeric field.
std::string format_number(double v);

/// Recovers points and ratios from a file written by emit_gcode
/// (leading travel to the start, then one print move per segment).
struct RecoveredSegments {
  std::vector<Vec3> points;
  ControlSequence controls;
  double feedrate = 0.0;
};
RecoveredSegments recover_segments(const ToolPath& path);

extern const char* const kToolVersion;

}  // namespace extruflow
