#include "extruflow/gcode_io.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "extruflow/errors.hpp"

namespace extruflow {

const char* const kToolVersion = "extruflow 0.1.0";

double ToolPath::print_length() const {
  double total = 0.0;
  for (const auto& m : moves) {
    if (m.kind == MoveKind::print) total += m.length();
  }
  return total;
}

double ToolPath::total_extrusion() const {
  double total = 0.0;
  for (const auto& m : moves) total += m.extrude;
  return total;
}

std::size_t ToolPath::print_move_count() const {
  std::size_t n = 0;
  for (const auto& m : moves) n += m.kind == MoveKind::print ? 1 : 0;
  return n;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Removes ';' and parenthesized comments; reports whether any comment was present.
std::string strip_comments(std::string_view line, bool& had_comment) {
  std::string out;
  out.reserve(line.size());
  int depth = 0;
  had_comment = false;
  for (char c : line) {
    if (depth == 0 && c == ';') {
      had_comment = true;
      break;
    }
    if (c == '(') {
      ++depth;
      had_comment = true;
      continue;
    }
    if (c == ')' && depth > 0) {
      --depth;
      continue;
    }
    if (depth == 0) out.push_back(c);
  }
  return out;
}

struct Word {
  char letter;
  double value;
};

// Splits "G1 X10 Y-2.5E.4" into letter/number words. Exponent notation is
// not accepted because 'E' is an axis letter.
std::vector<Word> tokenize(std::string_view code, int lineno) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < code.size()) {
    const char c = code[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (!std::isalpha(static_cast<unsigned char>(c))) {
      throw ParseError(lineno, fmt::format("unexpected character '{}'", c));
    }
    const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    ++i;
    while (i < code.size() && code[i] == ' ') ++i;
    std::size_t j = i;
    if (j < code.size() && (code[j] == '+' || code[j] == '-')) ++j;
    bool digits = false;
    while (j < code.size() && (std::isdigit(static_cast<unsigned char>(code[j])) || code[j] == '.')) {
      digits = digits || std::isdigit(static_cast<unsigned char>(code[j]));
      ++j;
    }
    if (!digits) {
      throw ParseError(lineno, fmt::format("malformed number for word '{}'", letter));
    }
    std::string_view num = code.substr(i, j - i);
    if (num.front() == '+') num.remove_prefix(1);
    double value = 0.0;
    const auto res = std::from_chars(num.data(), num.data() + num.size(), value);
    if (res.ec != std::errc() || res.ptr != num.data() + num.size()) {
      throw ParseError(lineno, fmt::format("malformed number '{}' for word '{}'", num, letter));
    }
    words.push_back({letter, value});
    i = j;
  }
  return words;
}

struct ParserState {
  Vec3 position;
  double logical_e = 0.0;
  double feedrate = 0.0;
  std::optional<double> pending_feedrate;
  bool absolute_xyz = true;
  ExtrusionMode e_mode = ExtrusionMode::relative;
  std::vector<std::string> pending_passthrough;
};

}  // namespace

ToolPath parse_gcode(std::string_view text) {
  ToolPath path;
  ParserState st;
  int lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view raw = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (nl == text.size() && raw.empty()) break;

    bool had_comment = false;
    const std::string code_owned = strip_comments(raw, had_comment);
    const std::string_view code = trim(code_owned);
    if (code.empty()) {
      if (had_comment) st.pending_passthrough.emplace_back(trim(raw));
      continue;
    }
    const char head = static_cast<char>(std::toupper(static_cast<unsigned char>(code.front())));
    if (head != 'G' && head != 'M') {
      st.pending_passthrough.emplace_back(trim(raw));
      continue;
    }
    // Only the command word is read first: arguments of commands we pass through
    // (M117 text, vendor extensions) need not be numeric.
    std::size_t end = 1;
    while (end < code.size() && !std::isalpha(static_cast<unsigned char>(code[end]))) ++end;
    const Word cmd = tokenize(code.substr(0, end), lineno).front();
    const bool interpreted =
        cmd.value == std::floor(cmd.value) &&
        ((cmd.letter == 'G' && (cmd.value <= 3 || cmd.value == 20 || cmd.value == 21 || cmd.value == 90 ||
                                cmd.value == 91 || cmd.value == 92)) ||
         (cmd.letter == 'M' && (cmd.value == 82 || cmd.value == 83)));
    if (!interpreted) {
      st.pending_passthrough.emplace_back(trim(raw));
      continue;
    }
    const std::vector<Word> words = tokenize(code, lineno);
    const int number = static_cast<int>(cmd.value);
    std::map<char, double> args;
    for (std::size_t i = 1; i < words.size(); ++i) args[words[i].letter] = words[i].value;
    const auto has = [&](char c) { return args.count(c) > 0; };

    if (cmd.letter == 'G' && (number == 2 || number == 3)) {
      throw UnsupportedFeatureError(lineno, "arc moves (G2/G3); export linear segments");
    }
    if (cmd.letter == 'G' && number == 20) {
      throw UnsupportedFeatureError(lineno, "inch units (G20); only millimetres are supported");
    }
    if (cmd.letter == 'G' && number == 21) continue;
    if (cmd.letter == 'G' && number == 90) {
      st.absolute_xyz = true;
      continue;
    }
    if (cmd.letter == 'G' && number == 91) {
      st.absolute_xyz = false;
      continue;
    }
    if (cmd.letter == 'M' && number == 82) {
      st.e_mode = ExtrusionMode::absolute;
      path.extrusion_mode = st.e_mode;
      continue;
    }
    if (cmd.letter == 'M' && number == 83) {
      st.e_mode = ExtrusionMode::relative;
      path.extrusion_mode = st.e_mode;
      continue;
    }
    if (cmd.letter == 'G' && number == 92) {
      if (has('X') || has('Y') || has('Z')) {
        throw UnsupportedFeatureError(lineno, "G92 with axis words; only G92 E is supported");
      }
      st.logical_e = has('E') ? args['E'] : 0.0;
      continue;
    }
    if (!(cmd.letter == 'G' && (number == 0 || number == 1))) {
      st.pending_passthrough.emplace_back(trim(raw));
      continue;
    }

    if (has('F')) {
      if (!(args['F'] > 0.0)) throw ParseError(lineno, "feedrate must be strictly positive");
      st.feedrate = args['F'];
      st.pending_feedrate = st.feedrate;
    }
    Vec3 target = st.position;
    if (st.absolute_xyz) {
      if (has('X')) target.x = args['X'];
      if (has('Y')) target.y = args['Y'];
      if (has('Z')) target.z = args['Z'];
    } else {
      if (has('X')) target.x += args['X'];
      if (has('Y')) target.y += args['Y'];
      if (has('Z')) target.z += args['Z'];
    }
    if (!is_finite(target)) throw ParseError(lineno, "non-finite coordinate");
    double increment = 0.0;
    if (has('E')) {
      if (st.e_mode == ExtrusionMode::absolute) {
        increment = args['E'] - st.logical_e;
        st.logical_e = args['E'];
      } else {
        increment = args['E'];
        st.logical_e += increment;
      }
    }
    const double displacement = distance(st.position, target);
    if (displacement == 0.0 && increment == 0.0) continue;  // collapsed duplicate point

    GMove move;
    move.start = st.position;
    move.target = target;
    move.extrude = increment;
    move.feedrate = st.pending_feedrate;
    move.active_feedrate = st.feedrate;
    move.in_place_extrusion = displacement == 0.0;
    move.kind = (number == 1 && has('E') && displacement > 0.0) ? MoveKind::print : MoveKind::travel;
    move.source_line = lineno;
    move.passthrough_before = std::move(st.pending_passthrough);
    st.pending_passthrough.clear();
    st.pending_feedrate.reset();
    st.position = target;
    path.moves.push_back(std::move(move));
  }
  path.trailing = std::move(st.pending_passthrough);
  return path;
}

ToolPath load_gcode(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open G-code file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_gcode(buffer.str());
}

std::string format_number(double v) {
  if (!std::isfinite(v)) throw NumericalError("refusing to write a non-finite G-code value");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5f", v);
  std::string s(buf);
  if (s == "-0.00000") s = "0.00000";
  return s;
}

GcodeWriter::GcodeWriter(ExtrusionMode mode) : mode_(mode) {}

void GcodeWriter::comment(std::string_view text) {
  out_ += "; ";
  out_ += text;
  out_ += '\n';
}

void GcodeWriter::raw(std::string_view line) {
  out_ += line;
  out_ += '\n';
}

void GcodeWriter::preamble() {
  raw("G90");
  if (mode_ == ExtrusionMode::relative) {
    raw("M83");
  } else {
    raw("M82");
    raw("G92 E0");
    cumulative_e_ = 0.0;
  }
}

void GcodeWriter::travel(const Vec3& target, std::optional<double> feedrate,
                         std::optional<double> e) {
  motion("G0", target, e, feedrate);
}

void GcodeWriter::extrude(const Vec3& target, double e, std::optional<double> feedrate) {
  motion("G1", target, e, feedrate);
}

void GcodeWriter::motion(const char* cmd, const Vec3& target, std::optional<double> e,
                         std::optional<double> feedrate) {
  std::string line = fmt::format("{} X{} Y{} Z{}", cmd, format_number(target.x),
                                 format_number(target.y), format_number(target.z));
  if (e) {
    cumulative_e_ += *e;
    if (mode_ == ExtrusionMode::relative) {
      // Increments are differences of the rounded running total, so rounding never accumulates.
      const long long units = std::llround(cumulative_e_ * 1e5);
      line += " E" + format_number(static_cast<double>(units - written_units_) * 1e-5);
      written_units_ = units;
    } else {
      line += " E" + format_number(cumulative_e_);
    }
  }
  if (feedrate && *feedrate > 0.0 && *feedrate != last_feedrate_) {
    line += " F" + format_number(*feedrate);
    last_feedrate_ = *feedrate;
  }
  raw(line);
}

std::string format_toolpath(const ToolPath& path, ExtrusionMode mode) {
  GcodeWriter w(mode);
  w.preamble();
  for (const auto& m : path.moves) {
    for (const auto& line : m.passthrough_before) w.raw(line);
    const std::optional<double> f =
        m.active_feedrate > 0.0 ? std::optional<double>(m.active_feedrate) : std::nullopt;
    if (m.kind == MoveKind::print) {
      w.extrude(m.target, m.extrude, f);
    } else if (m.in_place_extrusion) {
      // Written with axis words at the current position; zero displacement keeps it in place.
      w.extrude(m.target, m.extrude, f);
    } else {
      w.travel(m.target, f, m.extrude != 0.0 ? std::optional<double>(m.extrude) : std::nullopt);
    }
  }
  for (const auto& line : path.trailing) w.raw(line);
  return w.str();
}

std::string emit_gcode(std::span<const Vec3> points, const ControlSequence& controls,
                       const EmitOptions& options) {
  controls.validate();
  if (points.size() < 2 || controls.size() != points.size() - 1) {
    throw ContractError(fmt::format("emit_gcode: {} controls for {} points (need points-1)",
                                    controls.size(), points.size()));
  }
  GcodeWriter w(options.mode);
  w.comment(kToolVersion);
  for (const auto& h : options.header) w.comment(h);
  w.preamble();
  w.travel(points[0]);
  const std::optional<double> f =
      options.feedrate > 0.0 ? std::optional<double>(options.feedrate) : std::nullopt;
  for (std::size_t k = 0; k < controls.size(); ++k) {
    const double ds = distance(points[k], points[k + 1]);
    w.extrude(points[k + 1], controls.xi[k] * ds, f);
  }
  return w.str();
}

RecoveredSegments recover_segments(const ToolPath& path) {
  RecoveredSegments out;
  std::size_t i = 0;
  if (!path.moves.empty() && path.moves[0].kind == MoveKind::travel) {
    out.points.push_back(path.moves[0].target);
    i = 1;
  } else if (!path.moves.empty()) {
    out.points.push_back(path.moves[0].start);
  }
  std::vector<double> lengths;
  for (; i < path.moves.size(); ++i) {
    const GMove& m = path.moves[i];
    if (m.kind != MoveKind::print) {
      throw ContractError(fmt::format("line {}: expected a print segment", m.source_line));
    }
    if (out.controls.xi.empty()) out.feedrate = m.active_feedrate;
    const double len = m.length();
    out.points.push_back(m.target);
    out.controls.xi.push_back(m.extrude / len);
    lengths.push_back(len);
  }
  if (!lengths.empty()) {
    out.controls.step = lengths.front();
    out.controls.segment_lengths = std::move(lengths);
  }
  return out;
}

}  // namespace extruflow
