#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vsg/core.hpp"
#include "vsg/dependency.hpp"
#include "vsg/localization.hpp"

namespace vsg {

namespace fs = std::filesystem;

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, path.string() + ": " + e.what());
  }
}

/// Write via a sibling temporary and rename, so readers never see a torn file.
inline void write_text_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

inline TaskSpec load_task(const fs::path& path) { return validate_task(read_json(path)); }

inline GroundTruthAnnotation load_annotation(const fs::path& path, std::size_t num_steps) {
  return validate_annotation(read_json(path), num_steps);
}

inline DependencyMatrix load_dependencies(const fs::path& path, std::size_t num_steps) {
  if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "dependency file not found: " + path.string());
  return dependency_from_json(read_json(path), num_steps);
}

inline void save_dependencies(const fs::path& path, const std::string& task_id, const DependencyMatrix& d) {
  write_json(path, dependency_to_json(task_id, d));
}

inline std::string alignment_jsonl(const AlignmentMatrix& m) {
  std::string out;
  for (std::size_t t = 0; t < m.num_segments(); ++t) {
    out += json{{"t", t}, {"belief", m.row(t).vector()}}.dump();
    out += '\n';
  }
  return out;
}

inline std::string alignment_csv(const AlignmentMatrix& m) {
  std::ostringstream os;
  os.precision(17);
  os << "t";
  for (std::size_t s = 0; s < m.num_steps(); ++s) os << ",step_" << s;
  os << ",none\n";
  for (std::size_t t = 0; t < m.num_segments(); ++t) {
    os << t;
    for (std::size_t s = 0; s < m.num_states(); ++s) os << "," << m.at(t, s);
    os << "\n";
  }
  return os.str();
}

inline json detections_json(const std::vector<DetectedSegment>& dets) {
  json out = json::array();
  for (const auto& d : dets) out.push_back(to_json(d));
  return out;
}

}  // namespace vsg
