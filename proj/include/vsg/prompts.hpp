#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "vsg/core.hpp"

namespace vsg {

/// Option label for a 0-based index: A..Z, then AA, AB, ... (bijective base 26).
inline std::string option_label(std::size_t index) {
  std::string label;
  std::size_t n = index + 1;
  while (n > 0) {
    --n;
    label.insert(label.begin(), static_cast<char>('A' + n % 26));
    n /= 26;
  }
  return label;
}

/// Inverse of option_label; npos for anything that is not an uppercase label.
inline std::size_t option_index(std::string_view label) {
  if (label.empty()) return std::string::npos;
  std::size_t n = 0;
  for (char c : label) {
    if (c < 'A' || c > 'Z') return std::string::npos;
    n = n * 26 + static_cast<std::size_t>(c - 'A' + 1);
  }
  return n - 1;
}

inline constexpr std::string_view kNoneOption = "none of the above";

/// S step options followed by "none of the above".
inline std::vector<std::string> option_labels(const TaskSpec& task) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i <= task.num_steps(); ++i) out.push_back(option_label(i));
  return out;
}

inline std::string render_options(const TaskSpec& task) {
  std::string out;
  for (std::size_t i = 0; i < task.num_steps(); ++i) {
    out += option_label(i) + ". " + task.steps[i] + "\n";
  }
  out += option_label(task.num_steps()) + ". " + std::string(kNoneOption);
  return out;
}

inline std::string build_vsg_prompt(const TaskSpec& task) {
  return "You are watching a video segment of someone attempting to " + task.goal +
         ".\n"
         "\n"
         "What is the main action being performed in this exact moment?\n"
         "\n"
         "Options:\n" +
         render_options(task) +
         "\n"
         "\n"
         "Answer with only the letter label of the correct option (e.g., A, B, ..., Z, AA, AB, etc.), "
         "with no extra text.";
}

/// Same layout as the grounding prompt, asking for the next step instead.
inline std::string build_next_step_prompt(const TaskSpec& task) {
  return "You are watching a video segment of someone attempting to " + task.goal +
         ".\n"
         "\n"
         "What is the most likely next step in the sequence?\n"
         "\n"
         "Options:\n" +
         render_options(task) +
         "\n"
         "\n"
         "Answer with only the letter label of the correct option (e.g., A, B, ..., Z, AA, AB, etc.), "
         "with no extra text.";
}

/// One yes/no query per step.
inline std::string build_vsg_binary_prompt(const TaskSpec& task, std::size_t step) {
  return "You are watching a video segment of someone attempting to " + task.goal +
         ".\n"
         "\n"
         "Is the person currently performing the action: \"" +
         task.steps.at(step) +
         "\"?\n"
         "\n"
         "Answer with \"Yes\" or \"No\" only.";
}

inline std::string build_progress_prompt(const TaskSpec& task, std::size_t step) {
  return "You are watching a short video clip.\n"
         "\n"
         "The goal of the person in the video is: " +
         task.goal +
         "\n"
         "\n"
         "The specific action of interest is: " +
         task.steps.at(step) +
         "\n"
         "\n"
         "Rate how far along this action is in terms of execution progress, using a scale from 0 to 9:\n"
         "- 0 = the action is not present in this clip\n"
         "- 1 = the action is just beginning or about to begin\n"
         "- 5 = the action is halfway complete\n"
         "- 9 = the action is just finishing or about to finish\n"
         "\n"
         "Respond with a single number from 0 to 9. Do not include any other text.";
}

inline std::string build_prerequisite_prompt(const TaskSpec& task, std::size_t step, std::size_t prerequisite) {
  return "You are performing the task: " + task.goal +
         "\n"
         "\n"
         "Is the following step strictly required before another?\n"
         "\n"
         "Prerequisite candidate: " +
         task.steps.at(prerequisite) +
         "\n"
         "Target step: " +
         task.steps.at(step) +
         "\n"
         "\n"
         "Answer \"Yes\" if the target step cannot be completed correctly without first completing the "
         "prerequisite step. Otherwise, answer \"No\".\n"
         "\n"
         "Answer:";
}

}  // namespace vsg
