#pragma once

// Wire formats: line-delimited JSON session logs, the protocol config
// document, and JSON views of fit results and participant summaries.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cptchoice/analysis.hpp"

namespace cptchoice {

using Json = nlohmann::ordered_json;

/// Malformed log or document; `line` is 1-based, 0 when not line-oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Session logs -------------------------------------------------------------

/// One JSONL record (no trailing newline). Field order is fixed:
/// participant_id, round, block, p_r, robot_action, human_action, success,
/// chosen_at_ms, seed.
std::string trial_jsonl(const TrialRecord& t, const std::string& participant_id);

void write_session_jsonl(std::ostream& out, const SessionLog& log);

/// Parses records, grouping them by participant_id in first-seen order.
/// Blank lines are skipped. Errors name the source and line.
std::vector<SessionLog> read_session_jsonl(std::istream& in, const std::string& source = "<input>");
std::vector<SessionLog> read_session_jsonl(const std::filesystem::path& path);

// Protocol config ----------------------------------------------------------

Json config_to_json(const ProtocolConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ProtocolConfig config_from_json(const Json& doc);
ProtocolConfig read_config(const std::filesystem::path& path);

// Results ------------------------------------------------------------------

Json to_json(const CptParams& p);
Json to_json(const BlrParams& p);
Json to_json(const FitResult& fit);
/// ci95Width is null when the diagnostics failed.
Json to_json(const PosteriorSummary& post);
Json to_json(const EmpiricalPoint& point);
Json to_json(const ParticipantSummary& summary, const ClusterRule& rule);
Json to_json(std::span<const CurvePoint> curve);

CptParams cpt_params_from_json(const Json& j);
BlrParams blr_params_from_json(const Json& j);

}  // namespace cptchoice
