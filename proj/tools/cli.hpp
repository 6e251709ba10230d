#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "lbavb/cvvb.hpp"
#include "lbavb/vb.hpp"

namespace lbavb::cli {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutputRootEnv = "LBAVB_OUTPUT_ROOT";

enum ExitCode : int { kOk = 0, kOther = 1, kConfigError = 2, kDataError = 3, kDivergence = 4 };

// args excludes the program name. Never throws; maps failures to ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Every config key with its default value.
nlohmann::json default_config();

// First 8 hex digits of FNV-1a 64 over the spec string.
std::string spec_hash(const std::string& spec_string);
// "<index, zero-padded to 3>_<spec_hash>"
std::string model_dir_name(int index, const std::string& spec_string);

// "c~E, A~1, v~1, s~1, tau~1"; omitted classes are "1".
std::array<std::string, kNumClasses> parse_spec_string(const std::string& text);

nlohmann::json lambda_to_json(const VariationalParams& lambda);
VariationalParams lambda_from_json(const nlohmann::json& j);

nlohmann::json report_to_json(const ELPDReport& rep);
ELPDReport report_from_json(const nlohmann::json& j);

}  // namespace lbavb::cli
