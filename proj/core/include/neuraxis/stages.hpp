#pragma once

#include <string>

#include "neuraxis/run_config.hpp"

namespace neuraxis::cli {

struct StageContext {
  RunConfig cfg;
  std::string out_dir;
  bool force = false;
};

// Each driver reads prior-stage artifacts from out_dir and writes its own
// plus <stage>.manifest.json. With unchanged config/seed/inputs/outputs the
// stage is a no-op unless force is set. Returns true when work ran.
// Missing input artifacts raise Error(io) naming the offending path.
bool run_synth(const StageContext& ctx);
bool run_connectivity(const StageContext& ctx);
bool run_atlas_stage(const StageContext& ctx);
bool run_axes_stage(const StageContext& ctx);
bool run_validate(const StageContext& ctx);
bool run_train_lm(const StageContext& ctx);
bool run_adapter_stage(const StageContext& ctx);
bool run_steer(const StageContext& ctx);
bool run_report(const StageContext& ctx);

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> k = {"synth",    "connectivity", "atlas",
                                             "axes",     "validate",     "train-lm",
                                             "adapter",  "steer",        "report"};
  return k;
}

// Dispatch by stage name; "pipeline" is handled by the caller.
bool run_stage(const std::string& name, const StageContext& ctx);

}  // namespace neuraxis::cli
