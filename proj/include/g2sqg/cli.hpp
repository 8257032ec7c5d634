#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "g2sqg/config.hpp"
#include "g2sqg/trainer.hpp"

namespace g2s {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs `g2sqg <command> --config <path> [--key value ...] --out <dir>`.
/// `args` excludes the program name. Returns the process exit status.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Config after defaults, file, G2SQG_SEED and flag overrides, in that order.
RunConfig resolve_config(const std::filesystem::path& config_file, const std::vector<std::pair<std::string, std::string>>& overrides);

ModelConfig model_settings(const RunConfig& config);
LossConfig loss_settings(const RunConfig& config);

/// Builds a freshly initialized model for `train`; the vocabulary comes from
/// data.vocab when set, else from `train`.
Model build_model(const RunConfig& config, std::span<const PassageExample> train);

/// Loads vocabulary, word vectors and the checkpoint named by `checkpoint`.
Model load_model(const RunConfig& config, std::vector<std::string>* warnings = nullptr);

}  // namespace g2s
