#pragma once

#include <functional>
#include <string>

#include "ecs/analysis.hpp"
#include "ecs/config.hpp"
#include "ecs/dataset.hpp"

namespace ecs {

struct Datasets {
  LabeledDataset train;  // training file; its tail is the eval holdout
  LabeledDataset test;   // reserved for final reporting
};

/// MNIST from `dir` (the IDX file names of the official distribution) or
/// 28x28x1 synthetic blobs sharing one set of class centers.
Datasets load_datasets(const DataConfig& config, std::uint64_t seed);

/// Holdout tail for E, fine-tune subset sampled from the rest.
SplitPlan make_split(const RunConfig& config, std::size_t train_size);

using LogSink = std::function<void(const std::string&)>;

/// Runs train | compress | evaluate | report | baseline. Every command
/// writes config.ini (the resolved configuration) into config.out first.
void run_command(const std::string& command, const RunConfig& config,
                 const LogSink& log = {});

}  // namespace ecs
