// Copyright 2026 The lungvit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lungvit/training.hpp"

namespace lungvit {

/// Runs the command line in-process and returns the exit code:
/// 0 success, 1 usage or configuration, 2 data, 3 numeric failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// "epoch,loss,sensitivity,specificity,score,uar" with round-trip decimals;
/// metrics that were not computed are left empty.
std::string format_history_csv(std::span<const EpochRecord> history);

}  // namespace lungvit
