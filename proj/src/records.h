// SPDX-License-Identifier: Apache-2.0
//
// JSON conversions for records embedded in several documents (policy
// records inside scenario and gateway config files). Internal.

#pragma once

#include <string_view>

#include "hetserve/scheduler.h"
#include "json_util.h"

namespace hetserve::detail {

PolicyConfig policy_from_json(const json& rec, std::string_view where);
json policy_to_json(const PolicyConfig& config);

}  // namespace hetserve::detail
