// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include "otafl/airlink.hpp"
#include "otafl/bound.hpp"
#include "otafl/channel.hpp"
#include "otafl/config.hpp"
#include "otafl/dataset.hpp"
#include "otafl/errors.hpp"
#include "otafl/fl_core.hpp"
#include "otafl/harness.hpp"
#include "otafl/optim.hpp"
#include "otafl/recursion.hpp"
#include "otafl/report.hpp"
#include "otafl/rng.hpp"
#include "otafl/selftest.hpp"
