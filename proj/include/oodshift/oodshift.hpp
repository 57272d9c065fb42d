// Copyright 2026 The oodshift Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "oodshift/adam.hpp"
#include "oodshift/baselines.hpp"
#include "oodshift/benchscore.hpp"
#include "oodshift/datagen.hpp"
#include "oodshift/dataset.hpp"
#include "oodshift/density.hpp"
#include "oodshift/discriminator.hpp"
#include "oodshift/error.hpp"
#include "oodshift/estimator.hpp"
#include "oodshift/rng.hpp"
