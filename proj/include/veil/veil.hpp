/*
 * Copyright 2026 The Veil Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "veil/aggregation.hpp"
#include "veil/cas.hpp"
#include "veil/config.hpp"
#include "veil/costmodel.hpp"
#include "veil/crypto.hpp"
#include "veil/enclaves.hpp"
#include "veil/errors.hpp"
#include "veil/job.hpp"
#include "veil/masking.hpp"
#include "veil/messages.hpp"
#include "veil/models.hpp"
#include "veil/rng.hpp"
#include "veil/simnet.hpp"
#include "veil/storage.hpp"
#include "veil/taint.hpp"
#include "veil/tensors.hpp"
