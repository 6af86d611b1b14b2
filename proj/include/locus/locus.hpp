// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "locus/corpus.hpp"
#include "locus/generation.hpp"
#include "locus/lora.hpp"
#include "locus/metrics.hpp"
#include "locus/model.hpp"
#include "locus/pipeline.hpp"
#include "locus/retrieval.hpp"
#include "locus/svd.hpp"
#include "locus/sweep.hpp"
