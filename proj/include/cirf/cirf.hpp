#pragma once

#include "cirf/error.hpp"
#include "cirf/hash.hpp"
#include "cirf/fol.hpp"
#include "cirf/ndjson_cache.hpp"
#include "cirf/http.hpp"
#include "cirf/llm_gateway.hpp"
#include "cirf/embeddings.hpp"
#include "cirf/schema.hpp"
#include "cirf/kernel.hpp"
#include "cirf/optimizer.hpp"
#include "cirf/dataset.hpp"
#include "cirf/metrics.hpp"
#include "cirf/training.hpp"
#include "cirf/pipeline.hpp"
#include "cirf/synthetic.hpp"
#include "cirf/commands.hpp"
