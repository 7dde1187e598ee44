#pragma once
// Umbrella header.

#include "coteval/aggregate.hpp"
#include "coteval/cfdensity.hpp"
#include "coteval/corpus.hpp"
#include "coteval/harness.hpp"
#include "coteval/hashing.hpp"
#include "coteval/http_transport.hpp"
#include "coteval/judge.hpp"
#include "coteval/mock_judge.hpp"
#include "coteval/report.hpp"
#include "coteval/rubric.hpp"
#include "coteval/stats.hpp"
