#pragma once

// Umbrella header.

#include "biaslens/analytics.hpp"
#include "biaslens/dataset.hpp"
#include "biaslens/demo.hpp"
#include "biaslens/embedding.hpp"
#include "biaslens/error.hpp"
#include "biaslens/ngram.hpp"
#include "biaslens/project_io.hpp"
#include "biaslens/remote.hpp"
#include "biaslens/scoring.hpp"
#include "biaslens/service.hpp"
#include "biaslens/session.hpp"
#include "biaslens/tokenize.hpp"
