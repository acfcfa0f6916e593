#pragma once

#include "acbd/analysis.hpp"
#include "acbd/clustering.hpp"
#include "acbd/dataset.hpp"
#include "acbd/network.hpp"
#include "acbd/poisoner.hpp"
#include "acbd/repair.hpp"
#include "acbd/summarize.hpp"
