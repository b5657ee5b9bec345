#pragma once
// Umbrella header: the whole library in one include.
#include "parley/analysis.hpp"
#include "parley/cli.hpp"
#include "parley/data.hpp"
#include "parley/domain.hpp"
#include "parley/error.hpp"
#include "parley/evaluation.hpp"
#include "parley/interaction.hpp"
#include "parley/persona.hpp"
#include "parley/prompting.hpp"
#include "parley/provider.hpp"
