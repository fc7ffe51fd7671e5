#pragma once
// Umbrella header.

#include "bdrop/evaluation.hpp"
#include "bdrop/mask_distribution.hpp"
#include "bdrop/models.hpp"
#include "bdrop/rng.hpp"
#include "bdrop/synthetic_data.hpp"
#include "bdrop/text_io.hpp"
#include "bdrop/training.hpp"
