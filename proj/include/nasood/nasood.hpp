#pragma once

#include "nasood/analysis.hpp"
#include "nasood/checkpoint.hpp"
#include "nasood/classifier.hpp"
#include "nasood/datasets.hpp"
#include "nasood/derived_network.hpp"
#include "nasood/errors.hpp"
#include "nasood/evaluation.hpp"
#include "nasood/generator.hpp"
#include "nasood/genotype.hpp"
#include "nasood/operations.hpp"
#include "nasood/search_space.hpp"
#include "nasood/trainer.hpp"
