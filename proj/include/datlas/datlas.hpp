#pragma once

#include "datlas/activations.hpp"
#include "datlas/checkpoint.hpp"
#include "datlas/cohort.hpp"
#include "datlas/csv.hpp"
#include "datlas/errors.hpp"
#include "datlas/eval.hpp"
#include "datlas/graph.hpp"
#include "datlas/inference.hpp"
#include "datlas/losses.hpp"
#include "datlas/model.hpp"
#include "datlas/optim.hpp"
#include "datlas/parallel.hpp"
#include "datlas/rng.hpp"
#include "datlas/tensor.hpp"
#include "datlas/training.hpp"
