#pragma once

#include "m2gnn/ablation.hpp"
#include "m2gnn/adam.hpp"
#include "m2gnn/checkpoint.hpp"
#include "m2gnn/config.hpp"
#include "m2gnn/dataset.hpp"
#include "m2gnn/error.hpp"
#include "m2gnn/evaluation.hpp"
#include "m2gnn/explain.hpp"
#include "m2gnn/grad_check.hpp"
#include "m2gnn/hetero_graph.hpp"
#include "m2gnn/interactions.hpp"
#include "m2gnn/model.hpp"
#include "m2gnn/rng.hpp"
#include "m2gnn/synthetic.hpp"
#include "m2gnn/tape.hpp"
#include "m2gnn/tensor.hpp"
#include "m2gnn/training.hpp"
