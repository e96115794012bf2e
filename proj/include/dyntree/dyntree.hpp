#pragma once

#include "dyntree/harness.hpp"
#include "dyntree/io.hpp"
#include "dyntree/loopy.hpp"
#include "dyntree/mean_field.hpp"
#include "dyntree/model.hpp"
#include "dyntree/numeric.hpp"
#include "dyntree/oracle.hpp"
#include "dyntree/svi.hpp"
#include "dyntree/tree_bp.hpp"
