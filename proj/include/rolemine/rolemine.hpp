// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include "rolemine/binary_matrix.hpp"
#include "rolemine/ddm.hpp"
#include "rolemine/eval.hpp"
#include "rolemine/hybrid.hpp"
#include "rolemine/likelihood.hpp"
#include "rolemine/mac.hpp"
#include "rolemine/rbac_config.hpp"
#include "rolemine/role_sets.hpp"
#include "rolemine/synth.hpp"
