#pragma once

#include "tcrf/transverse_model.hpp"
#include "tcrf/basic_form.hpp"
#include "tcrf/hermitian_field.hpp"
#include "tcrf/hermitian_geometry.hpp"
#include "tcrf/flow.hpp"
#include "tcrf/max_time.hpp"
#include "tcrf/symbol.hpp"
#include "tcrf/io/checkpoint.hpp"
#include "tcrf/io/scenario.hpp"
