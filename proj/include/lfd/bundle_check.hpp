#pragma once

#include "lfd/model_bundle.hpp"

namespace lfd::store {

/// Dispatches on `bundle.kind` and verifies the blocks against the
/// architecture descriptor. Throws ValidationError.
void check_bundle(const ModelBundle& bundle);

}  // namespace lfd::store
