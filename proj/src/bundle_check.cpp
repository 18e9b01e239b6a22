#include "lfd/bundle_check.hpp"

#include "lfd/dcae.hpp"
#include "lfd/errors.hpp"
#include "lfd/rnn.hpp"

namespace lfd::store {

void check_bundle(const ModelBundle& bundle) {
  if (bundle.kind == "dcae")
    dcae::check_model(bundle);
  else if (bundle.kind == "rnn")
    rnn::check_model(bundle);
  else
    throw ValidationError("unknown model kind '" + bundle.kind + "'");
}

}  // namespace lfd::store
