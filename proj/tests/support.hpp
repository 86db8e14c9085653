#ifndef RECALL_TESTS_SUPPORT_HPP
#define RECALL_TESTS_SUPPORT_HPP

// The gradient-integrity helpers live in the library so the verification CLI
// can run them too; tests keep their historical namespace name.

#include "recall/fdcheck.hpp"

namespace recall::testsupport {
using namespace ::recall::fdcheck;  // NOLINT
}  // namespace recall::testsupport

#endif
