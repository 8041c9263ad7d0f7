#ifndef MPAUDIT_LOG_H_
#define MPAUDIT_LOG_H_

#include <spdlog/spdlog.h>

namespace mpaudit {

// Shared stderr logger. The level comes from MPAUDIT_LOG (trace, debug, info,
// warn, error, off); the default is warn.
spdlog::logger& Log();

}  // namespace mpaudit

#endif  // MPAUDIT_LOG_H_
