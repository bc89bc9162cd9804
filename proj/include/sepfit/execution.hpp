#pragma once

namespace sepfit {

/// Selects the OpenMP kernel or its serial reference. Both produce identical
/// results; the serial path exists for testing and benchmarking.
enum class Execution { Serial, Parallel };

/// Threads OpenMP will use for a parallel region (1 when built without OpenMP).
int available_threads();

}  // namespace sepfit
