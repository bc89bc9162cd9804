#include "sepfit/execution.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sepfit {

int available_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace sepfit
