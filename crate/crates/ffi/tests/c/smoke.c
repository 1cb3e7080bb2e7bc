#include <math.h>
#include <stdio.h>
#include "absorb.h"

int main(void) {
    AbsorbSpec *spec = NULL;
    if (absorb_spec_from_json("{\"S\":3,\"d\":2,\"q0\":\"uniform\"}", &spec) != ABSORB_STATUS_OK) {
        fprintf(stderr, "open: %s\n", absorb_last_error());
        return 1;
    }
    size_t vocab, dims, states;
    uint32_t mask;
    if (absorb_spec_info(spec, &vocab, &dims, &mask, &states) != ABSORB_STATUS_OK || states != 9) {
        return 2;
    }
    double q[9];
    if (absorb_marginal(spec, 1.0, q, 9) != ABSORB_STATUS_OK) {
        return 3;
    }
    double total = 0.0;
    for (int i = 0; i < 9; i++) {
        total += q[i];
    }
    if (fabs(total - 1.0) > 1e-12) {
        return 4;
    }
    if (absorb_marginal(spec, 1.0, q, 2) != ABSORB_STATUS_BUFFER_TOO_SMALL || absorb_last_error() == NULL) {
        return 5;
    }
    absorb_spec_free(spec);
    printf("ok %s\n", absorb_version());
    return 0;
}
