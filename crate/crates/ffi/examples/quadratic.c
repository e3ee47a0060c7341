#include <stdio.h>
#include "sgdlab.h"

int main(void) {
    double lower[2] = {-1.0, -1.0};
    double upper[2] = {1.0, 1.0};
    double a[2] = {2.0, 0.5};
    double u1[2] = {0.0, 0.0};
    double out[2];
    double gap;
    SgdBody *body = NULL;
    SgdObjective *f = NULL;
    SgdTrace *trace = NULL;

    if (sgd_body_box(lower, upper, 2, &body) != SGD_OK ||
        sgd_objective_quadratic(a, 2, body, &f) != SGD_OK ||
        sgd_run(SGD_ALG_RAPGD, f, body, SGD_SCHEDULE_INVERSE_SQRT, 1.0, u1, 2, 1000, 0.0, false, 0, &trace) != SGD_OK ||
        sgd_trace_output(trace, out, 2) != SGD_OK ||
        sgd_trace_gap(trace, f, &gap) != SGD_OK) {
        fprintf(stderr, "error: %s\n", sgd_last_error_message());
        return 1;
    }
    printf("output (%g, %g), gap %g\n", out[0], out[1], gap);
    sgd_trace_free(trace);
    sgd_objective_free(f);
    sgd_body_free(body);
    return 0;
}
