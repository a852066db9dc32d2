/* Solves the scalar golden-ratio model through the C interface.
 *
 *   cargo build -p mjslqr-ffi --release
 *   cc examples/golden.c -Iinclude ../../target/release/libmjslqr_ffi.a -lm -lpthread -ldl -o golden
 */
#include <stdio.h>

#include "mjslqr.h"

static const char *MODEL =
    "[meta]\nn = 1\np = 1\ns = 1\nsigma_w = 1.0\n"
    "[T]\ndata = [[1.0]]\n"
    "[[A]]\ndata = [[1.0]]\n[[B]]\ndata = [[1.0]]\n"
    "[[Q]]\ndata = [[1.0]]\n[[R]]\ndata = [[1.0]]\n";

int main(void) {
    MjsModelHandle *model = NULL;
    MjsLqrHandle *lqr = NULL;
    double p, k, cost, rho;
    size_t iters;

    if (mjs_model_from_string(MODEL, &model) != MJS_OK ||
        mjs_lqr_solve(model, 0.0, 0, &lqr) != MJS_OK) {
        fprintf(stderr, "error: %s\n", mjs_last_error_message());
        mjs_model_free(model);
        return 1;
    }
    mjs_lqr_riccati(lqr, 0, &p, 1);
    mjs_lqr_gain(lqr, 0, &k, 1);
    mjs_lqr_summary(lqr, &cost, &rho, &iters);
    printf("P = %.12f\nK = %.12f\nJ = %.12f\nrho = %.12f\n", p, k, cost, rho);

    if (mjs_lqr_riccati(lqr, 3, &p, 1) == MJS_ERR_INDEX_OUT_OF_RANGE)
        printf("mode 3: %s\n", mjs_last_error_message());

    mjs_lqr_free(lqr);
    mjs_model_free(model);
    return 0;
}
