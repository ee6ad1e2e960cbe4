#include <stdio.h>
#include <string.h>
#include "opticnet.h"

static int check(OptnStatus s, const char *what) {
    if (s != OPTN_STATUS_OK) {
        fprintf(stderr, "%s: status %d: %s\n", what, (int)s, optn_last_error());
        return 1;
    }
    return 0;
}

int main(void) {
    uint64_t p = 0;
    if (check(optn_middle_params(OPTN_MIDDLE_KIND_BRANCHED, 3, 64, 64, &p), "middle")) return 1;
    printf("branched %llu\n", (unsigned long long)p);

    OptnModel *m = NULL;
    if (check(optn_model_new("opticnet47", 32, 3, 2, 1, &m), "new")) return 1;
    float pixels[32 * 32 * 3];
    for (int i = 0; i < 32 * 32 * 3; i++) pixels[i] = (float)(i % 7) / 7.0f;
    float logits[3];
    if (check(optn_model_predict(m, pixels, 1, logits, 3), "predict")) return 1;
    printf("logits %g %g %g\n", logits[0], logits[1], logits[2]);

    OptnStatus bad = optn_model_load(m, "/nonexistent/x.optn");
    printf("load status %d %s\n", (int)bad, strlen(optn_last_error()) > 0 ? "message" : "empty");
    optn_model_free(m);
    return bad == OPTN_STATUS_OK;
}
