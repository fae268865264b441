#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include "willow.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "line %d: %s\n", __LINE__, willow_last_error() ? willow_last_error() : "?"); return 1; } } while (0)

int main(void) {
    WillowModel *m = NULL;
    CHECK(willow_model_load("ref2type", &m) == WILLOW_STATUS_OK);
    CHECK(willow_model_k(m) == 2);

    double lambda0 = 0.0, phi0[2], pi[2];
    CHECK(willow_eigen(m, &lambda0, phi0, NULL, pi) == WILLOW_STATUS_OK);
    CHECK(lambda0 > 0.45 && lambda0 < 0.46);

    WillowFields *f = NULL;
    CHECK(willow_fields_new(m, 5.0, &f) == WILLOW_STATUS_OK);
    double nu[2] = {1.0, 0.0}, cdf = 0.0;
    CHECK(willow_extinction_cdf(f, nu, 3.0, &cdf) == WILLOW_STATUS_OK);
    CHECK(cdf > 0.0 && cdf < 1.0);

    WillowPath *p = NULL;
    CHECK(willow_williams_sample(f, 0, 3.0, 0.1, 6, 7, 0, &p) == WILLOW_STATUS_OK);
    CHECK(willow_path_len(p) == 7);
    CHECK(fabs(willow_path_extinction_time(p) - 3.0) < 1e-12);
    willow_path_free(p);

    CHECK(willow_particles_sample(m, nu, 10.0, 1.0, 4, 7, 0, &p) == WILLOW_STATUS_MODEL);
    CHECK(willow_last_error() != NULL);

    willow_fields_free(f);
    willow_model_free(m);
    printf("ok\n");
    return 0;
}
