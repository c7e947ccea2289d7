#include <stdio.h>
#include <string.h>
#include "wdm.h"

static int fail(const char *what) {
    char msg[512];
    wdm_last_error(msg, sizeof msg);
    fprintf(stderr, "%s: %s\n", what, msg);
    return 1;
}

int main(void) {
    const double d_s[] = {0.12, 0.08, 0.15, 0.11, 0.09, 0.13};
    const double d_c[] = {0.35, 0.41, 0.29, 0.38, 0.44};
    double t, dof, p;
    if (wdm_welch_test(d_s, 6, d_c, 5, &t, &dof, &p) != WDM_STATUS_OK) return fail("welch");

    WdmConfig *cfg = NULL;
    if (wdm_config_default(&cfg) != WDM_STATUS_OK) return fail("config");
    if (wdm_config_set(cfg, "train.epochs=-1") != WDM_STATUS_CONFIG) return fail("bad override accepted");
    char hash[65];
    if (wdm_config_hash(cfg, hash, sizeof hash) != WDM_STATUS_OK) return fail("hash");

    WdmModel *model = NULL;
    WdmStatus s = wdm_model_load("/nonexistent/model.wdmk", &model);
    char msg[512];
    size_t need = wdm_last_error(msg, sizeof msg);
    wdm_config_free(cfg);

    printf("%s %.12f %.12f %.6e %d %zu %d\n", wdm_version(), t, dof, p, (int)s, strlen(hash), need > 1);
    return 0;
}
