#include <math.h>
#include <stdio.h>
#include <string.h>

#include "nvmc.h"

int main(void) {
    if (strlen(nvmc_version()) == 0) return 10;

    NvmcVerdict v;
    double margin = 0.0;
    if (nvmc_nodal_check(1.0, 1.0, 1, 4, false, &v, &margin) != NVMC_STATUS_OK) return 11;
    if (v != NVMC_VERDICT_DIVERGES || margin != -1.0) return 12;

    NvmcModel *m = NULL;
    if (nvmc_model_load("/nonexistent/model.ckpt", &m) != NVMC_STATUS_IO) return 13;
    if (nvmc_last_error_message() == NULL || m != NULL) return 14;

    const char *cfg =
        "{\"system\":{\"kind\":\"ho2d\"},\"ansatz\":{\"layers\":1,\"width\":4},"
        "\"sampler\":{\"n_walkers\":64,\"burn_in\":5,\"seed\":3},"
        "\"trainer\":{\"max_steps\":3}}";
    NvmcRun *run = NULL;
    if (nvmc_run_train(cfg, &run) != NVMC_STATUS_OK) {
        fprintf(stderr, "%s\n", nvmc_last_error_message());
        return 15;
    }
    NvmcRunSummary s;
    if (nvmc_run_summary(run, &s) != NVMC_STATUS_OK) return 16;
    if (s.steps != 3 || nvmc_run_metrics_len(run) != 4 || !isfinite(s.energy)) return 17;

    if (nvmc_run_model(run, &m) != NVMC_STATUS_OK) return 18;
    double x[4] = {0.1, -0.2, 0.5, 0.3};
    double psi[2], grad[4], lap[2], el[2];
    if (nvmc_model_eval(m, x, 2, 2, psi, grad, lap) != NVMC_STATUS_OK) return 19;
    if (nvmc_model_local_energies(m, "{\"kind\":\"ho2d\"}", x, 2, 2, el) != NVMC_STATUS_OK) return 20;
    if (!isfinite(psi[0]) || !isfinite(el[1])) return 21;

    nvmc_model_free(m);
    nvmc_run_free(run);
    printf("ok\n");
    return 0;
}
