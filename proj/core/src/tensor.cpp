#include "fdwm/tensor.hpp"

#include <cblas.h>

#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

extern "C" void openblas_set_num_threads(int);

namespace fdwm {

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {
int g_workers = 0;
std::once_flag g_workers_once;

void init_workers() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("FD_NUM_WORKERS")) {
        int cap = std::atoi(env);
        if (cap >= 1 && cap < n) n = cap;
    }
    g_workers = n;
    openblas_set_num_threads(n);
}
}  // namespace

void set_num_workers(int n) {
    std::call_once(g_workers_once, init_workers);
    if (n < 1) n = 1;
    g_workers = n;
    openblas_set_num_threads(n);
}

int num_workers() {
    std::call_once(g_workers_once, init_workers);
    return g_workers;
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
    num_workers();  // ensure thread cap applied
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    num_workers();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace fdwm
